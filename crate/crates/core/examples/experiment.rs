//! Config-driven pipeline as run by the `adlearn` binary: train, evaluate, and read
//! the resulting table.

use adlearn::cli::{cmd_evaluate, cmd_train, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("adlearn_experiment");
    let text = format!(
        r#"
case = "{case}"
out = "{out}"
seeds = [1, 2, 3]
variants = ["ls-ex", "opt-opt"]

[data]
t = [200]
eval_t = 2000
"#,
        case = concat!(env!("CARGO_MANIFEST_DIR"), "/../../cases/singlebus.json"),
        out = out.display()
    );
    let cfg = ExperimentConfig::parse(&text, false)?;
    cfg.validate()?;
    cmd_train(&cfg)?;
    let outcome = cmd_evaluate(&cfg)?;
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    print!("{}", std::fs::read_to_string(out.join("evaluate.csv"))?);
    Ok(())
}
