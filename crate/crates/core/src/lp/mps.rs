//! Fixed-format MPS writer and a whitespace-tolerant reader.
//!
//! Names are generated (`R0000000`, `C0000000`) so that they always fit the
//! eight-character fields; numbers are printed in at most twelve characters.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{DenseMatrix, LinearProgram, LpError, RowSense};

/// An LP with optional integrality marks, as exchanged through MPS files.
#[derive(Debug, Clone, PartialEq)]
pub struct MpsModel {
    pub name: String,
    pub lp: LinearProgram,
    pub integer: Vec<bool>,
}

fn row_name(i: usize) -> String {
    format!("R{i:07}")
}

fn col_name(j: usize) -> String {
    format!("C{j:07}")
}

/// Shortest decimal rendering of `v` that fits in twelve characters.
fn num12(v: f64) -> String {
    let plain = format!("{v}");
    if plain.len() <= 12 {
        return plain;
    }
    let exp = format!("{v:e}");
    if exp.len() <= 12 {
        return exp;
    }
    for prec in (0..12).rev() {
        let s = format!("{v:.prec$e}");
        if s.len() <= 12 {
            return s;
        }
    }
    format!("{v:.0e}")
}

/// Render `model` as fixed-format MPS text.
pub fn write_mps(model: &MpsModel) -> Result<String, LpError> {
    let lp = &model.lp;
    lp.validate()?;
    let (m, n) = (lp.n_rows(), lp.n_cols());
    if model.integer.len() != n {
        return Err(LpError::Mps("integer mask length differs from column count".into()));
    }
    if m >= 10_000_000 || n >= 10_000_000 {
        return Err(LpError::Mps("too many rows or columns for eight-character names".into()));
    }
    let mut out = String::new();
    let name: String = model.name.chars().filter(|c| !c.is_whitespace()).take(8).collect();
    let _ = writeln!(out, "NAME          {}", if name.is_empty() { "LP" } else { &name });
    out.push_str("ROWS\n");
    let _ = writeln!(out, " N  COST");
    for i in 0..m {
        let t = match lp.senses[i] {
            RowSense::Le => "L",
            RowSense::Eq => "E",
            RowSense::Ge => "G",
        };
        let _ = writeln!(out, " {:<2} {}", t, row_name(i));
    }
    out.push_str("COLUMNS\n");
    let mut in_int = false;
    let mut marker = 0usize;
    for j in 0..n {
        if model.integer[j] != in_int {
            let tag = if model.integer[j] { "'INTORG'" } else { "'INTEND'" };
            let _ = writeln!(out, "    {:<8}  {:<8}  {:<12}   {}", format!("M{marker:07}"), "'MARKER'", "", tag);
            marker += 1;
            in_int = model.integer[j];
        }
        let cname = col_name(j);
        let mut wrote = false;
        if lp.objective[j] != 0.0 {
            let _ = writeln!(out, "    {:<8}  {:<8}  {:>12}", cname, "COST", num12(lp.objective[j]));
            wrote = true;
        }
        for i in 0..m {
            let a = lp.matrix().get(i, j);
            if a != 0.0 {
                let _ = writeln!(out, "    {:<8}  {:<8}  {:>12}", cname, row_name(i), num12(a));
                wrote = true;
            }
        }
        if !wrote {
            let _ = writeln!(out, "    {:<8}  {:<8}  {:>12}", cname, "COST", "0");
        }
    }
    if in_int {
        let _ = writeln!(out, "    {:<8}  {:<8}  {:<12}   {}", format!("M{marker:07}"), "'MARKER'", "", "'INTEND'");
    }
    out.push_str("RHS\n");
    for i in 0..m {
        if lp.rhs[i] != 0.0 {
            let _ = writeln!(out, "    {:<8}  {:<8}  {:>12}", "RHS", row_name(i), num12(lp.rhs[i]));
        }
    }
    out.push_str("BOUNDS\n");
    for j in 0..n {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        let c = col_name(j);
        let mut bound = |t: &str, v: Option<f64>| {
            match v {
                Some(v) => {
                    let _ = writeln!(out, " {:<2} {:<8}  {:<8}  {:>12}", t, "BND", c, num12(v));
                }
                None => {
                    let _ = writeln!(out, " {:<2} {:<8}  {}", t, "BND", c);
                }
            };
        };
        if l == u {
            bound("FX", Some(l));
            continue;
        }
        if l == f64::NEG_INFINITY && u == f64::INFINITY {
            bound("FR", None);
            continue;
        }
        if l == f64::NEG_INFINITY {
            bound("MI", None);
        } else if l != 0.0 {
            bound("LO", Some(l));
        }
        if u.is_finite() {
            bound("UP", Some(u));
        }
    }
    out.push_str("ENDATA\n");
    Ok(out)
}

/// Parse MPS text (fixed or free layout, names without spaces).
pub fn read_mps(text: &str) -> Result<MpsModel, LpError> {
    #[derive(PartialEq)]
    enum Sec {
        None,
        Rows,
        Columns,
        Rhs,
        Ranges,
        Bounds,
    }
    let err = |line: usize, msg: &str| LpError::Mps(format!("line {line}: {msg}"));
    let mut sec = Sec::None;
    let mut name = String::new();
    let mut obj_row: Option<String> = None;
    let mut row_index: HashMap<String, usize> = HashMap::new();
    let mut senses = Vec::new();
    let mut col_index: HashMap<String, usize> = HashMap::new();
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut cost: Vec<f64> = Vec::new();
    let mut integer: Vec<bool> = Vec::new();
    let mut in_int = false;
    let mut rhs: Vec<f64> = Vec::new();
    let mut lower: Vec<f64> = Vec::new();
    let mut upper: Vec<f64> = Vec::new();
    let mut ended = false;
    let parse = |s: &str, line: usize| s.parse::<f64>().map_err(|_| err(line, &format!("bad number {s:?}")));

    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        if raw.starts_with('*') || raw.trim().is_empty() {
            continue;
        }
        let tok: Vec<&str> = raw.split_whitespace().collect();
        if !raw.starts_with(' ') {
            sec = match tok[0] {
                "NAME" => {
                    name = tok.get(1).unwrap_or(&"").to_string();
                    Sec::None
                }
                "ROWS" => Sec::Rows,
                "COLUMNS" => Sec::Columns,
                "RHS" => {
                    rhs.resize(senses.len(), 0.0);
                    Sec::Rhs
                }
                "RANGES" => Sec::Ranges,
                "BOUNDS" => Sec::Bounds,
                "ENDATA" => {
                    ended = true;
                    break;
                }
                other => return Err(err(ln, &format!("unknown section {other}"))),
            };
            continue;
        }
        match sec {
            Sec::Rows => {
                if tok.len() < 2 {
                    return Err(err(ln, "row line needs type and name"));
                }
                let s = match tok[0] {
                    "N" => {
                        if obj_row.is_none() {
                            obj_row = Some(tok[1].to_string());
                        }
                        continue;
                    }
                    "L" => RowSense::Le,
                    "G" => RowSense::Ge,
                    "E" => RowSense::Eq,
                    t => return Err(err(ln, &format!("unknown row type {t}"))),
                };
                row_index.insert(tok[1].to_string(), senses.len());
                senses.push(s);
            }
            Sec::Columns => {
                if tok.len() >= 3 && tok[1] == "'MARKER'" {
                    in_int = tok[2] == "'INTORG'";
                    continue;
                }
                if tok.len() < 3 || tok.len() % 2 == 0 {
                    return Err(err(ln, "column line needs name and row/value pairs"));
                }
                let j = *col_index.entry(tok[0].to_string()).or_insert_with(|| {
                    cost.push(0.0);
                    integer.push(in_int);
                    lower.push(0.0);
                    upper.push(f64::INFINITY);
                    cost.len() - 1
                });
                for pair in tok[1..].chunks(2) {
                    let v = parse(pair[1], ln)?;
                    if Some(pair[0]) == obj_row.as_deref() {
                        cost[j] += v;
                    } else {
                        let i = *row_index.get(pair[0]).ok_or_else(|| err(ln, &format!("unknown row {}", pair[0])))?;
                        entries.push((i, j, v));
                    }
                }
            }
            Sec::Rhs => {
                let start = if tok.len() % 2 == 1 { 1 } else { 0 };
                for pair in tok[start..].chunks(2) {
                    if pair.len() < 2 {
                        return Err(err(ln, "rhs pair incomplete"));
                    }
                    if Some(pair[0]) == obj_row.as_deref() {
                        continue;
                    }
                    let i = *row_index.get(pair[0]).ok_or_else(|| err(ln, &format!("unknown row {}", pair[0])))?;
                    rhs[i] = parse(pair[1], ln)?;
                }
            }
            Sec::Ranges => return Err(err(ln, "RANGES are not supported")),
            Sec::Bounds => {
                if tok.len() < 3 {
                    return Err(err(ln, "bound line too short"));
                }
                let j = *col_index.get(tok[2]).ok_or_else(|| err(ln, &format!("unknown column {}", tok[2])))?;
                let val = || tok.get(3).ok_or_else(|| err(ln, "bound value missing")).and_then(|s| parse(s, ln));
                match tok[0] {
                    "UP" => upper[j] = val()?,
                    "LO" => lower[j] = val()?,
                    "FX" => {
                        let v = val()?;
                        lower[j] = v;
                        upper[j] = v;
                    }
                    "FR" => {
                        lower[j] = f64::NEG_INFINITY;
                        upper[j] = f64::INFINITY;
                    }
                    "MI" => lower[j] = f64::NEG_INFINITY,
                    "PL" => upper[j] = f64::INFINITY,
                    "BV" => {
                        lower[j] = 0.0;
                        upper[j] = 1.0;
                        integer[j] = true;
                    }
                    t => return Err(err(ln, &format!("unknown bound type {t}"))),
                }
            }
            Sec::None => return Err(err(ln, "data outside a section")),
        }
    }
    if !ended {
        return Err(LpError::Mps("missing ENDATA".into()));
    }
    let (m, n) = (senses.len(), cost.len());
    rhs.resize(m, 0.0);
    let mut data = vec![0.0; m * n];
    for (i, j, v) in entries {
        data[i * n + j] += v;
    }
    let mut rows: Vec<(String, usize)> = row_index.into_iter().collect();
    rows.sort_by_key(|r| r.1);
    let mut cols: Vec<(String, usize)> = col_index.into_iter().collect();
    cols.sort_by_key(|c| c.1);
    let lp = LinearProgram::new(DenseMatrix::new(m, n, data), cost, senses, rhs, lower, upper)?
        .with_names(rows.into_iter().map(|r| r.0).collect(), cols.into_iter().map(|c| c.0).collect())?;
    Ok(MpsModel { name, lp, integer })
}
