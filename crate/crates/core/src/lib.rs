pub mod lp;
pub mod netcase;
pub mod datagen;
pub mod forecast;
pub mod dispatch;
pub mod trainer;
pub mod exact;
pub mod cli;
