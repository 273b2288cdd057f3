pub mod ablation;
pub mod config;
pub mod env;
pub mod episode;
pub mod eval;
pub mod iom;
pub mod numerics;
pub mod policy;
pub mod reward;
pub mod target_memory;
pub mod trainer;
