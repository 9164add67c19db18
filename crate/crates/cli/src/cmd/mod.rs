pub mod data;
pub mod eval;
pub mod fusion;
pub mod serve;
