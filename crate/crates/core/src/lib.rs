pub mod cases;
pub mod cli;
pub mod custom;
pub mod engine;
pub mod ir;
pub mod optimizer;
pub mod policy;
pub mod profile;
pub mod spec;
pub mod specializer;
