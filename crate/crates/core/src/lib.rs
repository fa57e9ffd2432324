pub mod cli;
pub mod cross_modal_map;
pub mod embedding_store;
pub mod error;
pub mod eval_bench;
pub mod fusion_gates;
pub mod synthetic_data;
pub mod trainer;
pub mod vecops;
pub mod weight_analysis;

pub use error::{Error, Result};
