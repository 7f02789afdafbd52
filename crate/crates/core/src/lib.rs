pub mod cli;
pub mod engine_manager;
pub mod engine_worker;
pub mod fetch;
pub mod fixtures;
pub mod fsutil;
pub mod model_spec;
pub mod processing;
pub mod reference_engine;
pub mod runner;
pub mod tensor;
pub mod tiling;
pub mod zoo_client;
