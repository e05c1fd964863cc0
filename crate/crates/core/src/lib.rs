pub mod cli;
pub mod cost;
pub mod geo;
pub mod policy;
pub mod prefix_index;
pub mod state;
pub mod workload;
pub mod telemetry;
pub mod sim;
