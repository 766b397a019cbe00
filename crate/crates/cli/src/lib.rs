//! Command-line front end: training, qIoU evaluation, detection with
//! rectified crops, gradient checking, edge-map export and synthetic data
//! generation.

pub mod commands;
pub mod draw;
pub mod error;
pub mod eval;

pub use commands::{
    cmd_detect, cmd_edges, cmd_eval, cmd_gradcheck, cmd_synth, cmd_train, DataSource, DetectArgs, EvalArgs,
    GradCheckArgs, TrainArgs,
};
pub use error::CliError;
pub use eval::{comparison_table, EvalReport};
