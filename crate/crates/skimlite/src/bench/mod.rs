//! Dataset generation, the four-mode benchmark runner, and report
//! rendering.

pub mod gen;
pub mod harness;
pub mod report;

pub use gen::GenSpec;
pub use harness::{run_bench, run_mode, BenchEnv, Endpoints, Mode, ModeOptions, ModeRow};
pub use report::BenchReport;
