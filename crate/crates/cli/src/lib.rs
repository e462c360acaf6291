//! Scenario files, verification checks and reports behind the `cgkahler`
//! binary.

pub mod checks;
pub mod commands;
pub mod config;
pub mod report;

pub use checks::{CheckError, CheckKind};
pub use config::{ConfigError, ScenarioConfig};
pub use report::{verify_all, verify_all_timed, CheckRecord, ScenarioReport};
