//! End-to-end studies driven by TOML configs.

pub mod config;
pub mod report;
pub mod studies;

pub use config::{parse_config, parse_config_as, parse_config_str, parse_config_str_as, LevelRule, StudyConfig, StudyKind};
pub use report::{emit_report, Check, StudyReport};
pub use studies::run_study;
