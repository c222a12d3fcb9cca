//! Scenario runner behind the command-line tool.

pub mod config;
pub mod run;
pub mod series;

pub use config::{AlphaSpec, ConfigError, Overrides, ScenarioConfig, SymbolicAlpha, System};
pub use run::{compare_oracles, run_scenario, CompareReport, RunSummary};
pub use series::Table;
