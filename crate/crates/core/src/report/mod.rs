//! Report commands: `analyze`, `compare`, `memorisation` and `selfcheck`.
//!
//! Every command writes into one output directory and finishes by writing
//! `index.json`, which lists each file with its size and SHA-256. Outputs
//! carry no timestamps and all parallel reductions are exact, so identical
//! configs reproduce byte-identical bundles.

mod analyze;
mod compare;
mod config;
mod memorisation;
mod output;
mod selfcheck;

pub use analyze::{analyze_dump, cmd_analyze, AblationScalars, AnalyzeEntry, AnalyzeReport, ClassTail, RunAnalysis, RunSummary, Scale};
pub use compare::{cmd_compare, compare_runs, CompareReport, SummaryDelta};
pub use config::{MemorisationConfig, Metric, RunConfig};
pub use memorisation::{cmd_memorisation, ConditionRow, MemorisationReport, OodRow};
pub use output::{write_index, IndexEntry, OutputDir};
pub use selfcheck::{cmd_selfcheck, CheckResult, SelfcheckReport, REFERENCE_NPY};
