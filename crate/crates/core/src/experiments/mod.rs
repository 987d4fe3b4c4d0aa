//! Scenario files, rate fits and the headline experiments.
//!
//! Each experiment takes a [`ScenarioConfig`], runs its replications in parallel
//! (replication `r` is seeded with `seed + r`), and returns a report that embeds
//! the resolved configuration. When an output directory is configured, per-lag
//! tables are written as CSV (`eps,value,replication`) and the report as JSON.

mod config;
mod emergence;
mod fit;
mod modulus;
mod rates;
mod report;
mod simulate;

pub use config::{AutoKeyword, EmergenceSpec, EpsGrid, ModulusSpec, ParamSelection, Quantities, ScenarioConfig};
pub use emergence::{run_emergence_experiment, EmergenceAtTime, EmergenceReport, StabilityRow};
pub use fit::{fit_rate, RateFit};
pub use modulus::{measure_modulus, run_modulus_experiment, ModulusReport};
pub use rates::{run_rate_experiment, LagSeries, RateAtTime, RateReport};
pub use report::{fit_with_dt_rule, lq_norm, with_threads, FitOutcome, ReportMeta};
pub use simulate::{run_simulation, ExitCheck, SimulationReport};
