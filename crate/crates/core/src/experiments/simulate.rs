use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::report::{ReportMeta, Sink};
use crate::particles::{exit_fraction, moment_sup, simulate};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitCheck {
    pub half_width: f64,
    pub fraction: f64,
    /// Markov bound `c_q / (½·K^q)` with `c_q` the path moment of order `q`.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub meta: ReportMeta,
    pub steps: usize,
    pub final_mean: Vec<f64>,
    pub moment_order: f64,
    pub moment_sup: f64,
    pub exit: Vec<ExitCheck>,
}

/// Simulates replication 0 and writes the trajectory container and the final
/// snapshot to the output directory.
pub fn run_simulation(config: &ScenarioConfig) -> Result<SimulationReport> {
    config.validate()?;
    let sink = Sink::new(config.output_dir.as_deref())?;
    let traj = simulate(&config.plan(0)?)?;
    if let Some(dir) = &config.output_dir {
        traj.save(&dir.join("trajectory.bin"))?;
        traj.write_snapshot_csv(traj.steps(), std::fs::File::create(dir.join("snapshot.csv"))?)?;
    }
    let q = config.moment_q;
    let c_q = moment_sup(&traj, q)?;
    let exit = [2.0, 3.0, 4.0]
        .into_iter()
        .map(|k: f64| {
            Ok(ExitCheck {
                half_width: k,
                fraction: exit_fraction(&traj, k)?,
                bound: c_q / (0.5 * k.powf(q)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = SimulationReport {
        meta: ReportMeta::new(config),
        steps: traj.steps(),
        final_mean: traj.marginal(traj.steps()).mean().to_vec(),
        moment_order: q,
        moment_sup: c_q,
        exit,
    };
    sink.report("simulate", &report)?;
    Ok(report)
}
