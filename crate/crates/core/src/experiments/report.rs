use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::fit::{fit_rate, RateFit};
use crate::{Error, Result};

/// Provenance embedded in every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub version: String,
    pub seed: u64,
    pub config: ScenarioConfig,
}

impl ReportMeta {
    pub fn new(config: &ScenarioConfig) -> Self {
        Self {
            version: crate::VERSION.to_string(),
            seed: config.seed,
            config: config.resolved(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub fit: Option<RateFit>,
    /// `"ok"`, or the reason no fit was made.
    pub status: String,
    /// Lags dropped because they are within a few steps of `dt`.
    pub dropped: usize,
}

impl FitOutcome {
    fn skipped(status: &str) -> Self {
        Self {
            fit: None,
            status: status.into(),
            dropped: 0,
        }
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

/// Fits `values` against `xs`. When any `x < 8·dt`, the two smallest `x` are
/// discarded first; all-zero inputs are reported as degenerate.
pub fn fit_with_dt_rule(xs: &[f64], values: &[f64], dt: Option<f64>) -> FitOutcome {
    if values.iter().all(|v| *v == 0.0) {
        return FitOutcome::skipped("degenerate: zero error");
    }
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(values.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut dropped = 0;
    if let Some(dt) = dt {
        if pairs.iter().any(|(x, _)| *x < 8.0 * dt) && pairs.len() > 2 {
            pairs.truncate(pairs.len() - 2);
            dropped = 2;
        }
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    match fit_rate(&x, &y) {
        Ok(fit) => FitOutcome {
            fit: Some(fit),
            status: "ok".into(),
            dropped,
        },
        Err(e) => FitOutcome {
            fit: None,
            status: format!("skipped: {e}"),
            dropped,
        },
    }
}

/// `(mean |v|^q)^{1/q}`.
pub fn lq_norm(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v.abs().powf(q)).sum::<f64>() / values.len() as f64).powf(1.0 / q)
}

/// Runs `f` on a dedicated pool; `None` uses the rayon default.
pub fn with_threads<T: Send, F: FnOnce() -> T + Send>(threads: Option<usize>, f: F) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Writes per-lag tables and reports into the configured output directory.
pub(crate) struct Sink {
    dir: Option<PathBuf>,
}

impl Sink {
    pub fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
        })
    }

    /// CSV with columns `eps,value,replication`.
    pub fn table(&self, name: &str, rows: &[(f64, f64, usize)]) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let mut w = csv::Writer::from_path(dir.join(format!("{name}.csv")))?;
        w.write_record(["eps", "value", "replication"])?;
        for (e, v, r) in rows {
            w.write_record([format!("{e:e}"), format!("{v:e}"), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn report<T: Serialize>(&self, name: &str, report: &T) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(report)?)?;
        Ok(())
    }
}

/// Formats `t` for file names, e.g. `0.25` → `t0.25`.
pub(crate) fn t_label(t: f64) -> String {
    format!("t{t}")
}

/// Splits per-replication results into successes, keeping the first error.
pub(crate) fn collect_reps<T>(results: Vec<Result<T>>) -> (Vec<T>, Option<Error>) {
    let mut ok = Vec::with_capacity(results.len());
    let mut first_err = None;
    for r in results {
        match r {
            Ok(v) if first_err.is_none() => ok.push(v),
            Ok(_) => {}
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    (ok, first_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dt_rule_drops_two_smallest() {
        let xs: Vec<f64> = (0..8).map(|k| 2f64.powi(-k)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let f = fit_with_dt_rule(&xs, &ys, Some(2f64.powi(-12)));
        assert_eq!(f.dropped, 0);
        assert_eq!(f.fit.unwrap().points, 8);
        let f = fit_with_dt_rule(&xs, &ys, Some(2f64.powi(-8)));
        assert_eq!(f.dropped, 2);
        assert_eq!(f.fit.unwrap().points, 6);
        assert!((f.slope().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zeros_are_degenerate() {
        let f = fit_with_dt_rule(&[1.0, 0.5, 0.25], &[0.0; 3], None);
        assert!(f.fit.is_none());
        assert_eq!(f.status, "degenerate: zero error");
    }

    #[test]
    fn moments() {
        assert_eq!(lq_norm(&[3.0, -3.0], 2.0), 3.0);
        assert!((lq_norm(&[1.0, 2.0], 1.0) - 1.5).abs() < 1e-15);
    }
}
