use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::report::{collect_reps, fit_with_dt_rule, lq_norm, t_label, FitOutcome, ReportMeta, Sink};
use crate::approximation::{build_slice, mixture_density, snap_to_grid};
use crate::bessel::{deposit, h_norm, GridSpec};
use crate::interpolation::ParameterChoice;
use crate::particles::simulate;
use crate::Result;

/// One per-lag quantity across replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagSeries {
    /// `[replication][lag]`.
    pub samples: Vec<Vec<f64>>,
    /// Root mean square over replications, per lag.
    pub rms: Vec<f64>,
    pub fit: FitOutcome,
}

impl LagSeries {
    pub(crate) fn from_samples(samples: Vec<Vec<f64>>, eps: &[f64], dt: f64) -> Self {
        let rms: Vec<f64> = (0..eps.len())
            .map(|j| lq_norm(&samples.iter().map(|s| s[j]).collect::<Vec<_>>(), 2.0))
            .collect();
        let fit = fit_with_dt_rule(eps, &rms, Some(dt));
        Self { samples, rms, fit }
    }

    pub(crate) fn rows(&self, eps: &[f64]) -> Vec<(f64, f64, usize)> {
        let mut rows = Vec::new();
        for (r, s) in self.samples.iter().enumerate() {
            for (e, v) in eps.iter().zip(s) {
                rows.push((*e, *v, r));
            }
        }
        rows
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateAtTime {
    pub t: f64,
    /// Lags after snapping to the step grid.
    pub eps: Vec<f64>,
    /// `(E_i |X_t^i − Y_t^i|²)^{1/2}`.
    pub displacement: Option<LagSeries>,
    /// `‖mixture density‖_{H^s_r}`.
    pub mixture_norm: Option<LagSeries>,
    /// `‖μ_t − ν‖_{H^{-u}_r}`.
    pub error_norm: Option<LagSeries>,
    /// `max_ε ‖μ_t − ν_ε‖_{H^{-u}_r} / ε^{(1+ξ)/2}` per replication.
    pub c_bar: Vec<f64>,
    pub c_bar_moment: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub meta: ReportMeta,
    pub params: ParameterChoice,
    pub per_t: Vec<RateAtTime>,
    /// Largest over smallest `C̄` moment across evaluation times.
    pub c_bar_moment_spread: Option<f64>,
}

/// Distinct positive lags of `grid` after snapping to multiples of `dt`.
pub(crate) fn snapped_lags(grid: &[f64], dt: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &e in grid {
        let s = snap_to_grid(e, dt);
        if s > 0.0 && !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

struct RepValues {
    displacement: Vec<f64>,
    mixture: Vec<f64>,
    error: Vec<f64>,
}

fn replication(
    config: &ScenarioConfig,
    params: &ParameterChoice,
    grid: GridSpec,
    lags: &[Vec<f64>],
    rep: usize,
) -> Result<Vec<RepValues>> {
    let traj = simulate(&config.plan(rep)?)?;
    let q = config.quantities;
    let mut out = Vec::with_capacity(config.t_eval.len());
    for (&t, eps) in config.t_eval.iter().zip(lags) {
        let mut v = RepValues {
            displacement: Vec::new(),
            mixture: Vec::new(),
            error: Vec::new(),
        };
        for &e in eps {
            let slice = build_slice(&traj, e, t)?;
            if q.displacement {
                let n = slice.mu_t.len() as f64;
                let ss: f64 = slice
                    .mu_t
                    .iter()
                    .zip(slice.nu.iter())
                    .map(|(x, y)| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .sum();
                v.displacement.push((ss / n).sqrt());
            }
            if q.mixture_norm {
                let dens = mixture_density(&slice.mixture, grid)?;
                v.mixture.push(h_norm(&dens, params.s, params.r)?);
            }
            if q.error_norm {
                let g = deposit(&slice.error, grid)?;
                v.error.push(h_norm(&g, -params.u, params.r)?);
            }
        }
        out.push(v);
    }
    Ok(out)
}

/// Per-lag displacement, mixture-norm and error-norm rates over the dyadic lag
/// grid, plus the dyadic Hölder constant `C̄` per replication.
pub fn run_rate_experiment(config: &ScenarioConfig) -> Result<RateReport> {
    config.validate()?;
    let params = config.parameters()?;
    let grid = config.grid();
    let dt = config.dt;
    let sink = Sink::new(config.output_dir.as_deref())?;
    let lags: Vec<Vec<f64>> = config
        .t_eval
        .iter()
        .map(|&t| snapped_lags(&config.eps_grid.at(t), dt))
        .collect();

    let results: Vec<Result<Vec<RepValues>>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| replication(config, &params, grid, &lags, rep))
        .collect();
    let (reps, err) = collect_reps(results);

    let q = config.quantities;
    let e_exp = (1.0 + params.xi) / 2.0;
    let mut per_t = Vec::with_capacity(config.t_eval.len());
    for (ti, &t) in config.t_eval.iter().enumerate() {
        let eps = lags[ti].clone();
        let gather =
            |f: &dyn Fn(&RepValues) -> &Vec<f64>| -> Vec<Vec<f64>> { reps.iter().map(|r| f(&r[ti]).clone()).collect() };
        let series = |on: bool, f: &dyn Fn(&RepValues) -> &Vec<f64>| {
            (on && !reps.is_empty()).then(|| LagSeries::from_samples(gather(f), &eps, dt))
        };
        let displacement = series(q.displacement, &|r| &r.displacement);
        let mixture_norm = series(q.mixture_norm, &|r| &r.mixture);
        let error_norm = series(q.error_norm, &|r| &r.error);
        let c_bar: Vec<f64> = match &error_norm {
            Some(s) => s
                .samples
                .iter()
                .map(|row| row.iter().zip(&eps).map(|(v, e)| v / e.powf(e_exp)).fold(0.0, f64::max))
                .collect(),
            None => Vec::new(),
        };
        let label = t_label(t);
        for (name, s) in [
            ("displacement", &displacement),
            ("mixture_norm", &mixture_norm),
            ("error_norm", &error_norm),
        ] {
            if let Some(s) = s {
                sink.table(&format!("{name}_{label}"), &s.rows(&eps))?;
            }
        }
        per_t.push(RateAtTime {
            t,
            eps,
            displacement,
            mixture_norm,
            error_norm,
            c_bar_moment: (!c_bar.is_empty()).then(|| lq_norm(&c_bar, config.moment_q)),
            c_bar,
        });
    }
    if let Some(e) = err {
        return Err(e);
    }
    let moments: Vec<f64> = per_t.iter().filter_map(|p| p.c_bar_moment).collect();
    let c_bar_moment_spread = (moments.len() > 1 && moments.iter().all(|m| *m > 0.0))
        .then(|| moments.iter().copied().fold(0.0, f64::max) / moments.iter().copied().fold(f64::INFINITY, f64::min));
    let report = RateReport {
        meta: ReportMeta::new(config),
        params,
        per_t,
        c_bar_moment_spread,
    };
    sink.report("rates", &report)?;
    Ok(report)
}
