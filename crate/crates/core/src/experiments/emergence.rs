use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::report::{collect_reps, fit_with_dt_rule, lq_norm, t_label, FitOutcome, ReportMeta, Sink};
use crate::approximation::{build_slice, mixture_density, snap_to_grid};
use crate::bessel::{deposit, h_norm, GriddedFunction};
use crate::interpolation::{dyadic_grid, ParameterChoice};
use crate::particles::{simulate, Trajectory};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmergenceAtTime {
    pub t: f64,
    /// `dyadic_grid(min(1, t), α₀, n_max)`.
    pub eps_grid: Vec<f64>,
    /// Index of the chosen lag in `eps_grid`; absent for a fixed lag.
    pub eps_index: Option<usize>,
    pub eps: f64,
    pub eps_snapped: f64,
    /// Calibrated constants of the two bound terms.
    pub c_a: Option<f64>,
    pub c_e: Option<f64>,
    /// `‖p(t)‖_{H^w_r}` per replication.
    pub norms: Vec<f64>,
    pub lq_norm: f64,
    /// Mean of the mixture component means, per replication.
    pub centers: Vec<Vec<f64>>,
    /// Common noise `Z_t`, per replication.
    pub z_t: Vec<Vec<f64>>,
    /// L¹ distance of the replication-averaged density to the exact law, when known.
    pub control_l1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub n: usize,
    /// Moment of `‖p(t)‖_{H^w_r}` per evaluation time.
    pub lq_norms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmergenceReport {
    pub meta: ReportMeta,
    pub params: ParameterChoice,
    pub per_t: Vec<EmergenceAtTime>,
    /// Fit of the moments against `1 ∧ t`; compare the slope with `−γ`.
    pub time_fit: FitOutcome,
    pub gamma: f64,
    pub stability: Vec<StabilityRow>,
    /// Largest ratio between particle counts of the moments at any one time.
    pub stability_ratio: Option<f64>,
}

/// Variance of the exact marginal when the scenario is a driftless Brownian motion.
fn control_variance(config: &ScenarioConfig) -> Option<f64> {
    let f = &config.family;
    let get = |k: &str, default: f64| f.params.get(k).copied().unwrap_or(default);
    (f.name == "constant" && get("drift", 0.0) == 0.0 && get("sigma_bar", 0.0) == 0.0)
        .then(|| get("sigma", 1.0).powi(2))
}

struct Choice {
    grid: Vec<f64>,
    index: Option<usize>,
    eps: f64,
    c_a: Option<f64>,
    c_e: Option<f64>,
}

fn choose_lags(config: &ScenarioConfig, params: &ParameterChoice) -> Result<Vec<Choice>> {
    let grid_spec = config.grid();
    let dt = config.dt;
    let grids: Vec<Vec<f64>> = config
        .t_eval
        .iter()
        .map(|&t| dyadic_grid(t.min(1.0), params.alpha0, config.eps_grid.n_max))
        .collect();
    if let Some(e) = config.emergence.fixed_eps {
        return Ok(grids
            .into_iter()
            .map(|grid| Choice {
                grid,
                index: None,
                eps: e,
                c_a: None,
                c_e: None,
            })
            .collect());
    }
    // calibrate both constants on the first replication
    let traj = simulate(&config.plan(0)?)?;
    let e_exp = (1.0 + params.xi) / 2.0;
    let mut out = Vec::with_capacity(grids.len());
    for (&t, grid) in config.t_eval.iter().zip(grids) {
        let mut c_a = 0.0f64;
        let mut c_e = 0.0f64;
        let mut candidates = Vec::new();
        for (j, &e) in grid.iter().enumerate() {
            let s = snap_to_grid(e, dt);
            if s <= 0.0 {
                continue;
            }
            let slice = build_slice(&traj, s, t)?;
            let a = h_norm(&mixture_density(&slice.mixture, grid_spec)?, params.s, params.r)?;
            let err = h_norm(&deposit(&slice.error, grid_spec)?, -params.u, params.r)?;
            c_a = c_a.max(a * s.powf(params.gamma));
            c_e = c_e.max(err / s.powf(e_exp));
            candidates.push((j, s));
        }
        let (index, _) = candidates
            .iter()
            .map(|&(j, s)| (j, c_a * s.powf(-params.gamma) + c_e * s.powf(e_exp)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::Config(format!("no lag of the grid at t = {t} exceeds dt")))?;
        out.push(Choice {
            eps: grid[index],
            grid,
            index: Some(index),
            c_a: Some(c_a),
            c_e: Some(c_e),
        });
    }
    Ok(out)
}

struct RepOutput {
    norms: Vec<f64>,
    centers: Vec<Vec<f64>>,
    z_t: Vec<Vec<f64>>,
    densities: Vec<Option<GriddedFunction>>,
}

fn densities_for(
    traj: &Trajectory,
    config: &ScenarioConfig,
    params: &ParameterChoice,
    lags: &[f64],
    keep: bool,
) -> Result<RepOutput> {
    let grid = config.grid();
    let d = config.d();
    let mut out = RepOutput {
        norms: Vec::new(),
        centers: Vec::new(),
        z_t: Vec::new(),
        densities: Vec::new(),
    };
    for (&t, &eps) in config.t_eval.iter().zip(lags) {
        let slice = build_slice(traj, eps, t)?;
        let dens = mixture_density(&slice.mixture, grid)?;
        out.norms.push(h_norm(&dens, params.w, params.r)?);
        let mut c = vec![0.0; d];
        for i in 0..slice.mixture.len() {
            for (ca, m) in c.iter_mut().zip(slice.mixture.mean(i)) {
                *ca += m;
            }
        }
        c.iter_mut().for_each(|v| *v /= slice.mixture.len() as f64);
        out.centers.push(c);
        let k = traj.step_of(t).expect("evaluation time is on the step grid");
        out.z_t.push(traj.z_at(k).to_vec());
        out.densities.push(keep.then_some(dens));
    }
    Ok(out)
}

fn snapped(config: &ScenarioConfig, choices: &[Choice], dt: f64) -> Result<Vec<f64>> {
    choices
        .iter()
        .zip(&config.t_eval)
        .map(|(c, &t)| {
            let s = snap_to_grid(c.eps, dt);
            if s <= 0.0 || s > t {
                Err(Error::Config(format!(
                    "lag {} does not fit the step grid at t = {t}",
                    c.eps
                )))
            } else {
                Ok(s)
            }
        })
        .collect()
}

/// Density estimates `p(t)` from the Gaussian mixture at a balanced lag, their
/// `H^w_r` norms across replications, and their stability in `n`.
pub fn run_emergence_experiment(config: &ScenarioConfig) -> Result<EmergenceReport> {
    config.validate()?;
    let params = config.parameters()?;
    let sink = Sink::new(config.output_dir.as_deref())?;
    let choices = choose_lags(config, &params)?;
    let lags = snapped(config, &choices, config.dt)?;
    let control = control_variance(config);

    let results: Vec<Result<RepOutput>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let traj = simulate(&config.plan(rep)?)?;
            densities_for(&traj, config, &params, &lags, control.is_some())
        })
        .collect();
    let (reps, err) = collect_reps(results);

    let grid = config.grid();
    let x0 = config.x0();
    let mut per_t = Vec::with_capacity(config.t_eval.len());
    for (ti, (&t, choice)) in config.t_eval.iter().zip(&choices).enumerate() {
        let norms: Vec<f64> = reps.iter().map(|r| r.norms[ti]).collect();
        let rows: Vec<(f64, f64, usize)> = norms.iter().enumerate().map(|(r, v)| (lags[ti], *v, r)).collect();
        sink.table(&format!("density_norm_{}", t_label(t)), &rows)?;
        let control_l1 = match (control, reps.is_empty()) {
            (Some(var), false) => {
                let mut mean = vec![0.0; grid.len()];
                for r in &reps {
                    let dens = r.densities[ti].as_ref().expect("densities kept for the control");
                    for (m, v) in mean.iter_mut().zip(dens.values()) {
                        *m += v;
                    }
                }
                let cov: Vec<f64> = (0..x0.len() * x0.len())
                    .map(|k| if k % (x0.len() + 1) == 0 { var * t } else { 0.0 })
                    .collect();
                let exact = GriddedFunction::gaussian(grid, &x0, &cov)?;
                let nr = reps.len() as f64;
                let l1: f64 = mean
                    .iter()
                    .zip(exact.values())
                    .map(|(m, e)| (m / nr - e).abs())
                    .sum::<f64>()
                    * grid.cell_volume();
                Some(l1)
            }
            _ => None,
        };
        per_t.push(EmergenceAtTime {
            t,
            eps_grid: choice.grid.clone(),
            eps_index: choice.index,
            eps: choice.eps,
            eps_snapped: lags[ti],
            c_a: choice.c_a,
            c_e: choice.c_e,
            lq_norm: lq_norm(&norms, config.moment_q),
            norms,
            centers: reps.iter().map(|r| r.centers[ti].clone()).collect(),
            z_t: reps.iter().map(|r| r.z_t[ti].clone()).collect(),
            control_l1,
        });
    }
    if let Some(e) = err {
        return Err(e);
    }

    let xs: Vec<f64> = per_t.iter().map(|p| p.t.min(1.0)).collect();
    let ys: Vec<f64> = per_t.iter().map(|p| p.lq_norm).collect();
    let time_fit = fit_with_dt_rule(&xs, &ys, None);

    let mut stability = Vec::new();
    if !config.emergence.n_values.is_empty() {
        let dt = config.emergence.stability_dt.unwrap_or(config.dt);
        let mut sub = config.clone();
        sub.dt = dt;
        sub.validate()?;
        let sub_lags = snapped(&sub, &choices, dt)?;
        for &n in &config.emergence.n_values {
            let results: Vec<Result<RepOutput>> = (0..config.replications)
                .into_par_iter()
                .map(|rep| {
                    let traj = simulate(&sub.plan_for(n, rep)?)?;
                    densities_for(&traj, &sub, &params, &sub_lags, false)
                })
                .collect();
            let (reps, err) = collect_reps(results);
            if let Some(e) = err {
                return Err(e);
            }
            let lq_norms = (0..config.t_eval.len())
                .map(|ti| lq_norm(&reps.iter().map(|r| r.norms[ti]).collect::<Vec<_>>(), config.moment_q))
                .collect();
            stability.push(StabilityRow { n, lq_norms });
        }
    }
    let stability_ratio = (stability.len() > 1).then(|| {
        (0..config.t_eval.len())
            .map(|ti| {
                let vals = stability.iter().map(|s| s.lq_norms[ti]);
                vals.clone().fold(0.0, f64::max) / vals.fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    });

    let report = EmergenceReport {
        meta: ReportMeta::new(config),
        gamma: params.gamma,
        params,
        per_t,
        time_fit,
        stability,
        stability_ratio,
    };
    sink.report("emergence", &report)?;
    Ok(report)
}
