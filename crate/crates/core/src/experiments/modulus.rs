use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::rates::LagSeries;
use super::report::{collect_reps, ReportMeta, Sink};
use crate::approximation::{simulate_y, snap_to_grid};
use crate::bessel::{deposit, h_norm, GridSpec};
use crate::interpolation::ParameterChoice;
use crate::measures::SignedAtomicMeasure;
use crate::particles::{simulate, Trajectory};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusReport {
    pub meta: ReportMeta,
    pub params: ParameterChoice,
    pub t: f64,
    pub eps_ref: f64,
    /// Time offsets `h = t − t'` after snapping.
    pub h: Vec<f64>,
    /// `‖μ_t − μ_{t−h}‖_{H^{-u}_r}`, fitted against `h`.
    pub measure: LagSeries,
    /// `ρβ/2`.
    pub measure_target: f64,
    /// Distance `√2·h` between `(t−ε, t)` and `(t−h−ε, t−h)`.
    pub y_distance: Vec<f64>,
    /// `(E_i |Y^{ε,t} − Y^{ε,t−h}|²)^{1/2}`, fitted against the distance.
    pub y_increment: LagSeries,
    /// `β/2`.
    pub y_target: f64,
}

/// `‖μ_t − μ_{t'}‖_{H^{-u}_r}` with atoms paired by particle index.
pub fn measure_modulus(traj: &Trajectory, t: f64, t2: f64, params: &ParameterChoice, grid: GridSpec) -> Result<f64> {
    let step = |s: f64| {
        traj.step_of(s).ok_or(Error::GridAlignment {
            eps: 0.0,
            t: s,
            dt: traj.dt(),
        })
    };
    let (k, k2) = (step(t)?, step(t2)?);
    let diff = SignedAtomicMeasure::difference(&traj.marginal(k), &traj.marginal(k2))?;
    if diff.is_zero() {
        return Ok(0.0);
    }
    h_norm(&deposit(&diff, grid)?, -params.u, params.r)
}

fn rms_distance(a: &[f64], b: &[f64], d: usize) -> f64 {
    let n = a.len() / d;
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss / n as f64).sqrt()
}

/// Time regularity of the particle marginals and of the frozen particles.
pub fn run_modulus_experiment(config: &ScenarioConfig) -> Result<ModulusReport> {
    config.validate()?;
    let params = config.parameters()?;
    let grid = config.grid();
    let dt = config.dt;
    let sink = Sink::new(config.output_dir.as_deref())?;
    let spec = config.modulus;
    let t = config.t_eval.iter().copied().fold(0.0, f64::max);
    let eps_ref = snap_to_grid(spec.eps_ref, dt);
    let mut h: Vec<f64> = Vec::new();
    for k in 0..spec.levels {
        let s = snap_to_grid(spec.h0 * 2f64.powi(-(k as i32)), dt);
        if s > 0.0 && s + eps_ref <= t && !h.contains(&s) {
            h.push(s);
        }
    }
    if h.is_empty() {
        return Err(Error::Config("no time offset fits between the step grid and t".into()));
    }
    let d = config.d();

    let results: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let traj = simulate(&config.plan(rep)?)?;
            let y_ref = simulate_y(&traj, eps_ref, t)?;
            let mut m = Vec::with_capacity(h.len());
            let mut y = Vec::with_capacity(h.len());
            for &hk in &h {
                let t2 = snap_to_grid(t - hk, dt);
                m.push(measure_modulus(&traj, t, t2, &params, grid)?);
                y.push(rms_distance(&y_ref, &simulate_y(&traj, eps_ref, t2)?, d));
            }
            Ok((m, y))
        })
        .collect();
    let (reps, err) = collect_reps(results);
    let (m_samples, y_samples): (Vec<Vec<f64>>, Vec<Vec<f64>>) = reps.into_iter().unzip();
    let dist: Vec<f64> = h.iter().map(|v| std::f64::consts::SQRT_2 * v).collect();
    let measure = LagSeries::from_samples(m_samples, &h, dt);
    let y_increment = LagSeries::from_samples(y_samples, &dist, std::f64::consts::SQRT_2 * dt);
    sink.table("measure_modulus", &measure.rows(&h))?;
    sink.table("y_increment", &y_increment.rows(&dist))?;
    if let Some(e) = err {
        return Err(e);
    }
    let beta = params.beta;
    let report = ModulusReport {
        meta: ReportMeta::new(config),
        params,
        t,
        eps_ref,
        h,
        measure,
        measure_target: config.rho * beta / 2.0,
        y_distance: dist,
        y_increment,
        y_target: beta / 2.0,
    };
    sink.report("modulus", &report)?;
    Ok(report)
}
