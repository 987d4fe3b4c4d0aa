//! Coefficient fields `b`, `σ`, `σ̄` of the particle system.
//!
//! A [`CoefficientSet`] couples a model (anything implementing
//! [`CoefficientModel`]) with the constants it declares: sup-norm bounds, the
//! Hölder exponent and seminorms, and the ellipticity constant. Built-in families
//! are selected by name and a parameter map, which is how scenario files refer to
//! them. Matrices are row-major: `σ` is `d × d`, `σ̄` is `d × m`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::experiments::fit_rate;
use crate::measures::{w1_distance, EmpiricalMeasure, W1Method};
use crate::{Error, Result};

/// Evaluation interface. Implementations must be pure functions of their
/// arguments; the measure argument may be queried for summary statistics.
pub trait CoefficientModel: Send + Sync {
    fn drift(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]);
    fn sigma(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]);
    fn sigma_bar(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]);

    /// Whether `σ` may change with `t` at fixed `(x, μ)`.
    fn time_dependent(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeclaredConstants {
    pub bound_b: f64,
    pub bound_sigma: f64,
    pub bound_sigma_bar: f64,
    pub beta: f64,
    pub holder_sigma: f64,
    pub holder_sigma_bar: f64,
    pub kappa: f64,
}

/// Name plus parameter map, as written in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub name: String,
    #[serde(default = "one")]
    pub d: usize,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

fn one() -> usize {
    1
}

impl FamilySpec {
    pub fn new(name: &str, d: usize) -> Self {
        Self {
            name: name.into(),
            d,
            m: None,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = Some(m);
        self
    }

    fn param(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.params.get(key).copied().unwrap_or(default);
        if !v.is_finite() {
            return Err(Error::Config(format!("parameter `{key}` is not finite")));
        }
        Ok(v)
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!(
                "family `{}` has no parameter `{k}` (expected one of {allowed:?})",
                self.name
            ))),
            None => Ok(()),
        }
    }
}

/// Names accepted by [`CoefficientSet::from_family`].
pub const FAMILY_NAMES: &[&str] = &[
    "constant",
    "state_holder",
    "mean_interaction",
    "indicator_drift",
    "scalar_diffusion",
];

#[derive(Clone)]
pub struct CoefficientSet {
    d: usize,
    m: usize,
    model: Arc<dyn CoefficientModel>,
    declared: DeclaredConstants,
    family: Option<FamilySpec>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("d", &self.d)
            .field("m", &self.m)
            .field("declared", &self.declared)
            .field("family", &self.family)
            .finish()
    }
}

/// The three coefficient values at one `(t, x, μ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub drift: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_bar: Vec<f64>,
}

impl CoefficientSet {
    pub fn custom(d: usize, m: usize, model: Arc<dyn CoefficientModel>, declared: DeclaredConstants) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("dimension d must be positive".into()));
        }
        check_declared(&declared)?;
        Ok(Self {
            d,
            m,
            model,
            declared,
            family: None,
        })
    }

    pub fn from_family(spec: &FamilySpec) -> Result<Self> {
        let d = spec.d;
        if d == 0 {
            return Err(Error::Config("dimension d must be positive".into()));
        }
        let (m, model, declared): (usize, Arc<dyn CoefficientModel>, DeclaredConstants) = match spec.name.as_str() {
            "constant" => {
                spec.check_keys(&["drift", "sigma", "sigma_bar"])?;
                let drift = spec.param("drift", 0.0)?;
                let sigma = spec.param("sigma", 1.0)?;
                let sigma_bar = spec.param("sigma_bar", 0.0)?;
                let m = spec.m.unwrap_or(if sigma_bar == 0.0 { 0 } else { d });
                let declared = DeclaredConstants {
                    bound_b: drift.abs() * (d as f64).sqrt(),
                    bound_sigma: sigma.abs(),
                    bound_sigma_bar: sigma_bar.abs(),
                    beta: 1.0,
                    holder_sigma: 0.0,
                    holder_sigma_bar: 0.0,
                    kappa: sigma * sigma,
                };
                (
                    m,
                    Arc::new(Constant {
                        d,
                        m,
                        drift,
                        sigma,
                        sigma_bar,
                    }),
                    declared,
                )
            }
            "state_holder" => {
                spec.check_keys(&["beta", "drift", "sigma_bar"])?;
                let beta = spec.param("beta", 1.0)?;
                let drift = spec.param("drift", 1.0)?;
                let sigma_bar = spec.param("sigma_bar", 0.0)?;
                check_beta(beta)?;
                let m = spec.m.unwrap_or(if sigma_bar == 0.0 { 0 } else { d });
                let rd = (d as f64).sqrt();
                let declared = DeclaredConstants {
                    bound_b: drift.abs() * rd,
                    bound_sigma: 1.5,
                    bound_sigma_bar: sigma_bar.abs(),
                    beta,
                    holder_sigma: 0.5 * rd,
                    holder_sigma_bar: 0.0,
                    kappa: 1.0,
                };
                let model = StateHolder {
                    d,
                    m,
                    beta,
                    drift,
                    sigma_bar,
                };
                (m, Arc::new(model), declared)
            }
            "mean_interaction" => {
                spec.check_keys(&["strength", "sigma", "sigma_bar"])?;
                let strength = spec.param("strength", 1.0)?;
                let sigma = spec.param("sigma", 1.0)?;
                let sigma_bar = spec.param("sigma_bar", 0.0)?;
                let m = spec.m.unwrap_or(if sigma_bar == 0.0 { 0 } else { d });
                let declared = DeclaredConstants {
                    bound_b: strength.abs() * (d as f64).sqrt(),
                    bound_sigma: sigma.abs(),
                    bound_sigma_bar: sigma_bar.abs(),
                    beta: 1.0,
                    holder_sigma: 0.0,
                    holder_sigma_bar: 0.0,
                    kappa: sigma * sigma,
                };
                let model = MeanInteraction {
                    d,
                    m,
                    strength,
                    sigma,
                    sigma_bar,
                };
                (m, Arc::new(model), declared)
            }
            "indicator_drift" => {
                spec.check_keys(&[])?;
                if d != 1 {
                    return Err(Error::Config("indicator_drift is one-dimensional".into()));
                }
                let declared = DeclaredConstants {
                    bound_b: 1.0,
                    bound_sigma: 1.0,
                    bound_sigma_bar: 0.0,
                    beta: 1.0,
                    holder_sigma: 0.0,
                    holder_sigma_bar: 0.0,
                    kappa: 1.0,
                };
                (spec.m.unwrap_or(0), Arc::new(IndicatorDrift), declared)
            }
            "scalar_diffusion" => {
                spec.check_keys(&["beta", "drift", "kappa"])?;
                if d != 1 {
                    return Err(Error::Config("scalar_diffusion is one-dimensional".into()));
                }
                let beta = spec.param("beta", 0.5)?;
                let drift = spec.param("drift", 1.0)?;
                let kappa = spec.param("kappa", 1.0)?;
                check_beta(beta)?;
                if kappa <= 0.0 {
                    return Err(Error::Config("kappa must be positive".into()));
                }
                let floor = kappa.sqrt();
                let declared = DeclaredConstants {
                    bound_b: drift.abs(),
                    bound_sigma: floor + 0.5,
                    bound_sigma_bar: 0.0,
                    beta,
                    holder_sigma: 0.5,
                    holder_sigma_bar: 0.0,
                    kappa,
                };
                let model = ScalarDiffusion { beta, drift, floor };
                (spec.m.unwrap_or(0), Arc::new(model), declared)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown coefficient family `{other}` (known: {FAMILY_NAMES:?})"
                )))
            }
        };
        Ok(Self {
            d,
            m,
            model,
            declared,
            family: Some(spec.clone()),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    pub fn declared(&self) -> &DeclaredConstants {
        &self.declared
    }

    pub fn family(&self) -> Option<&FamilySpec> {
        self.family.as_ref()
    }

    pub fn model(&self) -> &dyn CoefficientModel {
        self.model.as_ref()
    }

    pub fn time_dependent(&self) -> bool {
        self.model.time_dependent()
    }

    /// Evaluates all three fields, rejecting non-finite output.
    pub fn evaluate(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure) -> Result<Evaluation> {
        if x.len() != self.d || mu.dim() != self.d {
            return Err(Error::Config("point or measure has the wrong dimension".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("evaluation point is not finite".into()));
        }
        let mut e = Evaluation {
            drift: vec![0.0; self.d],
            sigma: vec![0.0; self.d * self.d],
            sigma_bar: vec![0.0; self.d * self.m],
        };
        self.model.drift(t, x, mu, &mut e.drift);
        self.model.sigma(t, x, mu, &mut e.sigma);
        self.model.sigma_bar(t, x, mu, &mut e.sigma_bar);
        for (field, vals) in [("drift", &e.drift), ("sigma", &e.sigma), ("sigma_bar", &e.sigma_bar)] {
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::CoefficientEvaluation { field, t });
            }
        }
        Ok(e)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("Hölder exponent {beta} outside (0, 1]")))
    }
}

fn check_declared(c: &DeclaredConstants) -> Result<()> {
    check_beta(c.beta)?;
    let nonneg = [
        c.bound_b,
        c.bound_sigma,
        c.bound_sigma_bar,
        c.holder_sigma,
        c.holder_sigma_bar,
    ];
    if nonneg.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Config("declared bounds must be non-negative".into()));
    }
    if !(c.kappa >= 0.0) {
        return Err(Error::Config("ellipticity constant must be non-negative".into()));
    }
    Ok(())
}

/// Writes `value` on the diagonal of a row-major `rows × cols` matrix.
fn fill_diagonal(out: &mut [f64], cols: usize, value: f64) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let rows = out.len().checked_div(cols).unwrap_or(0);
    for k in 0..rows.min(cols) {
        out[k * cols + k] = value;
    }
}

struct Constant {
    d: usize,
    m: usize,
    drift: f64,
    sigma: f64,
    sigma_bar: f64,
}

impl CoefficientModel for Constant {
    fn drift(&self, _t: f64, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = self.drift);
    }
    fn sigma(&self, _t: f64, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        fill_diagonal(out, self.d, self.sigma);
    }
    fn sigma_bar(&self, _t: f64, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        fill_diagonal(out, self.m, self.sigma_bar);
    }
    fn time_dependent(&self) -> bool {
        false
    }
}

/// `b = drift·tanh(mean(μ) − x)`, `σ = (1 + ½·avg_j |sin x_j|^β)·I`.
struct StateHolder {
    d: usize,
    m: usize,
    beta: f64,
    drift: f64,
    sigma_bar: f64,
}

impl CoefficientModel for StateHolder {
    fn drift(&self, _t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        for ((o, xi), mi) in out.iter_mut().zip(x).zip(mu.mean()) {
            *o = self.drift * (mi - xi).tanh();
        }
    }
    fn sigma(&self, _t: f64, x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        let modulation = x.iter().map(|v| v.sin().abs().powf(self.beta)).sum::<f64>() / self.d as f64;
        fill_diagonal(out, self.d, 1.0 + 0.5 * modulation);
    }
    fn sigma_bar(&self, _t: f64, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        fill_diagonal(out, self.m, self.sigma_bar);
    }
    fn time_dependent(&self) -> bool {
        false
    }
}

/// `b = strength·tanh(mean(μ) − x)` with constant diffusions.
struct MeanInteraction {
    d: usize,
    m: usize,
    strength: f64,
    sigma: f64,
    sigma_bar: f64,
}

impl CoefficientModel for MeanInteraction {
    fn drift(&self, _t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        for ((o, xi), mi) in out.iter_mut().zip(x).zip(mu.mean()) {
            *o = self.strength * (mi - xi).tanh();
        }
    }
    fn sigma(&self, _t: f64, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        fill_diagonal(out, self.d, self.sigma);
    }
    fn sigma_bar(&self, _t: f64, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        fill_diagonal(out, self.m, self.sigma_bar);
    }
    fn time_dependent(&self) -> bool {
        false
    }
}

/// Drift `1{μ = N(0, t)}`: an atomic measure never equals a Gaussian law, so the
/// drift vanishes for every finite particle system.
struct IndicatorDrift;

impl CoefficientModel for IndicatorDrift {
    fn drift(&self, _t: f64, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn sigma(&self, _t: f64, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn sigma_bar(&self, _t: f64, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn time_dependent(&self) -> bool {
        false
    }
}

/// One-dimensional diffusion `a(x) = drift·sin x`, `m(x) = √κ + ½|sin x|^β`.
struct ScalarDiffusion {
    beta: f64,
    drift: f64,
    floor: f64,
}

impl CoefficientModel for ScalarDiffusion {
    fn drift(&self, _t: f64, x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        out[0] = self.drift * x[0].sin();
    }
    fn sigma(&self, _t: f64, x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        out[0] = self.floor + 0.5 * x[0].sin().abs().powf(self.beta);
    }
    fn sigma_bar(&self, _t: f64, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn time_dependent(&self) -> bool {
        false
    }
}

/// Sampling plan for [`validate`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleSpec {
    /// Number of random `(t, x, μ)` points and of random pairs.
    pub points: usize,
    pub t_max: f64,
    /// Points are drawn uniformly from `[-x_radius, x_radius]^d`.
    pub x_radius: f64,
    pub measure_atoms: usize,
    /// Probe points for the dyadic exponent fit.
    pub probe_points: Vec<Vec<f64>>,
    /// Dyadic offsets `2^{-k}` for `k` in this range.
    pub dyadic_levels: (u32, u32),
}

impl SampleSpec {
    pub fn standard(d: usize, points: usize) -> Self {
        Self {
            points,
            t_max: 1.0,
            x_radius: 4.0,
            measure_atoms: 16,
            probe_points: vec![vec![0.0; d], vec![0.7; d], vec![std::f64::consts::PI; d]],
            dyadic_levels: (6, 16),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    /// `min λ_min(σσᵀ)` over samples.
    pub ellipticity_quotient: f64,
    pub ellipticity_pass: bool,
    pub sup_drift: f64,
    pub sup_sigma_entry: f64,
    pub sup_sigma_bar_entry: f64,
    pub bounds_pass: bool,
    /// Largest sampled `‖σ(t,x,μ) − σ(t,x',μ')‖_F / (|x−x'|^β + W1^β)`.
    pub holder_ratio_sigma: f64,
    pub holder_ratio_sigma_bar: f64,
    pub holder_pass: bool,
    /// Smallest dyadic slope of `log‖σ(x+h) − σ(x)‖` against `log h` over the
    /// probe points; `None` when `σ` is locally constant everywhere probed.
    pub fitted_exponent_sigma: Option<f64>,
    pub passed: bool,
}

const TOLERANCE: f64 = 1e-9;

/// Samples the coefficients and compares the observed constants with the
/// declared ones. Hölder ratios are sampled lower bounds on the seminorms.
pub fn validate(coeffs: &CoefficientSet, spec: &SampleSpec, seed: u64) -> Result<ValidationReport> {
    if spec.points == 0 || spec.measure_atoms == 0 {
        return Err(Error::Config("validation sample grid is empty".into()));
    }
    if !(spec.x_radius > 0.0) || !(spec.t_max >= 0.0) {
        return Err(Error::Config("validation ranges must be positive".into()));
    }
    let d = coeffs.dim();
    let decl = *coeffs.declared();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unif = move || (rng.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0);

    let mut ell = f64::INFINITY;
    let (mut sb, mut ss, mut ssb) = (0.0f64, 0.0f64, 0.0f64);
    let (mut hs, mut hsb) = (0.0f64, 0.0f64);
    for _ in 0..spec.points {
        let t = unif() * spec.t_max;
        let x: Vec<f64> = (0..d).map(|_| (2.0 * unif() - 1.0) * spec.x_radius).collect();
        let atoms: Vec<f64> = (0..spec.measure_atoms * d)
            .map(|_| (2.0 * unif() - 1.0) * spec.x_radius)
            .collect();
        let mu = EmpiricalMeasure::new(d, atoms.clone())?;
        let e = coeffs.evaluate(t, &x, &mu)?;
        sb = sb.max(norm(&e.drift));
        ss = ss.max(max_abs(&e.sigma));
        ssb = ssb.max(max_abs(&e.sigma_bar));
        ell = ell.min(min_eig_gram(&e.sigma, d));

        // paired sample at a random dyadic offset
        let scale = 2f64.powi(-((unif() * 12.0) as i32));
        let x2: Vec<f64> = x.iter().map(|v| v + (2.0 * unif() - 1.0) * scale).collect();
        let moved = (unif() * spec.measure_atoms as f64) as usize % spec.measure_atoms;
        let mut atoms2 = atoms;
        for k in 0..d {
            atoms2[moved * d + k] += (2.0 * unif() - 1.0) * scale;
        }
        let mu2 = EmpiricalMeasure::new(d, atoms2)?;
        let t2 = (t + (2.0 * unif() - 1.0) * scale).clamp(0.0, spec.t_max);
        let w1 = w1_distance(&mu, &mu2, W1Method::Auto)?;
        let dx = crate::measures::euclid(&x, &x2);
        let denom = dx.powf(decl.beta) + w1.powf(decl.beta);
        if denom > 0.0 {
            let e_same_t = coeffs.evaluate(t, &x2, &mu2)?;
            hs = hs.max(frob_diff(&e.sigma, &e_same_t.sigma) / denom);
        }
        let denom_t = denom + (t - t2).abs().powf(decl.beta);
        if denom_t > 0.0 {
            let e2 = coeffs.evaluate(t2, &x2, &mu2)?;
            hsb = hsb.max(frob_diff(&e.sigma_bar, &e2.sigma_bar) / denom_t);
        }
    }

    let fitted = fitted_sigma_exponent(coeffs, spec)?;
    let ellipticity_pass = ell >= decl.kappa * (1.0 - TOLERANCE);
    let bounds_pass = sb <= decl.bound_b * (1.0 + TOLERANCE) + TOLERANCE
        && ss <= decl.bound_sigma * (1.0 + TOLERANCE) + TOLERANCE
        && ssb <= decl.bound_sigma_bar * (1.0 + TOLERANCE) + TOLERANCE;
    let holder_pass = hs <= decl.holder_sigma * (1.0 + TOLERANCE) + TOLERANCE
        && hsb <= decl.holder_sigma_bar * (1.0 + TOLERANCE) + TOLERANCE;
    Ok(ValidationReport {
        samples: spec.points,
        ellipticity_quotient: ell,
        ellipticity_pass,
        sup_drift: sb,
        sup_sigma_entry: ss,
        sup_sigma_bar_entry: ssb,
        bounds_pass,
        holder_ratio_sigma: hs,
        holder_ratio_sigma_bar: hsb,
        holder_pass,
        fitted_exponent_sigma: fitted,
        passed: ellipticity_pass && bounds_pass && holder_pass,
    })
}

fn fitted_sigma_exponent(coeffs: &CoefficientSet, spec: &SampleSpec) -> Result<Option<f64>> {
    let d = coeffs.dim();
    let (lo, hi) = spec.dyadic_levels;
    if hi < lo + 2 {
        return Err(Error::Config("need at least three dyadic levels".into()));
    }
    let mut best: Option<f64> = None;
    for p in &spec.probe_points {
        if p.len() != d {
            return Err(Error::Config("probe point has the wrong dimension".into()));
        }
        let mu = EmpiricalMeasure::dirac(p)?;
        let base = coeffs.evaluate(0.0, p, &mu)?;
        let mut hs = Vec::new();
        let mut diffs = Vec::new();
        for k in lo..=hi {
            let h = 2f64.powi(-(k as i32));
            let mut q = p.clone();
            q[0] += h;
            let e = coeffs.evaluate(0.0, &q, &mu)?;
            let diff = frob_diff(&base.sigma, &e.sigma);
            if diff > 0.0 {
                hs.push(h);
                diffs.push(diff);
            }
        }
        if hs.len() >= 3 {
            let slope = fit_rate(&hs, &diffs)?.slope;
            best = Some(best.map_or(slope, |b: f64| b.min(slope)));
        }
    }
    Ok(best)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn frob_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Smallest eigenvalue of `σσᵀ` for a row-major `d × d` matrix `σ`.
pub fn min_eig_gram(sigma: &[f64], d: usize) -> f64 {
    if d == 1 {
        return sigma[0] * sigma[0];
    }
    let s = DMatrix::from_row_slice(d, d, sigma);
    let gram = &s * s.transpose();
    SymmetricEigen::new(gram).eigenvalues.min()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta0() -> EmpiricalMeasure {
        EmpiricalMeasure::dirac(&[0.0]).unwrap()
    }

    #[test]
    fn constant_family_evaluates_to_constants() {
        let c = CoefficientSet::from_family(&FamilySpec::new("constant", 2)).unwrap();
        let mu = EmpiricalMeasure::dirac(&[0.3, -1.0]).unwrap();
        let e = c.evaluate(0.5, &[1.0, 2.0], &mu).unwrap();
        assert_eq!(e.drift, vec![0.0, 0.0]);
        assert_eq!(e.sigma, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(e.sigma_bar.is_empty());
    }

    #[test]
    fn holder_family_is_identity_at_origin() {
        let c = CoefficientSet::from_family(&FamilySpec::new("state_holder", 1).with("beta", 0.5)).unwrap();
        let e = c.evaluate(0.0, &[0.0], &delta0()).unwrap();
        assert_eq!(e.sigma, vec![1.0]);
    }

    #[test]
    fn mean_interaction_vanishes_at_mean() {
        let c = CoefficientSet::from_family(&FamilySpec::new("mean_interaction", 1)).unwrap();
        assert_eq!(c.evaluate(0.0, &[0.0], &delta0()).unwrap().drift, vec![0.0]);
        let mu = EmpiricalMeasure::new(1, vec![1.0, 3.0]).unwrap();
        let b = c.evaluate(0.0, &[0.0], &mu).unwrap().drift[0];
        assert!((b - 2f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let c = CoefficientSet::from_family(&FamilySpec::new("state_holder", 2).with("sigma_bar", 0.3)).unwrap();
        let mu = EmpiricalMeasure::new(2, vec![0.1, 0.2, -0.4, 1.7]).unwrap();
        let a = c.evaluate(0.25, &[0.9, -2.2], &mu).unwrap();
        let b = c.evaluate(0.25, &[0.9, -2.2], &mu).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sigma_bar.len(), 4);
    }

    #[test]
    fn unknown_family_and_parameter_rejected() {
        assert!(matches!(
            CoefficientSet::from_family(&FamilySpec::new("nope", 1)),
            Err(Error::Config(_))
        ));
        assert!(CoefficientSet::from_family(&FamilySpec::new("constant", 1).with("bogus", 1.0)).is_err());
        assert!(CoefficientSet::from_family(&FamilySpec::new("state_holder", 1).with("beta", 0.0)).is_err());
    }

    struct Exploding;
    impl CoefficientModel for Exploding {
        fn drift(&self, _: f64, _: &[f64], _: &EmpiricalMeasure, out: &mut [f64]) {
            out[0] = f64::NAN;
        }
        fn sigma(&self, _: f64, _: &[f64], _: &EmpiricalMeasure, out: &mut [f64]) {
            out[0] = 1.0;
        }
        fn sigma_bar(&self, _: f64, _: &[f64], _: &EmpiricalMeasure, _: &mut [f64]) {}
    }

    fn unit_constants() -> DeclaredConstants {
        DeclaredConstants {
            bound_b: 1.0,
            bound_sigma: 1.0,
            bound_sigma_bar: 0.0,
            beta: 1.0,
            holder_sigma: 0.0,
            holder_sigma_bar: 0.0,
            kappa: 1.0,
        }
    }

    #[test]
    fn non_finite_output_names_field() {
        let c = CoefficientSet::custom(1, 0, Arc::new(Exploding), unit_constants()).unwrap();
        match c.evaluate(0.0, &[0.0], &delta0()) {
            Err(Error::CoefficientEvaluation { field, .. }) => assert_eq!(field, "drift"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identity_sigma_passes_ellipticity() {
        let c = CoefficientSet::from_family(&FamilySpec::new("constant", 1)).unwrap();
        let r = validate(&c, &SampleSpec::standard(1, 200), 1).unwrap();
        assert!(r.ellipticity_pass);
        assert_eq!(r.ellipticity_quotient, 1.0);
        assert!(r.passed);
        assert_eq!(r.fitted_exponent_sigma, None);
    }

    struct ZeroSigma;
    impl CoefficientModel for ZeroSigma {
        fn drift(&self, _: f64, _: &[f64], _: &EmpiricalMeasure, out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn sigma(&self, _: f64, _: &[f64], _: &EmpiricalMeasure, out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn sigma_bar(&self, _: f64, _: &[f64], _: &EmpiricalMeasure, _: &mut [f64]) {}
    }

    #[test]
    fn zero_sigma_fails_ellipticity() {
        let c = CoefficientSet::custom(1, 0, Arc::new(ZeroSigma), unit_constants()).unwrap();
        let r = validate(&c, &SampleSpec::standard(1, 50), 1).unwrap();
        assert!(!r.ellipticity_pass);
        assert!(!r.passed);
    }

    #[test]
    fn empty_sample_grid_is_config_error() {
        let c = CoefficientSet::from_family(&FamilySpec::new("constant", 1)).unwrap();
        let mut s = SampleSpec::standard(1, 0);
        assert!(matches!(validate(&c, &s, 0), Err(Error::Config(_))));
        s.points = 10;
        s.measure_atoms = 0;
        assert!(matches!(validate(&c, &s, 0), Err(Error::Config(_))));
    }

    #[test]
    fn fitted_exponent_recovers_half() {
        let c = CoefficientSet::from_family(&FamilySpec::new("state_holder", 1).with("beta", 0.5)).unwrap();
        let r = validate(&c, &SampleSpec::standard(1, 100), 3).unwrap();
        let beta_hat = r.fitted_exponent_sigma.unwrap();
        assert!((0.45..=0.55).contains(&beta_hat), "fitted {beta_hat}");
    }

    #[test]
    fn ellipticity_uses_gram_matrix() {
        // σ is not symmetric positive definite but σσᵀ = diag(1, 1)
        let rot = [0.0, -1.0, 1.0, 0.0];
        assert!((min_eig_gram(&rot, 2) - 1.0).abs() < 1e-12);
        let skewed = [1.0, 1.0, 0.0, 1.0];
        // σσᵀ = [[2,1],[1,1]], λ_min = (3 − √5)/2
        assert!((min_eig_gram(&skewed, 2) - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn builtin_families_validate_at_ten_thousand_points() {
        let specs = [
            FamilySpec::new("constant", 1)
                .with("drift", 0.5)
                .with("sigma", 2.0)
                .with("sigma_bar", 0.3),
            FamilySpec::new("state_holder", 1)
                .with("beta", 1.0)
                .with("sigma_bar", 0.5),
            FamilySpec::new("state_holder", 2).with("beta", 0.5),
            FamilySpec::new("mean_interaction", 2).with("sigma_bar", 1.0),
            FamilySpec::new("indicator_drift", 1),
            FamilySpec::new("scalar_diffusion", 1).with("beta", 0.3),
        ];
        for spec in &specs {
            let c = CoefficientSet::from_family(spec).unwrap();
            let r = validate(&c, &SampleSpec::standard(spec.d, 10_000), 42).unwrap();
            assert!(r.passed, "{} failed: {r:?}", spec.name);
        }
    }
}
