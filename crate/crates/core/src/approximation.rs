//! Frozen-coefficient approximation of the particle system.
//!
//! For a lag `ε` and time `t`, the auxiliary particles restart from `X_{t−ε}` and
//! follow the noise of the original system with coefficients frozen at
//! `(X_{t−ε}^i, μ_{t−ε})` and no drift:
//!
//! ```text
//! Y_t^i = X_{t−ε}^i + Σ_k σ(t_k, X_{t−ε}^i, μ_{t−ε})·ΔB_k^i + σ̄(t−ε, X_{t−ε}^i, μ_{t−ε})·(Z_t − Z_{t−ε})
//! ```
//!
//! Conditionally on `(X_{t−ε}, Z)` each `Y_t^i` is normal with mean `M_i` and
//! covariance `Σ_i`, which gives the Gaussian mixture approximation of `μ_t`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bessel::{GaussianKernel, GridSpec, GriddedFunction};
use crate::measures::{EmpiricalMeasure, SignedAtomicMeasure};
use crate::particles::{apply_diffusion, simulate, SimulationPlan, Trajectory};
use crate::quadrature::gauss_hermite;
use crate::{Error, Result};

/// Rounds `eps` to the nearest multiple of `dt`.
pub fn snap_to_grid(eps: f64, dt: f64) -> f64 {
    (eps / dt).round() * dt
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub d: usize,
    /// `[n][d]`.
    pub means: Vec<f64>,
    /// `[n][d][d]`, row-major.
    pub covariances: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(d: usize, means: Vec<f64>, covariances: Vec<f64>) -> Result<Self> {
        if d == 0 || means.is_empty() || !means.len().is_multiple_of(d) || covariances.len() != means.len() * d {
            return Err(Error::Config(
                "mixture means and covariances have inconsistent shapes".into(),
            ));
        }
        for (i, c) in covariances.chunks_exact(d * d).enumerate() {
            for a in 0..d {
                for b in 0..a {
                    if c[a * d + b] != c[b * d + a] {
                        return Err(Error::Precondition(format!("covariance {i} is not symmetric")));
                    }
                }
            }
        }
        Ok(Self { d, means, covariances })
    }

    pub fn len(&self) -> usize {
        self.means.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.means[i * self.d..(i + 1) * self.d]
    }

    pub fn covariance(&self, i: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.covariances[i * dd..(i + 1) * dd]
    }

    /// Smallest eigenvalue over all component covariances.
    pub fn min_eigenvalue(&self) -> f64 {
        (0..self.len())
            .map(|i| min_eig(self.covariance(i), self.d))
            .fold(f64::INFINITY, f64::min)
    }

    /// Upper bound on the mass any single component places outside the box.
    pub fn box_tail_bound(&self, grid: &GridSpec) -> f64 {
        let d = self.d;
        let mut worst = 0.0f64;
        for i in 0..self.len() {
            let (m, c) = (self.mean(i), self.covariance(i));
            let mut tail = 0.0;
            for a in 0..d {
                let sd = c[a * d + a].sqrt();
                if sd == 0.0 {
                    continue;
                }
                let z = (grid.half_width - m[a].abs()) / sd;
                tail += if z > 0.0 { 2.0 * (-0.5 * z * z).exp() } else { 1.0 };
            }
            worst = worst.max(tail);
        }
        worst.min(1.0)
    }
}

fn min_eig(c: &[f64], d: usize) -> f64 {
    if d == 1 {
        return c[0];
    }
    SymmetricEigen::new(DMatrix::from_row_slice(d, d, c)).eigenvalues.min()
}

/// One `(ε, t)` instance of the interpolation decomposition `μ_t = ν + (μ_t − ν)`.
#[derive(Clone, Debug)]
pub struct DecompositionSlice {
    pub eps: f64,
    pub t: f64,
    pub mu_t: EmpiricalMeasure,
    pub nu: EmpiricalMeasure,
    pub error: SignedAtomicMeasure,
    pub mixture: GaussianMixture,
}

struct Frozen {
    y: Vec<f64>,
    means: Vec<f64>,
    covs: Vec<f64>,
}

fn grid_window(traj: &Trajectory, eps: f64, t: f64) -> Result<(usize, usize)> {
    let dt = traj.dt();
    let misaligned = || Error::GridAlignment { eps, t, dt };
    if !(eps >= 0.0) || eps > t {
        return Err(misaligned());
    }
    let k1 = traj.step_of(t).ok_or_else(misaligned)?;
    let lag = {
        let r = eps / dt;
        let k = r.round();
        if (r - k).abs() > 1e-9 * r.abs().max(1.0) {
            return Err(misaligned());
        }
        k as usize
    };
    if lag > k1 {
        return Err(misaligned());
    }
    Ok((k1 - lag, k1))
}

fn frozen_pass(traj: &Trajectory, k0: usize, k1: usize) -> Result<Frozen> {
    let (n, d, m) = (traj.n(), traj.dim(), traj.noise_dim());
    let coeffs = &traj.plan().coeffs;
    let model = coeffs.model();
    let homogeneous = !coeffs.time_dependent();
    let mu = traj.marginal(k0);
    let start = traj.positions_at(k0);
    let t0 = traj.time(k0);
    let dt = traj.dt();
    let lag = k1 - k0;

    let mut y = start.to_vec();
    let mut means = start.to_vec();
    let mut covs = vec![0.0; n * d * d];

    // Z_t − Z_{t−ε}, summed over the same steps as the particles
    let mut dz_total = vec![0.0; m];
    for k in k0..k1 {
        for (acc, v) in dz_total.iter_mut().zip(traj.dz_at(k)) {
            *acc += v;
        }
    }

    y.par_chunks_mut(d)
        .zip(means.par_chunks_mut(d))
        .zip(covs.par_chunks_mut(d * d))
        .enumerate()
        .try_for_each_init(
            || (vec![0.0; d * d], vec![0.0; d * m], vec![0.0; d]),
            |(sigma, sigma_bar, db), (i, ((yi, mi), ci))| -> Result<()> {
                let x = &start[i * d..(i + 1) * d];
                model.sigma_bar(t0, x, &mu, sigma_bar);
                if sigma_bar.iter().any(|v| !v.is_finite()) {
                    return Err(Error::CoefficientEvaluation {
                        field: "sigma_bar",
                        t: t0,
                    });
                }
                for a in 0..d {
                    let mut c = 0.0;
                    for j in 0..m {
                        c += sigma_bar[a * m + j] * dz_total[j];
                    }
                    mi[a] = x[a] + c;
                }
                if lag == 0 {
                    return Ok(());
                }
                let window = if traj.has_stored_increments() {
                    None
                } else {
                    Some(traj.db_window(i, k0, k1))
                };
                let mut add_gram = |sigma: &[f64], weight: f64| {
                    for a in 0..d {
                        for b in 0..d {
                            let mut s = 0.0;
                            for j in 0..d {
                                s += sigma[a * d + j] * sigma[b * d + j];
                            }
                            ci[a * d + b] += s * weight;
                        }
                    }
                };
                if homogeneous {
                    model.sigma(t0, x, &mu, sigma);
                    if sigma.iter().any(|v| !v.is_finite()) {
                        return Err(Error::CoefficientEvaluation { field: "sigma", t: t0 });
                    }
                    add_gram(sigma, lag as f64 * dt);
                }
                for k in k0..k1 {
                    if !homogeneous {
                        let tk = traj.time(k);
                        model.sigma(tk, x, &mu, sigma);
                        if sigma.iter().any(|v| !v.is_finite()) {
                            return Err(Error::CoefficientEvaluation { field: "sigma", t: tk });
                        }
                        add_gram(sigma, dt);
                    }
                    match &window {
                        Some(w) => db.copy_from_slice(&w[(k - k0) * d..(k - k0 + 1) * d]),
                        None => traj.db_into(k, i, db),
                    }
                    apply_diffusion(yi, sigma, db, sigma_bar, traj.dz_at(k));
                }
                Ok(())
            },
        )?;
    Ok(Frozen { y, means, covs })
}

/// Positions `Y_t^{i}` of the frozen-coefficient particles, flat `[n][d]`.
pub fn simulate_y(traj: &Trajectory, eps: f64, t: f64) -> Result<Vec<f64>> {
    let (k0, k1) = grid_window(traj, eps, t)?;
    Ok(frozen_pass(traj, k0, k1)?.y)
}

pub fn build_slice(traj: &Trajectory, eps: f64, t: f64) -> Result<DecompositionSlice> {
    let (k0, k1) = grid_window(traj, eps, t)?;
    let f = frozen_pass(traj, k0, k1)?;
    let d = traj.dim();
    let mu_t = traj.marginal(k1);
    let nu = EmpiricalMeasure::new(d, f.y)?;
    let error = SignedAtomicMeasure::difference(&mu_t, &nu)?;
    Ok(DecompositionSlice {
        eps: (k1 - k0) as f64 * traj.dt(),
        t: traj.time(k1),
        mu_t,
        nu,
        error,
        mixture: GaussianMixture::new(d, f.means, f.covs)?,
    })
}

/// `y ↦ (1/n) Σ_i g(y; M_i, Σ_i)` on the grid. Each component is evaluated
/// within eight standard deviations of its mean.
pub fn mixture_density(mix: &GaussianMixture, grid: GridSpec) -> Result<GriddedFunction> {
    grid.check()?;
    let d = mix.d;
    if grid.d != d {
        return Err(Error::Config("mixture and grid dimensions differ".into()));
    }
    let kernels = (0..mix.len())
        .map(|i| GaussianKernel::new(d, mix.covariance(i)).ok_or(Error::DegenerateComponent { index: i }))
        .collect::<Result<Vec<_>>>()?;
    let h = grid.cell();
    let np = grid.points;
    let w = 1.0 / mix.len() as f64;
    let mut values = vec![0.0; grid.len()];
    let mut x = [0.0f64; 3];
    for (i, kern) in kernels.iter().enumerate() {
        let m = mix.mean(i);
        let reach = 8.0 * kern.max_std;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..d {
            let l = ((m[a] - reach + grid.half_width) / h).floor().max(0.0);
            let u = ((m[a] + reach + grid.half_width) / h).ceil().min((np - 1) as f64);
            if u < l {
                lo[a] = 1;
                hi[a] = 0;
            } else {
                lo[a] = l as usize;
                hi[a] = u as usize;
            }
        }
        if (0..d).any(|a| hi[a] < lo[a]) {
            continue;
        }
        let mut idx = lo;
        'outer: loop {
            let mut flat = 0usize;
            for a in 0..d {
                x[a] = grid.node(idx[a]);
                flat = flat * np + idx[a];
            }
            values[flat] += w * kern.density(&x[..d], m);
            let mut a = d;
            loop {
                if a == 0 {
                    break 'outer;
                }
                a -= 1;
                if idx[a] < hi[a] {
                    idx[a] += 1;
                    break;
                }
                idx[a] = lo[a];
            }
        }
    }
    GriddedFunction::new(grid, values)
}

type BoxedFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A bounded test function with its declared sup-norm.
pub struct TestFunction {
    f: BoxedFn,
    sup_norm: f64,
    constant: Option<f64>,
}

impl TestFunction {
    pub fn new<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(f: F, sup_norm: f64) -> Self {
        Self {
            f: Box::new(f),
            sup_norm,
            constant: None,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            f: Box::new(move |_| c),
            sup_norm: c.abs(),
            constant: Some(c),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn checked(&self, x: &[f64]) -> Result<f64> {
        let v = (self.f)(x);
        if !v.is_finite() || v.abs() > self.sup_norm * (1.0 + 1e-12) {
            return Err(Error::Precondition(format!(
                "test function value {v} at {x:?} exceeds its declared sup-norm {}",
                self.sup_norm
            )));
        }
        Ok(v)
    }
}

/// `F^φ(M, Σ) = E[φ(N(M, Σ))]` by tensor Gauss–Hermite quadrature.
fn gaussian_expectation(phi: &TestFunction, mean: &[f64], cov: &[f64], nodes: &(Vec<f64>, Vec<f64>)) -> Result<f64> {
    if let Some(c) = phi.constant {
        return Ok(c);
    }
    let d = mean.len();
    if cov.iter().all(|v| *v == 0.0) {
        return phi.checked(mean);
    }
    // symmetric square root handles semi-definite covariances
    let root: Vec<f64> = if d == 1 {
        vec![cov[0].max(0.0).sqrt()]
    } else {
        let e = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov));
        let mut r = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += e.eigenvectors[(a, k)] * e.eigenvalues[k].max(0.0).sqrt() * e.eigenvectors[(b, k)];
                }
                r[a * d + b] = s;
            }
        }
        r
    };
    let (xs, ws) = nodes;
    let q = xs.len();
    let norm = std::f64::consts::PI.powf(-0.5 * d as f64);
    let mut idx = vec![0usize; d];
    let mut y = vec![0.0; d];
    let mut total = 0.0;
    loop {
        let mut w = norm;
        for a in 0..d {
            let mut s = mean[a];
            for b in 0..d {
                s += root[a * d + b] * std::f64::consts::SQRT_2 * xs[idx[b]];
            }
            y[a] = s;
            w *= ws[idx[a]];
        }
        total += w * phi.checked(&y)?;
        let mut a = d;
        loop {
            if a == 0 {
                return Ok(total);
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < q {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Gauss–Hermite nodes per axis used for mixture expectations.
pub fn hermite_nodes_for(d: usize) -> usize {
    if d <= 2 {
        64
    } else {
        16
    }
}

/// `(1/n) Σ_i F^φ(M_i, Σ_i)`.
pub fn mixture_expectation(mix: &GaussianMixture, phi: &TestFunction) -> Result<f64> {
    let nodes = gauss_hermite(hermite_nodes_for(mix.d));
    let vals = (0..mix.len())
        .into_par_iter()
        .map(|i| gaussian_expectation(phi, mix.mean(i), mix.covariance(i), &nodes))
        .collect::<Result<Vec<_>>>()?;
    Ok(vals.iter().sum::<f64>() / mix.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub n: usize,
    pub eps: f64,
    pub t: f64,
    pub replications: usize,
    pub deltas: Vec<f64>,
    /// Fraction of replications with deviation above each δ.
    pub exceedance: Vec<f64>,
    /// `exp(−nδ²/(2‖φ‖²))`.
    pub hoeffding_bound: Vec<f64>,
    /// `exp(−nδ²/‖φ‖)`, the form stated alongside the mixture representation.
    pub stated_bound: Vec<f64>,
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
}

/// `|ν[φ] − (1/n) Σ_i F^φ(M_i, Σ_i)|` for one slice.
pub fn slice_deviation(slice: &DecompositionSlice, phi: &TestFunction) -> Result<f64> {
    for a in slice.nu.iter() {
        phi.checked(a)?;
    }
    let lhs = if let Some(c) = phi.constant {
        c
    } else {
        slice.nu.integrate(|x| phi.eval(x))?
    };
    let rhs = mixture_expectation(&slice.mixture, phi)?;
    Ok((lhs - rhs).abs())
}

/// Deviation of `ν[φ]` from its conditional mean over independent replications;
/// replication `r` uses seed `plan.seed + r`.
pub fn hoeffding_check(
    plan: &SimulationPlan,
    eps: f64,
    t: f64,
    phi: &TestFunction,
    deltas: &[f64],
    replications: usize,
) -> Result<DeviationReport> {
    if !(phi.sup_norm > 0.0) && phi.constant.is_none() {
        return Err(Error::Precondition("test function needs a positive sup-norm".into()));
    }
    let mut deviations = Vec::with_capacity(replications);
    let mut snapped = (eps, t);
    for r in 0..replications {
        let mut p = plan.clone();
        p.seed = plan.seed.wrapping_add(r as u64);
        let traj = simulate(&p)?;
        let slice = build_slice(&traj, eps, t)?;
        snapped = (slice.eps, slice.t);
        deviations.push(slice_deviation(&slice, phi)?);
    }
    let n = plan.n as f64;
    let s = phi.sup_norm.max(f64::MIN_POSITIVE);
    Ok(DeviationReport {
        n: plan.n,
        eps: snapped.0,
        t: snapped.1,
        replications,
        deltas: deltas.to_vec(),
        exceedance: deltas
            .iter()
            .map(|d| deviations.iter().filter(|v| **v > *d).count() as f64 / replications.max(1) as f64)
            .collect(),
        hoeffding_bound: deltas.iter().map(|d| (-n * d * d / (2.0 * s * s)).exp()).collect(),
        stated_bound: deltas.iter().map(|d| (-n * d * d / s).exp()).collect(),
        max_deviation: deviations.iter().copied().fold(0.0, f64::max),
        deviations,
    })
}
