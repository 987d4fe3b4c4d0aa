//! Interpolation parameters, K-functionals and discrete interpolation norms.
//!
//! The density estimate rests on writing `λ = a_ε + e_ε` with `a_ε` smooth
//! (`H^s_r`) and `e_ε` rough but small (`H^{-u}_r`), then summing
//!
//! ```text
//! ‖λ‖ ≈ Σ_n 2^{-nθ} K(2^n, λ),   K(t, λ) = inf_{λ = e + a} ‖e‖_{H^{-u}} + t·‖a‖_{H^s}
//! ```
//!
//! over a dyadic window. The exponents are chosen so the result controls
//! `‖λ‖_{H^w_r}` for some `w > 0`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest exponent of the `r'` ladder searched by [`solve_parameters`].
pub const MAX_R_CONJ_EXPONENT: u32 = 30;
/// Step of the `s` grid searched by [`solve_parameters`].
pub const S_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterChoice {
    pub d: usize,
    pub beta: f64,
    pub xi: f64,
    pub xi0: f64,
    pub r: f64,
    pub r_conj: f64,
    pub s: f64,
    pub u: f64,
    pub theta_bar: f64,
    pub theta_star: f64,
    pub w0: f64,
    pub w: f64,
    pub alpha0: f64,
    pub gamma: f64,
    pub p: f64,
}

/// `(1 + ξ₀)s − (d/r' + 1)(s + d/r')`; positive iff the choice is feasible.
pub fn feasibility_margin(d: usize, xi0: f64, r_conj: f64, s: f64) -> f64 {
    let a = d as f64 / r_conj;
    (1.0 + xi0) * s - (a + 1.0) * (s + a)
}

impl ParameterChoice {
    /// Derives every field from `(d, β, r', s)`, checking feasibility.
    pub fn from_exponents(d: usize, beta: f64, r_conj: f64, s: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Infeasible(format!(
                "Hölder exponent β = {beta} must be positive"
            )));
        }
        if beta > 1.0 || d == 0 {
            return Err(Error::Config(format!("need d ≥ 1 and β ≤ 1, got d = {d}, β = {beta}")));
        }
        if !(r_conj > 2.0) || !r_conj.is_finite() {
            return Err(Error::Config(format!("r' = {r_conj} must exceed 2 so that r ∈ (1, 2)")));
        }
        if !(s > 0.0) {
            return Err(Error::Config(format!("smoothness s = {s} must be positive")));
        }
        let xi = beta / 2.0;
        let xi0 = xi / 2.0;
        let a = d as f64 / r_conj;
        let u = 1.0 + a;
        let gamma = (a + s) / 2.0;
        if !(feasibility_margin(d, xi0, r_conj, s) > 0.0) {
            return Err(Error::Infeasible(format!(
                "(1 + ξ₀)s > (d/r' + 1)(s + d/r') fails for d = {d}, β = {beta}, r' = {r_conj}, s = {s}"
            )));
        }
        if !(gamma < 1.0) {
            return Err(Error::Infeasible(format!("γ = {gamma} is not below 1")));
        }
        let theta_bar = (1.0 + xi0) / (1.0 + xi0 + s + a);
        let theta_min = u / (s + u);
        let theta_star = 0.5 * (theta_min + theta_bar);
        let w0 = theta_star * s - (1.0 - theta_star) * u;
        if !(w0 > 0.0) || !(theta_min < theta_star && theta_star < theta_bar) {
            return Err(Error::Infeasible(format!("no positive smoothness gain (w₀ = {w0})")));
        }
        Ok(Self {
            d,
            beta,
            xi,
            xi0,
            r: r_conj / (r_conj - 1.0),
            r_conj,
            s,
            u,
            theta_bar,
            theta_star,
            w0,
            w: w0 / 2.0,
            alpha0: 2.0 * theta_star / (1.0 + xi0),
            gamma,
            p: 1.0,
        })
    }

    /// Lower end `u/(s + u)` of the admissible θ interval.
    pub fn theta_min(&self) -> f64 {
        self.u / (self.s + self.u)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        let fresh = Self::from_exponents(p.d, p.beta, p.r_conj, p.s)?;
        if fresh != p {
            return Err(Error::Config(
                "parameter fields are inconsistent with (d, β, r', s)".into(),
            ));
        }
        Ok(p)
    }
}

/// Searches `r' ∈ {2², …, 2³⁰}` and `s` on a grid of step `1e-3` in `(0, 2)` for
/// the feasible choice with the largest `w₀`.
pub fn solve_parameters(d: usize, beta: f64) -> Result<ParameterChoice> {
    if !(beta > 0.0) {
        return Err(Error::Infeasible(format!(
            "Hölder exponent β = {beta} must be positive"
        )));
    }
    if beta > 1.0 || d == 0 {
        return Err(Error::Config(format!("need d ≥ 1 and β ≤ 1, got d = {d}, β = {beta}")));
    }
    let xi0 = beta / 4.0;
    let steps = (2.0 / S_STEP).round() as usize;
    let mut best: Option<ParameterChoice> = None;
    for e in 2..=MAX_R_CONJ_EXPONENT {
        let r_conj = 2f64.powi(e as i32);
        for k in 1..steps {
            let s = k as f64 * S_STEP;
            // stay clear of the boundary so rounding cannot flip the constraints
            let a = d as f64 / r_conj;
            let margin = feasibility_margin(d, xi0, r_conj, s);
            if margin <= 1e-12 * (1.0 + xi0) * s || (a + s) / 2.0 >= 1.0 - 1e-12 {
                continue;
            }
            let Ok(c) = ParameterChoice::from_exponents(d, beta, r_conj, s) else {
                continue;
            };
            if best.is_none_or(|b| c.w0 > b.w0) {
                best = Some(c);
            }
        }
    }
    best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no feasible (r', s) on the search grid for d = {d}, β = {beta}"
        ))
    })
}

/// `[2^{-α n}·ε₀ for n = 0..=n_max]`.
pub fn dyadic_grid(eps0: f64, alpha: f64, n_max: usize) -> Vec<f64> {
    (0..=n_max).map(|n| eps0 * 2f64.powf(-alpha * n as f64)).collect()
}

/// The lag schedule `ε_{-n} = 2^{-2nθ/(1+ξ₀)}·ε₀`, `n = 0..=n_max`.
pub fn lag_schedule(params: &ParameterChoice, eps0: f64, n_max: usize) -> Vec<f64> {
    dyadic_grid(eps0, params.alpha0, n_max)
}

/// Upper bound on `K(t, λ)` from the supplied decompositions
/// `(‖e‖_{H^{-u}}, ‖a‖_{H^s})` and, optionally, the trivial one `λ = λ + 0`.
pub fn k_functional(pairs: &[(f64, f64)], t: f64, lam_neg_norm: Option<f64>) -> Result<f64> {
    if pairs.is_empty() && lam_neg_norm.is_none() {
        return Err(Error::Config("K-functional needs at least one decomposition".into()));
    }
    let best = pairs
        .iter()
        .map(|(e, a)| e + t * a)
        .fold(lam_neg_norm.unwrap_or(f64::INFINITY), f64::min);
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpNorm {
    pub value: f64,
    /// Geometric bound on the terms outside the window; infinite when the edge
    /// terms are not decaying.
    pub tail: f64,
}

/// `(Σ_n 2^{-pnθ} K(2^n)^p)^{1/p}` over the supplied `(n, K(2^n))` entries.
pub fn discrete_interp_norm(k_values: &[(i32, f64)], theta: f64, p: f64) -> Result<InterpNorm> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Precondition(format!("θ = {theta} outside (0, 1)")));
    }
    if !(p >= 1.0) {
        return Err(Error::Precondition(format!("p = {p} below 1")));
    }
    let mut entries: Vec<(i32, f64)> = k_values.to_vec();
    entries.sort_by_key(|e| e.0);
    let terms: Vec<f64> = entries
        .iter()
        .map(|&(n, k)| (2f64.powf(-(n as f64) * theta) * k).powf(p))
        .collect();
    let value = terms.iter().sum::<f64>().powf(1.0 / p);
    let edge = |a: usize, b: usize| -> f64 {
        if terms.len() < 2 || terms[a] == 0.0 {
            return 0.0;
        }
        let q = terms[a] / terms[b];
        if q < 1.0 {
            terms[a] * q / (1.0 - q)
        } else {
            f64::INFINITY
        }
    };
    let len = terms.len();
    let tail = if len < 2 {
        0.0
    } else {
        edge(0, 1) + edge(len - 1, len - 2)
    };
    Ok(InterpNorm {
        value,
        tail: tail.powf(1.0 / p),
    })
}

/// `c_a·ε₀^{-γ} + c_e·ε₀^{(1+ξ)/2}`.
pub fn bound_rhs(c_a: f64, c_e: f64, eps0: f64, params: &ParameterChoice) -> f64 {
    c_a * eps0.powf(-params.gamma) + c_e * eps0.powf((1.0 + params.xi) / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInterpolation {
    pub norm: f64,
    pub tail: f64,
    pub bound_rhs: f64,
    pub ratio: f64,
    /// Window `[-n_lo, n_hi]` at which the sum was declared converged.
    pub n_lo: i32,
    pub n_hi: i32,
}

/// Discrete interpolation norm of the manufactured decomposition family
/// `‖a_ε‖ = c_a ε^{-γ}`, `‖e_ε‖ = c_e ε^{(1+ξ)/2}` on the lag schedule.
///
/// Every `K(2^n)` is minimized over all scheduled decompositions and the trivial
/// one; the window grows until the geometric tail is below `rel_tol` of the sum.
/// Arithmetic is carried out in base-2 logarithms because the schedule reaches
/// lags far below the smallest double.
pub fn synthetic_interpolation(
    params: &ParameterChoice,
    c_a: f64,
    c_e: f64,
    eps0: f64,
    rel_tol: f64,
) -> Result<SyntheticInterpolation> {
    if !(c_a > 0.0 && c_e > 0.0 && eps0 > 0.0) {
        return Err(Error::Precondition("synthetic constants must be positive".into()));
    }
    let theta = params.theta_star;
    let e_exp = (1.0 + params.xi) / 2.0;
    let log_eps0 = eps0.log2();
    let log2_add = |x: f64, y: f64| -> f64 {
        let (hi, lo) = if x > y { (x, y) } else { (y, x) };
        hi + (1.0 + (lo - hi).exp2()).log2()
    };
    // (log₂‖e_j‖, log₂‖a_j‖) along the schedule
    let pair = |j: usize| -> (f64, f64) {
        let le = log_eps0 - params.alpha0 * j as f64;
        (c_e.log2() + e_exp * le, c_a.log2() - params.gamma * le)
    };
    // trivial decomposition: ‖λ‖_{H^{-u}} ≤ ‖e_{ε₀}‖ + ‖a_{ε₀}‖
    let (e0, a0) = pair(0);
    let log_lam = log2_add(e0, a0);

    let mut n_lo: i32 = 64;
    let mut n_hi: i32 = 64;
    loop {
        let schedule: Vec<(f64, f64)> = (0..=(2 * n_lo as usize + 64)).map(pair).collect();
        // log₂(e_j + t·a_j) is convex in j, so the minimizer moves monotonically
        // towards larger lags as t grows and a local search suffices
        let cost = |j: usize, n: i32| {
            let (le, la) = schedule[j];
            log2_add(le, n as f64 + la)
        };
        let mut j = schedule.len() - 1;
        let mut log_terms = Vec::with_capacity((n_lo + n_hi + 1) as usize);
        for n in -n_lo..=n_hi {
            while j > 0 && cost(j - 1, n) <= cost(j, n) {
                j -= 1;
            }
            while j + 1 < schedule.len() && cost(j + 1, n) < cost(j, n) {
                j += 1;
            }
            let log_k = log_lam.min(cost(j, n));
            log_terms.push(-(n as f64) * theta + log_k);
        }
        let value: f64 = log_terms.iter().map(|v| v.exp2()).sum();
        let edge = |a: usize, b: usize| {
            let q = (log_terms[a] - log_terms[b]).exp2();
            if q < 1.0 {
                log_terms[a].exp2() * q / (1.0 - q)
            } else {
                f64::INFINITY
            }
        };
        let tail = edge(0, 1) + edge(log_terms.len() - 1, log_terms.len() - 2);
        if tail <= rel_tol * value || n_lo.max(n_hi) >= 1 << 20 {
            let rhs = bound_rhs(c_a, c_e, eps0, params);
            return Ok(SyntheticInterpolation {
                norm: value,
                tail,
                bound_rhs: rhs,
                ratio: value / rhs,
                n_lo,
                n_hi,
            });
        }
        n_lo *= 2;
        n_hi *= 2;
    }
}
