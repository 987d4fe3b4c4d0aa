//! Bessel potential norms on a periodic box.
//!
//! Functions live on the grid `x_j = −L + j·h`, `h = 2L/N`, per axis. The Bessel
//! potential `J^s f = F⁻¹((1 + |ξ|²)^{s/2} F f)` is applied with the discrete
//! frequencies `ξ_k = π k / L`, and
//!
//! ```text
//! ‖f‖_{H^s_r} = ‖J^s f‖_{L^r} ≈ (Σ_j |J^s f(x_j)|^r h^d)^{1/r}
//! ```
//!
//! With this scaling `s = 0` gives the discrete `L^r` norm exactly. The
//! periodic transform stands in for the whole-space one, so sources must sit well
//! inside the box.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::measures::{EmpiricalMeasure, SignedAtomicMeasure};
use crate::quadrature;
use crate::{Error, Result};

const GRID_MAGIC: &[u8; 8] = b"MVGRID01";

/// Minimum distance, in cells, between deposited atoms and the box boundary.
pub const DEPOSIT_MARGIN_CELLS: f64 = 8.0;

/// Relative imaginary residue tolerated after the inverse transform.
pub const MAX_IMAGINARY_RESIDUE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    /// Box half-width `L`.
    pub half_width: f64,
    /// Points per axis `N`.
    pub points: usize,
}

impl GridSpec {
    pub fn new(d: usize, half_width: f64, points: usize) -> Result<Self> {
        let g = Self { d, half_width, points };
        g.check()?;
        Ok(g)
    }

    pub fn check(&self) -> Result<()> {
        if self.d == 0 || self.d > 3 {
            return Err(Error::Config(format!("grid dimension {} not in 1..=3", self.d)));
        }
        if !(self.half_width > 0.0) || !self.half_width.is_finite() {
            return Err(Error::Config("box half-width must be positive".into()));
        }
        if self.points < 16 || !self.points.is_power_of_two() {
            return Err(Error::Config(format!(
                "points per axis must be a power of two >= 16, got {}",
                self.points
            )));
        }
        Ok(())
    }

    /// Cell width `h = 2L/N`.
    pub fn cell(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell().powi(self.d as i32)
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of node `j` along any axis.
    pub fn node(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.cell()
    }

    /// Angular frequency of FFT bin `j`.
    pub fn frequency(&self, j: usize) -> f64 {
        let n = self.points as i64;
        let k = if (j as i64) < n / 2 { j as i64 } else { j as i64 - n };
        std::f64::consts::PI * k as f64 / self.half_width
    }

    /// Multi-index of the flat row-major index `flat` (axis 0 slowest).
    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for a in (0..self.d).rev() {
            out[a] = flat % self.points;
            flat /= self.points;
        }
    }

    pub fn point(&self, flat: usize, out: &mut [f64]) {
        let mut idx = [0usize; 3];
        self.unravel(flat, &mut idx[..self.d]);
        for a in 0..self.d {
            out[a] = self.node(idx[a]);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSource {
    Function,
    /// Cloud-in-cell deposit of an atomic measure with the given total mass.
    Deposit {
        mass: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GriddedFunction {
    spec: GridSpec,
    values: Vec<f64>,
    source: GridSource,
}

impl GriddedFunction {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.check()?;
        if values.len() != spec.len() {
            return Err(Error::Config(format!(
                "expected {} grid values, got {}",
                spec.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("grid values must be finite".into()));
        }
        Ok(Self {
            spec,
            values,
            source: GridSource::Function,
        })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(spec: GridSpec, f: F) -> Result<Self> {
        spec.check()?;
        let mut x = vec![0.0; spec.d];
        let values = (0..spec.len())
            .map(|j| {
                spec.point(j, &mut x);
                f(&x)
            })
            .collect();
        Self::new(spec, values)
    }

    /// Normal density `g(·; mean, cov)` sampled on the grid.
    pub fn gaussian(spec: GridSpec, mean: &[f64], cov: &[f64]) -> Result<Self> {
        let g = GaussianKernel::new(spec.d, cov)
            .ok_or_else(|| Error::Precondition("covariance is not symmetric positive definite".into()))?;
        Self::from_fn(spec, |x| g.density(x, mean))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> GridSource {
        self.source
    }

    /// `Σ f(x_j) h^d`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_volume()
    }

    pub fn lr_norm(&self, r: f64) -> f64 {
        let s: f64 = self.values.iter().map(|v| v.abs().powf(r)).sum();
        (s * self.spec.cell_volume()).powf(1.0 / r)
    }

    /// Circular shift by whole cells along `axis`.
    pub fn shifted(&self, axis: usize, cells: isize) -> Self {
        let n = self.spec.points;
        let mut out = vec![0.0; self.values.len()];
        let mut idx = [0usize; 3];
        let stride = n.pow((self.spec.d - 1 - axis) as u32);
        for (flat, v) in self.values.iter().enumerate() {
            self.spec.unravel(flat, &mut idx[..self.spec.d]);
            let j = idx[axis];
            let to = (j as isize + cells).rem_euclid(n as isize) as usize;
            out[flat + to * stride - j * stride] = *v;
        }
        Self {
            spec: self.spec,
            values: out,
            source: self.source,
        }
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let header = serde_json::json!({
            "format": "mvlab-grid",
            "version": 1,
            "spec": self.spec,
            "source": self.source,
        });
        let json = serde_json::to_vec(&header)?;
        let mut w = BufWriter::new(w);
        w.write_all(GRID_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            spec: GridSpec,
            source: GridSource,
        }
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(Error::Config("not a grid container".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let h: Header = serde_json::from_slice(&json)?;
        h.spec.check()?;
        let mut values = Vec::with_capacity(h.spec.len());
        let mut b = [0u8; 8];
        for _ in 0..h.spec.len() {
            r.read_exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        let mut g = Self::new(h.spec, values)?;
        g.source = h.source;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_binary(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_binary(File::open(path)?)
    }

    /// Two-column CSV `x,value`; one-dimensional grids only.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        if self.spec.d != 1 {
            return Err(Error::Config("CSV export is only defined for d = 1".into()));
        }
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "value"])?;
        for (j, v) in self.values.iter().enumerate() {
            wtr.write_record([format!("{:e}", self.spec.node(j)), format!("{v:e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Precomputed normal density with a fixed covariance.
#[derive(Clone, Debug)]
pub(crate) struct GaussianKernel {
    d: usize,
    precision: Vec<f64>,
    norm: f64,
    /// Largest standard deviation along any direction.
    pub max_std: f64,
}

impl GaussianKernel {
    pub fn new(d: usize, cov: &[f64]) -> Option<Self> {
        if cov.len() != d * d || cov.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let m = DMatrix::from_row_slice(d, d, cov);
        if (&m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
            return None;
        }
        let chol = m.clone().cholesky()?;
        let det = chol.l().diagonal().iter().map(|v| v * v).product::<f64>();
        if !(det > 0.0) {
            return None;
        }
        let inv = chol.inverse();
        let precision = (0..d * d).map(|k| inv[(k / d, k % d)]).collect();
        let max_eig = SymmetricEigen::new(m).eigenvalues.max();
        Some(Self {
            d,
            precision,
            norm: ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt().recip(),
            max_std: max_eig.sqrt(),
        })
    }

    #[inline]
    pub fn density(&self, x: &[f64], mean: &[f64]) -> f64 {
        let d = self.d;
        let mut q = 0.0;
        for a in 0..d {
            let da = x[a] - mean[a];
            for b in 0..d {
                q += da * self.precision[a * d + b] * (x[b] - mean[b]);
            }
        }
        self.norm * (-0.5 * q).exp()
    }
}

/// Receives `(index, atom, weight)`.
pub type AtomVisitor<'a> = dyn FnMut(usize, &[f64], f64) -> Result<()> + 'a;

/// Atomic measures that can be spread onto a grid.
pub trait Depositable {
    fn dim(&self) -> usize;
    /// Calls `visit(atom, weight)` for every atom, in pairs for signed measures.
    fn for_each_atom(&self, visit: &mut AtomVisitor<'_>) -> Result<()>;
    fn total_mass(&self) -> f64;
}

impl Depositable for EmpiricalMeasure {
    fn dim(&self) -> usize {
        EmpiricalMeasure::dim(self)
    }
    fn for_each_atom(&self, visit: &mut AtomVisitor<'_>) -> Result<()> {
        let w = 1.0 / self.len() as f64;
        for (i, a) in self.iter().enumerate() {
            visit(i, a, w)?;
        }
        Ok(())
    }
    fn total_mass(&self) -> f64 {
        1.0
    }
}

impl Depositable for SignedAtomicMeasure {
    fn dim(&self) -> usize {
        SignedAtomicMeasure::dim(self)
    }
    fn for_each_atom(&self, visit: &mut AtomVisitor<'_>) -> Result<()> {
        let d = self.dim();
        let w = 1.0 / self.len() as f64;
        for (i, (p, q)) in self
            .positive()
            .chunks_exact(d)
            .zip(self.negative().chunks_exact(d))
            .enumerate()
        {
            // coincident pairs cancel exactly
            if p == q {
                continue;
            }
            visit(i, p, w)?;
            visit(i, q, -w)?;
        }
        Ok(())
    }
    fn total_mass(&self) -> f64 {
        0.0
    }
}

/// Cloud-in-cell deposit: each atom's weight, divided by `h^d`, is shared among
/// its `2^d` surrounding nodes with multilinear weights.
pub fn deposit<M: Depositable + ?Sized>(measure: &M, spec: GridSpec) -> Result<GriddedFunction> {
    spec.check()?;
    let d = spec.d;
    if measure.dim() != d {
        return Err(Error::Config("measure and grid dimensions differ".into()));
    }
    let h = spec.cell();
    let n = spec.points;
    let limit = spec.half_width - DEPOSIT_MARGIN_CELLS * h;
    let inv_vol = 1.0 / spec.cell_volume();
    let mut values = vec![0.0; spec.len()];
    measure.for_each_atom(&mut |i, atom, w| {
        if atom.iter().any(|v| !(v.abs() <= limit)) {
            return Err(Error::OutOfBox {
                index: i,
                position: atom.to_vec(),
                limit,
            });
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..d {
            let u = (atom[a] + spec.half_width) / h;
            let j = u.floor();
            base[a] = j as usize;
            frac[a] = u - j;
        }
        for corner in 0..(1usize << d) {
            let mut weight = w * inv_vol;
            let mut flat = 0usize;
            for a in 0..d {
                let up = (corner >> (d - 1 - a)) & 1;
                weight *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
                flat = flat * n + (base[a] + up);
            }
            values[flat] += weight;
        }
        Ok(())
    })?;
    let mut g = GriddedFunction::new(spec, values)?;
    g.source = GridSource::Deposit {
        mass: measure.total_mass(),
    };
    Ok(g)
}

fn fft_nd(spec: &GridSpec, data: &mut [Complex64], inverse: bool) {
    let n = spec.points;
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let total = data.len();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..spec.d {
        let stride = n.pow((spec.d - 1 - axis) as u32);
        let block = stride * n;
        for outer in (0..total).step_by(block) {
            for inner in 0..stride {
                let start = outer + inner;
                for (j, c) in line.iter_mut().enumerate() {
                    *c = data[start + j * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (j, c) in line.iter().enumerate() {
                    data[start + j * stride] = *c;
                }
            }
        }
    }
}

/// Applies the real Fourier multiplier `symbol(ξ)` and returns the real part.
fn apply_multiplier<S: Fn(&[f64]) -> f64>(f: &GriddedFunction, symbol: S) -> Result<Vec<f64>> {
    let spec = f.spec;
    let mut data: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&spec, &mut data, false);
    let mut idx = [0usize; 3];
    let mut xi = [0.0f64; 3];
    let scale = 1.0 / spec.len() as f64;
    for (flat, c) in data.iter_mut().enumerate() {
        spec.unravel(flat, &mut idx[..spec.d]);
        for a in 0..spec.d {
            xi[a] = spec.frequency(idx[a]);
        }
        *c *= symbol(&xi[..spec.d]) * scale;
    }
    fft_nd(&spec, &mut data, true);
    let max_re = data.iter().fold(0.0f64, |m, c| m.max(c.re.abs()));
    let max_im = data.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
    if max_im > MAX_IMAGINARY_RESIDUE * max_re.max(f64::MIN_POSITIVE) && max_im > 1e-300 {
        return Err(Error::Aliasing {
            residue: max_im / max_re.max(f64::MIN_POSITIVE),
        });
    }
    Ok(data.into_iter().map(|c| c.re).collect())
}

/// `J^s f`.
pub fn bessel_potential(f: &GriddedFunction, s: f64) -> Result<GriddedFunction> {
    if s == 0.0 {
        return Ok(GriddedFunction {
            source: GridSource::Function,
            ..f.clone()
        });
    }
    let half = 0.5 * s;
    let values = apply_multiplier(f, |xi| (1.0 + xi.iter().map(|v| v * v).sum::<f64>()).powf(half))?;
    GriddedFunction::new(f.spec, values)
}

/// `‖J^s f‖_{L^r}` on the grid.
pub fn h_norm(f: &GriddedFunction, s: f64, r: f64) -> Result<f64> {
    if !(r > 1.0) || !r.is_finite() {
        return Err(Error::Precondition(format!("integrability r = {r} must lie in (1, ∞)")));
    }
    Ok(bessel_potential(f, s)?.lr_norm(r))
}

/// Spectral partial derivative `∂f/∂x_axis`.
pub fn spectral_derivative(f: &GriddedFunction, axis: usize) -> Result<GriddedFunction> {
    if axis >= f.spec.d {
        return Err(Error::Config("derivative axis out of range".into()));
    }
    // i·ξ applied as a real operator: F⁻¹(iξ F f) = Re part of the complex result
    let spec = f.spec;
    let mut data: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&spec, &mut data, false);
    let mut idx = [0usize; 3];
    let scale = 1.0 / spec.len() as f64;
    for (flat, c) in data.iter_mut().enumerate() {
        spec.unravel(flat, &mut idx[..spec.d]);
        let j = idx[axis];
        // the Nyquist bin has no consistent sign; drop it
        let xi = if j == spec.points / 2 { 0.0 } else { spec.frequency(j) };
        *c *= Complex64::new(0.0, xi * scale);
    }
    fft_nd(&spec, &mut data, true);
    GriddedFunction::new(spec, data.into_iter().map(|c| c.re).collect())
}

/// `((2π)^{-d} ∫ (1+|ξ|²)^s exp(−ξᵀvξ) dξ)^{1/2}`, the `H^s_2` norm of the normal
/// density with covariance `v`, by adaptive quadrature in the eigenbasis of `v`.
pub fn gaussian_h_norm_oracle(v: &[f64], d: usize, s: f64) -> Result<f64> {
    if v.len() != d * d || d == 0 {
        return Err(Error::Precondition("covariance has the wrong shape".into()));
    }
    let m = DMatrix::from_row_slice(d, d, v);
    if (&m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
        return Err(Error::Precondition("covariance is not symmetric".into()));
    }
    let lambdas: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    if lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Precondition("covariance is not positive definite".into()));
    }
    // cutoffs beyond which the integrand is negligible
    let cutoffs: Vec<f64> = lambdas
        .iter()
        .map(|&l| {
            let mut r = (60.0 / l).sqrt();
            while -l * r * r + s.max(0.0) * (1.0 + d as f64 * r * r).ln() > -60.0 {
                r *= 1.25;
            }
            r
        })
        .collect();

    fn nested(level: usize, partial: f64, lambdas: &[f64], cutoffs: &[f64], s: f64) -> Result<f64> {
        let l = lambdas[level];
        quadrature::integrate(
            |eta| {
                let q = partial + eta * eta;
                if level + 1 == lambdas.len() {
                    (1.0 + q).powf(s) * (-l * eta * eta).exp()
                } else {
                    (-l * eta * eta).exp() * nested(level + 1, q, lambdas, cutoffs, s).unwrap_or(f64::NAN)
                }
            },
            0.0,
            cutoffs[level],
            0.0,
            1e-12,
        )
    }
    // even integrand: integrate over the positive orthant and multiply by 2^d
    let half = nested(0, 0.0, &lambdas, &cutoffs, s)?;
    let total = half * 2f64.powi(d as i32) / (2.0 * std::f64::consts::PI).powi(d as i32);
    Ok(total.sqrt())
}
