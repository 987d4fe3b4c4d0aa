//! Euler–Maruyama simulation of the interacting particle system.
//!
//! All particles are advanced simultaneously from a frozen snapshot of the
//! empirical measure, with coefficients evaluated at the left endpoint:
//!
//! ```text
//! X_{k+1}^i = X_k^i + b(t_k, X_k^i, μ_k)·dt + σ(t_k, X_k^i, μ_k)·ΔB_k^i + σ̄(t_k, X_k^i, μ_k)·ΔZ_k
//! ```
//!
//! Increments come from counter-addressable streams (see [`crate::rng`]), so the
//! result does not depend on the rayon schedule and any increment can be
//! regenerated later. By default they are also kept in memory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, FamilySpec};
use crate::measures::{write_atoms_csv, EmpiricalMeasure};
use crate::rng::{increment_at, particle_stream, NormalStream, COMMON_STREAM};
use crate::{Error, Result};

const TRAJECTORY_MAGIC: &[u8; 8] = b"MVTRAJ01";

#[derive(Clone, Debug)]
pub struct SimulationPlan {
    pub coeffs: CoefficientSet,
    pub n: usize,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    /// Keep idiosyncratic increments in memory; otherwise they are replayed.
    pub store_increments: bool,
    /// Particle `i` draws from stream `stream_permutation[i]` instead of `i`.
    pub stream_permutation: Option<Vec<usize>>,
}

/// Serializable form of a plan; requires a built-in coefficient family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub family: FamilySpec,
    pub n: usize,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    #[serde(default = "yes")]
    pub store_increments: bool,
    #[serde(default)]
    pub stream_permutation: Option<Vec<usize>>,
}

fn yes() -> bool {
    true
}

impl SimulationPlan {
    pub fn new(coeffs: CoefficientSet, n: usize, x0: Vec<f64>, horizon: f64, dt: f64, seed: u64) -> Self {
        Self {
            coeffs,
            n,
            x0,
            horizon,
            dt,
            seed,
            store_increments: true,
            stream_permutation: None,
        }
    }

    pub fn from_record(rec: &PlanRecord) -> Result<Self> {
        Ok(Self {
            coeffs: CoefficientSet::from_family(&rec.family)?,
            n: rec.n,
            x0: rec.x0.clone(),
            horizon: rec.horizon,
            dt: rec.dt,
            seed: rec.seed,
            store_increments: rec.store_increments,
            stream_permutation: rec.stream_permutation.clone(),
        })
    }

    pub fn record(&self) -> Result<PlanRecord> {
        let family =
            self.coeffs.family().cloned().ok_or_else(|| {
                Error::Config("only plans with a built-in coefficient family can be serialized".into())
            })?;
        Ok(PlanRecord {
            family,
            n: self.n,
            x0: self.x0.clone(),
            horizon: self.horizon,
            dt: self.dt,
            seed: self.seed,
            store_increments: self.store_increments,
            stream_permutation: self.stream_permutation.clone(),
        })
    }

    /// Number of steps; `horizon` must be an integer multiple of `dt`.
    pub fn steps(&self) -> Result<usize> {
        if self.n == 0 {
            return Err(Error::Config("particle count must be at least 1".into()));
        }
        if self.x0.len() != self.coeffs.dim() {
            return Err(Error::Config(format!(
                "x0 has dimension {} but the coefficients have d = {}",
                self.x0.len(),
                self.coeffs.dim()
            )));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("x0 is not finite".into()));
        }
        if !(self.dt > 0.0) || !(self.dt <= self.horizon) || !self.horizon.is_finite() {
            return Err(Error::Config(format!(
                "need 0 < dt <= T, got dt = {}, T = {}",
                self.dt, self.horizon
            )));
        }
        let ratio = self.horizon / self.dt;
        let steps = ratio.round();
        if steps > u32::MAX as f64 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!("T / dt = {ratio} is not an integer step count")));
        }
        if let Some(p) = &self.stream_permutation {
            let mut seen = vec![false; self.n];
            if p.len() != self.n || p.iter().any(|&j| j >= self.n || std::mem::replace(&mut seen[j], true)) {
                return Err(Error::Config("stream_permutation is not a permutation of 0..n".into()));
            }
        }
        Ok(steps as usize)
    }

    fn stream_of(&self, i: usize) -> u64 {
        particle_stream(self.stream_permutation.as_ref().map_or(i, |p| p[i]))
    }
}

#[derive(Clone, Debug)]
enum Increments {
    Stored(Vec<f64>),
    Replay,
}

/// Full particle paths plus the noise that produced them. Immutable.
#[derive(Clone, Debug)]
pub struct Trajectory {
    plan: SimulationPlan,
    steps: usize,
    n: usize,
    d: usize,
    m: usize,
    positions: Vec<f64>,
    z_path: Vec<f64>,
    dz: Vec<f64>,
    db: Increments,
}

/// Adds the diffusion terms to `x` (which already holds the drift update):
/// `x += σ·ΔB` then `x += σ̄·ΔZ`, accumulated in a fixed order.
#[inline]
pub(crate) fn apply_diffusion(x: &mut [f64], sigma: &[f64], db: &[f64], sigma_bar: &[f64], dz: &[f64]) {
    let d = x.len();
    let m = dz.len();
    for a in 0..d {
        let mut s = 0.0;
        for j in 0..d {
            s += sigma[a * d + j] * db[j];
        }
        let mut c = 0.0;
        for j in 0..m {
            c += sigma_bar[a * m + j] * dz[j];
        }
        x[a] = (x[a] + s) + c;
    }
}

struct Scratch {
    drift: Vec<f64>,
    sigma: Vec<f64>,
    sigma_bar: Vec<f64>,
    db: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, m: usize) -> Self {
        Self {
            drift: vec![0.0; d],
            sigma: vec![0.0; d * d],
            sigma_bar: vec![0.0; d * m],
            db: vec![0.0; d],
        }
    }
}

pub fn simulate(plan: &SimulationPlan) -> Result<Trajectory> {
    let steps = plan.steps()?;
    let (n, d, m) = (plan.n, plan.coeffs.dim(), plan.coeffs.noise_dim());
    let dt = plan.dt;
    let sqrt_dt = dt.sqrt();
    let model = plan.coeffs.model();

    let stride = n * d;
    let mut positions = vec![0.0; (steps + 1) * stride];
    for i in 0..n {
        positions[i * d..(i + 1) * d].copy_from_slice(&plan.x0);
    }
    let mut z_path = vec![0.0; (steps + 1) * m];
    let mut dz = vec![0.0; steps * m];
    let mut db = if plan.store_increments {
        vec![0.0; steps * stride]
    } else {
        Vec::new()
    };

    let mut common = NormalStream::new(plan.seed, COMMON_STREAM, m);
    let mut streams: Vec<NormalStream> = (0..n)
        .map(|i| NormalStream::new(plan.seed, plan.stream_of(i), d))
        .collect();

    for k in 0..steps {
        let t = k as f64 * dt;
        let dz_k = &mut dz[k * m..(k + 1) * m];
        common.fill_step(sqrt_dt, dz_k);
        let dz_k = &dz[k * m..(k + 1) * m];
        for j in 0..m {
            z_path[(k + 1) * m + j] = z_path[k * m + j] + dz_k[j];
        }

        let (done, rest) = positions.split_at_mut((k + 1) * stride);
        let current = &done[k * stride..];
        let next = &mut rest[..stride];
        let mu = EmpiricalMeasure::new(d, current.to_vec())?;
        let db_k: Option<&mut [f64]> = if plan.store_increments {
            Some(&mut db[k * stride..(k + 1) * stride])
        } else {
            None
        };

        let step_particle = |scratch: &mut Scratch,
                             i: usize,
                             x_next: &mut [f64],
                             stream: &mut NormalStream,
                             db_out: Option<&mut [f64]>| {
            let x = &current[i * d..(i + 1) * d];
            stream.fill_step(sqrt_dt, &mut scratch.db);
            if let Some(out) = db_out {
                out.copy_from_slice(&scratch.db);
            }
            model.drift(t, x, &mu, &mut scratch.drift);
            model.sigma(t, x, &mu, &mut scratch.sigma);
            model.sigma_bar(t, x, &mu, &mut scratch.sigma_bar);
            for a in 0..d {
                x_next[a] = x[a] + scratch.drift[a] * dt;
            }
            apply_diffusion(x_next, &scratch.sigma, &scratch.db, &scratch.sigma_bar, dz_k);
        };

        match db_k {
            Some(db_k) => next
                .par_chunks_mut(d)
                .zip(streams.par_iter_mut())
                .zip(db_k.par_chunks_mut(d))
                .enumerate()
                .for_each_init(
                    || Scratch::new(d, m),
                    |scratch, (i, ((x_next, stream), db_out))| step_particle(scratch, i, x_next, stream, Some(db_out)),
                ),
            None => next
                .par_chunks_mut(d)
                .zip(streams.par_iter_mut())
                .enumerate()
                .for_each_init(
                    || Scratch::new(d, m),
                    |scratch, (i, (x_next, stream))| step_particle(scratch, i, x_next, stream, None),
                ),
        }

        if let Some(bad) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: k + 1,
                particle: bad / d,
            });
        }
    }

    Ok(Trajectory {
        plan: plan.clone(),
        steps,
        n,
        d,
        m,
        positions,
        z_path,
        dz,
        db: if plan.store_increments {
            Increments::Stored(db)
        } else {
            Increments::Replay
        },
    })
}

impl Trajectory {
    pub fn plan(&self) -> &SimulationPlan {
        &self.plan
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    pub fn dt(&self) -> f64 {
        self.plan.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.plan.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Grid index of `t`, allowing a relative mismatch of `1e-9·dt`.
    pub fn step_of(&self, t: f64) -> Option<usize> {
        let r = t / self.plan.dt;
        let k = r.round();
        if (r - k).abs() <= 1e-9 * r.abs().max(1.0) && k >= 0.0 && k <= self.steps as f64 {
            Some(k as usize)
        } else {
            None
        }
    }

    /// Positions at step `k`, flat `[n][d]`.
    pub fn positions_at(&self, k: usize) -> &[f64] {
        let stride = self.n * self.d;
        &self.positions[k * stride..(k + 1) * stride]
    }

    pub fn position(&self, k: usize, i: usize) -> &[f64] {
        let base = (k * self.n + i) * self.d;
        &self.positions[base..base + self.d]
    }

    pub fn all_positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn marginal(&self, k: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::new(self.d, self.positions_at(k).to_vec())
            .expect("trajectory positions are finite and non-empty")
    }

    pub fn z_at(&self, k: usize) -> &[f64] {
        &self.z_path[k * self.m..(k + 1) * self.m]
    }

    pub fn z_path(&self) -> &[f64] {
        &self.z_path
    }

    pub fn dz_at(&self, k: usize) -> &[f64] {
        &self.dz[k * self.m..(k + 1) * self.m]
    }

    pub fn has_stored_increments(&self) -> bool {
        matches!(self.db, Increments::Stored(_))
    }

    /// Idiosyncratic increment `ΔB_k^i`, from memory or replayed from its counter.
    pub fn db_into(&self, k: usize, i: usize, out: &mut [f64]) {
        match &self.db {
            Increments::Stored(v) => {
                let base = (k * self.n + i) * self.d;
                out.copy_from_slice(&v[base..base + self.d]);
            }
            Increments::Replay => increment_at(
                self.plan.seed,
                self.plan.stream_of(i),
                self.d,
                k,
                self.plan.dt.sqrt(),
                out,
            ),
        }
    }

    /// Increments `ΔB_k^i` for `k` in `from..to`, flat `[k][d]`.
    pub fn db_window(&self, i: usize, from: usize, to: usize) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; (to - from) * d];
        match &self.db {
            Increments::Stored(_) => {
                for (j, k) in (from..to).enumerate() {
                    self.db_into(k, i, &mut out[j * d..(j + 1) * d]);
                }
            }
            Increments::Replay => {
                let mut s = NormalStream::new(self.plan.seed, self.plan.stream_of(i), d);
                s.seek(from);
                for chunk in out.chunks_exact_mut(d) {
                    s.fill_step(self.plan.dt.sqrt(), chunk);
                }
            }
        }
        out
    }

    /// Copy of the trajectory with increments kept in memory.
    pub fn with_stored_increments(&self) -> Trajectory {
        if self.has_stored_increments() {
            return self.clone();
        }
        let mut db = vec![0.0; self.steps * self.n * self.d];
        for i in 0..self.n {
            let w = self.db_window(i, 0, self.steps);
            for k in 0..self.steps {
                let base = (k * self.n + i) * self.d;
                db[base..base + self.d].copy_from_slice(&w[k * self.d..(k + 1) * self.d]);
            }
        }
        Trajectory {
            db: Increments::Stored(db),
            ..self.clone()
        }
    }

    pub fn write_snapshot_csv<W: Write>(&self, k: usize, w: W) -> Result<()> {
        if k > self.steps {
            return Err(Error::Config(format!("step {k} beyond horizon")));
        }
        write_atoms_csv(w, self.d, self.positions_at(k))
    }
}

/// `(1/n) Σ_i sup_k |X_k^i|^q`.
pub fn moment_sup(traj: &Trajectory, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(Error::Precondition(format!("moment order {q} < 1")));
    }
    let mut total = 0.0;
    for i in 0..traj.n {
        let mut sup = 0.0f64;
        for k in 0..=traj.steps {
            let r = traj.position(k, i).iter().map(|v| v * v).sum::<f64>().sqrt();
            sup = sup.max(r);
        }
        total += sup.powf(q);
    }
    let v = total / traj.n as f64;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation("moment is not finite".into()))
    }
}

/// Fraction of particles whose path reaches `sup_k |X_k^i|_∞ ≥ K`.
pub fn exit_fraction(traj: &Trajectory, half_width: f64) -> Result<f64> {
    if !(half_width > 0.0) {
        return Err(Error::Precondition("box half-width must be positive".into()));
    }
    let exited = (0..traj.n)
        .filter(|&i| (0..=traj.steps).any(|k| traj.position(k, i).iter().any(|v| v.abs() >= half_width)))
        .count();
    Ok(exited as f64 / traj.n as f64)
}

#[derive(Serialize, Deserialize)]
struct TrajectoryHeader {
    format: String,
    version: u32,
    plan: PlanRecord,
    steps: usize,
    n: usize,
    d: usize,
    m: usize,
    /// Body sections in order; each is little-endian f64.
    sections: Vec<String>,
}

fn write_f64s<W: Write>(w: &mut W, data: &[f64]) -> std::io::Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, len: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len);
    let mut b = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

impl Trajectory {
    /// Binary container: magic, u64 header length, plan JSON header, then the
    /// positions in `[step][particle][axis]` order followed by the noise sections.
    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let mut sections = vec!["positions".to_string(), "z_path".into(), "dz".into()];
        if self.has_stored_increments() {
            sections.push("db".into());
        }
        let header = TrajectoryHeader {
            format: "mvlab-trajectory".into(),
            version: 1,
            plan: self.plan.record()?,
            steps: self.steps,
            n: self.n,
            d: self.d,
            m: self.m,
            sections,
        };
        let json = serde_json::to_vec(&header)?;
        let mut w = BufWriter::new(w);
        w.write_all(TRAJECTORY_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        write_f64s(&mut w, &self.positions)?;
        write_f64s(&mut w, &self.z_path)?;
        write_f64s(&mut w, &self.dz)?;
        if let Increments::Stored(db) = &self.db {
            write_f64s(&mut w, db)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TRAJECTORY_MAGIC {
            return Err(Error::Config("not a trajectory container".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let h: TrajectoryHeader = serde_json::from_slice(&json)?;
        let plan = SimulationPlan::from_record(&h.plan)?;
        if plan.steps()? != h.steps || plan.n != h.n || plan.coeffs.dim() != h.d || plan.coeffs.noise_dim() != h.m {
            return Err(Error::Config("trajectory header disagrees with its plan".into()));
        }
        let stride = h.n * h.d;
        let positions = read_f64s(&mut r, (h.steps + 1) * stride)?;
        let z_path = read_f64s(&mut r, (h.steps + 1) * h.m)?;
        let dz = read_f64s(&mut r, h.steps * h.m)?;
        let db = if h.sections.iter().any(|s| s == "db") {
            Increments::Stored(read_f64s(&mut r, h.steps * stride)?)
        } else {
            Increments::Replay
        };
        Ok(Trajectory {
            plan,
            steps: h.steps,
            n: h.n,
            d: h.d,
            m: h.m,
            positions,
            z_path,
            dz,
            db,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_binary(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_binary(File::open(path)?)
    }
}
