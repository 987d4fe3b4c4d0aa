//! Uniform-weight atomic measures and their signed differences.
//!
//! Distances use the Euclidean ground metric. `w1_distance` is exact: sorted
//! samples in one dimension, a dense Hungarian solve otherwise (capped at
//! [`ASSIGNMENT_CAP`] atoms). `coupling_bound` is the cost of the index pairing
//! and is always an upper bound on W1.

use std::io::{Read, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest atom count accepted by the exact assignment solver.
pub const ASSIGNMENT_CAP: usize = 512;

#[derive(Debug, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    d: usize,
    atoms: Vec<f64>,
    #[serde(skip)]
    mean: OnceLock<Vec<f64>>,
}

impl Clone for EmpiricalMeasure {
    fn clone(&self) -> Self {
        Self {
            d: self.d,
            atoms: self.atoms.clone(),
            mean: self.mean.clone(),
        }
    }
}

impl PartialEq for EmpiricalMeasure {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.atoms == other.atoms
    }
}

impl EmpiricalMeasure {
    /// Builds a measure from a flat row-major `[n][d]` buffer.
    pub fn new(d: usize, atoms: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("measure dimension must be positive".into()));
        }
        if atoms.is_empty() || !atoms.len().is_multiple_of(d) {
            return Err(Error::Config(format!(
                "atom buffer of length {} does not hold a non-empty [n][{d}] array",
                atoms.len()
            )));
        }
        if let Some(bad) = atoms.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("atom {} is not finite", bad / d)));
        }
        Ok(Self {
            d,
            atoms,
            mean: OnceLock::new(),
        })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let d = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::Config("points have mixed dimensions".into()));
        }
        Self::new(d, points.concat())
    }

    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::new(x.len(), x.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.atoms.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.d..(i + 1) * self.d]
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.atoms.chunks_exact(self.d)
    }

    /// Barycenter, computed once in index order.
    pub fn mean(&self) -> &[f64] {
        self.mean.get_or_init(|| {
            let mut m = vec![0.0; self.d];
            for a in self.iter() {
                for (mk, ak) in m.iter_mut().zip(a) {
                    *mk += ak;
                }
            }
            let n = self.len() as f64;
            m.iter_mut().for_each(|v| *v /= n);
            m
        })
    }

    /// `(1/n) Σ φ(atom_i)`.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, phi: F) -> Result<f64> {
        let mut acc = 0.0;
        for (i, a) in self.iter().enumerate() {
            let v = phi(a);
            if !v.is_finite() {
                return Err(Error::Evaluation(format!("test function is not finite at atom {i}")));
            }
            acc += v;
        }
        Ok(acc / self.len() as f64)
    }

    pub fn translated(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.d {
            return Err(Error::Config("translation has wrong dimension".into()));
        }
        let atoms = self
            .atoms
            .chunks_exact(self.d)
            .flat_map(|a| a.iter().zip(v).map(|(x, dx)| x + dx))
            .collect();
        Self::new(self.d, atoms)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_atoms_csv(w, self.d, &self.atoms)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let (d, atoms) = read_atoms_csv(r)?;
        Self::new(d, atoms)
    }
}

/// Signed measure `(1/n) Σ (δ_{pos_i} − δ_{neg_i})` with index-paired atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignedAtomicMeasure {
    d: usize,
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl SignedAtomicMeasure {
    pub fn new(d: usize, pos: Vec<f64>, neg: Vec<f64>) -> Result<Self> {
        if pos.len() != neg.len() {
            return Err(Error::Config(
                "signed measure needs equal positive and negative atom counts".into(),
            ));
        }
        // validates shape and finiteness of both sides
        EmpiricalMeasure::new(d, pos.clone())?;
        EmpiricalMeasure::new(d, neg.clone())?;
        Ok(Self { d, pos, neg })
    }

    pub fn difference(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<Self> {
        if mu.dim() != nu.dim() {
            return Err(Error::Config("dimension mismatch".into()));
        }
        Self::new(mu.dim(), mu.atoms.clone(), nu.atoms.clone())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.pos.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn positive(&self) -> &[f64] {
        &self.pos
    }

    pub fn negative(&self) -> &[f64] {
        &self.neg
    }

    /// Total signed mass; zero by construction.
    pub fn total_mass(&self) -> f64 {
        0.0
    }

    /// True when every pair cancels exactly.
    pub fn is_zero(&self) -> bool {
        self.pos == self.neg
    }

    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, phi: F) -> Result<f64> {
        let mut acc = 0.0;
        for (i, (p, q)) in self
            .pos
            .chunks_exact(self.d)
            .zip(self.neg.chunks_exact(self.d))
            .enumerate()
        {
            let (a, b) = (phi(p), phi(q));
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::Evaluation(format!(
                    "test function is not finite at atom pair {i}"
                )));
            }
            acc += a - b;
        }
        Ok(acc / self.len() as f64)
    }

    /// Writes `index, sign, x_1..x_d` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["index".to_string(), "sign".to_string()];
        header.extend((1..=self.d).map(|k| format!("x_{k}")));
        wtr.write_record(&header)?;
        for (sign, buf) in [("+1", &self.pos), ("-1", &self.neg)] {
            for (i, a) in buf.chunks_exact(self.d).enumerate() {
                let mut rec = vec![i.to_string(), sign.to_string()];
                rec.extend(a.iter().map(|v| format!("{v:e}")));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W1Method {
    Exact1d,
    Assignment,
    Auto,
}

pub fn w1_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, method: W1Method) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::Config("W1 between measures of different dimension".into()));
    }
    let method = match method {
        W1Method::Auto if mu.dim() == 1 => W1Method::Exact1d,
        W1Method::Auto => W1Method::Assignment,
        m => m,
    };
    match method {
        W1Method::Exact1d => {
            if mu.dim() != 1 {
                return Err(Error::Config("exact1d requires d = 1".into()));
            }
            Ok(w1_sorted(mu.atoms(), nu.atoms()))
        }
        W1Method::Assignment => {
            if mu.len() != nu.len() {
                return Err(Error::Config("assignment W1 requires equal atom counts".into()));
            }
            let n = mu.len();
            if n > ASSIGNMENT_CAP {
                return Err(Error::Capacity { n, cap: ASSIGNMENT_CAP });
            }
            let cost: Vec<f64> = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| euclid(mu.atom(i), nu.atom(j)))
                .collect();
            let assignment = solve_assignment(n, &cost);
            let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
            Ok(total / n as f64)
        }
        W1Method::Auto => unreachable!(),
    }
}

/// Cost of the index pairing: `(1/n) Σ |x_i − y_i|`.
pub fn coupling_bound(paired_mu: &EmpiricalMeasure, paired_nu: &EmpiricalMeasure) -> Result<f64> {
    if paired_mu.len() != paired_nu.len() || paired_mu.dim() != paired_nu.dim() {
        return Err(Error::Config(
            "coupling bound needs index-paired clouds of equal size".into(),
        ));
    }
    let s: f64 = paired_mu.iter().zip(paired_nu.iter()).map(|(a, b)| euclid(a, b)).sum();
    Ok(s / paired_mu.len() as f64)
}

#[inline]
pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// W1 between two one-dimensional uniform clouds of possibly different sizes,
/// as the L¹ distance of their quantile functions.
fn w1_sorted(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return s / a.len() as f64;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut level, mut total) = (0.0f64, 0.0f64);
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / na;
        let next_b = (j + 1) as f64 / nb;
        let next = next_a.min(next_b);
        total += (next - level) * (a[i] - b[j]).abs();
        level = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total
}

/// Dense Hungarian method (shortest augmenting paths with potentials).
/// Returns `assignment[row] = column` minimising the total cost.
fn solve_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    // 1-based arrays; column 0 is the virtual source
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

pub(crate) fn write_atoms_csv<W: Write>(w: W, d: usize, atoms: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["index".to_string()];
    header.extend((1..=d).map(|k| format!("x_{k}")));
    wtr.write_record(&header)?;
    for (i, a) in atoms.chunks_exact(d).enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(a.iter().map(|v| format!("{v:e}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

fn read_atoms_csv<R: Read>(r: R) -> Result<(usize, Vec<f64>)> {
    let mut rdr = csv::Reader::from_reader(r);
    let d = rdr.headers()?.len().saturating_sub(1);
    if d == 0 {
        return Err(Error::Config("atom CSV needs columns index, x_1..x_d".into()));
    }
    let mut atoms = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad coordinate `{field}`")))?;
            atoms.push(v);
        }
    }
    Ok((d, atoms))
}
