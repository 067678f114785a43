//! Symmetric zero-diagonal coupling matrices and their norm certificates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod triplet;

/// Matrices with a smaller fraction of nonzeros are stored as compressed rows.
pub const SPARSE_DENSITY: f64 = 0.10;

const POWER_MAX_ITER: usize = 20_000;
const POWER_RESTARTS: u64 = 3;
const ASCENT_MAX_ITER: usize = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("matrix data has length {len}, expected {expected}")]
    Shape { len: usize, expected: usize },
    #[error("nonzero diagonal entry {value} at {index}")]
    Diagonal { index: usize, value: f64 },
    #[error("asymmetric entries at ({i}, {j}): {a} vs {b}")]
    Asymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("non-finite entry at ({i}, {j})")]
    NonFinite { i: usize, j: usize },
    #[error("index ({i}, {j}) out of range for n = {n}")]
    OutOfRange { i: usize, j: usize, n: usize },
    #[error("power iteration did not converge; best estimate {best}")]
    NotConverged { best: f64 },
    #[error("eigenvector must be nonzero with length n")]
    InvalidVector,
    #[error("eigenvalue {0} must satisfy |lambda| < 1")]
    InvalidEigenvalue(f64),
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    Sparse {
        row_ptr: Vec<usize>,
        cols: Vec<usize>,
        vals: Vec<f64>,
    },
    /// Every off-diagonal entry equals the stored value.
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageKind {
    Dense,
    Sparse,
    Constant,
}

/// Symmetric real matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    n: usize,
    storage: Storage,
    inf_norm: f64,
    alpha_n: f64,
}

/// Nonzero entries of one row.
pub enum Row<'a> {
    Dense {
        values: std::iter::Enumerate<std::slice::Iter<'a, f64>>,
    },
    Sparse {
        cols: std::slice::Iter<'a, usize>,
        vals: std::slice::Iter<'a, f64>,
    },
    Constant {
        next: usize,
        skip: usize,
        n: usize,
        value: f64,
    },
}

impl Iterator for Row<'_> {
    type Item = (usize, f64);

    #[inline]
    fn next(&mut self) -> Option<(usize, f64)> {
        match self {
            Row::Dense { values } => values.find(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)),
            Row::Sparse { cols, vals } => Some((*cols.next()?, *vals.next()?)),
            Row::Constant {
                next,
                skip,
                n,
                value,
            } => {
                if *next == *skip {
                    *next += 1;
                }
                if *next >= *n {
                    return None;
                }
                let j = *next;
                *next += 1;
                Some((j, *value))
            }
        }
    }
}

impl CouplingMatrix {
    pub fn zeros(n: usize) -> Self {
        Self::constant(n, 0.0)
    }

    /// `value * (J - I)`, the Curie–Weiss shape.
    pub fn constant(n: usize, value: f64) -> Self {
        let off = n.saturating_sub(1) as f64;
        Self {
            n,
            storage: Storage::Constant(value),
            inf_norm: value.abs() * off,
            alpha_n: value * value * off,
        }
    }

    /// Row-major dense input; storage is chosen by fill density.
    pub fn from_dense(n: usize, data: Vec<f64>) -> Result<Self, CouplingError> {
        if data.len() != n * n {
            return Err(CouplingError::Shape {
                len: data.len(),
                expected: n * n,
            });
        }
        let mut nnz = 0usize;
        for i in 0..n {
            let d = data[i * n + i];
            if d != 0.0 {
                return Err(CouplingError::Diagonal { index: i, value: d });
            }
            for j in 0..n {
                let a = data[i * n + j];
                if !a.is_finite() {
                    return Err(CouplingError::NonFinite { i, j });
                }
                if j > i {
                    let b = data[j * n + i];
                    if a != b {
                        return Err(CouplingError::Asymmetric { i, j, a, b });
                    }
                }
                if a != 0.0 {
                    nnz += 1;
                }
            }
        }
        let storage = if (nnz as f64) < SPARSE_DENSITY * (n * n) as f64 {
            let mut row_ptr = Vec::with_capacity(n + 1);
            let mut cols = Vec::with_capacity(nnz);
            let mut vals = Vec::with_capacity(nnz);
            row_ptr.push(0);
            for i in 0..n {
                for j in 0..n {
                    let a = data[i * n + j];
                    if a != 0.0 {
                        cols.push(j);
                        vals.push(a);
                    }
                }
                row_ptr.push(cols.len());
            }
            Storage::Sparse {
                row_ptr,
                cols,
                vals,
            }
        } else {
            Storage::Dense(data)
        };
        Ok(Self::with_storage(n, storage))
    }

    /// Build from `(i, j, value)` entries in either triangle; each pair is mirrored.
    ///
    /// Repeated entries must agree. A complete off-diagonal pattern with a single
    /// common value is stored in constant form.
    pub fn from_triplets<I>(n: usize, entries: I) -> Result<Self, CouplingError>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut upper: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in entries {
            if i >= n || j >= n {
                return Err(CouplingError::OutOfRange { i, j, n });
            }
            if !v.is_finite() {
                return Err(CouplingError::NonFinite { i, j });
            }
            if i == j {
                if v != 0.0 {
                    return Err(CouplingError::Diagonal { index: i, value: v });
                }
                continue;
            }
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            upper.push((a, b, v));
        }
        upper.sort_by_key(|x| (x.0, x.1));
        let mut dedup: Vec<(usize, usize, f64)> = Vec::with_capacity(upper.len());
        for e in upper {
            if let Some(last) = dedup.last() {
                if last.0 == e.0 && last.1 == e.1 {
                    if last.2 != e.2 {
                        return Err(CouplingError::Asymmetric {
                            i: e.0,
                            j: e.1,
                            a: last.2,
                            b: e.2,
                        });
                    }
                    continue;
                }
            }
            dedup.push(e);
        }
        dedup.retain(|e| e.2 != 0.0);
        let pairs = n * n.saturating_sub(1) / 2;
        if pairs > 0 && dedup.len() == pairs && dedup.iter().all(|e| e.2 == dedup[0].2) {
            return Ok(Self::constant(n, dedup[0].2));
        }
        if dedup.is_empty() {
            return Ok(Self::zeros(n));
        }
        let nnz = 2 * dedup.len();
        if (nnz as f64) < SPARSE_DENSITY * (n * n) as f64 {
            let mut counts = vec![0usize; n];
            for &(i, j, _) in &dedup {
                counts[i] += 1;
                counts[j] += 1;
            }
            let mut row_ptr = vec![0usize; n + 1];
            for i in 0..n {
                row_ptr[i + 1] = row_ptr[i] + counts[i];
            }
            let mut fill = row_ptr.clone();
            let mut cols = vec![0usize; nnz];
            let mut vals = vec![0.0; nnz];
            for &(i, j, v) in &dedup {
                cols[fill[i]] = j;
                vals[fill[i]] = v;
                fill[i] += 1;
                cols[fill[j]] = i;
                vals[fill[j]] = v;
                fill[j] += 1;
            }
            for i in 0..n {
                let (s, e) = (row_ptr[i], row_ptr[i + 1]);
                let mut row: Vec<(usize, f64)> = cols[s..e]
                    .iter()
                    .cloned()
                    .zip(vals[s..e].iter().cloned())
                    .collect();
                row.sort_by_key(|x| x.0);
                for (k, (c, v)) in row.into_iter().enumerate() {
                    cols[s + k] = c;
                    vals[s + k] = v;
                }
            }
            Ok(Self::with_storage(
                n,
                Storage::Sparse {
                    row_ptr,
                    cols,
                    vals,
                },
            ))
        } else {
            let mut data = vec![0.0; n * n];
            for &(i, j, v) in &dedup {
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
            Ok(Self::with_storage(n, Storage::Dense(data)))
        }
    }

    fn with_storage(n: usize, storage: Storage) -> Self {
        let mut m = Self {
            n,
            storage,
            inf_norm: 0.0,
            alpha_n: 0.0,
        };
        let mut inf: f64 = 0.0;
        let mut alpha: f64 = 0.0;
        for i in 0..n {
            let (mut abs, mut sq) = (0.0, 0.0);
            for (_, v) in m.row(i) {
                abs += v.abs();
                sq += v * v;
            }
            inf = inf.max(abs);
            alpha = alpha.max(sq);
        }
        m.inf_norm = inf;
        m.alpha_n = alpha;
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn storage_kind(&self) -> StorageKind {
        match self.storage {
            Storage::Dense(_) => StorageKind::Dense,
            Storage::Sparse { .. } => StorageKind::Sparse,
            Storage::Constant(_) => StorageKind::Constant,
        }
    }

    /// The common off-diagonal value for constant storage.
    pub fn constant_value(&self) -> Option<f64> {
        match self.storage {
            Storage::Constant(v) => Some(v),
            _ => None,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(d) => d[i * self.n + j],
            Storage::Sparse {
                row_ptr,
                cols,
                vals,
            } => {
                let (s, e) = (row_ptr[i], row_ptr[i + 1]);
                match cols[s..e].binary_search(&j) {
                    Ok(k) => vals[s + k],
                    Err(_) => 0.0,
                }
            }
            Storage::Constant(v) => {
                if i == j {
                    0.0
                } else {
                    *v
                }
            }
        }
    }

    /// Nonzero entries `(j, A(i, j))` of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> Row<'_> {
        match &self.storage {
            Storage::Dense(d) => Row::Dense {
                values: d[i * self.n..(i + 1) * self.n].iter().enumerate(),
            },
            Storage::Sparse {
                row_ptr,
                cols,
                vals,
            } => {
                let (s, e) = (row_ptr[i], row_ptr[i + 1]);
                Row::Sparse {
                    cols: cols[s..e].iter(),
                    vals: vals[s..e].iter(),
                }
            }
            Storage::Constant(v) => Row::Constant {
                next: 0,
                skip: i,
                n: if *v == 0.0 { 0 } else { self.n },
                value: *v,
            },
        }
    }

    /// Number of stored nonzeros (both triangles).
    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Dense(d) => d.iter().filter(|v| **v != 0.0).count(),
            Storage::Sparse { vals, .. } => vals.len(),
            Storage::Constant(v) => {
                if *v == 0.0 {
                    0
                } else {
                    self.n * (self.n - 1)
                }
            }
        }
    }

    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        match &self.storage {
            Storage::Dense(d) => {
                for (o, row) in out.iter_mut().zip(d.chunks_exact(self.n)) {
                    *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            Storage::Sparse {
                row_ptr,
                cols,
                vals,
            } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let (s, e) = (row_ptr[i], row_ptr[i + 1]);
                    *o = cols[s..e]
                        .iter()
                        .zip(&vals[s..e])
                        .map(|(&j, &v)| v * x[j])
                        .sum();
                }
            }
            Storage::Constant(v) => {
                let total: f64 = x.iter().sum();
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = v * (total - xi);
                }
            }
        }
    }

    /// `out += scale * A(i, .)`.
    #[inline]
    pub fn add_scaled_row(&self, i: usize, scale: f64, out: &mut [f64]) {
        match &self.storage {
            Storage::Dense(d) => {
                for (o, a) in out.iter_mut().zip(&d[i * self.n..(i + 1) * self.n]) {
                    *o += scale * a;
                }
            }
            Storage::Sparse {
                row_ptr,
                cols,
                vals,
            } => {
                let (s, e) = (row_ptr[i], row_ptr[i + 1]);
                for (&j, &v) in cols[s..e].iter().zip(&vals[s..e]) {
                    out[j] += scale * v;
                }
            }
            Storage::Constant(v) => {
                let add = scale * v;
                for (j, o) in out.iter_mut().enumerate() {
                    if j != i {
                        *o += add;
                    }
                }
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.matvec_into(x, &mut out);
        out
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        self.inf_norm
    }

    /// Maximum row sum of squares.
    pub fn alpha_n(&self) -> f64 {
        self.alpha_n
    }

    /// Upper-triangle nonzeros `(i, j, value)` with `i < j`, row-major order.
    pub fn upper_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if j > i {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[i * self.n + j] = v;
            }
        }
        d
    }

    /// Power iteration on `A^2` from one seeded start; returns `(lambda^2, v)`.
    fn power_squared(&self, tol: f64, seed: u64) -> (f64, Vec<f64>, bool) {
        let n = self.n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize2(&mut v);
        let mut w = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut prev = f64::NAN;
        for _ in 0..POWER_MAX_ITER {
            self.matvec_into(&v, &mut w);
            let rq = dot(&w, &w);
            if rq == 0.0 {
                return (0.0, v, true);
            }
            if (rq - prev).abs() <= tol * rq {
                return (rq, v, true);
            }
            prev = rq;
            self.matvec_into(&w, &mut y);
            let norm = dot(&y, &y).sqrt();
            if norm == 0.0 {
                return (rq, v, true);
            }
            for (vi, yi) in v.iter_mut().zip(&y) {
                *vi = yi / norm;
            }
        }
        self.matvec_into(&v, &mut w);
        (dot(&w, &w), v, false)
    }

    fn power_best(&self, tol: f64) -> (f64, Vec<f64>, bool) {
        let mut best = (f64::NEG_INFINITY, Vec::new(), true);
        for r in 0..POWER_RESTARTS {
            let (rq, v, ok) = self.power_squared(tol, 0x5eed_0000 + r);
            if rq > best.0 {
                best = (rq, v, ok);
            }
        }
        best
    }

    /// Largest absolute eigenvalue, by power iteration on `A^2` with three restarts.
    pub fn two_norm(&self, tol: f64) -> Result<f64, CouplingError> {
        if self.n == 0 {
            return Ok(0.0);
        }
        let (rq, _, ok) = self.power_best(tol);
        if ok {
            Ok(rq.sqrt())
        } else {
            Err(CouplingError::NotConverged { best: rq.sqrt() })
        }
    }

    /// Lower bound on the 4→4 operator norm by dual-map gradient ascent.
    ///
    /// Starts: the top eigenvectors of `A`, sign patterns of the two heaviest
    /// rows and `restarts` Gaussian vectors. The returned bound also carries the
    /// two-norm estimate and the infinity-norm upper bound.
    pub fn four_norm_lower(&self, restarts: usize) -> FourNormBound {
        let n = self.n;
        let two = self.two_norm(1e-10).unwrap_or_else(|e| match e {
            CouplingError::NotConverged { best } => best,
            _ => 0.0,
        });
        if n == 0 || self.inf_norm == 0.0 {
            return FourNormBound {
                ascent: 0.0,
                lower: 0.0,
                upper: 0.0,
                two_norm: 0.0,
            };
        }
        let mut starts: Vec<Vec<f64>> = Vec::new();
        let (_, v, _) = self.power_best(1e-12);
        let w = self.matvec(&v);
        let lam = dot(&w, &w).sqrt();
        for sign in [1.0, -1.0] {
            let s: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a + sign * lam * b).collect();
            if dot(&s, &s).sqrt() > 1e-8 * lam {
                starts.push(s);
            }
        }
        starts.push(v);
        let mut heavy: Vec<(f64, usize)> = (0..n)
            .map(|i| (self.row(i).map(|(_, a)| a.abs()).sum::<f64>(), i))
            .collect();
        heavy.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in heavy.iter().take(2) {
            let mut s: Vec<f64> = vec![0.0; n];
            for (j, a) in self.row(i) {
                s[j] = a.signum();
            }
            s[i] = 1.0;
            starts.push(s);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x4e0f_11);
        for _ in 0..restarts {
            starts.push((0..n).map(|_| StandardNormal.sample(&mut rng)).collect());
        }
        let ascent = starts
            .into_iter()
            .map(|s| self.ascend_four(s))
            .fold(0.0, f64::max);
        FourNormBound {
            ascent,
            lower: ascent.max(two),
            upper: self.inf_norm,
            two_norm: two,
        }
    }

    fn ascend_four(&self, mut v: Vec<f64>) -> f64 {
        if !normalize4(&mut v) {
            return 0.0;
        }
        let mut y = self.matvec(&v);
        let mut best = norm4(&y);
        let mut g = vec![0.0; self.n];
        for _ in 0..ASCENT_MAX_ITER {
            let cubes: Vec<f64> = y.iter().map(|t| t * t * t).collect();
            self.matvec_into(&cubes, &mut g);
            let mut next: Vec<f64> = g.iter().map(|t| t.cbrt()).collect();
            if !normalize4(&mut next) {
                break;
            }
            let y_next = self.matvec(&next);
            let value = norm4(&y_next);
            if value <= best * (1.0 + 1e-13) {
                best = best.max(value);
                break;
            }
            best = value;
            y = y_next;
        }
        best
    }

    /// Two-, four- and infinity-norm summary against a declared bound `rho`.
    pub fn certify(&self, rho: f64, restarts: usize) -> NormCertificate {
        let four = self.four_norm_lower(restarts);
        let (two, converged) = match self.two_norm(1e-8) {
            Ok(v) => (v, true),
            Err(CouplingError::NotConverged { best }) => (best, false),
            Err(_) => (0.0, false),
        };
        let two = two.max(four.two_norm);
        let mht = if self.inf_norm <= rho {
            MhtStatus::Certified
        } else if four.lower < rho {
            MhtStatus::Heuristic
        } else {
            MhtStatus::Violated
        };
        NormCertificate {
            rho,
            two_norm: two,
            two_norm_converged: converged,
            four_norm_ascent: four.ascent,
            four_norm_lower: four.lower.max(two),
            four_norm_upper: four.upper,
            inf_norm: self.inf_norm,
            alpha_n: self.alpha_n,
            wht: two <= rho,
            mht,
            sht: self.inf_norm <= rho,
        }
    }
}

/// Interval for the 4→4 norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourNormBound {
    /// Best value found by the ascent itself.
    pub ascent: f64,
    /// `max(two_norm, ascent)`.
    pub lower: f64,
    /// Infinity norm, a sound upper bound for symmetric matrices.
    pub upper: f64,
    pub two_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MhtStatus {
    /// The sound upper bound is within `rho`.
    Certified,
    /// Only the lower bound is below `rho`.
    Heuristic,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormCertificate {
    pub rho: f64,
    pub two_norm: f64,
    pub two_norm_converged: bool,
    pub four_norm_ascent: f64,
    pub four_norm_lower: f64,
    pub four_norm_upper: f64,
    pub inf_norm: f64,
    pub alpha_n: f64,
    pub wht: bool,
    pub mht: MhtStatus,
    pub sht: bool,
}

/// Approximate eigenpair `(q, lambda)` with its exact residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub q: Vec<f64>,
    pub lambda: f64,
    pub epsilon: Vec<f64>,
    pub epsilon_norm: f64,
    pub q_inf: f64,
}

impl EigenPair {
    /// Normalises `q` and records `A q - lambda q`.
    pub fn new(a: &CouplingMatrix, mut q: Vec<f64>, lambda: f64) -> Result<Self, CouplingError> {
        if q.len() != a.n() || q.iter().any(|x| !x.is_finite()) {
            return Err(CouplingError::InvalidVector);
        }
        if !(lambda.abs() < 1.0) {
            return Err(CouplingError::InvalidEigenvalue(lambda));
        }
        let norm = dot(&q, &q).sqrt();
        if norm == 0.0 {
            return Err(CouplingError::InvalidVector);
        }
        if (norm - 1.0).abs() > 1e-15 {
            q.iter_mut().for_each(|x| *x /= norm);
        }
        let aq = a.matvec(&q);
        let epsilon: Vec<f64> = aq.iter().zip(&q).map(|(x, y)| x - lambda * y).collect();
        let epsilon_norm = dot(&epsilon, &epsilon).sqrt();
        let q_inf = q.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Ok(Self {
            q,
            lambda,
            epsilon,
            epsilon_norm,
            q_inf,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize2(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn norm4(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * v.iter().map(|x| (x / m).powi(4)).sum::<f64>().powf(0.25)
}

fn normalize4(v: &mut [f64]) -> bool {
    let n = norm4(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}
