//! Random-scan Glauber dynamics and exact enumeration for small models.
//!
//! One step picks a uniform site `I` and redraws `sigma_I` from its conditional
//! law, the tilt of `mu_I` at `m_I + c_I`, where `m = A sigma` is the vector of
//! local fields. `m` is updated incrementally and re-validated against a full
//! recompute every `VALIDATE_EVERY` sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::ModelInstance;

/// Sweeps between full recomputations of the local fields.
pub const VALIDATE_EVERY: u64 = 1 << 10;

/// Largest joint support `enumerate_exact` accepts.
pub const MAX_STATES: usize = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("state has length {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("value {value} at site {site} outside the support of its base measure")]
    OutsideSupport { site: usize, value: f64 },
    #[error("site {0} has a continuous base measure; exact enumeration needs discrete ones")]
    NotDiscrete(usize),
    #[error("joint support too large for enumeration")]
    TooLarge,
}

/// Local fields `m = A sigma`.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalFields {
    Explicit(Vec<f64>),
    /// Constant couplings: `m_i = value * (total - sigma_i)`.
    Constant {
        value: f64,
        total: f64,
    },
}

/// State of one chain: spins, local fields and its own random stream.
#[derive(Debug, Clone)]
pub struct ChainState {
    sigma: Vec<f64>,
    fields: LocalFields,
    steps: u64,
    sweeps: u64,
    max_drift: f64,
    stream: u64,
    rng: ChaCha8Rng,
}

/// Per-chain generator: stream `chain` of the ChaCha8 sequence keyed by `master_seed`.
pub fn chain_rng(master_seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(chain);
    rng
}

/// Starting configuration of a chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Independent draws `sigma_i ~ mu_{i, tilt_i}`.
    Product(Vec<f64>),
    Fixed(Vec<f64>),
}

impl ChainState {
    pub fn new(
        model: &ModelInstance,
        init: &Init,
        master_seed: u64,
        stream: u64,
    ) -> Result<Self, SamplerError> {
        let n = model.n();
        let mut rng = chain_rng(master_seed, stream);
        let sigma = match init {
            Init::Fixed(s) => {
                if s.len() != n {
                    return Err(SamplerError::Dimension {
                        got: s.len(),
                        expected: n,
                    });
                }
                if let Some(site) = (0..n).find(|&i| !model.measure(i).in_support(s[i])) {
                    return Err(SamplerError::OutsideSupport {
                        site,
                        value: s[site],
                    });
                }
                s.clone()
            }
            Init::Product(tilts) => {
                if tilts.len() != n {
                    return Err(SamplerError::Dimension {
                        got: tilts.len(),
                        expected: n,
                    });
                }
                tilts
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| model.measure(i).draw(t, &mut rng))
                    .collect()
            }
        };
        let fields = compute_fields(model, &sigma);
        Ok(Self {
            sigma,
            fields,
            steps: 0,
            sweeps: 0,
            max_drift: 0.0,
            stream,
            rng,
        })
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn sweep_count(&self) -> u64 {
        self.sweeps
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Largest discrepancy seen between incremental and recomputed fields.
    pub fn max_drift(&self) -> f64 {
        self.max_drift
    }

    #[inline]
    pub fn local_field(&self, i: usize) -> f64 {
        match &self.fields {
            LocalFields::Explicit(m) => m[i],
            LocalFields::Constant { value, total } => value * (total - self.sigma[i]),
        }
    }

    pub fn local_fields(&self) -> Vec<f64> {
        (0..self.sigma.len()).map(|i| self.local_field(i)).collect()
    }

    /// One Glauber update at a uniformly chosen site.
    #[inline]
    pub fn step(&mut self, model: &ModelInstance) {
        let n = self.sigma.len();
        let i = self.rng.random_range(0..n);
        let theta = self.local_field(i) + model.field()[i];
        let next = model.measure(i).draw(theta, &mut self.rng);
        let delta = next - self.sigma[i];
        if delta != 0.0 {
            match &mut self.fields {
                LocalFields::Explicit(m) => model.coupling().add_scaled_row(i, delta, m),
                LocalFields::Constant { total, .. } => *total += delta,
            }
            self.sigma[i] = next;
        }
        self.steps += 1;
    }

    /// `n` single-site steps.
    pub fn sweep(&mut self, model: &ModelInstance) {
        for _ in 0..self.sigma.len() {
            self.step(model);
        }
        self.sweeps += 1;
        if self.sweeps.is_multiple_of(VALIDATE_EVERY) {
            self.revalidate(model);
        }
    }

    pub fn advance(&mut self, model: &ModelInstance, steps: u64) {
        let n = self.sigma.len() as u64;
        for _ in 0..steps {
            self.step(model);
            if n > 0 && self.steps.is_multiple_of(n) {
                self.sweeps += 1;
                if self.sweeps.is_multiple_of(VALIDATE_EVERY) {
                    self.revalidate(model);
                }
            }
        }
    }

    /// Recompute the local fields from scratch; returns the sup-norm drift.
    pub fn revalidate(&mut self, model: &ModelInstance) -> f64 {
        let fresh = compute_fields(model, &self.sigma);
        let drift = match (&self.fields, &fresh) {
            (LocalFields::Explicit(old), LocalFields::Explicit(new)) => old
                .iter()
                .zip(new)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
            (
                LocalFields::Constant { value, total: old },
                LocalFields::Constant { total: new, .. },
            ) => (value * (old - new)).abs(),
            _ => f64::INFINITY,
        };
        self.max_drift = self.max_drift.max(drift);
        self.fields = fresh;
        drift
    }
}

fn compute_fields(model: &ModelInstance, sigma: &[f64]) -> LocalFields {
    let a = model.coupling();
    match a.constant_value() {
        Some(value) => LocalFields::Constant {
            value,
            total: sigma.iter().sum(),
        },
        None => LocalFields::Explicit(a.matvec(sigma)),
    }
}

/// `ceil(10 n log(n + 1) / (1 - rho))` single-site steps.
pub fn default_burn_in_steps(n: usize, rho: f64) -> u64 {
    (10.0 * n as f64 * (n as f64 + 1.0).ln() / (1.0 - rho)).ceil() as u64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub burn_in_steps: u64,
    /// Sweeps performed after burn-in.
    pub sweeps: usize,
    /// A record is taken every `thinning` sweeps.
    pub thinning: usize,
}

/// Runs one chain and evaluates every statistic on each retained sweep.
pub fn run_chain(
    model: &ModelInstance,
    init: &Init,
    options: RunOptions,
    statistics: &[&dyn Fn(&ChainState) -> f64],
    master_seed: u64,
    stream: u64,
) -> Result<Vec<Vec<f64>>, SamplerError> {
    let mut state = ChainState::new(model, init, master_seed, stream)?;
    state.advance(model, options.burn_in_steps);
    let thin = options.thinning.max(1);
    let mut records = Vec::with_capacity(options.sweeps / thin);
    for k in 1..=options.sweeps {
        state.sweep(model);
        if k % thin == 0 {
            records.push(statistics.iter().map(|f| f(&state)).collect());
        }
    }
    Ok(records)
}

/// Independent chains `0..replicates`, each burned in and handed to `finish`.
///
/// Chains run on the rayon pool; results come back in chain-index order.
pub fn run_replicates<T, F>(
    model: &ModelInstance,
    init: &Init,
    burn_in_steps: u64,
    replicates: usize,
    master_seed: u64,
    finish: F,
) -> Result<Vec<T>, SamplerError>
where
    T: Send,
    F: Fn(usize, &mut ChainState) -> T + Sync,
{
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut state = ChainState::new(model, init, master_seed, r as u64)?;
            state.advance(model, burn_in_steps);
            Ok(finish(r, &mut state))
        })
        .collect()
}

/// Probability that one random-scan step moves `x` to `x` with site `i` set to `value`.
pub fn transition_probability(
    model: &ModelInstance,
    x: &[f64],
    i: usize,
    value: f64,
) -> Option<f64> {
    let measure = model.measure(i);
    let (atoms, _) = measure.atoms_view()?;
    let m: f64 = model.coupling().row(i).map(|(j, a)| a * x[j]).sum();
    let probs = measure.tilted_atom_probs(m + model.field()[i])?;
    let k = atoms.iter().position(|&a| a == value)?;
    Some(probs[k] / model.n() as f64)
}

/// Exact Gibbs law of a small discrete model.
#[derive(Debug, Clone)]
pub struct ExactDistribution {
    atoms: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
    pub log_z: f64,
    pub mean: Vec<f64>,
    /// Row-major `n x n`.
    pub covariance: Vec<f64>,
}

impl ExactDistribution {
    pub fn n(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_states(&self) -> usize {
        self.probabilities.len()
    }

    /// Spin vector of state `index`; site 0 is the fastest-varying digit.
    pub fn state(&self, mut index: usize) -> Vec<f64> {
        self.atoms
            .iter()
            .map(|a| {
                let k = index % a.len();
                index /= a.len();
                a[k]
            })
            .collect()
    }

    pub fn index_of(&self, sigma: &[f64]) -> Option<usize> {
        let mut index = 0;
        let mut radix = 1;
        for (a, &x) in self.atoms.iter().zip(sigma) {
            index += radix * a.iter().position(|&v| v == x)?;
            radix *= a.len();
        }
        Some(index)
    }

    /// Exact variance of `sum_i q_i sigma_i`.
    pub fn linear_variance(&self, q: &[f64]) -> f64 {
        let n = self.n();
        let mut v = 0.0;
        for i in 0..n {
            for j in 0..n {
                v += q[i] * q[j] * self.covariance[i * n + j];
            }
        }
        v
    }
}

/// Full enumeration of `exp(sigma'A sigma/2 + c'sigma)` against the product base measure.
pub fn enumerate_exact(model: &ModelInstance) -> Result<ExactDistribution, SamplerError> {
    let n = model.n();
    let mut atoms = Vec::with_capacity(n);
    let mut log_weights = Vec::with_capacity(n);
    let mut total: usize = 1;
    for i in 0..n {
        let (a, w) = model
            .measure(i)
            .atoms_view()
            .ok_or(SamplerError::NotDiscrete(i))?;
        total = total.checked_mul(a.len()).ok_or(SamplerError::TooLarge)?;
        if total > MAX_STATES {
            return Err(SamplerError::TooLarge);
        }
        log_weights.push(w.iter().map(|x| x.ln()).collect::<Vec<f64>>());
        atoms.push(a);
    }
    let a = model.coupling();
    let c = model.field();
    let mut digits = vec![0usize; n];
    let mut sigma: Vec<f64> = atoms.iter().map(|a| a[0]).collect();
    let mut log_terms = Vec::with_capacity(total);
    for _ in 0..total {
        let m = a.matvec(&sigma);
        let mut e = 0.0;
        for i in 0..n {
            e += 0.5 * sigma[i] * m[i] + c[i] * sigma[i] + log_weights[i][digits[i]];
        }
        log_terms.push(e);
        for i in 0..n {
            digits[i] += 1;
            if digits[i] < atoms[i].len() {
                sigma[i] = atoms[i][digits[i]];
                break;
            }
            digits[i] = 0;
            sigma[i] = atoms[i][0];
        }
    }
    let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = log_terms.iter().map(|t| (t - max).exp()).sum();
    let log_z = max + z.ln();
    let probabilities: Vec<f64> = log_terms.iter().map(|t| (t - log_z).exp()).collect();
    let mut dist = ExactDistribution {
        atoms,
        probabilities,
        log_z,
        mean: vec![0.0; n],
        covariance: vec![0.0; n * n],
    };
    for k in 0..total {
        let s = dist.state(k);
        let p = dist.probabilities[k];
        for i in 0..n {
            dist.mean[i] += p * s[i];
        }
    }
    for k in 0..total {
        let s = dist.state(k);
        let p = dist.probabilities[k];
        for i in 0..n {
            for j in 0..n {
                dist.covariance[i * n + j] += p * (s[i] - dist.mean[i]) * (s[j] - dist.mean[j]);
            }
        }
    }
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::CouplingMatrix;
    use crate::measures::BaseMeasure;
    use std::sync::Arc;

    fn rademacher_model(a: CouplingMatrix, c: Vec<f64>) -> ModelInstance {
        ModelInstance::new(Arc::new(a), c, BaseMeasure::rademacher()).unwrap()
    }

    #[test]
    fn independent_uniform_case() {
        let m = rademacher_model(CouplingMatrix::zeros(5), vec![0.0; 5]);
        let d = enumerate_exact(&m).unwrap();
        assert_eq!(d.num_states(), 32);
        assert!(d.log_z.abs() < 1e-14);
        assert!(d
            .probabilities
            .iter()
            .all(|p| (p - 1.0 / 32.0).abs() < 1e-15));
    }

    #[test]
    fn single_site_probability() {
        let m = rademacher_model(CouplingMatrix::zeros(1), vec![0.7]);
        let d = enumerate_exact(&m).unwrap();
        let plus = d.index_of(&[1.0]).unwrap();
        let expected = 0.7f64.exp() / (0.7f64.exp() + (-0.7f64).exp());
        assert!((d.probabilities[plus] - expected).abs() < 1e-15);
    }

    #[test]
    fn three_site_chain_against_independent_enumeration() {
        let a = CouplingMatrix::from_triplets(3, [(0, 1, 0.2), (1, 2, 0.2)]).unwrap();
        let c = vec![0.1, -0.4, 0.3];
        let m = rademacher_model(a, c.clone());
        let d = enumerate_exact(&m).unwrap();
        // written out by hand: weights exp(0.2 s0 s1 + 0.2 s1 s2 + c.s) / 8
        let mut weights = Vec::new();
        for s2 in [-1.0, 1.0] {
            for s1 in [-1.0, 1.0] {
                for s0 in [-1.0, 1.0] {
                    let e: f64 = 0.2 * s0 * s1 + 0.2 * s1 * s2 + c[0] * s0 + c[1] * s1 + c[2] * s2;
                    weights.push(((s0, s1, s2), e.exp() / 8.0));
                }
            }
        }
        let z: f64 = weights.iter().map(|w| w.1).sum();
        assert!((d.log_z - z.ln()).abs() < 1e-14);
        for ((s0, s1, s2), w) in weights {
            let k = d.index_of(&[s0, s1, s2]).unwrap();
            assert!((d.probabilities[k] - w / z).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_continuous_and_oversized() {
        let m = ModelInstance::new(
            Arc::new(CouplingMatrix::zeros(3)),
            vec![0.0; 3],
            BaseMeasure::uniform(),
        )
        .unwrap();
        assert_eq!(
            enumerate_exact(&m).unwrap_err(),
            SamplerError::NotDiscrete(0)
        );
        let big = rademacher_model(CouplingMatrix::zeros(25), vec![0.0; 25]);
        assert_eq!(enumerate_exact(&big).unwrap_err(), SamplerError::TooLarge);
    }

    #[test]
    fn conditional_law_of_a_step() {
        let a = CouplingMatrix::from_dense(2, vec![0.0, 0.4, 0.4, 0.0]).unwrap();
        let m = rademacher_model(a, vec![0.1, -0.3]);
        let x = [1.0, -1.0];
        let p = transition_probability(&m, &x, 0, 1.0).unwrap() * 2.0;
        assert!((p - (1.0 + (-0.4f64 + 0.1).tanh()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn independent_sites_have_tilted_means() {
        let c: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) * 0.2).collect();
        let m = rademacher_model(CouplingMatrix::zeros(8), c.clone());
        let stat: Vec<Box<dyn Fn(&ChainState) -> f64>> = (0..8)
            .map(|i| Box::new(move |s: &ChainState| s.sigma()[i]) as _)
            .collect();
        let refs: Vec<&dyn Fn(&ChainState) -> f64> = stat.iter().map(|b| b.as_ref()).collect();
        let opts = RunOptions {
            burn_in_steps: 80,
            sweeps: 40_000,
            thinning: 1,
        };
        let rec = run_chain(&m, &Init::Fixed(vec![1.0; 8]), opts, &refs, 3, 0).unwrap();
        for i in 0..8 {
            let mean = rec.iter().map(|r| r[i]).sum::<f64>() / rec.len() as f64;
            let sd = (1.0 - c[i].tanh().powi(2)).sqrt();
            // sweeps decorrelate only partly; allow the lag-one inflation
            let se = sd * (2.0 / rec.len() as f64).sqrt();
            assert!((mean - c[i].tanh()).abs() < 4.0 * se, "site {i}: {mean}");
        }
    }

    #[test]
    fn determinism_and_empty_records() {
        let a = CouplingMatrix::constant(20, 0.02);
        let m = rademacher_model(a, vec![0.1; 20]);
        let total = |s: &ChainState| s.sigma().iter().sum::<f64>();
        let stats: [&dyn Fn(&ChainState) -> f64; 1] = [&total];
        let opts = RunOptions {
            burn_in_steps: 100,
            sweeps: 0,
            thinning: 1,
        };
        assert!(
            run_chain(&m, &Init::Fixed(vec![1.0; 20]), opts, &stats, 1, 0)
                .unwrap()
                .is_empty()
        );
        let opts = RunOptions { sweeps: 50, ..opts };
        let init = Init::Product(vec![0.0; 20]);
        let r1 = run_chain(&m, &init, opts, &stats, 9, 4).unwrap();
        let r2 = run_chain(&m, &init, opts, &stats, 9, 4).unwrap();
        assert_eq!(r1, r2);
        let r3 = run_chain(&m, &init, opts, &stats, 9, 5).unwrap();
        assert_ne!(r1, r3);
    }

    #[test]
    fn incremental_fields_stay_exact() {
        let mut d = vec![0.0; 30 * 30];
        for i in 0..30 {
            for j in 0..30 {
                if i != j && (i + 2 * j) % 7 < 3 {
                    let v = 0.01 * ((i * j) % 5) as f64 + 0.003;
                    d[i * 30 + j] = v;
                    d[j * 30 + i] = v;
                }
            }
        }
        let a = CouplingMatrix::from_dense(30, d).unwrap();
        let m = rademacher_model(a, vec![0.05; 30]);
        let mut st = ChainState::new(&m, &Init::Product(vec![0.0; 30]), 1, 0).unwrap();
        for _ in 0..(3 * VALIDATE_EVERY) {
            st.sweep(&m);
        }
        assert!(st.max_drift() <= 1e-9);
        let drift = st.revalidate(&m);
        assert!(drift <= 1e-9);
        assert_eq!(st.sweep_count(), 3 * VALIDATE_EVERY);
    }

    #[test]
    fn default_burn_in_formula() {
        assert_eq!(
            default_burn_in_steps(100, 0.5),
            (2000.0 * 101f64.ln()).ceil() as u64
        );
    }
}
