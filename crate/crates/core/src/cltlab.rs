//! Linear statistics, Berry–Esseen bound terms and the CLT experiment harness.
//!
//! For a unit vector `q` and approximate eigenpair `A q ≈ lambda q` the centered
//! statistic `sum_i q_i (sigma_i - u_i)` is compared with
//! `N(0, upsilon_n / (1 - lambda upsilon_n))`, `upsilon_n = sum_i q_i^2 psi''(c_i)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{dot, CouplingError, EigenPair, MhtStatus, NormCertificate};
use crate::diagnostics;
use crate::ensembles::{
    self, EnsembleError, EnsembleSpec, FieldKind, FieldMoments, FieldSpec, QRecipe,
};
use crate::meanfield::{self, MeanFieldError, SolverOptions};
use crate::measures::{MeasureError, MeasureSpec};
use crate::model::{ModelError, ModelInstance};
use crate::sampler::{self, chain_rng, ChainState, Init, SamplerError};

/// Stream key separating annealed field draws from the matrix draw.
const FIELD_STREAM_KEY: u64 = 0xf1e1_d000_0000_0001;
/// Master-seed offset for the mixing-diagnostic chains.
const DIAGNOSTIC_KEY: u64 = 0xd1a6_0000_0000_0001;

#[derive(Debug, Error)]
pub enum CltError {
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    MeanField(#[from] MeanFieldError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("certificate failure: {0}")]
    Certificate(String),
    #[error("invalid experiment: {0}")]
    Config(String),
}

/// `sum_i q_i^2 psi_i''(c_i)`.
pub fn upsilon_n(model: &ModelInstance, q: &[f64]) -> f64 {
    let v = model.psi_2(model.field());
    q.iter().zip(&v).map(|(qi, vi)| qi * qi * vi).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTerms {
    pub upsilon_n: f64,
    /// `nu = A Psi'(c)`.
    pub nu: Vec<f64>,
    pub r1n: f64,
    pub r2n: f64,
    pub r3n: f64,
    pub r4n: f64,
    /// `|epsilon' Psi'(c)|`.
    pub eps_dot_psi1: f64,
}

/// Field-dependent error terms, two mat-vec products in total.
pub fn error_terms(model: &ModelInstance, pair: &EigenPair) -> ErrorTerms {
    let c = model.field();
    let a = model.coupling();
    let psi1 = model.psi_prime(c);
    let psi2 = model.psi_2(c);
    let q = &pair.q;
    let ups: f64 = q.iter().zip(&psi2).map(|(qi, vi)| qi * qi * vi).sum();
    let w: Vec<f64> = q
        .iter()
        .zip(&psi2)
        .map(|(qi, vi)| qi * (vi - ups))
        .collect();
    let aw = a.matvec(&w);
    let nu = a.matvec(&psi1);
    ErrorTerms {
        upsilon_n: ups,
        r1n: dot(&aw, &aw),
        r2n: dot(&nu, &nu),
        r3n: nu.iter().map(|x| x.powi(4)).sum(),
        r4n: dot(&w, &nu).abs(),
        eps_dot_psi1: dot(&pair.epsilon, &psi1).abs(),
        nu,
    }
}

/// Scalars entering the Berry–Esseen bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetIngredients {
    pub n: usize,
    pub r1n: f64,
    pub r2n: f64,
    pub r3n: f64,
    pub r4n: f64,
    pub alpha_n: f64,
    pub q_inf: f64,
    pub eps_norm: f64,
    pub eps_dot_psi1: f64,
}

impl BudgetIngredients {
    pub fn new(terms: &ErrorTerms, pair: &EigenPair, alpha_n: f64) -> Self {
        Self {
            n: pair.q.len(),
            r1n: terms.r1n,
            r2n: terms.r2n,
            r3n: terms.r3n,
            r4n: terms.r4n,
            alpha_n,
            q_inf: pair.q_inf,
            eps_norm: pair.epsilon_norm,
            eps_dot_psi1: terms.eps_dot_psi1,
        }
    }
}

/// Bound sums without their unknown constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    /// For the mean-field centered statistic.
    pub mean_field: f64,
    /// For the explicit centering `Psi'(c) / (1 - lambda upsilon_n)`.
    pub explicit: f64,
    /// Bound on `|q'(u - Psi'(c) / (1 - lambda upsilon_n))|`.
    pub centering_gap: f64,
}

pub fn berry_esseen_budget(b: &BudgetIngredients) -> Budget {
    let sqrt_n_alpha = (b.n as f64).sqrt() * b.alpha_n;
    let mean_field = b.r1n.sqrt()
        + (b.alpha_n * b.r2n).sqrt()
        + b.r3n.sqrt()
        + sqrt_n_alpha
        + b.q_inf
        + b.eps_norm;
    let explicit = b.r2n.sqrt() * (b.r1n.sqrt() + b.alpha_n.sqrt() + b.eps_norm)
        + b.r1n.sqrt()
        + b.r3n.sqrt()
        + sqrt_n_alpha
        + b.q_inf
        + b.r4n
        + b.eps_dot_psi1
        + b.eps_norm;
    let centering_gap =
        (b.r1n * b.r2n).sqrt() + b.r3n.sqrt() + b.r4n + b.r2n.sqrt() * b.eps_norm + b.eps_dot_psi1;
    Budget {
        mean_field,
        explicit,
        centering_gap,
    }
}

/// `sum_i q_i (sigma_i - centering_i)`.
pub fn linear_statistic(sigma: &[f64], q: &[f64], centering: &[f64]) -> f64 {
    sigma
        .iter()
        .zip(q)
        .zip(centering)
        .map(|((s, qi), ci)| qi * (s - ci))
        .sum()
}

/// CDF of `N(0, variance)`.
pub fn normal_cdf(x: f64, variance: f64) -> f64 {
    0.5 * libm::erfc(-x / (2.0 * variance).sqrt())
}

/// Kolmogorov–Smirnov distance with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub distance: f64,
    /// `sqrt(F(x*) (1 - F(x*)) / M)` at the maximising point.
    pub se: f64,
}

/// Sup distance between the empirical CDF of the sorted `samples` and `N(0, variance)`.
pub fn ks_distance(samples: &[f64], variance: f64) -> KsResult {
    let m = samples.len() as f64;
    let mut best = 0.0;
    let mut at = 0.5;
    for (k, &x) in samples.iter().enumerate() {
        let f = normal_cdf(x, variance);
        let right = (k + 1) as f64 / m - f;
        let left = f - k as f64 / m;
        let d = right.max(left);
        if d > best {
            best = d;
            at = f;
        }
    }
    KsResult {
        distance: best,
        se: (at * (1.0 - at) / m).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Quenched,
    Annealed,
    Lln,
    Contraction,
    Norms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Mean-field optimizer `u`.
    MeanField,
    /// `Psi'(c) / (1 - lambda upsilon)`, with `upsilon_n` (quenched) or the
    /// population `upsilon` (annealed).
    Explicit,
    Zero,
}

fn default_field() -> FieldSpec {
    FieldSpec {
        kind: FieldKind::Constant { h: 0.0 },
        seed: 0,
    }
}

fn one() -> usize {
    1
}

fn default_floor() -> f64 {
    0.05
}

fn default_diag_chains() -> usize {
    4
}

fn default_diag_sweeps() -> usize {
    200
}

fn default_restarts() -> usize {
    4
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ensemble: EnsembleSpec,
    #[serde(default = "default_field")]
    pub field: FieldSpec,
    #[serde(default)]
    pub measure: MeasureSpec,
    #[serde(default)]
    pub q_recipe: QRecipe,
    #[serde(default)]
    pub mode: Mode,
    /// Number of independent chains `M`.
    #[serde(alias = "M", default)]
    pub replicates: usize,
    /// Burn-in in single-site steps; defaults to `ceil(10 n log(n+1) / (1 - rho))`.
    #[serde(default)]
    pub burn_in: Option<u64>,
    /// Sweeps between retained samples of one chain.
    #[serde(default = "one")]
    pub thinning: usize,
    #[serde(default = "one")]
    pub samples_per_chain: usize,
    pub rho: f64,
    #[serde(default)]
    pub master_seed: u64,
    /// Defaults: mean-field for quenched, lln and contraction; zero for annealed.
    #[serde(default)]
    pub centering: Option<Centering>,
    /// Predictions are withheld when `upsilon_n` falls below this.
    #[serde(default = "default_floor")]
    pub upsilon_floor: f64,
    #[serde(default = "default_diag_chains")]
    pub diagnostic_chains: usize,
    #[serde(default = "default_diag_sweeps")]
    pub diagnostic_sweeps: usize,
    #[serde(default = "default_restarts")]
    pub four_norm_restarts: usize,
    /// Run even when the four-norm condition is only heuristically met.
    #[serde(default)]
    pub force_heuristic: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CltError> {
        let err = |m: String| Err(CltError::Config(m));
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return err(format!("rho = {} must lie in (0, 1)", self.rho));
        }
        if self.mode != Mode::Norms && self.replicates < 2 {
            return err("replicates must be at least 2".into());
        }
        if self.thinning == 0 || self.samples_per_chain == 0 {
            return err("thinning and samples_per_chain must be positive".into());
        }
        if self.mode == Mode::Annealed && self.centering == Some(Centering::MeanField) {
            return err(
                "annealed runs redraw the field per chain; use explicit or zero centering".into(),
            );
        }
        if !(self.upsilon_floor >= 0.0) {
            return err("upsilon_floor must be non-negative".into());
        }
        self.field.validate()?;
        Ok(())
    }

    pub fn centering(&self) -> Centering {
        self.centering.unwrap_or(match self.mode {
            Mode::Annealed => Centering::Zero,
            _ => Centering::MeanField,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Empirical {
    pub mean: f64,
    pub var: f64,
    /// Standard error of `var`.
    pub var_se: f64,
    pub second_moment: f64,
    pub second_moment_se: f64,
    pub ks_quenched: Option<f64>,
    pub ks_quenched_se: Option<f64>,
    pub ks_annealed: Option<f64>,
    pub ks_annealed_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlnSummary {
    /// `E[T*^2]` estimate.
    pub second_moment: f64,
    pub second_moment_se: f64,
    /// `max(1, n alpha_n^2)`.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionSummary {
    /// Estimate of `E sum_i (m_i - s_i)^2`.
    pub mean_sq: f64,
    pub mean_sq_se: f64,
    /// Estimate of `E sum_i (m_i - s_i)^4`.
    pub mean_fourth: f64,
    pub mean_fourth_se: f64,
    pub n_alpha: f64,
    pub n_alpha_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldSummary {
    pub iterations: usize,
    pub residual_inf: f64,
    pub contraction_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingSummary {
    pub chains: usize,
    pub sweeps: usize,
    pub gelman_rubin: f64,
    /// Largest integrated autocorrelation time, in sweeps.
    pub max_iat: f64,
    pub lag1_autocorrelation: f64,
    /// Largest incremental-field drift seen at a revalidation.
    pub max_field_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub config: ExperimentConfig,
    pub n: usize,
    pub ensemble: String,
    pub theta: f64,
    pub certificate: NormCertificate,
    pub ensemble_notes: Vec<String>,
    pub pair: EigenPair,
    pub upsilon_n: f64,
    pub field_moments: FieldMoments,
    pub nu: Vec<f64>,
    pub r1n: f64,
    pub r2n: f64,
    pub r3n: f64,
    pub r4n: f64,
    pub alpha_n: f64,
    pub eps_dot_psi1: f64,
    pub err_budget: f64,
    pub err_budget_explicit: f64,
    pub centering_gap_bound: f64,
    pub predicted_var: Option<f64>,
    pub predicted_var_annealed: Option<f64>,
    pub centering: Centering,
    pub empirical: Option<Empirical>,
    pub lln: Option<LlnSummary>,
    pub contraction: Option<ContractionSummary>,
    pub mean_field: Option<MeanFieldSummary>,
    pub mixing: Option<MixingSummary>,
    pub sample_size: usize,
    pub burn_in: u64,
    pub warnings: Vec<String>,
}

pub const CSV_COLUMNS: [&str; 22] = [
    "n",
    "ensemble",
    "theta",
    "seed",
    "lambda",
    "ups_n",
    "R1",
    "R2",
    "R3",
    "R4",
    "alpha_n",
    "eps_norm",
    "q_inf",
    "pred_var",
    "emp_var",
    "ks_q",
    "ks_a",
    "M",
    "burn_in",
    "err_budget",
    "ks_q_se",
    "emp_var_se",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

impl CltReport {
    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        let e = self.empirical.as_ref();
        [
            self.n.to_string(),
            self.ensemble.clone(),
            format!("{:?}", self.theta),
            self.config.master_seed.to_string(),
            format!("{:?}", self.pair.lambda),
            format!("{:?}", self.upsilon_n),
            format!("{:?}", self.r1n),
            format!("{:?}", self.r2n),
            format!("{:?}", self.r3n),
            format!("{:?}", self.r4n),
            format!("{:?}", self.alpha_n),
            format!("{:?}", self.pair.epsilon_norm),
            format!("{:?}", self.pair.q_inf),
            opt(self.predicted_var),
            opt(e.map(|e| e.var)),
            opt(e.and_then(|e| e.ks_quenched)),
            opt(e.and_then(|e| e.ks_annealed)),
            self.sample_size.to_string(),
            self.burn_in.to_string(),
            format!("{:?}", self.err_budget),
            opt(e.and_then(|e| e.ks_quenched_se)),
            opt(e.map(|e| e.var_se)),
        ]
        .join(",")
    }
}

/// Estimates of `E sum (m_i - s_i)^2` and `E sum (m_i - s_i)^4` from chain states.
pub fn contraction_diagnostic(
    model: &ModelInstance,
    s: &[f64],
    chains: &[ChainState],
) -> ContractionSummary {
    let obs: Vec<(f64, f64)> = chains.iter().map(|st| deviation_moments(st, s)).collect();
    contraction_summary(model, &obs)
}

fn deviation_moments(state: &ChainState, s: &[f64]) -> (f64, f64) {
    let mut sq = 0.0;
    let mut fourth = 0.0;
    for (i, si) in s.iter().enumerate() {
        let d = state.local_field(i) - si;
        let d2 = d * d;
        sq += d2;
        fourth += d2 * d2;
    }
    (sq, fourth)
}

fn contraction_summary(model: &ModelInstance, obs: &[(f64, f64)]) -> ContractionSummary {
    let sq: Vec<f64> = obs.iter().map(|o| o.0).collect();
    let fo: Vec<f64> = obs.iter().map(|o| o.1).collect();
    let (mean_sq, _, mean_sq_se) = mean_var_se(&sq);
    let (mean_fourth, _, mean_fourth_se) = mean_var_se(&fo);
    let n = model.n() as f64;
    let alpha = model.coupling().alpha_n();
    ContractionSummary {
        mean_sq,
        mean_sq_se,
        mean_fourth,
        mean_fourth_se,
        n_alpha: n * alpha,
        n_alpha_sq: n * alpha * alpha,
    }
}

/// Mean, unbiased variance and standard error of the mean.
fn mean_var_se(x: &[f64]) -> (f64, f64, f64) {
    let m = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / m;
    if x.len() < 2 {
        return (mean, f64::NAN, f64::NAN);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var, (var / m).sqrt())
}

fn empirical(samples: &[f64]) -> Empirical {
    let m = samples.len() as f64;
    let (mean, var, _) = mean_var_se(samples);
    let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / m;
    let sq: Vec<f64> = samples.iter().map(|x| x * x).collect();
    let (second_moment, _, second_moment_se) = mean_var_se(&sq);
    Empirical {
        mean,
        var,
        var_se: ((m4 - var * var).max(0.0) / m).sqrt(),
        second_moment,
        second_moment_se,
        ks_quenched: None,
        ks_quenched_se: None,
        ks_annealed: None,
        ks_annealed_se: None,
    }
}

fn check_certificate(
    cert: &NormCertificate,
    lambda: f64,
    force: bool,
    warnings: &mut Vec<String>,
) -> Result<(), CltError> {
    if !cert.wht {
        return Err(CltError::Certificate(format!(
            "two_norm {} exceeds rho {}",
            cert.two_norm, cert.rho
        )));
    }
    match cert.mht {
        MhtStatus::Certified => {}
        MhtStatus::Heuristic if force => warnings.push(format!(
            "four-norm condition only heuristic: lower bound {} < rho {} < inf_norm {}",
            cert.four_norm_lower, cert.rho, cert.inf_norm
        )),
        MhtStatus::Heuristic => return Err(CltError::Certificate(format!(
            "inf_norm {} exceeds rho {}; four-norm lower bound {} (pass force_heuristic to run)",
            cert.inf_norm, cert.rho, cert.four_norm_lower
        ))),
        MhtStatus::Violated => {
            return Err(CltError::Certificate(format!(
                "four-norm lower bound {} exceeds rho {}",
                cert.four_norm_lower, cert.rho
            )))
        }
    }
    if lambda.abs() > cert.rho {
        return Err(CltError::Certificate(format!(
            "|lambda| = {} exceeds rho {}",
            lambda.abs(),
            cert.rho
        )));
    }
    Ok(())
}

/// Tilts `A z + c`.
fn tilts(model: &ModelInstance, z: &[f64]) -> Vec<f64> {
    let mut t = model.coupling().matvec(z);
    t.iter_mut()
        .zip(model.field())
        .for_each(|(ti, ci)| *ti += ci);
    t
}

fn explicit_center(model: &ModelInstance, denom: f64) -> Vec<f64> {
    model
        .psi_prime(model.field())
        .into_iter()
        .map(|x| x / denom)
        .collect()
}

/// Values recorded from one retained chain state.
#[derive(Clone, Copy)]
struct Observation {
    t: f64,
    dev_sq: f64,
    dev_fourth: f64,
}

fn collect_samples<F>(
    state: &mut ChainState,
    model: &ModelInstance,
    samples: usize,
    thinning: usize,
    observe: &F,
) -> Vec<Observation>
where
    F: Fn(&ChainState, &[f64]) -> Observation,
{
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        if k > 0 {
            for _ in 0..thinning {
                state.sweep(model);
            }
        }
        out.push(observe(state, state.sigma()));
    }
    state.revalidate(model);
    out
}

pub fn run_clt_experiment(config: &ExperimentConfig) -> Result<CltReport, CltError> {
    config.validate()?;
    let mut warnings = Vec::new();
    let generated = ensembles::generate(&config.ensemble)?;
    let notes = generated.notes.clone();
    let pair = ensembles::eigen_recipe(&config.ensemble, &generated, &config.q_recipe)?;
    let matrix = Arc::new(generated.matrix);
    let n = matrix.n();
    let cert = matrix.certify(config.rho, config.four_norm_restarts);
    check_certificate(&cert, pair.lambda, config.force_heuristic, &mut warnings)?;
    let measure = config.measure.build()?;
    let c = config.field.draw(n);
    let model = ModelInstance::new(Arc::clone(&matrix), c, measure.clone())?;
    let terms = error_terms(&model, &pair);
    let alpha = matrix.alpha_n();
    let budget = berry_esseen_budget(&BudgetIngredients::new(&terms, &pair, alpha));
    let moments = config.field.moments(&measure);
    let lambda = pair.lambda;
    let ups = terms.upsilon_n;
    let pop = moments.upsilon;
    let predicted_var = if ups >= config.upsilon_floor {
        Some(ups / (1.0 - lambda * ups))
    } else {
        warnings.push(format!(
            "upsilon_n = {ups} below floor {}; no prediction",
            config.upsilon_floor
        ));
        None
    };
    let predicted_var_annealed = (pop >= config.upsilon_floor).then(|| {
        let d = 1.0 - lambda * pop;
        pop / d + moments.mean_psi1_sq / (d * d)
    });
    let centering = config.centering();
    let burn_in = config
        .burn_in
        .unwrap_or_else(|| sampler::default_burn_in_steps(n, config.rho));

    let mut report = CltReport {
        config: config.clone(),
        n,
        ensemble: config.ensemble.kind.name().into(),
        theta: config.ensemble.theta,
        certificate: cert.clone(),
        ensemble_notes: notes,
        upsilon_n: ups,
        field_moments: moments,
        nu: terms.nu.clone(),
        r1n: terms.r1n,
        r2n: terms.r2n,
        r3n: terms.r3n,
        r4n: terms.r4n,
        alpha_n: alpha,
        eps_dot_psi1: terms.eps_dot_psi1,
        err_budget: budget.mean_field,
        err_budget_explicit: budget.explicit,
        centering_gap_bound: budget.centering_gap,
        predicted_var,
        predicted_var_annealed,
        centering,
        empirical: None,
        lln: None,
        contraction: None,
        mean_field: None,
        mixing: None,
        sample_size: 0,
        burn_in,
        warnings: Vec::new(),
        pair,
    };
    if config.mode == Mode::Norms {
        report.warnings = warnings;
        return Ok(report);
    }

    let u = if config.mode != Mode::Annealed {
        let sol = meanfield::solve_fixed_point(&model, &cert, SolverOptions::default())?;
        warnings.extend(sol.warnings.iter().cloned());
        report.mean_field = Some(MeanFieldSummary {
            iterations: sol.iterations,
            residual_inf: sol.residual_inf,
            contraction_estimate: sol.contraction_estimate,
        });
        Some(sol.u)
    } else {
        None
    };
    let q = report.pair.q.clone();
    let quenched_center = match centering {
        Centering::MeanField => u.clone().unwrap_or_else(|| vec![0.0; n]),
        Centering::Explicit => {
            if config.mode == Mode::Annealed {
                vec![0.0; n]
            } else {
                meanfield::explicit_centering(&model, &report.pair, ups, config.rho)?
            }
        }
        Centering::Zero => vec![0.0; n],
    };
    let s_vec = u
        .as_ref()
        .map(|u| matrix.matvec(u))
        .unwrap_or_else(|| vec![0.0; n]);
    let with_contraction = config.mode == Mode::Contraction;
    let observe = |state: &ChainState, sigma: &[f64], center: &[f64]| {
        let (dev_sq, dev_fourth) = if with_contraction {
            deviation_moments(state, &s_vec)
        } else {
            (0.0, 0.0)
        };
        Observation {
            t: linear_statistic(sigma, &q, center),
            dev_sq,
            dev_fourth,
        }
    };
    let start = |m: &ModelInstance, guess: &[f64]| Init::Product(tilts(m, guess));
    let samples = config.samples_per_chain;
    let thin = config.thinning;
    let master = config.master_seed;

    let observations: Vec<Observation> = if config.mode == Mode::Annealed {
        let denom = 1.0 - lambda * pop;
        let explicit = centering == Centering::Explicit;
        let per_chain: Result<Vec<Vec<Observation>>, CltError> = (0..config.replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = chain_rng(config.field.seed ^ FIELD_STREAM_KEY, r as u64);
                let cr = config.field.draw_with(n, &mut rng);
                let mr = model.with_field(cr)?;
                let guess = explicit_center(&mr, denom);
                let center = if explicit {
                    guess.clone()
                } else {
                    vec![0.0; n]
                };
                let mut st = ChainState::new(&mr, &start(&mr, &guess), master, r as u64)?;
                st.advance(&mr, burn_in);
                let f = |s: &ChainState, sigma: &[f64]| observe(s, sigma, &center);
                Ok(collect_samples(&mut st, &mr, samples, thin, &f))
            })
            .collect();
        per_chain?.into_iter().flatten().collect()
    } else {
        let guess = u.clone().unwrap_or_else(|| vec![0.0; n]);
        let init = start(&model, &guess);
        let f = |s: &ChainState, sigma: &[f64]| observe(s, sigma, &quenched_center);
        sampler::run_replicates(
            &model,
            &init,
            burn_in,
            config.replicates,
            master,
            |_, st| collect_samples(st, &model, samples, thin, &f),
        )?
        .into_iter()
        .flatten()
        .collect()
    };
    report.sample_size = observations.len();

    let t: Vec<f64> = observations.iter().map(|o| o.t).collect();
    let mut emp = empirical(&t);
    let mut sorted = t.clone();
    sorted.sort_by(f64::total_cmp);
    match config.mode {
        Mode::Annealed => {
            let target = if centering == Centering::Explicit {
                (pop >= config.upsilon_floor).then(|| pop / (1.0 - lambda * pop))
            } else {
                predicted_var_annealed
            };
            if let Some(v) = target {
                let ks = ks_distance(&sorted, v);
                emp.ks_annealed = Some(ks.distance);
                emp.ks_annealed_se = Some(ks.se);
            }
        }
        _ => {
            if let Some(v) = predicted_var {
                let ks = ks_distance(&sorted, v);
                emp.ks_quenched = Some(ks.distance);
                emp.ks_quenched_se = Some(ks.se);
            }
        }
    }
    if config.mode != Mode::Annealed && centering == Centering::MeanField {
        report.lln = Some(LlnSummary {
            second_moment: emp.second_moment,
            second_moment_se: emp.second_moment_se,
            scale: (n as f64 * alpha * alpha).max(1.0),
        });
    }
    if with_contraction {
        let obs: Vec<(f64, f64)> = observations
            .iter()
            .map(|o| (o.dev_sq, o.dev_fourth))
            .collect();
        report.contraction = Some(contraction_summary(&model, &obs));
    }
    report.empirical = Some(emp);
    if samples > 1 {
        warnings.push(format!(
            "{samples} samples per chain {thin} sweeps apart; samples within a chain are autocorrelated"
        ));
    }

    if config.diagnostic_chains >= 2 {
        let guess = u
            .clone()
            .unwrap_or_else(|| explicit_center(&model, 1.0 - lambda * ups));
        let init = start(&model, &guess);
        let sweeps = config.diagnostic_sweeps;
        let traces: Vec<(Vec<f64>, f64)> = sampler::run_replicates(
            &model,
            &init,
            burn_in,
            config.diagnostic_chains,
            master.wrapping_add(DIAGNOSTIC_KEY),
            |_, st| {
                let mut trace = Vec::with_capacity(sweeps);
                for _ in 0..sweeps {
                    st.sweep(&model);
                    trace.push(linear_statistic(st.sigma(), &q, &quenched_center));
                }
                st.revalidate(&model);
                (trace, st.max_drift())
            },
        )?;
        let chains: Vec<Vec<f64>> = traces.iter().map(|t| t.0.clone()).collect();
        let max_drift = traces.iter().fold(0.0f64, |m, t| m.max(t.1));
        let gr = diagnostics::gelman_rubin(&chains);
        let max_iat = chains
            .iter()
            .map(|c| diagnostics::integrated_autocorrelation_time(c))
            .fold(0.0f64, f64::max);
        let lag1 = chains
            .iter()
            .map(|c| {
                diagnostics::autocorrelation(c, 1)
                    .get(1)
                    .copied()
                    .unwrap_or(0.0)
            })
            .sum::<f64>()
            / chains.len() as f64;
        if gr > 1.1 {
            warnings.push(format!("gelman-rubin ratio {gr:.3} above 1.1"));
        }
        if max_drift > 1e-8 {
            warnings.push(format!("incremental field drift {max_drift:e}"));
        }
        report.mixing = Some(MixingSummary {
            chains: chains.len(),
            sweeps,
            gelman_rubin: gr,
            max_iat,
            lag1_autocorrelation: lag1,
            max_field_drift: max_drift,
        });
    }
    report.warnings = warnings;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::CouplingMatrix;
    use crate::ensembles::{EnsembleKind, FieldKind};
    use crate::measures::BaseMeasure;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn er_model(n: usize, seed: u64) -> (ModelInstance, EigenPair) {
        let spec = EnsembleSpec {
            kind: EnsembleKind::ErdosRenyi { p: 0.3 },
            theta: 0.5,
            n,
            seed,
        };
        let g = ensembles::generate(&spec).unwrap();
        let pair = ensembles::eigen_recipe(&spec, &g, &QRecipe::Flat).unwrap();
        let field = FieldSpec {
            kind: FieldKind::TwoPointSymmetric { h: 0.5 },
            seed: seed + 1,
        }
        .draw(n);
        let m = ModelInstance::new(Arc::new(g.matrix), field, BaseMeasure::rademacher()).unwrap();
        (m, pair)
    }

    #[test]
    fn upsilon_examples() {
        let m = ModelInstance::new(
            Arc::new(CouplingMatrix::zeros(4)),
            vec![0.0; 4],
            BaseMeasure::rademacher(),
        )
        .unwrap();
        assert!((upsilon_n(&m, &[0.5, 0.5, 0.5, 0.5]) - 1.0).abs() < 1e-15);
        let m = m.with_field(vec![0.7; 4]).unwrap();
        let q = [0.1, 0.7, 0.1, (1.0f64 - 0.51).sqrt()];
        let sech2 = 1.0 / 0.7f64.cosh().powi(2);
        assert!((upsilon_n(&m, &q) - sech2).abs() < 1e-15);
    }

    #[test]
    fn error_terms_match_double_loops() {
        let (m, pair) = er_model(120, 3);
        let t = error_terms(&m, &pair);
        let n = m.n();
        let a = m.coupling().to_dense();
        let c = m.field();
        let p1: Vec<f64> = c.iter().map(|x| x.tanh()).collect();
        let p2: Vec<f64> = c.iter().map(|x| 1.0 - x.tanh().powi(2)).collect();
        let q = &pair.q;
        let mut ups = 0.0;
        for i in 0..n {
            ups += q[i] * q[i] * p2[i];
        }
        let (mut r1, mut r2, mut r3, mut r4, mut ed) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let mut inner = 0.0;
            let mut nu = 0.0;
            for j in 0..n {
                inner += a[i * n + j] * q[j] * (p2[j] - ups);
                nu += a[i * n + j] * p1[j];
                r4 += a[i * n + j] * q[i] * (p2[i] - ups) * p1[j];
            }
            r1 += inner * inner;
            r2 += nu * nu;
            r3 += nu.powi(4);
            let mut aq = 0.0;
            for j in 0..n {
                aq += a[i * n + j] * q[j];
            }
            ed += (aq - pair.lambda * q[i]) * p1[i];
        }
        assert!((t.upsilon_n - ups).abs() < 1e-12);
        assert!((t.r1n - r1).abs() < 1e-10);
        assert!((t.r2n - r2).abs() < 1e-10);
        assert!((t.r3n - r3).abs() < 1e-10);
        assert!((t.r4n - r4.abs()).abs() < 1e-10);
        assert!((t.eps_dot_psi1 - ed.abs()).abs() < 1e-10);
    }

    #[test]
    fn constant_and_zero_fields_kill_terms() {
        let a = Arc::new(CouplingMatrix::constant(30, 0.5 / 29.0));
        let q = vec![1.0 / 30f64.sqrt(); 30];
        let pair = EigenPair::new(&a, q, 0.5).unwrap();
        let m =
            ModelInstance::new(Arc::clone(&a), vec![0.3; 30], BaseMeasure::rademacher()).unwrap();
        let t = error_terms(&m, &pair);
        assert!(t.r1n < 1e-28 && t.r4n < 1e-14);
        let m0 = m.with_field(vec![0.0; 30]).unwrap();
        let t0 = error_terms(&m0, &pair);
        assert_eq!((t0.r2n, t0.r3n), (0.0, 0.0));
    }

    #[test]
    fn curie_weiss_budget_reduces_to_two_terms() {
        let n = 50;
        let theta = 0.5;
        let a = Arc::new(CouplingMatrix::constant(n, theta / (n - 1) as f64));
        let pair = EigenPair::new(&a, vec![1.0; n], theta).unwrap();
        let m =
            ModelInstance::new(Arc::clone(&a), vec![0.0; n], BaseMeasure::rademacher()).unwrap();
        let t = error_terms(&m, &pair);
        let b = berry_esseen_budget(&BudgetIngredients::new(&t, &pair, a.alpha_n()));
        let expected = theta * theta * (n as f64).sqrt() / (n - 1) as f64 + 1.0 / (n as f64).sqrt();
        assert!((b.mean_field - expected).abs() < 1e-12);
        let zero = BudgetIngredients {
            n: 0,
            r1n: 0.0,
            r2n: 0.0,
            r3n: 0.0,
            r4n: 0.0,
            alpha_n: 0.0,
            q_inf: 0.0,
            eps_norm: 0.0,
            eps_dot_psi1: 0.0,
        };
        let bz = berry_esseen_budget(&zero);
        assert_eq!(
            (bz.mean_field, bz.explicit, bz.centering_gap),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn budget_recomputes_from_stored_terms() {
        let (m, pair) = er_model(150, 9);
        let t = error_terms(&m, &pair);
        let ing = BudgetIngredients::new(&t, &pair, m.coupling().alpha_n());
        let b = berry_esseen_budget(&ing);
        let by_hand = ing.r1n.sqrt()
            + (ing.alpha_n * ing.r2n).sqrt()
            + ing.r3n.sqrt()
            + 150f64.sqrt() * ing.alpha_n
            + ing.q_inf
            + ing.eps_norm;
        assert!((b.mean_field - by_hand).abs() < 1e-12);
        let explicit = ing.r2n.sqrt() * (ing.r1n.sqrt() + ing.alpha_n.sqrt() + ing.eps_norm)
            + ing.r1n.sqrt()
            + ing.r3n.sqrt()
            + 150f64.sqrt() * ing.alpha_n
            + ing.q_inf
            + ing.r4n
            + ing.eps_dot_psi1
            + ing.eps_norm;
        assert!((b.explicit - explicit).abs() < 1e-12);
    }

    #[test]
    fn linear_statistic_examples() {
        let sigma = [1.0, -1.0, 1.0];
        let cent = [0.2, 0.1, -0.3];
        assert_eq!(linear_statistic(&cent, &[0.3, 0.4, 0.5], &cent), 0.0);
        assert_eq!(linear_statistic(&sigma, &[1.0, 0.0, 0.0], &cent), 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let q: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let c: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let mut naive = 0.0;
        for i in 0..50 {
            naive += q[i] * s[i] - q[i] * c[i];
        }
        assert!((linear_statistic(&s, &q, &c) - naive).abs() < 1e-12);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&[0.0], 1.0).distance, 0.5);
        // Phi(-1.5), Phi(-0.5), Phi(0), Phi(0.5), Phi(2) from erf evaluated by mpmath
        let pts = [-1.5, -0.5, 0.0, 0.5, 2.0];
        let phi = [
            0.066_807_201_268_858_06,
            0.308_537_538_725_986_9,
            0.5,
            0.691_462_461_274_013_1,
            0.977_249_868_051_820_8,
        ];
        let mut expect: f64 = 0.0;
        for k in 0..5 {
            expect = expect
                .max((k + 1) as f64 / 5.0 - phi[k])
                .max(phi[k] - k as f64 / 5.0);
        }
        let got = ks_distance(&pts, 1.0);
        assert!((got.distance - expect).abs() < 1e-15);
        for (x, p) in pts.iter().zip(phi) {
            assert!((normal_cdf(*x, 1.0) - p).abs() < 1e-15);
        }
    }

    #[test]
    fn ks_of_gaussian_samples_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = 100_000;
        let mut x: Vec<f64> = (0..m)
            .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        x.sort_by(f64::total_cmp);
        assert!(ks_distance(&x, 4.0).distance <= 1.95 / (m as f64).sqrt());
    }

    #[test]
    fn ks_null_quantiles() {
        // median of the Kolmogorov law is 0.8276 / sqrt(M); 90% quantile 1.2238 / sqrt(M)
        for &m in &[1000usize, 10_000] {
            let mut d: Vec<f64> = (0..200)
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(1000 + r);
                    let mut x: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
                    x.sort_by(f64::total_cmp);
                    ks_distance(&x, 1.0).distance * (m as f64).sqrt()
                })
                .collect();
            d.sort_by(f64::total_cmp);
            let below_median = d.iter().filter(|&&v| v < 0.8276).count() as f64 / 200.0;
            let below_90 = d.iter().filter(|&&v| v < 1.2238).count() as f64 / 200.0;
            // binomial sd of a proportion over 200 draws is at most 0.035
            assert!((below_median - 0.5).abs() < 0.11, "{m}: {below_median}");
            assert!((below_90 - 0.9).abs() < 0.07, "{m}: {below_90}");
        }
    }

    fn base_config(mode: Mode) -> ExperimentConfig {
        ExperimentConfig {
            ensemble: EnsembleSpec {
                kind: EnsembleKind::CurieWeiss,
                theta: 0.5,
                n: 100,
                seed: 1,
            },
            field: FieldSpec {
                kind: FieldKind::Constant { h: 0.0 },
                seed: 2,
            },
            measure: MeasureSpec::Rademacher,
            q_recipe: QRecipe::Flat,
            mode,
            replicates: 400,
            burn_in: Some(2000),
            thinning: 1,
            samples_per_chain: 1,
            rho: 0.6,
            master_seed: 7,
            centering: None,
            upsilon_floor: 0.05,
            diagnostic_chains: 3,
            diagnostic_sweeps: 50,
            four_norm_restarts: 2,
            force_heuristic: false,
        }
    }

    #[test]
    fn curie_weiss_prediction_is_two() {
        let r = run_clt_experiment(&base_config(Mode::Norms)).unwrap();
        assert!((r.predicted_var.unwrap() - 2.0).abs() < 1e-12);
        assert!(r.empirical.is_none());
    }

    #[test]
    fn independent_baseline_quenched() {
        let mut cfg = base_config(Mode::Quenched);
        cfg.ensemble.theta = 0.0;
        cfg.ensemble.n = 400;
        cfg.replicates = 10_000;
        cfg.burn_in = Some(0);
        let r = run_clt_experiment(&cfg).unwrap();
        let e = r.empirical.unwrap();
        assert!((r.predicted_var.unwrap() - 1.0).abs() < 1e-12);
        // exact distance of the standardized Binomial(400, 1/2) law from N(0, 1)
        let n = 400;
        let log_pmf = |k: usize| {
            libm::lgamma(n as f64 + 1.0)
                - libm::lgamma(k as f64 + 1.0)
                - libm::lgamma((n - k) as f64 + 1.0)
                - n as f64 * std::f64::consts::LN_2
        };
        let mut cdf = 0.0;
        let mut exact: f64 = 0.0;
        for k in 0..=n {
            let x = (2.0 * k as f64 - n as f64) / (n as f64).sqrt();
            let f = normal_cdf(x, 1.0);
            exact = exact.max(f - cdf);
            cdf += log_pmf(k).exp();
            exact = exact.max(cdf - f);
        }
        assert!(exact <= 0.02, "{exact}");
        // the empirical CDF is within 1.36 / sqrt(M) of the exact one at 95%
        let ks = e.ks_quenched.unwrap();
        assert!((ks - exact).abs() <= 1.36 / 100.0, "{ks} vs {exact}");
    }

    #[test]
    fn runs_are_deterministic_and_modes_populate() {
        let cfg = base_config(Mode::Contraction);
        let a = serde_json::to_string(&run_clt_experiment(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&run_clt_experiment(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let r: CltReport = serde_json::from_str(&a).unwrap();
        let c = r.contraction.unwrap();
        assert!(c.mean_sq > 0.0 && r.lln.is_some() && r.mixing.is_some());
        let mut ann = base_config(Mode::Annealed);
        ann.field = FieldSpec {
            kind: FieldKind::TwoPointSymmetric { h: 0.5 },
            seed: 3,
        };
        let r = run_clt_experiment(&ann).unwrap();
        assert!(r.empirical.as_ref().unwrap().ks_annealed.is_some());
        assert_eq!(r.csv_row().split(',').count(), CSV_COLUMNS.len());
    }

    #[test]
    fn zero_coupling_contraction_is_zero() {
        let mut cfg = base_config(Mode::Contraction);
        cfg.ensemble.theta = 0.0;
        cfg.field.kind = FieldKind::UniformSymmetric { h: 1.0 };
        let r = run_clt_experiment(&cfg).unwrap();
        let c = r.contraction.unwrap();
        assert_eq!((c.mean_sq, c.mean_fourth), (0.0, 0.0));
    }

    #[test]
    fn certificate_policy() {
        let mut cfg = base_config(Mode::Norms);
        cfg.ensemble.theta = 0.7;
        assert!(matches!(
            run_clt_experiment(&cfg),
            Err(CltError::Certificate(_))
        ));
        let mut h = base_config(Mode::Norms);
        h.ensemble = EnsembleSpec {
            kind: EnsembleKind::ErdosRenyi { p: 0.2 },
            theta: 0.5,
            n: 200,
            seed: 4,
        };
        h.rho = 0.55;
        let cert = ensembles::generate(&h.ensemble)
            .unwrap()
            .matrix
            .certify(0.55, 2);
        if cert.mht == MhtStatus::Heuristic {
            assert!(run_clt_experiment(&h).is_err());
            h.force_heuristic = true;
            assert!(!run_clt_experiment(&h).unwrap().warnings.is_empty());
        }
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let bad = r#"{"ensemble":{"kind":"curie_weiss","theta":0.5,"n":10},"replicates":10,"rho":0.6,"bogus":1}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
        let ok = r#"{"ensemble":{"kind":"curie_weiss","theta":0.5,"n":10},"M":10,"rho":0.6}"#;
        let c: ExperimentConfig = serde_json::from_str(ok).unwrap();
        assert_eq!(c.replicates, 10);
    }
}
