//! Mean-field functional and its fixed-point solver.
//!
//! `F(z) = z'Az/2 + z'c - sum_i I_i(z_i)` is strictly concave when `||A|| < 1`;
//! its maximiser solves `u = Psi'(Au + c)`, found by Picard iteration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{dot, EigenPair, NormCertificate};
use crate::measures::MeasureError;
use crate::model::ModelInstance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeanFieldError {
    #[error("coordinate {index} = {value} outside (-1, 1)")]
    Domain { index: usize, value: f64 },
    #[error("vector has length {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("two-norm certificate {two_norm} exceeds rho = {rho}")]
    WhtViolated { two_norm: f64, rho: f64 },
    #[error("declared rho = {0} must lie in (0, 1)")]
    InvalidRho(f64),
    #[error("no convergence after {iterations} iterations; last step {last_step}")]
    MaxIterations { iterations: usize, last_step: f64 },
    #[error("optimizer reached the boundary at coordinate {0}")]
    NotInterior(usize),
    #[error("centering denominator 1 - lambda*upsilon = {0} is below 1 - rho")]
    SingularCentering(f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once the sup-norm of the update is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldSolution {
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    /// `||u - Psi'(s + c)||_inf` at the returned `u`.
    pub residual_inf: f64,
    pub iterations: usize,
    /// Median ratio of successive update two-norms.
    pub contraction_estimate: f64,
    #[serde(skip)]
    pub step_ratios: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn check_domain(z: &[f64], model: &ModelInstance) -> Result<(), MeanFieldError> {
    if z.len() != model.n() {
        return Err(MeanFieldError::Dimension {
            got: z.len(),
            expected: model.n(),
        });
    }
    match z.iter().position(|x| !(x.abs() < 1.0)) {
        Some(index) => Err(MeanFieldError::Domain {
            index,
            value: z[index],
        }),
        None => Ok(()),
    }
}

/// `F(z) = z'Az/2 + z'c - sum_i I_i(z_i)`.
pub fn functional_f(z: &[f64], model: &ModelInstance) -> Result<f64, MeanFieldError> {
    check_domain(z, model)?;
    let az = model.coupling().matvec(z);
    let mut total = 0.5 * dot(z, &az) + dot(z, model.field());
    for (i, &zi) in z.iter().enumerate() {
        total -= model.measure(i).rate_function(zi).map_err(|e| match e {
            MeasureError::OutOfDomain(value) => MeanFieldError::Domain { index: i, value },
            other => other.into(),
        })?;
    }
    Ok(total)
}

/// `dF/dz_i = (Az)_i + c_i - phi_i(z_i)`.
pub fn gradient(z: &[f64], model: &ModelInstance) -> Result<Vec<f64>, MeanFieldError> {
    check_domain(z, model)?;
    let mut g = model.coupling().matvec(z);
    for (i, gi) in g.iter_mut().enumerate() {
        let phi = model.measure(i).phi(z[i]).map_err(|e| match e {
            MeasureError::OutOfDomain(value) => MeanFieldError::Domain { index: i, value },
            other => other.into(),
        })?;
        *gi += model.field()[i] - phi;
    }
    Ok(g)
}

/// Picard iteration `u <- Psi'(Au + c)` from `u = Psi'(c)`.
pub fn solve_fixed_point(
    model: &ModelInstance,
    certificate: &NormCertificate,
    options: SolverOptions,
) -> Result<MeanFieldSolution, MeanFieldError> {
    let rho = certificate.rho;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(MeanFieldError::InvalidRho(rho));
    }
    let mut warnings = Vec::new();
    if certificate.two_norm > rho {
        return Err(MeanFieldError::WhtViolated {
            two_norm: certificate.two_norm,
            rho,
        });
    }
    if !certificate.two_norm_converged {
        warnings.push("two-norm estimate did not converge; relying on the four-norm bound".into());
    }
    let a = model.coupling();
    let c = model.field();
    let n = model.n();
    let mut u = model.psi_prime(c);
    let mut s = vec![0.0; n];
    let mut theta = vec![0.0; n];
    let mut prev_step2 = f64::NAN;
    let mut ratios = Vec::new();
    let mut iterations = 0;
    loop {
        if iterations >= options.max_iter {
            return Err(MeanFieldError::MaxIterations {
                iterations,
                last_step: prev_step2,
            });
        }
        a.matvec_into(&u, &mut s);
        for i in 0..n {
            theta[i] = s[i] + c[i];
        }
        let next = model.psi_prime(&theta);
        let mut step_inf: f64 = 0.0;
        let mut step2 = 0.0;
        for (x, y) in next.iter().zip(&u) {
            let d = x - y;
            step_inf = step_inf.max(d.abs());
            step2 += d * d;
        }
        let step2 = step2.sqrt();
        if prev_step2 > 0.0 {
            ratios.push(step2 / prev_step2);
        }
        prev_step2 = step2;
        u = next;
        iterations += 1;
        if step_inf <= options.tol {
            break;
        }
    }
    a.matvec_into(&u, &mut s);
    for i in 0..n {
        theta[i] = s[i] + c[i];
    }
    let image = model.psi_prime(&theta);
    let residual_inf = u
        .iter()
        .zip(&image)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if let Some(i) = u.iter().position(|x| !(x.abs() < 1.0)) {
        return Err(MeanFieldError::NotInterior(i));
    }
    let contraction_estimate = median(&ratios);
    Ok(MeanFieldSolution {
        u,
        s,
        residual_inf,
        iterations,
        contraction_estimate,
        step_ratios: ratios,
        warnings,
    })
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// `Psi'(c) / (1 - lambda * upsilon_n)`, the centering that avoids solving for `u`.
pub fn explicit_centering(
    model: &ModelInstance,
    pair: &EigenPair,
    upsilon_n: f64,
    rho: f64,
) -> Result<Vec<f64>, MeanFieldError> {
    let denominator = 1.0 - pair.lambda * upsilon_n;
    if denominator.abs() < 1.0 - rho {
        return Err(MeanFieldError::SingularCentering(denominator));
    }
    Ok(model
        .psi_prime(model.field())
        .into_iter()
        .map(|x| x / denominator)
        .collect())
}
