//! Quadratic interaction model `dP/d(prod mu_i) ∝ exp(sigma' A sigma / 2 + c' sigma)`.

use std::sync::Arc;

use thiserror::Error;

use crate::coupling::CouplingMatrix;
use crate::measures::BaseMeasure;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("field has length {field}, coupling has dimension {n}")]
    Dimension { field: usize, n: usize },
    #[error("{measures} per-site measures for dimension {n}")]
    MeasureCount { measures: usize, n: usize },
    #[error("non-finite field entry at {0}")]
    NonFiniteField(usize),
}

#[derive(Debug, Clone)]
enum SiteMeasures {
    Common(BaseMeasure),
    PerSite(Vec<BaseMeasure>),
}

/// One Gibbs measure: coupling, field and per-site base measures.
#[derive(Debug, Clone)]
pub struct ModelInstance {
    coupling: Arc<CouplingMatrix>,
    field: Vec<f64>,
    measures: SiteMeasures,
}

impl ModelInstance {
    pub fn new(
        coupling: Arc<CouplingMatrix>,
        field: Vec<f64>,
        measure: BaseMeasure,
    ) -> Result<Self, ModelError> {
        Self::check(&coupling, &field)?;
        Ok(Self {
            coupling,
            field,
            measures: SiteMeasures::Common(measure),
        })
    }

    pub fn with_site_measures(
        coupling: Arc<CouplingMatrix>,
        field: Vec<f64>,
        measures: Vec<BaseMeasure>,
    ) -> Result<Self, ModelError> {
        Self::check(&coupling, &field)?;
        if measures.len() != coupling.n() {
            return Err(ModelError::MeasureCount {
                measures: measures.len(),
                n: coupling.n(),
            });
        }
        Ok(Self {
            coupling,
            field,
            measures: SiteMeasures::PerSite(measures),
        })
    }

    fn check(coupling: &CouplingMatrix, field: &[f64]) -> Result<(), ModelError> {
        if field.len() != coupling.n() {
            return Err(ModelError::Dimension {
                field: field.len(),
                n: coupling.n(),
            });
        }
        if let Some(i) = field.iter().position(|c| !c.is_finite()) {
            return Err(ModelError::NonFiniteField(i));
        }
        Ok(())
    }

    /// Same coupling and measures with a different field.
    pub fn with_field(&self, field: Vec<f64>) -> Result<Self, ModelError> {
        Self::check(&self.coupling, &field)?;
        Ok(Self {
            coupling: Arc::clone(&self.coupling),
            field,
            measures: self.measures.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.field.len()
    }

    pub fn coupling(&self) -> &CouplingMatrix {
        &self.coupling
    }

    pub fn coupling_arc(&self) -> Arc<CouplingMatrix> {
        Arc::clone(&self.coupling)
    }

    pub fn field(&self) -> &[f64] {
        &self.field
    }

    #[inline]
    pub fn measure(&self, i: usize) -> &BaseMeasure {
        match &self.measures {
            SiteMeasures::Common(m) => m,
            SiteMeasures::PerSite(v) => &v[i],
        }
    }

    /// The shared base measure, when every site uses the same one.
    pub fn common_measure(&self) -> Option<&BaseMeasure> {
        match &self.measures {
            SiteMeasures::Common(m) => Some(m),
            SiteMeasures::PerSite(_) => None,
        }
    }

    /// `Psi'(theta)` componentwise.
    pub fn psi_prime(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(i, &t)| self.measure(i).mean_unchecked(t))
            .collect()
    }

    /// `Psi''(theta)` componentwise.
    pub fn psi_2(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(i, &t)| self.measure(i).variance_unchecked(t))
            .collect()
    }
}
