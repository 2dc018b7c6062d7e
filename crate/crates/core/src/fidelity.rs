//! Quadratic data fidelity `g(x) = ½‖y − Ax‖²` and its gradient `Aᵀ(Ax − y)`.

use crate::datacube::{self, DataCube, MeasurementVector};
use crate::error::{Error, Result};
use crate::operators::{operator_norm, MeasurementModel};

/// Power-iteration budget used for `L_g`.
pub const LIPSCHITZ_MAX_ITERS: usize = 5000;
pub const LIPSCHITZ_TOL: f64 = 1e-14;

/// Measurement model, data, and the cached gradient Lipschitz constant.
#[derive(Debug, Clone)]
pub struct FidelityProblem {
    model: MeasurementModel,
    y: MeasurementVector,
    lipschitz: Option<f64>,
}

impl FidelityProblem {
    pub fn new(model: MeasurementModel, y: MeasurementVector) -> Result<Self> {
        if y.len() != model.output_len() {
            return Err(Error::shape(format!(
                "model produces {} measurements, data has {}",
                model.output_len(),
                y.len()
            )));
        }
        Ok(Self {
            model,
            y,
            lipschitz: None,
        })
    }

    /// Like [`FidelityProblem::new`], with `L_g` estimated up front.
    pub fn with_lipschitz(model: MeasurementModel, y: MeasurementVector, seed: u64) -> Result<Self> {
        let mut p = Self::new(model, y)?;
        p.lipschitz_g(seed)?;
        Ok(p)
    }

    pub fn model(&self) -> &MeasurementModel {
        &self.model
    }

    pub fn y(&self) -> &MeasurementVector {
        &self.y
    }

    /// Cached `L_g`, if it has been computed.
    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    /// Estimates `L_g = σ_max(A)²` and caches it.
    pub fn lipschitz_g(&mut self, seed: u64) -> Result<f64> {
        let est = operator_norm(&self.model, LIPSCHITZ_MAX_ITERS, LIPSCHITZ_TOL, seed)?;
        if !est.converged {
            log::warn!(
                "power iteration for L_g stopped after {} iterations without converging",
                est.iterations
            );
        }
        let l = est.sigma_max * est.sigma_max;
        self.lipschitz = Some(l);
        Ok(l)
    }

    pub(crate) fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.model.apply_slice(x);
        r.iter_mut().zip(self.y.values()).for_each(|(a, b)| *a -= b);
        r
    }

    pub(crate) fn grad_slice(&self, x: &[f64]) -> Vec<f64> {
        self.model.adjoint_slice(&self.residual(x))
    }

    pub(crate) fn eval_slice(&self, x: &[f64]) -> f64 {
        let r = self.residual(x);
        0.5 * datacube::dot(&r, &r)
    }

    /// `g(x) = ½‖y − Ax‖²`.
    pub fn eval_g(&self, x: &DataCube) -> Result<f64> {
        x.ensure_dims(self.model.input_dims())?;
        Ok(self.eval_slice(x.values()))
    }

    /// `∇g(x) = Aᵀ(Ax − y)`.
    pub fn grad_g(&self, x: &DataCube) -> Result<DataCube> {
        x.ensure_dims(self.model.input_dims())?;
        Ok(DataCube::from_raw(x.dims(), self.grad_slice(x.values())))
    }
}
