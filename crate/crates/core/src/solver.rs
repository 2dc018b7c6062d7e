//! Gradient (GM) and Nesterov-accelerated (AGM) RED iterations.
//!
//! One iteration evaluates `G(s) = ∇g(s) + τ(s − D(s))` at the extrapolated
//! point, takes the step `xᵏ = sᵏ⁻¹ − γG(sᵏ⁻¹)` and extrapolates
//! `sᵏ = xᵏ + ((qₖ₋₁ − 1)/qₖ)(xᵏ − xᵏ⁻¹)` with `s⁰ = x⁰` and `q₀ = 1`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datacube::{self, snr_db, DataCube};
use crate::denoisers::{denoise_unchecked, red_penalty_with, DenoiserSpec};
use crate::error::{Error, Result};
use crate::fidelity::FidelityProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `qₖ = 1` for all `k`: plain fixed-step iteration.
    Gm,
    /// Nesterov sequence `qₖ = ½(1 + √(1 + 4qₖ₋₁²))`.
    Agm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub mode: Mode,
    /// Step size `γ`; `None` selects `1/(L_g + 2τ)`.
    #[serde(default)]
    pub step_size: Option<f64>,
    pub tau: f64,
    pub max_iters: usize,
    /// Stop once `‖G‖ / ‖G‖_first` drops to this value.
    #[serde(default)]
    pub residual_tol: f64,
    #[serde(default = "default_true")]
    pub log_snr: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Agm,
            step_size: None,
            tau: 0.1,
            max_iters: 200,
            residual_tol: 0.0,
            log_snr: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::param(format!("tau must be nonnegative, got {}", self.tau)));
        }
        if let Some(g) = self.step_size {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::param(format!("step size must be positive, got {g}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be at least 1"));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::param("residual_tol must be nonnegative"));
        }
        Ok(())
    }
}

/// The largest step covered by the convergence theorem, `1/(L_g + 2τ)`.
pub fn default_step_size(lipschitz_g: f64, tau: f64) -> f64 {
    1.0 / (lipschitz_g + 2.0 * tau)
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `‖G(sᵏ⁻¹)‖`, the residual of the gradient actually used in step `k`.
    pub residual_norm: f64,
    /// `g(xᵏ)`.
    pub data_fidelity: f64,
    /// `(τ/2)⟨xᵏ, xᵏ − D(xᵏ)⟩`.
    pub red_penalty: Option<f64>,
    /// SNR of `xᵏ` against the ground truth, when one was supplied.
    pub snr_db: Option<f64>,
    /// Momentum value `qₖ`.
    pub q: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub x: DataCube,
    pub trace: Vec<IterationRecord>,
    pub step_size: f64,
    pub warnings: Vec<String>,
}

/// Next momentum value. GM always returns 1.
pub fn momentum_sequence(mode: Mode, q_prev: f64) -> Result<f64> {
    if !(q_prev >= 1.0) {
        return Err(Error::param(format!(
            "momentum q must be at least 1, got {q_prev}"
        )));
    }
    Ok(match mode {
        Mode::Gm => 1.0,
        Mode::Agm => 0.5 * (1.0 + (1.0 + 4.0 * q_prev * q_prev).sqrt()),
    })
}

/// `G(x) = ∇g(x) + τ(x − D(x))`.
pub fn red_gradient(p: &FidelityProblem, spec: &DenoiserSpec, tau: f64, x: &DataCube) -> Result<DataCube> {
    x.ensure_dims(p.model().input_dims())?;
    spec.validate()?;
    let dx = denoise_unchecked(spec, x);
    Ok(DataCube::from_raw(x.dims(), red_gradient_with(p, tau, x, &dx)))
}

fn red_gradient_with(p: &FidelityProblem, tau: f64, x: &DataCube, dx: &DataCube) -> Vec<f64> {
    let mut g = p.grad_slice(x.values());
    for ((gi, xi), di) in g.iter_mut().zip(x.values()).zip(dx.values()) {
        *gi += tau * (xi - di);
    }
    g
}

/// Resolved step size plus any out-of-hypothesis warning.
fn resolve_step(
    config: &SolverConfig,
    p: &FidelityProblem,
    spec: &DenoiserSpec,
) -> Result<(f64, Vec<String>)> {
    let mut warnings = Vec::new();
    let lipschitz = p.lipschitz();
    let step = match (config.step_size, lipschitz) {
        (Some(g), _) => g,
        (None, Some(l)) => default_step_size(l, config.tau),
        (None, None) => {
            return Err(Error::param(
                "no step size given and L_g has not been computed for this problem",
            ))
        }
    };
    if let Some(l) = lipschitz {
        let limit = default_step_size(l, config.tau);
        if step > limit * (1.0 + 1e-12) {
            warnings.push(format!(
                "step size {step:e} exceeds 1/(L_g + 2τ) = {limit:e}; convergence guarantee does not apply"
            ));
        }
    }
    if let DenoiserSpec::Scale { alpha } = spec {
        if alpha.abs() > 1.0 {
            warnings.push(format!("denoiser scale({alpha}) is expansive"));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((step, warnings))
}

/// Runs the iteration with the momentum rule selected by `config.mode`.
pub fn run(
    config: &SolverConfig,
    p: &FidelityProblem,
    spec: &DenoiserSpec,
    x0: &DataCube,
    truth: Option<&DataCube>,
) -> Result<SolverOutput> {
    let mode = config.mode;
    run_with(
        config,
        p,
        spec,
        x0,
        truth,
        |q| momentum_sequence(mode, q),
        |_, _| {},
    )
}

/// Generalized driver: `momentum` maps `qₖ₋₁` to `qₖ`, and `observe` sees
/// every record together with the new iterate `xᵏ`.
pub fn run_with(
    config: &SolverConfig,
    p: &FidelityProblem,
    spec: &DenoiserSpec,
    x0: &DataCube,
    truth: Option<&DataCube>,
    mut momentum: impl FnMut(f64) -> Result<f64>,
    mut observe: impl FnMut(&IterationRecord, &DataCube),
) -> Result<SolverOutput> {
    config.validate()?;
    spec.validate()?;
    let dims = p.model().input_dims();
    x0.ensure_dims(dims)?;
    if let Some(t) = truth {
        t.ensure_dims(dims)?;
    }
    let (gamma, warnings) = resolve_step(config, p, spec)?;
    let tau = config.tau;
    let start = Instant::now();

    let mut x_prev = x0.clone();
    let mut s = x0.clone();
    let mut q_prev = 1.0;
    let mut first_residual = None;
    let mut trace: Vec<IterationRecord> = Vec::new();

    for k in 1..=config.max_iters {
        let ds = denoise_unchecked(spec, &s);
        let grad = red_gradient_with(p, tau, &s, &ds);
        let residual_norm = datacube::norm(&grad);
        let x_vals: Vec<f64> = s
            .values()
            .iter()
            .zip(&grad)
            .map(|(si, gi)| si - gamma * gi)
            .collect();
        if !residual_norm.is_finite() || x_vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: k, trace });
        }
        let x = DataCube::from_raw(dims, x_vals);
        let q = momentum(q_prev)?;
        let beta = (q_prev - 1.0) / q;
        let s_vals = x
            .values()
            .iter()
            .zip(x_prev.values())
            .map(|(xi, pi)| xi + beta * (xi - pi))
            .collect();

        let dx = denoise_unchecked(spec, &x);
        let record = IterationRecord {
            k,
            residual_norm,
            data_fidelity: p.eval_slice(x.values()),
            red_penalty: Some(red_penalty_with(spec, &x, &dx, tau)),
            snr_db: match (config.log_snr, truth) {
                (true, Some(t)) => snr_db(t, &x).ok(),
                _ => None,
            },
            q,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        observe(&record, &x);
        trace.push(record);

        s = DataCube::from_raw(dims, s_vals);
        x_prev = x;
        q_prev = q;

        let first = *first_residual.get_or_insert(residual_norm);
        if first == 0.0 || residual_norm <= config.residual_tol * first {
            break;
        }
    }
    Ok(SolverOutput {
        x: x_prev,
        trace,
        step_size: gamma,
        warnings,
    })
}

/// Outcome of a lean GM run used for limit-point estimation.
#[derive(Debug, Clone)]
pub(crate) struct FixedPointRun {
    pub x: DataCube,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Fixed-step GM without tracing, stopping at `‖G‖/‖G‖_first ≤ tol`.
pub(crate) fn gm_to_tolerance(
    p: &FidelityProblem,
    spec: &DenoiserSpec,
    tau: f64,
    gamma: f64,
    x0: &DataCube,
    tol: f64,
    max_iters: usize,
) -> Result<FixedPointRun> {
    let dims = x0.dims();
    let mut x = x0.clone();
    let mut first = None;
    let mut relative = f64::INFINITY;
    for k in 1..=max_iters {
        let dx = denoise_unchecked(spec, &x);
        let grad = red_gradient_with(p, tau, &x, &dx);
        let r = datacube::norm(&grad);
        if !r.is_finite() {
            return Err(Error::Divergence {
                iteration: k,
                trace: Vec::new(),
            });
        }
        let f = *first.get_or_insert(r);
        relative = if f == 0.0 { 0.0 } else { r / f };
        if relative <= tol {
            return Ok(FixedPointRun {
                x,
                iterations: k - 1,
                relative_residual: relative,
                converged: true,
            });
        }
        let next = x
            .values()
            .iter()
            .zip(&grad)
            .map(|(xi, gi)| xi - gamma * gi)
            .collect();
        x = DataCube::from_raw(dims, next);
    }
    Ok(FixedPointRun {
        x,
        iterations: max_iters,
        relative_residual: relative,
        converged: false,
    })
}
