//! Blur-then-decimate measurement operators.
//!
//! Every band is circularly convolved with the same 2D kernel and then
//! subsampled on the `(0, 0)`-anchored lattice `{0, s, 2s, …}²`. Periodic
//! boundaries make the adjoint exact: zero-filled upsampling followed by
//! circular correlation with the kernel.

use serde::{Deserialize, Serialize};

use crate::datacube::{self, DataCube, Dims, MeasurementVector};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Square, odd-sized, nonnegative blur kernel with unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel2D {
    size: usize,
    /// Row-major `size × size` taps; tap `(i, j)` sits at offset `(i − r, j − r)`.
    weights: Vec<f64>,
}

impl Kernel2D {
    pub fn from_weights(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::param(format!("kernel size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::shape(format!(
                "{size}x{size} kernel needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::param("kernel weights must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::param(format!("kernel weights sum to {sum}, expected 1")));
        }
        Ok(Self { size, weights })
    }

    /// Normalizes nonnegative raw weights to unit mass.
    pub fn normalized(size: usize, mut weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::param("kernel weights must have positive mass"));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Self::from_weights(size, weights)
    }

    /// The 1×1 identity kernel.
    pub fn delta() -> Self {
        Self {
            size: 1,
            weights: vec![1.0],
        }
    }

    /// Sampled isotropic Gaussian `exp(−(dx² + dy²)/(2σ²))`, normalized.
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::param(format!("kernel size must be odd, got {size}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::param(format!(
                "gaussian sigma must be positive, got {sigma}"
            )));
        }
        let r = (size / 2) as f64;
        let mut weights = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let (dy, dx) = (i as f64 - r, j as f64 - r);
                weights.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
            }
        }
        Self::normalized(size, weights)
    }

    /// Uniform straight-line motion blur of `length` taps through the center.
    ///
    /// The angle is in degrees, counter-clockwise from the positive column
    /// axis with rows growing downward. The segment spans `length − 1` pixels
    /// between its endpoints and is sampled once per pixel step along its
    /// major axis, each sample snapping to the nearest grid cell.
    pub fn motion(length: usize, angle_deg: f64, size: usize) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::param(format!("kernel size must be odd, got {size}")));
        }
        if length == 0 || length > size {
            return Err(Error::param(format!(
                "motion length must be in 1..={size}, got {length}"
            )));
        }
        if !angle_deg.is_finite() {
            return Err(Error::param("motion angle must be finite"));
        }
        let center = (size / 2) as f64;
        let (sin, cos) = angle_deg.to_radians().sin_cos();
        let half = (length as f64 - 1.0) / 2.0;
        let major = (2.0 * half * sin.abs())
            .round()
            .max((2.0 * half * cos.abs()).round());
        let samples = major as usize + 1;
        let mut weights = vec![0.0; size * size];
        for step in 0..samples {
            let t = if samples == 1 {
                0.0
            } else {
                -half + 2.0 * half * step as f64 / (samples - 1) as f64
            };
            let row = (center - t * sin).round().clamp(0.0, center * 2.0) as usize;
            let col = (center + t * cos).round().clamp(0.0, center * 2.0) as usize;
            weights[row * size + col] = 1.0;
        }
        Self::normalized(size, weights)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn transposed(&self) -> Self {
        let k = self.size;
        let weights = (0..k * k).map(|n| self.weights[(n % k) * k + n / k]).collect();
        Self { size: k, weights }
    }
}

/// The operator `A`: per-band circular blur followed by decimation.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    kernel: Kernel2D,
    scale: usize,
    input_dims: Dims,
}

impl MeasurementModel {
    pub fn new(kernel: Kernel2D, scale: usize, input_dims: Dims) -> Result<Self> {
        input_dims.validate()?;
        if scale == 0 {
            return Err(Error::param("decimation factor must be positive"));
        }
        if !input_dims.height.is_multiple_of(scale) || !input_dims.width.is_multiple_of(scale) {
            return Err(Error::param(format!(
                "spatial size {}x{} is not divisible by decimation factor {scale}",
                input_dims.height, input_dims.width
            )));
        }
        Ok(Self {
            kernel,
            scale,
            input_dims,
        })
    }

    pub fn kernel(&self) -> &Kernel2D {
        &self.kernel
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn input_dims(&self) -> Dims {
        self.input_dims
    }

    /// Low-resolution dimensions of the measurement grid.
    pub fn output_dims(&self) -> Dims {
        Dims::new(
            self.input_dims.height / self.scale,
            self.input_dims.width / self.scale,
            self.input_dims.bands,
        )
    }

    pub fn output_len(&self) -> usize {
        self.output_dims().len()
    }

    /// For each kept output coordinate along an axis of length `n`, the
    /// source index under tap `i`, i.e. `(o·s − (i − r)) mod n`.
    fn tap_indices(&self, n: usize) -> Vec<usize> {
        let k = self.kernel.size;
        let r = self.kernel.radius() as isize;
        let n_out = n / self.scale;
        let mut table = Vec::with_capacity(n_out * k);
        for o in 0..n_out {
            let base = (o * self.scale) as isize;
            for i in 0..k {
                table.push((base - (i as isize - r)).rem_euclid(n as isize) as usize);
            }
        }
        table
    }

    /// Computes `Ax`.
    pub fn apply(&self, x: &DataCube) -> Result<MeasurementVector> {
        x.ensure_dims(self.input_dims)?;
        Ok(MeasurementVector::from_raw(self.apply_slice(x.values())))
    }

    pub(crate) fn apply_slice(&self, x: &[f64]) -> Vec<f64> {
        let dims = self.input_dims;
        let out = self.output_dims();
        let k = self.kernel.size;
        let rows = self.tap_indices(dims.height);
        let cols = self.tap_indices(dims.width);
        let mut y = Vec::with_capacity(out.len());
        for b in 0..dims.bands {
            let band = &x[b * dims.plane()..(b + 1) * dims.plane()];
            for orow in 0..out.height {
                let row_taps = &rows[orow * k..(orow + 1) * k];
                for ocol in 0..out.width {
                    let col_taps = &cols[ocol * k..(ocol + 1) * k];
                    let mut acc = 0.0;
                    for (i, &src_row) in row_taps.iter().enumerate() {
                        let line = &band[src_row * dims.width..(src_row + 1) * dims.width];
                        let w = &self.kernel.weights[i * k..(i + 1) * k];
                        for (wj, &src_col) in w.iter().zip(col_taps) {
                            acc += wj * line[src_col];
                        }
                    }
                    y.push(acc);
                }
            }
        }
        y
    }

    /// Computes `Aᵀy`.
    pub fn adjoint(&self, y: &MeasurementVector) -> Result<DataCube> {
        if y.len() != self.output_len() {
            return Err(Error::shape(format!(
                "model expects {} measurements, got {}",
                self.output_len(),
                y.len()
            )));
        }
        Ok(DataCube::from_raw(
            self.input_dims,
            self.adjoint_slice(y.values()),
        ))
    }

    pub(crate) fn adjoint_slice(&self, y: &[f64]) -> Vec<f64> {
        let dims = self.input_dims;
        let out = self.output_dims();
        let k = self.kernel.size;
        let rows = self.tap_indices(dims.height);
        let cols = self.tap_indices(dims.width);
        let mut z = vec![0.0; dims.len()];
        for b in 0..dims.bands {
            let band = &mut z[b * dims.plane()..(b + 1) * dims.plane()];
            let meas = &y[b * out.plane()..(b + 1) * out.plane()];
            for orow in 0..out.height {
                let row_taps = &rows[orow * k..(orow + 1) * k];
                for ocol in 0..out.width {
                    let v = meas[orow * out.width + ocol];
                    if v == 0.0 {
                        continue;
                    }
                    let col_taps = &cols[ocol * k..(ocol + 1) * k];
                    for (i, &dst_row) in row_taps.iter().enumerate() {
                        let line = &mut band[dst_row * dims.width..(dst_row + 1) * dims.width];
                        let w = &self.kernel.weights[i * k..(i + 1) * k];
                        for (wj, &dst_col) in w.iter().zip(col_taps) {
                            line[dst_col] += wj * v;
                        }
                    }
                }
            }
        }
        z
    }
}

/// Result of power iteration on `AᵀA`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorNorm {
    /// Estimate of the largest singular value of `A`.
    pub sigma_max: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Estimates `σ_max(A)` by power iteration on `AᵀA` from a seeded Gaussian start.
///
/// Stops once the Rayleigh quotient changes by at most `tol` relative to
/// itself. The estimate never exceeds the true value.
pub fn operator_norm(
    model: &MeasurementModel,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<OperatorNorm> {
    if max_iters == 0 {
        return Err(Error::param("power iteration needs at least one iteration"));
    }
    let mut v = SeededRng::new(seed).normal_vec(model.input_dims.len());
    normalize(&mut v);
    let mut rayleigh = 0.0;
    for it in 1..=max_iters {
        let av = model.apply_slice(&v);
        let next = datacube::dot(&av, &av);
        let mut w = model.adjoint_slice(&av);
        let w_norm = datacube::norm(&w);
        let done = (next - rayleigh).abs() <= tol * next;
        rayleigh = next;
        if w_norm == 0.0 || done {
            return Ok(OperatorNorm {
                sigma_max: rayleigh.sqrt(),
                iterations: it,
                converged: true,
            });
        }
        w.iter_mut().for_each(|x| *x /= w_norm);
        v = w;
    }
    Ok(OperatorNorm {
        sigma_max: rayleigh.sqrt(),
        iterations: max_iters,
        converged: false,
    })
}

fn normalize(v: &mut [f64]) {
    let n = datacube::norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Adds white Gaussian noise at the requested input SNR.
///
/// The standard deviation is `σ = ‖y‖ / (√m · 10^{snr/20})`, so the expected
/// noise energy is `‖y‖² · 10^{−snr/10}`. Returns the noisy vector and `σ`.
pub fn add_awgn(
    y_clean: &MeasurementVector,
    input_snr_db: f64,
    seed: u64,
) -> Result<(MeasurementVector, f64)> {
    let signal = y_clean.norm();
    if signal == 0.0 {
        return Err(Error::Degenerate("clean measurements have zero norm".into()));
    }
    if !input_snr_db.is_finite() {
        return Err(Error::param(format!(
            "input SNR must be finite, got {input_snr_db}"
        )));
    }
    let m = y_clean.len() as f64;
    let sigma = signal / (m.sqrt() * 10f64.powf(input_snr_db / 20.0));
    let mut rng = SeededRng::new(seed);
    let noisy = y_clean
        .values()
        .iter()
        .map(|v| v + sigma * rng.normal())
        .collect();
    Ok((MeasurementVector::from_raw(noisy), sigma))
}
