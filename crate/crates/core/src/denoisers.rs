//! Denoisers `D(·)` used as priors, the RED penalty, and Lipschitz audits.

use serde::{Deserialize, Serialize};

use crate::datacube::{self, DataCube, Dims};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Dual step of the TV solver: `1/12` bounds `1/‖∇‖²` for three forward
/// differences (each contributes at most 4).
const TV_DUAL_STEP: f64 = 1.0 / 12.0;

/// Power-style refinements applied to each random pair in the Lipschitz audit.
pub const LIPSCHITZ_REFINE_STEPS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserSpec {
    Identity,
    /// `D(x) = αx`. Expansive for `|α| > 1`.
    Scale {
        alpha: f64,
    },
    /// Separable circular Gaussian smoothing; a zero sigma leaves that axis alone.
    GaussianSmooth {
        sigma_spatial: f64,
        sigma_spectral: f64,
    },
    /// Approximate proximal map of anisotropic 3D total variation.
    Tv3d {
        lambda: f64,
        inner_iters: usize,
    },
}

impl DenoiserSpec {
    /// True when `D` is linear with a symmetric matrix, so that
    /// `τ(x − D(x))` is exactly the gradient of the RED penalty.
    pub fn is_linear_symmetric(&self) -> bool {
        !matches!(self, DenoiserSpec::Tv3d { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DenoiserSpec::Identity => Ok(()),
            DenoiserSpec::Scale { alpha } if !alpha.is_finite() => {
                Err(Error::param("scale alpha must be finite"))
            }
            DenoiserSpec::Scale { .. } => Ok(()),
            DenoiserSpec::GaussianSmooth {
                sigma_spatial,
                sigma_spectral,
            } => {
                for (name, s) in [
                    ("sigma_spatial", sigma_spatial),
                    ("sigma_spectral", sigma_spectral),
                ] {
                    if !(s >= 0.0 && s.is_finite()) {
                        return Err(Error::param(format!(
                            "{name} must be finite and nonnegative, got {s}"
                        )));
                    }
                }
                Ok(())
            }
            DenoiserSpec::Tv3d { lambda, inner_iters } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::param(format!(
                        "tv3d lambda must be nonnegative, got {lambda}"
                    )));
                }
                if inner_iters == 0 {
                    return Err(Error::param("tv3d inner_iters must be at least 1"));
                }
                Ok(())
            }
        }
    }
}

/// Applies the denoiser.
pub fn denoise(spec: &DenoiserSpec, x: &DataCube) -> Result<DataCube> {
    spec.validate()?;
    Ok(denoise_unchecked(spec, x))
}

pub(crate) fn denoise_unchecked(spec: &DenoiserSpec, x: &DataCube) -> DataCube {
    match *spec {
        DenoiserSpec::Identity => x.clone(),
        DenoiserSpec::Scale { alpha } => x.scaled(alpha),
        DenoiserSpec::GaussianSmooth {
            sigma_spatial,
            sigma_spectral,
        } => gaussian_smooth(x, sigma_spatial, sigma_spectral),
        DenoiserSpec::Tv3d { lambda, inner_iters } => tv3d_prox(x, lambda, inner_iters),
    }
}

/// Normalized taps `exp(−d²/2σ²)` for `d = −⌈4σ⌉..=⌈4σ⌉`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

fn gaussian_smooth(x: &DataCube, sigma_spatial: f64, sigma_spectral: f64) -> DataCube {
    let dims = x.dims();
    let mut v = x.values().to_vec();
    if sigma_spatial > 0.0 {
        let taps = gaussian_taps(sigma_spatial);
        v = circular_axis_conv(&v, dims.width, 1, dims.len(), &taps);
        v = circular_axis_conv(&v, dims.height, dims.width, dims.len(), &taps);
    }
    if sigma_spectral > 0.0 {
        let taps = gaussian_taps(sigma_spectral);
        v = circular_axis_conv(&v, dims.bands, dims.plane(), dims.len(), &taps);
    }
    DataCube::from_raw(dims, v)
}

/// Circular convolution along one axis of length `n` whose elements are
/// `stride` apart in the flat buffer.
fn circular_axis_conv(v: &[f64], n: usize, stride: usize, total: usize, taps: &[f64]) -> Vec<f64> {
    let radius = (taps.len() / 2) as isize;
    let mut out = vec![0.0; total];
    let block = n * stride;
    for start in (0..total).step_by(block) {
        for inner in 0..stride {
            let base = start + inner;
            for i in 0..n {
                let mut acc = 0.0;
                for (t, w) in taps.iter().enumerate() {
                    let j = (i as isize - (t as isize - radius)).rem_euclid(n as isize) as usize;
                    acc += w * v[base + j * stride];
                }
                out[base + i * stride] = acc;
            }
        }
    }
    out
}

/// Forward differences with replicate boundaries, one field per axis
/// (columns, rows, bands); differences leaving the grid are zero.
struct Gradient3 {
    cols: Vec<f64>,
    rows: Vec<f64>,
    bands: Vec<f64>,
}

impl Gradient3 {
    fn zeros(n: usize) -> Self {
        Self {
            cols: vec![0.0; n],
            rows: vec![0.0; n],
            bands: vec![0.0; n],
        }
    }
}

fn forward_diff(dims: Dims, z: &[f64], out: &mut Gradient3) {
    let (w, plane) = (dims.width, dims.plane());
    for b in 0..dims.bands {
        for r in 0..dims.height {
            for c in 0..w {
                let i = dims.index(b, r, c);
                out.cols[i] = if c + 1 < w { z[i + 1] - z[i] } else { 0.0 };
                out.rows[i] = if r + 1 < dims.height { z[i + w] - z[i] } else { 0.0 };
                out.bands[i] = if b + 1 < dims.bands {
                    z[i + plane] - z[i]
                } else {
                    0.0
                };
            }
        }
    }
}

/// Adjoint of [`forward_diff`] (a negative divergence); the prox inlines it.
#[cfg(test)]
fn forward_diff_adjoint(dims: Dims, p: &Gradient3, out: &mut [f64]) {
    let (w, plane) = (dims.width, dims.plane());
    for b in 0..dims.bands {
        for r in 0..dims.height {
            for c in 0..w {
                let i = dims.index(b, r, c);
                let mut acc = 0.0;
                if c > 0 {
                    acc += p.cols[i - 1];
                }
                if c + 1 < w {
                    acc -= p.cols[i];
                }
                if r > 0 {
                    acc += p.rows[i - w];
                }
                if r + 1 < dims.height {
                    acc -= p.rows[i];
                }
                if b > 0 {
                    acc += p.bands[i - plane];
                }
                if b + 1 < dims.bands {
                    acc -= p.bands[i];
                }
                out[i] = acc;
            }
        }
    }
}

/// Anisotropic 3D total variation: the sum of absolute forward differences
/// along rows, columns and bands.
pub fn tv3d_value(x: &DataCube) -> f64 {
    let mut g = Gradient3::zeros(x.len());
    forward_diff(x.dims(), x.values(), &mut g);
    g.cols
        .iter()
        .chain(&g.rows)
        .chain(&g.bands)
        .map(|d| d.abs())
        .sum()
}

/// `½‖z − x‖² + λ·TV₃(z)`.
pub fn tv3d_prox_objective(z: &DataCube, x: &DataCube, lambda: f64) -> Result<f64> {
    let d = z.distance(x)?;
    Ok(0.5 * d * d + lambda * tv3d_value(z))
}

/// Approximate `argmin_z ½‖z − x‖² + λ·TV₃(z)` by projected gradient on the
/// dual, running exactly `inner_iters` iterations from a zero dual.
///
/// The primal is recovered as `z = x − ∇ᵀq` with `|q| ≤ λ` entrywise, so
/// the mean of `x` is preserved for every iteration count.
pub fn tv3d_prox(x: &DataCube, lambda: f64, inner_iters: usize) -> DataCube {
    if lambda == 0.0 || inner_iters == 0 {
        return x.clone();
    }
    let dims = x.dims();
    let (w, plane) = (dims.width, dims.plane());
    let xs = x.values();
    let mut q = Gradient3::zeros(dims.len());
    let mut z = xs.to_vec();
    let step = TV_DUAL_STEP;
    let clip = |v: f64| v.clamp(-lambda, lambda);
    let n = dims.len();
    for _ in 0..inner_iters {
        // Dual ascent: q ← clip(q + step·∇z). Each edge family is swept as
        // one contiguous run; column edges that would wrap to the next row
        // are reset to zero, so edges leaving the grid never move.
        ascend(&mut q.cols[..n - 1], &z[1..], &z[..n - 1], step, clip);
        for end in (w - 1..n - 1).step_by(w) {
            q.cols[end] = 0.0;
        }
        for o in (0..n).step_by(plane) {
            let m = o + plane - w;
            ascend(&mut q.rows[o..m], &z[o + w..o + plane], &z[o..m], step, clip);
        }
        ascend(
            &mut q.bands[..n - plane],
            &z[plane..],
            &z[..n - plane],
            step,
            clip,
        );

        // Primal recovery z = x − ∇ᵀq. Every entry receives its edge terms
        // in the same order however the passes are blocked.
        z.copy_from_slice(xs);
        sub_assign(&mut z[plane..], &q.bands[..n - plane]);
        for o in (0..n).step_by(plane) {
            sub_assign(&mut z[o + w..o + plane], &q.rows[o..o + plane - w]);
        }
        sub_assign(&mut z[1..], &q.cols[..n - 1]);
        for o in (0..n).step_by(w) {
            add_assign(&mut z[o..o + w - 1], &q.cols[o..o + w - 1]);
        }
        for o in (0..n).step_by(plane) {
            add_assign(&mut z[o..o + plane - w], &q.rows[o..o + plane - w]);
        }
        add_assign(&mut z[..n - plane], &q.bands[..n - plane]);
    }
    DataCube::from_raw(dims, z)
}

fn ascend(q: &mut [f64], ahead: &[f64], here: &[f64], step: f64, clip: impl Fn(f64) -> f64) {
    for ((qi, a), b) in q.iter_mut().zip(ahead).zip(here) {
        *qi = clip(*qi + step * (a - b));
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sub_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d -= s;
    }
}

/// `h(x) = (τ/2)·⟨x, x − D(x)⟩`.
///
/// For denoisers that are not linear-symmetric this is only a surrogate:
/// its gradient need not equal `τ(x − D(x))`.
pub fn red_penalty(spec: &DenoiserSpec, x: &DataCube, tau: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::param(format!("tau must be nonnegative, got {tau}")));
    }
    let dx = denoise(spec, x)?;
    Ok(red_penalty_with(spec, x, &dx, tau))
}

pub(crate) fn red_penalty_with(spec: &DenoiserSpec, x: &DataCube, dx: &DataCube, tau: f64) -> f64 {
    if !spec.is_linear_symmetric() {
        log::debug!("RED penalty for {spec:?} is a surrogate only");
    }
    let inner: f64 = x.values().iter().zip(dx.values()).map(|(a, d)| a * (a - d)).sum();
    0.5 * tau * inner
}

/// Empirical Lipschitz constant `max ‖D(u) − D(v)‖ / ‖u − v‖`.
///
/// Each trial draws a base point `u` with entries uniform in `[0, 1)` and a
/// Gaussian offset rescaled to length 1 (even trials) or 1e-3 (odd trials).
/// The offset is then refined [`LIPSCHITZ_REFINE_STEPS`] times by replacing
/// it with `D(v) − D(u)` at the same length, which is power iteration for
/// linear denoisers and a local ascent for nonlinear ones. Every ratio seen
/// along the way counts toward the maximum.
pub fn estimate_denoiser_lipschitz(spec: &DenoiserSpec, dims: Dims, trials: usize, seed: u64) -> Result<f64> {
    spec.validate()?;
    dims.validate()?;
    if trials == 0 {
        return Err(Error::param("Lipschitz audit needs at least one trial"));
    }
    let mut rng = SeededRng::new(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let scale = if trial % 2 == 0 { 1.0 } else { 1e-3 };
        let u = DataCube::from_raw(dims, (0..dims.len()).map(|_| rng.uniform()).collect());
        let du = denoise_unchecked(spec, &u);
        let mut offset = rng.normal_vec(dims.len());
        for step in 0..=LIPSCHITZ_REFINE_STEPS {
            let len = datacube::norm(&offset);
            if !(len > 0.0) {
                break;
            }
            let v = DataCube::from_raw(
                dims,
                u.values()
                    .iter()
                    .zip(&offset)
                    .map(|(a, o)| a + o * (scale / len))
                    .collect(),
            );
            let denom = datacube::distance(u.values(), v.values());
            if denom == 0.0 {
                break;
            }
            let dv = denoise_unchecked(spec, &v);
            worst = worst.max(datacube::distance(du.values(), dv.values()) / denom);
            if step < LIPSCHITZ_REFINE_STEPS {
                offset = dv.values().iter().zip(du.values()).map(|(a, b)| a - b).collect();
            }
        }
    }
    Ok(worst)
}
