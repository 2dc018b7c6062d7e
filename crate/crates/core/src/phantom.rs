//! Deterministic synthetic multispectral ground truth.
//!
//! A phantom is a constant background painted over by `n_blobs` shapes in
//! sequence: axis-aligned rectangles (opaque) and truncated isotropic
//! Gaussian bumps (blended with weight `exp(−d²/2ρ²)` inside `d ≤ 3ρ`).
//! Each shape carries a quadratic spectral signature `c₀ + c₁t + c₂t²`
//! over the normalized band coordinate `t ∈ [0, 1]`. Because blending
//! weights do not depend on the band, every pixel's spectrum is a convex
//! combination of signatures and the background, which keeps values in
//! `[0, 1]` and bounds the spectral curvature.

use serde::{Deserialize, Serialize};

use crate::datacube::{DataCube, Dims};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

const C0_RANGE: (f64, f64) = (0.45, 0.55);
const C1_MAX: f64 = 0.2;
/// Bound on `|c₂|` of every signature.
pub const C2_MAX: f64 = 0.2;
const BUMP_CUTOFF: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: Dims,
    pub n_blobs: usize,
    pub background: f64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.n_blobs == 0 {
            return Err(Error::param("phantom needs at least one blob"));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(Error::param(format!(
                "background must lie in [0, 1], got {}",
                self.background
            )));
        }
        Ok(())
    }

    /// Upper bound on `|v[b+1] − 2v[b] + v[b−1]|` along any pixel's spectrum.
    pub fn max_spectral_curvature(&self) -> f64 {
        if self.dims.bands < 3 {
            return 0.0;
        }
        let h = 1.0 / (self.dims.bands - 1) as f64;
        2.0 * C2_MAX * h * h
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect {
        row0: usize,
        col0: usize,
        rows: usize,
        cols: usize,
    },
    Bump {
        row: f64,
        col: f64,
        radius: f64,
    },
}

impl Shape {
    /// Blending weight of this shape at a pixel.
    fn weight(&self, r: usize, c: usize) -> f64 {
        match *self {
            Shape::Rect {
                row0,
                col0,
                rows,
                cols,
            } => {
                let inside = (row0..row0 + rows).contains(&r) && (col0..col0 + cols).contains(&c);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            Shape::Bump { row, col, radius } => {
                let d2 = (r as f64 - row).powi(2) + (c as f64 - col).powi(2);
                if d2 > (BUMP_CUTOFF * radius).powi(2) {
                    0.0
                } else {
                    (-d2 / (2.0 * radius * radius)).exp()
                }
            }
        }
    }
}

fn random_shape(rng: &mut SeededRng, dims: Dims) -> Shape {
    if rng.uniform() < 0.5 {
        let span = |rng: &mut SeededRng, n: usize| {
            let lo = (n / 8).max(1);
            let hi = (n / 3).max(lo);
            let len = rng.int_inclusive(lo, hi).min(n.saturating_sub(1).max(1));
            let start = rng.int_inclusive(0, n - len);
            (start, len)
        };
        let (row0, rows) = span(rng, dims.height);
        let (col0, cols) = span(rng, dims.width);
        Shape::Rect {
            row0,
            col0,
            rows,
            cols,
        }
    } else {
        let small = dims.height.min(dims.width) as f64;
        let radius = rng.range((small / 16.0).max(0.5), (small / 6.0).max(0.75));
        Shape::Bump {
            row: rng.range(0.0, dims.height as f64),
            col: rng.range(0.0, dims.width as f64),
            radius,
        }
    }
}

/// Generates the phantom described by `spec`. Identical specs give
/// bit-identical cubes.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<DataCube> {
    spec.validate()?;
    let dims = spec.dims;
    let mut rng = SeededRng::new(spec.seed);
    let mut values = vec![spec.background; dims.len()];
    let t_step = if dims.bands > 1 {
        1.0 / (dims.bands - 1) as f64
    } else {
        0.0
    };
    for _ in 0..spec.n_blobs {
        let shape = random_shape(&mut rng, dims);
        let c0 = rng.range(C0_RANGE.0, C0_RANGE.1);
        let c1 = rng.range(-C1_MAX, C1_MAX);
        let c2 = rng.range(-C2_MAX, C2_MAX);
        let signature: Vec<f64> = (0..dims.bands)
            .map(|b| {
                let t = b as f64 * t_step;
                c0 + c1 * t + c2 * t * t
            })
            .collect();
        for r in 0..dims.height {
            for c in 0..dims.width {
                let w = shape.weight(r, c);
                if w == 0.0 {
                    continue;
                }
                for (b, s) in signature.iter().enumerate() {
                    let i = dims.index(b, r, c);
                    values[i] = (1.0 - w) * values[i] + w * s;
                }
            }
        }
    }
    values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    DataCube::new(dims, values)
}
