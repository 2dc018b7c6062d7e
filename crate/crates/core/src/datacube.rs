//! Multispectral datacubes, vector helpers and the MSD binary format.
//!
//! A cube of `height × width × bands` voxels is stored flat, band-major and
//! then row-major inside each band: voxel `(band, row, col)` lives at
//! `band·H·W + row·W + col`. Operators and file I/O share this order.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};

pub const MSD_MAGIC: &[u8; 4] = b"MSD1";
pub const MSD_HEADER_LEN: usize = 16;

/// Spatial and spectral extent of a cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
}

impl Dims {
    pub const fn new(height: usize, width: usize, bands: usize) -> Self {
        Self { height, width, bands }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.bands
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixels per band.
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, band: usize, row: usize, col: usize) -> usize {
        band * self.plane() + row * self.width + col
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::param(format!("dimensions must be positive, got {self}")));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.bands)
    }
}

impl std::str::FromStr for Dims {
    type Err = Error;

    /// Parses `HxWxB`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['x', 'X']).collect();
        let bad = || Error::param(format!("expected dimensions as HxWxB, got `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut n = [0usize; 3];
        for (slot, p) in n.iter_mut().zip(&parts) {
            *slot = p.trim().parse().map_err(|_| bad())?;
        }
        let dims = Dims::new(n[0], n[1], n[2]);
        dims.validate()?;
        Ok(dims)
    }
}

/// The unknown `x`: a spatiospectral tensor with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCube {
    dims: Dims,
    values: Vec<f64>,
}

impl DataCube {
    pub fn new(dims: Dims, values: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if values.len() != dims.len() {
            return Err(Error::shape(format!(
                "{dims} cube needs {} values, got {}",
                dims.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { dims, values })
    }

    /// Caller guarantees the length matches; finiteness is not checked.
    pub(crate) fn from_raw(dims: Dims, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), dims.len());
        Self { dims, values }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::from_raw(dims, vec![0.0; dims.len()])
    }

    pub fn constant(dims: Dims, value: f64) -> Self {
        Self::from_raw(dims, vec![value; dims.len()])
    }

    /// Builds a cube from `f(band, row, col)`.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(dims.len());
        for b in 0..dims.bands {
            for r in 0..dims.height {
                for c in 0..dims.width {
                    values.push(f(b, r, c));
                }
            }
        }
        Self::new(dims, values)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.values[self.dims.index(band, row, col)]
    }

    /// Contiguous slice holding one spectral band.
    pub fn band(&self, band: usize) -> &[f64] {
        let plane = self.dims.plane();
        &self.values[band * plane..(band + 1) * plane]
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn dot(&self, other: &DataCube) -> Result<f64> {
        self.ensure_same_dims(other)?;
        Ok(dot(&self.values, &other.values))
    }

    /// `‖self − other‖₂`.
    pub fn distance(&self, other: &DataCube) -> Result<f64> {
        self.ensure_same_dims(other)?;
        Ok(distance(&self.values, &other.values))
    }

    pub fn ensure_same_dims(&self, other: &DataCube) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "cube dimensions differ: {} vs {}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn ensure_dims(&self, dims: Dims) -> Result<()> {
        if self.dims != dims {
            return Err(Error::shape(format!("expected a {dims} cube, got {}", self.dims)));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, alpha: f64) -> DataCube {
        Self::from_raw(self.dims, self.values.iter().map(|v| alpha * v).collect())
    }

    /// Entrywise `self + alpha·other`.
    pub fn add_scaled(&self, alpha: f64, other: &DataCube) -> Result<DataCube> {
        self.ensure_same_dims(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Ok(Self::from_raw(self.dims, values))
    }

    pub fn sub(&self, other: &DataCube) -> Result<DataCube> {
        self.ensure_same_dims(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::from_raw(self.dims, values))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// A measurement vector `y` with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector(Vec<f64>);

impl MeasurementVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::shape("measurement vector must be non-empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite measurement at index {i}")));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &MeasurementVector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::shape(format!(
                "measurement lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(dot(&self.0, &other.0))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Signal-to-noise ratio `20·log₁₀(‖reference‖ / ‖reference − estimate‖)` in dB.
///
/// Returns `f64::INFINITY` when the estimate is exact.
pub fn snr_db(reference: &DataCube, estimate: &DataCube) -> Result<f64> {
    reference.ensure_same_dims(estimate)?;
    let signal = reference.norm();
    if signal == 0.0 {
        return Err(Error::Degenerate("reference cube has zero norm".into()));
    }
    let error = reference.distance(estimate)?;
    if error == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (signal / error).log10())
}

/// Writes `cube` in MSD format and returns the number of bytes written.
pub fn write_msd<W: Write>(cube: &DataCube, mut sink: W) -> Result<usize> {
    let dims = cube.dims();
    let mut header = [0u8; MSD_HEADER_LEN];
    header[..4].copy_from_slice(MSD_MAGIC);
    for (i, d) in [dims.height, dims.width, dims.bands].into_iter().enumerate() {
        let d =
            u32::try_from(d).map_err(|_| Error::param(format!("dimension {d} does not fit in 32 bits")))?;
        header[4 + 4 * i..8 + 4 * i].copy_from_slice(&d.to_le_bytes());
    }
    let mut buf = Vec::with_capacity(MSD_HEADER_LEN + 8 * cube.len());
    buf.extend_from_slice(&header);
    for v in cube.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(buf.len())
}

/// Decodes one MSD cube from `source`. Bytes after the payload are not read.
pub fn read_msd<R: Read>(mut source: R) -> Result<DataCube> {
    let mut header = [0u8; MSD_HEADER_LEN];
    let got = read_full(&mut source, &mut header)?;
    if got >= 4 && &header[..4] != MSD_MAGIC {
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&header[..4]);
        return Err(FormatError::BadMagic(magic).into());
    }
    if got < MSD_HEADER_LEN {
        return Err(FormatError::TruncatedHeader { got }.into());
    }
    let word = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (height, width, bands) = (word(0), word(1), word(2));
    if height == 0 || width == 0 || bands == 0 {
        return Err(FormatError::ZeroDimension { height, width, bands }.into());
    }
    let count = (height as usize)
        .checked_mul(width as usize)
        .and_then(|n| n.checked_mul(bands as usize))
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or(FormatError::TooLarge { height, width, bands })?;

    // Read incrementally so a lying header cannot force a huge allocation.
    let mut values = Vec::new();
    let mut chunk = vec![0u8; 8 * 4096];
    while values.len() < count {
        let want = (count - values.len()).min(4096) * 8;
        let got = read_full(&mut source, &mut chunk[..want])?;
        for bytes in chunk[..got - got % 8].chunks_exact(8) {
            values.push(f64::from_le_bytes(bytes.try_into().unwrap()));
        }
        if got < want {
            return Err(FormatError::TruncatedPayload {
                expected: count,
                got: values.len(),
            }
            .into());
        }
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite { index }.into());
    }
    let dims = Dims::new(height as usize, width as usize, bands as usize);
    Ok(DataCube::from_raw(dims, values))
}

/// Like `read_exact`, but reports how many bytes arrived before EOF.
fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
