//! Multichannel 2-D fields, bilinear resampling and the HDDG file format.
//!
//! Data is stored channel-major: `data[(c * height + row) * width + col]`.
//! Row 0 is the northern edge of the extent.

use std::path::Path;

use crate::error::{invalid, ParseError, Result};

/// Latitude/longitude bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoExtent {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeoExtent {
    /// Unit-square extent used by synthetic data; selects uniform area weights.
    pub const SENTINEL: GeoExtent = GeoExtent {
        lat_min: 0.0,
        lat_max: 1.0,
        lon_min: 0.0,
        lon_max: 1.0,
    };

    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let e = Self {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn is_sentinel(&self) -> bool {
        *self == Self::SENTINEL
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.lat_min, self.lat_max, self.lon_min, self.lon_max];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(invalid("extent contains non-finite bounds"));
        }
        if !(-90.0..=90.0).contains(&self.lat_min) || !(-90.0..=90.0).contains(&self.lat_max) {
            return Err(invalid(format!(
                "latitude bounds ({}, {}) outside [-90, 90]",
                self.lat_min, self.lat_max
            )));
        }
        if !(-180.0..360.0).contains(&self.lon_min) || !(-180.0..360.0).contains(&self.lon_max) {
            return Err(invalid(format!(
                "longitude bounds ({}, {}) outside [-180, 360)",
                self.lon_min, self.lon_max
            )));
        }
        if self.lat_min >= self.lat_max {
            return Err(invalid(format!(
                "lat_min {} must be below lat_max {}",
                self.lat_min, self.lat_max
            )));
        }
        Ok(())
    }
}

/// Spatial resolution `(h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(invalid(format!("shape ({h}, {w}) must be at least 1x1")));
        }
        Ok(Self { h, w })
    }

    pub fn area(&self) -> u64 {
        self.h as u64 * self.w as u64
    }

    pub fn fits_within(&self, other: Shape) -> bool {
        self.h <= other.h && self.w <= other.w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    channel_names: Vec<String>,
    extent: GeoExtent,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(
        height: usize,
        width: usize,
        channel_names: Vec<String>,
        extent: GeoExtent,
        data: Vec<f64>,
    ) -> Result<Self> {
        Shape::new(height, width)?;
        validate_channel_names(&channel_names)?;
        extent.validate()?;
        let expected = channel_names.len() * height * width;
        if data.len() != expected {
            return Err(invalid(format!(
                "data length {} does not match {} channels x {height} x {width}",
                data.len(),
                channel_names.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channel_names,
            extent,
            data,
        })
    }

    /// Grid filled with `value`, with channels named `c0, c1, ...`.
    pub fn constant(shape: Shape, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            shape.h,
            shape.w,
            default_names(channels),
            GeoExtent::SENTINEL,
            vec![value; channels * shape.h * shape.w],
        )
    }

    /// Single-channel grid on the sentinel extent, built from `f(row, col)`.
    pub fn from_fn(shape: Shape, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.h * shape.w);
        for r in 0..shape.h {
            for c in 0..shape.w {
                data.push(f(r, c));
            }
        }
        Self::new(shape.h, shape.w, default_names(1), GeoExtent::SENTINEL, data)
    }

    /// Same metadata as `self`, new data. The length must match.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.height, self.width, self.channel_names.clone(), self.extent, data)
    }

    // Internal constructor for values produced by finite arithmetic on
    // already-validated grids; callers check finiteness where it can fail.
    pub(crate) fn from_parts_unchecked(
        shape: Shape,
        channel_names: Vec<String>,
        extent: GeoExtent,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), channel_names.len() * shape.h * shape.w);
        Self {
            height: shape.h,
            width: shape.w,
            channel_names,
            extent,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn shape(&self) -> Shape {
        Shape {
            h: self.height,
            w: self.width,
        }
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn extent(&self) -> GeoExtent {
        self.extent
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn same_layout(&self, other: &Grid) -> bool {
        self.shape() == other.shape() && self.channels() == other.channels()
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_hddg_bytes()?)?;
        Ok(())
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self::from_hddg_bytes(&bytes)?)
    }
}

pub(crate) fn default_names(channels: usize) -> Vec<String> {
    (0..channels).map(|i| format!("c{i}")).collect()
}

fn validate_channel_names(names: &[String]) -> Result<()> {
    if names.is_empty() {
        return Err(invalid("a grid needs at least one channel"));
    }
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() {
            return Err(invalid(format!("channel {i} has an empty name")));
        }
        if names[..i].contains(n) {
            return Err(invalid(format!("duplicate channel name {n:?}")));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Interpolation taps for one output index along one axis.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

// Cell-center alignment: output cell i sits at source coordinate
// (i + 0.5) * n_in / n_out - 0.5, clamped to the source range.
fn taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    let scale = n_in as f64 / n_out as f64;
    let max = (n_in - 1) as f64;
    (0..n_out)
        .map(|i| {
            let u = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = u.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                frac: u - lo as f64,
            }
        })
        .collect()
}

fn resample(g: &Grid, target: Shape) -> Grid {
    if target == g.shape() {
        return g.clone();
    }
    let (h_in, w_in) = (g.height, g.width);
    let (h_out, w_out) = (target.h, target.w);
    let col_taps = taps(w_in, w_out);
    let row_taps = taps(h_in, h_out);
    let mut out = Vec::with_capacity(g.channels() * h_out * w_out);
    let mut tmp = vec![0.0; h_in * w_out];
    for c in 0..g.channels() {
        let plane = g.plane(c);
        for r in 0..h_in {
            let src = &plane[r * w_in..(r + 1) * w_in];
            let dst = &mut tmp[r * w_out..(r + 1) * w_out];
            for (d, t) in dst.iter_mut().zip(&col_taps) {
                *d = src[t.lo] * (1.0 - t.frac) + src[t.hi] * t.frac;
            }
        }
        for t in &row_taps {
            let a = &tmp[t.lo * w_out..(t.lo + 1) * w_out];
            let b = &tmp[t.hi * w_out..(t.hi + 1) * w_out];
            out.extend(a.iter().zip(b).map(|(x, y)| x * (1.0 - t.frac) + y * t.frac));
        }
    }
    Grid::from_parts_unchecked(target, g.channel_names.clone(), g.extent, out)
}

/// Bilinear reduction to a coarser (or equal) shape.
pub fn downsample(g: &Grid, target: Shape) -> Result<Grid> {
    Shape::new(target.h, target.w)?;
    if !target.fits_within(g.shape()) {
        return Err(invalid(format!(
            "downsample target {target} exceeds source shape {}",
            g.shape()
        )));
    }
    Ok(resample(g, target))
}

/// Bilinear interpolation to a finer (or equal) shape.
pub fn upsample(g: &Grid, target: Shape) -> Result<Grid> {
    Shape::new(target.h, target.w)?;
    if !g.shape().fits_within(target) {
        return Err(invalid(format!(
            "upsample target {target} is smaller than source shape {}",
            g.shape()
        )));
    }
    Ok(resample(g, target))
}

/// Resample to any shape: used where the direction is not fixed, such as
/// projecting a latent onto the next shape of a schedule.
pub fn resize(g: &Grid, target: Shape) -> Result<Grid> {
    Shape::new(target.h, target.w)?;
    if target.fits_within(g.shape()) || g.shape().fits_within(target) {
        Ok(resample(g, target))
    } else {
        // mixed direction: go through the per-axis maximum
        let mid = Shape {
            h: target.h.max(g.height),
            w: target.w.max(g.width),
        };
        Ok(resample(&resample(g, mid), target))
    }
}

/// Cosine-latitude weight per cell, row-major `[height][width]`.
pub fn area_weights(g: &Grid) -> Result<Vec<f64>> {
    let ext = g.extent;
    ext.validate()?;
    let n = g.height * g.width;
    if ext.is_sentinel() {
        return Ok(vec![1.0; n]);
    }
    let dlat = (ext.lat_max - ext.lat_min) / g.height as f64;
    let mut out = Vec::with_capacity(n);
    for r in 0..g.height {
        let lat = ext.lat_max - (r as f64 + 0.5) * dlat;
        let w = lat.to_radians().cos();
        if w <= 0.0 {
            return Err(invalid(format!(
                "row {r} centered at latitude {lat} has non-positive area weight"
            )));
        }
        out.extend(std::iter::repeat_n(w, g.width));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// HDDG format
// ---------------------------------------------------------------------------

pub const HDDG_MAGIC: [u8; 4] = *b"HDDG";
pub const HDDG_VERSION: u16 = 1;

impl Grid {
    /// Encode as HDDG. Values are narrowed to f32; a value that does not fit
    /// in a finite f32 is rejected.
    pub fn to_hddg_bytes(&self) -> Result<Vec<u8>> {
        let names_len: usize = self.channel_names.iter().map(|n| 2 + n.len()).sum();
        let mut out = Vec::with_capacity(4 + 2 + 12 + 32 + names_len + 4 * self.data.len());
        out.extend_from_slice(&HDDG_MAGIC);
        out.extend_from_slice(&HDDG_VERSION.to_le_bytes());
        for dim in [self.height, self.width, self.channels()] {
            let d = u32::try_from(dim).map_err(|_| invalid("dimension exceeds u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in [
            self.extent.lat_min,
            self.extent.lat_max,
            self.extent.lon_min,
            self.extent.lon_max,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for name in &self.channel_names {
            let len = u16::try_from(name.len())
                .map_err(|_| invalid(format!("channel name {name:?} longer than 65535 bytes")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for (i, &v) in self.data.iter().enumerate() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(invalid(format!("value {v} at index {i} does not fit in f32")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_hddg_bytes(bytes: &[u8]) -> Result<Self, ParseError> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4)?;
        if magic != HDDG_MAGIC {
            return Err(ParseError::BadMagic {
                expected: HDDG_MAGIC,
                found: magic.to_vec(),
            });
        }
        let version = r.u16()?;
        if version != HDDG_VERSION {
            return Err(ParseError::UnsupportedVersion {
                expected: HDDG_VERSION,
                found: version,
            });
        }
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let c = r.u32()? as usize;
        if h == 0 || w == 0 || c == 0 {
            return Err(ParseError::InvalidHeader(format!("zero dimension in {h}x{w}x{c}")));
        }
        let extent = GeoExtent {
            lat_min: r.f64()?,
            lat_max: r.f64()?,
            lon_min: r.f64()?,
            lon_max: r.f64()?,
        };
        extent
            .validate()
            .map_err(|e| ParseError::InvalidHeader(e.to_string()))?;
        let mut names = Vec::new();
        for i in 0..c {
            let len = r.u16()? as usize;
            let raw = r.take(len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| ParseError::InvalidHeader(format!("channel {i} name is not valid UTF-8")))?;
            names.push(name.to_owned());
        }
        validate_channel_names(&names).map_err(|e| ParseError::InvalidHeader(e.to_string()))?;
        let count = h
            .checked_mul(w)
            .and_then(|n| n.checked_mul(c))
            .ok_or_else(|| ParseError::InvalidHeader("payload size overflows".into()))?;
        let payload_len = count
            .checked_mul(4)
            .ok_or_else(|| ParseError::InvalidHeader("payload size overflows".into()))?;
        let payload = r.take(payload_len)?;
        let mut data = Vec::with_capacity(count);
        for (index, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
            if !v.is_finite() {
                return Err(ParseError::NonFinite { index });
            }
            data.push(v as f64);
        }
        if r.remaining() != 0 {
            return Err(ParseError::TrailingBytes(r.remaining()));
        }
        Ok(Grid::from_parts_unchecked(Shape { h, w }, names, extent, data))
    }
}

/// Little-endian cursor over a byte slice that reports truncation precisely.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], ParseError> {
        if self.remaining() < n {
            return Err(ParseError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.remaining(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16, ParseError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, ParseError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, ParseError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, ParseError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
