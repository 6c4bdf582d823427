//! GRD raster container.
//!
//! Little-endian: a 16-byte magic, `rows: u32`, `cols: u32`, `channels: u8`
//! (always 4), then row-major interleaved complex64 samples in channel order
//! HH, HV, VH, VV.

use std::io::{self, Read, Write};

use num_complex::Complex64;
use thiserror::Error;

use crate::polsar::ScatteringPixel;

pub const GRD_MAGIC: &[u8; 16] = b"POLSARGRD\0\0\0\0\0\0\0";
pub const GRD_HEADER_LEN: usize = 16 + 4 + 4 + 1;
const CHANNELS: u8 = 4;

#[derive(Debug, Error)]
pub enum GrdError {
    #[error("bad GRD magic")]
    BadMagic,
    #[error("unsupported channel count {0}")]
    Channels(u8),
    #[error("GRD payload truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("GRD raster has zero size")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub pixels: Vec<ScatteringPixel>,
}

impl Raster {
    pub fn new(rows: usize, cols: usize, pixels: Vec<ScatteringPixel>) -> Self {
        assert_eq!(pixels.len(), rows * cols, "raster shape mismatch");
        Self { rows, cols, pixels }
    }

    /// Copies the `size × size` window at `(row0, col0)`.
    pub fn window(&self, row0: usize, col0: usize, size: usize) -> Vec<ScatteringPixel> {
        let mut out = Vec::with_capacity(size * size);
        for r in row0..row0 + size {
            let start = r * self.cols + col0;
            out.extend_from_slice(&self.pixels[start..start + size]);
        }
        out
    }
}

pub fn write_grd<W: Write>(mut w: W, raster: &Raster) -> io::Result<()> {
    w.write_all(GRD_MAGIC)?;
    w.write_all(&(raster.rows as u32).to_le_bytes())?;
    w.write_all(&(raster.cols as u32).to_le_bytes())?;
    w.write_all(&[CHANNELS])?;
    let mut buf = Vec::with_capacity(raster.cols * 32);
    for row in raster.pixels.chunks(raster.cols.max(1)) {
        buf.clear();
        for px in row {
            for c in [px.s_hh, px.s_hv, px.s_vh, px.s_vv] {
                buf.extend_from_slice(&(c.re as f32).to_le_bytes());
                buf.extend_from_slice(&(c.im as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn encode_grd(raster: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(GRD_HEADER_LEN + raster.pixels.len() * 32);
    write_grd(&mut out, raster).expect("writing to a Vec cannot fail");
    out
}

pub fn decode_grd(bytes: &[u8]) -> Result<Raster, GrdError> {
    if bytes.len() < GRD_HEADER_LEN {
        return Err(GrdError::Truncated { expected: GRD_HEADER_LEN, got: bytes.len() });
    }
    if &bytes[..16] != GRD_MAGIC {
        return Err(GrdError::BadMagic);
    }
    let rows = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
    let channels = bytes[24];
    if channels != CHANNELS {
        return Err(GrdError::Channels(channels));
    }
    if rows == 0 || cols == 0 {
        return Err(GrdError::Empty);
    }
    let payload = &bytes[GRD_HEADER_LEN..];
    let expected = rows * cols * 32;
    if payload.len() != expected {
        return Err(GrdError::Truncated { expected, got: payload.len() });
    }
    let f = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap()) as f64;
    let pixels = payload
        .chunks_exact(32)
        .map(|p| {
            let c = |k: usize| Complex64::new(f(&p[k * 8..k * 8 + 4]), f(&p[k * 8 + 4..k * 8 + 8]));
            ScatteringPixel::new(c(0), c(1), c(2), c(3))
        })
        .collect();
    Ok(Raster { rows, cols, pixels })
}

pub fn read_grd<R: Read>(mut r: R) -> Result<Raster, GrdError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_grd(&bytes)
}
