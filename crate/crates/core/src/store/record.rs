//! Descriptor record codec (little-endian).
//!
//! ```text
//! tile_id   u32 len + UTF-8
//! geo       4 x f64 (min_lat, min_lon, max_lat, max_lon)
//! meta      u32 len + UTF-8 JSON
//! dim       u32
//! nnz       u32
//! indices   nnz x u32, ascending
//! values    nnz x f32
//! norm_sq   f64
//! ```

use crate::descriptor::{DescriptorMeta, GeoBounds, TileDescriptor};
use crate::vector::SparseVector;

use super::StoreError;

pub fn encode_record(d: &TileDescriptor, out: &mut Vec<u8>) {
    let meta = serde_json::to_vec(&d.meta).expect("metadata serializes");
    out.extend_from_slice(&(d.tile_id.len() as u32).to_le_bytes());
    out.extend_from_slice(d.tile_id.as_bytes());
    for v in d.geo_bounds.to_array() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(d.vector.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(d.vector.nnz() as u32).to_le_bytes());
    for i in d.vector.indices() {
        out.extend_from_slice(&i.to_le_bytes());
    }
    for v in d.vector.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&d.vector.norm_sq().to_le_bytes());
}

pub fn record_bytes(d: &TileDescriptor) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + d.tile_id.len() + d.vector.nnz() * 8);
    encode_record(d, &mut out);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| StoreError::Format("record truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, StoreError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes one record starting at `*pos`, advancing it.
pub fn decode_record(buf: &[u8], pos: &mut usize) -> Result<TileDescriptor, StoreError> {
    let mut c = Cursor { buf, pos: *pos };
    let bad = |m: String| StoreError::Format(m);

    let id_len = c.u32()? as usize;
    let tile_id = std::str::from_utf8(c.take(id_len)?).map_err(|e| bad(e.to_string()))?.to_string();
    let geo = GeoBounds::from_array([c.f64()?, c.f64()?, c.f64()?, c.f64()?]);
    let meta_len = c.u32()? as usize;
    let meta: DescriptorMeta = serde_json::from_slice(c.take(meta_len)?).map_err(|e| bad(e.to_string()))?;
    let dim = c.u32()? as usize;
    let nnz = c.u32()? as usize;
    let indices = c.take(nnz.checked_mul(4).ok_or_else(|| bad("nnz overflow".into()))?)?;
    let values = c.take(nnz * 4)?;
    let norm_sq = c.f64()?;

    let indices = indices.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect();
    let values = values.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    let vector = SparseVector::new(dim, indices, values).map_err(|e| bad(format!("{tile_id}: {e}")))?;
    if (vector.norm_sq() - norm_sq).abs() > 1e-12 {
        return Err(bad(format!("{tile_id}: cached norm {norm_sq} disagrees with values")));
    }
    let d = TileDescriptor::new(tile_id, geo, vector, meta).map_err(|e| bad(e.to_string()))?;
    *pos = c.pos;
    Ok(d)
}
