//! Index file codec.
//!
//! ```text
//! magic "TSVQIDX1"
//! version u32, dim u32, node_count u64, total_points u64
//! params  n_min u64, wcss_min f64, h_max u32, kmeans_tol f64,
//!         kmeans_max_iter u32, seed u64
//! nodes   node_id u64, parent u64 (MAX = none), code_len u16, packed bits
//!         (MSB first), member_count u64, wcss f64, centroid_norm_sq f64,
//!         centroid dim x f32, child0 u64, child1 u64 (MAX = none), leaf_reason u8
//! assign  count u64, then (tile_id u32 len + UTF-8, leaf u64) sorted by tile_id
//! crc32   over everything above
//! ```
//!
//! The worker count is not stored: it never changes the tree, and leaving
//! it out keeps files identical across worker counts.

use std::path::Path;

use super::tree::{Assignment, LeafReason, TsvqNode, TsvqParams, TsvqTree};
use super::TsvqError;
use crate::vector::Centroid;

pub const MAGIC: &[u8; 8] = b"TSVQIDX1";
const NONE: u64 = u64::MAX;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

fn pack_bits(code: &str) -> Vec<u8> {
    let mut out = vec![0u8; code.len().div_ceil(8)];
    for (i, b) in code.bytes().enumerate() {
        if b == b'1' {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], len: usize) -> String {
    (0..len).map(|i| if bytes[i / 8] & (0x80 >> (i % 8)) != 0 { '1' } else { '0' }).collect()
}

pub fn serialize(tree: &TsvqTree, assignment: &Assignment) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(tree.version);
    w.u32(tree.dim as u32);
    w.u64(tree.nodes.len() as u64);
    w.u64(tree.total_points);
    let p = &tree.params;
    w.u64(p.n_min as u64);
    w.f64(p.wcss_min);
    w.u32(p.h_max as u32);
    w.f64(p.kmeans_tol);
    w.u32(p.kmeans_max_iter as u32);
    w.u64(p.seed);
    for n in &tree.nodes {
        w.u64(n.node_id);
        w.u64(n.parent.unwrap_or(NONE));
        w.u16(n.codeword.len() as u16);
        w.0.extend_from_slice(&pack_bits(&n.codeword));
        w.u64(n.member_count);
        w.f64(n.wcss);
        w.f64(n.centroid.norm_sq());
        for v in n.centroid.to_f32() {
            w.0.extend_from_slice(&v.to_le_bytes());
        }
        let [c0, c1] = n.children.unwrap_or([NONE, NONE]);
        w.u64(c0);
        w.u64(c1);
        w.u8(n.leaf_reason.map_or(0, LeafReason::code));
    }
    w.u64(assignment.leaves.len() as u64);
    for (tile, &leaf) in &assignment.leaves {
        w.u32(tile.len() as u32);
        w.0.extend_from_slice(tile.as_bytes());
        w.u64(leaf);
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TsvqError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| TsvqError::Format("index truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, TsvqError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, TsvqError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, TsvqError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, TsvqError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, TsvqError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn opt(v: u64) -> Option<u64> {
    (v != NONE).then_some(v)
}

pub fn deserialize(bytes: &[u8]) -> Result<(TsvqTree, Assignment), TsvqError> {
    let bad = |m: &str| TsvqError::Format(m.to_string());
    if bytes.len() < MAGIC.len() + 4 || &bytes[..8] != MAGIC {
        return Err(bad("not an index file"));
    }
    let body = &bytes[..bytes.len() - 4];
    let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != super::tree::FORMAT_VERSION {
        return Err(TsvqError::Format(format!("unsupported index version {version}")));
    }
    if crc32fast::hash(body) != crc {
        return Err(bad("index checksum mismatch"));
    }
    let dim = r.u32()? as usize;
    let node_count = r.u64()?;
    let total_points = r.u64()?;
    let params = TsvqParams {
        n_min: r.u64()? as usize,
        wcss_min: r.f64()?,
        h_max: r.u32()? as usize,
        kmeans_tol: r.f64()?,
        kmeans_max_iter: r.u32()? as usize,
        seed: r.u64()?,
        num_partitions: 1,
    };
    // Each node needs at least its fixed-size fields.
    if node_count.saturating_mul(59 + 4 * dim as u64) > body.len() as u64 {
        return Err(bad("node count exceeds file size"));
    }
    let mut nodes = Vec::with_capacity(node_count as usize);
    for _ in 0..node_count {
        let node_id = r.u64()?;
        let parent = opt(r.u64()?);
        let code_len = r.u16()? as usize;
        let codeword = unpack_bits(r.take(code_len.div_ceil(8))?, code_len);
        let member_count = r.u64()?;
        let wcss = r.f64()?;
        let norm_sq = r.f64()?;
        let values: Vec<f32> =
            r.take(4 * dim)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let centroid = Centroid::from_f32(&values);
        if centroid.norm_sq().to_bits() != norm_sq.to_bits() {
            return Err(TsvqError::Format(format!("node {node_id}: cached centroid norm disagrees")));
        }
        let children = match (opt(r.u64()?), opt(r.u64()?)) {
            (None, None) => None,
            (Some(a), Some(b)) => Some([a, b]),
            _ => return Err(TsvqError::Format(format!("node {node_id} has a single child"))),
        };
        let leaf_reason = LeafReason::from_code(r.u8()?).ok_or_else(|| bad("bad leaf reason"))?;
        nodes.push(TsvqNode { node_id, parent, codeword, centroid, member_count, wcss, children, leaf_reason });
    }
    let count = r.u64()?;
    if count > body.len() as u64 {
        return Err(bad("assignment count exceeds file size"));
    }
    let mut assignment = Assignment::default();
    let mut last: Option<String> = None;
    for _ in 0..count {
        let len = r.u32()? as usize;
        let tile = std::str::from_utf8(r.take(len)?).map_err(|_| bad("tile id is not UTF-8"))?.to_string();
        let leaf = r.u64()?;
        if last.as_ref().is_some_and(|l| *l >= tile) {
            return Err(bad("assignment not sorted"));
        }
        last = Some(tile.clone());
        assignment.leaves.insert(tile, leaf);
    }
    if r.pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    let tree = TsvqTree { params, dim, nodes, total_points, version };
    tree.validate()?;
    assignment.validate(&tree)?;
    Ok((tree, assignment))
}

pub fn write_index(path: &Path, tree: &TsvqTree, assignment: &Assignment) -> Result<(), TsvqError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serialize(tree, assignment))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_index(path: &Path) -> Result<(TsvqTree, Assignment), TsvqError> {
    deserialize(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsvq::build::build_tree;
    use crate::tsvq::NormMode;
    use crate::vector::SparseVector;
    use rand::{Rng, SeedableRng};

    fn fixture() -> (TsvqTree, Assignment) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<SparseVector> = (0..400)
            .map(|_| SparseVector::from_dense(&[rng.gen_range(0.0..1.0f32), rng.gen_range(0.0..1.0), 0.0]).unwrap())
            .collect();
        let params = TsvqParams { n_min: 4, h_max: 10, wcss_min: 0.0, ..Default::default() };
        let (tree, leaf_of, _) = build_tree(&pts, &params, NormMode::Cached).unwrap();
        let assignment = Assignment { leaves: leaf_of.iter().enumerate().map(|(i, &l)| (format!("t{i:04}"), l)).collect() };
        (tree, assignment)
    }

    #[test]
    fn round_trip_identity() {
        let (tree, a) = fixture();
        assert!(tree.nodes.len() >= 100, "only {} nodes", tree.nodes.len());
        let bytes = serialize(&tree, &a);
        let (t2, a2) = deserialize(&bytes).unwrap();
        assert_eq!(t2, tree);
        assert_eq!(a2, a);
        assert_eq!(serialize(&t2, &a2), bytes);
    }

    #[test]
    fn truncation_and_version_flip() {
        let (tree, a) = fixture();
        let bytes = serialize(&tree, &a);
        for cut in [0, 7, 12, 100, bytes.len() - 1] {
            assert!(matches!(deserialize(&bytes[..cut]), Err(TsvqError::Format(_))), "cut {cut}");
        }
        let mut v = bytes.clone();
        v[8] ^= 0x01;
        assert!(matches!(deserialize(&v), Err(TsvqError::Format(m)) if m.contains("version")));
        let mut c = bytes.clone();
        c[200] ^= 0x40;
        assert!(matches!(deserialize(&c), Err(TsvqError::Format(_))));
    }

    #[test]
    fn bit_packing() {
        assert_eq!(pack_bits("1"), vec![0x80]);
        assert_eq!(pack_bits("000000001"), vec![0x00, 0x80]);
        assert_eq!(unpack_bits(&pack_bits("0110100111"), 10), "0110100111");
    }
}
