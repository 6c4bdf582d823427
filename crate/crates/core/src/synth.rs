//! Labelled synthetic archives and synthetic descriptor sets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, WeightedIndex};

use crate::descriptor::{DescriptorMeta, GeoBounds, TileDescriptor};
use crate::ingest::grd::{encode_grd, Raster};
use crate::ingest::product::{GeoPoint, ProductRecord, ProductSource, SourceError};
use crate::ingest::tiling::tile_id;
use crate::polsar::{synth_product, ScattererClass};
use crate::vector::SparseVector;

pub const LABELS_FILE: &str = "labels.csv";

/// Shape of a synthetic archive. Each `tile_size` block of a product is
/// filled with one scatterer class drawn from the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchiveSpec {
    pub products: usize,
    pub rows: usize,
    pub cols: usize,
    pub tile_size: usize,
    pub seed: u64,
}

impl Default for ArchiveSpec {
    fn default() -> Self {
        Self { products: 64, rows: 416, cols: 384, tile_size: 32, seed: 2016 }
    }
}

impl ArchiveSpec {
    pub fn product_id(&self, p: usize) -> String {
        format!("synth-{p:03}")
    }

    fn blocks(&self) -> (usize, usize) {
        (self.rows.div_ceil(self.tile_size), self.cols.div_ceil(self.tile_size))
    }

    fn product_seed(&self, p: usize) -> u64 {
        self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(p as u64)
    }

    /// Class of every tile block of product `p`, row-major by block.
    pub fn block_classes(&self, p: usize) -> Vec<ScattererClass> {
        let (br, bc) = self.blocks();
        let mut rng = ChaCha8Rng::seed_from_u64(self.product_seed(p) ^ 0x5a5a);
        (0..br * bc).map(|_| ScattererClass::ALL[rng.gen_range(0..3)]).collect()
    }

    pub fn record(&self, p: usize) -> ProductRecord {
        let acquired: DateTime<Utc> = "2014-01-01T00:00:00Z".parse().unwrap();
        let mut sensor_params = BTreeMap::new();
        sensor_params.insert("band".to_string(), serde_json::json!("L"));
        sensor_params.insert("look".to_string(), serde_json::json!(if p % 2 == 0 { "left" } else { "right" }));
        ProductRecord {
            product_id: self.product_id(p),
            uri: format!("{}.grd", self.product_id(p)),
            rows: self.rows,
            cols: self.cols,
            pixel_spacing_m: 6.0,
            geo_origin: GeoPoint { lat: 30.0 + (p / 8) as f64 * 0.5, lon: -120.0 + (p % 8) as f64 * 0.5 },
            acquisition_time: acquired + Duration::days(7 * p as i64),
            sensor_params,
        }
    }

    pub fn raster(&self, p: usize) -> Raster {
        let blocks = self.block_classes(p);
        let (_, bc) = self.blocks();
        let mut map = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                map.push(blocks[(r / self.tile_size) * bc + c / self.tile_size]);
            }
        }
        Raster::new(self.rows, self.cols, synth_product(&map, self.product_seed(p)))
    }

    /// Generator class of every full tile (no overlap), keyed by tile id.
    pub fn labels(&self) -> BTreeMap<String, ScattererClass> {
        let (_, bc) = self.blocks();
        let mut out = BTreeMap::new();
        for p in 0..self.products {
            let classes = self.block_classes(p);
            for br in 0..self.rows / self.tile_size {
                for bcol in 0..self.cols / self.tile_size {
                    let id = tile_id(&self.product_id(p), br * self.tile_size, bcol * self.tile_size);
                    out.insert(id, classes[br * bc + bcol]);
                }
            }
        }
        out
    }

    pub fn tiles_per_product(&self) -> usize {
        (self.rows / self.tile_size) * (self.cols / self.tile_size)
    }
}

/// Products generated on demand; nothing touches the disk.
#[derive(Debug, Clone)]
pub struct SynthSource {
    pub spec: ArchiveSpec,
}

impl ProductSource for SynthSource {
    fn list(&self) -> Result<Vec<ProductRecord>, SourceError> {
        Ok((0..self.spec.products).map(|p| self.spec.record(p)).collect())
    }

    fn fetch(&self, product: &ProductRecord) -> Result<Raster, SourceError> {
        (0..self.spec.products)
            .find(|&p| self.spec.product_id(p) == product.product_id)
            .map(|p| self.spec.raster(p))
            .ok_or_else(|| SourceError::NotFound(product.product_id.clone()))
    }
}

/// Writes manifests, GRD rasters and a tile label file into `dir`.
pub fn write_archive(dir: &Path, spec: &ArchiveSpec) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for p in 0..spec.products {
        let rec = spec.record(p);
        fs::write(dir.join(&rec.uri), encode_grd(&spec.raster(p)))?;
        fs::write(dir.join(format!("{}.json", rec.product_id)), serde_json::to_vec_pretty(&rec)?)?;
    }
    let mut csv = String::from("tile_id,class\n");
    for (id, class) in spec.labels() {
        csv.push_str(&format!("{id},{}\n", class.as_str()));
    }
    fs::write(dir.join(LABELS_FILE), csv)?;
    Ok(())
}

/// Reads the `tile_id,class` label file written by [`write_archive`].
pub fn read_labels(dir: &Path) -> std::io::Result<BTreeMap<String, ScattererClass>> {
    let bad = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidData, m);
    let text = fs::read_to_string(dir.join(LABELS_FILE))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (id, class) = l.rsplit_once(',').ok_or_else(|| bad(format!("bad label line {l:?}")))?;
            Ok((id.to_string(), class.parse().map_err(|_| bad(format!("unknown class {class:?}")))?))
        })
        .collect()
}

/// Clustered sparse histograms: each point draws `draws` samples from one
/// of `clusters` random sparse bin distributions and is L1-normalized.
pub fn sparse_histograms(n: usize, dim: usize, clusters: usize, draws: usize, seed: u64) -> Vec<SparseVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let support = 24.min(dim);
    let centers: Vec<(Vec<u32>, WeightedIndex<f64>)> = (0..clusters.max(1))
        .map(|_| {
            let mut bins: Vec<u32> = rand::seq::index::sample(&mut rng, dim, support).into_iter().map(|i| i as u32).collect();
            bins.sort_unstable();
            let weights: Vec<f64> = (0..support).map(|_| rng.gen_range(0.05..1.0f64).powi(2)).collect();
            (bins, WeightedIndex::new(weights).unwrap())
        })
        .collect();
    (0..n)
        .map(|_| {
            let (bins, weights) = &centers[rng.gen_range(0..centers.len())];
            let mut counts = vec![0u32; bins.len()];
            for _ in 0..draws {
                counts[weights.sample(&mut rng)] += 1;
            }
            let (idx, vals): (Vec<u32>, Vec<f32>) = bins
                .iter()
                .zip(&counts)
                .filter(|(_, &c)| c > 0)
                .map(|(&b, &c)| (b, (c as f64 / draws as f64) as f32))
                .unzip();
            SparseVector::new(dim, idx, vals).expect("valid histogram")
        })
        .collect()
}

/// Wraps synthetic histograms as stored descriptors of a fake product set.
pub fn synthetic_descriptors(n: usize, dim: usize, seed: u64) -> Vec<TileDescriptor> {
    let per_product = 1000;
    sparse_histograms(n, dim, 64, 100, seed)
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let p = i / per_product;
            let (r, c) = ((i % per_product) / 40, i % 40);
            let lat = 30.0 + r as f64 * 0.03;
            let lon = -120.0 + c as f64 * 0.03;
            TileDescriptor::new(
                tile_id(&format!("bench-{p:04}"), r * 512, c * 512),
                GeoBounds { min_lat: lat, min_lon: lon, max_lat: lat + 0.03, max_lon: lon + 0.03 },
                v,
                DescriptorMeta {
                    product_id: format!("bench-{p:04}"),
                    acquisition_time: "2015-01-01T00:00:00Z".parse().unwrap(),
                    sensor_params: Default::default(),
                },
            )
            .expect("valid descriptor")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_shape_and_labels() {
        let spec = ArchiveSpec { products: 2, rows: 70, cols: 64, tile_size: 32, seed: 1 };
        assert_eq!(spec.tiles_per_product(), 4);
        let labels = spec.labels();
        assert_eq!(labels.len(), 8);
        assert!(labels.contains_key("synth-001/32/32"));
        assert_eq!(spec.raster(1).pixels, spec.raster(1).pixels);
        assert_eq!(spec.block_classes(0).len(), 3 * 2);
    }

    #[test]
    fn written_archive_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ArchiveSpec { products: 2, rows: 32, cols: 32, tile_size: 16, seed: 3 };
        write_archive(dir.path(), &spec).unwrap();
        let src = crate::ingest::DirSource::new(dir.path());
        let listed = src.list().unwrap();
        assert_eq!(listed.len(), 2);
        assert_eq!(src.fetch(&listed[1]).unwrap(), spec.raster(1));
        assert_eq!(read_labels(dir.path()).unwrap(), spec.labels());
    }

    #[test]
    fn histograms_are_normalized_and_sparse() {
        let pts = sparse_histograms(200, 512, 8, 100, 5);
        for p in &pts {
            let l1: f64 = p.values().iter().map(|&v| v as f64).sum();
            assert!((l1 - 1.0).abs() < 1e-6);
            assert!(p.nnz() <= 24);
        }
        assert_eq!(pts, sparse_histograms(200, 512, 8, 100, 5));
        assert_eq!(synthetic_descriptors(1500, 512, 1)[1499].meta.product_id, "bench-0001");
    }
}
