//! Fixed-size, geo-referenced tiles cut from a product raster.

use thiserror::Error;

use super::grd::Raster;
use super::product::ProductRecord;
use crate::descriptor::GeoBounds;
use crate::polsar::ScatteringPixel;

/// Meters per degree of latitude (spherical Earth).
const METERS_PER_DEG_LAT: f64 = 111_320.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TilingError {
    #[error("tile size {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("overlap {overlap} must be smaller than tile size {tile_size}")]
    Overlap { overlap: usize, tile_size: usize },
    #[error("raster is {got_rows}x{got_cols}, product says {rows}x{cols}")]
    Shape { rows: usize, cols: usize, got_rows: usize, got_cols: usize },
}

#[derive(Debug, Clone)]
pub struct Tile {
    pub tile_id: String,
    pub row0: usize,
    pub col0: usize,
    pub size: usize,
    pub geo_bounds: GeoBounds,
    /// `size × size`, row-major.
    pub pixels: Vec<ScatteringPixel>,
}

pub fn tile_id(product_id: &str, row0: usize, col0: usize) -> String {
    format!("{product_id}/{row0}/{col0}")
}

/// Splits a tile id back into (product, row0, col0).
pub fn parse_tile_id(id: &str) -> Option<(&str, usize, usize)> {
    let mut parts = id.rsplitn(3, '/');
    let col = parts.next()?.parse().ok()?;
    let row = parts.next()?.parse().ok()?;
    let product = parts.next()?;
    Some((product, row, col))
}

pub fn validate_tiling(tile_size: usize, overlap: usize) -> Result<(), TilingError> {
    if !tile_size.is_power_of_two() {
        return Err(TilingError::NotPowerOfTwo(tile_size));
    }
    if overlap >= tile_size {
        return Err(TilingError::Overlap { overlap, tile_size });
    }
    Ok(())
}

/// Top-left pixel offsets of every full tile. Depends only on the product
/// shape and the tiling parameters; partial edge tiles are dropped.
pub fn grid_positions(
    rows: usize,
    cols: usize,
    tile_size: usize,
    overlap: usize,
) -> Result<Vec<(usize, usize)>, TilingError> {
    validate_tiling(tile_size, overlap)?;
    let stride = tile_size - overlap;
    let axis = |len: usize| -> Vec<usize> {
        if len < tile_size {
            return Vec::new();
        }
        (0..=(len - tile_size) / stride).map(|i| i * stride).collect()
    };
    let rs = axis(rows);
    let cs = axis(cols);
    Ok(rs.iter().flat_map(|&r| cs.iter().map(move |&c| (r, c))).collect())
}

pub fn tile_count(rows: usize, cols: usize, tile_size: usize, overlap: usize) -> Result<usize, TilingError> {
    grid_positions(rows, cols, tile_size, overlap).map(|p| p.len())
}

/// Affine geo-referencing: rows run south and columns east from `geo_origin`.
pub fn geo_bounds(product: &ProductRecord, row0: usize, col0: usize, size: usize) -> GeoBounds {
    let spacing = product.pixel_spacing_m;
    let lat0 = product.geo_origin.lat;
    let lon0 = product.geo_origin.lon;
    let dlat = spacing / METERS_PER_DEG_LAT;
    let dlon = spacing / (METERS_PER_DEG_LAT * lat0.to_radians().cos().max(1e-12));
    let north = lat0 - row0 as f64 * dlat;
    let south = lat0 - (row0 + size) as f64 * dlat;
    let west = lon0 + col0 as f64 * dlon;
    let east = lon0 + (col0 + size) as f64 * dlon;
    GeoBounds { min_lat: south, min_lon: west, max_lat: north, max_lon: east }
}

pub fn tile_product<'a>(
    product: &'a ProductRecord,
    raster: &'a Raster,
    tile_size: usize,
    overlap: usize,
) -> Result<impl Iterator<Item = Tile> + 'a, TilingError> {
    if raster.rows != product.rows || raster.cols != product.cols {
        return Err(TilingError::Shape {
            rows: product.rows,
            cols: product.cols,
            got_rows: raster.rows,
            got_cols: raster.cols,
        });
    }
    let positions = grid_positions(product.rows, product.cols, tile_size, overlap)?;
    Ok(positions.into_iter().map(move |(r, c)| Tile {
        tile_id: tile_id(&product.product_id, r, c),
        row0: r,
        col0: c,
        size: tile_size,
        geo_bounds: geo_bounds(product, r, c, tile_size),
        pixels: raster.window(r, c, tile_size),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::product::GeoPoint;

    fn product(rows: usize, cols: usize) -> ProductRecord {
        ProductRecord {
            product_id: "p1".into(),
            uri: "p1.grd".into(),
            rows,
            cols,
            pixel_spacing_m: 6.0,
            geo_origin: GeoPoint { lat: 0.0, lon: 10.0 },
            acquisition_time: "2015-01-01T00:00:00Z".parse().unwrap(),
            sensor_params: Default::default(),
        }
    }

    #[test]
    fn grid_counts() {
        assert_eq!(tile_count(1024, 1024, 512, 0).unwrap(), 4);
        assert_eq!(tile_count(1280, 1024, 512, 0).unwrap(), 4);
        assert_eq!(tile_count(100, 1024, 512, 0).unwrap(), 0);
    }

    #[test]
    fn overlapping_grid_positions() {
        // Stride 256 over 1024: offsets 0, 256, 512 on each axis.
        let pos = grid_positions(1024, 1024, 512, 256).unwrap();
        assert_eq!(pos.len(), 9);
        let rows: Vec<_> = pos.iter().step_by(3).map(|p| p.0).collect();
        assert_eq!(rows, [0, 256, 512]);
    }

    #[test]
    fn rejects_bad_config() {
        assert_eq!(grid_positions(64, 64, 48, 0), Err(TilingError::NotPowerOfTwo(48)));
        assert!(matches!(grid_positions(64, 64, 32, 32), Err(TilingError::Overlap { .. })));
    }

    #[test]
    fn tile_512_at_6m_spans_about_3km() {
        let b = geo_bounds(&product(1024, 1024), 0, 0, 512);
        let km_ns = (b.max_lat - b.min_lat) * METERS_PER_DEG_LAT / 1000.0;
        let km_ew = (b.max_lon - b.min_lon) * METERS_PER_DEG_LAT / 1000.0;
        assert!((km_ns - 3.072).abs() < 1e-9);
        assert!((km_ew - 3.072).abs() < 1e-9);
    }

    #[test]
    fn tiles_carry_their_window() {
        let p = product(8, 8);
        let pixels = (0..64)
            .map(|i| {
                let v = num_complex::Complex64::new(i as f64, 0.0);
                ScatteringPixel::new(v, v, v, v)
            })
            .collect();
        let raster = Raster::new(8, 8, pixels);
        let tiles: Vec<_> = tile_product(&p, &raster, 4, 0).unwrap().collect();
        assert_eq!(tiles.len(), 4);
        assert_eq!(tiles[3].tile_id, "p1/4/4");
        assert_eq!(tiles[3].pixels[0].s_hh.re, 36.0);
        assert_eq!(tiles[1].pixels[5].s_hh.re, 13.0);
        assert_eq!(parse_tile_id("a/b/12/40"), Some(("a/b", 12, 40)));
        assert_eq!(parse_tile_id("nope"), None);
    }
}
