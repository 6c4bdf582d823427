//! Tile quicklooks.
//!
//! With raw pixels at hand the quicklook is a Pauli composite. Otherwise it
//! is drawn from the descriptor: the top of the image is filled with
//! (R, G, B) = (mean alpha bin, mean H bin, mean A bin), each scaled to
//! 0..=255 by histogram mass, and three bar charts below show the H, alpha
//! and A marginals.

use image::{ImageFormat, Rgb, RgbImage};

use crate::descriptor::TileDescriptor;
use crate::ingest::extract::Bins;
use crate::polsar::ScatteringPixel;

pub const WIDTH: u32 = 96;
const SWATCH: u32 = 64;
const CHART: u32 = 32;

/// Marginal mass per bin along H, alpha and A.
pub fn marginals(d: &TileDescriptor, bins: &Bins) -> [Vec<f64>; 3] {
    let mut m = [vec![0.0; bins.h], vec![0.0; bins.alpha], vec![0.0; bins.a]];
    for (&i, &v) in d.vector.indices().iter().zip(d.vector.values()) {
        let (ih, ialpha, ia) = bins.unflatten(i);
        m[0][ih] += v as f64;
        m[1][ialpha] += v as f64;
        m[2][ia] += v as f64;
    }
    m
}

fn mean_bin(m: &[f64]) -> u8 {
    let mass: f64 = m.iter().sum();
    if mass <= 0.0 || m.len() < 2 {
        return 0;
    }
    let mean = m.iter().enumerate().map(|(i, v)| i as f64 * v).sum::<f64>() / mass;
    (mean / (m.len() - 1) as f64 * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn render(d: &TileDescriptor, bins: &Bins) -> RgbImage {
    let [h, alpha, a] = marginals(d, bins);
    let fill = Rgb([mean_bin(&alpha), mean_bin(&h), mean_bin(&a)]);
    let mut img = RgbImage::from_pixel(WIDTH, SWATCH + CHART, Rgb([0, 0, 0]));
    for y in 0..SWATCH {
        for x in 0..WIDTH {
            img.put_pixel(x, y, fill);
        }
    }
    let panel = WIDTH / 3;
    let colours = [Rgb([40, 220, 40]), Rgb([230, 40, 40]), Rgb([60, 90, 240])];
    for (k, (m, colour)) in [&h, &alpha, &a].into_iter().zip(colours).enumerate() {
        let x0 = k as u32 * panel;
        let bar = (panel / m.len() as u32).max(1);
        for (b, &v) in m.iter().enumerate() {
            let height = (v.clamp(0.0, 1.0) * CHART as f64).round() as u32;
            for x in x0 + b as u32 * bar..(x0 + (b as u32 + 1) * bar).min(x0 + panel) {
                for y in SWATCH + CHART - height..SWATCH + CHART {
                    img.put_pixel(x, y, colour);
                }
            }
        }
    }
    img
}

fn encode(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("encoding to memory");
    out.into_inner()
}

pub fn png(d: &TileDescriptor, bins: &Bins) -> Vec<u8> {
    encode(&render(d, bins))
}

/// Pauli composite of a `size x size` pixel window: R = |HH - VV|,
/// G = |HV + VH|, B = |HH + VV|, stretched so the 98th percentile of all
/// channels is white.
pub fn render_pauli(pixels: &[ScatteringPixel], size: usize) -> RgbImage {
    assert_eq!(pixels.len(), size * size, "window shape mismatch");
    let channels: Vec<[f64; 3]> = pixels
        .iter()
        .map(|p| [(p.s_hh - p.s_vv).norm(), (p.s_hv + p.s_vh).norm(), (p.s_hh + p.s_vv).norm()])
        .collect();
    let mut all: Vec<f64> = channels.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    all.sort_by(f64::total_cmp);
    let white = all.get(all.len() * 98 / 100).copied().filter(|&w| w > 0.0).unwrap_or(1.0);
    let level = |v: f64| (v / white * 255.0).round().clamp(0.0, 255.0) as u8;
    let mut img = RgbImage::new(size as u32, size as u32);
    for (i, [r, g, b]) in channels.into_iter().enumerate() {
        img.put_pixel((i % size) as u32, (i / size) as u32, Rgb([level(r), level(g), level(b)]));
    }
    img
}

pub fn pauli_png(pixels: &[ScatteringPixel], size: usize) -> Vec<u8> {
    encode(&render_pauli(pixels, size))
}
