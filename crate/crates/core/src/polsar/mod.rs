//! Cloude-Pottier decomposition chain: scattering matrix, Pauli vector,
//! coherency matrix, eigendecomposition, and the (H, alpha-bar, A) triple.

mod eigen;
pub mod synth;

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};
use std::ops::{Add, Mul};

use num_complex::Complex64;
use thiserror::Error;

pub use synth::{synth_product, ScattererClass};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolsarError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate pixel: total backscattered power is zero")]
    DegeneratePixel,
}

pub type Result<T> = std::result::Result<T, PolsarError>;

/// Relative tolerance on `‖T − Tᴴ‖_F / ‖T‖_F`.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues down to `−PSD_TOL · trace` are treated as round-off and clamped.
pub const PSD_TOL: f64 = 1e-9;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// One quad-pol measurement.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScatteringPixel {
    pub s_hh: Complex64,
    pub s_hv: Complex64,
    pub s_vh: Complex64,
    pub s_vv: Complex64,
}

impl ScatteringPixel {
    pub fn new(s_hh: Complex64, s_hv: Complex64, s_vh: Complex64, s_vv: Complex64) -> Self {
        Self { s_hh, s_hv, s_vh, s_vv }
    }

    pub fn is_finite(&self) -> bool {
        [self.s_hh, self.s_hv, self.s_vh, self.s_vv].iter().all(|c| c.is_finite())
    }

    pub fn span(&self) -> f64 {
        self.s_hh.norm_sqr() + self.s_hv.norm_sqr() + self.s_vh.norm_sqr() + self.s_vv.norm_sqr()
    }
}

/// Pauli-basis target vector, built under reciprocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliVector(pub [Complex64; 3]);

impl PauliVector {
    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// 3x3 coherency matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherencyMatrix(pub [[Complex64; 3]; 3]);

impl Default for CoherencyMatrix {
    fn default() -> Self {
        Self::zero()
    }
}

impl CoherencyMatrix {
    pub fn zero() -> Self {
        Self([[ZERO; 3]; 3])
    }

    pub fn diagonal(d: [f64; 3]) -> Self {
        let mut t = Self::zero();
        for (i, v) in d.iter().enumerate() {
            t.0[i][i] = Complex64::new(*v, 0.0);
        }
        t
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0].re + self.0[1][1].re + self.0[2][2].re
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖T − Tᴴ‖_F`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += (self.0[i][j] - self.0[j][i].conj()).norm_sqr();
            }
        }
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|c| c.is_finite())
    }

    /// Conjugates T by the line-of-sight rotation
    /// `R(θ) = [[1,0,0],[0,cos2θ,−sin2θ],[0,sin2θ,cos2θ]]`, i.e. `R T Rᵀ`.
    pub fn roll_rotated(&self, theta: f64) -> Self {
        let (s, c) = (2.0 * theta).sin_cos();
        let r = [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]];
        let mut rt = [[ZERO; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rt[i][j] = (0..3).map(|k| self.0[k][j] * r[i][k]).sum();
            }
        }
        let mut out = [[ZERO; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| rt[i][k] * r[j][k]).sum();
            }
        }
        Self(out)
    }
}

impl Add for CoherencyMatrix {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += rhs.0[i][j];
            }
        }
        self
    }
}

impl Mul<f64> for CoherencyMatrix {
    type Output = Self;
    fn mul(mut self, rhs: f64) -> Self {
        for v in self.0.iter_mut().flatten() {
            *v *= rhs;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenDecomposition {
    /// Descending.
    pub lambda: [f64; 3],
    /// `u[k]` is the unit eigenvector paired with `lambda[k]`.
    pub u: [[Complex64; 3]; 3],
    /// `alpha[k] = arccos(|u[k][0]|)`.
    pub alpha: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HAlphaA {
    pub h: f64,
    pub alpha_bar: f64,
    pub a: f64,
    pub p: [f64; 3],
}

pub fn pauli_vector(pixel: &ScatteringPixel) -> Result<PauliVector> {
    if !pixel.is_finite() {
        return Err(PolsarError::InvalidInput("non-finite scattering component".into()));
    }
    let cross = (pixel.s_hv + pixel.s_vh) * 0.5;
    Ok(PauliVector([
        (pixel.s_hh + pixel.s_vv) * FRAC_1_SQRT_2,
        (pixel.s_hh - pixel.s_vv) * FRAC_1_SQRT_2,
        cross * (2.0 * FRAC_1_SQRT_2),
    ]))
}

/// `T = k kᴴ`.
pub fn coherency(k: &PauliVector) -> Result<CoherencyMatrix> {
    if !k.0.iter().all(|c| c.is_finite()) {
        return Err(PolsarError::InvalidInput("non-finite Pauli component".into()));
    }
    let mut t = [[ZERO; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = k.0[i] * k.0[j].conj();
        }
    }
    Ok(CoherencyMatrix(t))
}

/// Entrywise mean over a multilook window.
pub fn average_coherency(window: &[CoherencyMatrix]) -> Result<CoherencyMatrix> {
    if window.is_empty() {
        return Err(PolsarError::InvalidInput("empty averaging window".into()));
    }
    let sum = window.iter().fold(CoherencyMatrix::zero(), |acc, t| acc + *t);
    Ok(sum * (1.0 / window.len() as f64))
}

pub fn eigendecompose(t: &CoherencyMatrix) -> Result<EigenDecomposition> {
    if !t.is_finite() {
        return Err(PolsarError::InvalidInput("non-finite coherency entry".into()));
    }
    let norm = t.frobenius_norm();
    if t.hermitian_defect() > HERMITIAN_TOL * norm {
        return Err(PolsarError::InvalidInput("coherency matrix is not Hermitian".into()));
    }
    let (values, vectors) = eigen::jacobi_hermitian(&t.0);

    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

    let trace = t.trace();
    let floor = -PSD_TOL * trace.abs().max(norm);
    let mut lambda = [0.0; 3];
    let mut u = [[ZERO; 3]; 3];
    let mut alpha = [0.0; 3];
    for (k, &idx) in order.iter().enumerate() {
        let v = values[idx];
        if v < floor {
            return Err(PolsarError::InvalidInput(format!(
                "coherency matrix is not positive semi-definite (eigenvalue {v:e})"
            )));
        }
        lambda[k] = v.max(0.0);
        u[k] = vectors[idx];
        alpha[k] = u[k][0].norm().min(1.0).acos();
    }
    Ok(EigenDecomposition { lambda, u, alpha })
}

pub fn h_alpha_a(eig: &EigenDecomposition) -> Result<HAlphaA> {
    let total: f64 = eig.lambda.iter().sum();
    if !(total > 0.0) {
        return Err(PolsarError::DegeneratePixel);
    }
    let p = eig.lambda.map(|l| l / total);
    let ln3 = 3f64.ln();
    let h = -p
        .iter()
        .filter(|&&pk| pk > 0.0)
        .map(|&pk| pk * pk.ln())
        .sum::<f64>()
        / ln3;
    let alpha_bar: f64 = p.iter().zip(eig.alpha.iter()).map(|(pk, ak)| pk * ak).sum();
    let minor = eig.lambda[1] + eig.lambda[2];
    let a = if minor < 1e-12 * total {
        0.0
    } else {
        (eig.lambda[1] - eig.lambda[2]) / minor
    };
    Ok(HAlphaA {
        // `+ 0.0` turns -0.0 into 0.0
        h: h.clamp(0.0, 1.0) + 0.0,
        alpha_bar: alpha_bar.clamp(0.0, FRAC_PI_2),
        a: a.clamp(0.0, 1.0),
        p,
    })
}

/// Eigendecomposition followed by the (H, alpha-bar, A) extraction.
pub fn decompose(t: &CoherencyMatrix) -> Result<HAlphaA> {
    h_alpha_a(&eigendecompose(t)?)
}

/// Non-overlapping `window × window` boxcar averaging of the single-look
/// coherency matrices of a row-major pixel grid. Partial windows at the
/// right/bottom edge are dropped. Returns the averaged matrices row-major
/// together with the multilook grid shape.
pub fn multilook(
    pixels: &[ScatteringPixel],
    rows: usize,
    cols: usize,
    window: usize,
) -> Result<(Vec<CoherencyMatrix>, usize, usize)> {
    if window == 0 {
        return Err(PolsarError::InvalidInput("multilook window must be positive".into()));
    }
    if pixels.len() != rows * cols {
        return Err(PolsarError::InvalidInput(format!(
            "pixel grid has {} entries, expected {rows}x{cols}",
            pixels.len()
        )));
    }
    let out_rows = rows / window;
    let out_cols = cols / window;
    let scale = 1.0 / (window * window) as f64;
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for br in 0..out_rows {
        for bc in 0..out_cols {
            let mut sum = CoherencyMatrix::zero();
            for r in br * window..(br + 1) * window {
                for c in bc * window..(bc + 1) * window {
                    let k = pauli_vector(&pixels[r * cols + c])?;
                    sum = sum + coherency(&k)?;
                }
            }
            out.push(sum * scale);
        }
    }
    Ok((out, out_rows, out_cols))
}
