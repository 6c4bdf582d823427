//! Cyclic Jacobi eigensolver for 3x3 complex Hermitian matrices.
//!
//! Each rotation first removes the phase of the pivot element so the 2x2
//! sub-problem becomes real symmetric, then applies the classical Jacobi
//! rotation. Convergence is quadratic; a handful of sweeps reach machine
//! precision for every input we see.

use num_complex::Complex64;

pub(crate) type Mat3 = [[Complex64; 3]; 3];

const MAX_SWEEPS: usize = 64;

fn off_diagonal_sq(a: &Mat3) -> f64 {
    let mut s = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                s += v.norm_sqr();
            }
        }
    }
    s
}

fn frobenius_sq(a: &Mat3) -> f64 {
    a.iter().flatten().map(|v| v.norm_sqr()).sum()
}

/// Returns (eigenvalues, eigenvectors) with `vectors[k]` the unit eigenvector
/// for `values[k]`. No ordering is applied.
pub(crate) fn jacobi_hermitian(input: &Mat3) -> ([f64; 3], [[Complex64; 3]; 3]) {
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let mut a = *input;
    // v holds eigenvectors as columns.
    let mut v: Mat3 = [[one, zero, zero], [zero, one, zero], [zero, zero, one]];

    let scale = frobenius_sq(&a);
    if scale > 0.0 {
        let threshold = scale * 1e-32;
        for _ in 0..MAX_SWEEPS {
            if off_diagonal_sq(&a) <= threshold {
                break;
            }
            for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let values = [a[0][0].re, a[1][1].re, a[2][2].re];
    let mut vectors = [[zero; 3]; 3];
    for k in 0..3 {
        for i in 0..3 {
            vectors[k][i] = v[i][k];
        }
    }
    (values, vectors)
}

fn rotate(a: &mut Mat3, v: &mut Mat3, p: usize, q: usize) {
    let apq = a[p][q];
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    // Phase that makes the pivot real and positive once column q is scaled.
    let w = apq / r;
    let app = a[p][p].re;
    let aqq = a[q][q].re;

    let tau = (aqq - app) / (2.0 * r);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    // Unitary G = P R where P = diag(.., conj(w) at q, ..) and R the real
    // rotation in the (p, q) plane. Only columns p, q of G differ from I:
    //   G[p][p] = c,         G[p][q] = s
    //   G[q][p] = -s conj(w), G[q][q] = c conj(w)
    let wc = w.conj();
    let gpp = Complex64::new(c, 0.0);
    let gpq = Complex64::new(s, 0.0);
    let gqp = wc * (-s);
    let gqq = wc * c;

    // A <- A G (columns p, q)
    for row in a.iter_mut() {
        let xp = row[p];
        let xq = row[q];
        row[p] = xp * gpp + xq * gqp;
        row[q] = xp * gpq + xq * gqq;
    }
    // A <- G^H A (rows p, q)
    for j in 0..3 {
        let xp = a[p][j];
        let xq = a[q][j];
        a[p][j] = gpp.conj() * xp + gqp.conj() * xq;
        a[q][j] = gpq.conj() * xp + gqq.conj() * xq;
    }
    a[p][q] = Complex64::new(0.0, 0.0);
    a[q][p] = Complex64::new(0.0, 0.0);
    a[p][p] = Complex64::new(a[p][p].re, 0.0);
    a[q][q] = Complex64::new(a[q][q].re, 0.0);

    // V <- V G
    for row in v.iter_mut() {
        let xp = row[p];
        let xq = row[q];
        row[p] = xp * gpp + xq * gqp;
        row[q] = xp * gpq + xq * gqq;
    }
}
