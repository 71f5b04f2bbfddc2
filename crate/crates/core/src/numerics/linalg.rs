//! Small dense linear algebra on row-major square matrices.

use crate::error::{Error, Result};

/// Threshold below which a pivot is treated as zero.
const PIVOT_EPS: f64 = 1e-300;

struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    sign: f64,
}

fn decompose(a: &[f64], n: usize) -> Option<Lu> {
    debug_assert_eq!(a.len(), n * n);
    let mut lu = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| lu[i * n + col].abs().total_cmp(&lu[j * n + col].abs()))
            .unwrap_or(col);
        if lu[pivot * n + col].abs() <= PIVOT_EPS {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                lu.swap(pivot * n + k, col * n + k);
            }
            perm.swap(pivot, col);
            sign = -sign;
        }
        let d = lu[col * n + col];
        for row in col + 1..n {
            let f = lu[row * n + col] / d;
            lu[row * n + col] = f;
            for k in col + 1..n {
                lu[row * n + k] -= f * lu[col * n + k];
            }
        }
    }
    Some(Lu { n, lu, perm, sign })
}

/// `(log|det a|, sign(det a))` by Gaussian elimination with partial pivoting.
pub fn log_abs_det(a: &[f64], n: usize) -> Result<(f64, f64)> {
    let lu = decompose(a, n).ok_or_else(|| Error::Singular("log_abs_det".into()))?;
    let mut logdet = 0.0;
    let mut sign = lu.sign;
    for i in 0..n {
        let d = lu.lu[i * n + i];
        logdet += d.abs().ln();
        if d < 0.0 {
            sign = -sign;
        }
    }
    Ok((logdet, sign))
}

pub fn inverse(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let lu = decompose(a, n).ok_or_else(|| Error::Singular("inverse".into()))?;
    let mut inv = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        for (i, c) in col.iter_mut().enumerate() {
            *c = if lu.perm[i] == j { 1.0 } else { 0.0 };
        }
        lu.solve_in_place(&mut col);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Ok(inv)
}

impl Lu {
    fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lu[i * n + k] * b[k];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.lu[i * n + k] * b[k];
            }
            b[i] = s / self.lu[i * n + i];
        }
    }
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}
