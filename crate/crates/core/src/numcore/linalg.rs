//! Small dense linear algebra on row-major square matrices.

use crate::error::{contract, Result};

/// Lower Cholesky factor `L` with `A = L L^T`.
pub fn cholesky(a: &[f64], dim: usize) -> Result<Vec<f64>> {
    if a.len() != dim * dim {
        return Err(contract(format!(
            "cholesky: {} values for dim {dim}",
            a.len()
        )));
    }
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = a[i * dim + j];
            for k in 0..j {
                sum -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(contract(format!(
                        "matrix not positive definite at pivot {i}"
                    )));
                }
                l[i * dim + i] = sum.sqrt();
            } else {
                l[i * dim + j] = sum / l[j * dim + j];
            }
        }
    }
    Ok(l)
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn solve_lower(l: &[f64], b: &[f64], dim: usize) -> Vec<f64> {
    let mut y = vec![0.0; dim];
    for i in 0..dim {
        let row = &l[i * dim..i * dim + i];
        let dot: f64 = row.iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
        y[i] = (b[i] - dot) / l[i * dim + i];
    }
    y
}

/// `log |A|` from its Cholesky factor.
pub fn log_det_from_cholesky(l: &[f64], dim: usize) -> f64 {
    2.0 * (0..dim).map(|i| l[i * dim + i].ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_and_solve() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        assert!((l[0] - 2.0).abs() < 1e-15);
        assert!((l[2] - 1.0).abs() < 1e-15);
        assert!((l[3] - 2f64.sqrt()).abs() < 1e-15);
        let y = solve_lower(&l, &[2.0, 1.0 + 2f64.sqrt()], 2);
        assert!((y[0] - 1.0).abs() < 1e-15 && (y[1] - 1.0).abs() < 1e-12);
        assert!((log_det_from_cholesky(&l, 2) - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
    }
}
