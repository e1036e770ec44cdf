//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, LU, Dyn};

use crate::error::{Error, Result};

pub(crate) fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Eigen(format!("{what} has non-finite entries")))
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(m, "matrix")?;
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    check_finite(m, "matrix")?;
    if m.is_empty() {
        return Ok(0.0);
    }
    Ok(m.singular_values().iter().copied().fold(0.0, f64::max))
}

pub(crate) fn max_abs_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Checks symmetry and `λ_min ≥ −1e−10 · trace`.
pub fn validate_psd(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotPsd(format!("shape {}×{}", m.nrows(), m.ncols())));
    }
    check_finite(m, "matrix").map_err(|e| Error::NotPsd(e.to_string()))?;
    let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    let asym = max_abs_asymmetry(m);
    if asym > 1e-12 * scale {
        return Err(Error::NotPsd(format!("asymmetry {asym:e}")));
    }
    let min = sym_eigenvalues(m)?.first().copied().unwrap_or(0.0);
    if min < -1e-10 * m.trace().abs() {
        return Err(Error::NotPsd(format!("minimum eigenvalue {min:e}")));
    }
    Ok(())
}

/// Partial-pivoting LU with a 1-norm condition estimate.
pub struct Factorization {
    lu: LU<f64, Dyn, Dyn>,
    norm1: f64,
}

pub(crate) fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

impl Factorization {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        check_finite(&a, "system matrix").map_err(|_| Error::Singular("system matrix"))?;
        let norm1 = norm1(&a);
        Ok(Self { lu: a.lu(), norm1 })
    }

    pub fn solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        self.lu.solve(b).filter(|x| x.iter().all(|v| v.is_finite()))
    }

    /// Solves `Aᵀ x = b` from the same factors (`P A = L U`).
    pub fn solve_transpose(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        let w = self.lu.u().tr_solve_upper_triangular(b)?;
        let mut v = self.lu.l().tr_solve_lower_triangular(&w)?;
        self.lu.p().inv_permute_rows(&mut v);
        Some(v).filter(|x| x.iter().all(|v| v.is_finite()))
    }

    /// Hager–Higham estimate of `‖A‖₁ ‖A⁻¹‖₁`. Infinite when singular.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.lu.l().nrows();
        if n == 0 {
            return 1.0;
        }
        let mut x = DVector::from_element(n, 1.0 / n as f64);
        let mut est = 0.0_f64;
        for iter in 0..5 {
            let Some(y) = self.solve(&x) else {
                return f64::INFINITY;
            };
            let y_norm = y.iter().map(|v| v.abs()).sum::<f64>();
            let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
            let Some(z) = self.solve_transpose(&xi) else {
                return f64::INFINITY;
            };
            let (j, zmax) = z
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.abs()))
                .fold((0, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
            if iter > 0 && (y_norm <= est || zmax <= z.dot(&x)) {
                est = est.max(y_norm);
                break;
            }
            est = y_norm;
            x.fill(0.0);
            x[j] = 1.0;
        }
        // Higham's alternating-sign probe guards against Hager's blind spots.
        let alt = DVector::from_fn(n, |i, _| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            s * (1.0 + i as f64 / (n.max(2) - 1) as f64)
        });
        if let Some(y) = self.solve(&alt) {
            let alt_est = 2.0 * y.iter().map(|v| v.abs()).sum::<f64>() / (3.0 * n as f64);
            est = est.max(alt_est);
        } else {
            return f64::INFINITY;
        }
        self.norm1 * est
    }
}

/// `A⁻¹` via LU; `None` when singular.
pub fn inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = a.clone().lu().try_inverse()?;
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_solve_matches_explicit_transpose() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 2.0, 0.5, 3.0, -1.0, 2.0, 0.0, 5.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let f = Factorization::new(a.clone()).unwrap();
        let x = f.solve_transpose(&b).unwrap();
        let r = a.transpose() * &x - &b;
        assert!(r.amax() < 1e-14);
    }

    #[test]
    fn condition_estimate_is_within_factor_of_truth() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 0.0, 1e-4, 1.0, 0.0, 0.0, 1.0]);
        let f = Factorization::new(a.clone()).unwrap();
        let truth = norm1(&a) * norm1(&inverse(&a).unwrap());
        let est = f.condition_estimate();
        assert!(est <= truth * (1.0 + 1e-12) && est >= truth / 3.0, "{est} vs {truth}");
    }

    #[test]
    fn singular_matrix_has_infinite_condition() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(Factorization::new(a).unwrap().condition_estimate() > 1e14);
    }

    #[test]
    fn psd_validation() {
        assert!(validate_psd(&DMatrix::identity(3, 3)).is_ok());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(validate_psd(&indefinite), Err(Error::NotPsd(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(validate_psd(&asym).is_err());
    }
}
