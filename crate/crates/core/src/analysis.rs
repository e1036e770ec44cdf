//! Measurable quantities from the learning-rate analysis: effective
//! dimension, capacity and rate fits, the `B`/`B′` quantities, and
//! numerical checks of the operator norm bound and second-order
//! inverse decomposition used in the error analysis.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::{derived_rng, Bag};
use crate::error::{invalid, Error, Result};
use crate::linalg::{inverse, spectral_norm, sym_eigenvalues};
use crate::solver::{coupled_lambda2, Predictor};

/// Ordinary least-squares line `y ≈ intercept + slope · x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub rms_residual: f64,
}

/// `None` when fewer than two points or all `x` coincide.
pub fn least_squares_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    let scale = x.iter().map(|v| v * v).sum::<f64>().max(1.0);
    if !(sxx > 1e-24 * scale) {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    Some(LineFit {
        slope,
        intercept,
        rms_residual: (ss / n as f64).sqrt(),
    })
}

fn log_log(xs: &[f64], ys: &[f64], what: &'static str) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(invalid(what, "inputs differ in length"));
    }
    if xs.len() < 3 {
        return Err(invalid(what, "need at least three points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(invalid(what, "all inputs must be positive and finite"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    least_squares_line(&lx, &ly).ok_or_else(|| Error::Degenerate(format!("{what}: abscissae coincide")))
}

/// Empirical effective dimension `N̂(λ) = Σ σ_i / (σ_i + λ)` over the
/// eigenvalues `σ_i` of `G/n`.
pub fn effective_dimension(g: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    Ok(effective_dimension_curve(g, &[lambda])?.values[0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveDimensionCurve {
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
}

fn scaled_spectrum(g: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !g.is_square() || g.nrows() == 0 {
        return Err(invalid("gram", "must be a nonempty square matrix"));
    }
    let n = g.nrows() as f64;
    Ok(sym_eigenvalues(&(g / n))?.into_iter().map(|s| s.max(0.0)).collect())
}

/// `N̂(λ)` on a grid, sharing one eigendecomposition.
pub fn effective_dimension_curve(g: &DMatrix<f64>, lambdas: &[f64]) -> Result<EffectiveDimensionCurve> {
    if lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(invalid("lambda", "must be positive"));
    }
    let spectrum = scaled_spectrum(g)?;
    // Runs of identical eigenvalues contribute k·σ/(σ+λ) in one rounding.
    let mut runs: Vec<(f64, f64)> = Vec::new();
    for &s in &spectrum {
        match runs.last_mut() {
            Some((v, k)) if *v == s => *k += 1.0,
            _ => runs.push((s, 1.0)),
        }
    }
    let values = lambdas
        .iter()
        .map(|&l| runs.iter().map(|&(s, k)| k * s / (s + l)).sum())
        .collect();
    Ok(EffectiveDimensionCurve {
        lambdas: lambdas.to_vec(),
        values,
    })
}

/// Lower clamp for fitted capacity exponents.
pub const MIN_BETA: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapacityFit {
    pub beta_hat: f64,
    pub c0_hat: f64,
    pub residual: f64,
    /// Set when the raw exponent fell outside `(0, 1]` and was clamped.
    pub clamped: bool,
}

/// Fits `N(λ) ≈ C₀ λ^{−β}` on log-log axes.
pub fn capacity_fit(lambdas: &[f64], n_values: &[f64]) -> Result<CapacityFit> {
    let fit = log_log(lambdas, n_values, "capacity_fit")?;
    let raw = -fit.slope;
    let beta_hat = raw.clamp(MIN_BETA, 1.0);
    Ok(CapacityFit {
        beta_hat,
        c0_hat: fit.intercept.exp(),
        residual: fit.rms_residual,
        clamped: beta_hat != raw,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundQuantities {
    pub b: f64,
    pub b_prime: f64,
}

/// `B = (2κ/√n)(κ/√(nλ₁) + √N)` and `B′ = 1/(n√λ₁) + √N/√n`.
pub fn bound_quantities(n: usize, lambda1: f64, n_value: f64, kappa: f64) -> Result<BoundQuantities> {
    if n == 0 || !(lambda1 > 0.0) || !(kappa > 0.0) || !(n_value >= 0.0) {
        return Err(invalid("bound_quantities", "inputs must be positive"));
    }
    let nf = n as f64;
    let b = (2.0 * kappa / nf.sqrt()) * (kappa / (nf * lambda1).sqrt() + n_value.sqrt());
    let b_prime = 1.0 / (nf * lambda1.sqrt()) + n_value.sqrt() / nf.sqrt();
    Ok(BoundQuantities { b, b_prime })
}

/// Spectral norm of `(λ₁I + L)(λ₁I + L + λ₂B)^{-1}`.
pub fn lemma_norm_check(l: &DMatrix<f64>, b: &DMatrix<f64>, lambda1: f64, lambda2: f64) -> Result<f64> {
    if !l.is_square() || l.shape() != b.shape() {
        return Err(invalid("lemma_norm_check", "operators must be square and of equal size"));
    }
    let n = l.nrows();
    let shifted = l + DMatrix::identity(n, n) * lambda1;
    let full = &shifted + b * lambda2;
    let inv = inverse(&full).ok_or(Error::Singular("λ₁I + L + λ₂B"))?;
    spectral_norm(&(shifted * inv))
}

fn second_order_parts(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(invalid("second_order_identity_check", "operators must be square and of equal size"));
    }
    let a_inv = inverse(a).ok_or(Error::Singular("A"))?;
    let b_inv = inverse(b).ok_or(Error::Singular("B"))?;
    let diff = b - a;
    let first = &b_inv * &diff * &b_inv;
    let second = &b_inv * &diff * &a_inv * &diff * &b_inv;
    let residual = &a_inv - &b_inv - (second + first);
    let scale = spectral_norm(&a_inv)? + spectral_norm(&b_inv)?;
    Ok((residual, scale))
}

/// Spectral norm of
/// `A⁻¹ − B⁻¹ − [B⁻¹(B−A)A⁻¹(B−A)B⁻¹ + B⁻¹(B−A)B⁻¹]`.
pub fn second_order_identity_check(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let (residual, _) = second_order_parts(a, b)?;
    spectral_norm(&residual)
}

/// Residual of [`second_order_identity_check`] divided by `‖A⁻¹‖ + ‖B⁻¹‖`.
pub fn second_order_identity_relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let (residual, scale) = second_order_parts(a, b)?;
    Ok(spectral_norm(&residual)? / scale)
}

/// Root-mean-square gap between predictions and the noise-free truth.
pub fn excess_error<P: Predictor + ?Sized>(
    predictor: &P,
    test_bags: &[Bag],
    oracle: impl Fn(usize) -> f64,
) -> Result<f64> {
    if test_bags.is_empty() {
        return Err(invalid("test_bags", "need at least one test bag"));
    }
    let mut ss = 0.0;
    for (i, bag) in test_bags.iter().enumerate() {
        let e = predictor.predict(bag)? - oracle(i);
        ss += e * e;
    }
    Ok((ss / test_bags.len() as f64).sqrt())
}

/// Log-log least-squares slope of error against sample size.
pub fn rate_slope(sizes: &[usize], errors: &[f64]) -> Result<f64> {
    let xs: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    Ok(log_log(&xs, errors, "rate_slope")?.slope)
}

/// Summary of a randomized invariant battery.
#[derive(Clone, Debug, PartialEq)]
pub struct BatteryResult {
    pub name: &'static str,
    pub trials: usize,
    pub max_value: f64,
    pub threshold: f64,
    /// `None` when the battery's precondition does not hold, so the
    /// threshold is informational only.
    pub pass: Option<bool>,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Random PSD matrix with spectral norm `target`.
fn random_psd(rng: &mut ChaCha8Rng, dim: usize, target: f64) -> DMatrix<f64> {
    let rank = rng.random_range(1..=dim);
    let f = random_matrix(rng, dim, rank);
    let m = &f * f.transpose();
    let top = sym_eigenvalues(&m).ok().and_then(|e| e.last().copied()).unwrap_or(1.0);
    let m = m * (target / top);
    // exact symmetry
    (&m + m.transpose()) * 0.5
}

pub const LEMMA_LAMBDA1: [f64; 3] = [0.5, 0.1, 0.01];
pub const LEMMA_R: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const LEMMA_THRESHOLD: f64 = 2.0 + 1e-9;

/// Random PSD pairs with `2 c_V λ₂ = λ₁^{max(2r,1)}` and `c_V = ‖B‖`;
/// passes when every norm is at most `2 + 1e−9`.
pub fn lemma_battery(trials: usize, max_dim: usize, seed: u64) -> Result<BatteryResult> {
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = derived_rng(seed, 0x1e_77a, t as u64);
        let dim = rng.random_range(1..=max_dim.max(1));
        let lambda1 = LEMMA_LAMBDA1[t % LEMMA_LAMBDA1.len()];
        let r = LEMMA_R[(t / LEMMA_LAMBDA1.len()) % LEMMA_R.len()];
        let l_norm = rng.random_range(0.0..1.0);
        let l = random_psd(&mut rng, dim, l_norm);
        let b_norm = rng.random_range(1.0..10.0);
        let b = random_psd(&mut rng, dim, b_norm);
        let cv = sym_eigenvalues(&b)?.last().copied().unwrap_or(0.0);
        let lambda2 = coupled_lambda2(lambda1, r, cv);
        worst = worst.max(lemma_norm_check(&l, &b, lambda1, lambda2)?);
    }
    Ok(BatteryResult {
        name: "lemma_norm",
        trials,
        max_value: worst,
        threshold: LEMMA_THRESHOLD,
        pass: Some(worst <= LEMMA_THRESHOLD),
    })
}

/// Same construction with `λ₂` far above the coupling; reported only.
pub fn lemma_battery_uncoupled(trials: usize, max_dim: usize, seed: u64) -> Result<BatteryResult> {
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = derived_rng(seed, 0x0c_0de, t as u64);
        let dim = rng.random_range(2..=max_dim.max(2));
        let l = random_psd(&mut rng, dim, 1.0);
        let b = random_psd(&mut rng, dim, 1.0);
        worst = worst.max(lemma_norm_check(&l, &b, 0.01, 0.9)?);
    }
    Ok(BatteryResult {
        name: "lemma_norm_uncoupled",
        trials,
        max_value: worst,
        threshold: LEMMA_THRESHOLD,
        pass: None,
    })
}

pub const IDENTITY_THRESHOLD: f64 = 1e-9;
const IDENTITY_MAX_CONDITION: f64 = 1e6;

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

/// Random well-conditioned (nonsymmetric) pairs; passes when every relative
/// residual of the second-order decomposition is at most `1e−9`.
pub fn identity_battery(trials: usize, max_dim: usize, seed: u64) -> Result<BatteryResult> {
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut attempt = 0u64;
    while done < trials {
        let mut rng = derived_rng(seed, 0x005e_ed1d, attempt);
        attempt += 1;
        let dim = rng.random_range(1..=max_dim.max(1));
        let shift = rng.random_range(0.5..4.0) * (dim as f64).sqrt();
        let a = random_matrix(&mut rng, dim, dim) + DMatrix::identity(dim, dim) * shift;
        let b = &a + random_matrix(&mut rng, dim, dim) * rng.random_range(0.01..1.0);
        if condition_number(&a) > IDENTITY_MAX_CONDITION || condition_number(&b) > IDENTITY_MAX_CONDITION {
            continue;
        }
        worst = worst.max(second_order_identity_relative(&a, &b)?);
        done += 1;
    }
    Ok(BatteryResult {
        name: "second_order_identity",
        trials,
        max_value: worst,
        threshold: IDENTITY_THRESHOLD,
        pass: Some(worst <= IDENTITY_THRESHOLD),
    })
}

/// `A = B` case of the decomposition, which must vanish.
pub fn identity_equal_case(seed: u64) -> Result<BatteryResult> {
    let mut rng = derived_rng(seed, 0xa_eb, 0);
    let a = random_matrix(&mut rng, 5, 5) + DMatrix::identity(5, 5) * 5.0;
    let value = second_order_identity_check(&a, &a)?;
    Ok(BatteryResult {
        name: "second_order_identity_equal",
        trials: 1,
        max_value: value,
        threshold: IDENTITY_THRESHOLD,
        pass: Some(value <= IDENTITY_THRESHOLD),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_dimension_examples() {
        let g = DMatrix::identity(4, 4) * 4.0;
        assert_eq!(effective_dimension(&g, 1.0).unwrap(), 2.0);
        let tiny = effective_dimension(&g, 1e12).unwrap();
        assert!(tiny > 0.0 && tiny <= 1.0 * 4.0 / 1e12 * (1.0 + 1e-6));

        // G/n = v vᵀ with ‖v‖ = 1, n = 3
        let v = nalgebra::DVector::from_vec(vec![1.0, 2.0, 2.0]) / 3.0;
        let g = &v * v.transpose() * 3.0;
        assert!((effective_dimension(&g, 1.0).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn effective_dimension_decreases() {
        let mut rng = derived_rng(1, 2, 3);
        let g = random_psd(&mut rng, 6, 3.0);
        let grid = [1e-4, 1e-3, 1e-2, 0.1, 1.0];
        let c = effective_dimension_curve(&g, &grid).unwrap();
        assert!(c.values.windows(2).all(|w| w[1] < w[0]));
        assert!(c.values.iter().all(|&v| v > 0.0 && v < 6.0));
        assert!(effective_dimension(&g, 0.0).is_err());
    }

    #[test]
    fn capacity_examples() {
        let l = [0.1, 0.2, 0.4];
        let f = capacity_fit(&l, &l.map(|x: f64| x.powf(-0.5))).unwrap();
        assert!((f.beta_hat - 0.5).abs() < 1e-12 && f.residual < 1e-12 && !f.clamped);
        let f = capacity_fit(&l, &[3.0, 3.0, 3.0]).unwrap();
        assert_eq!(f.beta_hat, MIN_BETA);
        assert!(f.clamped);
        let f = capacity_fit(&l, &l.map(|x| 2.0 / x)).unwrap();
        assert!((f.beta_hat - 1.0).abs() < 1e-12 && (f.c0_hat - 2.0).abs() < 1e-12);
        assert!(capacity_fit(&l, &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn bound_quantities_examples() {
        let q = bound_quantities(4, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(q.b, 1.5);
        assert_eq!(q.b_prime, 0.75);
        let q = bound_quantities(4, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(q.b, 0.5);
    }

    #[test]
    fn lemma_examples() {
        let z = DMatrix::zeros(3, 3);
        let i = DMatrix::identity(3, 3);
        let v = lemma_norm_check(&z, &i, 0.1, 0.3).unwrap();
        assert!((v - 0.1 / 0.4).abs() < 1e-14);
        let mut rng = derived_rng(0, 0, 0);
        let l = random_psd(&mut rng, 4, 0.7);
        assert!((lemma_norm_check(&l, &DMatrix::zeros(4, 4), 0.2, 0.5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_examples() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]));
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]));
        // per-entry scalar identity: 1/a − 1/b = (b−a)²/(b²a) + (b−a)/b²
        for (x, y) in [(1.0f64, 2.0f64), (2.0, 3.0)] {
            let lhs = 1.0 / x - 1.0 / y;
            let rhs = (y - x).powi(2) / (y * y * x) + (y - x) / (y * y);
            assert!((lhs - rhs).abs() < 1e-15);
        }
        assert!(second_order_identity_check(&a, &b).unwrap() <= 1e-12);
        assert_eq!(second_order_identity_check(&a, &a).unwrap(), 0.0);
        let singular = DMatrix::zeros(2, 2);
        assert!(second_order_identity_check(&singular, &b).is_err());
    }

    #[test]
    fn rate_slope_examples() {
        let sizes = [64, 256, 1024];
        let s = rate_slope(&sizes, &sizes.map(|n| 3.0 * (n as f64).powf(-0.5))).unwrap();
        assert!((s + 0.5).abs() < 1e-12);
        assert!(rate_slope(&sizes, &[1.0, 1.0, 1.0]).unwrap().abs() < 1e-12);
        let s = rate_slope(&sizes, &sizes.map(|n| (n as f64).powf(-0.25))).unwrap();
        assert!((s + 0.25).abs() < 1e-12);
        assert!(rate_slope(&sizes, &[1.0, -1.0, 1.0]).is_err());
        assert!(rate_slope(&sizes[..2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn uncoupled_battery_is_informational() {
        let r = lemma_battery_uncoupled(10, 6, 1).unwrap();
        assert_eq!(r.pass, None);
    }
}
