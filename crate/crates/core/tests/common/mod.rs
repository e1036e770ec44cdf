//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's Gram, penalty or solver code.

#![allow(dead_code)]

use distreg::{Bag, EmbeddingKernelFamily, EmbeddingKernelSpec, TwoStageDataset};
use distreg::{BaseKernelFamily, BaseKernelSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn base_kernel(base: &BaseKernelSpec, u: &[f64], v: &[f64]) -> f64 {
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    let h = base.bandwidth;
    match base.family {
        BaseKernelFamily::Gaussian => (-d2 / (h * h)).exp(),
        BaseKernelFamily::Laplacian => (-d2.sqrt() / h).exp(),
    }
}

/// Plain double sum `(1/(d_a d_b)) Σ Σ k(a, b)`.
pub fn mean_inner(base: &BaseKernelSpec, a: &Bag, b: &Bag) -> f64 {
    let mut s = 0.0;
    for u in a.points() {
        for v in b.points() {
            s += base_kernel(base, u, v);
        }
    }
    s / (a.len() * b.len()) as f64
}

pub fn second_level(embed: &EmbeddingKernelSpec, a: &Bag, b: &Bag) -> f64 {
    let ab = mean_inner(&embed.base, a, b);
    match embed.family {
        EmbeddingKernelFamily::Linear => ab,
        EmbeddingKernelFamily::GaussianOnH => {
            let d2 = (mean_inner(&embed.base, a, a) + mean_inner(&embed.base, b, b) - 2.0 * ab).max(0.0);
            (-d2 / (embed.sigma * embed.sigma)).exp()
        }
    }
}

pub fn gram(embed: &EmbeddingKernelSpec, bags: &[Bag]) -> DMatrix<f64> {
    let n = bags.len();
    DMatrix::from_fn(n, n, |i, j| second_level(embed, &bags[i], &bags[j]))
}

pub fn laplacian(embed: &EmbeddingKernelSpec, bags: &[Bag], h: f64) -> DMatrix<f64> {
    let n = bags.len();
    let base = &embed.base;
    let w = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let d2 = mean_inner(base, &bags[i], &bags[i]) + mean_inner(base, &bags[j], &bags[j])
            - 2.0 * mean_inner(base, &bags[i], &bags[j]);
        (-d2.max(0.0) / (h * h)).exp()
    });
    let deg = DMatrix::from_diagonal(&DVector::from_iterator(n, w.row_iter().map(|r| r.sum())));
    deg - w
}

/// Ridge coefficients `(G + nλI)⁻¹ y` through a Cholesky factorization.
pub fn ridge(g: &DMatrix<f64>, y: &[f64], lambda: f64) -> DVector<f64> {
    let n = g.nrows();
    let a = g + DMatrix::identity(n, n) * (n as f64 * lambda);
    a.cholesky().expect("ridge system is positive definite").solve(&DVector::from_column_slice(y))
}

/// `‖(G + nλ₁I + λ₂ M G)c − y‖∞`.
pub fn normal_residual(g: &DMatrix<f64>, m: &DMatrix<f64>, c: &[f64], y: &[f64], l1: f64, l2: f64) -> f64 {
    let n = g.nrows();
    let a = g + DMatrix::identity(n, n) * (n as f64 * l1) + m * g * l2;
    (a * DVector::from_column_slice(c) - DVector::from_column_slice(y)).amax()
}

pub fn random_bag(rng: &mut ChaCha8Rng, dim: usize, max_len: usize) -> Bag {
    let len = rng.random_range(1..=max_len);
    let points = (0..len)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    Bag::new(points).unwrap()
}

pub fn random_embed(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingKernelSpec {
    let h = rng.random_range(0.3..2.0);
    let base = if rng.random_bool(0.7) {
        BaseKernelSpec::gaussian(h, dim).unwrap()
    } else {
        BaseKernelSpec::laplacian(h, dim).unwrap()
    };
    if rng.random_bool(0.5) {
        EmbeddingKernelSpec::linear(base)
    } else {
        EmbeddingKernelSpec::gaussian_on_h(rng.random_range(0.5..2.0), base).unwrap()
    }
}

pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> TwoStageDataset {
    let embed = random_embed(rng, dim);
    let bags: Vec<Bag> = (0..n).map(|_| random_bag(rng, dim, 8)).collect();
    let labels = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    TwoStageDataset::new(bags, labels, embed, 1.0).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}
