//! Base kernel on points and second-level kernel on mean embeddings.

use rand::seq::index;

use crate::embedding::{derived_rng, embed_inner, sq_dist_from_inner, Bag};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaseKernelFamily {
    /// `exp(−‖u−v‖²/h²)`
    Gaussian,
    /// `exp(−‖u−v‖/h)`
    Laplacian,
}

impl BaseKernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            BaseKernelFamily::Gaussian => "gaussian",
            BaseKernelFamily::Laplacian => "laplacian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "laplacian" => Ok(Self::Laplacian),
            other => Err(invalid("base.family", format!("unknown family `{other}`"))),
        }
    }
}

/// Kernel on the point space. Both families satisfy `sup k(u,u) = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaseKernelSpec {
    pub family: BaseKernelFamily,
    pub bandwidth: f64,
    pub dim: usize,
}

impl BaseKernelSpec {
    pub fn new(family: BaseKernelFamily, bandwidth: f64, dim: usize) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(invalid("base.bandwidth", "must be a positive finite number"));
        }
        if dim == 0 {
            return Err(invalid("base.dim", "must be at least 1"));
        }
        Ok(Self {
            family,
            bandwidth,
            dim,
        })
    }

    pub fn gaussian(bandwidth: f64, dim: usize) -> Result<Self> {
        Self::new(BaseKernelFamily::Gaussian, bandwidth, dim)
    }

    pub fn laplacian(bandwidth: f64, dim: usize) -> Result<Self> {
        Self::new(BaseKernelFamily::Laplacian, bandwidth, dim)
    }

    /// `B_K̃ = sup k(u,u)`.
    pub fn bound(&self) -> f64 {
        1.0
    }

    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        for x in [u, v] {
            if x.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: x.len(),
                });
            }
        }
        Ok(self.eval_unchecked(u, v))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        let sq: f64 = u
            .iter()
            .zip(v)
            .map(|(a, b)| {
                let t = a - b;
                t * t
            })
            .sum();
        match self.family {
            BaseKernelFamily::Gaussian => (-sq / (self.bandwidth * self.bandwidth)).exp(),
            BaseKernelFamily::Laplacian => (-sq.sqrt() / self.bandwidth).exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKernelFamily {
    /// `K(μ, ν) = ⟨μ, ν⟩_H`
    Linear,
    /// `K(μ, ν) = exp(−‖μ − ν‖²_H / σ²)`
    GaussianOnH,
}

impl EmbeddingKernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            EmbeddingKernelFamily::Linear => "linear",
            EmbeddingKernelFamily::GaussianOnH => "gaussian_on_h",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "gaussian_on_h" | "gaussian_on_H" => Ok(Self::GaussianOnH),
            other => Err(invalid("embed.family", format!("unknown family `{other}`"))),
        }
    }
}

/// Kernel on mean embeddings, layered over a base kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddingKernelSpec {
    pub family: EmbeddingKernelFamily,
    /// Unused by the linear family.
    pub sigma: f64,
    pub base: BaseKernelSpec,
}

impl EmbeddingKernelSpec {
    pub fn new(family: EmbeddingKernelFamily, sigma: f64, base: BaseKernelSpec) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid("embed.sigma", "must be a positive finite number"));
        }
        Ok(Self {
            family,
            sigma,
            base,
        })
    }

    pub fn linear(base: BaseKernelSpec) -> Self {
        Self {
            family: EmbeddingKernelFamily::Linear,
            sigma: 1.0,
            base,
        }
    }

    pub fn gaussian_on_h(sigma: f64, base: BaseKernelSpec) -> Result<Self> {
        Self::new(EmbeddingKernelFamily::GaussianOnH, sigma, base)
    }

    /// `κ² = sup K(μ, μ)`.
    pub fn kappa_squared(&self) -> f64 {
        match self.family {
            EmbeddingKernelFamily::Linear => self.base.bound(),
            EmbeddingKernelFamily::GaussianOnH => 1.0,
        }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa_squared().sqrt()
    }

    /// Kernel value from the three embedding inner products `⟨A,B⟩`,
    /// `⟨A,A⟩`, `⟨B,B⟩`. Symmetric in `(aa, bb)` bit for bit.
    pub fn from_inner(&self, ab: f64, aa: f64, bb: f64) -> Result<f64> {
        match self.family {
            EmbeddingKernelFamily::Linear => Ok(ab),
            EmbeddingKernelFamily::GaussianOnH => {
                let d2 = sq_dist_from_inner(aa, bb, ab)?;
                Ok((-d2 / (self.sigma * self.sigma)).exp())
            }
        }
    }

    pub fn eval(&self, a: &Bag, b: &Bag) -> Result<f64> {
        let ab = embed_inner(a, b, &self.base)?;
        match self.family {
            EmbeddingKernelFamily::Linear => Ok(ab),
            EmbeddingKernelFamily::GaussianOnH => {
                let aa = embed_inner(a, a, &self.base)?;
                let bb = embed_inner(b, b, &self.base)?;
                self.from_inner(ab, aa, bb)
            }
        }
    }
}

/// Fitted `(α, L)` in `‖K_μ − K_ν‖ ≤ L ‖μ − ν‖^α`.
#[derive(Clone, Debug, PartialEq)]
pub struct HolderEstimate {
    pub alpha: f64,
    pub l: f64,
    pub pair_count: usize,
    /// RMS residual of the log-log fit.
    pub residual: f64,
}

const HOLDER_MIN_DISTANCE: f64 = 1e-12;
const HOLDER_MIN_ALPHA: f64 = 1e-6;

/// Estimates Hölder constants of `μ ↦ K_μ` over a corpus of bags by a
/// log-log least-squares fit on uniformly subsampled pairs.
pub fn holder_probe(
    spec: &EmbeddingKernelSpec,
    bags: &[Bag],
    pair_budget: usize,
    seed: u64,
) -> Result<HolderEstimate> {
    if bags.len() < 2 {
        return Err(invalid("bags", "need at least two bags"));
    }
    if pair_budget < 2 {
        return Err(invalid("pair_budget", "must be at least 2"));
    }
    let n = bags.len();
    let total_pairs = n * (n - 1) / 2;
    let chosen: Vec<usize> = if pair_budget >= total_pairs {
        (0..total_pairs).collect()
    } else {
        let mut rng = derived_rng(seed, 0x401d, 0);
        let mut v = index::sample(&mut rng, total_pairs, pair_budget).into_vec();
        v.sort_unstable();
        v
    };

    let self_inner: Vec<f64> = bags
        .iter()
        .map(|b| embed_inner(b, b, &spec.base))
        .collect::<Result<_>>()?;
    let self_k: Vec<f64> = self_inner
        .iter()
        .map(|&aa| spec.from_inner(aa, aa, aa))
        .collect::<Result<_>>()?;

    let mut xs = Vec::with_capacity(chosen.len());
    let mut ys = Vec::with_capacity(chosen.len());
    for flat in chosen {
        let (i, j) = unrank_pair(flat, n);
        let ab = embed_inner(&bags[i], &bags[j], &spec.base)?;
        let dist = sq_dist_from_inner(self_inner[i], self_inner[j], ab)?.sqrt();
        if dist < HOLDER_MIN_DISTANCE {
            continue;
        }
        let kij = spec.from_inner(ab, self_inner[i], self_inner[j])?;
        let feature_dist = sq_dist_from_inner(self_k[i], self_k[j], kij)?.sqrt();
        if feature_dist <= 0.0 {
            continue;
        }
        xs.push(dist.ln());
        ys.push(feature_dist.ln());
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate(
            "fewer than two bag pairs with nonzero embedding distance".into(),
        ));
    }
    let fit = crate::analysis::least_squares_line(&xs, &ys).ok_or_else(|| {
        Error::Degenerate("all sampled embedding distances coincide".into())
    })?;
    Ok(HolderEstimate {
        alpha: fit.slope.clamp(HOLDER_MIN_ALPHA, 1.0),
        l: fit.intercept.exp(),
        pair_count: xs.len(),
        residual: fit.rms_residual,
    })
}

/// Maps `0..n(n−1)/2` onto pairs `i < j` in row-major order.
fn unrank_pair(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
        i += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{embed_dist, GaussianSampler, PointSampler};

    #[test]
    fn base_kernel_values() {
        let g = BaseKernelSpec::gaussian(1.0, 1).unwrap();
        let l = BaseKernelSpec::laplacian(1.0, 1).unwrap();
        assert_eq!(g.eval(&[0.3], &[0.3]).unwrap(), 1.0);
        assert!((g.eval(&[0.0], &[1.0]).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!((l.eval(&[0.0], &[1.0]).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(matches!(
            g.eval(&[0.0, 1.0], &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_bad_bandwidth() {
        assert!(BaseKernelSpec::gaussian(0.0, 1).is_err());
        assert!(BaseKernelSpec::gaussian(f64::NAN, 1).is_err());
        assert!(BaseKernelSpec::laplacian(1.0, 0).is_err());
    }

    #[test]
    fn embedding_kernel_examples() {
        let base = BaseKernelSpec::gaussian(0.8, 1).unwrap();
        let lin = EmbeddingKernelSpec::linear(base);
        let a = Bag::singleton(vec![0.1]).unwrap();
        let b = Bag::singleton(vec![0.6]).unwrap();
        assert_eq!(lin.eval(&a, &b).unwrap(), base.eval(&[0.1], &[0.6]).unwrap());

        let a2 = Bag::new(vec![vec![0.1], vec![-0.4]]).unwrap();
        let expected = (base.eval(&[0.1], &[0.6]).unwrap() + base.eval(&[-0.4], &[0.6]).unwrap()) / 2.0;
        assert!((lin.eval(&a2, &b).unwrap() - expected).abs() < 1e-15);

        let gh = EmbeddingKernelSpec::gaussian_on_h(0.5, base).unwrap();
        assert_eq!(gh.eval(&a2, &a2).unwrap(), 1.0);
    }

    #[test]
    fn unrank_covers_all_pairs() {
        let n = 6;
        let pairs: Vec<_> = (0..n * (n - 1) / 2).map(|k| unrank_pair(k, n)).collect();
        let mut expected = vec![];
        for i in 0..n {
            for j in i + 1..n {
                expected.push((i, j));
            }
        }
        assert_eq!(pairs, expected);
    }

    fn corpus(count: usize, seed: u64) -> Vec<Bag> {
        let mut rng = derived_rng(seed, 1, 1);
        (0..count)
            .map(|i| {
                let s = GaussianSampler {
                    mean: vec![i as f64 * 0.4, -(i as f64) * 0.1],
                    std: 0.3,
                };
                s.sample_bag(5 + i % 3, &mut rng).unwrap()
            })
            .collect()
    }

    #[test]
    fn holder_linear_is_exact_isometry() {
        let base = BaseKernelSpec::gaussian(1.0, 2).unwrap();
        let est = holder_probe(&EmbeddingKernelSpec::linear(base), &corpus(8, 2), 20, 5).unwrap();
        assert!((est.alpha - 1.0).abs() < 1e-9, "{est:?}");
        assert!((est.l - 1.0).abs() < 1e-9);
        assert!(est.residual < 1e-9);
        assert_eq!(est.pair_count, 20);
    }

    #[test]
    fn holder_linear_identity_pointwise() {
        let base = BaseKernelSpec::laplacian(0.7, 2).unwrap();
        let lin = EmbeddingKernelSpec::linear(base);
        let bags = corpus(4, 9);
        for a in &bags {
            for b in &bags {
                let d2 = embed_dist(a, b, &base).unwrap().powi(2);
                let k2 = lin.eval(a, a).unwrap() - 2.0 * lin.eval(a, b).unwrap() + lin.eval(b, b).unwrap();
                assert!((k2 - d2).abs() <= 1e-12 * d2.max(1e-300) + 1e-15);
            }
        }
    }

    #[test]
    fn holder_gaussian_on_h_is_near_lipschitz() {
        // distances are at most sqrt(2), so σ = 3 keeps 2 − 2exp(−D²/σ²) ≈ 2D²/σ²
        let base = BaseKernelSpec::gaussian(1.0, 2).unwrap();
        let spec = EmbeddingKernelSpec::gaussian_on_h(3.0, base).unwrap();
        let est = holder_probe(&spec, &corpus(10, 4), 45, 1).unwrap();
        assert!((est.alpha - 1.0).abs() <= 0.15, "{est:?}");
    }

    #[test]
    fn holder_degenerate_corpus_errors() {
        let base = BaseKernelSpec::gaussian(1.0, 1).unwrap();
        let bag = Bag::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let bags = vec![bag.clone(), bag.clone(), bag];
        assert!(matches!(
            holder_probe(&EmbeddingKernelSpec::linear(base), &bags, 3, 0),
            Err(Error::Degenerate(_))
        ));
    }
}
