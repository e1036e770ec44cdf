//! Empirical mean embeddings.
//!
//! A [`Bag`] stands in for the distribution it was drawn from through its
//! empirical mean embedding `μ = (1/d) Σ_s k(·, x_s)`. Embeddings are never
//! materialized as functions; every quantity reduces to base-kernel double
//! sums, or to dot products of explicit feature means when a
//! [`TaylorFeatureMap`] is available for the base kernel.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::kernel::{BaseKernelFamily, BaseKernelSpec};

/// Radicands of squared embedding distances above this (negative) value are
/// treated as rounding noise and clamped to zero.
pub const RADICAND_TOLERANCE: f64 = 1e-12;

/// A nonempty multiset of points sharing one dimension, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    dim: usize,
    data: Vec<f64>,
}

impl Bag {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyBag)?;
        let dim = first.len();
        if dim == 0 {
            return Err(invalid("point", "points must have at least one coordinate"));
        }
        let mut data = Vec::with_capacity(dim * points.len());
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            data.extend_from_slice(p);
        }
        Self::from_flat(dim, data)
    }

    /// Builds a bag from `dim`-sized rows laid out contiguously.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        if data.is_empty() {
            return Err(Error::EmptyBag);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(invalid("data", "length is not a multiple of the dimension"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("data", "coordinates must be finite"));
        }
        Ok(Self { dim, data })
    }

    pub fn singleton(point: Vec<f64>) -> Result<Self> {
        Self::new(vec![point])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of points `d` in the bag.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Total order on bags used to orient double sums so that
    /// `embed_inner(a, b) == embed_inner(b, a)` bit for bit.
    fn canonical_cmp(&self, other: &Bag) -> Ordering {
        self.dim
            .cmp(&other.dim)
            .then(self.data.len().cmp(&other.data.len()))
            .then_with(|| {
                self.data
                    .iter()
                    .zip(&other.data)
                    .map(|(a, b)| a.total_cmp(b))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
    }
}

fn check_pair(a: &Bag, b: &Bag, base: &BaseKernelSpec) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyBag);
    }
    for bag in [a, b] {
        if bag.dim() != base.dim {
            return Err(Error::DimensionMismatch {
                expected: base.dim,
                got: bag.dim(),
            });
        }
    }
    Ok(())
}

/// `⟨μ_A, μ_B⟩_H = (1/(d_A d_B)) Σ_s Σ_t k(a_s, b_t)` by direct double sum.
pub fn embed_inner(a: &Bag, b: &Bag, base: &BaseKernelSpec) -> Result<f64> {
    check_pair(a, b, base)?;
    let (a, b) = match a.canonical_cmp(b) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let mut total = 0.0;
    for u in a.points() {
        let mut row = 0.0;
        for v in b.points() {
            row += base.eval_unchecked(u, v);
        }
        total += row;
    }
    Ok(total / (a.len() as f64 * b.len() as f64))
}

/// Squared RKHS distance from inner products, clamping rounding noise.
pub(crate) fn sq_dist_from_inner(aa: f64, bb: f64, ab: f64) -> Result<f64> {
    let radicand = (aa + bb) - 2.0 * ab;
    if radicand >= 0.0 {
        Ok(radicand)
    } else if radicand >= -RADICAND_TOLERANCE {
        Ok(0.0)
    } else {
        Err(Error::NegativeRadicand { radicand })
    }
}

/// `‖μ_A − μ_B‖_H`.
pub fn embed_dist(a: &Bag, b: &Bag, base: &BaseKernelSpec) -> Result<f64> {
    let ab = embed_inner(a, b, base)?;
    let aa = embed_inner(a, a, base)?;
    let bb = embed_inner(b, b, base)?;
    Ok(sq_dist_from_inner(aa, bb, ab)?.sqrt())
}

/// Dense matrix of base-kernel values between the points of two bags.
#[derive(Clone, Debug)]
pub struct EmbeddingGram {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    cached: bool,
}

impl EmbeddingGram {
    pub fn between(a: &Bag, b: &Bag, base: &BaseKernelSpec) -> Result<Self> {
        check_pair(a, b, base)?;
        let values = a
            .points()
            .flat_map(|u| b.points().map(move |v| base.eval_unchecked(u, v)))
            .collect();
        Ok(Self {
            rows: a.len(),
            cols: b.len(),
            values,
            cached: true,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn is_cached(&self) -> bool {
        self.cached
    }

    /// Mean of all entries, i.e. the embedding inner product.
    pub fn mean(&self) -> f64 {
        let total: f64 = self
            .values
            .chunks_exact(self.cols)
            .map(|row| row.iter().sum::<f64>())
            .sum();
        total / (self.rows as f64 * self.cols as f64)
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }
}

/// Truncation error target for each one-dimensional Taylor factor.
const TAYLOR_TOLERANCE: f64 = 1e-17;
const TAYLOR_MAX_ORDER: usize = 192;
const TAYLOR_MAX_FEATURES: usize = 4096;

/// Explicit finite feature map for the Gaussian base kernel.
///
/// Writes `exp(−(a−b)²/h²) = Σ_k φ_k(a) φ_k(b)` per coordinate with
/// `φ_k(t) = exp(−t²/h²) · sqrt(2^k / k!) · (t/h)^k` around `center`, and
/// takes tensor products across coordinates. The order is chosen so the
/// truncated tail is below `1e−17` for every coordinate offset within
/// `radius`, which makes feature dot products agree with exact double sums
/// to rounding error.
#[derive(Clone, Debug, PartialEq)]
pub struct TaylorFeatureMap {
    bandwidth: f64,
    center: Vec<f64>,
    radius: f64,
    order: usize,
}

impl TaylorFeatureMap {
    pub fn new(base: &BaseKernelSpec, center: Vec<f64>, radius: f64) -> Result<Self> {
        if base.family != BaseKernelFamily::Gaussian {
            return Err(invalid("base.family", "feature map requires the gaussian base kernel"));
        }
        if center.len() != base.dim {
            return Err(Error::DimensionMismatch {
                expected: base.dim,
                got: center.len(),
            });
        }
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(invalid("radius", "must be finite and nonnegative"));
        }
        let x = 2.0 * radius * radius / (base.bandwidth * base.bandwidth);
        // Taylor remainder of exp(x) after K terms, times exp(−x), is at most x^K / K!.
        let mut term = 1.0_f64;
        let mut order = 1;
        while order <= TAYLOR_MAX_ORDER {
            term *= x / order as f64;
            if term <= TAYLOR_TOLERANCE {
                break;
            }
            order += 1;
        }
        if order > TAYLOR_MAX_ORDER {
            return Err(invalid("radius", format!("radius {radius} too large for the bandwidth")));
        }
        let features = (order as f64).powi(base.dim as i32);
        if features > TAYLOR_MAX_FEATURES as f64 {
            return Err(invalid("base.dim", format!("{features} features exceed the limit")));
        }
        Ok(Self {
            bandwidth: base.bandwidth,
            center,
            radius,
            order,
        })
    }

    /// Smallest map (bounding-box center, max coordinate offset) covering
    /// every point of `bags`.
    pub fn covering<'a>(
        base: &BaseKernelSpec,
        bags: impl IntoIterator<Item = &'a Bag>,
    ) -> Result<Self> {
        let mut lo = vec![f64::INFINITY; base.dim];
        let mut hi = vec![f64::NEG_INFINITY; base.dim];
        for bag in bags {
            if bag.dim() != base.dim {
                return Err(Error::DimensionMismatch {
                    expected: base.dim,
                    got: bag.dim(),
                });
            }
            for p in bag.points() {
                for k in 0..base.dim {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        if lo.iter().any(|v| !v.is_finite()) {
            return Err(Error::EmptyBag);
        }
        let center: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let radius = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| 0.5 * (h - l))
            .fold(0.0, f64::max);
        // Rounding in the midpoint can put an extreme point a hair outside.
        Self::new(base, center, radius * (1.0 + 1e-12) + 1e-300)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn feature_len(&self) -> usize {
        self.order.pow(self.center.len() as u32)
    }

    /// Reassembles a map from serialized fields, recomputing nothing.
    pub(crate) fn from_parts(bandwidth: f64, center: Vec<f64>, radius: f64, order: usize) -> Self {
        Self {
            bandwidth,
            center,
            radius,
            order,
        }
    }

    fn coordinate_features(&self, t: f64, out: &mut [f64]) {
        let s = t / self.bandwidth;
        let mut c = (-s * s).exp();
        out[0] = c;
        for (k, slot) in out.iter_mut().enumerate().skip(1) {
            c *= s * (2.0 / k as f64).sqrt();
            *slot = c;
        }
    }

    /// Mean feature vector of a bag.
    pub fn mean_features(&self, bag: &Bag) -> Result<Vec<f64>> {
        let dim = self.center.len();
        if bag.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bag.dim(),
            });
        }
        let k = self.order;
        let mut acc = vec![0.0; self.feature_len()];
        let mut coord = vec![0.0; k * dim];
        let mut tensor = vec![0.0; self.feature_len()];
        for p in bag.points() {
            for j in 0..dim {
                let t = p[j] - self.center[j];
                if t.abs() > self.radius {
                    return Err(Error::OutOfRange {
                        radius: t.abs(),
                        limit: self.radius,
                    });
                }
                self.coordinate_features(t, &mut coord[j * k..(j + 1) * k]);
            }
            // tensor product, first coordinate slowest
            tensor[..k].copy_from_slice(&coord[..k]);
            let mut len = k;
            for j in 1..dim {
                let cj = &coord[j * k..(j + 1) * k];
                for idx in (0..len).rev() {
                    let v = tensor[idx];
                    for (q, &c) in cj.iter().enumerate() {
                        tensor[idx * k + q] = v * c;
                    }
                }
                len *= k;
            }
            for (a, t) in acc.iter_mut().zip(&tensor) {
                *a += t;
            }
        }
        let inv = 1.0 / bag.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(acc)
    }
}

/// How embedding inner products are evaluated.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Engine {
    /// Direct base-kernel double sums.
    #[default]
    Exact,
    /// Dot products of Taylor feature means; bags outside the map's radius
    /// fall back to double sums.
    Taylor(TaylorFeatureMap),
}

/// Per-bag data cached by an [`Engine`].
#[derive(Clone, Debug)]
pub struct Embedded {
    features: Option<Vec<f64>>,
    sq_norm: f64,
}

impl Embedded {
    /// `⟨μ, μ⟩_H`.
    pub fn sq_norm(&self) -> f64 {
        self.sq_norm
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Engine {
    /// Taylor engine covering `bags` when the base kernel allows it,
    /// otherwise exact.
    pub fn auto<'a>(base: &BaseKernelSpec, bags: impl IntoIterator<Item = &'a Bag>) -> Self {
        if base.family != BaseKernelFamily::Gaussian {
            return Engine::Exact;
        }
        match TaylorFeatureMap::covering(base, bags) {
            Ok(map) => Engine::Taylor(map),
            Err(_) => Engine::Exact,
        }
    }

    pub fn embed(&self, bag: &Bag, base: &BaseKernelSpec) -> Result<Embedded> {
        if let Engine::Taylor(map) = self {
            match map.mean_features(bag) {
                Ok(f) => {
                    let sq_norm = dot(&f, &f);
                    return Ok(Embedded {
                        features: Some(f),
                        sq_norm,
                    });
                }
                Err(Error::OutOfRange { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(Embedded {
            features: None,
            sq_norm: embed_inner(bag, bag, base)?,
        })
    }

    pub fn embed_all(&self, bags: &[Bag], base: &BaseKernelSpec) -> Result<Vec<Embedded>> {
        bags.par_iter().map(|b| self.embed(b, base)).collect()
    }

    /// `⟨μ_A, μ_B⟩_H` from cached embeddings, falling back to the raw bags.
    pub fn inner(
        &self,
        a: (&Bag, &Embedded),
        b: (&Bag, &Embedded),
        base: &BaseKernelSpec,
    ) -> Result<f64> {
        match (&a.1.features, &b.1.features) {
            (Some(fa), Some(fb)) => Ok(dot(fa, fb)),
            _ => embed_inner(a.0, b.0, base),
        }
    }
}

/// Source of i.i.d. points for concentration experiments.
pub trait PointSampler: Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    fn sample_bag(&self, d: usize, rng: &mut ChaCha8Rng) -> Result<Bag> {
        let dim = self.dim();
        let mut data = Vec::with_capacity(d * dim);
        for _ in 0..d {
            data.extend(self.sample(rng));
        }
        Bag::from_flat(dim, data)
    }
}

/// Isotropic Gaussian `N(mean, std² I)`.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl PointSampler for GaussianSampler {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.mean
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.std * z
            })
            .collect()
    }
}

/// Dirac measure at a single point.
#[derive(Clone, Debug)]
pub struct PointMass(pub Vec<f64>);

impl PointSampler for PointMass {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn sample(&self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.0.clone()
    }
}

fn cell_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix-style mixing so neighbouring cells get unrelated streams
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derived_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cell_seed(seed, a, b))
}

/// Mean distance between fresh size-`d` bags and a large reference bag that
/// proxies the true embedding, for each `d` in `d_values`.
pub fn embedding_error_curve<S: PointSampler>(
    sampler: &S,
    base: &BaseKernelSpec,
    d_values: &[usize],
    trials: usize,
    reference_d: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let max_d = d_values.iter().copied().max().unwrap_or(0);
    if d_values.contains(&0) {
        return Err(invalid("d_values", "bag sizes must be positive"));
    }
    if reference_d < 16 * max_d || reference_d == 0 {
        return Err(invalid(
            "reference_d",
            format!("{reference_d} is below 16 × max(d) = {}", 16 * max_d),
        ));
    }
    let mut ref_rng = derived_rng(seed, u64::MAX, 0);
    let reference = sampler.sample_bag(reference_d, &mut ref_rng)?;

    // Cover the reference bag with some margin; fresh bags that stray
    // outside fall back to exact sums inside the engine.
    let engine = if base.family == BaseKernelFamily::Gaussian {
        let probe = TaylorFeatureMap::covering(base, [&reference])?;
        TaylorFeatureMap::new(base, probe.center().to_vec(), probe.radius() * 1.25)
            .map(Engine::Taylor)
            .unwrap_or(Engine::Exact)
    } else {
        Engine::Exact
    };
    let ref_emb = engine.embed(&reference, base)?;

    d_values
        .iter()
        .enumerate()
        .map(|(di, &d)| {
            let errs: Result<Vec<f64>> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = derived_rng(seed, di as u64, t as u64);
                    let bag = sampler.sample_bag(d, &mut rng)?;
                    let emb = engine.embed(&bag, base)?;
                    let ab = engine.inner((&bag, &emb), (&reference, &ref_emb), base)?;
                    Ok(sq_dist_from_inner(emb.sq_norm, ref_emb.sq_norm, ab)?.sqrt())
                })
                .collect();
            let errs = errs?;
            Ok((d, errs.iter().sum::<f64>() / trials as f64))
        })
        .collect()
}

/// Uniform draw used by generators that need a point in `[0, 1]^p`.
pub(crate) fn uniform_point(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    (0..p).map(|_| rng.random::<f64>()).collect()
}
