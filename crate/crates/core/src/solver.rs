//! Multi-penalty regularized least squares on mean embeddings.
//!
//! The estimator minimizes
//!
//! ```text
//! (1/n) Σ (f(μ_i) − y_i)² + λ₁ ‖f‖²_K + λ₂ ‖V f‖²_K
//! ```
//!
//! over the RKHS of the embedding kernel. `V` is realized through the sample
//! evaluations, `‖V f‖²_K = (1/n) (Ŝ f)ᵀ M (Ŝ f)` for a PSD matrix `M`, so
//! the minimizer is `f = Σ c_i K(μ_i, ·)` with
//!
//! ```text
//! (G + n λ₁ I + λ₂ M G) c = y.
//! ```

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::embedding::{sq_dist_from_inner, Bag, Embedded, Engine};
use crate::error::{invalid, Error, Result};
use crate::kernel::{BaseKernelSpec, EmbeddingKernelSpec};
use crate::linalg::{self, Factorization};

/// Condition estimates above this abort the fit.
pub const MAX_CONDITION: f64 = 1e14;

/// Observed two-stage sample: bags with labels and the kernels to use.
#[derive(Clone, Debug)]
pub struct TwoStageDataset {
    bags: Vec<Bag>,
    labels: Vec<f64>,
    embed: EmbeddingKernelSpec,
    label_bound: f64,
    engine: Engine,
}

impl TwoStageDataset {
    pub fn new(
        bags: Vec<Bag>,
        labels: Vec<f64>,
        embed: EmbeddingKernelSpec,
        label_bound: f64,
    ) -> Result<Self> {
        if bags.is_empty() {
            return Err(invalid("bags", "dataset needs at least one bag"));
        }
        if bags.len() != labels.len() {
            return Err(invalid(
                "labels",
                format!("{} labels for {} bags", labels.len(), bags.len()),
            ));
        }
        if !(label_bound.is_finite() && label_bound > 0.0) {
            return Err(invalid("label_bound", "must be positive"));
        }
        for bag in &bags {
            if bag.dim() != embed.base.dim {
                return Err(Error::DimensionMismatch {
                    expected: embed.base.dim,
                    got: bag.dim(),
                });
            }
        }
        if let Some(y) = labels.iter().find(|y| !(y.abs() <= label_bound)) {
            return Err(invalid("labels", format!("|{y}| exceeds the bound {label_bound}")));
        }
        Ok(Self {
            bags,
            labels,
            embed,
            label_bound,
            engine: Engine::Exact,
        })
    }

    pub fn with_engine(mut self, engine: Engine) -> Self {
        self.engine = engine;
        self
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn embed(&self) -> &EmbeddingKernelSpec {
        &self.embed
    }

    pub fn base(&self) -> &BaseKernelSpec {
        &self.embed.base
    }

    pub fn label_bound(&self) -> f64 {
        self.label_bound
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    /// Sub-dataset on `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("indices", "subset must be nonempty"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(invalid("indices", format!("index {bad} out of range")));
        }
        Ok(Self {
            bags: indices.iter().map(|&i| self.bags[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            embed: self.embed,
            label_bound: self.label_bound,
            engine: self.engine.clone(),
        })
    }
}

/// Pairwise embedding inner products `⟨μ_i, μ_j⟩_H` plus the cached embeddings.
struct InnerProducts {
    embedded: Vec<Embedded>,
    matrix: DMatrix<f64>,
}

fn inner_products(ds: &TwoStageDataset) -> Result<InnerProducts> {
    let base = ds.base();
    let embedded = ds.engine.embed_all(&ds.bags, base)?;
    let n = ds.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| {
                    if i == j {
                        Ok(embedded[i].sq_norm())
                    } else {
                        ds.engine.inner(
                            (&ds.bags[i], &embedded[i]),
                            (&ds.bags[j], &embedded[j]),
                            base,
                        )
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut matrix = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            matrix[(i, i + k)] = v;
            matrix[(i + k, i)] = v;
        }
    }
    Ok(InnerProducts { embedded, matrix })
}

fn gram_from_inner(embed: &EmbeddingKernelSpec, ip: &InnerProducts) -> Result<DMatrix<f64>> {
    let n = ip.matrix.nrows();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = embed.from_inner(ip.matrix[(i, j)], ip.matrix[(i, i)], ip.matrix[(j, j)])?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Second-level Gram matrix `G_ij = K(μ_i, μ_j)`.
pub fn build_gram(ds: &TwoStageDataset) -> Result<DMatrix<f64>> {
    gram_from_inner(&ds.embed, &inner_products(ds)?)
}

/// Realization of `VᵀV = Ŝᵀ M Ŝ` through a PSD matrix `M` on sample evaluations.
#[derive(Clone, Debug, PartialEq)]
pub enum PenaltySpec {
    Identity,
    /// Graph Laplacian `Dg − W` with `W_ij = exp(−‖μ_i − μ_j‖²_H / h²)`.
    Laplacian { bandwidth: f64 },
    Custom(DMatrix<f64>),
}

impl PenaltySpec {
    pub fn kind(&self) -> &'static str {
        match self {
            PenaltySpec::Identity => "identity",
            PenaltySpec::Laplacian { .. } => "laplacian",
            PenaltySpec::Custom(_) => "custom",
        }
    }
}

fn laplacian_from_inner(ip: &DMatrix<f64>, bandwidth: f64) -> Result<DMatrix<f64>> {
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(invalid("penalty.bandwidth", "must be positive"));
    }
    let n = ip.nrows();
    let h2 = bandwidth * bandwidth;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d2 = sq_dist_from_inner(ip[(i, i)], ip[(j, j)], ip[(i, j)])?;
            let w = (-d2 / h2).exp();
            m[(i, j)] = -w;
            m[(j, i)] = -w;
        }
    }
    for i in 0..n {
        let degree: f64 = (0..n).filter(|&j| j != i).map(|j| -m[(i, j)]).sum();
        m[(i, i)] = degree;
    }
    Ok(m)
}

fn penalty_from_inner(spec: &PenaltySpec, ip: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = ip.nrows();
    match spec {
        PenaltySpec::Identity => Ok(DMatrix::identity(n, n)),
        PenaltySpec::Laplacian { bandwidth } => laplacian_from_inner(ip, *bandwidth),
        PenaltySpec::Custom(m) => {
            if m.nrows() != n || m.ncols() != n {
                return Err(invalid(
                    "penalty.matrix",
                    format!("{}×{} matrix for n = {n}", m.nrows(), m.ncols()),
                ));
            }
            linalg::validate_psd(m)?;
            Ok(m.clone())
        }
    }
}

/// Penalty matrix `M` for the bags of `ds`.
pub fn build_penalty_matrix(ds: &TwoStageDataset, spec: &PenaltySpec) -> Result<DMatrix<f64>> {
    match spec {
        PenaltySpec::Laplacian { .. } => penalty_from_inner(spec, &inner_products(ds)?.matrix),
        _ => penalty_from_inner(spec, &DMatrix::zeros(ds.len(), ds.len())),
    }
}

fn cv_from_matrix(embed: &EmbeddingKernelSpec, spec: &PenaltySpec, m: &DMatrix<f64>) -> Result<f64> {
    let top = match spec {
        PenaltySpec::Identity => 1.0,
        _ => linalg::sym_eigenvalues(m)?.last().copied().unwrap_or(0.0).max(0.0),
    };
    Ok(embed.kappa_squared() * top)
}

/// Upper bound `κ² λ_max(M)` on `‖VᵀV‖`.
pub fn estimate_cv(ds: &TwoStageDataset, spec: &PenaltySpec) -> Result<f64> {
    let m = build_penalty_matrix(ds, spec)?;
    cv_from_matrix(&ds.embed, spec, &m)
}

/// Fitted estimator in representer coordinates. Immutable after fit.
#[derive(Clone, Debug)]
pub struct Model {
    pub(crate) support: Vec<Bag>,
    pub(crate) embedded: Vec<Embedded>,
    pub(crate) coefficients: Vec<f64>,
    pub(crate) lambda1: f64,
    pub(crate) lambda2: f64,
    pub(crate) penalty: PenaltySpec,
    pub(crate) embed: EmbeddingKernelSpec,
    pub(crate) engine: Engine,
    pub(crate) cv_estimate: f64,
    pub(crate) residual: f64,
}

impl Model {
    pub fn support_bags(&self) -> &[Bag] {
        &self.support
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn penalty(&self) -> &PenaltySpec {
        &self.penalty
    }

    pub fn embed(&self) -> &EmbeddingKernelSpec {
        &self.embed
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn cv_estimate(&self) -> f64 {
        self.cv_estimate
    }

    /// Normal-equation residual `‖(G + nλ₁I + λ₂MG)c − y‖∞` at fit time.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Assembles a model from stored parts, recomputing the cached embeddings.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        support: Vec<Bag>,
        coefficients: Vec<f64>,
        lambda1: f64,
        lambda2: f64,
        penalty: PenaltySpec,
        embed: EmbeddingKernelSpec,
        engine: Engine,
        cv_estimate: f64,
        residual: f64,
    ) -> Result<Self> {
        if support.len() != coefficients.len() || support.is_empty() {
            return Err(invalid("coefficients", "one coefficient per support bag is required"));
        }
        let embedded = engine.embed_all(&support, &embed.base)?;
        Ok(Self {
            support,
            embedded,
            coefficients,
            lambda1,
            lambda2,
            penalty,
            embed,
            engine,
            cv_estimate,
            residual,
        })
    }

    /// `f(μ) = Σ c_i K(μ_i, μ)`.
    pub fn predict(&self, bag: &Bag) -> Result<f64> {
        let base = &self.embed.base;
        if bag.dim() != base.dim {
            return Err(Error::DimensionMismatch {
                expected: base.dim,
                got: bag.dim(),
            });
        }
        let e = self.engine.embed(bag, base)?;
        let mut total = 0.0;
        for ((s, se), c) in self.support.iter().zip(&self.embedded).zip(&self.coefficients) {
            let ab = self.engine.inner((s, se), (bag, &e), base)?;
            total += c * self.embed.from_inner(ab, se.sq_norm(), e.sq_norm())?;
        }
        Ok(total)
    }

    pub fn predict_many(&self, bags: &[Bag]) -> Result<Vec<f64>> {
        bags.par_iter().map(|b| self.predict(b)).collect()
    }
}

/// Anything that maps a bag to a real prediction.
pub trait Predictor: Sync {
    fn predict(&self, bag: &Bag) -> Result<f64>;
}

impl Predictor for Model {
    fn predict(&self, bag: &Bag) -> Result<f64> {
        Model::predict(self, bag)
    }
}

fn system_matrix(g: &DMatrix<f64>, m: Option<&DMatrix<f64>>, lambda1: f64, lambda2: f64) -> DMatrix<f64> {
    let n = g.nrows();
    let mut a = g.clone();
    for i in 0..n {
        a[(i, i)] += n as f64 * lambda1;
    }
    if let Some(m) = m {
        if lambda2 != 0.0 {
            a += (m * g) * lambda2;
        }
    }
    a
}

/// Fits the multi-penalty estimator; `lambda2 = 0` reduces to kernel ridge
/// regression on the embeddings.
pub fn fit(ds: &TwoStageDataset, lambda1: f64, lambda2: f64, penalty: &PenaltySpec) -> Result<Model> {
    if !(lambda1.is_finite() && lambda1 > 0.0) {
        return Err(invalid("lambda1", "must be positive"));
    }
    if !(lambda2.is_finite() && lambda2 >= 0.0) {
        return Err(invalid("lambda2", "must be nonnegative"));
    }
    let ip = inner_products(ds)?;
    let g = gram_from_inner(&ds.embed, &ip)?;
    let m = penalty_from_inner(penalty, &ip.matrix)?;
    let cv_estimate = cv_from_matrix(&ds.embed, penalty, &m)?;
    let n = ds.len();

    let a = system_matrix(&g, Some(&m), lambda1, lambda2);
    let y = DVector::from_column_slice(&ds.labels);
    let f = Factorization::new(a.clone())?;
    let condition = f.condition_estimate();
    let jitter = 1e-10 * g.trace() / n as f64;
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned {
            condition,
            suggested_jitter: jitter,
        });
    }
    let mut c = f.solve(&y).ok_or(Error::IllConditioned {
        condition: f64::INFINITY,
        suggested_jitter: jitter,
    })?;
    let tol = 1e-8 * (1.0 + y.amax());
    let mut r = &a * &c - &y;
    // iterative refinement, a couple of steps at most
    for _ in 0..3 {
        if r.amax() <= tol * 1e-3 {
            break;
        }
        let Some(dc) = f.solve(&r) else { break };
        let candidate = &c - dc;
        let r_new = &a * &candidate - &y;
        if r_new.amax() >= r.amax() {
            break;
        }
        c = candidate;
        r = r_new;
    }
    let residual = r.amax();
    if !(residual <= tol) {
        return Err(Error::IllConditioned {
            condition,
            suggested_jitter: jitter,
        });
    }
    Ok(Model {
        support: ds.bags.clone(),
        embedded: ip.embedded,
        coefficients: c.iter().copied().collect(),
        lambda1,
        lambda2,
        penalty: penalty.clone(),
        embed: ds.embed,
        engine: ds.engine.clone(),
        cv_estimate,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// `r ≥ 1/2`: the regression function lies in the RKHS.
    StandardR,
    /// `r < 1/2`.
    LowR,
}

/// Parameter choices driven by the regularity index `r`, capacity index
/// `β` and Hölder exponent `α`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamSchedule {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Second-stage bag size.
    pub d: usize,
    /// Largest machine count for divide-and-conquer training.
    pub m_max: usize,
    pub regime: Regime,
}

/// `x.ceil()` that ignores rounding fuzz just above an integer.
pub(crate) fn robust_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// `x.floor()` that ignores rounding fuzz just below an integer.
pub(crate) fn robust_floor(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.floor()
    }
}

pub(crate) fn check_unit_interval(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} is outside (0, 1]")))
    }
}

/// `2 c_V λ₂ = λ₁^{max(2r, 1)}`.
pub fn coupled_lambda2(lambda1: f64, r: f64, cv: f64) -> f64 {
    lambda1.powf((2.0 * r).max(1.0)) / (2.0 * cv)
}

/// Relative violation of the coupling `2 c_V λ₂ = λ₁^{max(2r, 1)}`.
pub fn coupling_violation(lambda1: f64, lambda2: f64, r: f64, cv: f64) -> f64 {
    let lhs = 2.0 * cv * lambda2;
    let rhs = lambda1.powf((2.0 * r).max(1.0));
    (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE)
}

pub fn schedule_params(n: usize, r: f64, beta: f64, alpha: f64, cv: f64) -> Result<ParamSchedule> {
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    check_unit_interval("r", r)?;
    check_unit_interval("beta", beta)?;
    check_unit_interval("alpha", alpha)?;
    if !(cv.is_finite() && cv > 0.0) {
        return Err(invalid("c_v", "must be positive"));
    }
    let nf = n as f64;
    let (regime, lambda1, d_exp, m_max) = if r >= 0.5 {
        let denom = 2.0 * r + beta;
        let m = robust_floor(nf.powf((2.0 * r - 1.0) / denom)).max(1.0) as usize;
        (
            Regime::StandardR,
            nf.powf(-1.0 / denom),
            (1.0 + 2.0 * r) / (alpha * denom),
            m,
        )
    } else {
        (
            Regime::LowR,
            nf.powf(-1.0 / (1.0 + beta)),
            2.0 / (alpha * (1.0 + beta)),
            1,
        )
    };
    let lambda2 = coupled_lambda2(lambda1, r, cv);
    for (name, v) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(invalid(name, format!("scheduled value {v} is outside (0, 1)")));
        }
    }
    let d = robust_ceil(nf.powf(d_exp)).max(1.0);
    if d > usize::MAX as f64 {
        return Err(invalid("n", "bag size schedule overflows"));
    }
    Ok(ParamSchedule {
        lambda1,
        lambda2,
        d: d as usize,
        m_max,
        regime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::derived_rng;
    use rand::Rng;

    fn base() -> BaseKernelSpec {
        BaseKernelSpec::gaussian(0.8, 1).unwrap()
    }

    pub(crate) fn random_dataset(n: usize, seed: u64, embed: EmbeddingKernelSpec) -> TwoStageDataset {
        let mut rng = derived_rng(seed, 11, 0);
        let bags = (0..n)
            .map(|_| {
                let d = rng.random_range(1..6);
                let c: f64 = rng.random();
                Bag::new((0..d).map(|_| vec![c + 0.3 * rng.random::<f64>()]).collect()).unwrap()
            })
            .collect();
        let labels = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        TwoStageDataset::new(bags, labels, embed, 1.0).unwrap()
    }

    #[test]
    fn dataset_validation() {
        let e = EmbeddingKernelSpec::linear(base());
        let bag = Bag::singleton(vec![0.0]).unwrap();
        assert!(TwoStageDataset::new(vec![], vec![], e, 1.0).is_err());
        assert!(TwoStageDataset::new(vec![bag.clone()], vec![1.0, 2.0], e, 1.0).is_err());
        assert!(TwoStageDataset::new(vec![bag.clone()], vec![2.0], e, 1.0).is_err());
        let wrong_dim = Bag::singleton(vec![0.0, 1.0]).unwrap();
        assert!(TwoStageDataset::new(vec![wrong_dim], vec![0.0], e, 1.0).is_err());
    }

    #[test]
    fn gram_singleton_and_identical() {
        let e = EmbeddingKernelSpec::linear(base());
        let a = Bag::singleton(vec![0.4]).unwrap();
        let ds = TwoStageDataset::new(vec![a], vec![0.0], e, 1.0).unwrap();
        assert_eq!(build_gram(&ds).unwrap(), DMatrix::from_element(1, 1, 1.0));

        let b = Bag::new(vec![vec![0.1], vec![0.9]]).unwrap();
        let ds = TwoStageDataset::new(vec![b.clone(), b], vec![0.0, 0.0], e, 1.0).unwrap();
        let g = build_gram(&ds).unwrap();
        assert!(g.iter().all(|&v| v == g[(0, 0)]));
    }

    #[test]
    fn gram_matches_direct_kernel_evaluation() {
        for embed in [
            EmbeddingKernelSpec::linear(base()),
            EmbeddingKernelSpec::gaussian_on_h(0.7, base()).unwrap(),
        ] {
            let ds = random_dataset(3, 5, embed);
            let g = build_gram(&ds).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let direct = embed.eval(&ds.bags()[i], &ds.bags()[j]).unwrap();
                    assert!((g[(i, j)] - direct).abs() <= 1e-14);
                }
            }
        }
    }

    #[test]
    fn penalty_examples() {
        let e = EmbeddingKernelSpec::linear(base());
        let ds = random_dataset(3, 1, e);
        assert_eq!(
            build_penalty_matrix(&ds, &PenaltySpec::Identity).unwrap(),
            DMatrix::identity(3, 3)
        );
        let b = Bag::new(vec![vec![0.2], vec![0.5]]).unwrap();
        let twin = TwoStageDataset::new(vec![b.clone(), b], vec![0.0, 0.0], e, 1.0).unwrap();
        let lap = build_penalty_matrix(&twin, &PenaltySpec::Laplacian { bandwidth: 0.5 }).unwrap();
        assert_eq!(lap, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert_eq!(estimate_cv(&twin, &PenaltySpec::Laplacian { bandwidth: 0.5 }).unwrap(), 2.0);

        let ds = random_dataset(6, 2, e);
        let lap = build_penalty_matrix(&ds, &PenaltySpec::Laplacian { bandwidth: 0.3 }).unwrap();
        let ones = DVector::from_element(6, 1.0);
        assert!((&lap * ones).amax() <= 1e-10);
        assert!(linalg::validate_psd(&lap).is_ok());
    }

    #[test]
    fn custom_penalty_is_validated() {
        let e = EmbeddingKernelSpec::linear(base());
        let ds = random_dataset(2, 3, e);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(build_penalty_matrix(&ds, &PenaltySpec::Custom(bad)).is_err());
        let wrong = DMatrix::identity(3, 3);
        assert!(build_penalty_matrix(&ds, &PenaltySpec::Custom(wrong)).is_err());
        let two = DMatrix::identity(2, 2) * 2.0;
        assert_eq!(estimate_cv(&ds, &PenaltySpec::Custom(two)).unwrap(), 2.0);
        assert_eq!(estimate_cv(&ds, &PenaltySpec::Identity).unwrap(), 1.0);
    }

    #[test]
    fn one_by_one_hand_solution() {
        let e = EmbeddingKernelSpec::linear(base());
        let ds = TwoStageDataset::new(vec![Bag::singleton(vec![0.0]).unwrap()], vec![2.0], e, 2.0)
            .unwrap();
        let m = fit(&ds, 1.0, 0.0, &PenaltySpec::Identity).unwrap();
        assert_eq!(m.coefficients(), &[1.0]);
    }

    #[test]
    fn rejects_bad_lambdas() {
        let ds = random_dataset(3, 1, EmbeddingKernelSpec::linear(base()));
        assert!(fit(&ds, 0.0, 0.0, &PenaltySpec::Identity).is_err());
        assert!(fit(&ds, 0.1, -1.0, &PenaltySpec::Identity).is_err());
    }

    #[test]
    fn singular_system_reports_jitter() {
        // identical bags make G rank one; tiny λ₁ leaves the system near singular
        let e = EmbeddingKernelSpec::linear(base());
        let b = Bag::singleton(vec![0.0]).unwrap();
        let ds = TwoStageDataset::new(vec![b.clone(), b.clone(), b], vec![0.0, 0.5, 1.0], e, 1.0)
            .unwrap();
        match fit(&ds, 1e-300, 0.0, &PenaltySpec::Identity) {
            Err(Error::IllConditioned { suggested_jitter, .. }) => {
                assert!((suggested_jitter - 1e-10).abs() < 1e-22)
            }
            other => panic!("expected ill-conditioning, got {other:?}"),
        }
    }

    #[test]
    fn predict_examples() {
        let e = EmbeddingKernelSpec::linear(base());
        let a = Bag::new(vec![vec![0.0], vec![0.3]]).unwrap();
        let model = Model::from_parts(
            vec![a.clone()],
            vec![1.0],
            0.1,
            0.0,
            PenaltySpec::Identity,
            e,
            Engine::Exact,
            1.0,
            0.0,
        )
        .unwrap();
        let aa = crate::embedding::embed_inner(&a, &a, &e.base).unwrap();
        assert_eq!(model.predict(&a).unwrap(), aa);
        assert!(model.predict(&Bag::singleton(vec![0.0, 0.0]).unwrap()).is_err());

        let zero = Model::from_parts(
            vec![a.clone()],
            vec![0.0],
            0.1,
            0.0,
            PenaltySpec::Identity,
            e,
            Engine::Exact,
            1.0,
            0.0,
        )
        .unwrap();
        assert_eq!(zero.predict(&a).unwrap(), 0.0);
    }

    #[test]
    fn schedule_examples() {
        let s = schedule_params(10_000, 0.5, 1.0, 1.0, 0.5).unwrap();
        assert_eq!(s.regime, Regime::StandardR);
        assert!((s.lambda1 - 0.01).abs() < 1e-15);
        assert!((s.lambda2 - 0.01).abs() < 1e-15);
        assert_eq!(s.d, 10_000);
        assert_eq!(s.m_max, 1);

        assert_eq!(schedule_params(512, 1.0, 1.0, 1.0, 1.0).unwrap().m_max, 8);

        let low = schedule_params(256, 0.25, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(low.regime, Regime::LowR);
        assert!((low.lambda1 - 0.0625).abs() < 1e-15);
        assert_eq!(low.d, 256);
        assert_eq!(low.m_max, 1);
    }

    #[test]
    fn schedule_rejects_out_of_range() {
        assert!(schedule_params(0, 0.5, 1.0, 1.0, 1.0).is_err());
        assert!(schedule_params(10, 1.5, 1.0, 1.0, 1.0).is_err());
        assert!(schedule_params(10, 0.5, 0.0, 1.0, 1.0).is_err());
        assert!(schedule_params(10, 0.5, 1.0, 1.2, 1.0).is_err());
        assert!(schedule_params(10, 0.5, 1.0, 1.0, 0.0).is_err());
        // λ₁ = 1 at n = 1
        assert!(schedule_params(1, 0.5, 1.0, 1.0, 1.0).is_err());
    }
}
