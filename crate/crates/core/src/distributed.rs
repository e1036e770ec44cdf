//! Divide-and-conquer training: fit one multi-penalty model per disjoint
//! subset and average them with weights `|D_j| / |D|`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embedding::Bag;
use crate::error::{invalid, Error, Result};
use crate::solver::{self, robust_floor, Model, PenaltySpec, Predictor, TwoStageDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionStrategy {
    Contiguous,
    Shuffled { seed: u64 },
}

impl PartitionStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            PartitionStrategy::Contiguous => "contiguous",
            PartitionStrategy::Shuffled { .. } => "shuffled",
        }
    }
}

/// Assignment of each of the `n` samples to one of `m` subsets.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    assignments: Vec<usize>,
    m: usize,
    strategy: PartitionStrategy,
}

impl Partition {
    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn strategy(&self) -> PartitionStrategy {
        self.strategy
    }

    /// Sample indices of subset `j`, ascending.
    pub fn subset(&self, j: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == j)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn subsets(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.m];
        for (i, &a) in self.assignments.iter().enumerate() {
            out[a].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.m];
        for &a in &self.assignments {
            out[a] += 1;
        }
        out
    }
}

/// Splits `n` samples into `m` balanced subsets; the first `n mod m` get one extra.
pub fn partition_indices(n: usize, m: usize, strategy: PartitionStrategy) -> Result<Partition> {
    if m == 0 || m > n {
        return Err(invalid("machines", format!("need 1 ≤ m ≤ n, got m = {m}, n = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let PartitionStrategy::Shuffled { seed } = strategy {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let (q, extra) = (n / m, n % m);
    let mut assignments = vec![0; n];
    let mut pos = 0;
    for j in 0..m {
        let size = q + usize::from(j < extra);
        for &i in &order[pos..pos + size] {
            assignments[i] = j;
        }
        pos += size;
    }
    Ok(Partition {
        assignments,
        m,
        strategy,
    })
}

pub fn partition(ds: &TwoStageDataset, m: usize, strategy: PartitionStrategy) -> Result<Partition> {
    partition_indices(ds.len(), m, strategy)
}

/// Wall-clock record of one local fit.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFitReport {
    pub subset: usize,
    pub size: usize,
    pub fit_seconds: f64,
}

/// Weighted average of local estimators.
#[derive(Clone, Debug)]
pub struct AveragedModel {
    locals: Vec<Model>,
    weights: Vec<f64>,
    reports: Vec<LocalFitReport>,
}

impl AveragedModel {
    pub fn new(locals: Vec<Model>, weights: Vec<f64>) -> Result<Self> {
        if locals.is_empty() || locals.len() != weights.len() {
            return Err(invalid("weights", "one weight per local model is required"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("weights", format!("weights must be nonnegative and sum to 1, got {total}")));
        }
        Ok(Self {
            locals,
            weights,
            reports: Vec::new(),
        })
    }

    pub fn locals(&self) -> &[Model] {
        &self.locals
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn reports(&self) -> &[LocalFitReport] {
        &self.reports
    }

    /// `Σ_j w_j f_j(μ)`, accumulated in subset order.
    pub fn predict(&self, bag: &Bag) -> Result<f64> {
        let mut total = 0.0;
        for (model, w) in self.locals.iter().zip(&self.weights) {
            total += w * model.predict(bag)?;
        }
        Ok(total)
    }

    pub fn predict_many(&self, bags: &[Bag]) -> Result<Vec<f64>> {
        bags.par_iter().map(|b| self.predict(b)).collect()
    }
}

impl Predictor for AveragedModel {
    fn predict(&self, bag: &Bag) -> Result<f64> {
        AveragedModel::predict(self, bag)
    }
}

pub fn predict_averaged(am: &AveragedModel, bag: &Bag) -> Result<f64> {
    am.predict(bag)
}

/// Fits every subset independently (penalty rebuilt per subset) and averages.
pub fn fit_distributed(
    ds: &TwoStageDataset,
    partition: &Partition,
    lambda1: f64,
    lambda2: f64,
    penalty: &PenaltySpec,
) -> Result<AveragedModel> {
    if partition.assignments.len() != ds.len() {
        return Err(invalid("partition", "partition does not match the dataset size"));
    }
    if let PenaltySpec::Custom(_) = penalty {
        if partition.m > 1 {
            return Err(invalid("penalty", "a custom penalty matrix cannot be split across subsets"));
        }
    }
    let subsets = partition.subsets();
    if let Some(j) = subsets.iter().position(Vec::is_empty) {
        return Err(invalid("partition", format!("subset {j} is empty")));
    }
    let n = ds.len() as f64;
    let fitted: Vec<(Model, LocalFitReport)> = subsets
        .par_iter()
        .enumerate()
        .map(|(j, idx)| {
            let tag = |e: Error| Error::LocalFit {
                subset: j,
                source: Box::new(e),
            };
            let local = ds.subset(idx).map_err(tag)?;
            let start = Instant::now();
            let model = solver::fit(&local, lambda1, lambda2, penalty).map_err(tag)?;
            Ok((
                model,
                LocalFitReport {
                    subset: j,
                    size: idx.len(),
                    fit_seconds: start.elapsed().as_secs_f64(),
                },
            ))
        })
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = subsets.iter().map(|s| s.len() as f64 / n).collect();
    let (locals, reports): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    let mut am = AveragedModel::new(locals, weights)?;
    am.reports = reports;
    Ok(am)
}

/// Largest machine count `max(1, ⌊n^{(2r−1)/(2r+β)}⌋)` covered by the
/// divide-and-conquer rate guarantee.
pub fn max_machines(n: usize, r: f64, beta: f64) -> Result<usize> {
    if !(0.5..=1.0).contains(&r) {
        return Err(invalid("r", format!("{r} is outside [1/2, 1]")));
    }
    solver::check_unit_interval("beta", beta)?;
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let m = robust_floor((n as f64).powf((2.0 * r - 1.0) / (2.0 * r + beta)));
    Ok(m.max(1.0) as usize)
}
