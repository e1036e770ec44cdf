//! Rate and divide-and-conquer experiments on synthetic data.
//!
//! Every (n, seed) cell regenerates its training data from a seed derived
//! from both values, so rows are reproducible one at a time. The test set
//! depends on the seed only, which keeps errors comparable across sizes.

use std::time::Instant;

use crate::analysis::{capacity_fit, effective_dimension_curve, excess_error, rate_slope, CapacityFit};
use crate::distributed::{fit_distributed, max_machines, partition, PartitionStrategy};
use crate::error::{invalid, Error, Result};
use crate::kernel::{BaseKernelFamily, BaseKernelSpec, EmbeddingKernelFamily, EmbeddingKernelSpec};
use crate::solver::{self, build_gram, coupling_violation, estimate_cv, schedule_params, PenaltySpec, Predictor};

use super::config::Config;
use super::synthetic::{engine_for, generate_synthetic, generate_test_set, SyntheticConfig};

/// Relative slack allowed between a row's `λ₂` and the coupled value.
pub const COUPLING_TOLERANCE: f64 = 1e-12;

const PILOT_LAMBDAS: [f64; 9] = [1e-3, 1.8e-3, 3.2e-3, 5.6e-3, 1e-2, 1.8e-2, 3.2e-2, 5.6e-2, 1e-1];
const PILOT_MAX_N: usize = 256;
const PILOT_MAX_D: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BetaChoice {
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyKind {
    Contiguous,
    Shuffled,
}

impl StrategyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "contiguous" => Ok(Self::Contiguous),
            "shuffled" => Ok(Self::Shuffled),
            other => Err(invalid("partition.strategy", format!("unknown strategy `{other}`"))),
        }
    }

    pub fn with_seed(self, seed: u64) -> PartitionStrategy {
        match self {
            StrategyKind::Contiguous => PartitionStrategy::Contiguous,
            StrategyKind::Shuffled => PartitionStrategy::Shuffled { seed },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticConfig,
    pub penalty: PenaltySpec,
    pub r: f64,
    pub beta: BetaChoice,
    pub alpha: f64,
    pub sizes: Vec<usize>,
    pub n: usize,
    pub machines: Vec<usize>,
    pub seeds: Vec<u64>,
    pub d_max: usize,
    pub test_bags: usize,
    pub reference_d: usize,
    pub strategy: StrategyKind,
}

pub fn kernels_from_config(cfg: &Config) -> Result<EmbeddingKernelSpec> {
    let base = BaseKernelSpec::new(
        BaseKernelFamily::parse(&cfg.string("base.family", "gaussian"))?,
        cfg.value("base.bandwidth", 0.5)?,
        cfg.value("base.dim", 1)?,
    )?;
    EmbeddingKernelSpec::new(
        EmbeddingKernelFamily::parse(&cfg.string("embed.family", "linear"))?,
        cfg.value("embed.sigma", 1.0)?,
        base,
    )
}

pub fn penalty_from_config(cfg: &Config) -> Result<PenaltySpec> {
    match cfg.string("penalty.kind", "laplacian").as_str() {
        "identity" => Ok(PenaltySpec::Identity),
        "laplacian" => Ok(PenaltySpec::Laplacian {
            bandwidth: cfg.value("penalty.bandwidth", 0.5)?,
        }),
        other => Err(invalid("penalty.kind", format!("unsupported penalty `{other}`"))),
    }
}

impl ExperimentConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let embed = kernels_from_config(cfg)?;
        let beta = match cfg.get("schedule.beta") {
            None | Some("auto") => BetaChoice::Auto,
            Some(_) => BetaChoice::Fixed(cfg.value("schedule.beta", 1.0)?),
        };
        let e = Self {
            synthetic: SyntheticConfig::from_config(cfg, embed)?,
            penalty: penalty_from_config(cfg)?,
            r: cfg.value("schedule.r", 0.5)?,
            beta,
            alpha: cfg.value("schedule.alpha", 1.0)?,
            sizes: cfg.list("experiment.sizes", &[64, 128, 256, 512, 1024])?,
            n: cfg.value("experiment.n", 512)?,
            machines: cfg.list("experiment.machines", &[1, 2, 4, 8])?,
            seeds: cfg.list("experiment.seeds", &[1, 2, 3, 4, 5])?,
            d_max: cfg.value("experiment.d_max", 4096)?,
            test_bags: cfg.value("experiment.test_bags", 200)?,
            reference_d: cfg.value("experiment.reference_d", 2048)?,
            strategy: StrategyKind::parse(&cfg.string("partition.strategy", "contiguous"))?,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(invalid("schedule.r", "must lie in (0, 1]"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid("schedule.alpha", "must lie in (0, 1]"));
        }
        if let BetaChoice::Fixed(b) = self.beta {
            if !(b > 0.0 && b <= 1.0) {
                return Err(invalid("schedule.beta", "must lie in (0, 1] or be `auto`"));
            }
        }
        if self.seeds.is_empty() {
            return Err(invalid("experiment.seeds", "need at least one seed"));
        }
        if self.d_max == 0 || self.test_bags == 0 || self.reference_d == 0 {
            return Err(invalid("experiment", "d_max, test_bags and reference_d must be positive"));
        }
        Ok(())
    }
}

/// One (n, m, seed) cell of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub d: usize,
    pub d_schedule: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub c_v: f64,
    /// `Some` only for distributed rows.
    pub within_budget: Option<bool>,
    pub status: String,
    pub error: Option<f64>,
    pub fit_seconds: f64,
}

impl ExperimentRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Wall-clock time of a single local fit.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub subset: usize,
    pub size: usize,
    pub fit_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub rows: Vec<ExperimentRow>,
    pub beta: f64,
    pub beta_fit: Option<CapacityFit>,
    /// Mean error over successful seeds for each size, ascending in n.
    pub mean_errors: Vec<(usize, f64)>,
    pub measured_slope: Option<f64>,
    /// `−r/(2r+β)` at the β used for scheduling.
    pub theoretical_slope: f64,
    /// `−r/(2r+1)`, the worst-capacity reference.
    pub reference_slope: f64,
}

impl RateReport {
    /// Whether the mean errors strictly decrease with n.
    pub fn strictly_decreasing(&self) -> bool {
        self.mean_errors.windows(2).all(|w| w[1].1 < w[0].1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributedReport {
    pub rows: Vec<ExperimentRow>,
    pub timings: Vec<TimingRow>,
    pub beta: f64,
    pub budget: usize,
}

/// Seed used to generate the training set of size `n` for experiment seed `seed`.
pub fn cell_seed(seed: u64, n: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (n as u64).rotate_left(32)
}

fn status_of(e: &Error) -> String {
    let kind = match e {
        Error::IllConditioned { .. } => "ill_conditioned",
        Error::LocalFit { .. } => "local_fit_failed",
        Error::NegativeRadicand { .. } => "negative_radicand",
        Error::InvalidParameter { .. } => "invalid_parameter",
        _ => "failed",
    };
    kind.to_string()
}

/// Capacity exponent from the effective-dimension curve of a pilot Gram matrix.
pub fn pilot_beta(exp: &ExperimentConfig, seed: u64) -> Result<CapacityFit> {
    let mut cfg = exp.synthetic.clone();
    cfg.n = exp.sizes.iter().copied().max().unwrap_or(PILOT_MAX_N).clamp(2, PILOT_MAX_N);
    cfg.d = PILOT_MAX_D.min(exp.d_max);
    cfg.seed = cell_seed(seed, usize::MAX);
    let data = generate_synthetic(&cfg)?;
    let engine = engine_for(&cfg, data.dataset.bags(), &[]);
    let ds = data.dataset.with_engine(engine);
    let g = build_gram(&ds)?;
    let curve = effective_dimension_curve(&g, &PILOT_LAMBDAS)?;
    capacity_fit(&curve.lambdas, &curve.values)
}

fn resolve_beta(exp: &ExperimentConfig, seed: u64) -> Result<(f64, Option<CapacityFit>)> {
    match exp.beta {
        BetaChoice::Fixed(b) => Ok((b, None)),
        BetaChoice::Auto => {
            let fit = pilot_beta(exp, seed)?;
            Ok((fit.beta_hat, Some(fit)))
        }
    }
}

struct Cell {
    ds: solver::TwoStageDataset,
    test: Vec<crate::embedding::Bag>,
    truth_values: Vec<f64>,
    d: usize,
    d_schedule: usize,
    lambda1: f64,
    lambda2: f64,
    c_v: f64,
}

fn prepare_cell(exp: &ExperimentConfig, n: usize, seed: u64, beta: f64) -> Result<Cell> {
    let pre = schedule_params(n, exp.r, beta, exp.alpha, 1.0)?;
    let d_schedule = pre.d;
    let d = d_schedule.min(exp.d_max);
    let mut cfg = exp.synthetic.clone();
    cfg.n = n;
    cfg.d = d;
    cfg.seed = cell_seed(seed, n);
    let data = generate_synthetic(&cfg)?;
    let (test, truth_values) = generate_test_set(&cfg, &data.truth, exp.test_bags, exp.reference_d, seed)?;
    let engine = engine_for(&cfg, data.dataset.bags(), &test);
    let ds = data.dataset.with_engine(engine);
    let c_v = estimate_cv(&ds, &exp.penalty)?;
    let sched = schedule_params(n, exp.r, beta, exp.alpha, c_v)?;
    Ok(Cell {
        ds,
        test,
        truth_values,
        d,
        d_schedule,
        lambda1: sched.lambda1,
        lambda2: sched.lambda2,
        c_v,
    })
}

fn evaluate<P: Predictor>(model: &P, cell: &Cell) -> Result<f64> {
    excess_error(model, &cell.test, |i| cell.truth_values[i])
}

fn failed_row(n: usize, m: usize, seed: u64, e: &Error) -> ExperimentRow {
    ExperimentRow {
        n,
        m,
        seed,
        d: 0,
        d_schedule: 0,
        lambda1: f64::NAN,
        lambda2: f64::NAN,
        c_v: f64::NAN,
        within_budget: None,
        status: status_of(e),
        error: None,
        fit_seconds: 0.0,
    }
}

pub fn theoretical_slope(r: f64, beta: f64) -> f64 {
    -r / (2.0 * r + beta)
}

/// Centralized fits over `exp.sizes × exp.seeds` with scheduled parameters.
pub fn run_rate_experiment(exp: &ExperimentConfig) -> Result<RateReport> {
    exp.validate()?;
    let mut sizes = exp.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut seeds = exp.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    if sizes.len() < 3 || seeds.len() < 3 {
        return Err(invalid("experiment", "need at least three distinct sizes and seeds"));
    }
    let (beta, beta_fit) = resolve_beta(exp, exp.seeds[0])?;

    let mut rows = Vec::new();
    for &n in &sizes {
        for &seed in &seeds {
            let row = match prepare_cell(exp, n, seed, beta) {
                Err(e) => failed_row(n, 1, seed, &e),
                Ok(cell) => {
                    let start = Instant::now();
                    let fitted = solver::fit(&cell.ds, cell.lambda1, cell.lambda2, &exp.penalty);
                    let fit_seconds = start.elapsed().as_secs_f64();
                    let (status, error) = match fitted.and_then(|m| evaluate(&m, &cell)) {
                        Ok(err) => ("ok".to_string(), Some(err)),
                        Err(e) => (status_of(&e), None),
                    };
                    ExperimentRow {
                        n,
                        m: 1,
                        seed,
                        d: cell.d,
                        d_schedule: cell.d_schedule,
                        lambda1: cell.lambda1,
                        lambda2: cell.lambda2,
                        c_v: cell.c_v,
                        within_budget: None,
                        status,
                        error,
                        fit_seconds,
                    }
                }
            };
            rows.push(row);
        }
    }

    let mut mean_errors = Vec::new();
    for &n in &sizes {
        let errs: Vec<f64> = rows.iter().filter(|r| r.n == n).filter_map(|r| r.error).collect();
        if !errs.is_empty() {
            mean_errors.push((n, errs.iter().sum::<f64>() / errs.len() as f64));
        }
    }
    let (ns, es): (Vec<usize>, Vec<f64>) = mean_errors.iter().copied().unzip();
    let measured_slope = rate_slope(&ns, &es).ok();
    Ok(RateReport {
        rows,
        beta,
        beta_fit,
        mean_errors,
        measured_slope,
        theoretical_slope: theoretical_slope(exp.r, beta),
        reference_slope: theoretical_slope(exp.r, 1.0),
    })
}

/// Divide-and-conquer fits at `exp.n` for every machine count and seed.
pub fn run_distributed_experiment(exp: &ExperimentConfig) -> Result<DistributedReport> {
    exp.validate()?;
    let mut machines = exp.machines.clone();
    machines.sort_unstable();
    machines.dedup();
    if machines.len() < 2 || machines[0] == 0 || machines[machines.len() - 1] > exp.n {
        return Err(invalid(
            "experiment.machines",
            "need at least two distinct machine counts in [1, n]",
        ));
    }
    let (beta, _) = resolve_beta(exp, exp.seeds[0])?;
    let budget = max_machines(exp.n, exp.r, beta)?;
    let mut seeds = exp.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();

    let n = exp.n;
    let mut cells = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        cells.push(prepare_cell(exp, n, seed, beta));
    }

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for &m in &machines {
        for (&seed, cell) in seeds.iter().zip(&cells) {
            let cell = match cell {
                Ok(c) => c,
                Err(e) => {
                    let mut row = failed_row(n, m, seed, e);
                    row.within_budget = Some(m <= budget);
                    rows.push(row);
                    continue;
                }
            };
            let start = Instant::now();
            let fitted = partition(&cell.ds, m, exp.strategy.with_seed(seed))
                .and_then(|p| fit_distributed(&cell.ds, &p, cell.lambda1, cell.lambda2, &exp.penalty));
            let fit_seconds = start.elapsed().as_secs_f64();
            let (status, error) = match fitted {
                Ok(am) => {
                    timings.extend(am.reports().iter().map(|r| TimingRow {
                        n,
                        m,
                        seed,
                        subset: r.subset,
                        size: r.size,
                        fit_seconds: r.fit_seconds,
                    }));
                    match evaluate(&am, cell) {
                        Ok(err) => ("ok".to_string(), Some(err)),
                        Err(e) => (status_of(&e), None),
                    }
                }
                Err(e) => (status_of(&e), None),
            };
            rows.push(ExperimentRow {
                n,
                m,
                seed,
                d: cell.d,
                d_schedule: cell.d_schedule,
                lambda1: cell.lambda1,
                lambda2: cell.lambda2,
                c_v: cell.c_v,
                within_budget: Some(m <= budget),
                status,
                error,
                fit_seconds,
            });
        }
    }
    Ok(DistributedReport {
        rows,
        timings,
        beta,
        budget,
    })
}

/// Fails when a successful row's `λ₂` breaks the coupling with its `c_V`.
pub fn check_coupling(rows: &[ExperimentRow], r: f64) -> Result<()> {
    for row in rows.iter().filter(|r| r.is_ok()) {
        let v = coupling_violation(row.lambda1, row.lambda2, r, row.c_v);
        if !(v <= COUPLING_TOLERANCE) {
            return Err(Error::Invariant(format!(
                "row n = {}, m = {}, seed = {}: lambda2 violates the coupling by {v:e}",
                row.n, row.m, row.seed
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let cfg = Config::parse(
            "experiment.sizes = 16, 24, 32\nexperiment.seeds = 2, 1, 3\nexperiment.d_max = 32\n\
             experiment.test_bags = 20\nexperiment.reference_d = 64\nschedule.beta = 1\n\
             experiment.n = 24\nexperiment.machines = 2, 1\nschedule.r = 1",
        )
        .unwrap();
        ExperimentConfig::from_config(&cfg).unwrap()
    }

    #[test]
    fn rate_rows_are_canonical_and_coupled() {
        let exp = small();
        let report = run_rate_experiment(&exp).unwrap();
        let keys: Vec<(usize, u64)> = report.rows.iter().map(|r| (r.n, r.seed)).collect();
        assert_eq!(keys.len(), 9);
        assert_eq!(&keys[..4], &[(16, 1), (16, 2), (16, 3), (24, 1)]);
        assert!(report.rows.iter().all(|r| r.is_ok() && r.d <= 32));
        check_coupling(&report.rows, exp.r).unwrap();
        assert!((report.theoretical_slope + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn distributed_m1_matches_centralized() {
        let exp = small();
        let report = run_distributed_experiment(&exp).unwrap();
        assert_eq!(report.rows.len(), 6);
        assert_eq!(report.rows[0].m, 1);
        let cell = prepare_cell(&exp, 24, 1, 1.0).unwrap();
        let model = solver::fit(&cell.ds, cell.lambda1, cell.lambda2, &exp.penalty).unwrap();
        let central = evaluate(&model, &cell).unwrap();
        let m1 = report.rows.iter().find(|r| r.m == 1 && r.seed == 1).unwrap();
        assert!((m1.error.unwrap() - central).abs() <= 1e-10);
        assert_eq!(report.timings.iter().filter(|t| t.m == 2).count(), 6);
    }

    #[test]
    fn theoretical_slope_example() {
        assert_eq!(theoretical_slope(0.5, 1.0), -0.25);
    }

    #[test]
    fn preconditions_are_enforced() {
        let mut exp = small();
        exp.seeds = vec![1, 2];
        assert!(run_rate_experiment(&exp).is_err());
        let mut exp = small();
        exp.machines = vec![1];
        assert!(run_distributed_experiment(&exp).is_err());
        exp.machines = vec![1, 25];
        assert!(run_distributed_experiment(&exp).is_err());
    }

    #[test]
    fn coupling_check_catches_bad_rows() {
        let exp = small();
        let mut rows = run_rate_experiment(&exp).unwrap().rows;
        rows[0].lambda2 *= 1.5;
        assert!(check_coupling(&rows, exp.r).is_err());
    }
}
