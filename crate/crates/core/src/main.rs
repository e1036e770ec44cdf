use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use distreg::analysis::{capacity_fit, effective_dimension_curve};
use distreg::distributed::{fit_distributed, partition, AveragedModel};
use distreg::harness::experiment::{
    check_coupling, kernels_from_config, penalty_from_config, ExperimentConfig, StrategyKind,
};
use distreg::harness::{io, run_checks, run_distributed_experiment, run_rate_experiment};
use distreg::harness::{generate_synthetic, Config, SyntheticConfig};
use distreg::solver::{build_gram, estimate_cv, schedule_params};
use distreg::{fit, Bag, Engine, Error, Model, Predictor, Result};

#[derive(Parser)]
#[command(name = "distreg", version, about = "Two-stage distribution regression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`; for experiments, runs this single seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Contiguous,
    Shuffled,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset CSV
    Generate(Common),
    /// Fit a model on a dataset CSV
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
        #[arg(long, default_value_t = 1)]
        machines: usize,
        #[arg(long, value_enum, default_value = "contiguous")]
        partition_strategy: Strategy,
    },
    /// Predict labels of a dataset CSV with a saved model
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment and write result CSVs into a directory
    Experiment {
        #[command(subcommand)]
        kind: ExperimentKind,
    },
    /// Run the numerical invariant batteries and append to a CSV
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExperimentKind {
    Rates(Common),
    Distributed {
        #[command(flatten)]
        common: Common,
        /// Comma-separated machine counts
        #[arg(long, value_delimiter = ',')]
        machines: Option<Vec<usize>>,
        #[arg(long, value_enum)]
        partition_strategy: Option<Strategy>,
    },
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set("seed", seed);
        cfg.set("experiment.seeds", seed);
    }
    Ok(cfg)
}

fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::Contiguous => "contiguous",
        Strategy::Shuffled => "shuffled",
    }
}

fn cmd_generate(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let syn = SyntheticConfig::from_config(&cfg, kernels_from_config(&cfg)?)?;
    let data = generate_synthetic(&syn)?;
    io::write_dataset(&common.out, &data.dataset)
}

/// Scheduled `(λ₁, λ₂)` for a dataset, estimating `β` from its Gram when
/// the config says `auto`.
fn scheduled_lambdas(cfg: &Config, ds: &distreg::TwoStageDataset, penalty: &distreg::PenaltySpec) -> Result<(f64, f64)> {
    let r = cfg.value("schedule.r", 0.5)?;
    let alpha = cfg.value("schedule.alpha", 1.0)?;
    let beta = match cfg.get("schedule.beta") {
        None | Some("auto") => {
            let g = build_gram(ds)?;
            let lambdas = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
            let curve = effective_dimension_curve(&g, &lambdas)?;
            capacity_fit(&curve.lambdas, &curve.values)?.beta_hat
        }
        Some(_) => cfg.value("schedule.beta", 1.0)?,
    };
    let cv = estimate_cv(ds, penalty)?;
    let s = schedule_params(ds.len(), r, beta, alpha, cv)?;
    Ok((s.lambda1, s.lambda2))
}

fn cmd_fit(
    common: &Common,
    data: &Path,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    machines: usize,
    strategy: Strategy,
) -> Result<()> {
    let cfg = load_config(common)?;
    let embed = kernels_from_config(&cfg)?;
    let penalty = penalty_from_config(&cfg)?;
    let ds = io::read_dataset(data, embed, cfg.value("data.label_bound", 5.0)?)?;
    let engine = Engine::auto(&embed.base, ds.bags());
    let ds = ds.with_engine(engine);
    let (l1, l2) = match (lambda1, lambda2) {
        (Some(a), Some(b)) => (a, b),
        (Some(a), None) => (a, 0.0),
        (None, given) => {
            let (a, b) = scheduled_lambdas(&cfg, &ds, &penalty)?;
            (a, given.unwrap_or(b))
        }
    };
    if machines <= 1 {
        let model = fit(&ds, l1, l2, &penalty)?;
        return io::write_model(&common.out, &model);
    }
    let seed = cfg.value("seed", 0)?;
    let strategy = StrategyKind::parse(strategy_name(strategy))?.with_seed(seed);
    let p = partition(&ds, machines, strategy)?;
    let am = fit_distributed(&ds, &p, l1, l2, &penalty)?;
    write_ensemble(&common.out, &am)
}

/// An averaged model is a directory of local model files plus `weights.csv`.
fn write_ensemble(dir: &Path, am: &AveragedModel) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut weights = String::from("subset,weight\n");
    for (j, (model, w)) in am.locals().iter().zip(am.weights()).enumerate() {
        io::write_model(&dir.join(format!("local_{j}.model")), model)?;
        weights.push_str(&format!("{j},{w:.16e}\n"));
    }
    io::write_csv(&dir.join("weights.csv"), &weights)
}

fn read_ensemble(dir: &Path) -> Result<AveragedModel> {
    let text = fs::read_to_string(dir.join("weights.csv"))?;
    let mut locals = Vec::new();
    let mut weights = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let (j, w) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("bad weights row `{line}`")))?;
        let w: f64 = w
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad weight `{w}`")))?;
        locals.push(io::read_model(&dir.join(format!("local_{}.model", j.trim())))?);
        weights.push(w);
    }
    AveragedModel::new(locals, weights)
}

fn predict_csv(predictor: &dyn Predictor, bags: &[Bag]) -> Result<String> {
    let mut out = String::from("bag_id,prediction\n");
    for (i, bag) in bags.iter().enumerate() {
        out.push_str(&format!("{i},{:.16e}\n", predictor.predict(bag)?));
    }
    Ok(out)
}

fn cmd_predict(model: &Path, data: &Path, out: &Path) -> Result<()> {
    let (bags, _) = io::dataset_from_csv(&fs::read_to_string(data)?)?;
    let text = if model.is_dir() {
        predict_csv(&read_ensemble(model)?, &bags)?
    } else {
        let m: Model = io::read_model(model)?;
        predict_csv(&m, &bags)?
    };
    io::write_csv(out, &text)
}

fn cmd_rates(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let exp = ExperimentConfig::from_config(&cfg)?;
    let report = run_rate_experiment(&exp)?;
    check_coupling(&report.rows, exp.r)?;
    io::write_csv(&common.out.join("rates.csv"), &io::rows_to_csv(&report.rows))?;
    io::write_csv(&common.out.join("rates_summary.csv"), &io::rate_summary_to_csv(&report))?;
    println!(
        "beta {:.4}, measured slope {}, theoretical slope {:.4}",
        report.beta,
        report.measured_slope.map_or("n/a".into(), |s| format!("{s:.4}")),
        report.theoretical_slope
    );
    Ok(())
}

fn cmd_distributed(common: &Common, machines: &Option<Vec<usize>>, strategy: Option<Strategy>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(ms) = machines {
        let list: Vec<String> = ms.iter().map(usize::to_string).collect();
        cfg.set("experiment.machines", list.join(","));
    }
    if let Some(s) = strategy {
        cfg.set("partition.strategy", strategy_name(s));
    }
    let exp = ExperimentConfig::from_config(&cfg)?;
    let report = run_distributed_experiment(&exp)?;
    check_coupling(&report.rows, exp.r)?;
    io::write_csv(&common.out.join("distributed.csv"), &io::rows_to_csv(&report.rows))?;
    io::write_csv(
        &common.out.join("distributed_timing.csv"),
        &io::timings_to_csv(&report.timings),
    )?;
    println!("machine budget {}", report.budget);
    Ok(())
}

/// Returns whether every battery with a precondition passed.
fn cmd_check(seed: u64, out: &Path) -> Result<bool> {
    let results = run_checks(seed)?;
    io::append_checks(out, &results)?;
    for r in &results {
        let verdict = r.pass.map_or("n/a", |p| if p { "pass" } else { "FAIL" });
        println!("{:<24} max {:.3e} (threshold {:.1e}) {verdict}", r.name, r.max_value, r.threshold);
    }
    if let Some(first) = results.iter().find(|r| r.pass == Some(false)) {
        eprintln!("check failed: {}", first.name);
        return Ok(false);
    }
    Ok(true)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter { .. }
        | Error::Parse(_)
        | Error::Io(_)
        | Error::DimensionMismatch { .. }
        | Error::EmptyBag => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(common) => cmd_generate(common).map(|_| true),
        Command::Fit {
            common,
            data,
            lambda1,
            lambda2,
            machines,
            partition_strategy,
        } => cmd_fit(common, data, *lambda1, *lambda2, *machines, *partition_strategy).map(|_| true),
        Command::Predict { model, data, out } => cmd_predict(model, data, out).map(|_| true),
        Command::Experiment { kind } => match kind {
            ExperimentKind::Rates(common) => cmd_rates(common).map(|_| true),
            ExperimentKind::Distributed {
                common,
                machines,
                partition_strategy,
            } => cmd_distributed(common, machines, *partition_strategy).map(|_| true),
        },
        Command::Check { seed, out } => cmd_check(*seed, out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
