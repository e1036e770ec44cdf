//! Plain-text file formats: dataset CSV, model files and result tables.
//!
//! Floats in datasets and models are written with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::analysis::BatteryResult;
use crate::embedding::{Bag, Engine, TaylorFeatureMap};
use crate::error::{invalid, Error, Result};
use crate::kernel::{BaseKernelFamily, BaseKernelSpec, EmbeddingKernelFamily, EmbeddingKernelSpec};
use crate::solver::{Model, PenaltySpec, TwoStageDataset};

use super::experiment::{ExperimentRow, RateReport, TimingRow};

const MODEL_FORMAT: &str = "distreg-model-1";

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{what}: cannot parse `{s}` as a number")))
}

fn parse_u(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{what}: cannot parse `{s}` as an index")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// `bag_id,point_index,label,x0,…` with one row per point.
pub fn dataset_to_csv(bags: &[Bag], labels: &[f64]) -> String {
    let p = bags.first().map_or(0, Bag::dim);
    let mut out = String::from("bag_id,point_index,label");
    for k in 0..p {
        let _ = write!(out, ",x{k}");
    }
    out.push('\n');
    for (i, (bag, y)) in bags.iter().zip(labels).enumerate() {
        for (j, point) in bag.points().enumerate() {
            let _ = write!(out, "{i},{j},{}", fmt_f(*y));
            for v in point {
                let _ = write!(out, ",{}", fmt_f(*v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_dataset(path: &Path, ds: &TwoStageDataset) -> Result<()> {
    write_text(path, &dataset_to_csv(ds.bags(), ds.labels()))
}

/// Parses dataset CSV text into bags and labels. Bags appear in order of
/// first occurrence; every row of a bag must repeat the same label.
pub fn dataset_from_csv(text: &str) -> Result<(Vec<Bag>, Vec<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[..3] != ["bag_id", "point_index", "label"] {
        return Err(Error::Parse("dataset header must be bag_id,point_index,label,x0,…".into()));
    }
    let p = cols.len() - 3;
    let mut ids: Vec<String> = Vec::new();
    let mut points: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse(format!(
                "dataset row {}: expected {} fields, got {}",
                lineno + 2,
                cols.len(),
                fields.len()
            )));
        }
        let id = fields[0].trim();
        let label = parse_f(fields[2], "label")?;
        let point = fields[3..]
            .iter()
            .map(|s| parse_f(s, "coordinate"))
            .collect::<Result<Vec<f64>>>()?;
        let slot = match ids.iter().rposition(|x| x == id) {
            Some(k) => {
                if labels[k] != label {
                    return Err(Error::Parse(format!("bag `{id}` has conflicting labels")));
                }
                k
            }
            None => {
                ids.push(id.to_string());
                labels.push(label);
                points.push(Vec::new());
                ids.len() - 1
            }
        };
        points[slot].push(point);
    }
    let bags = points.into_iter().map(Bag::new).collect::<Result<Vec<_>>>()?;
    if bags.is_empty() {
        return Err(Error::Parse("dataset has no rows".into()));
    }
    debug_assert!(bags.iter().all(|b| b.dim() == p));
    Ok((bags, labels))
}

pub fn read_dataset(path: &Path, embed: EmbeddingKernelSpec, label_bound: f64) -> Result<TwoStageDataset> {
    let (bags, labels) = dataset_from_csv(&read_text(path)?)?;
    TwoStageDataset::new(bags, labels, embed, label_bound)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f(*v)).collect::<Vec<_>>().join(",")
}

/// Serializes a model: a `key=value` header, then `[coefficients]`,
/// optional `[penalty]` rows for custom penalties, and `[bags]` rows of
/// `bag_index,x0,…`.
pub fn model_to_string(model: &Model) -> String {
    let embed = model.embed();
    let mut out = String::new();
    let _ = writeln!(out, "format={MODEL_FORMAT}");
    let _ = writeln!(out, "base.family={}", embed.base.family.name());
    let _ = writeln!(out, "base.bandwidth={}", fmt_f(embed.base.bandwidth));
    let _ = writeln!(out, "base.dim={}", embed.base.dim);
    let _ = writeln!(out, "embed.family={}", embed.family.name());
    let _ = writeln!(out, "embed.sigma={}", fmt_f(embed.sigma));
    let _ = writeln!(out, "lambda1={}", fmt_f(model.lambda1()));
    let _ = writeln!(out, "lambda2={}", fmt_f(model.lambda2()));
    let _ = writeln!(out, "c_v={}", fmt_f(model.cv_estimate()));
    let _ = writeln!(out, "residual={}", fmt_f(model.residual()));
    let _ = writeln!(out, "penalty.kind={}", model.penalty().kind());
    if let PenaltySpec::Laplacian { bandwidth } = model.penalty() {
        let _ = writeln!(out, "penalty.bandwidth={}", fmt_f(*bandwidth));
    }
    match model.engine() {
        Engine::Exact => {
            let _ = writeln!(out, "engine=exact");
        }
        Engine::Taylor(map) => {
            let _ = writeln!(out, "engine=taylor");
            let _ = writeln!(out, "engine.bandwidth={}", fmt_f(map.bandwidth()));
            let _ = writeln!(out, "engine.center={}", join(map.center()));
            let _ = writeln!(out, "engine.radius={}", fmt_f(map.radius()));
            let _ = writeln!(out, "engine.order={}", map.order());
        }
    }
    out.push_str("[coefficients]\n");
    for c in model.coefficients() {
        let _ = writeln!(out, "{}", fmt_f(*c));
    }
    if let PenaltySpec::Custom(m) = model.penalty() {
        out.push_str("[penalty]\n");
        for row in m.row_iter() {
            let vals: Vec<f64> = row.iter().copied().collect();
            let _ = writeln!(out, "{}", join(&vals));
        }
    }
    out.push_str("[bags]\n");
    for (i, bag) in model.support_bags().iter().enumerate() {
        for point in bag.points() {
            let _ = writeln!(out, "{i},{}", join(point));
        }
    }
    out
}

pub fn write_model(path: &Path, model: &Model) -> Result<()> {
    write_text(path, &model_to_string(model))
}

fn header_value<'a>(header: &'a [(String, String)], key: &str) -> Result<&'a str> {
    header
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Parse(format!("model file is missing `{key}`")))
}

pub fn model_from_str(text: &str) -> Result<Model> {
    let mut header = Vec::new();
    let mut section = "";
    let mut coefficients = Vec::new();
    let mut penalty_rows: Vec<Vec<f64>> = Vec::new();
    let mut bag_points: Vec<Vec<Vec<f64>>> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if line.starts_with('[') {
            section = match line {
                "[coefficients]" | "[penalty]" | "[bags]" => line,
                other => return Err(Error::Parse(format!("unknown model section `{other}`"))),
            };
            continue;
        }
        match section {
            "" => {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("bad model header line `{line}`")))?;
                header.push((k.trim().to_string(), v.trim().to_string()));
            }
            "[coefficients]" => coefficients.push(parse_f(line, "coefficient")?),
            "[penalty]" => penalty_rows.push(
                line.split(',')
                    .map(|s| parse_f(s, "penalty entry"))
                    .collect::<Result<_>>()?,
            ),
            _ => {
                let (idx, rest) = line
                    .split_once(',')
                    .ok_or_else(|| Error::Parse(format!("bad bag row `{line}`")))?;
                let idx = parse_u(idx, "bag index")?;
                let point = rest
                    .split(',')
                    .map(|s| parse_f(s, "coordinate"))
                    .collect::<Result<Vec<f64>>>()?;
                if idx == bag_points.len() {
                    bag_points.push(Vec::new());
                } else if idx + 1 != bag_points.len() {
                    return Err(Error::Parse(format!("bag index {idx} out of order")));
                }
                bag_points[idx].push(point);
            }
        }
    }
    if header_value(&header, "format")? != MODEL_FORMAT {
        return Err(Error::Parse("unsupported model format".into()));
    }
    let num = |k: &str| -> Result<f64> { parse_f(header_value(&header, k)?, k) };
    let base = BaseKernelSpec::new(
        BaseKernelFamily::parse(header_value(&header, "base.family")?)?,
        num("base.bandwidth")?,
        parse_u(header_value(&header, "base.dim")?, "base.dim")?,
    )?;
    let embed = EmbeddingKernelSpec::new(
        EmbeddingKernelFamily::parse(header_value(&header, "embed.family")?)?,
        num("embed.sigma")?,
        base,
    )?;
    let penalty = match header_value(&header, "penalty.kind")? {
        "identity" => PenaltySpec::Identity,
        "laplacian" => PenaltySpec::Laplacian {
            bandwidth: num("penalty.bandwidth")?,
        },
        "custom" => {
            let n = penalty_rows.len();
            if n == 0 || penalty_rows.iter().any(|r| r.len() != n) {
                return Err(Error::Parse("custom penalty must be a square matrix".into()));
            }
            PenaltySpec::Custom(DMatrix::from_fn(n, n, |i, j| penalty_rows[i][j]))
        }
        other => return Err(invalid("penalty.kind", format!("unknown penalty `{other}`"))),
    };
    let engine = match header_value(&header, "engine")? {
        "exact" => Engine::Exact,
        "taylor" => {
            let center = header_value(&header, "engine.center")?
                .split(',')
                .map(|s| parse_f(s, "engine.center"))
                .collect::<Result<Vec<f64>>>()?;
            if center.len() != base.dim {
                return Err(Error::DimensionMismatch {
                    expected: base.dim,
                    got: center.len(),
                });
            }
            let order = parse_u(header_value(&header, "engine.order")?, "engine.order")?;
            if order == 0 {
                return Err(Error::Parse("engine.order must be positive".into()));
            }
            Engine::Taylor(TaylorFeatureMap::from_parts(
                num("engine.bandwidth")?,
                center,
                num("engine.radius")?,
                order,
            ))
        }
        other => return Err(Error::Parse(format!("unknown engine `{other}`"))),
    };
    let support = bag_points.into_iter().map(Bag::new).collect::<Result<Vec<_>>>()?;
    Model::from_parts(
        support,
        coefficients,
        num("lambda1")?,
        num("lambda2")?,
        penalty,
        embed,
        engine,
        num("c_v")?,
        num("residual")?,
    )
}

pub fn read_model(path: &Path) -> Result<Model> {
    model_from_str(&read_text(path)?)
}

fn opt_f(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

pub const ROW_HEADER: &str =
    "n,m,seed,d,d_schedule,lambda1,lambda2,c_v,within_budget,status,error,fit_seconds";

/// Result rows in canonical `(n, m, seed)` order; `fit_seconds` is last so
/// it can be dropped when comparing runs.
pub fn rows_to_csv(rows: &[ExperimentRow]) -> String {
    let mut sorted: Vec<&ExperimentRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.n, r.m, r.seed));
    let mut out = format!("{ROW_HEADER}\n");
    for r in sorted {
        let budget = r.within_budget.map_or("n/a".to_string(), |b| b.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:e},{:e},{:e},{},{},{},{:.6}",
            r.n,
            r.m,
            r.seed,
            r.d,
            r.d_schedule,
            r.lambda1,
            r.lambda2,
            r.c_v,
            budget,
            r.status,
            opt_f(r.error),
            r.fit_seconds
        );
    }
    out
}

pub fn timings_to_csv(rows: &[TimingRow]) -> String {
    let mut sorted: Vec<&TimingRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.n, r.m, r.seed, r.subset));
    let mut out = String::from("n,m,seed,subset,size,fit_seconds\n");
    for r in sorted {
        let _ = writeln!(out, "{},{},{},{},{},{:.6}", r.n, r.m, r.seed, r.subset, r.size, r.fit_seconds);
    }
    out
}

/// Two-column `quantity,value` summary of a rate experiment.
pub fn rate_summary_to_csv(report: &RateReport) -> String {
    let mut out = String::from("quantity,value\n");
    let _ = writeln!(out, "beta,{:e}", report.beta);
    if let Some(fit) = &report.beta_fit {
        let _ = writeln!(out, "beta_source,pilot");
        let _ = writeln!(out, "beta_clamped,{}", fit.clamped);
        let _ = writeln!(out, "capacity_c0,{:e}", fit.c0_hat);
        let _ = writeln!(out, "capacity_residual,{:e}", fit.residual);
    } else {
        let _ = writeln!(out, "beta_source,config");
    }
    for (n, e) in &report.mean_errors {
        let _ = writeln!(out, "mean_error_n{n},{e:e}");
    }
    let _ = writeln!(out, "measured_slope,{}", opt_f(report.measured_slope));
    let _ = writeln!(out, "theoretical_slope,{:e}", report.theoretical_slope);
    let _ = writeln!(out, "reference_slope_beta1,{:e}", report.reference_slope);
    let _ = writeln!(out, "strictly_decreasing,{}", report.strictly_decreasing());
    out
}

pub fn write_csv(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}

pub const CHECK_HEADER: &str = "check_name,trials,max_value,threshold,pass";

pub fn checks_to_csv_rows(results: &[BatteryResult]) -> String {
    let mut out = String::new();
    for r in results {
        let pass = r.pass.map_or("n/a".to_string(), |p| p.to_string());
        let _ = writeln!(out, "{},{},{:e},{:e},{pass}", r.name, r.trials, r.max_value, r.threshold);
    }
    out
}

/// Appends battery results, writing the header first if the file is new.
pub fn append_checks(path: &Path, results: &[BatteryResult]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{CHECK_HEADER}")?;
    }
    f.write_all(checks_to_csv_rows(results).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::fit;

    fn tiny() -> TwoStageDataset {
        let base = BaseKernelSpec::gaussian(0.7, 2).unwrap();
        let bags = vec![
            Bag::new(vec![vec![0.1, 0.2], vec![0.3, -0.4]]).unwrap(),
            Bag::new(vec![vec![1.0 / 3.0, 0.5]]).unwrap(),
            Bag::new(vec![vec![0.9, 0.8], vec![0.7, 0.6], vec![0.5, 0.4]]).unwrap(),
        ];
        TwoStageDataset::new(bags, vec![0.5, -1.0 / 7.0, 1.0], EmbeddingKernelSpec::linear(base), 2.0).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let ds = tiny();
        let text = dataset_to_csv(ds.bags(), ds.labels());
        let (bags, labels) = dataset_from_csv(&text).unwrap();
        assert_eq!(bags, ds.bags());
        assert_eq!(labels, ds.labels());
    }

    #[test]
    fn dataset_rejects_conflicting_labels() {
        let text = "bag_id,point_index,label,x0\n0,0,1.0,0.0\n0,1,2.0,0.0\n";
        assert!(dataset_from_csv(text).is_err());
        assert!(dataset_from_csv("a,b\n").is_err());
    }

    #[test]
    fn model_round_trip_predicts_identically() {
        let ds = tiny();
        for engine in [Engine::Exact, Engine::auto(&ds.embed().base, ds.bags())] {
            let ds = ds.clone().with_engine(engine);
            let model = fit(&ds, 0.1, 0.01, &PenaltySpec::Laplacian { bandwidth: 0.5 }).unwrap();
            let back = model_from_str(&model_to_string(&model)).unwrap();
            assert_eq!(back.engine(), model.engine());
            assert_eq!(back.coefficients(), model.coefficients());
            for bag in ds.bags() {
                assert_eq!(back.predict(bag).unwrap(), model.predict(bag).unwrap());
            }
        }
    }

    #[test]
    fn model_rejects_garbage() {
        assert!(model_from_str("format=other\n").is_err());
        assert!(model_from_str("[weird]\n").is_err());
    }
}
