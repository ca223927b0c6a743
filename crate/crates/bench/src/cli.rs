//! Command-line subcommands. Every command writes CSV and/or JSON into the
//! output directory; with a fixed seed and config the files are
//! byte-identical across runs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use paramcorrupt::constraints::ConstraintSet;
use paramcorrupt::corruption::bounds::error_bound_ratio;
use paramcorrupt::corruption::eta::{eta_cdf, eta_pdf, eta_statistic};
use paramcorrupt::corruption::sampling::{map_samples, NoiseKind};
use paramcorrupt::defense::{train, TrainConfig, TrainReport};
use paramcorrupt::quantize::quantize_model;
use paramcorrupt::special::integrate;
use paramcorrupt::{Model, ParamPartition, Quadratic};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{parse_norm, ExperimentConfig};
use crate::data::Dataset;
use crate::error::{BenchError, Result};
use crate::stats::{mean_std, two_sample_t, TTest};
use crate::sweep::{
    layer_probe, parameter_groups, read_rows_csv, run_probe_sweep, write_json, write_rows_csv, ReportRow,
};

#[derive(Debug, Parser)]
#[command(
    name = "paramcorrupt",
    version,
    about = "Parameter-corruption probing and defense experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed; defaults to the first seed in the config, or 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the config's `out`, or `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an undefended model and save `model.pfck`.
    Train,
    /// Train with the `[defense]` section and save `model.pfck`.
    Defend,
    /// Run the `[[sweep]]` corruptions against a checkpoint.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Multi-step corruption restricted to each parameter group.
    LayerProbe {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Test metrics of a checkpoint after n-bit quantization.
    QuantizeEval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,16")]
        bits: Vec<u32>,
    },
    /// Empirical distribution of η against its exact CDF.
    EtaStats {
        #[arg(long, value_delimiter = ',', default_value = "3,5,20,100")]
        k: Vec<usize>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Worst-case loss change against the gradient-based estimate on a
    /// quadratic `gᵀa + ½aᵀ diag(h) a`.
    BoundCheck {
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025")]
        eps: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,1")]
        hessian_diag: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,0", allow_hyphen_values = true)]
        grad: Vec<f64>,
        #[arg(long, default_value = "2")]
        p: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 1e-4)]
        resolution: f64,
    },
    /// Pooled two-sample t-test, from summary numbers or two sweep CSVs.
    Ttest(TtestArgs),
    /// Summarize sweep CSVs across seeds.
    Report {
        /// Sweep CSV files written by `probe`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TtestArgs {
    #[arg(long, requires_all = ["std1", "mean2", "std2", "n"], allow_hyphen_values = true)]
    pub mean1: Option<f64>,
    #[arg(long)]
    pub std1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub mean2: Option<f64>,
    #[arg(long)]
    pub std2: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Sweep CSV of the first group (compared as first − second).
    #[arg(long, requires = "second", conflicts_with = "mean1")]
    pub first: Option<PathBuf>,
    #[arg(long)]
    pub second: Option<PathBuf>,
    /// Compare `clean` instead of `corrupted` values.
    #[arg(long)]
    pub clean: bool,
}

fn output_dir(common: &Common, cfg: Option<&ExperimentConfig>) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| BenchError::io(&dir, e))?;
    Ok(dir)
}

fn require_config(common: &Common) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| BenchError::Config("this command needs --config".into()))?;
    ExperimentConfig::load(path)
}

fn seed(common: &Common, cfg: Option<&ExperimentConfig>) -> u64 {
    common.seed.or_else(|| cfg.map(|c| c.seeds[0])).unwrap_or(0)
}

pub fn run(cli: &Cli) -> Result<()> {
    let common = &cli.common;
    match &cli.command {
        Command::Train => cmd_train(common, false),
        Command::Defend => cmd_train(common, true),
        Command::Probe { checkpoint } => cmd_probe(common, checkpoint),
        Command::LayerProbe { checkpoint } => cmd_layer_probe(common, checkpoint),
        Command::QuantizeEval { checkpoint, bits } => cmd_quantize(common, checkpoint, bits),
        Command::EtaStats { k, samples } => cmd_eta(common, k, *samples),
        Command::BoundCheck {
            eps,
            hessian_diag,
            grad,
            p,
            n,
            resolution,
        } => cmd_bound(common, eps, hessian_diag, grad, p, *n, *resolution),
        Command::Ttest(args) => cmd_ttest(common, args),
        Command::Report { inputs } => cmd_report(common, inputs),
    }
}

#[derive(Debug, Serialize)]
struct EpochJson {
    epoch: usize,
    clean_loss: f64,
    objective: f64,
    train_accuracy: Option<f64>,
    defense_active: bool,
}

#[derive(Debug, Serialize)]
struct TrainJson {
    seed: u64,
    defended: bool,
    checkpoint: String,
    test_loss: f64,
    test_accuracy: f64,
    epochs: Vec<EpochJson>,
}

/// Trains one model on the configured task; returns the dataset, the
/// trained model, the partition to store and the report.
pub fn train_from_config(
    cfg: &ExperimentConfig,
    seed: u64,
    defended: bool,
) -> Result<(Dataset, Model, ParamPartition, TrainReport)> {
    let data = cfg.dataset(seed)?;
    let network = cfg.network()?;
    let defense = if defended {
        let spec = cfg
            .defense
            .as_ref()
            .ok_or_else(|| BenchError::Config("defend needs a [defense] section".into()))?;
        Some(cfg.defense_config(spec)?)
    } else {
        None
    };
    let partition = defense
        .as_ref()
        .map(|d| d.partition_for(network.param_count()))
        .unwrap_or_else(|| ParamPartition::all(network.param_count()));
    let train_cfg = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        seed,
        optimizer: cfg.optimizer(),
        defense,
    };
    let init = network.init_params(seed);
    let (params, report) = train(&network, &init, &data.train, &train_cfg)?;
    let model = Model::new(network, params)?;
    Ok((data, model, partition, report))
}

fn cmd_train(common: &Common, defended: bool) -> Result<()> {
    let cfg = require_config(common)?;
    let seed = seed(common, Some(&cfg));
    let out = output_dir(common, Some(&cfg))?;
    let (data, model, partition, report) = train_from_config(&cfg, seed, defended)?;
    let path = out.join("model.pfck");
    save_checkpoint(&model, &partition, &path)?;
    let summary = TrainJson {
        seed,
        defended,
        checkpoint: "model.pfck".into(),
        test_loss: model.loss(&data.test)?,
        test_accuracy: model.accuracy(&data.test)?,
        epochs: report
            .epochs
            .iter()
            .map(|e| EpochJson {
                epoch: e.epoch,
                clean_loss: e.clean_loss,
                objective: e.objective,
                train_accuracy: e.accuracy,
                defense_active: e.defense_active,
            })
            .collect(),
    };
    write_json(&summary, &out.join("train_report.json"))?;
    println!(
        "trained {} model (seed {seed}) in {:.2}s: test loss {:.4}, test accuracy {:.4} -> {}",
        if defended { "defended" } else { "baseline" },
        report.wall_time_secs,
        summary.test_loss,
        summary.test_accuracy,
        path.display()
    );
    Ok(())
}

fn cmd_probe(common: &Common, checkpoint: &Path) -> Result<()> {
    let cfg = require_config(common)?;
    if cfg.sweep.is_empty() {
        return Err(BenchError::Config("probe needs at least one [[sweep]] entry".into()));
    }
    let out = output_dir(common, Some(&cfg))?;
    let (model, partition) = load_checkpoint(checkpoint)?;
    let data = cfg.dataset(seed(common, Some(&cfg)))?;
    let rows = run_probe_sweep(&model, &partition, &cfg.sweep, &data.test, &cfg.seeds, &cfg.metrics)?;
    write_rows_csv(&rows, &out.join("probe.csv"))?;
    write_json(&rows, &out.join("probe.json"))?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{} rows ({failed} failed) -> {}",
        rows.len(),
        out.join("probe.csv").display()
    );
    Ok(())
}

fn cmd_layer_probe(common: &Common, checkpoint: &Path) -> Result<()> {
    let cfg = require_config(common)?;
    let spec = cfg
        .layer_probe
        .clone()
        .ok_or_else(|| BenchError::Config("layer-probe needs a [layer_probe] section".into()))?;
    let out = output_dir(common, Some(&cfg))?;
    let (model, _) = load_checkpoint(checkpoint)?;
    let seed = seed(common, Some(&cfg));
    let data = cfg.dataset(seed)?;
    let groups = parameter_groups(&model, spec.grouping);
    let rows = layer_probe(&model, &groups, &spec, &data.test, seed)?;
    write_rows_csv(&rows, &out.join("layer_probe.csv"))?;
    write_json(&rows, &out.join("layer_probe.json"))?;
    for r in &rows {
        println!("{:<16} {:>6} params  ΔL = {:.6}", r.group, r.params, r.delta_loss);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct QuantizeRow {
    bits: u32,
    clean_loss: f64,
    quantized_loss: f64,
    clean_accuracy: f64,
    quantized_accuracy: f64,
    /// `‖W_fixed − W‖_∞` over all parameters.
    max_abs_change: f64,
}

fn cmd_quantize(common: &Common, checkpoint: &Path, bits: &[u32]) -> Result<()> {
    let cfg = require_config(common)?;
    let out = output_dir(common, Some(&cfg))?;
    let (model, partition) = load_checkpoint(checkpoint)?;
    let data = cfg.dataset(seed(common, Some(&cfg)))?;
    let clean_loss = model.loss(&data.test)?;
    let clean_accuracy = model.accuracy(&data.test)?;
    let rows = bits
        .iter()
        .map(|&b| {
            let q = quantize_model(&model, b, Some(&partition))?;
            Ok(QuantizeRow {
                bits: b,
                clean_loss,
                quantized_loss: q.loss(&data.test)?,
                clean_accuracy,
                quantized_accuracy: q.accuracy(&data.test)?,
                max_abs_change: q
                    .params()
                    .iter()
                    .zip(model.params())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_rows_csv(&rows, &out.join("quantize.csv"))?;
    write_json(&rows, &out.join("quantize.json"))?;
    for r in &rows {
        println!(
            "{:>2} bits: loss {:.5} accuracy {:.4}",
            r.bits, r.quantized_loss, r.quantized_accuracy
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct EtaRow {
    pub k: usize,
    pub samples: usize,
    /// `sup |ECDF(η) − P(η ≤ x)|` over the sample.
    pub sup_cdf_gap: f64,
    pub pdf_integral: f64,
    pub mean_eta: f64,
}

/// Sup distance between the empirical CDF of `sorted` and `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Samples `samples` sphere corruptions in dimension `k` against a fixed
/// gradient and returns the sorted η values.
pub fn eta_samples(k: usize, samples: usize, seed: u64) -> Result<Vec<f64>> {
    let g: Vec<f64> = (0..k).map(|i| 1.0 + (i % 3) as f64).collect();
    let mut etas = map_samples(NoiseKind::Sphere { radius: 1.0 }, k, samples, seed, |a| {
        eta_statistic(a, &g, 1.0)
    })?
    .into_iter()
    .collect::<paramcorrupt::Result<Vec<f64>>>()?;
    etas.sort_by(f64::total_cmp);
    Ok(etas)
}

fn cmd_eta(common: &Common, ks: &[usize], samples: usize) -> Result<()> {
    let out = output_dir(common, None)?;
    let seed = seed(common, None);
    let rows = ks
        .iter()
        .map(|&k| {
            let etas = eta_samples(k, samples, seed)?;
            let gap = ks_statistic(&etas, |x| eta_cdf(x, k).unwrap_or(f64::NAN));
            let integral = integrate(|x| eta_pdf(x, k).unwrap_or(f64::NAN), 0.0, 1.0, 1e-12, 1e-12)?;
            Ok(EtaRow {
                k,
                samples,
                sup_cdf_gap: gap,
                pdf_integral: integral.value,
                mean_eta: etas.iter().sum::<f64>() / etas.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_rows_csv(&rows, &out.join("eta_stats.csv"))?;
    for r in &rows {
        println!(
            "k = {:>5}: sup gap {:.5}, ∫pdf = {:.10}",
            r.k, r.sup_cdf_gap, r.pdf_integral
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BoundRow {
    eps: f64,
    delta_max: f64,
    delta_hat: f64,
    first_order: f64,
    loss_ratio: f64,
    estimate_ratio: f64,
    big_o_constant: f64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_bound(
    common: &Common,
    eps: &[f64],
    diag: &[f64],
    grad: &[f64],
    p: &str,
    n: Option<usize>,
    resolution: f64,
) -> Result<()> {
    let out = output_dir(common, None)?;
    let q = Quadratic::diagonal(diag, grad.to_vec()).map_err(|e| BenchError::Config(e.to_string()))?;
    let p = parse_norm(p)?;
    let w = vec![0.0; diag.len()];
    let rows = eps
        .iter()
        .map(|&e| {
            let set = ConstraintSet::new(p, e, n).map_err(|e| BenchError::Config(e.to_string()))?;
            let r = error_bound_ratio(&q, &w, &set, resolution)?;
            Ok(BoundRow {
                eps: e,
                delta_max: r.delta_max,
                delta_hat: r.delta_hat,
                first_order: r.first_order,
                loss_ratio: r.loss_ratio,
                estimate_ratio: r.estimate_ratio,
                big_o_constant: r.big_o_constant,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_rows_csv(&rows, &out.join("bound_check.csv"))?;
    for r in &rows {
        println!(
            "eps {:<8} Δmax {:.6e}  Δmax/ε‖h‖ − 1 = {:.6e}  Δmax/Δ(â) = {:.9}",
            r.eps,
            r.delta_max,
            r.estimate_ratio - 1.0,
            r.loss_ratio
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct TtestRow {
    pub method: String,
    pub setting: String,
    pub metric: String,
    pub mean1: f64,
    pub std1: f64,
    pub mean2: f64,
    pub std2: f64,
    pub n: usize,
    pub t: f64,
    pub df: usize,
    pub critical: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[allow(clippy::too_many_arguments)]
fn ttest_row(
    method: &str,
    setting: &str,
    metric: &str,
    m1: f64,
    s1: f64,
    m2: f64,
    s2: f64,
    n: usize,
    t: TTest,
) -> TtestRow {
    TtestRow {
        method: method.into(),
        setting: setting.into(),
        metric: metric.into(),
        mean1: m1,
        std1: s1,
        mean2: m2,
        std2: s2,
        n,
        t: t.t,
        df: t.df,
        critical: t.critical,
        p_value: t.p_value,
        significant: t.significant,
    }
}

type GroupKey = (String, String, String);

/// Groups rows by (method, setting, metric), collecting values across
/// seeds in first-seen order.
fn group_rows(rows: &[ReportRow], clean: bool) -> Vec<(GroupKey, Vec<f64>)> {
    let mut groups: Vec<(GroupKey, Vec<f64>)> = Vec::new();
    for r in rows {
        let value = if clean { Some(r.clean) } else { r.corrupted };
        let Some(v) = value else { continue };
        let key = (r.method.clone(), r.setting.clone(), r.metric.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, vals)) => vals.push(v),
            None => groups.push((key, vec![v])),
        }
    }
    groups
}

/// t-tests of `first − second` for every (method, setting, metric) shared
/// by both sweeps.
pub fn ttest_from_rows(first: &[ReportRow], second: &[ReportRow], clean: bool) -> Result<Vec<TtestRow>> {
    let a = group_rows(first, clean);
    let b = group_rows(second, clean);
    let mut rows = Vec::new();
    for (key, xs) in &a {
        let Some((_, ys)) = b.iter().find(|(k, _)| k == key) else {
            continue;
        };
        if xs.len() != ys.len() {
            return Err(BenchError::Data(format!(
                "{} {} {}: {} runs vs {} runs",
                key.0,
                key.1,
                key.2,
                xs.len(),
                ys.len()
            )));
        }
        let (m1, s1) = mean_std(xs);
        let (m2, s2) = mean_std(ys);
        if s1 == 0.0 && s2 == 0.0 {
            eprintln!("skipping {} {} {}: no variation across runs", key.0, key.1, key.2);
            continue;
        }
        let t = two_sample_t(m1, s1, m2, s2, xs.len())?;
        rows.push(ttest_row(&key.0, &key.1, &key.2, m1, s1, m2, s2, xs.len(), t));
    }
    if rows.is_empty() {
        return Err(BenchError::Data(
            "the two sweeps share no (method, setting, metric) cells with variation across runs".into(),
        ));
    }
    Ok(rows)
}

fn cmd_ttest(common: &Common, args: &TtestArgs) -> Result<()> {
    let out = output_dir(common, None)?;
    let rows = match (&args.first, &args.second) {
        (Some(first), Some(second)) => ttest_from_rows(&read_rows_csv(first)?, &read_rows_csv(second)?, args.clean)?,
        _ => {
            let (Some(m1), Some(s1), Some(m2), Some(s2), Some(n)) =
                (args.mean1, args.std1, args.mean2, args.std2, args.n)
            else {
                return Err(BenchError::Config(
                    "ttest needs --mean1 --std1 --mean2 --std2 --n, or --first and --second CSVs".into(),
                ));
            };
            let t = two_sample_t(m1, s1, m2, s2, n)?;
            vec![ttest_row("summary", "", "", m1, s1, m2, s2, n, t)]
        }
    };
    write_rows_csv(&rows, &out.join("ttest.csv"))?;
    write_json(&rows, &out.join("ttest.json"))?;
    for r in &rows {
        println!(
            "{} {} {}: t = {:.4}, df = {}, critical {:.3} -> {}",
            r.method,
            r.setting,
            r.metric,
            r.t,
            r.df,
            r.critical,
            if r.significant {
                "significant"
            } else {
                "not significant"
            }
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SummaryRow {
    pub source: String,
    pub method: String,
    pub setting: String,
    pub metric: String,
    pub runs: usize,
    pub failed: usize,
    pub clean_mean: f64,
    pub corrupted_mean: f64,
    pub corrupted_std: f64,
    pub change_mean: f64,
}

/// Mean and spread of each (method, setting, metric) across seeds.
pub fn summarize(source: &str, rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<GroupKey> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.setting.clone(), r.metric.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|key| {
            let members: Vec<&ReportRow> = rows
                .iter()
                .filter(|r| r.method == key.0 && r.setting == key.1 && r.metric == key.2)
                .collect();
            let ok: Vec<&ReportRow> = members.iter().copied().filter(|r| r.corrupted.is_some()).collect();
            let clean: Vec<f64> = members.iter().map(|r| r.clean).collect();
            let corrupted: Vec<f64> = ok.iter().filter_map(|r| r.corrupted).collect();
            let change: Vec<f64> = ok.iter().map(|r| r.corrupted.unwrap_or(r.clean) - r.clean).collect();
            let (corrupted_mean, corrupted_std) = if corrupted.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                mean_std(&corrupted)
            };
            SummaryRow {
                source: source.to_string(),
                method: key.0,
                setting: key.1,
                metric: key.2,
                runs: members.len(),
                failed: members.len() - ok.len(),
                clean_mean: mean_std(&clean).0,
                corrupted_mean,
                corrupted_std,
                change_mean: if change.is_empty() {
                    f64::NAN
                } else {
                    mean_std(&change).0
                },
            }
        })
        .collect()
}

fn cmd_report(common: &Common, inputs: &[PathBuf]) -> Result<()> {
    let out = output_dir(common, None)?;
    let mut summary = Vec::new();
    for path in inputs {
        let rows = read_rows_csv(path)?;
        summary.extend(summarize(&path.display().to_string(), &rows));
    }
    write_rows_csv(&summary, &out.join("report.csv"))?;
    write_json(&summary, &out.join("report.json"))?;
    for s in &summary {
        println!(
            "{:<10} {:<40} {:<8} clean {:.4} corrupted {:.4} ± {:.4}",
            s.method, s.setting, s.metric, s.clean_mean, s.corrupted_mean, s.corrupted_std
        );
    }
    Ok(())
}
