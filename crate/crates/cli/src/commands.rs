use std::fmt::Write as _;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use resgcnn::data::{
    load_mhealth, load_pamap2, load_tnda, prepare_windows, ChannelStats, DatasetId, PreparedDataset, SensorWindow,
    SyntheticFamily, SyntheticSpec,
};
use resgcnn::eval::{evaluate, serialize_report, MetricsReport};
use resgcnn::graph::GraphSample;
use resgcnn::model::{export_blocks, Architecture, BlockParamsArchive, ModelArchive, ModelParams};
use resgcnn::train::{fewshot_split, kfold_split, train_with, LearningCurve};
use resgcnn::transfer::{
    assemble_grid, cell_plan, run_baseline, run_transfer, run_transferred, target_split, to_graph_samples,
    train_source, FewShotGrid, GridCell, GridRun, TargetRun, TransferPlan, TransferTask,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Default architecture with the block width matched to the window length.
pub fn architecture_for(window_length: usize) -> Architecture {
    let mut arch = Architecture {
        in_features: window_length,
        ..Architecture::default()
    };
    arch.block_layers[arch.block_layers.len() - 1].out_features = window_length;
    arch
}

pub fn prepared_path(cfg: &RunConfig, dataset: DatasetId) -> PathBuf {
    cfg.out.join(format!("{}.rgd", dataset.name()))
}

fn synthetic_dataset(cfg: &RunConfig) -> Result<PreparedDataset, CliError> {
    let s = &cfg.synthetic;
    let spec = SyntheticSpec {
        window_length: cfg.train.window_length,
        snr_db: Some(s.snr_db),
        ..SyntheticSpec::new(s.classes, s.samples_per_class, s.channels, s.seed)
    };
    let windows = spec.generate().map_err(CliError::core("synthetic data"))?;
    Ok(PreparedDataset {
        manifest: resgcnn::data::DatasetManifest::synthetic(s.channels, s.classes),
        window_length: spec.window_length,
        step: cfg.train.window_step(),
        stats: None,
        windows,
    })
}

/// Related synthetic source and target sets: the source covers every class
/// of a family, the target a reordered subset with fresh channel styles.
pub fn synthetic_transfer_pair(cfg: &RunConfig, pair: usize) -> Result<(PreparedDataset, PreparedDataset), CliError> {
    let s = &cfg.synthetic;
    let family_seed = s.seed + 100 * (pair as u64 + 1);
    let family = SyntheticFamily::new(s.transfer_family_classes, s.channels, cfg.train.window_length, family_seed)
        .map_err(CliError::core("synthetic family"))?;
    let all: Vec<usize> = (0..s.transfer_family_classes).collect();
    let source = family
        .prepared(&all, s.transfer_source_samples, Some(s.snr_db), family_seed * 10)
        .map_err(CliError::core("synthetic source"))?;
    let target = family
        .prepared(&s.transfer_target_classes, s.transfer_target_samples, Some(s.snr_db), family_seed * 20)
        .map_err(CliError::core("synthetic target"))?;
    Ok((source, target))
}

fn load_raw(cfg: &RunConfig, dataset: DatasetId) -> Result<PreparedDataset, CliError> {
    if dataset == DatasetId::Synthetic {
        return synthetic_dataset(cfg);
    }
    let path = match dataset {
        DatasetId::Pamap2 => &cfg.data.pamap2,
        DatasetId::Mhealth => &cfg.data.mhealth,
        _ => &cfg.data.tnda,
    }
    .as_ref()
    .ok_or_else(|| CliError::Usage(format!("data.{} is not set", dataset.name())))?;
    let context = format!("loading {dataset}");
    let loaded = match dataset {
        DatasetId::Pamap2 => load_pamap2(path),
        DatasetId::Mhealth => load_mhealth(path),
        _ => load_tnda(path, &cfg.data.tnda_layout),
    }
    .map_err(CliError::data(context.clone()))?;
    let (wl, step) = (cfg.train.window_length, cfg.train.window_step());
    let windows = prepare_windows(&loaded.streams, wl, step).map_err(CliError::data(context))?;
    Ok(PreparedDataset {
        manifest: loaded.manifest,
        window_length: wl,
        step,
        stats: None,
        windows,
    })
}

fn class_counts(data: &PreparedDataset) -> Vec<usize> {
    let mut counts = vec![0; data.manifest.num_classes()];
    for w in &data.windows {
        counts[w.label] += 1;
    }
    counts
}

pub fn summarize(data: &PreparedDataset) -> String {
    let mut out = format!(
        "{}: {} channels, {} classes, window {} step {}\n",
        data.manifest.dataset,
        data.manifest.num_channels(),
        data.manifest.num_classes(),
        data.window_length,
        data.step
    );
    for ((_, name), count) in data.manifest.labels.iter().zip(class_counts(data)) {
        writeln!(out, "  {name:<28} {count}").expect("writing to a String");
    }
    write!(out, "segments: {}", data.windows.len()).expect("writing to a String");
    out
}

/// Loads, resamples and segments a dataset and writes the prepared archive.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let data = load_raw(cfg, cfg.dataset)?;
    create_dir(&cfg.out)?;
    let path = prepared_path(cfg, cfg.dataset);
    data.write(&path).map_err(CliError::data("writing archive"))?;
    println!("{}", summarize(&data));
    println!("wrote {}", path.display());
    Ok(path)
}

/// Writes the synthetic set described by the `[synthetic]` section.
pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let cfg = RunConfig {
        dataset: DatasetId::Synthetic,
        ..cfg.clone()
    };
    cmd_prepare(&cfg)
}

/// The archive from `data.prepared` or `<out>/<dataset>.rgd`; synthetic data
/// is generated when neither exists.
pub fn load_prepared(cfg: &RunConfig, dataset: DatasetId) -> Result<PreparedDataset, CliError> {
    let explicit = cfg.data.prepared.as_ref().filter(|_| dataset == cfg.dataset);
    let path = explicit.cloned().unwrap_or_else(|| prepared_path(cfg, dataset));
    if path.exists() {
        return PreparedDataset::read(&path).map_err(CliError::data(format!("reading {}", path.display())));
    }
    if explicit.is_none() && dataset == DatasetId::Synthetic {
        return synthetic_dataset(cfg);
    }
    Err(CliError::Data {
        context: format!("no prepared {dataset} archive; run `resgcnn prepare --dataset {dataset}` first"),
        source: resgcnn::Error::Io {
            path,
            source: std::io::ErrorKind::NotFound.into(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StatsFile {
    mean: Vec<f64>,
    std: Vec<f64>,
}

fn write_stats(path: &Path, stats: &ChannelStats) -> Result<(), CliError> {
    let file = StatsFile {
        mean: stats.mean.clone(),
        std: stats.std.clone(),
    };
    write_file(path, toml::to_string(&file).expect("statistics serialize"))
}

fn read_stats(path: &Path) -> Result<ChannelStats, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: StatsFile =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(ChannelStats {
        mean: file.mean,
        std: file.std,
    })
}

fn write_run(dir: &Path, prefix: &str, model: &ModelParams, channels: usize, curve: &LearningCurve, report: &MetricsReport) -> Result<(), CliError> {
    let archive = ModelArchive {
        params: model.clone(),
        channels: channels as u32,
    };
    let model_path = dir.join(format!("{prefix}_model.rgm"));
    archive.write(&model_path).map_err(CliError::data("writing model"))?;
    let curve_path = dir.join(format!("{prefix}_curve.csv"));
    curve.write_csv(&curve_path).map_err(CliError::data("writing curve"))?;
    serialize_report(report, dir.join(format!("{prefix}_report.toml"))).map_err(CliError::data("writing report"))?;
    write_file(&dir.join(format!("{prefix}_confusion.csv")), report.confusion_csv())
}

/// Outcome of one train/test split of `cmd_train`.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub name: String,
    pub curve: LearningCurve,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub splits: Vec<SplitResult>,
}

impl TrainSummary {
    pub fn mean_accuracy(&self) -> f64 {
        self.splits.iter().map(|s| s.report.overall_accuracy).sum::<f64>() / self.splits.len() as f64
    }

    /// Macro summary over the folds in stable key order.
    pub fn to_toml(&self) -> String {
        let n = self.splits.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| self.splits.iter().map(|s| f(&s.report)).sum::<f64>() / n;
        let acc: Vec<f64> = self.splits.iter().map(|s| s.report.overall_accuracy).collect();
        let m = mean(|r| r.overall_accuracy);
        let sd = (acc.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt();
        let list = |v: &[f64]| v.iter().map(|a| format!("{a:.2}")).collect::<Vec<_>>().join(", ");
        let mut out = String::new();
        writeln!(out, "splits = {}", self.splits.len()).expect("writing to a String");
        writeln!(out, "overall_accuracy = [{}]", list(&acc)).expect("writing to a String");
        writeln!(out, "mean_overall_accuracy = {m:.2}").expect("writing to a String");
        writeln!(out, "std_overall_accuracy = {sd:.2}").expect("writing to a String");
        writeln!(out, "mean_macro_precision = {:.2}", mean(|r| r.macro_precision)).expect("writing to a String");
        writeln!(out, "mean_macro_recall = {:.2}", mean(|r| r.macro_recall)).expect("writing to a String");
        writeln!(out, "mean_macro_f1 = {:.2}", mean(|r| r.macro_f1)).expect("writing to a String");
        out
    }
}

fn pick(windows: &[SensorWindow], idx: &[usize]) -> Vec<SensorWindow> {
    idx.iter().map(|&i| windows[i].clone()).collect()
}

/// Trains with k-fold cross-validation (`folds >= 2`) or one stratified
/// split and writes model, curve, report, confusion matrix and
/// standardization statistics per split.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    let data = load_prepared(cfg, cfg.dataset)?;
    let tc = &cfg.train;
    if data.windows.is_empty() {
        return Err(CliError::Usage(format!("{} has no windows", data.manifest.dataset)));
    }
    let num_classes = data.manifest.num_classes();
    let channels = data.manifest.num_channels();
    let splits: Vec<(String, Vec<usize>, Vec<usize>)> = if tc.folds >= 2 {
        kfold_split(data.windows.len(), tc.folds, tc.seed)
            .map_err(CliError::core("splitting"))?
            .into_iter()
            .enumerate()
            .map(|(i, (train, test))| (format!("fold{i}"), train, test))
            .collect()
    } else {
        let labels: Vec<usize> = data.windows.iter().map(|w| w.label).collect();
        let (train, test) = fewshot_split(&labels, num_classes, tc.train_fraction, tc.test_fraction, tc.seed)
            .map_err(CliError::core("splitting"))?;
        vec![("split".to_string(), train, test)]
    };
    let dir = cfg
        .out
        .join(format!("train-{}-seed{}", data.manifest.dataset, tc.seed));
    create_dir(&dir)?;
    let arch = architecture_for(data.window_length);
    let mut results = Vec::new();
    for (name, train_idx, test_idx) in splits {
        let train_w = pick(&data.windows, &train_idx);
        let test_w = pick(&data.windows, &test_idx);
        let stats = ChannelStats::from_windows(&train_w).map_err(CliError::core(name.clone()))?;
        let psi = tc.correlation_threshold;
        let train = to_graph_samples(&train_w, psi, &stats).map_err(CliError::data(name.clone()))?;
        let test = to_graph_samples(&test_w, psi, &stats).map_err(CliError::data(name.clone()))?;
        let train_refs: Vec<&GraphSample> = train.iter().collect();
        let test_refs: Vec<&GraphSample> = test.iter().collect();
        let model = ModelParams::new(arch.clone(), num_classes, tc.seed).map_err(CliError::core(name.clone()))?;
        log::info!("{name}: {} training, {} test windows", train.len(), test.len());
        let (model, curve) = train_with(model, &train_refs, Some(&test_refs), tc, |c| {
            log::info!(
                "{name} epoch {}: loss {:.5}, test accuracy {:.2}%",
                c.epochs() - 1,
                c.train_loss.last().copied().unwrap_or(f64::NAN),
                c.test_accuracy.last().copied().unwrap_or(f64::NAN)
            );
            ControlFlow::Continue(())
        })
        .map_err(CliError::core(format!("training {name}")))?;
        let report = if test_refs.is_empty() {
            evaluate(&model, &train_refs)
        } else {
            evaluate(&model, &test_refs)
        }
        .map_err(CliError::core(format!("evaluating {name}")))?;
        write_run(&dir, &name, &model, channels, &curve, &report)?;
        write_stats(&dir.join(format!("{name}_stats.toml")), &stats)?;
        println!(
            "{name}: accuracy {:.2}%, macro F1 {:.2}% after {} epochs",
            report.overall_accuracy,
            report.macro_f1,
            curve.epochs()
        );
        results.push(SplitResult { name, curve, report });
    }
    let summary = TrainSummary { dir, splits: results };
    if summary.splits.len() > 1 {
        write_file(&summary.dir.join("summary.toml"), summary.to_toml())?;
        println!("mean accuracy over {} folds: {:.2}%", summary.splits.len(), summary.mean_accuracy());
    }
    println!("artifacts in {}", summary.dir.display());
    Ok(summary)
}

/// Evaluates a stored model on every window of the configured dataset.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<MetricsReport, CliError> {
    let model_path = cfg
        .evaluate
        .model
        .as_ref()
        .ok_or_else(|| CliError::Usage("evaluate.model (or --model) is not set".into()))?;
    let archive = ModelArchive::read(model_path).map_err(CliError::data(format!("reading {}", model_path.display())))?;
    let data = load_prepared(cfg, cfg.dataset)?;
    if archive.channels as usize != data.manifest.num_channels() {
        return Err(CliError::Usage(format!(
            "model expects {} channels, {} has {}",
            archive.channels,
            data.manifest.dataset,
            data.manifest.num_channels()
        )));
    }
    if archive.params.num_classes() != data.manifest.num_classes() {
        return Err(CliError::Usage(format!(
            "model predicts {} classes, {} has {}",
            archive.params.num_classes(),
            data.manifest.dataset,
            data.manifest.num_classes()
        )));
    }
    let name = model_path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let stats_path = model_path.with_file_name(name.replace("_model.rgm", "_stats.toml"));
    let stats = if stats_path != *model_path && stats_path.exists() {
        read_stats(&stats_path)?
    } else if let Some(stats) = &data.stats {
        stats.clone()
    } else {
        log::warn!("no stored statistics; standardizing with the evaluated data");
        ChannelStats::from_windows(&data.windows).map_err(CliError::data("statistics"))?
    };
    let samples = to_graph_samples(&data.windows, cfg.train.correlation_threshold, &stats)
        .map_err(CliError::data("graph conversion"))?;
    let refs: Vec<&GraphSample> = samples.iter().collect();
    let report = evaluate(&archive.params, &refs).map_err(CliError::core("evaluating"))?;
    create_dir(&cfg.out)?;
    let prefix = format!("evaluate-{}", data.manifest.dataset);
    serialize_report(&report, cfg.out.join(format!("{prefix}_report.toml"))).map_err(CliError::data("writing report"))?;
    write_file(&cfg.out.join(format!("{prefix}_confusion.csv")), report.confusion_csv())?;
    println!("{}", report.to_toml());
    Ok(report)
}

fn fraction_label(fraction: f64) -> String {
    format!("{}pct", 100.0 * fraction)
}

/// `<tag>_<fraction>pct_seed<seed>_<tf|scratch>`.
pub fn run_prefix(tag: &str, fraction: f64, seed: u64, transferred: bool) -> String {
    format!(
        "{tag}_{}_seed{seed}_{}",
        fraction_label(fraction),
        if transferred { "tf" } else { "scratch" }
    )
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the blocks carried by `model`, in the layout of `reference`.
pub fn block_hash(model: &ModelParams, reference: &BlockParamsArchive) -> String {
    let mut archive = export_blocks(model, reference.channels as usize);
    archive.source_classes = reference.source_classes;
    sha256_hex(&archive.to_bytes())
}

fn write_target_run(dir: &Path, prefix: &str, channels: usize, run: &TargetRun) -> Result<(), CliError> {
    write_run(dir, prefix, &run.model, channels, &run.curve, &run.report)
}

fn transfer_plan(cfg: &RunConfig, source: DatasetId, target: DatasetId) -> TransferPlan {
    let t = &cfg.transfer;
    let mut plan = TransferPlan::new(source, target);
    plan.alignment = t.alignment;
    plan.freeze_blocks = t.freeze_blocks;
    plan.arch = architecture_for(cfg.train.window_length);
    plan.source_config = t.source_train.clone();
    plan.target_config = t.target_train.clone();
    plan
}

fn parse_pair(tag: &str) -> Result<(DatasetId, DatasetId), CliError> {
    let from_initial = |s: &str| match s {
        "P" => Some(DatasetId::Pamap2),
        "M" => Some(DatasetId::Mhealth),
        "T" => Some(DatasetId::Tnda),
        _ => None,
    };
    tag.split_once("-to-")
        .and_then(|(a, b)| Some((from_initial(a)?, from_initial(b)?)))
        .ok_or_else(|| CliError::Usage(format!("transfer pair '{tag}' is not of the form P-to-M")))
}

/// Result of a single transfer plan.
#[derive(Debug, Clone)]
pub struct TransferSummary {
    pub dir: PathBuf,
    pub transfer: LearningCurve,
    pub baseline: LearningCurve,
    pub source_block_hash: String,
    pub transferred_block_hash: String,
}

/// Single transfer plan or the few-shot grid, depending on `transfer.grid`.
pub fn cmd_transfer(cfg: &RunConfig, jobs: usize) -> Result<TransferOutput, CliError> {
    if cfg.transfer.grid {
        cmd_transfer_grid(cfg, jobs).map(TransferOutput::Grid)
    } else {
        cmd_transfer_single(cfg).map(TransferOutput::Single)
    }
}

#[derive(Debug, Clone)]
pub enum TransferOutput {
    Single(TransferSummary),
    Grid(FewShotGrid),
}

fn synthetic_transfer(cfg: &RunConfig) -> bool {
    cfg.dataset == DatasetId::Synthetic
}

pub fn cmd_transfer_single(cfg: &RunConfig) -> Result<TransferSummary, CliError> {
    let (plan, source, target) = if synthetic_transfer(cfg) {
        let (s, t) = synthetic_transfer_pair(cfg, 0)?;
        (transfer_plan(cfg, DatasetId::Synthetic, DatasetId::Synthetic), s, t)
    } else {
        let plan = transfer_plan(cfg, cfg.transfer.source, cfg.transfer.target);
        let s = load_prepared(cfg, plan.source)?;
        let t = load_prepared(cfg, plan.target)?;
        (plan, s, t)
    };
    plan.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let outcome = run_transfer(&plan, &source, &target).map_err(CliError::core(plan.tag.clone()))?;
    let dir = cfg.out.join("transfer");
    create_dir(&dir)?;
    let seed = plan.target_config.seed;
    let fraction = plan.target_config.train_fraction;
    let channels = outcome.source.manifest.num_channels();
    let source_prefix = format!("{}_seed{}_source", plan.tag, plan.source_config.seed);
    let blocks_path = dir.join(format!("{source_prefix}_blocks.rgb"));
    outcome.source.blocks.write(&blocks_path).map_err(CliError::data("writing blocks"))?;
    outcome
        .source
        .curve
        .write_csv(dir.join(format!("{source_prefix}_curve.csv")))
        .map_err(CliError::data("writing curve"))?;
    write_target_run(&dir, &run_prefix(&plan.tag, fraction, seed, true), channels, &outcome.transfer)?;
    write_target_run(&dir, &run_prefix(&plan.tag, fraction, seed, false), channels, &outcome.baseline)?;

    let source_hash = sha256_hex(&outcome.source.blocks.to_bytes());
    let transferred_hash = block_hash(&outcome.transfer.model, &outcome.source.blocks);
    write_file(
        &dir.join(format!("{}_{}_seed{seed}_blocks.sha256", plan.tag, fraction_label(fraction))),
        format!("source {source_hash}\ntransferred {transferred_hash}\n"),
    )?;
    let first = |c: &LearningCurve| c.test_accuracy.first().copied().unwrap_or(f64::NAN);
    println!("{}: {} target channels", plan.tag, channels);
    println!(
        "  transferred: epoch 0 {:.2}%, final {:.2}%",
        first(&outcome.transfer.curve),
        outcome.transfer.report.overall_accuracy
    );
    println!(
        "  scratch:     epoch 0 {:.2}%, final {:.2}%",
        first(&outcome.baseline.curve),
        outcome.baseline.report.overall_accuracy
    );
    println!(
        "  blocks {}: {source_hash}",
        if source_hash == transferred_hash { "unchanged" } else { "fine-tuned" }
    );
    Ok(TransferSummary {
        dir,
        transfer: outcome.transfer.curve,
        baseline: outcome.baseline.curve,
        source_block_hash: source_hash,
        transferred_block_hash: transferred_hash,
    })
}

/// Source training once per (task, seed), then every fraction.
fn run_task_seed(
    tasks: &[TransferTask],
    task: usize,
    seed: u64,
    fractions: &[f64],
    dir: &Path,
) -> Result<Vec<GridRun>, CliError> {
    let t = tasks[task];
    let base = cell_plan(t.plan, &GridCell { task, fraction: fractions[0], seed });
    let source = train_source(&base, t.source, &t.target.manifest).map_err(CliError::core(base.tag.clone()))?;
    let source_prefix = format!("{}_seed{seed}_source", base.tag);
    source
        .blocks
        .write(dir.join(format!("{source_prefix}_blocks.rgb")))
        .map_err(CliError::data("writing blocks"))?;
    source
        .curve
        .write_csv(dir.join(format!("{source_prefix}_curve.csv")))
        .map_err(CliError::data("writing curve"))?;
    let channels = source.manifest.num_channels();
    let mut runs = Vec::new();
    for &fraction in fractions {
        let plan = cell_plan(t.plan, &GridCell { task, fraction, seed });
        let context = format!("{} at {}", plan.tag, fraction_label(fraction));
        let split = target_split(t.target, &source.manifest, &plan.target_config).map_err(CliError::core(context.clone()))?;
        let tf = run_transferred(&plan, &source, &split).map_err(CliError::core(context.clone()))?;
        let scratch = run_baseline(&plan, &split).map_err(CliError::core(context))?;
        write_target_run(dir, &run_prefix(&plan.tag, fraction, seed, true), channels, &tf)?;
        write_target_run(dir, &run_prefix(&plan.tag, fraction, seed, false), channels, &scratch)?;
        log::info!(
            "{} {} seed {seed}: tf {:.2}% scratch {:.2}%",
            plan.tag,
            fraction_label(fraction),
            tf.report.overall_accuracy,
            scratch.report.overall_accuracy
        );
        runs.push(GridRun {
            tag: plan.tag,
            fraction,
            seed,
            transfer: tf.report.overall_accuracy,
            baseline: scratch.report.overall_accuracy,
        });
    }
    Ok(runs)
}

/// Few-shot grid over `transfer.pairs` (or synthetic pairs), fractions and
/// seeds, with up to `jobs` (task, seed) groups in parallel.
pub fn cmd_transfer_grid(cfg: &RunConfig, jobs: usize) -> Result<FewShotGrid, CliError> {
    let mut plans = Vec::new();
    let mut datasets: Vec<PreparedDataset> = Vec::new();
    let mut ids: Vec<DatasetId> = Vec::new();
    let mut index_of = |cfg: &RunConfig, id: DatasetId, datasets: &mut Vec<PreparedDataset>| -> Result<usize, CliError> {
        if let Some(i) = ids.iter().position(|d| *d == id) {
            return Ok(i);
        }
        datasets.push(load_prepared(cfg, id)?);
        ids.push(id);
        Ok(datasets.len() - 1)
    };
    let mut pairs = Vec::new();
    if synthetic_transfer(cfg) {
        for i in 0..cfg.synthetic.transfer_pairs {
            let (s, t) = synthetic_transfer_pair(cfg, i)?;
            let mut plan = transfer_plan(cfg, DatasetId::Synthetic, DatasetId::Synthetic);
            plan.tag = format!("synthetic-{}", i + 1);
            datasets.push(s);
            datasets.push(t);
            pairs.push((datasets.len() - 2, datasets.len() - 1));
            plans.push(plan);
        }
    } else {
        for tag in &cfg.transfer.pairs {
            let (source, target) = parse_pair(tag)?;
            let s = index_of(cfg, source, &mut datasets)?;
            let t = index_of(cfg, target, &mut datasets)?;
            pairs.push((s, t));
            plans.push(transfer_plan(cfg, source, target));
        }
    }
    for plan in &plans {
        plan.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let tasks: Vec<TransferTask> = plans
        .iter()
        .zip(&pairs)
        .map(|(plan, &(s, t))| TransferTask {
            plan,
            source: &datasets[s],
            target: &datasets[t],
        })
        .collect();
    let dir = cfg.out.join("fewshot");
    create_dir(&dir)?;
    let fractions = &cfg.transfer.fractions;
    let seeds = &cfg.transfer.seeds;
    let groups: Vec<(usize, u64)> = (0..tasks.len())
        .flat_map(|t| seeds.iter().map(move |&s| (t, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let results: Vec<Vec<GridRun>> = pool.install(|| {
        groups
            .par_iter()
            .map(|&(task, seed)| run_task_seed(&tasks, task, seed, fractions, &dir))
            .collect::<Result<_, _>>()
    })?;
    let mut runs = Vec::new();
    for cell in resgcnn::transfer::grid_cells(tasks.len(), fractions, seeds) {
        let group = groups
            .iter()
            .position(|&g| g == (cell.task, cell.seed))
            .expect("every cell belongs to a group");
        let run = results[group]
            .iter()
            .find(|r| r.fraction == cell.fraction)
            .expect("every fraction was run");
        runs.push(run.clone());
    }
    let grid = assemble_grid(&tasks, fractions, runs);
    write_file(&dir.join("fewshot_grid.csv"), grid.to_csv())?;
    write_file(&dir.join("fewshot_runs.csv"), grid.runs_csv())?;
    print!("{}", grid.to_csv());
    println!("transfer at least as accurate in {} of {} runs", grid.transfer_wins(), grid.runs.len());
    Ok(grid)
}
