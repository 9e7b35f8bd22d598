//! Parameter transfer between datasets: train on a source task, carry the
//! residual blocks over to a fresh model for the target task, and compare
//! against a matched model trained from scratch.

use std::fmt::Write as _;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::data::{channel_mapping, to_graph_sample, ChannelStats, DatasetId, DatasetManifest, PreparedDataset, SensorWindow};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::graph::GraphSample;
use crate::model::{export_blocks, import_blocks_with, Architecture, BlockParamsArchive, ModelParams};
use crate::train::{fewshot_split, train_with, LearningCurve, TrainConfig};

/// How the channels of source and target are reconciled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelAlignment {
    /// Both datasets keep only the channels they share, in target order.
    #[default]
    Shared,
    /// Channel layouts must already agree.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferPlan {
    pub source: DatasetId,
    pub target: DatasetId,
    pub alignment: ChannelAlignment,
    /// Keep the transferred blocks fixed while training the target model.
    pub freeze_blocks: bool,
    pub arch: Architecture,
    pub source_config: TrainConfig,
    /// Target training; `train_fraction` and `test_fraction` select the split.
    pub target_config: TrainConfig,
    pub tag: String,
}

impl TransferPlan {
    pub fn new(source: DatasetId, target: DatasetId) -> Self {
        Self {
            source,
            target,
            alignment: ChannelAlignment::Shared,
            freeze_blocks: true,
            arch: Architecture::default(),
            source_config: TrainConfig::default(),
            target_config: TrainConfig::default(),
            tag: format!("{}-to-{}", source.initial(), target.initial()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.source == self.target && self.source != DatasetId::Synthetic {
            return Err(Error::invalid(format!("source and target are both {}", self.source)));
        }
        self.arch.validate()?;
        self.source_config.validate()?;
        self.target_config.validate()
    }

    /// Channels both sides are reduced to.
    pub fn common_manifest(&self, source: &DatasetManifest, target: &DatasetManifest) -> Result<DatasetManifest> {
        let common = match self.alignment {
            ChannelAlignment::Shared => target.intersect(source),
            ChannelAlignment::Exact => {
                if source.channels != target.channels {
                    return Err(Error::invalid(format!(
                        "{} and {} channel layouts differ",
                        source.dataset, target.dataset
                    )));
                }
                target.clone()
            }
        };
        if common.num_channels() == 0 {
            return Err(Error::invalid(format!(
                "{} and {} share no channels",
                source.dataset, target.dataset
            )));
        }
        Ok(common)
    }
}

/// Residual blocks learned on the source task.
#[derive(Debug, Clone)]
pub struct SourceModel {
    pub blocks: BlockParamsArchive,
    pub curve: LearningCurve,
    /// Channels the blocks were trained on.
    pub manifest: DatasetManifest,
}

/// Result of training one target model.
#[derive(Debug, Clone)]
pub struct TargetRun {
    pub model: ModelParams,
    pub curve: LearningCurve,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub tag: String,
    pub source: SourceModel,
    pub transfer: TargetRun,
    pub baseline: TargetRun,
}

/// Channel subset and reorder of every window.
pub fn select_channels(windows: &[SensorWindow], map: &[usize]) -> Vec<SensorWindow> {
    windows
        .iter()
        .map(|w| SensorWindow {
            signals: w.signals.select(ndarray::Axis(0), map),
            ..w.clone()
        })
        .collect()
}

/// Graph samples of `windows`, standardized with `stats`.
pub fn to_graph_samples(windows: &[SensorWindow], psi: f64, stats: &ChannelStats) -> Result<Vec<GraphSample>> {
    windows.iter().map(|w| to_graph_sample(w, psi, Some(stats))).collect()
}

fn check_window_length(arch: &Architecture, data: &PreparedDataset) -> Result<()> {
    if let Some(w) = data.windows.first() {
        if w.len() != arch.in_features {
            return Err(Error::shape(format!(
                "windows hold {} samples, model expects {}",
                w.len(),
                arch.in_features
            )));
        }
    }
    if data.windows.is_empty() {
        return Err(Error::invalid(format!("{} has no windows", data.manifest.dataset)));
    }
    Ok(())
}

/// Trains on every source window with a random initialization and exports
/// the blocks.
pub fn train_source(plan: &TransferPlan, source: &PreparedDataset, target: &DatasetManifest) -> Result<SourceModel> {
    plan.validate()?;
    check_window_length(&plan.arch, source)?;
    let common = plan.common_manifest(&source.manifest, target)?;
    let windows = select_channels(&source.windows, &channel_mapping(&source.manifest, &common)?);
    let stats = ChannelStats::from_windows(&windows)?;
    let samples = to_graph_samples(&windows, plan.source_config.correlation_threshold, &stats)?;
    let refs: Vec<&GraphSample> = samples.iter().collect();
    let cfg = &plan.source_config;
    let model = ModelParams::new(plan.arch.clone(), source.manifest.num_classes(), cfg.seed)?;
    log::info!(
        "{}: training source model on {} windows, {} channels",
        plan.tag,
        refs.len(),
        common.num_channels()
    );
    let (model, curve) = train_with(model, &refs, None, cfg, |_| ControlFlow::Continue(()))?;
    Ok(SourceModel {
        blocks: export_blocks(&model, common.num_channels()),
        curve,
        manifest: common,
    })
}

/// Target training and test split shared by the transferred and the
/// scratch model.
pub struct TargetSplit {
    pub train: Vec<GraphSample>,
    pub test: Vec<GraphSample>,
    pub num_classes: usize,
}

/// Few-shot split of the target windows reduced to `common` channels, with
/// standardization statistics from the training part only.
pub fn target_split(target: &PreparedDataset, common: &DatasetManifest, config: &TrainConfig) -> Result<TargetSplit> {
    let windows = select_channels(&target.windows, &channel_mapping(&target.manifest, common)?);
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    let num_classes = target.manifest.num_classes();
    let (train_idx, test_idx) =
        fewshot_split(&labels, num_classes, config.train_fraction, config.test_fraction, config.seed)?;
    if test_idx.is_empty() {
        return Err(Error::invalid("target test split is empty"));
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| windows[i].clone()).collect::<Vec<_>>();
    let (train_w, test_w) = (pick(&train_idx), pick(&test_idx));
    let stats = ChannelStats::from_windows(&train_w)?;
    let psi = config.correlation_threshold;
    Ok(TargetSplit {
        train: to_graph_samples(&train_w, psi, &stats)?,
        test: to_graph_samples(&test_w, psi, &stats)?,
        num_classes,
    })
}

fn run_target(model: ModelParams, split: &TargetSplit, config: &TrainConfig) -> Result<TargetRun> {
    let train: Vec<&GraphSample> = split.train.iter().collect();
    let test: Vec<&GraphSample> = split.test.iter().collect();
    let (model, curve) = train_with(model, &train, Some(&test), config, |_| ControlFlow::Continue(()))?;
    let report = evaluate(&model, &test)?;
    Ok(TargetRun { model, curve, report })
}

/// Target model initialized from the source blocks.
pub fn run_transferred(plan: &TransferPlan, source: &SourceModel, split: &TargetSplit) -> Result<TargetRun> {
    let mut model = import_blocks_with(&source.blocks, &plan.arch, split.num_classes, plan.target_config.seed)?;
    if !plan.freeze_blocks {
        model.unfreeze_blocks();
    }
    let config = TrainConfig {
        freeze_blocks: plan.freeze_blocks,
        ..plan.target_config.clone()
    };
    run_target(model, split, &config)
}

/// Target model from a random initialization with the same classifier
/// initialization and seed as the transferred one.
pub fn run_baseline(plan: &TransferPlan, split: &TargetSplit) -> Result<TargetRun> {
    let model = ModelParams::new(plan.arch.clone(), split.num_classes, plan.target_config.seed)?;
    let config = TrainConfig {
        freeze_blocks: false,
        ..plan.target_config.clone()
    };
    run_target(model, split, &config)
}

/// Source training, block export and import, target training and
/// evaluation, plus the paired scratch baseline.
pub fn run_transfer(plan: &TransferPlan, source: &PreparedDataset, target: &PreparedDataset) -> Result<TransferOutcome> {
    check_window_length(&plan.arch, target)?;
    let source_model = train_source(plan, source, &target.manifest)?;
    let split = target_split(target, &source_model.manifest, &plan.target_config)?;
    let transfer = run_transferred(plan, &source_model, &split)?;
    let baseline = run_baseline(plan, &split)?;
    Ok(TransferOutcome {
        tag: plan.tag.clone(),
        source: source_model,
        transfer,
        baseline,
    })
}

/// A plan together with the data it runs on.
#[derive(Clone, Copy)]
pub struct TransferTask<'a> {
    pub plan: &'a TransferPlan,
    pub source: &'a PreparedDataset,
    pub target: &'a PreparedDataset,
}

/// Accuracies of one (task, fraction, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRun {
    pub tag: String,
    pub fraction: f64,
    pub seed: u64,
    pub transfer: f64,
    pub baseline: f64,
}

/// Mean accuracies per task and fraction, laid out as rows of settings and
/// `Non-TF`/`TF` column pairs per fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotGrid {
    pub fractions: Vec<f64>,
    pub tags: Vec<String>,
    pub runs: Vec<GridRun>,
}

impl FewShotGrid {
    /// `(baseline, transfer)` mean accuracy of a row and fraction.
    pub fn cell(&self, tag: &str, fraction: f64) -> Option<(f64, f64)> {
        let runs: Vec<&GridRun> = self
            .runs
            .iter()
            .filter(|r| r.tag == tag && r.fraction == fraction)
            .collect();
        if runs.is_empty() {
            return None;
        }
        let n = runs.len() as f64;
        Some((
            runs.iter().map(|r| r.baseline).sum::<f64>() / n,
            runs.iter().map(|r| r.transfer).sum::<f64>() / n,
        ))
    }

    /// Number of runs where transfer is at least as accurate as the baseline.
    pub fn transfer_wins(&self) -> usize {
        self.runs.iter().filter(|r| r.transfer >= r.baseline).count()
    }

    /// Comma-separated table: one row per setting, `Non-TF`/`TF` per fraction.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting");
        for f in &self.fractions {
            let pct = 100.0 * f;
            write!(out, ",non_tf_{pct}pct,tf_{pct}pct").expect("writing to a String");
        }
        out.push('\n');
        for tag in &self.tags {
            out.push_str(tag);
            for &f in &self.fractions {
                match self.cell(tag, f) {
                    Some((b, t)) => write!(out, ",{b:.2},{t:.2}"),
                    None => write!(out, ",,"),
                }
                .expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    /// Every individual run, one per line.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("setting,fraction,seed,non_tf,tf\n");
        for r in &self.runs {
            writeln!(out, "{},{},{},{:.4},{:.4}", r.tag, r.fraction, r.seed, r.baseline, r.transfer)
                .expect("writing to a String");
        }
        out
    }
}

/// One unit of grid work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub task: usize,
    pub fraction: f64,
    pub seed: u64,
}

pub fn grid_cells(num_tasks: usize, fractions: &[f64], seeds: &[u64]) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for task in 0..num_tasks {
        for &fraction in fractions {
            for &seed in seeds {
                cells.push(GridCell { task, fraction, seed });
            }
        }
    }
    cells
}

/// Plan with the cell's fraction and seed applied to both phases.
pub fn cell_plan(plan: &TransferPlan, cell: &GridCell) -> TransferPlan {
    let mut p = plan.clone();
    p.source_config.seed = cell.seed;
    p.target_config.seed = cell.seed;
    p.target_config.train_fraction = cell.fraction;
    p
}

/// Caches source models per (task, seed) and baselines per (target data,
/// channel set, fraction, seed), so rows sharing a target and channel set
/// report the same baseline.
#[derive(Default)]
pub struct GridCache {
    sources: Vec<((usize, u64), SourceModel)>,
    baselines: Vec<(BaselineKey, f64)>,
}

#[derive(PartialEq)]
struct BaselineKey {
    target: usize,
    manifest: DatasetManifest,
    fraction: u64,
    seed: u64,
}

impl GridCache {
    pub fn source(&mut self, tasks: &[TransferTask], task: usize, seed: u64) -> Result<&SourceModel> {
        if let Some(i) = self.sources.iter().position(|(k, _)| *k == (task, seed)) {
            return Ok(&self.sources[i].1);
        }
        let t = tasks[task];
        // source training ignores the target fraction
        let fraction = t.plan.target_config.train_fraction;
        let plan = cell_plan(t.plan, &GridCell { task, fraction, seed });
        let model = train_source(&plan, t.source, &t.target.manifest)?;
        self.sources.push(((task, seed), model));
        Ok(&self.sources.last().expect("just pushed").1)
    }

    /// Runs a cell, reusing cached sources and baselines.
    pub fn run(&mut self, tasks: &[TransferTask], cell: &GridCell) -> Result<GridRun> {
        let t = tasks[cell.task];
        let plan = cell_plan(t.plan, cell);
        let source = self.source(tasks, cell.task, cell.seed)?.clone();
        let split = target_split(t.target, &source.manifest, &plan.target_config)?;
        let transfer = run_transferred(&plan, &source, &split)?.report.overall_accuracy;
        let key = BaselineKey {
            target: t.target as *const PreparedDataset as usize,
            manifest: source.manifest.clone(),
            fraction: cell.fraction.to_bits(),
            seed: cell.seed,
        };
        let baseline = match self.baselines.iter().find(|(k, _)| *k == key) {
            Some((_, acc)) => *acc,
            None => {
                let acc = run_baseline(&plan, &split)?.report.overall_accuracy;
                self.baselines.push((key, acc));
                acc
            }
        };
        log::info!(
            "{} at {:.1}% seed {}: tf {transfer:.2}% non-tf {baseline:.2}%",
            plan.tag,
            100.0 * cell.fraction,
            cell.seed
        );
        Ok(GridRun {
            tag: plan.tag,
            fraction: cell.fraction,
            seed: cell.seed,
            transfer,
            baseline,
        })
    }
}

/// Runs every (task, fraction, seed) combination.
pub fn run_fewshot_grid(tasks: &[TransferTask], fractions: &[f64], seeds: &[u64]) -> Result<FewShotGrid> {
    let mut cache = GridCache::default();
    let runs = grid_cells(tasks.len(), fractions, seeds)
        .iter()
        .map(|cell| cache.run(tasks, cell))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_grid(tasks, fractions, runs))
}

pub fn assemble_grid(tasks: &[TransferTask], fractions: &[f64], runs: Vec<GridRun>) -> FewShotGrid {
    let mut tags: Vec<String> = Vec::new();
    for t in tasks {
        if !tags.contains(&t.plan.tag) {
            tags.push(t.plan.tag.clone());
        }
    }
    FewShotGrid {
        fractions: fractions.to_vec(),
        tags,
        runs,
    }
}
