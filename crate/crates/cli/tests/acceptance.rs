//! End-to-end acceptance criteria. Each test prints one
//! `criterion N: PASS|FAIL|SKIP ...` line before asserting.
//!
//! Real datasets are read from the directories named by `RESGCNN_PAMAP2`,
//! `RESGCNN_MHEALTH` and `RESGCNN_TNDA`; criteria needing them are skipped
//! when the variables are unset.

use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use resgcnn::data::{synthetic_generate, to_graph_sample, ChannelStats, DatasetId, PreparedDataset, SyntheticFamily};
use resgcnn::eval::MetricsReport;
use resgcnn::graph::GraphSample;
use resgcnn::model::build_model;
use resgcnn::train::{kfold_split, train_with, LearningCurve, TrainConfig};
use resgcnn::transfer::{run_baseline, run_transferred, target_split, to_graph_samples, train_source, TransferPlan};
use resgcnn_cli::commands::{cmd_prepare, cmd_train};
use resgcnn_cli::selfcheck::{gradient_check, metric_check, spectral_check};
use resgcnn_cli::RunConfig;

fn verdict(n: u32, pass: bool, detail: impl AsRef<str>) {
    println!("criterion {n}: {} {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    assert!(pass, "criterion {n} failed: {}", detail.as_ref());
}

#[test]
fn criterion_01_chebyshev_matches_eigen_filtering() {
    let start = Instant::now();
    let check = spectral_check(50);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        check.passed && check.max_error < 1e-8 && secs < 10.0,
        format!("max error {:.2e} over {} graphs in {secs:.2}s", check.max_error, check.cases),
    );
}

#[test]
fn criterion_02_gradients_match_finite_differences() {
    let start = Instant::now();
    let check = gradient_check(20, 0.0);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        check.passed && check.max_error < 1e-4 && secs < 120.0,
        format!("max relative error {:.2e}, {}, {secs:.1}s", check.max_error, check.note),
    );
}

#[test]
fn criterion_03_initial_loss_is_near_log_classes() {
    let mut worst = 0.0f64;
    for c in [2, 3, 6, 8, 12] {
        for seed in 0..3 {
            let windows = synthetic_generate(c, 10, 8, 300 + seed).unwrap();
            let stats = ChannelStats::from_windows(&windows).unwrap();
            let samples: Vec<GraphSample> =
                windows.iter().map(|w| to_graph_sample(w, 0.2, Some(&stats)).unwrap()).collect();
            let refs: Vec<&GraphSample> = samples.iter().collect();
            let loss = build_model(c, seed).unwrap().loss(&refs).unwrap();
            let ln_c = (c as f64).ln();
            worst = worst.max((loss - ln_c).abs() / ln_c);
        }
    }
    verdict(3, worst <= 0.1, format!("worst relative deviation from ln C {worst:.3e}"));
}

#[test]
fn criterion_04_synthetic_end_to_end() {
    let start = Instant::now();
    let windows = synthetic_generate(3, 200, 8, 0).unwrap();
    let cfg = TrainConfig {
        max_epochs: 50,
        ..TrainConfig::default()
    };
    let (train_idx, test_idx) = kfold_split(windows.len(), cfg.folds, cfg.seed).unwrap().swap_remove(0);
    let pick = |idx: &[usize]| idx.iter().map(|&i| windows[i].clone()).collect::<Vec<_>>();
    let (train_w, test_w) = (pick(&train_idx), pick(&test_idx));
    let stats = ChannelStats::from_windows(&train_w).unwrap();
    let train = to_graph_samples(&train_w, cfg.correlation_threshold, &stats).unwrap();
    let test = to_graph_samples(&test_w, cfg.correlation_threshold, &stats).unwrap();
    let train_refs: Vec<&GraphSample> = train.iter().collect();
    let test_refs: Vec<&GraphSample> = test.iter().collect();
    // stop once the target is met; later epochs cannot change the verdict
    let (_, curve) = train_with(build_model(3, 0).unwrap(), &train_refs, Some(&test_refs), &cfg, |c| {
        if c.test_accuracy.last().is_some_and(|&a| a >= 95.0) {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    let best = curve.test_accuracy.iter().copied().fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        4,
        best >= 95.0 && curve.epochs() <= 50 && secs < 300.0,
        format!(
            "test accuracy {best:.2}% after {} epochs on {} test windows, {secs:.0}s",
            curve.epochs(),
            test.len()
        ),
    );
}

fn transfer_plan(seed: u64) -> TransferPlan {
    let mut plan = TransferPlan::new(DatasetId::Synthetic, DatasetId::Synthetic);
    plan.freeze_blocks = false;
    plan.source_config = TrainConfig {
        max_epochs: 30,
        batch_size: 16,
        seed,
        ..TrainConfig::default()
    };
    plan
}

/// Source: every class of a six-class family. Target: a reordered subset of
/// four classes drawn with a fresh data seed.
fn related_pair(family_seed: u64, target_classes: &[usize], source_seed: u64, target_seed: u64) -> (PreparedDataset, PreparedDataset) {
    let family = SyntheticFamily::new(6, 8, 128, family_seed).unwrap();
    let source = family.prepared(&[0, 1, 2, 3, 4, 5], 60, Some(10.0), source_seed).unwrap();
    let target = family.prepared(target_classes, 100, Some(10.0), target_seed).unwrap();
    (source, target)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_05_transfer_dominates_early_epochs() {
    let chance = 25.0;
    let mut dominated = 0;
    let (mut tf0, mut scratch0) = (Vec::new(), Vec::new());
    for seed in 0..5u64 {
        let (source, target) = related_pair(100 + seed, &[4, 1, 5, 2], 1000 + seed, 2000 + seed);
        let mut plan = transfer_plan(seed);
        plan.target_config = TrainConfig {
            max_epochs: 6,
            train_fraction: 0.1,
            test_fraction: 0.8,
            seed,
            ..TrainConfig::default()
        };
        let src = train_source(&plan, &source, &target.manifest).unwrap();
        let split = target_split(&target, &src.manifest, &plan.target_config).unwrap();
        let tf: LearningCurve = run_transferred(&plan, &src, &split).unwrap().curve;
        let base: LearningCurve = run_baseline(&plan, &split).unwrap().curve;
        let wins = tf.test_accuracy.iter().zip(&base.test_accuracy).take(6).all(|(t, b)| t >= b);
        dominated += usize::from(wins && tf.test_accuracy.len() >= 6);
        tf0.push(tf.test_accuracy[0]);
        scratch0.push(base.test_accuracy[0]);
        println!(
            "  seed {seed}: transferred {:?} scratch {:?}",
            tf.test_accuracy.iter().map(|a| format!("{a:.1}")).collect::<Vec<_>>(),
            base.test_accuracy.iter().map(|a| format!("{a:.1}")).collect::<Vec<_>>()
        );
    }
    let (t0, s0) = (mean(&tf0), mean(&scratch0));
    let pass = dominated >= 4 && t0 >= chance + 10.0 && (s0 - chance).abs() <= 5.0;
    verdict(
        5,
        pass,
        format!("dominance in {dominated}/5 seeds; epoch-0 accuracy transferred {t0:.1}%, scratch {s0:.1}% (chance {chance:.0}%)"),
    );
}

#[test]
fn criterion_06_fewshot_grid_favours_transfer() {
    let pairs: [(u64, [usize; 4], u64, u64); 2] = [(100, [4, 1, 5, 2], 1000, 2000), (200, [0, 3, 2, 5], 2000, 4000)];
    let mut wins = 0;
    let mut runs = 0;
    for (family, classes, source_base, target_base) in pairs {
        for seed in 0..3u64 {
            let (source, target) = related_pair(family + seed, &classes, source_base + seed, target_base + seed);
            let mut plan = transfer_plan(seed);
            let src = train_source(&plan, &source, &target.manifest).unwrap();
            for fraction in [0.05, 0.025] {
                plan.target_config = TrainConfig {
                    max_epochs: 40,
                    train_fraction: fraction,
                    test_fraction: 0.8,
                    seed,
                    ..TrainConfig::default()
                };
                let split = target_split(&target, &src.manifest, &plan.target_config).unwrap();
                let tf = run_transferred(&plan, &src, &split).unwrap().report.overall_accuracy;
                let base = run_baseline(&plan, &split).unwrap().report.overall_accuracy;
                runs += 1;
                wins += usize::from(tf >= base);
                println!("  pair {family} seed {seed} {:.1}%: transferred {tf:.2}% scratch {base:.2}%", 100.0 * fraction);
            }
        }
    }
    // at least five in six
    verdict(6, wins * 6 >= runs * 5, format!("transferred >= scratch in {wins}/{runs} paired runs"));
}

fn dataset_dirs() -> Vec<(DatasetId, PathBuf, usize)> {
    [
        (DatasetId::Pamap2, "RESGCNN_PAMAP2", 11784),
        (DatasetId::Mhealth, "RESGCNN_MHEALTH", 5361),
        (DatasetId::Tnda, "RESGCNN_TNDA", 29112),
    ]
    .into_iter()
    .filter_map(|(id, var, n)| std::env::var_os(var).map(|p| (id, PathBuf::from(p), n)))
    .collect()
}

fn config_for(id: DatasetId, path: &Path, out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        dataset: id,
        out: out.to_owned(),
        ..RunConfig::default()
    };
    match id {
        DatasetId::Pamap2 => cfg.data.pamap2 = Some(path.to_owned()),
        DatasetId::Mhealth => cfg.data.mhealth = Some(path.to_owned()),
        _ => cfg.data.tnda = Some(path.to_owned()),
    }
    cfg
}

#[test]
fn criterion_07_loader_segment_counts() {
    let dirs = dataset_dirs();
    if dirs.is_empty() {
        println!("criterion 7: SKIP no dataset directories (set RESGCNN_PAMAP2, RESGCNN_MHEALTH, RESGCNN_TNDA)");
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for (id, path, expected) in dirs {
        let archive = cmd_prepare(&config_for(id, &path, out.path())).unwrap();
        let got = PreparedDataset::read(&archive).unwrap().windows.len();
        let off = (got as f64 - expected as f64).abs() / expected as f64;
        pass &= off <= 0.02;
        details.push(format!("{id} {got} windows (expected {expected}, off {:.2}%)", 100.0 * off));
    }
    verdict(7, pass, details.join("; "));
}

#[test]
#[ignore = "full five-fold training on the public datasets takes hours"]
fn criterion_08_full_dataset_accuracy() {
    let dirs: Vec<_> = dataset_dirs()
        .into_iter()
        .filter(|(id, _, _)| *id != DatasetId::Tnda)
        .collect();
    if dirs.is_empty() {
        println!("criterion 8: SKIP no PAMAP2 or mHealth directory");
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for (id, path, _) in dirs {
        let target = if id == DatasetId::Pamap2 { 98.18 } else { 99.07 };
        let cfg = config_for(id, &path, out.path());
        cmd_prepare(&cfg).unwrap();
        let acc = cmd_train(&cfg).unwrap().mean_accuracy();
        pass &= (acc - target).abs() <= 2.0;
        details.push(format!("{id} mean accuracy {acc:.2}% (reference {target:.2}%)"));
    }
    verdict(8, pass, details.join("; "));
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_owned()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_owned(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_09_training_is_reproducible() {
    let start = Instant::now();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let trees: Vec<_> = dirs
        .iter()
        .map(|d| {
            let mut cfg = RunConfig {
                out: d.path().to_owned(),
                ..RunConfig::default()
            };
            cfg.synthetic.samples_per_class = 40;
            cfg.train.max_epochs = 4;
            cfg.train.folds = 2;
            cmd_train(&cfg).unwrap();
            tree_bytes(d.path())
        })
        .collect();
    let models = trees[0].iter().filter(|(p, _)| p.to_string_lossy().ends_with("_model.rgm")).count();
    let reports = trees[0].iter().filter(|(p, _)| p.to_string_lossy().ends_with("_report.toml")).count();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        9,
        trees[0] == trees[1] && models == 2 && reports == 2 && secs < 600.0,
        format!("{} files byte-identical across two runs ({models} models, {reports} reports), {secs:.0}s", trees[0].len()),
    );
}

#[test]
fn criterion_10_metric_identities() {
    let start = Instant::now();
    let check = metric_check(1000);
    let r = MetricsReport::from_confusion(vec![vec![8, 2], vec![3, 7]]).unwrap();
    let hand = [
        (r.overall_accuracy, 75.0),
        (r.per_class[0].precision, 800.0 / 11.0),
        (r.per_class[0].recall, 80.0),
        (r.per_class[1].precision, 700.0 / 9.0),
        (r.per_class[1].recall, 70.0),
        (r.per_class[0].f1, 2.0 * (800.0 / 11.0) * 80.0 / (800.0 / 11.0 + 80.0)),
        (r.per_class[1].f1, 2.0 * (700.0 / 9.0) * 70.0 / (700.0 / 9.0 + 70.0)),
    ];
    let worked = hand.iter().map(|(got, want)| (got - want).abs()).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        10,
        check.passed && worked <= 1e-12 && secs < 5.0,
        format!(
            "{} matrices, max identity error {:.1e}, worked example error {worked:.1e}, {secs:.2}s",
            check.cases, check.max_error
        ),
    );
}
