mod common;

use common::small_arch;
use resgcnn::data::{DatasetId, PreparedDataset, SyntheticFamily};
use resgcnn::model::{import_blocks_with, BlockParamsArchive, ModelParams};
use resgcnn::train::TrainConfig;
use resgcnn::transfer::{run_fewshot_grid, run_transfer, train_source, target_split, TransferPlan, TransferTask};

const WINDOW: usize = 32;

fn pair(seed: u64) -> (PreparedDataset, PreparedDataset) {
    let family = SyntheticFamily::new(4, 6, WINDOW, seed).unwrap();
    let source = family.prepared(&[0, 1, 2, 3], 12, Some(10.0), seed + 1).unwrap();
    let target = family.prepared(&[2, 0, 3], 20, Some(10.0), seed + 2).unwrap();
    (source, target)
}

fn plan(freeze: bool) -> TransferPlan {
    let mut plan = TransferPlan::new(DatasetId::Synthetic, DatasetId::Synthetic);
    plan.freeze_blocks = freeze;
    plan.arch = small_arch(WINDOW);
    let quick = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 8,
        max_epochs: 3,
        ..TrainConfig::default()
    };
    plan.source_config = quick.clone();
    plan.target_config = TrainConfig {
        train_fraction: 0.2,
        test_fraction: 0.6,
        ..quick
    };
    plan
}

#[test]
fn frozen_transfer_keeps_source_blocks_bitwise() {
    let (source, target) = pair(60);
    let out = run_transfer(&plan(true), &source, &target).unwrap();
    let imported = import_blocks_with(&out.source.blocks, &small_arch(WINDOW), 3, 0).unwrap();
    assert_eq!(out.transfer.model.blocks, imported.blocks);
    assert_ne!(out.baseline.model.blocks, imported.blocks);
    let bytes = out.source.blocks.to_bytes();
    assert_eq!(BlockParamsArchive::from_bytes(&bytes).unwrap().to_bytes(), bytes);
}

#[test]
fn fine_tuned_transfer_updates_blocks() {
    let (source, target) = pair(61);
    let out = run_transfer(&plan(false), &source, &target).unwrap();
    let imported = import_blocks_with(&out.source.blocks, &small_arch(WINDOW), 3, 0).unwrap();
    assert_ne!(out.transfer.model.blocks, imported.blocks);
}

#[test]
fn transfer_runs_are_reproducible() {
    let (source, target) = pair(62);
    let a = run_transfer(&plan(true), &source, &target).unwrap();
    let b = run_transfer(&plan(true), &source, &target).unwrap();
    assert_eq!(a.source.blocks, b.source.blocks);
    assert_eq!(a.transfer.model, b.transfer.model);
    assert_eq!(a.transfer.report, b.transfer.report);
    assert_eq!(a.baseline.curve, b.baseline.curve);
}

#[test]
fn paired_models_share_their_classifier_start() {
    let (source, target) = pair(63);
    let p = plan(true);
    let src = train_source(&p, &source, &target.manifest).unwrap();
    let split = target_split(&target, &src.manifest, &p.target_config).unwrap();
    let tf = import_blocks_with(&src.blocks, &p.arch, split.num_classes, 5).unwrap();
    let scratch = ModelParams::new(p.arch.clone(), split.num_classes, 5).unwrap();
    assert_eq!(tf.fc, scratch.fc);
    assert_eq!(tf.head, scratch.head);
    assert_eq!(split.train.len(), 12);
    assert_eq!(split.test.len(), 36);
}

#[test]
fn grid_has_one_run_per_cell() {
    let (source, target) = pair(64);
    let p = plan(true);
    let tasks = [TransferTask {
        plan: &p,
        source: &source,
        target: &target,
    }];
    let grid = run_fewshot_grid(&tasks, &[0.1, 0.2], &[0, 1]).unwrap();
    assert_eq!(grid.runs.len(), 4);
    assert_eq!(grid.tags, vec![p.tag.clone()]);
    assert!(grid.transfer_wins() <= 4);
    let (tf, base) = grid.cell(&p.tag, 0.1).unwrap();
    assert!((0.0..=100.0).contains(&tf) && (0.0..=100.0).contains(&base));
    assert_eq!(grid.runs_csv().lines().count(), 5);
    assert_eq!(grid.to_csv().lines().count(), 2);
}

#[test]
fn same_real_dataset_on_both_sides_is_rejected() {
    assert!(TransferPlan::new(DatasetId::Pamap2, DatasetId::Pamap2).validate().is_err());
    assert!(TransferPlan::new(DatasetId::Pamap2, DatasetId::Mhealth).validate().is_ok());
}
