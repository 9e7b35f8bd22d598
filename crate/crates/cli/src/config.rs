//! Declarative run configuration read from a TOML file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use resgcnn::data::{DatasetId, TndaLayout};
use resgcnn::train::TrainConfig;
use resgcnn::transfer::ChannelAlignment;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetId,
    /// Overrides every other seed when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub data: DataSection,
    pub synthetic: SyntheticSection,
    pub train: TrainConfig,
    pub transfer: TransferSection,
    pub evaluate: EvaluateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetId::Synthetic,
            seed: None,
            out: PathBuf::from("out"),
            data: DataSection::default(),
            synthetic: SyntheticSection::default(),
            train: TrainConfig::default(),
            transfer: TransferSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pamap2: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mhealth: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tnda: Option<PathBuf>,
    /// Prepared archive to train or evaluate on instead of `<out>/<dataset>.rgd`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prepared: Option<PathBuf>,
    pub tnda_layout: TndaLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub classes: usize,
    pub samples_per_class: usize,
    pub channels: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub transfer_pairs: usize,
    pub transfer_family_classes: usize,
    pub transfer_source_samples: usize,
    pub transfer_target_classes: Vec<usize>,
    pub transfer_target_samples: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            classes: 3,
            samples_per_class: 200,
            channels: 8,
            snr_db: 10.0,
            seed: 0,
            transfer_pairs: 2,
            transfer_family_classes: 6,
            transfer_source_samples: 60,
            transfer_target_classes: vec![4, 1, 5, 2],
            transfer_target_samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    pub source: DatasetId,
    pub target: DatasetId,
    pub alignment: ChannelAlignment,
    pub freeze_blocks: bool,
    pub grid: bool,
    pub pairs: Vec<String>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub source_train: TrainConfig,
    pub target_train: TrainConfig,
}

impl Default for TransferSection {
    fn default() -> Self {
        Self {
            source: DatasetId::Pamap2,
            target: DatasetId::Mhealth,
            alignment: ChannelAlignment::Shared,
            freeze_blocks: true,
            grid: false,
            pairs: ["T-to-P", "M-to-P", "T-to-M", "P-to-M", "M-to-T", "P-to-T"]
                .map(String::from)
                .to_vec(),
            fractions: vec![0.05, 0.025],
            seeds: vec![0],
            source_train: TrainConfig::default(),
            target_train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Model archive written by `train` or `transfer`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_owned(),
            source: e,
        })?;
        Self::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Pushes the master seed into every section.
    pub fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.train.seed = seed;
            self.transfer.source_train.seed = seed;
            self.transfer.target_train.seed = seed;
            self.transfer.seeds = vec![seed];
            self.synthetic.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: resgcnn::Error| CliError::Usage(e.to_string());
        self.train.validate().map_err(usage)?;
        self.transfer.source_train.validate().map_err(usage)?;
        self.transfer.target_train.validate().map_err(usage)?;
        if self.transfer.fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(CliError::Usage("transfer.fractions must lie in (0, 1)".into()));
        }
        if self.transfer.seeds.is_empty() {
            return Err(CliError::Usage("transfer.seeds is empty".into()));
        }
        Ok(())
    }
}

const KEY_HELP: &[(&str, &str)] = &[
    ("dataset", "dataset to work on: pamap2, mhealth, tnda or synthetic"),
    ("seed", "master seed; when set it replaces every seed below"),
    ("out", "output directory"),
    ("data.pamap2", "PAMAP2 directory (holding Protocol/ or subject*.dat)"),
    ("data.mhealth", "mHealth directory (mHealth_subject*.log)"),
    ("data.tnda", "TNDA-HAR directory of per-subject tables"),
    ("data.prepared", "prepared archive to use instead of <out>/<dataset>.rgd"),
    ("data.tnda_layout.wrist", "first column of the wrist IMU"),
    ("data.tnda_layout.ankle", "first column of the ankle IMU"),
    ("data.tnda_layout.back", "first column of the back IMU"),
    ("data.tnda_layout.label", "label column"),
    ("data.tnda_layout.sample_rate", "sampling rate in Hz"),
    ("data.tnda_layout.extension", "file extension of the recordings"),
    ("synthetic.classes", "classes of the synthetic training set"),
    ("synthetic.samples_per_class", "windows per class"),
    ("synthetic.channels", "sensor channels (graph nodes)"),
    ("synthetic.snr_db", "signal-to-noise ratio in dB"),
    ("synthetic.seed", "seed of the class prototypes and samples"),
    ("synthetic.transfer_pairs", "related source/target pairs in synthetic transfer"),
    ("synthetic.transfer_family_classes", "classes of each synthetic source task"),
    ("synthetic.transfer_source_samples", "source windows per class"),
    ("synthetic.transfer_target_classes", "source classes reused as target classes"),
    ("synthetic.transfer_target_samples", "target windows per class"),
    ("train.learning_rate", "Adam step size"),
    ("train.batch_size", "mini-batch size"),
    ("train.max_epochs", "epoch cap"),
    ("train.folds", "cross-validation folds; 1 uses a single train_fraction/test_fraction split"),
    ("train.correlation_threshold", "Pearson threshold for graph edges"),
    ("train.window_length", "samples per window at 50 Hz"),
    ("train.overlap_fraction", "overlap of consecutive windows"),
    ("train.seed", "initialization, shuffling and split seed"),
    ("train.freeze_blocks", "keep the residual blocks fixed"),
    ("train.train_fraction", "stratified training share of a single split"),
    ("train.test_fraction", "stratified test share of a single split"),
    ("train.adam_beta1", "Adam first-moment decay"),
    ("train.adam_beta2", "Adam second-moment decay"),
    ("train.adam_epsilon", "Adam denominator offset"),
    ("train.convergence_tolerance", "minimum epoch loss decrease that counts as progress"),
    ("train.convergence_patience", "epochs without progress before stopping"),
    ("transfer.source", "source dataset of a single transfer"),
    ("transfer.target", "target dataset of a single transfer"),
    ("transfer.alignment", "shared (common channels) or exact channel layouts"),
    ("transfer.freeze_blocks", "freeze transferred blocks; false fine-tunes them"),
    ("transfer.grid", "run the few-shot grid instead of a single transfer"),
    ("transfer.pairs", "grid rows as <source>-to-<target> initials (P, M, T)"),
    ("transfer.fractions", "few-shot training fractions of the grid"),
    ("transfer.seeds", "seeds of the grid"),
    ("transfer.source_train.*", "source training, same keys as [train]"),
    ("transfer.target_train.*", "target training, same keys as [train]"),
    ("evaluate.model", "model archive to evaluate"),
];

/// Every config key with its description and default.
pub fn config_help() -> String {
    let defaults = toml::Value::try_from(RunConfig::default()).expect("default config serializes");
    let lookup = |key: &str| -> String {
        let mut v = &defaults;
        for part in key.split('.') {
            match v.get(part) {
                Some(next) => v = next,
                None => return "unset".into(),
            }
        }
        v.to_string()
    };
    let mut out = String::from("CONFIG KEYS (TOML; section.key = default)\n");
    for (key, help) in KEY_HELP {
        let default = if key.ends_with(".*") {
            "as [train]".to_string()
        } else {
            lookup(key)
        };
        writeln!(out, "  {key} = {default}\n      {help}").expect("writing to a String");
    }
    out
}

/// Dotted keys of every leaf in `value`, with tables of tables expanded.
pub fn leaf_keys(value: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match value.as_table() {
        Some(table) => {
            for (k, v) in table {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaf_keys(v, &key, out);
            }
        }
        None => out.push(prefix.to_string()),
    }
}

pub fn documented(key: &str) -> bool {
    KEY_HELP.iter().any(|(k, _)| {
        *k == key || k.strip_suffix('*').is_some_and(|p| key.starts_with(p))
    })
}
