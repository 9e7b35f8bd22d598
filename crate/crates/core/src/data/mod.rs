//! Sensor datasets: loaders, resampling, windowing, cross-dataset channel
//! alignment, graph conversion, a synthetic generator and the prepared
//! dataset archive.

mod loaders;
mod prepared;
mod synthetic;
mod window;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis as NdAxis};
use serde::{Deserialize, Serialize};

pub use loaders::{load_mhealth, load_pamap2, load_tnda, LoadedDataset, TndaLayout};
pub use prepared::PreparedDataset;
pub use synthetic::{synthetic_generate, SyntheticFamily, SyntheticSpec};
pub use window::{downsample_2x, interpolate_gaps, prepare_windows, segment, segment_count, LabeledStream, MAX_GAP};

use crate::error::{Error, Result};
use crate::graph::{build_adjacency_with, GraphSample, SampleMeta, ThresholdMode};

/// Sampling rate every prepared window is brought to.
pub const TARGET_SAMPLE_RATE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetId {
    Pamap2,
    Mhealth,
    Tnda,
    Synthetic,
}

impl DatasetId {
    pub fn name(self) -> &'static str {
        match self {
            DatasetId::Pamap2 => "pamap2",
            DatasetId::Mhealth => "mhealth",
            DatasetId::Tnda => "tnda",
            DatasetId::Synthetic => "synthetic",
        }
    }

    /// One-letter tag used in experiment names such as `P-to-M`.
    pub fn initial(self) -> char {
        match self {
            DatasetId::Pamap2 => 'P',
            DatasetId::Mhealth => 'M',
            DatasetId::Tnda => 'T',
            DatasetId::Synthetic => 'S',
        }
    }

    fn code(self) -> u8 {
        match self {
            DatasetId::Pamap2 => 0,
            DatasetId::Mhealth => 1,
            DatasetId::Tnda => 2,
            DatasetId::Synthetic => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        [DatasetId::Pamap2, DatasetId::Mhealth, DatasetId::Tnda, DatasetId::Synthetic]
            .into_iter()
            .find(|d| d.code() == code)
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pamap2" => Ok(DatasetId::Pamap2),
            "mhealth" => Ok(DatasetId::Mhealth),
            "tnda" => Ok(DatasetId::Tnda),
            "synthetic" => Ok(DatasetId::Synthetic),
            other => Err(Error::invalid(format!("unknown dataset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyLocation {
    Chest,
    Back,
    Wrist,
    Waist,
    Ankle,
    /// Unplaced channels of synthetic data.
    Virtual,
}

impl BodyLocation {
    /// Locations that stand in for each other across datasets: chest and
    /// back share the torso slot, wrist and waist the upper slot.
    pub fn corresponds_to(self, other: BodyLocation) -> bool {
        self.slot() == other.slot()
    }

    fn slot(self) -> u8 {
        match self {
            BodyLocation::Chest | BodyLocation::Back => 0,
            BodyLocation::Wrist | BodyLocation::Waist => 1,
            BodyLocation::Ankle => 2,
            BodyLocation::Virtual => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Accelerometer,
    Gyroscope,
    Magnetometer,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
    Index(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelDescriptor {
    pub location: BodyLocation,
    pub modality: Modality,
    pub axis: Axis,
}

impl ChannelDescriptor {
    pub fn matches(&self, other: &ChannelDescriptor) -> bool {
        self.location.corresponds_to(other.location) && self.modality == other.modality && self.axis == other.axis
    }
}

impl fmt::Display for ChannelDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}/{:?}/{:?}", self.location, self.modality, self.axis)
    }
}

/// Nine channels of one IMU: accelerometer, gyroscope, magnetometer, each x/y/z.
pub(crate) fn imu(location: BodyLocation) -> Vec<ChannelDescriptor> {
    imu_modalities(location, &[Modality::Accelerometer, Modality::Gyroscope, Modality::Magnetometer])
}

pub(crate) fn imu_modalities(location: BodyLocation, modalities: &[Modality]) -> Vec<ChannelDescriptor> {
    modalities
        .iter()
        .flat_map(|&modality| {
            [Axis::X, Axis::Y, Axis::Z].map(|axis| ChannelDescriptor {
                location,
                modality,
                axis,
            })
        })
        .collect()
}

/// Channel layout and label dictionary of a dataset. Class `i` is the
/// `i`-th entry of `labels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset: DatasetId,
    pub channels: Vec<ChannelDescriptor>,
    /// `(raw activity id, name)` per class.
    pub labels: Vec<(u32, String)>,
}

impl DatasetManifest {
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn class_of(&self, raw: u32) -> Option<usize> {
        self.labels.iter().position(|(id, _)| *id == raw)
    }

    fn named(dataset: DatasetId, channels: Vec<ChannelDescriptor>, labels: &[(u32, &str)]) -> Self {
        Self {
            dataset,
            channels,
            labels: labels.iter().map(|&(id, name)| (id, name.to_string())).collect(),
        }
    }

    /// Wrist, chest and ankle IMUs; ten protocol activities.
    pub fn pamap2() -> Self {
        let mut channels = imu(BodyLocation::Wrist);
        channels.extend(imu(BodyLocation::Chest));
        channels.extend(imu(BodyLocation::Ankle));
        Self::named(
            DatasetId::Pamap2,
            channels,
            &[
                (1, "lying"),
                (2, "sitting"),
                (3, "standing"),
                (4, "walking"),
                (5, "running"),
                (6, "cycling"),
                (7, "nordic walking"),
                (12, "ascending stairs"),
                (13, "descending stairs"),
                (24, "rope jumping"),
            ],
        )
    }

    /// Chest accelerometer plus ankle and wrist IMUs; twelve activities.
    pub fn mhealth() -> Self {
        let mut channels = imu_modalities(BodyLocation::Chest, &[Modality::Accelerometer]);
        channels.extend(imu(BodyLocation::Ankle));
        channels.extend(imu(BodyLocation::Wrist));
        Self::named(
            DatasetId::Mhealth,
            channels,
            &[
                (1, "standing still"),
                (2, "sitting and relaxing"),
                (3, "lying down"),
                (4, "walking"),
                (5, "climbing stairs"),
                (6, "waist bends forward"),
                (7, "frontal elevation of arms"),
                (8, "knees bending"),
                (9, "cycling"),
                (10, "jogging"),
                (11, "running"),
                (12, "jump front and back"),
            ],
        )
    }

    /// Wrist, ankle and back IMUs; eight activities.
    pub fn tnda() -> Self {
        let mut channels = imu(BodyLocation::Wrist);
        channels.extend(imu(BodyLocation::Ankle));
        channels.extend(imu(BodyLocation::Back));
        Self::named(
            DatasetId::Tnda,
            channels,
            &[
                (1, "standing still"),
                (2, "sitting"),
                (3, "lying down"),
                (4, "walking"),
                (5, "running"),
                (6, "walking up stairs"),
                (7, "walking down stairs"),
                (8, "cycling"),
            ],
        )
    }

    pub fn synthetic(channels: usize, classes: usize) -> Self {
        Self {
            dataset: DatasetId::Synthetic,
            channels: (0..channels)
                .map(|i| ChannelDescriptor {
                    location: BodyLocation::Virtual,
                    modality: Modality::Synthetic,
                    axis: Axis::Index(i as u16),
                })
                .collect(),
            labels: (0..classes).map(|c| (c as u32, format!("class {c}"))).collect(),
        }
    }

    pub fn for_dataset(dataset: DatasetId) -> Option<Self> {
        match dataset {
            DatasetId::Pamap2 => Some(Self::pamap2()),
            DatasetId::Mhealth => Some(Self::mhealth()),
            DatasetId::Tnda => Some(Self::tnda()),
            DatasetId::Synthetic => None,
        }
    }

    /// Channels shared with `other`, in this manifest's order.
    pub fn intersect(&self, other: &DatasetManifest) -> DatasetManifest {
        DatasetManifest {
            dataset: self.dataset,
            channels: self
                .channels
                .iter()
                .filter(|c| other.channels.iter().any(|o| o.matches(c)))
                .copied()
                .collect(),
            labels: self.labels.clone(),
        }
    }
}

/// One fixed-length multichannel segment. `signals` is channels x samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorWindow {
    pub signals: Array2<f64>,
    pub label: usize,
    pub subject: u32,
    pub dataset: DatasetId,
    pub sample_rate: f64,
}

impl SensorWindow {
    pub fn num_channels(&self) -> usize {
        self.signals.nrows()
    }

    pub fn len(&self) -> usize {
        self.signals.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.ncols() == 0
    }
}

/// For each target channel, the index of the matching source channel.
pub fn channel_mapping(source: &DatasetManifest, target: &DatasetManifest) -> Result<Vec<usize>> {
    target
        .channels
        .iter()
        .map(|t| {
            source
                .channels
                .iter()
                .position(|s| s.matches(t))
                .ok_or_else(|| Error::invalid(format!("{} has no channel matching {t}", source.dataset)))
        })
        .collect()
}

/// Selects and reorders the window's channels to the target manifest order.
pub fn align_channels(
    window: &SensorWindow,
    source: &DatasetManifest,
    target: &DatasetManifest,
) -> Result<SensorWindow> {
    if window.num_channels() != source.num_channels() {
        return Err(Error::shape(format!(
            "window has {} channels, manifest describes {}",
            window.num_channels(),
            source.num_channels()
        )));
    }
    let map = channel_mapping(source, target)?;
    Ok(SensorWindow {
        signals: window.signals.select(NdAxis(0), &map),
        ..window.clone()
    })
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Population statistics over every sample of every window.
    pub fn from_windows<'a>(windows: impl IntoIterator<Item = &'a SensorWindow>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for w in windows {
            if sum.is_empty() {
                sum = vec![0.0; w.num_channels()];
                sq = vec![0.0; w.num_channels()];
            } else if w.num_channels() != sum.len() {
                return Err(Error::shape("windows disagree on channel count"));
            }
            for (c, row) in w.signals.outer_iter().enumerate() {
                sum[c] += row.sum();
                sq[c] += row.iter().map(|v| v * v).sum::<f64>();
            }
            count += w.len();
        }
        if count == 0 {
            return Err(Error::invalid("no samples to compute channel statistics"));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(0.0).sqrt())
            .collect();
        Ok(Self { mean, std })
    }

    /// `(x - mean) / std`; channels with zero spread are only centered.
    pub fn apply(&self, signals: &Array2<f64>) -> Result<Array2<f64>> {
        if signals.nrows() != self.mean.len() {
            return Err(Error::shape(format!(
                "statistics cover {} channels, window has {}",
                self.mean.len(),
                signals.nrows()
            )));
        }
        let mut out = signals.clone();
        for (c, mut row) in out.outer_iter_mut().enumerate() {
            let s = if self.std[c] > 0.0 { self.std[c] } else { 1.0 };
            row.mapv_inplace(|v| (v - self.mean[c]) / s);
        }
        Ok(out)
    }
}

/// Graph tuple of a window: adjacency from the raw signals, node features
/// standardized with `stats` when given.
pub fn to_graph_sample(window: &SensorWindow, psi: f64, stats: Option<&ChannelStats>) -> Result<GraphSample> {
    to_graph_sample_with(window, psi, ThresholdMode::Signed, stats)
}

pub fn to_graph_sample_with(
    window: &SensorWindow,
    psi: f64,
    mode: ThresholdMode,
    stats: Option<&ChannelStats>,
) -> Result<GraphSample> {
    let adjacency = build_adjacency_with(window.signals.view(), psi, mode)?;
    let node_features = match stats {
        Some(s) => s.apply(&window.signals)?,
        None => window.signals.clone(),
    };
    GraphSample::new(
        node_features,
        adjacency,
        window.label,
        SampleMeta {
            dataset: window.dataset,
            subject: window.subject,
        },
    )
}

pub(crate) fn dataset_code(d: DatasetId) -> u8 {
    d.code()
}

pub(crate) fn dataset_from_code(code: u8) -> Option<DatasetId> {
    DatasetId::from_code(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sizes() {
        let p = DatasetManifest::pamap2();
        assert_eq!((p.num_channels(), p.num_classes()), (27, 10));
        let m = DatasetManifest::mhealth();
        assert_eq!((m.num_channels(), m.num_classes()), (21, 12));
        let t = DatasetManifest::tnda();
        assert_eq!((t.num_channels(), t.num_classes()), (27, 8));
    }

    #[test]
    fn tnda_aligns_to_mhealth_order() {
        let t = DatasetManifest::tnda();
        let m = DatasetManifest::mhealth();
        let map = channel_mapping(&t, &m).unwrap();
        assert_eq!(map.len(), 21);
        // chest accelerometer comes from the back IMU's accelerometer
        assert_eq!(&map[..3], &[18, 19, 20]);
        let window = SensorWindow {
            signals: Array2::from_shape_fn((27, 4), |(c, j)| (c * 10 + j) as f64),
            label: 0,
            subject: 1,
            dataset: DatasetId::Tnda,
            sample_rate: 50.0,
        };
        let aligned = align_channels(&window, &t, &m).unwrap();
        assert_eq!(aligned.num_channels(), 21);
        assert_eq!(aligned.signals[[0, 0]], 180.0);
        let again = align_channels(&aligned, &m, &m).unwrap();
        assert_eq!(again, aligned);
    }

    #[test]
    fn missing_modality_is_an_error() {
        let m = DatasetManifest::mhealth();
        let p = DatasetManifest::pamap2();
        // mHealth has no chest gyroscope
        assert!(channel_mapping(&m, &p).is_err());
        assert_eq!(p.intersect(&m).num_channels(), 21);
    }

    #[test]
    fn dataset_names_parse() {
        for d in [DatasetId::Pamap2, DatasetId::Mhealth, DatasetId::Tnda, DatasetId::Synthetic] {
            assert_eq!(d.name().parse::<DatasetId>().unwrap(), d);
        }
        assert!("other".parse::<DatasetId>().is_err());
    }
}
