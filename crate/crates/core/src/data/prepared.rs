use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{dataset_code, dataset_from_code, ChannelStats, DatasetManifest, SensorWindow};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RGCNDAT\0";
const VERSION: u32 = 1;

/// Segmented windows of one dataset together with everything needed to
/// interpret them. Signals are stored unstandardized; `stats`, when present,
/// are the training-split statistics to apply at graph conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub manifest: DatasetManifest,
    pub window_length: usize,
    pub step: usize,
    pub stats: Option<ChannelStats>,
    pub windows: Vec<SensorWindow>,
}

impl PreparedDataset {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let channels = self.manifest.num_channels();
        for w in &self.windows {
            if w.signals.dim() != (channels, self.window_length) {
                return Err(Error::shape(format!(
                    "window is {:?}, archive expects ({channels}, {})",
                    w.signals.dim(),
                    self.window_length
                )));
            }
        }
        let manifest =
            toml::to_string(&self.manifest).map_err(|e| Error::Archive(format!("manifest: {e}")))?;
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.str(&manifest);
        w.u64(self.window_length as u64);
        w.u64(self.step as u64);
        match &self.stats {
            Some(stats) => {
                w.u8(1);
                w.f64s(stats.mean.iter());
                w.f64s(stats.std.iter());
            }
            None => w.u8(0),
        }
        w.u64(self.windows.len() as u64);
        for win in &self.windows {
            w.u64(win.label as u64);
            w.u32(win.subject);
            w.u8(dataset_code(win.dataset));
            w.f64(win.sample_rate);
            w.f64s(win.signals.iter());
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Archive("not a prepared dataset".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Archive(format!("unsupported version {version}")));
        }
        let manifest: DatasetManifest =
            toml::from_str(&r.str()?).map_err(|e| Error::Archive(format!("manifest: {e}")))?;
        let channels = manifest.num_channels();
        let window_length = r.u64()? as usize;
        let step = r.u64()? as usize;
        let stats = match r.u8()? {
            0 => None,
            1 => Some(ChannelStats {
                mean: r.f64s(channels)?,
                std: r.f64s(channels)?,
            }),
            other => return Err(Error::Archive(format!("bad statistics flag {other}"))),
        };
        let count = r.u64()? as usize;
        let per_window = channels
            .checked_mul(window_length)
            .ok_or_else(|| Error::Archive("window size overflow".into()))?;
        let mut windows = Vec::with_capacity(count.min(bytes.len() / 8 + 1));
        for _ in 0..count {
            let label = r.u64()? as usize;
            let subject = r.u32()?;
            let code = r.u8()?;
            let dataset = dataset_from_code(code).ok_or_else(|| Error::Archive(format!("bad dataset code {code}")))?;
            let sample_rate = r.f64()?;
            let values = r.f64s(per_window)?;
            if label >= manifest.num_classes() {
                return Err(Error::Archive(format!("label {label} outside the label dictionary")));
            }
            windows.push(SensorWindow {
                signals: Array2::from_shape_vec((channels, window_length), values).expect("length checked"),
                label,
                subject,
                dataset,
                sample_rate,
            });
        }
        r.finish()?;
        Ok(Self {
            manifest,
            window_length,
            step,
            stats,
            windows,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
