use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::window::{interpolate_gaps, LabeledStream, MAX_GAP};
use super::{DatasetId, DatasetManifest};
use crate::error::{Error, Result};

/// Parsed recordings of one dataset in (subject, file, offset) order.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub streams: Vec<LabeledStream>,
}

/// Column layout of the TNDA recordings. Each IMU entry is the zero-based
/// column of its first of nine values (accelerometer, gyroscope,
/// magnetometer; x, y, z each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TndaLayout {
    pub wrist: usize,
    pub ankle: usize,
    pub back: usize,
    pub label: usize,
    pub sample_rate: f64,
    /// File extension of the per-subject recordings.
    pub extension: String,
}

impl Default for TndaLayout {
    fn default() -> Self {
        Self {
            ankle: 0,
            back: 18,
            wrist: 27,
            label: 45,
            sample_rate: 50.0,
            extension: "csv".into(),
        }
    }
}

/// Loads the protocol recordings (`subject*.dat`, 100 Hz). Uses the hand,
/// chest and ankle IMUs with the +-16 g accelerometer of each.
pub fn load_pamap2(path: &Path) -> Result<LoadedDataset> {
    let dir = if path.join("Protocol").is_dir() {
        path.join("Protocol")
    } else {
        path.to_path_buf()
    };
    let manifest = DatasetManifest::pamap2();
    let mut columns = Vec::new();
    for imu_start in [3, 20, 37] {
        columns.extend(imu_start + 1..imu_start + 4);
        columns.extend(imu_start + 7..imu_start + 13);
    }
    let files = list_files(&dir, |name| name.starts_with("subject") && name.ends_with(".dat"))?;
    let mut streams = Vec::new();
    for (index, file) in files.iter().enumerate() {
        let table = read_table(file, 54, false)?;
        streams.extend(build_streams(
            &table,
            &columns,
            |row| label_of(&manifest, row[1]),
            subject_id(file, index),
            DatasetId::Pamap2,
            100.0,
            file,
        )?);
    }
    Ok(LoadedDataset { manifest, streams })
}

/// Loads `mHealth_subject*.log` (50 Hz), skipping the ECG leads.
pub fn load_mhealth(path: &Path) -> Result<LoadedDataset> {
    let manifest = DatasetManifest::mhealth();
    let mut columns: Vec<usize> = (0..3).collect();
    columns.extend(5..23);
    let files = list_files(path, |name| name.starts_with("mHealth_subject") && name.ends_with(".log"))?;
    let mut streams = Vec::new();
    for (index, file) in files.iter().enumerate() {
        let table = read_table(file, 24, false)?;
        streams.extend(build_streams(
            &table,
            &columns,
            |row| label_of(&manifest, row[23]),
            subject_id(file, index),
            DatasetId::Mhealth,
            50.0,
            file,
        )?);
    }
    Ok(LoadedDataset { manifest, streams })
}

/// Loads the TNDA recordings with the wrist, ankle and back IMUs.
pub fn load_tnda(path: &Path, layout: &TndaLayout) -> Result<LoadedDataset> {
    let manifest = DatasetManifest::tnda();
    let columns: Vec<usize> = [layout.wrist, layout.ankle, layout.back]
        .into_iter()
        .flat_map(|start| start..start + 9)
        .collect();
    let width = columns.iter().copied().chain([layout.label]).max().unwrap_or(0) + 1;
    let ext = format!(".{}", layout.extension);
    let files = list_files(path, |name| name.ends_with(&ext))?;
    let mut streams = Vec::new();
    for (index, file) in files.iter().enumerate() {
        let table = read_table(file, width, true)?;
        streams.extend(build_streams(
            &table,
            &columns,
            |row| label_of(&manifest, row[layout.label]),
            subject_id(file, index),
            DatasetId::Tnda,
            layout.sample_rate,
            file,
        )?);
    }
    Ok(LoadedDataset { manifest, streams })
}

fn label_of(manifest: &DatasetManifest, raw: f64) -> Result<Option<usize>> {
    if !raw.is_finite() || raw < 0.0 || raw.fract() != 0.0 {
        return Err(Error::invalid(format!("activity id {raw} is not a non-negative integer")));
    }
    Ok(manifest.class_of(raw as u32))
}

fn list_files(dir: &Path, keep: impl Fn(&str) -> bool) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && path.file_name().and_then(|n| n.to_str()).is_some_and(&keep) {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(Error::invalid(format!("no recordings found in {}", dir.display())));
    }
    files.sort_by_key(|f| (subject_number(f), f.clone()));
    Ok(files)
}

fn subject_number(file: &Path) -> Option<u32> {
    let name = file.file_stem()?.to_str()?;
    let digits: String = name
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().ok()
}

fn subject_id(file: &Path, index: usize) -> u32 {
    subject_number(file).unwrap_or(index as u32 + 1)
}

/// Rows of at least `width` numeric fields separated by whitespace or commas.
fn read_table(path: &Path, width: usize, allow_header: bool) -> Result<Vec<Vec<f64>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .map(str::parse::<f64>)
            .collect();
        let fields = match parsed {
            Ok(fields) => fields,
            Err(_) if allow_header && rows.is_empty() => continue,
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        };
        if fields.len() < width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected at least {width} fields, found {}", fields.len()),
            });
        }
        rows.push(fields);
    }
    Ok(rows)
}

fn build_streams(
    table: &[Vec<f64>],
    columns: &[usize],
    label: impl Fn(&[f64]) -> Result<Option<usize>>,
    subject: u32,
    dataset: DatasetId,
    sample_rate: f64,
    path: &Path,
) -> Result<Vec<LabeledStream>> {
    let mut signals = Array2::from_shape_fn((columns.len(), table.len()), |(c, t)| table[t][columns[c]]);
    let labels = table
        .iter()
        .enumerate()
        .map(|(i, row)| {
            label(row).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(interpolate_gaps(&mut signals, MAX_GAP)
        .into_iter()
        .map(|(a, b)| LabeledStream {
            signals: signals.slice(s![.., a..b]).to_owned(),
            labels: labels[a..b].to_vec(),
            subject,
            dataset,
            sample_rate,
        })
        .collect())
}
