use ndarray::{s, Array2, ArrayView2};

use super::{DatasetId, SensorWindow, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};

/// Longest run of missing samples that is bridged by interpolation.
pub const MAX_GAP: usize = 10;

/// A continuous recording: channels x time, with a class per time step
/// (`None` for unlabeled or discarded activities).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStream {
    pub signals: Array2<f64>,
    pub labels: Vec<Option<usize>>,
    pub subject: u32,
    pub dataset: DatasetId,
    pub sample_rate: f64,
}

impl LabeledStream {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Fills runs of at most `max_gap` NaNs that have finite neighbours on both
/// sides by linear interpolation, per channel. Time steps that still hold a
/// NaN afterwards cut the recording; the finite pieces are returned as
/// `(start, end)` column ranges of the filled matrix.
pub fn interpolate_gaps(signals: &mut Array2<f64>, max_gap: usize) -> Vec<(usize, usize)> {
    let t = signals.ncols();
    for mut row in signals.outer_iter_mut() {
        let mut j = 0;
        while j < t {
            if !row[j].is_nan() {
                j += 1;
                continue;
            }
            let start = j;
            while j < t && row[j].is_nan() {
                j += 1;
            }
            let len = j - start;
            if start == 0 || j == t || len > max_gap {
                continue;
            }
            let (a, b) = (row[start - 1], row[j]);
            for (i, k) in (start..j).enumerate() {
                let w = (i + 1) as f64 / (len + 1) as f64;
                row[k] = a + w * (b - a);
            }
        }
    }
    let mut pieces = Vec::new();
    let mut start = None;
    for j in 0..t {
        let ok = signals.column(j).iter().all(|v| v.is_finite());
        match (ok, start) {
            (true, None) => start = Some(j),
            (false, Some(s)) => {
                pieces.push((s, j));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        pieces.push((s, t));
    }
    pieces
}

/// Mean of each adjacent sample pair; an odd trailing sample is kept as is.
pub fn downsample_2x(stream: ArrayView2<f64>) -> Array2<f64> {
    let (c, t) = stream.dim();
    Array2::from_shape_fn((c, t.div_ceil(2)), |(i, j)| {
        if 2 * j + 1 < t {
            0.5 * (stream[[i, 2 * j]] + stream[[i, 2 * j + 1]])
        } else {
            stream[[i, 2 * j]]
        }
    })
}

fn downsample_labels(labels: &[Option<usize>]) -> Vec<Option<usize>> {
    labels
        .chunks(2)
        .map(|pair| match pair {
            [a, b] if a == b => *a,
            [a] => *a,
            _ => None,
        })
        .collect()
}

impl LabeledStream {
    /// Halves the sampling rate with [`downsample_2x`]; a pair with
    /// disagreeing labels becomes unlabeled.
    pub fn downsampled(&self) -> LabeledStream {
        LabeledStream {
            signals: downsample_2x(self.signals.view()),
            labels: downsample_labels(&self.labels),
            subject: self.subject,
            dataset: self.dataset,
            sample_rate: self.sample_rate / 2.0,
        }
    }
}

/// Number of windows a single-label stream of length `t` yields.
pub fn segment_count(t: usize, window_length: usize, step: usize) -> usize {
    if t < window_length {
        0
    } else {
        (t - window_length) / step + 1
    }
}

/// Sliding windows starting every `step` samples. Only windows whose samples
/// all carry the same label are kept; a trailing partial window is dropped.
pub fn segment(stream: &LabeledStream, window_length: usize, step: usize) -> Result<Vec<SensorWindow>> {
    if window_length == 0 || step == 0 {
        return Err(Error::invalid("window length and step must be positive"));
    }
    if stream.signals.ncols() != stream.labels.len() {
        return Err(Error::shape("stream signals and labels differ in length"));
    }
    let count = segment_count(stream.len(), window_length, step);
    let mut out = Vec::new();
    for w in 0..count {
        let start = w * step;
        let labels = &stream.labels[start..start + window_length];
        let Some(label) = labels[0] else { continue };
        if labels.iter().any(|l| *l != Some(label)) {
            continue;
        }
        out.push(SensorWindow {
            signals: stream.signals.slice(s![.., start..start + window_length]).to_owned(),
            label,
            subject: stream.subject,
            dataset: stream.dataset,
            sample_rate: stream.sample_rate,
        });
    }
    Ok(out)
}

/// Brings every stream to the common sampling rate and segments it.
pub fn prepare_windows(streams: &[LabeledStream], window_length: usize, step: usize) -> Result<Vec<SensorWindow>> {
    let mut windows = Vec::new();
    for stream in streams {
        let stream = if (stream.sample_rate - 2.0 * TARGET_SAMPLE_RATE).abs() < 1e-9 {
            stream.downsampled()
        } else if (stream.sample_rate - TARGET_SAMPLE_RATE).abs() < 1e-9 {
            stream.clone()
        } else {
            return Err(Error::invalid(format!(
                "unsupported sample rate {} Hz",
                stream.sample_rate
            )));
        };
        windows.extend(segment(&stream, window_length, step)?);
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn stream(t: usize, labels: Vec<Option<usize>>) -> LabeledStream {
        LabeledStream {
            signals: Array2::from_shape_fn((2, t), |(c, j)| (c * 1000 + j) as f64),
            labels,
            subject: 1,
            dataset: DatasetId::Synthetic,
            sample_rate: 50.0,
        }
    }

    #[test]
    fn constant_stream_stays_constant() {
        let x = Array2::from_elem((3, 9), 4.5);
        let y = downsample_2x(x.view());
        assert_eq!(y.dim(), (3, 5));
        assert!(y.iter().all(|&v| v == 4.5));
    }

    #[test]
    fn nyquist_is_removed() {
        let x = Array2::from_shape_fn((1, 100), |(_, j)| if j % 2 == 0 { 1.0 } else { -1.0 });
        let y = downsample_2x(x.view());
        assert_eq!(y.ncols(), 50);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn label_pairs_must_agree() {
        assert_eq!(
            downsample_labels(&[Some(1), Some(1), Some(1), Some(2), Some(3)]),
            vec![Some(1), None, Some(3)]
        );
    }

    #[test]
    fn segment_examples() {
        let s = stream(256, vec![Some(0); 256]);
        let w = segment(&s, 128, 64).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[2].signals[[0, 0]], 128.0);
        assert!(segment(&stream(127, vec![Some(0); 127]), 128, 64).unwrap().is_empty());

        let labels = (0..256).map(|j| Some(usize::from(j >= 100))).collect();
        let w = segment(&stream(256, labels), 128, 64).unwrap();
        // starts 0 and 64 straddle the change at 100, start 128 is pure
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].label, 1);
    }

    #[test]
    fn unlabeled_samples_exclude_windows() {
        let mut labels = vec![Some(2); 256];
        labels[200] = None;
        assert_eq!(segment(&stream(256, labels), 128, 64).unwrap().len(), 2);
    }

    #[test]
    fn short_gaps_are_interpolated() {
        let nan = f64::NAN;
        let mut x = array![[1.0, nan, nan, 4.0, 5.0], [0.0, 0.0, 0.0, 0.0, 0.0]];
        let pieces = interpolate_gaps(&mut x, 10);
        assert_eq!(pieces, vec![(0, 5)]);
        assert_eq!(x.row(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn long_and_edge_gaps_split() {
        let nan = f64::NAN;
        let mut row = vec![nan, 1.0, 2.0];
        row.extend(vec![nan; 11]);
        row.extend([3.0, 4.0, nan]);
        let mut x = Array2::from_shape_vec((1, row.len()), row).unwrap();
        assert_eq!(interpolate_gaps(&mut x, 10), vec![(1, 3), (14, 16)]);
    }
}
