use std::collections::HashSet;
use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DatasetId, DatasetManifest, PreparedDataset, SensorWindow, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};

/// Parameters of [`synthetic_generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub channels: usize,
    pub window_length: usize,
    /// Signal-to-noise ratio in dB; `None` generates noiseless windows.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(num_classes: usize, samples_per_class: usize, channels: usize, seed: u64) -> Self {
        Self {
            num_classes,
            samples_per_class,
            channels,
            window_length: 128,
            snr_db: Some(10.0),
            seed,
        }
    }

    pub fn generate(&self) -> Result<Vec<SensorWindow>> {
        let family = SyntheticFamily::new(self.num_classes, self.channels, self.window_length, self.seed)?;
        let classes: Vec<usize> = (0..self.num_classes).collect();
        family.generate(&classes, self.samples_per_class, self.snr_db, self.seed)
    }
}

/// Class-balanced synthetic windows at 10 dB SNR, 128 samples long.
pub fn synthetic_generate(
    num_classes: usize,
    samples_per_class: usize,
    channels: usize,
    seed: u64,
) -> Result<Vec<SensorWindow>> {
    SyntheticSpec::new(num_classes, samples_per_class, channels, seed).generate()
}

#[derive(Debug, Clone, PartialEq)]
struct ClassPrototype {
    /// Channel groups whose members are perfectly correlated.
    groups: Vec<Vec<usize>>,
    /// Index of the latent sinusoid each group follows and its polarity.
    sources: Vec<(usize, f64)>,
    /// Whole cycles per window of each latent sinusoid.
    cycles: Vec<usize>,
}

/// A fixed set of class prototypes. Each class partitions the channels into
/// groups of at least two perfectly correlated channels. Groups are paired
/// onto a shared latent sinusoid with opposite polarity (an unpaired group
/// gets its own), so the channel mean of a window carries little of the
/// random phase. Every class has its own base frequency. Tasks drawn from
/// one family with different class subsets and seeds are related: they share
/// the correlation structure of each class while channel gains, offsets,
/// phases and noise differ.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFamily {
    channels: usize,
    window_length: usize,
    prototypes: Vec<ClassPrototype>,
}

impl SyntheticFamily {
    pub fn new(num_classes: usize, channels: usize, window_length: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 classes"));
        }
        if channels < 4 {
            return Err(Error::invalid("synthetic data needs at least 4 channels"));
        }
        let max_cycles = window_length / 2;
        if max_cycles < num_classes + 2 {
            return Err(Error::invalid(format!(
                "window length {window_length} is too short for {num_classes} classes"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bases = index::sample(&mut rng, max_cycles.min(24).max(num_classes + 1) - 1, num_classes);
        let mut seen = HashSet::new();
        let mut prototypes = Vec::with_capacity(num_classes);
        for base in bases.iter().map(|b| b + 2) {
            let groups = (0..10_000)
                .map(|_| random_partition(&mut rng, channels))
                .find(|g| seen.insert(g.clone()))
                .ok_or_else(|| {
                    Error::invalid(format!("{channels} channels admit too few groupings for {num_classes} classes"))
                })?;
            let mut order: Vec<usize> = (0..groups.len()).collect();
            order.shuffle(&mut rng);
            let mut sources = vec![(0, 1.0); groups.len()];
            for (i, &g) in order.iter().enumerate() {
                sources[g] = (i / 2, if i % 2 == 0 { 1.0 } else { -1.0 });
            }
            // distinct cycle counts within a class keep the latent sinusoids orthogonal
            let span = max_cycles - 1;
            let cycles = (0..groups.len().div_ceil(2)).map(|g| 1 + (base - 1 + 5 * g) % span).collect();
            prototypes.push(ClassPrototype { groups, sources, cycles });
        }
        Ok(Self {
            channels,
            window_length,
            prototypes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `samples_per_class` windows of each listed prototype, interleaved by
    /// class. Window labels are positions in `classes`.
    pub fn generate(
        &self,
        classes: &[usize],
        samples_per_class: usize,
        snr_db: Option<f64>,
        seed: u64,
    ) -> Result<Vec<SensorWindow>> {
        if let Some(&bad) = classes.iter().find(|&&c| c >= self.prototypes.len()) {
            return Err(Error::invalid(format!("family has no class {bad}")));
        }
        let mut style_rng = ChaCha8Rng::seed_from_u64(seed);
        style_rng.set_stream(10);
        let gains: Vec<f64> = (0..self.channels).map(|_| style_rng.random_range(0.5..2.0)).collect();
        let offsets: Vec<f64> = (0..self.channels).map(|_| style_rng.random_range(-1.0..1.0)).collect();
        let noise_scale = snr_db.map(|db| (0.5 / 10f64.powf(db / 10.0)).sqrt());
        let normal = Normal::new(0.0, 1.0).expect("unit normal");

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(11);
        let p = self.window_length;
        let mut out = Vec::with_capacity(classes.len() * samples_per_class);
        for _ in 0..samples_per_class {
            for (label, &class) in classes.iter().enumerate() {
                let proto = &self.prototypes[class];
                let mut signals = Array2::zeros((self.channels, p));
                let phases: Vec<f64> = proto.cycles.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
                for (group, &(latent, sign)) in proto.groups.iter().zip(&proto.sources) {
                    let (k, phase) = (proto.cycles[latent], phases[latent]);
                    for &c in group {
                        for (t, v) in signals.row_mut(c).iter_mut().enumerate() {
                            let wave = sign * (2.0 * PI * (k * t) as f64 / p as f64 + phase).sin();
                            *v = offsets[c] + gains[c] * wave;
                        }
                    }
                }
                if let Some(scale) = noise_scale {
                    for (c, mut row) in signals.outer_iter_mut().enumerate() {
                        for v in row.iter_mut() {
                            *v += gains[c] * scale * normal.sample(&mut rng);
                        }
                    }
                }
                out.push(SensorWindow {
                    signals,
                    label,
                    subject: 1,
                    dataset: DatasetId::Synthetic,
                    sample_rate: TARGET_SAMPLE_RATE,
                });
            }
        }
        Ok(out)
    }
}

impl SyntheticFamily {
    /// [`SyntheticFamily::generate`] packaged with a synthetic manifest.
    pub fn prepared(
        &self,
        classes: &[usize],
        samples_per_class: usize,
        snr_db: Option<f64>,
        seed: u64,
    ) -> Result<PreparedDataset> {
        Ok(PreparedDataset {
            manifest: DatasetManifest::synthetic(self.channels, classes.len()),
            window_length: self.window_length,
            step: self.window_length / 2,
            stats: None,
            windows: self.generate(classes, samples_per_class, snr_db, seed)?,
        })
    }
}

/// Random partition of `0..n` into groups of at least two, in canonical
/// order (members sorted, groups sorted by first member).
fn random_partition(rng: &mut impl Rng, n: usize) -> Vec<Vec<usize>> {
    let num_groups = rng.random_range(1..=n / 2);
    let mut sizes = vec![2; num_groups];
    for _ in 0..n - 2 * num_groups {
        let g = rng.random_range(0..num_groups);
        sizes[g] += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut groups = Vec::with_capacity(num_groups);
    let mut start = 0;
    for size in sizes {
        let mut g = order[start..start + size].to_vec();
        g.sort_unstable();
        groups.push(g);
        start += size;
    }
    groups.sort_unstable();
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_adjacency;

    #[test]
    fn balanced_and_deterministic() {
        let a = synthetic_generate(3, 200, 8, 5).unwrap();
        assert_eq!(a.len(), 600);
        for c in 0..3 {
            assert_eq!(a.iter().filter(|w| w.label == c).count(), 200);
        }
        assert!(a.iter().all(|w| w.signals.dim() == (8, 128) && w.sample_rate == 50.0));
        assert_eq!(a, synthetic_generate(3, 200, 8, 5).unwrap());
        assert_ne!(a, synthetic_generate(3, 200, 8, 6).unwrap());
    }

    #[test]
    fn noiseless_adjacency_is_fixed_per_class() {
        let spec = SyntheticSpec {
            snr_db: None,
            ..SyntheticSpec::new(4, 10, 9, 2)
        };
        let windows = spec.generate().unwrap();
        for class in 0..4 {
            let adj: Vec<_> = windows
                .iter()
                .filter(|w| w.label == class)
                .map(|w| build_adjacency(w.signals.view(), 0.2).unwrap())
                .collect();
            assert!(adj.windows(2).all(|p| p[0] == p[1]));
        }
    }

    #[test]
    fn partitions_are_distinct() {
        let family = SyntheticFamily::new(6, 10, 128, 1).unwrap();
        let set: HashSet<_> = family.prototypes.iter().map(|p| p.groups.clone()).collect();
        assert_eq!(set.len(), 6);
        for p in &family.prototypes {
            assert!(p.groups.iter().all(|g| g.len() >= 2));
            let mut cycles = p.cycles.clone();
            cycles.sort_unstable();
            cycles.dedup();
            assert_eq!(cycles.len(), p.groups.len().div_ceil(2));
            for latent in 0..cycles.len() {
                let signs: Vec<f64> = p.sources.iter().filter(|s| s.0 == latent).map(|s| s.1).collect();
                assert!(signs == [1.0] || signs == [1.0, -1.0] || signs == [-1.0, 1.0]);
            }
        }
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(synthetic_generate(1, 10, 8, 0).is_err());
        assert!(synthetic_generate(3, 10, 3, 0).is_err());
        // four channels admit only four groupings
        assert!(SyntheticFamily::new(5, 4, 128, 0).is_err());
    }
}
