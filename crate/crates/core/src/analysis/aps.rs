use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{generate_features, Evaluator};
use crate::autodiff::Tensor;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Architecture, Mode, Network};

/// Binary signature of a feature vector: bit `i` is set when unit `i` is
/// strictly positive. Packed 64 units per word.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActivationPattern(Vec<u64>);

impl ActivationPattern {
    pub fn of(features: &[f32]) -> Self {
        let mut words = vec![0u64; features.len().div_ceil(64)];
        for (i, &v) in features.iter().enumerate() {
            if v > 0.0 {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        ActivationPattern(words)
    }

    pub fn bit(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct APCensus {
    pub distinct_count: usize,
    pub samples_seen: usize,
    /// Whether sampling stopped because new patterns stopped appearing.
    pub saturated: bool,
}

/// Running set of observed patterns.
#[derive(Clone, Debug, Default)]
pub struct PatternSet {
    seen: HashSet<ActivationPattern>,
    samples: usize,
}

impl PatternSet {
    /// Adds every row of `features`; returns how many patterns were new.
    pub fn add_rows(&mut self, features: &Tensor) -> usize {
        let before = self.seen.len();
        let width = features.row_len();
        if width > 0 {
            for row in features.data().chunks(width) {
                self.seen.insert(ActivationPattern::of(row));
            }
        }
        self.samples += features.shape().first().copied().unwrap_or(0);
        self.seen.len() - before
    }

    pub fn census(&self, saturated: bool) -> APCensus {
        APCensus {
            distinct_count: self.seen.len(),
            samples_seen: self.samples,
            saturated,
        }
    }
}

pub fn count_aps_features(features: &Tensor) -> APCensus {
    let mut set = PatternSet::default();
    set.add_rows(features);
    set.census(false)
}

/// Distinct patterns among the encoder features of every sample in `ds`.
pub fn count_aps_dataset(
    encoder: &Network,
    ds: &LabeledDataset,
    eval: &Evaluator,
) -> Result<APCensus> {
    Ok(count_aps_features(&eval.apply(&[encoder], ds.images())?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorCensusConfig {
    pub batch: usize,
    pub patience: usize,
    pub max_samples: usize,
}

impl Default for GeneratorCensusConfig {
    fn default() -> Self {
        GeneratorCensusConfig {
            batch: 1024,
            patience: 50,
            max_samples: 2_000_000,
        }
    }
}

fn generator_classes(s: &Network) -> Result<usize> {
    match s.architecture() {
        Architecture::Generator(spec) => Ok(spec.num_classes),
        _ => Err(Error::Architecture(format!(
            "{} is not a generator",
            s.name()
        ))),
    }
}

/// Samples generated features with uniform labels until `patience`
/// consecutive batches add no new pattern or `max_samples` is reached.
/// The generator runs as it does when feeding the encoder game (dropout
/// active, batch statistics).
pub fn count_aps_generator(
    s: &Network,
    cfg: &GeneratorCensusConfig,
    rng: &mut impl Rng,
) -> Result<APCensus> {
    if cfg.patience == 0 || cfg.batch < 2 {
        return Err(Error::Parameter(format!(
            "census needs patience ≥ 1 and batch ≥ 2: {cfg:?}"
        )));
    }
    let classes = generator_classes(s)?;
    let mut set = PatternSet::default();
    let mut quiet = 0;
    let mut drawn = 0;
    while drawn < cfg.max_samples {
        let n = cfg.batch.min(cfg.max_samples - drawn).max(2);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let feats = generate_features(s, &labels, rng, Mode::SAMPLE)?;
        drawn += n;
        if set.add_rows(&feats) == 0 {
            quiet += 1;
            if quiet >= cfg.patience {
                return Ok(set.census(true));
            }
        } else {
            quiet = 0;
        }
    }
    Ok(set.census(false))
}

/// Fraction of `n` generated features (uniform labels) that `head`
/// assigns to their conditioning label.
pub fn generated_feature_accuracy(
    s: &Network,
    head: &Network,
    n: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::Parameter(
            "generated_feature_accuracy needs n ≥ 1".into(),
        ));
    }
    let classes = generator_classes(s)?;
    let chunks = n.div_ceil(1024);
    let mut hits = 0;
    for c in 0..chunks {
        let size = n / chunks + usize::from(c < n % chunks);
        let labels: Vec<usize> = (0..size).map(|_| rng.random_range(0..classes)).collect();
        let feats = generate_features(s, &labels, rng, Mode::SAMPLE)?;
        let pred = head.predict(&feats)?.argmax_rows();
        hits += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(hits as f64 / n as f64)
}
