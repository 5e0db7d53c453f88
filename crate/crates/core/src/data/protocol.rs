use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DomainTag, LabeledDataset};
use crate::error::{Error, Result};

const P2_TARGET_TRAIN: usize = 6562;
const P2_TARGET_VALIDATION: usize = 729;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Class-stratified subsets drawn without replacement.
    P1,
    /// Full source; target training split only.
    P2,
    /// Both datasets untouched.
    Full,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => Ok(Protocol::P1),
            "p2" => Ok(Protocol::P2),
            "full" => Ok(Protocol::Full),
            other => Err(Error::Validation(format!("unknown protocol `{other}`"))),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::P1 => "p1",
            Protocol::P2 => "p2",
            Protocol::Full => "full",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub protocol: Protocol,
    pub source_count: usize,
    pub target_count: usize,
    pub seed: u64,
}

impl ProtocolSpec {
    pub fn p1(seed: u64) -> Self {
        ProtocolSpec {
            protocol: Protocol::P1,
            source_count: 2000,
            target_count: 1800,
            seed,
        }
    }

    pub fn p2(seed: u64) -> Self {
        ProtocolSpec {
            protocol: Protocol::P2,
            source_count: 0,
            target_count: P2_TARGET_TRAIN,
            seed,
        }
    }

    pub fn full(seed: u64) -> Self {
        ProtocolSpec {
            protocol: Protocol::Full,
            source_count: 0,
            target_count: 0,
            seed,
        }
    }
}

/// Draws `count` samples spread evenly across classes (the first
/// `count % K` classes take one extra), without replacement.
pub fn stratified_sample(ds: &LabeledDataset, count: usize, seed: u64) -> Result<LabeledDataset> {
    stratified(ds, count, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn stratified(ds: &LabeledDataset, count: usize, rng: &mut ChaCha8Rng) -> Result<LabeledDataset> {
    let k = ds.num_classes();
    let mut by_class = vec![Vec::new(); k];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut picked = Vec::with_capacity(count);
    for (class, pool) in by_class.iter().enumerate() {
        let want = count / k + usize::from(class < count % k);
        if pool.len() < want {
            return Err(Error::Protocol(format!(
                "{}: class {class} has {} samples, {want} requested",
                ds.name,
                pool.len()
            )));
        }
        picked.extend(
            index::sample(rng, pool.len(), want)
                .into_iter()
                .map(|j| pool[j]),
        );
    }
    Ok(ds.subset(&picked))
}

/// Splits a target training file into the P2 training and validation
/// parts, seeded.
pub fn split_p2_target(
    target: &LabeledDataset,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let need = P2_TARGET_TRAIN + P2_TARGET_VALIDATION;
    if target.len() < need {
        return Err(Error::Protocol(format!(
            "{}: P2 needs {need} target samples, found {}",
            target.name,
            target.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = index::sample(&mut rng, target.len(), need).into_vec();
    let (train, val) = order.split_at(P2_TARGET_TRAIN);
    Ok((target.subset(train), target.subset(val)))
}

/// Returns the source and target datasets the protocol trains on.
pub fn apply_protocol(
    source: &LabeledDataset,
    target: &LabeledDataset,
    spec: &ProtocolSpec,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (src, tgt) = match spec.protocol {
        Protocol::P1 => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let s = stratified(source, spec.source_count, &mut rng)?;
            let t = stratified(target, spec.target_count, &mut rng)?;
            (s, t)
        }
        Protocol::P2 => (source.clone(), split_p2_target(target, spec.seed)?.0),
        Protocol::Full => (source.clone(), target.clone()),
    };
    Ok((
        src.with_domain(DomainTag::Source),
        tgt.with_domain(DomainTag::Target),
    ))
}
