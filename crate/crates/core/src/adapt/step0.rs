use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AccuracyRecord, BatchSampler, Evaluator, Player, RunReport, Stage};
use crate::autodiff::{AdamConfig, Tape};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Mode, Network};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step0Config {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub adam: AdamConfig,
    /// Accuracy is measured every this many iterations; 0 measures only
    /// at the start and the end.
    pub eval_every: usize,
    pub seed: u64,
    pub eval_threads: Option<usize>,
}

impl Step0Config {
    pub fn new(iterations: usize, lr: f32, batch_size: usize, seed: u64) -> Self {
        Step0Config {
            iterations,
            batch_size,
            lr,
            adam: AdamConfig::default(),
            eval_every: 0,
            seed,
            eval_threads: None,
        }
    }
}

/// Trains `encoder` and `head` jointly with softmax cross-entropy on
/// `source`. `monitor`, when given, is only evaluated, never trained on.
pub fn train_step0(
    encoder: &mut Network,
    head: &mut Network,
    source: &LabeledDataset,
    monitor: Option<&LabeledDataset>,
    cfg: &Step0Config,
) -> Result<RunReport> {
    if source.is_empty() {
        return Err(Error::Data(format!("{} is empty", source.name)));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Validation(format!(
            "batch size {} < 2",
            cfg.batch_size
        )));
    }
    if head.output_dim() != source.num_classes() {
        return Err(Error::Architecture(format!(
            "{} predicts {} classes, {} has {}",
            head.name(),
            head.output_dim(),
            source.name,
            source.num_classes()
        )));
    }
    let eval = Evaluator::new(cfg.eval_threads)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = BatchSampler::new(source.len(), rng.random());
    let mut report = RunReport::new(Stage::Step0, cfg.seed, cfg.iterations);

    let measure = |encoder: &Network, head: &Network, iteration| -> Result<AccuracyRecord> {
        Ok(AccuracyRecord {
            iteration,
            source_acc: Some(eval.accuracy(encoder, head, source)?),
            target_acc: monitor
                .map(|m| eval.accuracy(encoder, head, m))
                .transpose()?,
        })
    };
    report.accuracy.push(measure(encoder, head, 0)?);

    for it in 1..=cfg.iterations {
        let idx = sampler.next_batch(cfg.batch_size);
        let (x, y) = source.batch(&idx);
        let mut tape = Tape::new(rng.random());
        let xv = tape.constant_owned(x);
        let f = encoder.forward(&mut tape, xv, Mode::TRAIN)?;
        let logits = head.forward(&mut tape, f, Mode::TRAIN)?;
        let loss = tape.softmax_cross_entropy(logits, &y)?;
        report.push_loss(it, Player::Generator, tape.value(loss)[0])?;
        let grads = tape.backward(loss)?;
        for net in [&mut *encoder, &mut *head] {
            net.zero_grad();
            net.accumulate(&grads)?;
            net.adam_step(cfg.lr, &cfg.adam)?;
        }
        let due = cfg.eval_every > 0 && it % cfg.eval_every == 0;
        if due || it == cfg.iterations {
            report.accuracy.push(measure(encoder, head, it)?);
        }
    }
    report.train_accuracy = report.accuracy.last().and_then(|a| a.source_acc);
    Ok(report)
}
