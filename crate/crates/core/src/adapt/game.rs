use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::step1::{one_hot, uniform_noise};
use super::{
    AccuracyRecord, BatchSampler, Evaluator, GameConfig, MinimaxSchedule, Player, RunReport, Stage,
};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Architecture, Mode, Network};

/// Features the discriminator treats as genuine.
enum Reference<'a> {
    /// `S(z ‖ y)` with uniform labels, `S` frozen with dropout active.
    Generated(&'a Network),
    /// Frozen source encoder applied to source images.
    SourceFeatures(&'a Network),
}

/// Which images pass through the encoder being trained.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Feed {
    /// Half source, half target in every batch.
    Mixed,
    TargetOnly,
}

struct Game<'a> {
    stage: Stage,
    reference: Reference<'a>,
    feed: Feed,
    source: &'a LabeledDataset,
    target: &'a LabeledDataset,
    head: &'a Network,
}

fn stack_rows(a: Tensor, b: Tensor) -> Result<Tensor> {
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let mut data = a.into_data();
    data.extend_from_slice(b.data());
    Tensor::new(shape, data)
}

struct Samplers {
    source: BatchSampler,
    target: BatchSampler,
    reference: BatchSampler,
    source_seen: usize,
    encoder_seen: usize,
}

impl Game<'_> {
    fn check(&self, encoder: &Network, d: &Network) -> Result<()> {
        if !matches!(encoder.architecture(), Architecture::Encoder(_)) {
            return Err(Error::Architecture(format!(
                "{} is not an encoder",
                encoder.name()
            )));
        }
        let reference = match self.reference {
            Reference::Generated(s) => s,
            Reference::SourceFeatures(e) => {
                if e.architecture() != encoder.architecture() {
                    return Err(Error::Architecture(format!(
                        "{} and {} have different architectures",
                        e.name(),
                        encoder.name()
                    )));
                }
                e
            }
        };
        let dim = encoder.output_dim();
        if reference.output_dim() != dim {
            return Err(Error::Architecture(format!(
                "{} emits {} features, {} emits {dim}",
                reference.name(),
                reference.output_dim(),
                encoder.name()
            )));
        }
        match d.architecture() {
            Architecture::Discriminator(s) if s.input_dim == dim => {}
            other => {
                return Err(Error::Architecture(format!(
                    "{} cannot score {dim}-dim features: {other:?}",
                    d.name()
                )))
            }
        }
        if self.source.sample_shape() != self.target.sample_shape() {
            return Err(Error::Data(format!(
                "source samples {:?} and target samples {:?} differ in shape",
                self.source.sample_shape(),
                self.target.sample_shape()
            )));
        }
        if self.source.is_empty() || self.target.is_empty() {
            return Err(Error::Data("source and target must be non-empty".into()));
        }
        Ok(())
    }

    fn reference_batch(
        &self,
        tape: &mut Tape,
        n: usize,
        samplers: &mut Samplers,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        match self.reference {
            Reference::Generated(s) => {
                let Architecture::Generator(spec) = s.architecture() else {
                    return Err(Error::Architecture(format!(
                        "{} is not a generator",
                        s.name()
                    )));
                };
                let labels: Vec<usize> = (0..n)
                    .map(|_| rng.random_range(0..spec.num_classes))
                    .collect();
                let z = tape.constant_owned(uniform_noise(n, spec.noise_dim, rng));
                let y = tape.constant_owned(one_hot(&labels, spec.num_classes)?);
                let input = tape.concat_cols(z, y)?;
                Ok(s.forward_ref(tape, input, Mode::SAMPLE)?.0)
            }
            Reference::SourceFeatures(e) => {
                let (x, _) = self.source.batch(&samplers.reference.next_batch(n));
                let xv = tape.constant_owned(x);
                Ok(e.forward_ref(tape, xv, Mode::EVAL)?.0)
            }
        }
    }

    fn encoder_batch(
        &self,
        tape: &mut Tape,
        encoder: &Network,
        n: usize,
        mode: Mode,
        samplers: &mut Samplers,
    ) -> Result<Var> {
        let x = match self.feed {
            Feed::Mixed => {
                let ns = n / 2;
                let (xs, _) = self.source.batch(&samplers.source.next_batch(ns));
                let (xt, _) = self.target.batch(&samplers.target.next_batch(n - ns));
                samplers.source_seen += ns;
                stack_rows(xs, xt)?
            }
            Feed::TargetOnly => self.target.batch(&samplers.target.next_batch(n)).0,
        };
        samplers.encoder_seen += n;
        let xv = tape.constant_owned(x);
        Ok(encoder.forward_ref(tape, xv, mode)?.0)
    }

    fn measure(
        &self,
        eval: &Evaluator,
        encoder: &Network,
        iteration: usize,
    ) -> Result<AccuracyRecord> {
        Ok(AccuracyRecord {
            iteration,
            source_acc: Some(eval.accuracy(encoder, self.head, self.source)?),
            target_acc: Some(eval.accuracy(encoder, self.head, self.target)?),
        })
    }

    /// Alternates discriminator steps (reference → 1, encoded → 0) with
    /// encoder steps (encoded → 1, discriminator frozen).
    fn play(
        &self,
        encoder: &mut Network,
        d: &mut Network,
        schedule: &MinimaxSchedule,
        cfg: &GameConfig,
    ) -> Result<RunReport> {
        schedule.validate()?;
        cfg.validate()?;
        self.check(encoder, d)?;
        let eval = Evaluator::new(cfg.eval_threads)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut samplers = Samplers {
            source: BatchSampler::new(self.source.len(), rng.random()),
            target: BatchSampler::new(self.target.len(), rng.random()),
            reference: BatchSampler::new(self.source.len(), rng.random()),
            source_seen: 0,
            encoder_seen: 0,
        };
        let mut report = RunReport::new(self.stage, cfg.seed, schedule.iterations);
        let b = cfg.batch_size;
        report.accuracy.push(self.measure(&eval, encoder, 0)?);

        for it in 1..=schedule.iterations {
            for _ in 0..schedule.disc_steps_per_iter {
                let mut tape = Tape::new(rng.random());
                let r = self.reference_batch(&mut tape, b, &mut samplers, &mut rng)?;
                let e = self.encoder_batch(&mut tape, encoder, b, Mode::SAMPLE, &mut samplers)?;
                let (pr, _) = d.forward_ref(&mut tape, r, Mode::TRAIN)?;
                let (pe, _) = d.forward_ref(&mut tape, e, Mode::TRAIN)?;
                let lr = tape.least_squares(pr, 1.0)?;
                let le = tape.least_squares(pe, 0.0)?;
                let loss = tape.add(lr, le)?;
                report.push_loss(it, Player::Discriminator, tape.value(loss)[0])?;
                let grads = tape.backward(loss)?;
                d.zero_grad();
                d.accumulate(&grads)?;
                d.adam_step(cfg.lr, &cfg.adam)?;
            }
            for _ in 0..schedule.gen_steps_per_iter {
                let mut tape = Tape::new(rng.random());
                let e = self.encoder_batch(&mut tape, encoder, b, Mode::TRAIN, &mut samplers)?;
                let frozen = Mode {
                    trainable: false,
                    ..Mode::TRAIN
                };
                let (pe, _) = d.forward_ref(&mut tape, e, frozen)?;
                let loss = tape.least_squares(pe, 1.0)?;
                report.push_loss(it, Player::Generator, tape.value(loss)[0])?;
                let grads = tape.backward(loss)?;
                encoder.zero_grad();
                encoder.accumulate(&grads)?;
                encoder.adam_step(cfg.lr, &cfg.adam)?;
            }
            if it % schedule.eval_every == 0 {
                report.accuracy.push(self.measure(&eval, encoder, it)?);
            }
        }
        report.finish_window(schedule.eval_window)?;
        report.source_fraction =
            Some(samplers.source_seen as f64 / samplers.encoder_seen.max(1) as f64);
        Ok(report)
    }
}

/// The full method: `encoder_i` (a clone of the source encoder) learns to
/// map source and target images onto features `D2` cannot tell apart from
/// those the frozen generator `s` produces.
#[allow(clippy::too_many_arguments)]
pub fn train_step2(
    encoder_i: &mut Network,
    d2: &mut Network,
    s: &Network,
    head: &Network,
    source: &LabeledDataset,
    target: &LabeledDataset,
    schedule: &MinimaxSchedule,
    cfg: &GameConfig,
) -> Result<RunReport> {
    Game {
        stage: Stage::Step2,
        reference: Reference::Generated(s),
        feed: Feed::Mixed,
        source,
        target,
        head,
    }
    .play(encoder_i, d2, schedule, cfg)
}

/// Least-squares ADDA: a target-only encoder against frozen source features.
#[allow(clippy::too_many_arguments)]
pub fn train_ls_adda(
    encoder_t: &mut Network,
    d: &mut Network,
    encoder_s: &Network,
    head: &Network,
    source: &LabeledDataset,
    target: &LabeledDataset,
    schedule: &MinimaxSchedule,
    cfg: &GameConfig,
) -> Result<RunReport> {
    Game {
        stage: Stage::LsAdda,
        reference: Reference::SourceFeatures(encoder_s),
        feed: Feed::TargetOnly,
        source,
        target,
        head,
    }
    .play(encoder_t, d, schedule, cfg)
}

/// Domain-invariant variant of LS-ADDA: the shared encoder sees mixed
/// source and target batches.
#[allow(clippy::too_many_arguments)]
pub fn train_di(
    encoder_i: &mut Network,
    d: &mut Network,
    encoder_s: &Network,
    head: &Network,
    source: &LabeledDataset,
    target: &LabeledDataset,
    schedule: &MinimaxSchedule,
    cfg: &GameConfig,
) -> Result<RunReport> {
    Game {
        stage: Stage::Di,
        reference: Reference::SourceFeatures(encoder_s),
        feed: Feed::Mixed,
        source,
        target,
        head,
    }
    .play(encoder_i, d, schedule, cfg)
}
