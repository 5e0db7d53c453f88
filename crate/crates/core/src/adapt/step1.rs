use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BatchSampler, GameConfig, MinimaxSchedule, Player, RunReport, Stage};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Architecture, GeneratorSpec, Mode, Network};

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Label {
                index: i,
                label: l,
                classes,
            });
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// `n × dim` noise drawn uniformly from `[-1, 1]`.
pub fn uniform_noise(n: usize, dim: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..n * dim)
        .map(|_| rng.random_range(-1.0f32..=1.0))
        .collect();
    Tensor::new(vec![n, dim], data).expect("shape matches")
}

fn generator_spec(s: &Network) -> Result<&GeneratorSpec> {
    match s.architecture() {
        Architecture::Generator(spec) => Ok(spec),
        other => Err(Error::Architecture(format!(
            "{} is not a generator: {other:?}",
            s.name()
        ))),
    }
}

/// `D1(features ‖ onehot(labels))`.
fn d1_score(
    tape: &mut Tape,
    d1: &Network,
    feats: Var,
    labels: &[usize],
    trainable: bool,
) -> Result<Var> {
    let n = tape.shape(feats)[0];
    if n != labels.len() {
        return Err(Error::Batch(format!(
            "{n} feature rows with {} labels",
            labels.len()
        )));
    }
    let feat_dim = tape.shape(feats)[1];
    let Architecture::Discriminator(spec) = d1.architecture() else {
        return Err(Error::Architecture(format!(
            "{} is not a discriminator",
            d1.name()
        )));
    };
    let classes = spec
        .input_dim
        .checked_sub(feat_dim)
        .filter(|&c| c > 0)
        .ok_or_else(|| {
            Error::Architecture(format!(
                "{} takes {} inputs, too few for {feat_dim} features plus a label code",
                d1.name(),
                spec.input_dim
            ))
        })?;
    let y = tape.constant_owned(one_hot(labels, classes)?);
    let input = tape.concat_cols(feats, y)?;
    let mode = Mode {
        trainable,
        ..Mode::EVAL
    };
    Ok(d1.forward_ref(tape, input, mode)?.0)
}

/// Discriminator side of the conditional game:
/// `‖D1(real ‖ y) − 1‖² + ‖D1(fake ‖ y)‖²`, with `D1` trainable.
pub fn step1_d_loss(
    tape: &mut Tape,
    d1: &Network,
    real: Var,
    real_labels: &[usize],
    fake: Var,
    fake_labels: &[usize],
) -> Result<Var> {
    let pr = d1_score(tape, d1, real, real_labels, true)?;
    let pf = d1_score(tape, d1, fake, fake_labels, true)?;
    let lr = tape.least_squares(pr, 1.0)?;
    let lf = tape.least_squares(pf, 0.0)?;
    tape.add(lr, lf)
}

/// Generator side: `‖D1(S(z ‖ y) ‖ y) − 1‖²` with `D1` frozen. `S` runs
/// in `mode`, so its batch-norm statistics update under [`Mode::TRAIN`].
pub fn step1_g_loss(
    tape: &mut Tape,
    d1: &Network,
    s: &mut Network,
    noise: &Tensor,
    labels: &[usize],
    mode: Mode,
) -> Result<Var> {
    let spec = generator_spec(s)?.clone();
    if noise.rank() != 2 || noise.shape()[1] != spec.noise_dim || noise.shape()[0] != labels.len() {
        return Err(Error::Dimension(format!(
            "noise {:?} for {} labels, expected width {}",
            noise.shape(),
            labels.len(),
            spec.noise_dim
        )));
    }
    let z = tape.constant(noise);
    let y = tape.constant_owned(one_hot(labels, spec.num_classes)?);
    let input = tape.concat_cols(z, y)?;
    let fake = s.forward(tape, input, mode)?;
    let p = d1_score(tape, d1, fake, labels, false)?;
    tape.least_squares(p, 1.0)
}

/// `S(z ‖ onehot(y))` with fresh uniform noise, one row per label.
pub fn generate_features(
    s: &Network,
    labels: &[usize],
    rng: &mut impl Rng,
    mode: Mode,
) -> Result<Tensor> {
    let spec = generator_spec(s)?;
    let y = one_hot(labels, spec.num_classes)?;
    if labels.is_empty() {
        return Ok(Tensor::zeros(&[0, spec.feature_dim]));
    }
    let z = uniform_noise(labels.len(), spec.noise_dim, rng);
    let mut tape = Tape::new(rng.random());
    let zv = tape.constant_owned(z);
    let yv = tape.constant_owned(y);
    let input = tape.concat_cols(zv, yv)?;
    let mode = Mode {
        trainable: false,
        ..mode
    };
    let (out, _) = s.forward_ref(&mut tape, input, mode)?;
    Ok(tape.tensor(out))
}

fn mean(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64).sum::<f64>() / v.len().max(1) as f64
}

/// Trains `S` against `D1` to mimic the features frozen `encoder` extracts
/// from `source`. Real features are recomputed per batch in eval mode.
pub fn train_step1(
    s: &mut Network,
    d1: &mut Network,
    encoder: &Network,
    source: &LabeledDataset,
    schedule: &MinimaxSchedule,
    cfg: &GameConfig,
) -> Result<RunReport> {
    schedule.validate()?;
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::Data(format!("{} is empty", source.name)));
    }
    let spec = generator_spec(s)?.clone();
    if spec.feature_dim != encoder.output_dim() {
        return Err(Error::Architecture(format!(
            "{} emits {} features, {} emits {}",
            s.name(),
            spec.feature_dim,
            encoder.name(),
            encoder.output_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut real_sampler = BatchSampler::new(source.len(), rng.random());
    let mut label_sampler = BatchSampler::new(source.len(), rng.random());
    let mut report = RunReport::new(Stage::Step1, cfg.seed, schedule.iterations);
    let b = cfg.batch_size;

    for it in 1..=schedule.iterations {
        for _ in 0..schedule.disc_steps_per_iter {
            let (x, y) = source.batch(&real_sampler.next_batch(b));
            let mut tape = Tape::new(rng.random());
            let xv = tape.constant_owned(x);
            let (real, _) = encoder.forward_ref(&mut tape, xv, Mode::EVAL)?;
            let z = tape.constant_owned(uniform_noise(b, spec.noise_dim, &mut rng));
            let yv = tape.constant_owned(one_hot(&y, spec.num_classes)?);
            let input = tape.concat_cols(z, yv)?;
            let (fake, _) = s.forward_ref(&mut tape, input, Mode::SAMPLE)?;
            let loss = step1_d_loss(&mut tape, d1, real, &y, fake, &y)?;
            report.push_loss(it, Player::Discriminator, tape.value(loss)[0])?;
            if it == schedule.iterations {
                let pr = d1_score(&mut tape, d1, real, &y, false)?;
                let pf = d1_score(&mut tape, d1, fake, &y, false)?;
                report.d_real_mean = Some(mean(tape.value(pr)));
                report.d_fake_mean = Some(mean(tape.value(pf)));
            }
            let grads = tape.backward(loss)?;
            d1.zero_grad();
            d1.accumulate(&grads)?;
            d1.adam_step(cfg.lr, &cfg.adam)?;
        }
        for _ in 0..schedule.gen_steps_per_iter {
            let idx = label_sampler.next_batch(b);
            let labels: Vec<usize> = idx.iter().map(|&i| source.labels()[i]).collect();
            let noise = uniform_noise(b, spec.noise_dim, &mut rng);
            let mut tape = Tape::new(rng.random());
            let loss = step1_g_loss(&mut tape, d1, s, &noise, &labels, Mode::TRAIN)?;
            report.push_loss(it, Player::Generator, tape.value(loss)[0])?;
            let grads = tape.backward(loss)?;
            s.zero_grad();
            s.accumulate(&grads)?;
            s.adam_step(cfg.lr, &cfg.adam)?;
        }
    }
    Ok(report)
}
