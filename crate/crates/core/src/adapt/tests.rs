use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Tape, Tensor};
use crate::data::{make_synthetic_domains, LabeledDataset, SyntheticSpec};
use crate::nn::{
    build_classifier, build_discriminator, build_encoder, build_generator, clone_weights,
    ClassifierHead, DiscriminatorSpec, EncoderSpec, GeneratorSpec, HiddenActivation, Mode, Network,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sets every weight of a dense network: `layers[i]` is `(weight, bias)`.
fn set_dense(net: &mut Network, layers: &[(Vec<f32>, Vec<f32>)]) {
    let mut params = net.params_mut().into_iter();
    for (w, b) in layers {
        params
            .next()
            .unwrap()
            .tensor_mut()
            .data_mut()
            .copy_from_slice(w);
        params
            .next()
            .unwrap()
            .tensor_mut()
            .data_mut()
            .copy_from_slice(b);
    }
}

/// D1 over one feature and one class whose output is
/// `sigmoid(gain · feature)`.
fn sign_d1(gain: f32) -> Network {
    let spec = DiscriminatorSpec {
        input_dim: 2,
        hidden_widths: vec![2],
        hidden_activation: HiddenActivation::Relu,
    };
    let mut d = build_discriminator(&spec, "D1", &mut rng(0)).unwrap();
    set_dense(
        &mut d,
        &[
            (vec![1.0, -1.0, 0.0, 0.0], vec![0.0, 0.0]),
            (vec![gain, -gain], vec![0.0]),
        ],
    );
    d
}

fn constant_d(input_dim: usize, logit: f32) -> Network {
    let spec = DiscriminatorSpec {
        input_dim,
        hidden_widths: vec![3],
        hidden_activation: HiddenActivation::Relu,
    };
    let mut d = build_discriminator(&spec, "D", &mut rng(0)).unwrap();
    let params = d.params_mut();
    let n = params.len();
    for (i, p) in params.into_iter().enumerate() {
        let fill = if i == n - 1 { logit } else { 0.0 };
        p.tensor_mut().data_mut().iter_mut().for_each(|v| *v = fill);
    }
    d
}

fn tiny_generator(classes: usize, feature_dim: usize, seed: u64) -> Network {
    let spec = GeneratorSpec {
        noise_dim: 4,
        num_classes: classes,
        block_widths: [16, 16],
        dropout_rate: 0.5,
        feature_dim,
    };
    build_generator(&spec, "S", &mut rng(seed)).unwrap()
}

#[test]
fn d1_loss_examples() {
    let d1 = sign_d1(200.0);
    let mut tape = Tape::new(0);
    let real = tape.constant(&Tensor::full(&[4, 1], 1.0));
    let fake = tape.constant(&Tensor::full(&[4, 1], -1.0));
    let l = step1_d_loss(&mut tape, &d1, real, &[0; 4], fake, &[0; 4]).unwrap();
    assert!(tape.value(l)[0] < 1e-12);

    let half = constant_d(2, 0.0);
    let mut tape = Tape::new(0);
    let real = tape.constant(&Tensor::full(&[3, 1], 0.3));
    let fake = tape.constant(&Tensor::full(&[3, 1], -0.2));
    let l = step1_d_loss(&mut tape, &half, real, &[0; 3], fake, &[0; 3]).unwrap();
    assert!((tape.value(l)[0] - 0.5).abs() < 1e-7);

    let mut tape = Tape::new(0);
    let real = tape.constant(&Tensor::full(&[3, 1], 0.3));
    let fake = tape.constant(&Tensor::full(&[2, 1], 0.3));
    assert!(matches!(
        step1_d_loss(&mut tape, &half, real, &[0; 3], fake, &[0; 3]),
        Err(Error::Batch(_))
    ));
}

#[test]
fn d1_input_width_for_digits() {
    assert_eq!(DiscriminatorSpec::d1(128, 10).input_dim, 138);
}

#[test]
fn g_loss_examples_and_freeze() {
    let mut s = tiny_generator(1, 1, 3);
    let noise = uniform_noise(5, 4, &mut rng(1));

    let always_real = constant_d(2, 100.0);
    let mut tape = Tape::new(0);
    let l = step1_g_loss(
        &mut tape,
        &always_real,
        &mut s,
        &noise,
        &[0; 5],
        Mode::TRAIN,
    )
    .unwrap();
    assert_eq!(tape.value(l)[0], 0.0);

    let half = constant_d(2, 0.0);
    let mut tape = Tape::new(0);
    let l = step1_g_loss(&mut tape, &half, &mut s, &noise, &[0; 5], Mode::TRAIN).unwrap();
    assert!((tape.value(l)[0] - 0.25).abs() < 1e-7);
    let grads = tape.backward(l).unwrap();
    for p in half.params() {
        assert!(
            grads.get(p.id()).is_none(),
            "{} received a gradient",
            p.name()
        );
    }

    // perfect discriminator: generator loss exactly 1
    let never = constant_d(2, -200.0);
    let mut tape = Tape::new(0);
    let l = step1_g_loss(&mut tape, &never, &mut s, &noise, &[0; 5], Mode::TRAIN).unwrap();
    assert_eq!(tape.value(l)[0], 1.0);

    let mut tape = Tape::new(0);
    let bad = uniform_noise(5, 3, &mut rng(1));
    assert!(matches!(
        step1_g_loss(&mut tape, &half, &mut s, &bad, &[0; 5], Mode::TRAIN),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn generate_features_contract() {
    let s = tiny_generator(3, 5, 1);
    let empty = generate_features(&s, &[], &mut rng(0), Mode::SAMPLE).unwrap();
    assert_eq!(empty.shape(), &[0, 5]);

    let labels = [0, 1, 2, 1, 0, 2];
    let a = generate_features(&s, &labels, &mut rng(4), Mode::SAMPLE).unwrap();
    let b = generate_features(&s, &labels, &mut rng(4), Mode::SAMPLE).unwrap();
    assert_eq!(a.shape(), &[6, 5]);
    assert_eq!(a, b);
    assert!(a.data().iter().all(|v| v.abs() < 1.0));
    assert!(matches!(
        generate_features(&s, &[3], &mut rng(0), Mode::EVAL),
        Err(Error::Label { label: 3, .. })
    ));
}

#[test]
fn noise_is_uniform_in_unit_box() {
    let z = uniform_noise(1000, 10, &mut rng(0));
    assert!(z.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    let mean = z.data().iter().map(|&v| v as f64).sum::<f64>() / 10_000.0;
    // std of the mean is sqrt(1/3 / 1e4) ≈ 0.0058
    assert!(mean.abs() < 0.03, "{mean}");
}

#[test]
fn schedule_validation() {
    assert!(MinimaxSchedule::new(100, 10, 10).validate().is_ok());
    assert!(MinimaxSchedule::new(100, 10, 11).validate().is_err());
    assert!(MinimaxSchedule::new(0, 1, 1).validate().is_err());
}

fn synthetic(seed: u64) -> (LabeledDataset, LabeledDataset) {
    make_synthetic_domains(&SyntheticSpec::two_class(200, 1.2, 0.25, seed)).unwrap()
}

fn small_encoder(name: &str, seed: u64) -> Network {
    build_encoder(&EncoderSpec::mlp(2, vec![16], 4), name, &mut rng(seed)).unwrap()
}

fn small_head(seed: u64) -> Network {
    let h = ClassifierHead {
        feature_dim: 4,
        num_classes: 2,
    };
    build_classifier(&h, "C", &mut rng(seed)).unwrap()
}

fn weights(net: &Network) -> Vec<u32> {
    net.params()
        .iter()
        .flat_map(|p| p.value().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn step0_separates_gaussians() {
    let (src, _) = make_synthetic_domains(&SyntheticSpec::two_class(200, 0.0, 0.3, 1)).unwrap();
    let mut e = small_encoder("E_S", 1);
    let mut c = small_head(2);
    let cfg = Step0Config::new(500, 3e-3, 32, 5);
    let r = train_step0(&mut e, &mut c, &src, None, &cfg).unwrap();
    assert!(r.train_accuracy.unwrap() >= 0.99, "{:?}", r.train_accuracy);
    assert_eq!(r.losses.len(), 500);
}

#[test]
fn step0_with_zero_lr_changes_nothing() {
    let (src, _) = synthetic(1);
    let mut e = small_encoder("E_S", 1);
    let mut c = small_head(2);
    let (we, wc) = (weights(&e), weights(&c));
    train_step0(
        &mut e,
        &mut c,
        &src,
        None,
        &Step0Config::new(20, 0.0, 16, 5),
    )
    .unwrap();
    assert_eq!(weights(&e), we);
    assert_eq!(weights(&c), wc);
}

#[test]
fn step0_rejects_empty_source() {
    let (src, _) = synthetic(1);
    let empty = src.subset(&[]);
    let r = train_step0(
        &mut small_encoder("E_S", 1),
        &mut small_head(2),
        &empty,
        None,
        &Step0Config::new(1, 1e-3, 16, 0),
    );
    assert!(matches!(r, Err(Error::Data(_))));
}

#[test]
fn infer_matches_dominant_logit_and_checks_dims() {
    let e = small_encoder("E", 1);
    let mut c = small_head(2);
    set_dense(&mut c, &[(vec![0.0; 8], vec![-1.0, 3.0])]);
    let x = Tensor::new(vec![3, 2], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
    assert_eq!(infer(&e, &c, &x).unwrap(), vec![1, 1, 1]);
    let wide = build_classifier(
        &ClassifierHead {
            feature_dim: 5,
            num_classes: 2,
        },
        "C",
        &mut rng(0),
    )
    .unwrap();
    assert!(matches!(infer(&e, &wide, &x), Err(Error::Architecture(_))));
}

struct Trained {
    src: LabeledDataset,
    tgt: LabeledDataset,
    e_s: Network,
    head: Network,
}

fn trained(seed: u64) -> Trained {
    let (src, tgt) = synthetic(seed);
    let mut e_s = small_encoder("E_S", seed);
    let mut head = small_head(seed + 1);
    train_step0(
        &mut e_s,
        &mut head,
        &src,
        None,
        &Step0Config::new(300, 3e-3, 32, seed),
    )
    .unwrap();
    Trained {
        src,
        tgt,
        e_s,
        head,
    }
}

fn d2_small() -> Network {
    let spec = DiscriminatorSpec {
        input_dim: 4,
        hidden_widths: vec![16, 16],
        hidden_activation: HiddenActivation::LeakyRelu(0.2),
    };
    build_discriminator(&spec, "D2", &mut rng(9)).unwrap()
}

#[test]
fn every_game_starts_from_the_source_baseline_and_respects_freezes() {
    let t = trained(3);
    let schedule = MinimaxSchedule::new(20, 5, 2);
    let cfg = GameConfig::new(1e-3, 16, 7);

    let mut s = tiny_generator(2, 4, 5);
    let mut d1 = build_discriminator(&DiscriminatorSpec::d1(4, 2), "D1", &mut rng(6)).unwrap();
    let frozen_es = weights(&t.e_s);
    let frozen_c = weights(&t.head);
    train_step1(&mut s, &mut d1, &t.e_s, &t.src, &schedule, &cfg).unwrap();
    assert_eq!(weights(&t.e_s), frozen_es);
    let frozen_s = weights(&s);
    let frozen_s_stats = s.checkpoint_entries();

    let eval = Evaluator::new(Some(1)).unwrap();
    let baseline = eval.accuracy(&t.e_s, &t.head, &t.tgt).unwrap();
    for stage in [Stage::Step2, Stage::LsAdda, Stage::Di] {
        let mut e_i = small_encoder("E_I", 99);
        clone_weights(&t.e_s, &mut e_i).unwrap();
        assert_eq!(
            t.head
                .predict(&t.e_s.predict(t.tgt.images()).unwrap())
                .unwrap(),
            t.head
                .predict(&e_i.predict(t.tgt.images()).unwrap())
                .unwrap()
        );
        let mut d = d2_small();
        let r = match stage {
            Stage::Step2 => train_step2(
                &mut e_i, &mut d, &s, &t.head, &t.src, &t.tgt, &schedule, &cfg,
            ),
            Stage::LsAdda => train_ls_adda(
                &mut e_i, &mut d, &t.e_s, &t.head, &t.src, &t.tgt, &schedule, &cfg,
            ),
            _ => train_di(
                &mut e_i, &mut d, &t.e_s, &t.head, &t.src, &t.tgt, &schedule, &cfg,
            ),
        }
        .unwrap();
        assert_eq!(r.accuracy[0].iteration, 0);
        assert_eq!(r.accuracy[0].target_acc, Some(baseline));
        assert_eq!(r.losses.len(), 40);
        assert_eq!(r.final_target.unwrap().window, 2);
        let fraction = r.source_fraction.unwrap();
        if stage == Stage::LsAdda {
            assert_eq!(fraction, 0.0);
        } else {
            assert!((fraction - 0.5).abs() <= 0.02);
        }
        assert_eq!(weights(&t.e_s), frozen_es);
        assert_eq!(weights(&t.head), frozen_c);
        assert_eq!(weights(&s), frozen_s);
        assert_eq!(s.checkpoint_entries(), frozen_s_stats);
    }
}

#[test]
fn mismatched_clone_is_architecture_error() {
    let t = trained(4);
    let mut other = build_encoder(&EncoderSpec::mlp(2, vec![8], 4), "E_I", &mut rng(0)).unwrap();
    let r = train_di(
        &mut other,
        &mut d2_small(),
        &t.e_s,
        &t.head,
        &t.src,
        &t.tgt,
        &MinimaxSchedule::new(2, 1, 1),
        &GameConfig::new(1e-3, 8, 0),
    );
    assert!(matches!(r, Err(Error::Architecture(_))));
}

#[test]
fn games_are_deterministic() {
    let t = trained(5);
    let s = tiny_generator(2, 4, 5);
    let run = || {
        let mut e_i = t.e_s.clone();
        let mut d = d2_small();
        train_step2(
            &mut e_i,
            &mut d,
            &s,
            &t.head,
            &t.src,
            &t.tgt,
            &MinimaxSchedule::new(10, 5, 2),
            &GameConfig::new(1e-3, 16, 11),
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn nan_aborts_with_iteration() {
    let t = trained(6);
    let mut e_i = t.e_s.clone();
    let mut d = d2_small();
    d.params_mut()[0].tensor_mut().data_mut()[0] = f32::NAN;
    let r = train_di(
        &mut e_i,
        &mut d,
        &t.e_s,
        &t.head,
        &t.src,
        &t.tgt,
        &MinimaxSchedule::new(5, 1, 1),
        &GameConfig::new(1e-3, 8, 0),
    );
    assert!(
        matches!(r, Err(Error::Numeric { iteration: 1, .. })),
        "{r:?}"
    );
}

#[test]
fn metrics_rows_merge_losses_and_accuracy() {
    let mut r = RunReport::new(Stage::Step2, 0, 2);
    r.accuracy.push(AccuracyRecord {
        iteration: 0,
        source_acc: Some(1.0),
        target_acc: Some(0.5),
    });
    r.push_loss(1, Player::Discriminator, 0.5).unwrap();
    r.push_loss(1, Player::Discriminator, 0.25).unwrap();
    r.push_loss(1, Player::Generator, 1.0).unwrap();
    r.push_loss(2, Player::Generator, 2.0).unwrap();
    let rows = r.metrics_rows();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].target_acc, Some(0.5));
    assert_eq!(rows[0].d_loss, None);
    assert_eq!(rows[1].d_loss, Some(0.375));
    assert_eq!(rows[2].g_loss, Some(2.0));
    assert!(matches!(
        r.push_loss(3, Player::Generator, f32::NAN),
        Err(Error::Numeric { iteration: 3, .. })
    ));
}
