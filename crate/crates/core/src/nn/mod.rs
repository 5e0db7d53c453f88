//! Network specifications, builders, and weight transfer.

mod network;
mod spec;

pub use network::{
    build_classifier, build_discriminator, build_encoder, build_generator, clone_weights, Layer,
    Mode, Network,
};
pub use spec::{
    Architecture, ClassifierHead, ConvBlock, DiscriminatorSpec, EncoderSpec, GeneratorSpec,
    HiddenActivation,
};

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{AdamConfig, Tape, Tensor};
    use crate::error::Error;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn ramp(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0)
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn digit_encoder_output_shape_and_range() {
        let spec = EncoderSpec::digits([1, 28, 28], Some(0.5));
        let net = build_encoder(&spec, "E_S", &mut rng(1)).unwrap();
        let y = net.predict(&ramp(&[3, 1, 28, 28])).unwrap();
        assert_eq!(y.shape(), &[3, 128]);
        assert!(y.data().iter().all(|v| v.abs() <= 1.0));
        // flat rows are reshaped to images
        let y2 = net.predict(&ramp(&[3, 784])).unwrap();
        assert_eq!(y.data(), y2.data());
    }

    #[test]
    fn wrong_input_size_is_architecture_error() {
        let spec = EncoderSpec::digits([1, 28, 28], None);
        let net = build_encoder(&spec, "E_S", &mut rng(1)).unwrap();
        assert!(matches!(
            net.predict(&ramp(&[2, 1, 32, 32])),
            Err(Error::Architecture(_))
        ));
    }

    #[test]
    fn parameter_names_follow_network_and_layer() {
        let spec = EncoderSpec::digits([1, 28, 28], None);
        let net = build_encoder(&spec, "E_S", &mut rng(1)).unwrap();
        let names: Vec<_> = net.params().iter().map(|p| p.name().to_string()).collect();
        assert_eq!(names[0], "E_S/conv1/weight");
        assert_eq!(names.last().unwrap(), "E_S/feature/bias");
        // 5·5·32+32 + 5·5·32·64+64 + 1024·1024+1024 + 1024·128+128
        assert_eq!(net.num_parameters(), 832 + 51_264 + 1_049_600 + 131_200);
    }

    #[test]
    fn generator_and_discriminator_shapes() {
        let g = build_generator(&GeneratorSpec::new(10, 128), "S", &mut rng(2)).unwrap();
        let y = g.predict(&ramp(&[4, 110])).unwrap();
        assert_eq!(y.shape(), &[4, 128]);
        assert!(y.data().iter().all(|v| v.abs() <= 1.0));

        let d = build_discriminator(&DiscriminatorSpec::d2(128), "D2", &mut rng(3)).unwrap();
        let p = d.predict(&y).unwrap();
        assert_eq!(p.shape(), &[4, 1]);
        assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));

        let c = build_classifier(
            &ClassifierHead {
                feature_dim: 128,
                num_classes: 10,
            },
            "C",
            &mut rng(4),
        )
        .unwrap();
        assert_eq!(c.predict(&y).unwrap().shape(), &[4, 10]);
    }

    #[test]
    fn same_seed_same_weights() {
        let spec = GeneratorSpec::new(10, 32);
        let a = build_generator(&spec, "S", &mut rng(9)).unwrap();
        let b = build_generator(&spec, "S", &mut rng(9)).unwrap();
        let c = build_generator(&spec, "S", &mut rng(10)).unwrap();
        let flat = |n: &Network| -> Vec<u32> {
            n.params()
                .iter()
                .flat_map(|p| p.value().iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn cloned_weights_are_independent() {
        let spec = EncoderSpec::mlp(4, vec![8], 3);
        let src = build_encoder(&spec, "E_S", &mut rng(1)).unwrap();
        let mut dst = build_encoder(&spec, "E_I", &mut rng(2)).unwrap();
        clone_weights(&src, &mut dst).unwrap();
        let x = ramp(&[5, 4]);
        assert_eq!(src.predict(&x).unwrap(), dst.predict(&x).unwrap());

        let mut tape = Tape::new(0);
        let v = tape.constant(&x);
        let y = dst.forward(&mut tape, v, Mode::TRAIN).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        dst.zero_grad();
        assert_eq!(dst.accumulate(&grads).unwrap(), 4);
        dst.adam_step(1e-2, &AdamConfig::default()).unwrap();

        let fresh = build_encoder(&spec, "E_S", &mut rng(1)).unwrap();
        assert_eq!(src.predict(&x).unwrap(), fresh.predict(&x).unwrap());
        assert_ne!(src.predict(&x).unwrap(), dst.predict(&x).unwrap());
    }

    #[test]
    fn clone_mismatch_names_first_differing_layer() {
        let a = build_encoder(&EncoderSpec::mlp(4, vec![8], 3), "A", &mut rng(1)).unwrap();
        let mut b = build_encoder(&EncoderSpec::mlp(4, vec![9], 3), "B", &mut rng(1)).unwrap();
        match clone_weights(&a, &mut b) {
            Err(Error::Architecture(msg)) => assert!(msg.contains("layer 0"), "{msg}"),
            other => panic!("expected architecture error, got {other:?}"),
        }
    }

    #[test]
    fn frozen_network_receives_no_gradient() {
        let spec = EncoderSpec::mlp(4, vec![8], 3);
        let net = build_encoder(&spec, "E_S", &mut rng(1)).unwrap();
        let mut head = build_classifier(
            &ClassifierHead {
                feature_dim: 3,
                num_classes: 2,
            },
            "C",
            &mut rng(2),
        )
        .unwrap();
        let mut tape = Tape::new(0);
        let x = tape.constant(&ramp(&[6, 4]));
        let (f, _) = net.forward_ref(&mut tape, x, Mode::EVAL).unwrap();
        let logits = head.forward(&mut tape, f, Mode::TRAIN).unwrap();
        let loss = tape
            .softmax_cross_entropy(logits, &[0, 1, 0, 1, 0, 1])
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.len(), 2);
        for p in net.params() {
            assert!(grads.get(p.id()).is_none());
        }
        head.zero_grad();
        assert_eq!(head.accumulate(&grads).unwrap(), 2);
    }

    #[test]
    fn batchnorm_stats_update_only_in_train_mode() {
        let mut g = build_generator(&GeneratorSpec::new(2, 4), "S", &mut rng(5)).unwrap();
        let before = g.checkpoint_entries();
        let x = ramp(&[8, 102]);
        for mode in [Mode::EVAL, Mode::SAMPLE] {
            let mut tape = Tape::new(1);
            let v = tape.constant(&x);
            g.forward(&mut tape, v, mode).unwrap();
            assert_eq!(g.checkpoint_entries(), before);
        }
        let mut tape = Tape::new(1);
        let v = tape.constant(&x);
        g.forward(&mut tape, v, Mode::TRAIN).unwrap();
        assert_ne!(g.checkpoint_entries(), before);
    }

    #[test]
    fn checkpoint_round_trip_restores_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("S.fav");
        let mut g = build_generator(&GeneratorSpec::new(3, 5), "S", &mut rng(5)).unwrap();
        let mut tape = Tape::new(1);
        let v = tape.constant(&ramp(&[8, 103]));
        g.forward(&mut tape, v, Mode::TRAIN).unwrap();
        g.save(&path).unwrap();

        let mut h = build_generator(&GeneratorSpec::new(3, 5), "S", &mut rng(6)).unwrap();
        h.load(&path).unwrap();
        let x = ramp(&[4, 103]);
        assert_eq!(g.predict(&x).unwrap(), h.predict(&x).unwrap());

        let mut other = build_generator(&GeneratorSpec::new(3, 6), "S", &mut rng(6)).unwrap();
        assert!(matches!(other.load(&path), Err(Error::Architecture(_))));
    }
}
