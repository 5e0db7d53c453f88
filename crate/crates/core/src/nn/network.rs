use std::path::Path;

use rand::Rng;

use super::spec::{
    Architecture, ClassifierHead, DiscriminatorSpec, EncoderSpec, GeneratorSpec, HiddenActivation,
};
use crate::autodiff::{
    adam_step, read_checkpoint, write_checkpoint, Activation, AdamConfig, BatchStats,
    CheckpointEntry, Gradients, Parameter, Phase, RunningStats, Tape, Tensor, Var,
};
use crate::error::{Error, Result};

/// How a network takes part in a forward pass.
///
/// `phase` switches dropout and batch-norm behaviour; `trainable` decides
/// whether parameters are recorded for gradients. Batch-norm running
/// statistics are only updated when both are on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    pub phase: Phase,
    pub trainable: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode {
        phase: Phase::Train,
        trainable: true,
    };
    /// Deterministic inference, no gradients.
    pub const EVAL: Mode = Mode {
        phase: Phase::Eval,
        trainable: false,
    };
    /// Stochastic layers active, parameters and statistics untouched.
    pub const SAMPLE: Mode = Mode {
        phase: Phase::Train,
        trainable: false,
    };
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv {
        name: String,
        kernel: Parameter,
        bias: Parameter,
    },
    MaxPool {
        window: usize,
    },
    Flatten,
    Linear {
        name: String,
        weight: Parameter,
        bias: Parameter,
    },
    BatchNorm {
        name: String,
        gamma: Parameter,
        beta: Parameter,
        stats: RunningStats,
    },
    Dropout {
        rate: f32,
    },
    Act(Activation),
}

impl Layer {
    fn conv(prefix: &str, name: &str, f: usize, c: usize, k: usize, rng: &mut impl Rng) -> Layer {
        Layer::Conv {
            name: name.into(),
            kernel: Parameter::glorot(
                format!("{prefix}/{name}/weight"),
                &[f, c, k, k],
                c * k * k,
                f * k * k,
                rng,
            ),
            bias: Parameter::constant(format!("{prefix}/{name}/bias"), &[f], 0.0),
        }
    }

    fn linear(prefix: &str, name: &str, i: usize, o: usize, rng: &mut impl Rng) -> Layer {
        Layer::Linear {
            name: name.into(),
            weight: Parameter::glorot(format!("{prefix}/{name}/weight"), &[i, o], i, o, rng),
            bias: Parameter::constant(format!("{prefix}/{name}/bias"), &[o], 0.0),
        }
    }

    fn batchnorm(prefix: &str, name: &str, d: usize) -> Layer {
        Layer::BatchNorm {
            name: name.into(),
            gamma: Parameter::constant(format!("{prefix}/{name}/gamma"), &[d], 1.0),
            beta: Parameter::constant(format!("{prefix}/{name}/beta"), &[d], 0.0),
            stats: RunningStats::new(d),
        }
    }

    /// Structural description used to compare architectures.
    pub fn signature(&self) -> String {
        match self {
            Layer::Conv { name, kernel, .. } => format!("{name}: conv {:?}", kernel.shape()),
            Layer::MaxPool { window } => format!("maxpool {window}"),
            Layer::Flatten => "flatten".into(),
            Layer::Linear { name, weight, .. } => format!("{name}: linear {:?}", weight.shape()),
            Layer::BatchNorm { name, gamma, .. } => {
                format!("{name}: batchnorm {:?}", gamma.shape())
            }
            Layer::Dropout { rate } => format!("dropout {rate}"),
            Layer::Act(a) => format!("{a:?}"),
        }
    }

    fn params(&self) -> Vec<&Parameter> {
        match self {
            Layer::Conv { kernel, bias, .. } => vec![kernel, bias],
            Layer::Linear { weight, bias, .. } => vec![weight, bias],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Layer::Conv { kernel, bias, .. } => vec![kernel, bias],
            Layer::Linear { weight, bias, .. } => vec![weight, bias],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => Vec::new(),
        }
    }
}

/// An ordered stack of layers forming one of the pipeline's networks.
#[derive(Clone, Debug)]
pub struct Network {
    name: String,
    arch: Architecture,
    layers: Vec<Layer>,
}

impl Network {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim()
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value().len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Parameter::zero_grad);
    }

    /// Adds gradients from a backward pass; returns how many parameters
    /// were reached.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<usize> {
        grads.accumulate_all(self.params_mut())
    }

    pub fn adam_step(&mut self, lr: f32, cfg: &AdamConfig) -> Result<()> {
        adam_step(self.params_mut(), lr, cfg)
    }

    /// Forward pass; folds batch statistics into the running statistics
    /// when `mode` is [`Mode::TRAIN`].
    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let (out, updates) = self.forward_ref(tape, x, mode)?;
        if mode.phase == Phase::Train && mode.trainable {
            for (layer, upd) in self.layers.iter_mut().zip(updates) {
                if let (Layer::BatchNorm { stats, .. }, Some(b)) = (layer, upd) {
                    stats.update(&b);
                }
            }
        }
        Ok(out)
    }

    /// Forward pass that never mutates the network; returns the batch
    /// statistics each batch-norm layer observed.
    pub fn forward_ref(
        &self,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<Option<BatchStats>>)> {
        let mut h = self.check_input(tape, x)?;
        let mut updates = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut upd = None;
            h = match layer {
                Layer::Conv { kernel, bias, .. } => {
                    let k = tape.param(kernel, mode.trainable);
                    let b = tape.param(bias, mode.trainable);
                    let y = tape.conv2d(h, k, 1, 0)?;
                    tape.add_bias(y, b)?
                }
                Layer::MaxPool { window } => tape.maxpool2d(h, *window, *window)?,
                Layer::Flatten => tape.flatten(h)?,
                Layer::Linear { weight, bias, .. } => {
                    let w = tape.param(weight, mode.trainable);
                    let b = tape.param(bias, mode.trainable);
                    let y = tape.matmul(h, w)?;
                    tape.add_bias(y, b)?
                }
                Layer::BatchNorm {
                    gamma, beta, stats, ..
                } => {
                    let g = tape.param(gamma, mode.trainable);
                    let b = tape.param(beta, mode.trainable);
                    let (y, batch) = tape.batchnorm(h, g, b, mode.phase, stats)?;
                    upd = batch;
                    y
                }
                Layer::Dropout { rate } => tape.dropout(h, *rate, mode.phase)?,
                Layer::Act(kind) => tape.activation(h, *kind)?,
            };
            updates.push(upd);
        }
        Ok((h, updates))
    }

    fn check_input(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let n = shape.first().copied().unwrap_or(0);
        let per_sample: usize = shape.iter().skip(1).product();
        match &self.arch {
            Architecture::Encoder(spec) if !spec.conv_blocks.is_empty() => {
                if per_sample != spec.input_len() {
                    return Err(Error::Architecture(format!(
                        "{} expects samples of shape {:?}, got {:?}",
                        self.name, spec.input_shape, shape
                    )));
                }
                if shape.len() != 4 {
                    let [c, h, w] = spec.input_shape;
                    return tape.reshape(x, vec![n, c, h, w]);
                }
                Ok(x)
            }
            arch => {
                let want = match arch {
                    Architecture::Encoder(s) => s.input_len(),
                    Architecture::Generator(s) => s.input_dim(),
                    Architecture::Discriminator(s) => s.input_dim,
                    Architecture::Classifier(h) => h.feature_dim,
                };
                if per_sample != want {
                    return Err(Error::Architecture(format!(
                        "{} expects {} inputs per sample, got shape {:?}",
                        self.name, want, shape
                    )));
                }
                if shape.len() != 2 {
                    return tape.reshape(x, vec![n, want]);
                }
                Ok(x)
            }
        }
    }

    /// Deterministic eval-mode forward on a private tape.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(0);
        let v = tape.constant(x);
        let (y, _) = self.forward_ref(&mut tape, v, Mode::EVAL)?;
        Ok(tape.tensor(y))
    }

    /// Named parameter values plus batch-norm running statistics.
    pub fn checkpoint_entries(&self) -> Vec<CheckpointEntry> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for p in layer.params() {
                out.push(CheckpointEntry {
                    name: p.name().to_string(),
                    shape: p.shape().to_vec(),
                    data: p.value().to_vec(),
                });
            }
            if let Layer::BatchNorm { name, stats, .. } = layer {
                let d = stats.mean.len();
                out.push(CheckpointEntry {
                    name: format!("{}/{name}/running_mean", self.name),
                    shape: vec![d],
                    data: stats.mean.clone(),
                });
                out.push(CheckpointEntry {
                    name: format!("{}/{name}/running_var", self.name),
                    shape: vec![d],
                    data: stats.var.clone(),
                });
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.checkpoint_entries())
    }

    /// Loads values whose names and shapes must match this network exactly.
    pub fn load_entries(&mut self, entries: &[CheckpointEntry]) -> Result<()> {
        let expected = self.checkpoint_entries();
        if expected.len() != entries.len() {
            return Err(Error::Architecture(format!(
                "checkpoint holds {} tensors, {} expects {}",
                entries.len(),
                self.name,
                expected.len()
            )));
        }
        for (want, got) in expected.iter().zip(entries) {
            if want.name != got.name || want.shape != got.shape {
                return Err(Error::Architecture(format!(
                    "checkpoint entry `{}` {:?} does not match `{}` {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        let mut it = entries.iter();
        let prefix = self.name.clone();
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                p.load_values(it.next().expect("length checked").data.clone());
            }
            if let Layer::BatchNorm { stats, .. } = layer {
                stats.mean = it.next().expect("length checked").data.clone();
                stats.var = it.next().expect("length checked").data.clone();
            }
        }
        debug_assert!(it.next().is_none(), "{prefix}: entries consumed");
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let entries = read_checkpoint(path)?;
        self.load_entries(&entries)
    }
}

/// Copies every parameter (and running statistic) of `src` into `dst`.
/// The two networks must have identical layer structure; names may differ.
pub fn clone_weights(src: &Network, dst: &mut Network) -> Result<()> {
    let (a, b) = (&src.layers, &dst.layers);
    for (i, (la, lb)) in a.iter().zip(b.iter()).enumerate() {
        if la.signature() != lb.signature() {
            return Err(Error::Architecture(format!(
                "layer {} differs: `{}` vs `{}`",
                i,
                la.signature(),
                lb.signature()
            )));
        }
    }
    if a.len() != b.len() {
        return Err(Error::Architecture(format!(
            "layer {} differs: {} has {} layers, {} has {}",
            a.len().min(b.len()),
            src.name,
            a.len(),
            dst.name,
            b.len()
        )));
    }
    for (la, lb) in src.layers.iter().zip(dst.layers.iter_mut()) {
        for (ps, pd) in la.params().into_iter().zip(lb.params_mut()) {
            pd.copy_from(ps);
        }
        if let (Layer::BatchNorm { stats: s, .. }, Layer::BatchNorm { stats: d, .. }) = (la, lb) {
            *d = s.clone();
        }
    }
    Ok(())
}

pub fn build_encoder(spec: &EncoderSpec, name: &str, rng: &mut impl Rng) -> Result<Network> {
    spec.validate()?;
    let mut layers = Vec::new();
    let mut channels = spec.input_shape[0];
    for (i, block) in spec.conv_blocks.iter().enumerate() {
        layers.push(Layer::conv(
            name,
            &format!("conv{}", i + 1),
            block.filters,
            channels,
            block.kernel,
            rng,
        ));
        layers.push(Layer::Act(Activation::Relu));
        if block.pool > 1 {
            layers.push(Layer::MaxPool { window: block.pool });
        }
        channels = block.filters;
    }
    let [c, h, w] = spec.conv_output_shape()?;
    let mut width = c * h * w;
    if !spec.conv_blocks.is_empty() {
        layers.push(Layer::Flatten);
    }
    for (i, &size) in spec.fc_sizes.iter().enumerate() {
        layers.push(Layer::linear(
            name,
            &format!("fc{}", i + 1),
            width,
            size,
            rng,
        ));
        layers.push(Layer::Act(Activation::Relu));
        if let Some(rate) = spec.fc_dropout_rate.filter(|&r| r > 0.0) {
            layers.push(Layer::Dropout { rate });
        }
        width = size;
    }
    layers.push(Layer::linear(name, "feature", width, spec.feature_dim, rng));
    layers.push(Layer::Act(Activation::Tanh));
    Ok(Network {
        name: name.into(),
        arch: Architecture::Encoder(spec.clone()),
        layers,
    })
}

pub fn build_generator(spec: &GeneratorSpec, name: &str, rng: &mut impl Rng) -> Result<Network> {
    spec.validate()?;
    let mut layers = Vec::new();
    let mut width = spec.input_dim();
    for (i, &size) in spec.block_widths.iter().enumerate() {
        layers.push(Layer::linear(
            name,
            &format!("fc{}", i + 1),
            width,
            size,
            rng,
        ));
        layers.push(Layer::batchnorm(name, &format!("bn{}", i + 1), size));
        layers.push(Layer::Act(Activation::Relu));
        layers.push(Layer::Dropout {
            rate: spec.dropout_rate,
        });
        width = size;
    }
    layers.push(Layer::linear(name, "out", width, spec.feature_dim, rng));
    layers.push(Layer::Act(Activation::Tanh));
    Ok(Network {
        name: name.into(),
        arch: Architecture::Generator(spec.clone()),
        layers,
    })
}

pub fn build_discriminator(
    spec: &DiscriminatorSpec,
    name: &str,
    rng: &mut impl Rng,
) -> Result<Network> {
    spec.validate()?;
    let act = match spec.hidden_activation {
        HiddenActivation::Relu => Activation::Relu,
        HiddenActivation::LeakyRelu(a) => Activation::LeakyRelu(a),
    };
    let mut layers = Vec::new();
    let mut width = spec.input_dim;
    for (i, &size) in spec.hidden_widths.iter().enumerate() {
        layers.push(Layer::linear(
            name,
            &format!("fc{}", i + 1),
            width,
            size,
            rng,
        ));
        layers.push(Layer::Act(act));
        width = size;
    }
    layers.push(Layer::linear(name, "out", width, 1, rng));
    layers.push(Layer::Act(Activation::Sigmoid));
    Ok(Network {
        name: name.into(),
        arch: Architecture::Discriminator(spec.clone()),
        layers,
    })
}

pub fn build_classifier(head: &ClassifierHead, name: &str, rng: &mut impl Rng) -> Result<Network> {
    head.validate()?;
    Ok(Network {
        name: name.into(),
        arch: Architecture::Classifier(*head),
        layers: vec![Layer::linear(
            name,
            "logits",
            head.feature_dim,
            head.num_classes,
            rng,
        )],
    })
}
