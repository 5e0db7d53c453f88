use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One convolution block: `filters` kernels of size `kernel×kernel`
/// (stride 1, no padding), ReLU, then max pooling with window and stride
/// `pool` (`pool <= 1` means no pooling).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
}

/// Feature extractor `E_S` / `E_I`: conv blocks, hidden fully connected
/// ReLU layers (with optional dropout), and a tanh feature layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    /// `[channels, height, width]`; plain vectors use `[dim, 1, 1]`.
    pub input_shape: [usize; 3],
    pub conv_blocks: Vec<ConvBlock>,
    pub fc_sizes: Vec<usize>,
    pub feature_dim: usize,
    pub fc_dropout_rate: Option<f32>,
}

impl EncoderSpec {
    /// conv 5×5×32 → pool 2 → conv 5×5×64 → pool 2 → fc 1024 → fc 128.
    pub fn digits(input_shape: [usize; 3], fc_dropout_rate: Option<f32>) -> Self {
        EncoderSpec {
            input_shape,
            conv_blocks: vec![
                ConvBlock {
                    filters: 32,
                    kernel: 5,
                    pool: 2,
                },
                ConvBlock {
                    filters: 64,
                    kernel: 5,
                    pool: 2,
                },
            ],
            fc_sizes: vec![1024],
            feature_dim: 128,
            fc_dropout_rate,
        }
    }

    /// The digit layout with a third, unpooled 3×3×128 convolution and a
    /// 256-wide feature layer.
    pub fn syn_digits(input_shape: [usize; 3]) -> Self {
        let mut spec = Self::digits(input_shape, None);
        spec.conv_blocks.push(ConvBlock {
            filters: 128,
            kernel: 3,
            pool: 1,
        });
        spec.feature_dim = 256;
        spec
    }

    /// Fully connected encoder over flat vectors.
    pub fn mlp(input_dim: usize, hidden: Vec<usize>, feature_dim: usize) -> Self {
        EncoderSpec {
            input_shape: [input_dim, 1, 1],
            conv_blocks: Vec::new(),
            fc_sizes: hidden,
            feature_dim,
            fc_dropout_rate: None,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Shape after the convolution stack, or a spec error if a kernel or
    /// pooling window no longer fits.
    pub fn conv_output_shape(&self) -> Result<[usize; 3]> {
        let [mut c, mut h, mut w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Spec(format!(
                "input shape {:?} has a zero dimension",
                self.input_shape
            )));
        }
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.filters == 0 || b.kernel == 0 {
                return Err(Error::Spec(format!("conv block {} has zero size", i + 1)));
            }
            if b.kernel > h || b.kernel > w {
                return Err(Error::Spec(format!(
                    "conv block {}: {}x{} kernel does not fit {}x{} input",
                    i + 1,
                    b.kernel,
                    b.kernel,
                    h,
                    w
                )));
            }
            h = h - b.kernel + 1;
            w = w - b.kernel + 1;
            c = b.filters;
            if b.pool > 1 {
                if b.pool > h || b.pool > w {
                    return Err(Error::Spec(format!(
                        "conv block {}: pooling {} collapses {}x{} map",
                        i + 1,
                        b.pool,
                        h,
                        w
                    )));
                }
                h = (h - b.pool) / b.pool + 1;
                w = (w - b.pool) / b.pool + 1;
            }
        }
        Ok([c, h, w])
    }

    pub fn validate(&self) -> Result<()> {
        self.conv_output_shape()?;
        if self.feature_dim == 0 || self.fc_sizes.contains(&0) {
            return Err(Error::Spec("encoder widths must be positive".into()));
        }
        if let Some(r) = self.fc_dropout_rate {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Spec(format!("dropout rate {r} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Conditional feature generator `S`: two fc + batch-norm + ReLU + dropout
/// blocks over `noise ‖ one-hot`, then a tanh fc layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub noise_dim: usize,
    pub num_classes: usize,
    pub block_widths: [usize; 2],
    pub dropout_rate: f32,
    pub feature_dim: usize,
}

impl GeneratorSpec {
    pub fn new(num_classes: usize, feature_dim: usize) -> Self {
        GeneratorSpec {
            noise_dim: 100,
            num_classes,
            block_widths: [1024, 1024],
            dropout_rate: 0.5,
            feature_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.noise_dim + self.num_classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_dim == 0
            || self.num_classes == 0
            || self.feature_dim == 0
            || self.block_widths.contains(&0)
        {
            return Err(Error::Spec(format!(
                "generator widths must be positive: {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Spec(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    LeakyRelu(f32),
}

/// Discriminator `D1` / `D2`: 1–3 hidden layers and one sigmoid unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub hidden_activation: HiddenActivation,
}

impl DiscriminatorSpec {
    /// Label-conditioned `D1`: one 512-wide ReLU layer over `feature ‖ one-hot`.
    pub fn d1(feature_dim: usize, num_classes: usize) -> Self {
        DiscriminatorSpec {
            input_dim: feature_dim + num_classes,
            hidden_widths: vec![512],
            hidden_activation: HiddenActivation::Relu,
        }
    }

    /// `D2`: two 512-wide leaky-ReLU layers.
    pub fn d2(feature_dim: usize) -> Self {
        DiscriminatorSpec {
            input_dim: feature_dim,
            hidden_widths: vec![512, 512],
            hidden_activation: HiddenActivation::LeakyRelu(0.2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() || self.hidden_widths.len() > 3 {
            return Err(Error::Spec(format!(
                "discriminator needs 1 to 3 hidden layers, got {}",
                self.hidden_widths.len()
            )));
        }
        if self.input_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Spec("discriminator widths must be positive".into()));
        }
        if let HiddenActivation::LeakyRelu(a) = self.hidden_activation {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Spec(format!("leaky slope {a} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Classifier `C`: a single affine layer; softmax is applied by the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl ClassifierHead {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.num_classes < 2 {
            return Err(Error::Spec(format!("invalid classifier head {self:?}")));
        }
        Ok(())
    }
}

/// Which builder produced a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Architecture {
    Encoder(EncoderSpec),
    Generator(GeneratorSpec),
    Discriminator(DiscriminatorSpec),
    Classifier(ClassifierHead),
}

impl Architecture {
    pub fn output_dim(&self) -> usize {
        match self {
            Architecture::Encoder(s) => s.feature_dim,
            Architecture::Generator(s) => s.feature_dim,
            Architecture::Discriminator(_) => 1,
            Architecture::Classifier(h) => h.num_classes,
        }
    }
}
