use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::adapt::{MinimaxSchedule, Step0Config};
use crate::autodiff::AdamConfig;
use crate::data::{Protocol, ProtocolSpec, Render, SyntheticSpec};
use crate::error::{Error, Result};
use crate::nn::{ClassifierHead, DiscriminatorSpec, EncoderSpec, GeneratorSpec, HiddenActivation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    SourceOnly,
    LsAdda,
    Di,
    Difa,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::SourceOnly,
        Variant::LsAdda,
        Variant::Di,
        Variant::Difa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::SourceOnly => "source_only",
            Variant::LsAdda => "ls_adda",
            Variant::Di => "di",
            Variant::Difa => "difa",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown variant `{s}` (expected source_only, ls_adda, di or difa)"
                ))
            })
    }
}

/// Which digit pair an IDX experiment runs. MNIST↔USPS pairs get the
/// smaller adaptation learning rate and fc dropout by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Synthetic,
    Digits,
    MnistUsps,
    UspsMnist,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Synthetic => "synthetic",
            Task::Digits => "digits",
            Task::MnistUsps => "mnist_usps",
            Task::UspsMnist => "usps_mnist",
        }
    }

    fn is_mnist_usps(self) -> bool {
        matches!(self, Task::MnistUsps | Task::UspsMnist)
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Task::Synthetic,
            Task::Digits,
            Task::MnistUsps,
            Task::UspsMnist,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
        .ok_or_else(|| Error::Validation(format!("unknown task `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Digits,
    SynDigits,
    Mlp,
}

impl EncoderKind {
    fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Digits => "digits",
            EncoderKind::SynDigits => "syn_digits",
            EncoderKind::Mlp => "mlp",
        }
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            EncoderKind::Digits,
            EncoderKind::SynDigits,
            EncoderKind::Mlp,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::Validation(format!("unknown encoder kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdxPaths {
    pub source_images: PathBuf,
    pub source_labels: PathBuf,
    pub target_images: PathBuf,
    pub target_labels: PathBuf,
    pub protocol: ProtocolSpec,
    /// Side length both domains are resized to; `None` keeps the source
    /// size and resizes the target to match.
    pub image_size: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataConfig {
    Synthetic(SyntheticSpec),
    Idx(IdxPaths),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub dropout: Option<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSettings {
    pub lr: f32,
    pub beta1: f32,
    pub iterations: usize,
    pub eval_every: usize,
    pub eval_window: usize,
    pub disc_steps: usize,
    pub gen_steps: usize,
}

impl StepSettings {
    pub fn adam(&self, base: &AdamConfig) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            ..*base
        }
    }

    pub fn schedule(&self) -> MinimaxSchedule {
        MinimaxSchedule {
            iterations: self.iterations,
            disc_steps_per_iter: self.disc_steps,
            gen_steps_per_iter: self.gen_steps,
            eval_every: self.eval_every,
            eval_window: self.eval_window,
        }
    }
}

/// Everything one experiment needs. Parsed from a flat `section.key =
/// value` file; absent keys take the defaults listed in [`KEYS`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub name: String,
    pub variant: Variant,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub task: Task,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub generator: GeneratorSpec,
    pub d1_hidden: Vec<usize>,
    pub d2_hidden: Vec<usize>,
    pub d2_leak: f32,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub step0: StepSettings,
    pub step1: StepSettings,
    pub step2: StepSettings,
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "experiment.name",
    "experiment.variant",
    "experiment.seed",
    "experiment.out",
    "data.task",
    "data.source_images",
    "data.source_labels",
    "data.target_images",
    "data.target_labels",
    "data.protocol",
    "data.protocol_seed",
    "data.image_size",
    "synthetic.n_per_class",
    "synthetic.classes",
    "synthetic.shift",
    "synthetic.rotation",
    "synthetic.noise_sd",
    "synthetic.render",
    "synthetic.seed",
    "encoder.kind",
    "encoder.hidden",
    "encoder.feature_dim",
    "encoder.dropout",
    "generator.noise_dim",
    "generator.widths",
    "generator.dropout",
    "d1.hidden",
    "d2.hidden",
    "d2.leak",
    "train.batch_size",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "step0.lr",
    "step0.beta1",
    "step0.iterations",
    "step0.eval_every",
    "step1.lr",
    "step1.beta1",
    "step1.iterations",
    "step2.lr",
    "step2.beta1",
    "step2.iterations",
    "step2.eval_every",
    "step2.eval_window",
    "step2.disc_steps",
    "step2.gen_steps",
];

struct Entries {
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `section.key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key `{key}`"),
                });
            }
            if let Some((_, first)) = map.insert(key.to_string(), (value.to_string(), line)) {
                return Err(Error::Config {
                    line,
                    message: format!("key `{key}` already set on line {first}"),
                });
            }
        }
        Ok(Entries { map })
    }

    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        debug_assert!(KEYS.contains(&key), "{key}");
        self.map.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| Error::Config {
                line,
                message: format!("cannot parse `{v}` for `{key}`"),
            }),
        }
    }

    fn list(&self, key: &str, default: Vec<usize>) -> Result<Vec<usize>> {
        match self.raw(key) {
            None => Ok(default),
            Some(("", _)) => Ok(Vec::new()),
            Some((v, line)) => v
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| Error::Config {
                        line,
                        message: format!("cannot parse `{v}` as a width list for `{key}`"),
                    })
                })
                .collect(),
        }
    }

    fn path(&self, key: &str, base: &Path) -> Result<Option<PathBuf>> {
        Ok(self.raw(key).map(|(v, _)| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        }))
    }
}

impl Entries {
    fn pair(&self, key: &str, default: [f32; 2]) -> Result<[f32; 2]> {
        let Some((v, line)) = self.raw(key) else {
            return Ok(default);
        };
        let parts: Vec<f32> = v
            .split(',')
            .map(|p| p.trim().parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config {
                line,
                message: format!("cannot parse `{v}` for `{key}`"),
            })?;
        match parts[..] {
            [x] => Ok([x, 0.0]),
            [x, y] => Ok([x, y]),
            _ => Err(Error::Config {
                line,
                message: format!("`{key}` takes `x` or `x,y`, got `{v}`"),
            }),
        }
    }

    fn opt_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None | Some(("none", _)) => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| Error::Config {
                line,
                message: format!("cannot parse `{v}` for `{key}`"),
            }),
        }
    }
}

fn parse_render(v: &str, size: Option<usize>) -> Result<Render> {
    match v {
        "vector" => Ok(Render::Vector),
        "image" => Ok(Render::Image {
            size: size.unwrap_or(8),
        }),
        other => Err(Error::Validation(format!("unknown render `{other}`"))),
    }
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl TrainConfig {
    /// Parses config text; relative paths resolve against `base`.
    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let e = Entries::parse(text)?;
        let task: Task = e.get("data.task", Task::Synthetic)?;
        let seed: u64 = e.get("experiment.seed", 0)?;
        let image_size = e.opt_value::<usize>("data.image_size")?;
        let data = if task == Task::Synthetic {
            let render = parse_render(
                &e.get::<String>("synthetic.render", "vector".into())?,
                image_size,
            )?;
            let mut spec = SyntheticSpec::two_class(500, 1.2, 0.25, e.get("synthetic.seed", seed)?);
            spec.n_per_class = e.get("synthetic.n_per_class", spec.n_per_class)?;
            spec.num_classes = e.get("synthetic.classes", spec.num_classes)?;
            spec.shift = e.pair("synthetic.shift", spec.shift)?;
            spec.rotation = e.get("synthetic.rotation", spec.rotation)?;
            spec.noise_sd = e.get("synthetic.noise_sd", spec.noise_sd)?;
            spec.render = render;
            DataConfig::Synthetic(spec)
        } else {
            let need = |key: &str| -> Result<PathBuf> {
                e.path(key, base)?.ok_or_else(|| {
                    Error::Validation(format!("task {} needs `{key}`", task.as_str()))
                })
            };
            let protocol: Protocol = e.get("data.protocol", Protocol::P1)?;
            let pseed = e.get("data.protocol_seed", seed)?;
            let protocol = match protocol {
                Protocol::P1 => ProtocolSpec::p1(pseed),
                Protocol::P2 => ProtocolSpec::p2(pseed),
                Protocol::Full => ProtocolSpec::full(pseed),
            };
            DataConfig::Idx(IdxPaths {
                source_images: need("data.source_images")?,
                source_labels: need("data.source_labels")?,
                target_images: need("data.target_images")?,
                target_labels: need("data.target_labels")?,
                protocol,
                image_size,
            })
        };
        let default_kind = match &data {
            DataConfig::Synthetic(s) if s.render == Render::Vector => EncoderKind::Mlp,
            _ => EncoderKind::Digits,
        };
        let default_dropout = task.is_mnist_usps().then_some(0.5);
        let encoder = EncoderConfig {
            kind: e.get("encoder.kind", default_kind)?,
            hidden: e.list("encoder.hidden", vec![32])?,
            feature_dim: e.get("encoder.feature_dim", 128)?,
            dropout: match e.raw("encoder.dropout") {
                None => default_dropout,
                Some(_) => e.opt_value("encoder.dropout")?,
            },
        };
        let mut generator = GeneratorSpec::new(1, encoder.feature_dim);
        generator.noise_dim = e.get("generator.noise_dim", generator.noise_dim)?;
        let widths = e.list("generator.widths", generator.block_widths.to_vec())?;
        generator.block_widths = widths.as_slice().try_into().map_err(|_| {
            Error::Validation(format!(
                "generator.widths needs two entries, got {widths:?}"
            ))
        })?;
        generator.dropout_rate = e.get("generator.dropout", generator.dropout_rate)?;

        let adam = AdamConfig {
            beta1: e.get("train.beta1", AdamConfig::default().beta1)?,
            beta2: e.get("train.beta2", AdamConfig::default().beta2)?,
            eps: e.get("train.eps", AdamConfig::default().eps)?,
        };
        let step = |n: u8, lr: f32, iterations: usize, eval_every: usize| -> Result<StepSettings> {
            let k = |s: &str| format!("step{n}.{s}");
            let has = |s: &str| KEYS.contains(&k(s).as_str());
            let get_or = |s: &str, d: usize| -> Result<usize> {
                if has(s) {
                    e.get(&k(s), d)
                } else {
                    Ok(d)
                }
            };
            Ok(StepSettings {
                lr: e.get(&k("lr"), lr)?,
                beta1: e.get(&k("beta1"), adam.beta1)?,
                iterations: e.get(&k("iterations"), iterations)?,
                eval_every: get_or("eval_every", eval_every)?,
                eval_window: get_or("eval_window", 10)?,
                disc_steps: get_or("disc_steps", 1)?,
                gen_steps: get_or("gen_steps", 1)?,
            })
        };
        let lr2 = if task.is_mnist_usps() { 3e-6 } else { 3e-5 };
        let cfg = TrainConfig {
            name: e.get("experiment.name", "experiment".to_string())?,
            variant: e.get("experiment.variant", Variant::Difa)?,
            seed,
            out_dir: e
                .path("experiment.out", base)?
                .unwrap_or_else(|| base.join("runs")),
            task,
            data,
            encoder,
            generator,
            d1_hidden: e.list("d1.hidden", vec![512])?,
            d2_hidden: e.list("d2.hidden", vec![512, 512])?,
            d2_leak: e.get("d2.leak", 0.2)?,
            batch_size: e.get("train.batch_size", 64)?,
            adam,
            step0: step(0, 3e-4, 2000, 0)?,
            step1: step(1, 1e-4, 5000, 1)?,
            step2: step(2, lr2, 5000, 100)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Validation(format!(
                "train.batch_size {} < 2: batch normalization needs at least two rows",
                self.batch_size
            )));
        }
        for (name, s) in [
            ("step0", &self.step0),
            ("step1", &self.step1),
            ("step2", &self.step2),
        ] {
            if !(s.lr.is_finite() && s.lr > 0.0) {
                return Err(Error::Validation(format!(
                    "{name}.lr must be positive, got {}",
                    s.lr
                )));
            }
            if s.iterations == 0 {
                return Err(Error::Validation(format!("{name}.iterations must be ≥ 1")));
            }
            if !(0.0..1.0).contains(&s.beta1) {
                return Err(Error::Validation(format!(
                    "{name}.beta1 {} outside [0, 1)",
                    s.beta1
                )));
            }
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Validation(format!(
                "bad experiment name `{}`",
                self.name
            )));
        }
        self.step2.schedule().validate()?;
        self.encoder_spec([1, 1, 1]).map(|_| ())
    }

    /// Encoder for samples shaped `input_shape`.
    pub fn encoder_spec(&self, input_shape: [usize; 3]) -> Result<EncoderSpec> {
        let e = &self.encoder;
        let mut spec = match e.kind {
            EncoderKind::Digits => EncoderSpec::digits(input_shape, e.dropout),
            EncoderKind::SynDigits => EncoderSpec::syn_digits(input_shape),
            EncoderKind::Mlp => EncoderSpec::mlp(
                input_shape.iter().product(),
                e.hidden.clone(),
                e.feature_dim,
            ),
        };
        spec.feature_dim = e.feature_dim;
        if e.kind == EncoderKind::Mlp {
            spec.fc_dropout_rate = e.dropout;
        }
        Ok(spec)
    }

    pub fn generator_spec(&self, classes: usize) -> GeneratorSpec {
        GeneratorSpec {
            num_classes: classes,
            feature_dim: self.encoder.feature_dim,
            ..self.generator.clone()
        }
    }

    pub fn d1_spec(&self, classes: usize) -> DiscriminatorSpec {
        DiscriminatorSpec {
            input_dim: self.encoder.feature_dim + classes,
            hidden_widths: self.d1_hidden.clone(),
            hidden_activation: HiddenActivation::Relu,
        }
    }

    pub fn d2_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec {
            input_dim: self.encoder.feature_dim,
            hidden_widths: self.d2_hidden.clone(),
            hidden_activation: HiddenActivation::LeakyRelu(self.d2_leak),
        }
    }

    pub fn head_spec(&self, classes: usize) -> ClassifierHead {
        ClassifierHead {
            feature_dim: self.encoder.feature_dim,
            num_classes: classes,
        }
    }

    pub fn step0_config(&self, eval_threads: Option<usize>) -> Step0Config {
        Step0Config {
            iterations: self.step0.iterations,
            batch_size: self.batch_size,
            lr: self.step0.lr,
            adam: self.step0.adam(&self.adam),
            eval_every: self.step0.eval_every,
            seed: self.seed,
            eval_threads,
        }
    }

    /// Short label for the data protocol; `report` only compares runs that
    /// share it.
    pub fn protocol_label(&self) -> String {
        match &self.data {
            DataConfig::Synthetic(s) => format!(
                "synthetic(n={},k={},shift={},{},rot={},sd={})",
                s.n_per_class, s.num_classes, s.shift[0], s.shift[1], s.rotation, s.noise_sd
            ),
            DataConfig::Idx(p) => format!(
                "{}:{}(src={},tgt={})",
                self.task.as_str(),
                p.protocol.protocol,
                p.protocol.source_count,
                p.protocol.target_count
            ),
        }
    }

    /// Fully resolved `key = value` lines in key order.
    pub fn canonical_entries(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &'static str, v: String| {
            debug_assert!(KEYS.contains(&k), "{k}");
            m.insert(k, v);
        };
        put("experiment.name", self.name.clone());
        put("experiment.variant", self.variant.to_string());
        put("experiment.seed", self.seed.to_string());
        put("experiment.out", self.out_dir.display().to_string());
        put("data.task", self.task.as_str().into());
        match &self.data {
            DataConfig::Synthetic(s) => {
                put("synthetic.n_per_class", s.n_per_class.to_string());
                put("synthetic.classes", s.num_classes.to_string());
                put("synthetic.shift", format!("{},{}", s.shift[0], s.shift[1]));
                put("synthetic.rotation", s.rotation.to_string());
                put("synthetic.noise_sd", s.noise_sd.to_string());
                put("synthetic.seed", s.seed.to_string());
                match s.render {
                    Render::Vector => put("synthetic.render", "vector".into()),
                    Render::Image { size } => {
                        put("synthetic.render", "image".into());
                        put("data.image_size", size.to_string());
                    }
                }
            }
            DataConfig::Idx(p) => {
                put("data.source_images", p.source_images.display().to_string());
                put("data.source_labels", p.source_labels.display().to_string());
                put("data.target_images", p.target_images.display().to_string());
                put("data.target_labels", p.target_labels.display().to_string());
                put("data.protocol", p.protocol.protocol.to_string());
                put("data.protocol_seed", p.protocol.seed.to_string());
                put(
                    "data.image_size",
                    p.image_size.map_or("none".into(), |s| s.to_string()),
                );
            }
        }
        put("encoder.kind", self.encoder.kind.as_str().into());
        put("encoder.hidden", join(&self.encoder.hidden));
        put("encoder.feature_dim", self.encoder.feature_dim.to_string());
        put(
            "encoder.dropout",
            self.encoder
                .dropout
                .map_or("none".into(), |d| d.to_string()),
        );
        put("generator.noise_dim", self.generator.noise_dim.to_string());
        put("generator.widths", join(&self.generator.block_widths));
        put("generator.dropout", self.generator.dropout_rate.to_string());
        put("d1.hidden", join(&self.d1_hidden));
        put("d2.hidden", join(&self.d2_hidden));
        put("d2.leak", self.d2_leak.to_string());
        put("train.batch_size", self.batch_size.to_string());
        put("train.beta1", self.adam.beta1.to_string());
        put("train.beta2", self.adam.beta2.to_string());
        put("train.eps", self.adam.eps.to_string());
        for (s, keys) in [
            (
                &self.step0,
                [
                    "step0.lr",
                    "step0.beta1",
                    "step0.iterations",
                    "step0.eval_every",
                    "",
                    "",
                    "",
                ],
            ),
            (
                &self.step1,
                [
                    "step1.lr",
                    "step1.beta1",
                    "step1.iterations",
                    "",
                    "",
                    "",
                    "",
                ],
            ),
            (
                &self.step2,
                [
                    "step2.lr",
                    "step2.beta1",
                    "step2.iterations",
                    "step2.eval_every",
                    "step2.eval_window",
                    "step2.disc_steps",
                    "step2.gen_steps",
                ],
            ),
        ] {
            let values = [
                s.lr.to_string(),
                s.beta1.to_string(),
                s.iterations.to_string(),
                s.eval_every.to_string(),
                s.eval_window.to_string(),
                s.disc_steps.to_string(),
                s.gen_steps.to_string(),
            ];
            for (k, v) in keys.into_iter().zip(values) {
                if !k.is_empty() {
                    put(k, v);
                }
            }
        }
        m
    }

    pub fn to_text(&self) -> String {
        self.canonical_entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 over the resolved entries, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.canonical_entries() {
            if k != "experiment.out" {
                h.update(format!("{k} = {v}\n").as_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    TrainConfig::from_text(&text, base)
}
