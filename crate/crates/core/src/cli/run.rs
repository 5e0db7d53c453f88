use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DataConfig, TrainConfig, Variant};
use crate::adapt::{
    train_di, train_ls_adda, train_step0, train_step1, train_step2, Evaluator, GameConfig,
    RunReport, Stage,
};
use crate::analysis::{generated_feature_accuracy, Summary};
use crate::data::{
    apply_protocol, load_idx, make_synthetic_domains, resize_bilinear, to_grayscale, LabeledDataset,
};
use crate::error::{Error, Result};
use crate::nn::{
    build_classifier, build_discriminator, build_encoder, build_generator, clone_weights, Network,
};

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.json";
pub const METRICS_HEADER: &str = "phase,iteration,d_loss,g_loss,source_acc,target_acc";

/// Generated features scored by `C` after Step 1.
const GENERATED_EVAL_SAMPLES: usize = 10_000;

#[derive(Clone, Debug)]
pub struct Datasets {
    pub source: LabeledDataset,
    pub target: LabeledDataset,
}

impl Datasets {
    pub fn num_classes(&self) -> usize {
        self.source.num_classes()
    }
}

fn matching_channels(ds: LabeledDataset, channels: usize) -> Result<LabeledDataset> {
    match (ds.sample_shape()[0], channels) {
        (c, want) if c == want => Ok(ds),
        (3, 1) => to_grayscale(&ds),
        (c, want) => Err(Error::Data(format!(
            "{} has {c} channels, cannot convert to {want}",
            ds.name
        ))),
    }
}

/// Source and target training sets as the config describes them.
pub fn load_datasets(cfg: &TrainConfig) -> Result<Datasets> {
    let (source, target) = match &cfg.data {
        DataConfig::Synthetic(spec) => make_synthetic_domains(spec)?,
        DataConfig::Idx(p) => {
            for path in [
                &p.source_images,
                &p.source_labels,
                &p.target_images,
                &p.target_labels,
            ] {
                if !path.is_file() {
                    return Err(Error::Data(format!("missing data file {}", path.display())));
                }
            }
            let src = load_idx(&p.source_images, &p.source_labels)?;
            let tgt = load_idx(&p.target_images, &p.target_labels)?;
            let tgt = matching_channels(tgt, src.sample_shape()[0])?;
            let [_, h, w] = src.sample_shape();
            let (h, w) = p.image_size.map_or((h, w), |s| (s, s));
            let src = resize_bilinear(&src, h, w)?;
            let tgt = resize_bilinear(&tgt, h, w)?;
            apply_protocol(&src, &tgt, &p.protocol)?
        }
    };
    if source.num_classes() != target.num_classes() {
        return Err(Error::Consistency(format!(
            "source has {} classes, target {}",
            source.num_classes(),
            target.num_classes()
        )));
    }
    Ok(Datasets { source, target })
}

/// All networks of a run. Which ones exist depends on the variant.
pub struct Networks {
    pub e_s: Network,
    pub c: Network,
    pub s: Option<Network>,
    pub d1: Option<Network>,
    /// The encoder the adversarial game trains (`E_I`, or `E_T` for
    /// LS-ADDA).
    pub adapted: Option<Network>,
    pub d2: Option<Network>,
}

/// Checkpoint file for each network name.
pub fn checkpoint_file(net: &str) -> String {
    format!("{}.fav", net.to_lowercase())
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Networks {
    /// Freshly initialised networks; each draws from its own seeded stream.
    pub fn build(cfg: &TrainConfig, data: &Datasets) -> Result<Self> {
        let k = data.num_classes();
        let enc = cfg.encoder_spec(data.source.sample_shape())?;
        let e_s = build_encoder(&enc, "E_S", &mut stream_rng(cfg.seed, 0))?;
        let c = build_classifier(&cfg.head_spec(k), "C", &mut stream_rng(cfg.seed, 1))?;
        let (s, d1) = if cfg.variant == Variant::Difa {
            (
                Some(build_generator(
                    &cfg.generator_spec(k),
                    "S",
                    &mut stream_rng(cfg.seed, 2),
                )?),
                Some(build_discriminator(
                    &cfg.d1_spec(k),
                    "D1",
                    &mut stream_rng(cfg.seed, 3),
                )?),
            )
        } else {
            (None, None)
        };
        let (adapted, d2) = match cfg.variant {
            Variant::SourceOnly => (None, None),
            v => {
                let name = if v == Variant::LsAdda { "E_T" } else { "E_I" };
                (
                    Some(build_encoder(&enc, name, &mut stream_rng(cfg.seed, 4))?),
                    Some(build_discriminator(
                        &cfg.d2_spec(),
                        "D2",
                        &mut stream_rng(cfg.seed, 5),
                    )?),
                )
            }
        };
        Ok(Networks {
            e_s,
            c,
            s,
            d1,
            adapted,
            d2,
        })
    }

    /// The encoder whose target accuracy the run reports.
    pub fn final_encoder(&self) -> &Network {
        self.adapted.as_ref().unwrap_or(&self.e_s)
    }

    fn all(&self) -> Vec<&Network> {
        [Some(&self.e_s), Some(&self.c)]
            .into_iter()
            .chain([&self.s, &self.d1, &self.adapted, &self.d2].map(Option::as_ref))
            .flatten()
            .collect()
    }

    /// Loads every network from `dir`; a missing file is a dependency
    /// error, a mismatched one an architecture error.
    pub fn load(&mut self, dir: &Path) -> Result<()> {
        for net in [
            Some(&mut self.e_s),
            Some(&mut self.c),
            self.s.as_mut(),
            self.d1.as_mut(),
            self.adapted.as_mut(),
            self.d2.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            load_checkpoint(net, dir)?;
        }
        Ok(())
    }
}

fn load_checkpoint(net: &mut Network, dir: &Path) -> Result<()> {
    let path = dir.join(checkpoint_file(net.name()));
    if !path.exists() {
        return Err(Error::Dependency(format!(
            "missing checkpoint {}",
            path.display()
        )));
    }
    net.load(&path)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Skip steps whose report and checkpoints already exist in the run
    /// directory.
    pub resume: bool,
    pub eval_threads: Option<usize>,
}

/// Deterministic record of a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub protocol: String,
    pub version: String,
    pub source_train_accuracy: Option<f64>,
    /// Target accuracy of `C∘E_S`.
    pub source_only_target: f64,
    /// Step 1: share of generated features `C` labels as conditioned.
    pub generated_accuracy: Option<f64>,
    /// Mean ± std over the final evaluations, or the source-only value.
    pub final_target: Summary,
    /// Source accuracy of `C∘E_S` and of `C` over the adapted encoder.
    pub source_accuracy: f64,
    pub adapted_source_accuracy: Option<f64>,
    pub source_fraction: Option<f64>,
    pub checkpoints: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stages: Vec<(String, f64)>,
    pub total_seconds: f64,
}

pub fn run_dir(cfg: &TrainConfig) -> PathBuf {
    cfg.out_dir
        .join(format!("{}-{}-seed{}", cfg.name, cfg.variant, cfg.seed))
}

fn report_file(stage: Stage) -> String {
    format!("{}.json", stage.as_str())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    if !path.exists() {
        return Err(Error::Dependency(format!("missing {}", path.display())));
    }
    from_json(&path)
}

/// Renders stage reports as the metrics table.
pub fn metrics_csv(reports: &[RunReport]) -> String {
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut out = format!("{METRICS_HEADER}\n");
    for r in reports {
        for row in r.metrics_rows() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.stage.as_str(),
                row.iteration,
                opt(row.d_loss.map(|v| v.to_string())),
                opt(row.g_loss.map(|v| v.to_string())),
                opt(row.source_acc.map(|v| v.to_string())),
                opt(row.target_acc.map(|v| v.to_string())),
            );
        }
    }
    out
}

struct Runner<'a> {
    cfg: &'a TrainConfig,
    dir: PathBuf,
    opts: &'a RunOptions,
    reports: Vec<RunReport>,
    timing: Timing,
}

impl Runner<'_> {
    /// Runs `train` unless resuming finds its report and checkpoints.
    fn stage(
        &mut self,
        stage: Stage,
        nets: &mut [&mut Network],
        train: impl FnOnce(&mut [&mut Network]) -> Result<RunReport>,
    ) -> Result<()> {
        let report_path = self.dir.join(report_file(stage));
        if self.opts.resume && report_path.exists() {
            for net in nets.iter_mut() {
                load_checkpoint(net, &self.dir)?;
            }
            self.reports.push(from_json(&report_path)?);
            return Ok(());
        }
        let t = Instant::now();
        let report = train(nets)?;
        self.timing
            .stages
            .push((stage.as_str().into(), t.elapsed().as_secs_f64()));
        for net in nets.iter() {
            net.save(&self.dir.join(checkpoint_file(net.name())))?;
        }
        write(&report_path, &to_json(&report))?;
        self.reports.push(report);
        Ok(())
    }
}

/// Executes the variant's pipeline and writes the run directory.
pub fn run(cfg: &TrainConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = run_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    if opts.resume && config_path.exists() {
        let old = TrainConfig::from_text(&read(&config_path)?, &dir)?;
        if old.hash() != cfg.hash() {
            return Err(Error::Validation(format!(
                "cannot resume {}: its config hash {} differs from {}",
                dir.display(),
                old.hash(),
                cfg.hash()
            )));
        }
    }
    write(&config_path, &cfg.to_text())?;

    let data = load_datasets(cfg)?;
    let mut nets = Networks::build(cfg, &data)?;
    let eval = Evaluator::new(opts.eval_threads)?;
    let game_cfg = |lr: f32, step: &super::config::StepSettings, offset: u64| GameConfig {
        lr,
        batch_size: cfg.batch_size,
        adam: step.adam(&cfg.adam),
        seed: cfg.seed.wrapping_add(offset),
        eval_threads: opts.eval_threads,
    };
    let mut runner = Runner {
        cfg,
        dir: dir.clone(),
        opts,
        reports: Vec::new(),
        timing: Timing::default(),
    };

    let step0_cfg = cfg.step0_config(opts.eval_threads);
    {
        let Networks { e_s, c, .. } = &mut nets;
        runner.stage(Stage::Step0, &mut [e_s, c], |n| {
            let [e_s, c] = n else { unreachable!() };
            train_step0(e_s, c, &data.source, Some(&data.target), &step0_cfg)
        })?;
    }

    let mut generated_accuracy = None;
    if let (Some(s), Some(d1)) = (nets.s.as_mut(), nets.d1.as_mut()) {
        let g = game_cfg(cfg.step1.lr, &cfg.step1, 1);
        let schedule = crate::adapt::MinimaxSchedule {
            eval_every: 1,
            eval_window: 1,
            ..runner.cfg.step1.schedule()
        };
        let e_s = &nets.e_s;
        runner.stage(Stage::Step1, &mut [s, d1], |n| {
            let [s, d1] = n else { unreachable!() };
            train_step1(s, d1, e_s, &data.source, &schedule, &g)
        })?;
        let mut rng = stream_rng(cfg.seed, 6);
        generated_accuracy = Some(generated_feature_accuracy(
            s,
            &nets.c,
            GENERATED_EVAL_SAMPLES,
            &mut rng,
        )?);
    }

    if let (Some(adapted), Some(d2)) = (nets.adapted.as_mut(), nets.d2.as_mut()) {
        let g = game_cfg(cfg.step2.lr, &cfg.step2, 2);
        let schedule = cfg.step2.schedule();
        let (e_s, c, s) = (&nets.e_s, &nets.c, nets.s.as_ref());
        let stage = match cfg.variant {
            Variant::Difa => Stage::Step2,
            Variant::LsAdda => Stage::LsAdda,
            _ => Stage::Di,
        };
        runner.stage(stage, &mut [adapted, d2], |n| {
            let [e, d] = n else { unreachable!() };
            clone_weights(e_s, e)?;
            let (src, tgt) = (&data.source, &data.target);
            match stage {
                Stage::Step2 => {
                    let s = s.expect("difa builds S");
                    train_step2(e, d, s, c, src, tgt, &schedule, &g)
                }
                Stage::LsAdda => train_ls_adda(e, d, e_s, c, src, tgt, &schedule, &g),
                _ => train_di(e, d, e_s, c, src, tgt, &schedule, &g),
            }
        })?;
    }

    let Runner {
        reports,
        mut timing,
        ..
    } = runner;
    write(&dir.join(METRICS_FILE), &metrics_csv(&reports))?;

    let source_only_target = eval.accuracy(&nets.e_s, &nets.c, &data.target)?;
    let final_target = match reports.last().and_then(|r| r.final_target) {
        Some(s) if cfg.variant != Variant::SourceOnly => s,
        _ => Summary {
            mean: source_only_target,
            std: 0.0,
            window: 1,
        },
    };
    let adapted_source_accuracy = nets
        .adapted
        .as_ref()
        .map(|e| eval.accuracy(e, &nets.c, &data.source))
        .transpose()?;
    let summary = RunSummary {
        name: cfg.name.clone(),
        variant: cfg.variant.to_string(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        protocol: cfg.protocol_label(),
        version: env!("CARGO_PKG_VERSION").into(),
        source_train_accuracy: reports[0].train_accuracy,
        source_only_target,
        generated_accuracy,
        final_target,
        source_accuracy: eval.accuracy(&nets.e_s, &nets.c, &data.source)?,
        adapted_source_accuracy,
        source_fraction: reports.last().and_then(|r| r.source_fraction),
        checkpoints: nets
            .all()
            .iter()
            .map(|n| checkpoint_file(n.name()))
            .collect(),
    };
    write(&dir.join(SUMMARY_FILE), &to_json(&summary))?;
    timing.total_seconds = start.elapsed().as_secs_f64();
    write(&dir.join(TIMING_FILE), &to_json(&timing))?;
    Ok(summary)
}

/// Config, data and trained networks of a finished run directory.
pub fn open_run(dir: &Path) -> Result<(TrainConfig, Datasets, Networks)> {
    let path = dir.join(CONFIG_FILE);
    if !path.exists() {
        return Err(Error::Dependency(format!("missing {}", path.display())));
    }
    let cfg = TrainConfig::from_text(&read(&path)?, dir)?;
    let data = load_datasets(&cfg)?;
    let mut nets = Networks::build(&cfg, &data)?;
    nets.load(dir)?;
    Ok((cfg, data, nets))
}
