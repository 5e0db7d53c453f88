//! The training pipeline: source classifier, conditional feature generator,
//! and the adversarial encoder games (the full method and its ablations).

mod eval;
mod game;
mod sampler;
mod step0;
mod step1;

pub use eval::{infer, Evaluator};
pub use game::{train_di, train_ls_adda, train_step2};
pub use sampler::BatchSampler;
pub use step0::{train_step0, Step0Config};
pub use step1::{
    generate_features, one_hot, step1_d_loss, step1_g_loss, train_step1, uniform_noise,
};

use serde::{Deserialize, Serialize};

use crate::analysis::{final_summary, Summary};
use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};

/// Iteration budget and evaluation cadence of an adversarial game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimaxSchedule {
    pub iterations: usize,
    pub disc_steps_per_iter: usize,
    pub gen_steps_per_iter: usize,
    pub eval_every: usize,
    pub eval_window: usize,
}

impl MinimaxSchedule {
    pub fn new(iterations: usize, eval_every: usize, eval_window: usize) -> Self {
        MinimaxSchedule {
            iterations,
            disc_steps_per_iter: 1,
            gen_steps_per_iter: 1,
            eval_every,
            eval_window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.iterations,
            self.disc_steps_per_iter,
            self.gen_steps_per_iter,
            self.eval_every,
            self.eval_window,
        ];
        if counts.contains(&0) {
            return Err(Error::Validation(format!(
                "schedule counts must be ≥ 1: {self:?}"
            )));
        }
        if self.eval_window > self.iterations / self.eval_every {
            return Err(Error::Validation(format!(
                "eval window {} exceeds the {} evaluations after iteration 0",
                self.eval_window,
                self.iterations / self.eval_every
            )));
        }
        Ok(())
    }
}

/// Optimisation settings shared by the adversarial steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Evaluation worker cap; `None` uses every core.
    pub eval_threads: Option<usize>,
}

impl GameConfig {
    pub fn new(lr: f32, batch_size: usize, seed: u64) -> Self {
        GameConfig {
            lr,
            batch_size,
            adam: AdamConfig::default(),
            seed,
            eval_threads: None,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Validation(format!(
                "batch size {} < 2",
                self.batch_size
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Validation(format!("learning rate {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Step0,
    Step1,
    Step2,
    LsAdda,
    Di,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Step0 => "step0",
            Stage::Step1 => "step1",
            Stage::Step2 => "step2",
            Stage::LsAdda => "ls_adda",
            Stage::Di => "di",
        }
    }
}

/// Which side of a game produced a loss value. Step 0's cross-entropy is
/// recorded as `Generator` since it is the only trained player.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Player {
    Discriminator,
    Generator,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// 1-based index of the iteration the step belongs to.
    pub iteration: usize,
    pub player: Player,
    pub value: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    /// Number of completed iterations when measured.
    pub iteration: usize,
    pub source_acc: Option<f64>,
    pub target_acc: Option<f64>,
}

/// One row of the metrics table: mean losses per player for an iteration
/// plus any accuracy measured after it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub d_loss: Option<f32>,
    pub g_loss: Option<f32>,
    pub source_acc: Option<f64>,
    pub target_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub stage: Stage,
    pub seed: u64,
    pub iterations: usize,
    pub losses: Vec<LossRecord>,
    pub accuracy: Vec<AccuracyRecord>,
    /// Step 0: accuracy on the full source training set after training.
    pub train_accuracy: Option<f64>,
    /// Mean and population std of the last `eval_window` target accuracies.
    pub final_target: Option<Summary>,
    /// Share of source samples among all encoder-side inputs.
    pub source_fraction: Option<f64>,
    /// Step 1: mean discriminator output on real and fake features in the
    /// last discriminator step.
    pub d_real_mean: Option<f64>,
    pub d_fake_mean: Option<f64>,
}

impl RunReport {
    pub(crate) fn new(stage: Stage, seed: u64, iterations: usize) -> Self {
        RunReport {
            stage,
            seed,
            iterations,
            losses: Vec::new(),
            accuracy: Vec::new(),
            train_accuracy: None,
            final_target: None,
            source_fraction: None,
            d_real_mean: None,
            d_fake_mean: None,
        }
    }

    pub(crate) fn push_loss(&mut self, iteration: usize, player: Player, value: f32) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Numeric {
                iteration,
                detail: format!("{} {player:?} loss is {value}", self.stage.as_str()),
            });
        }
        self.losses.push(LossRecord {
            iteration,
            player,
            value,
        });
        Ok(())
    }

    pub(crate) fn finish_window(&mut self, window: usize) -> Result<()> {
        let history: Vec<f64> = self.accuracy.iter().filter_map(|a| a.target_acc).collect();
        self.final_target = Some(final_summary(&history, window)?);
        Ok(())
    }

    pub fn target_history(&self) -> Vec<(usize, f64)> {
        self.accuracy
            .iter()
            .filter_map(|a| a.target_acc.map(|t| (a.iteration, t)))
            .collect()
    }

    /// Per-iteration rows in increasing iteration order; iterations with
    /// neither losses nor measurements are skipped.
    pub fn metrics_rows(&self) -> Vec<MetricsRow> {
        let mut rows: std::collections::BTreeMap<usize, ([f64; 2], [usize; 2], MetricsRow)> =
            Default::default();
        let blank = |iteration| MetricsRow {
            iteration,
            d_loss: None,
            g_loss: None,
            source_acc: None,
            target_acc: None,
        };
        for l in &self.losses {
            let e = rows
                .entry(l.iteration)
                .or_insert(([0.0; 2], [0; 2], blank(l.iteration)));
            let slot = match l.player {
                Player::Discriminator => 0,
                Player::Generator => 1,
            };
            e.0[slot] += l.value as f64;
            e.1[slot] += 1;
        }
        for a in &self.accuracy {
            let e = rows
                .entry(a.iteration)
                .or_insert(([0.0; 2], [0; 2], blank(a.iteration)));
            e.2.source_acc = a.source_acc;
            e.2.target_acc = a.target_acc;
        }
        rows.into_values()
            .map(|(sum, n, mut row)| {
                let mean = |i: usize| (n[i] > 0).then(|| (sum[i] / n[i] as f64) as f32);
                row.d_loss = mean(0);
                row.g_loss = mean(1);
                row
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
