use rayon::prelude::*;

use crate::autodiff::{Tape, Tensor};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Mode, Network};

const EVAL_CHUNK: usize = 256;

fn check_head(encoder: &Network, head: &Network) -> Result<()> {
    let want = match head.architecture() {
        crate::nn::Architecture::Classifier(h) => h.feature_dim,
        other => {
            return Err(Error::Architecture(format!(
                "{} is not a classifier head: {other:?}",
                head.name()
            )))
        }
    };
    if encoder.output_dim() != want {
        return Err(Error::Architecture(format!(
            "{} emits {} features, {} expects {want}",
            encoder.name(),
            encoder.output_dim(),
            head.name()
        )));
    }
    Ok(())
}

/// Eval-mode forward through `nets` in order.
fn chain(nets: &[&Network], x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new(0);
    let mut v = tape.constant(x);
    for net in nets {
        v = net.forward_ref(&mut tape, v, Mode::EVAL)?.0;
    }
    Ok(tape.tensor(v))
}

/// Label prediction `argmax C(E(x))`; deterministic.
pub fn infer(encoder: &Network, head: &Network, batch: &Tensor) -> Result<Vec<usize>> {
    check_head(encoder, head)?;
    Ok(chain(&[encoder, head], batch)?.argmax_rows())
}

/// Batch-parallel evaluation with an optional worker cap. Results do not
/// depend on the number of workers.
pub struct Evaluator {
    pool: Option<rayon::ThreadPool>,
}

impl Evaluator {
    pub fn new(threads: Option<usize>) -> Result<Self> {
        let pool = match threads {
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| Error::Validation(format!("thread pool: {e}")))?,
            ),
            None => None,
        };
        Ok(Evaluator { pool })
    }

    fn run<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    /// Eval-mode outputs of `nets` applied in sequence to every row.
    pub fn apply(&self, nets: &[&Network], inputs: &Tensor) -> Result<Tensor> {
        let n = inputs.shape().first().copied().unwrap_or(0);
        let width = nets.last().map_or(inputs.row_len(), |net| net.output_dim());
        let chunks: Vec<Result<Tensor>> = self.run(|| {
            (0..n.div_ceil(EVAL_CHUNK))
                .into_par_iter()
                .map(|c| {
                    let idx: Vec<usize> = (c * EVAL_CHUNK..((c + 1) * EVAL_CHUNK).min(n)).collect();
                    chain(nets, &inputs.select_rows(&idx))
                })
                .collect()
        });
        let mut data = Vec::with_capacity(n * width);
        for c in chunks {
            data.extend_from_slice(c?.data());
        }
        Tensor::new(vec![n, width], data)
    }

    pub fn predict(
        &self,
        encoder: &Network,
        head: &Network,
        inputs: &Tensor,
    ) -> Result<Vec<usize>> {
        check_head(encoder, head)?;
        Ok(self.apply(&[encoder, head], inputs)?.argmax_rows())
    }

    /// Fraction of `ds` whose predicted label matches.
    pub fn accuracy(&self, encoder: &Network, head: &Network, ds: &LabeledDataset) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::Data(format!("{} is empty", ds.name)));
        }
        let pred = self.predict(encoder, head, ds.images())?;
        let hits = pred.iter().zip(ds.labels()).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / ds.len() as f64)
    }
}
