use serde::{Deserialize, Serialize};

use crate::adapt::Evaluator;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Network;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub window: usize,
}

/// Mean and population std of the last `window` entries of `history`.
pub fn final_summary(history: &[f64], window: usize) -> Result<Summary> {
    if window == 0 || history.len() < window {
        return Err(Error::Parameter(format!(
            "window {window} over a history of {}",
            history.len()
        )));
    }
    let tail = &history[history.len() - window..];
    let mean = tail.iter().sum::<f64>() / window as f64;
    let var = tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / window as f64;
    Ok(Summary {
        mean,
        std: var.sqrt(),
        window,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgettingRow {
    pub split: String,
    pub source_encoder: f64,
    pub adapted_encoder: f64,
    /// `adapted_encoder − source_encoder`.
    pub delta: f64,
}

/// Source-domain accuracy of `head ∘ e_s` against `head ∘ e_i` on each
/// named split.
pub fn forgetting_report(
    e_s: &Network,
    e_i: &Network,
    head: &Network,
    splits: &[&LabeledDataset],
    eval: &Evaluator,
) -> Result<Vec<ForgettingRow>> {
    splits
        .iter()
        .map(|ds| {
            let a = eval.accuracy(e_s, head, ds)?;
            let b = eval.accuracy(e_i, head, ds)?;
            Ok(ForgettingRow {
                split: ds.name.clone(),
                source_encoder: a,
                adapted_encoder: b,
                delta: b - a,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn worked_example() {
        let s = final_summary(&[0.9, 0.92, 0.94], 3).unwrap();
        assert!((s.mean - 0.92).abs() < 1e-12);
        // sqrt(((0.02)² + 0 + (0.02)²) / 3)
        assert!((s.std - (0.0008f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.std - 0.0163).abs() < 1e-4);
    }

    #[test]
    fn window_edges() {
        let s = final_summary(&[0.1, 0.5, 0.7], 1).unwrap();
        assert_eq!((s.mean, s.std), (0.7, 0.0));
        assert_eq!(final_summary(&[0.4; 5], 4).unwrap().std, 0.0);
        assert!(matches!(final_summary(&[0.1], 2), Err(Error::Parameter(_))));
        assert!(matches!(final_summary(&[0.1], 0), Err(Error::Parameter(_))));
    }

    proptest! {
        #[test]
        fn mean_within_window_range(
            h in proptest::collection::vec(0.0f64..1.0, 1..40), w in 1usize..40,
        ) {
            let w = w.min(h.len());
            let s = final_summary(&h, w).unwrap();
            let tail = &h[h.len() - w..];
            let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(s.mean >= lo - 1e-12 && s.mean <= hi + 1e-12);
            prop_assert!(s.std >= 0.0);
        }
    }
}
