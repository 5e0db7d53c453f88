use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Variant;
use super::run::{open_run, read_summary, stream_rng, RunSummary};
use crate::adapt::Evaluator;
use crate::analysis::{
    count_aps_dataset, count_aps_generator, encoder_feature_set, export_feature_set,
    generated_feature_set, merge_feature_sets, APCensus, GeneratorCensusConfig,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub encoder: String,
    pub source_acc: f64,
    pub target_acc: f64,
}

/// Re-measures source and target accuracy of every encoder in a run.
pub fn eval_run(dir: &Path, eval: &Evaluator) -> Result<Vec<EvalRow>> {
    let (_, data, nets) = open_run(dir)?;
    [Some(&nets.e_s), nets.adapted.as_ref()]
        .into_iter()
        .flatten()
        .map(|e| {
            Ok(EvalRow {
                encoder: e.name().into(),
                source_acc: eval.accuracy(e, &nets.c, &data.source)?,
                target_acc: eval.accuracy(e, &nets.c, &data.target)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub set: String,
    #[serde(flatten)]
    pub census: APCensus,
}

/// Activation patterns of the source features and, for runs with a
/// generator, of the generated ones.
pub fn aps_run(
    dir: &Path,
    eval: &Evaluator,
    census: &GeneratorCensusConfig,
) -> Result<Vec<CensusRow>> {
    let (cfg, data, nets) = open_run(dir)?;
    let mut rows = vec![CensusRow {
        set: format!("{}({})", nets.e_s.name(), data.source.name),
        census: count_aps_dataset(&nets.e_s, &data.source, eval)?,
    }];
    if let Some(s) = &nets.s {
        let mut rng = stream_rng(cfg.seed, 7);
        rows.push(CensusRow {
            set: s.name().into(),
            census: count_aps_generator(s, census, &mut rng)?,
        });
    }
    Ok(rows)
}

/// Writes `E_S` source features, plus as many generated features with the
/// same labels when the run has a generator, as FAD1 and CSV. Returns the
/// two paths.
pub fn export_run(dir: &Path, out: &Path, eval: &Evaluator) -> Result<(PathBuf, PathBuf)> {
    let (cfg, data, nets) = open_run(dir)?;
    let real = encoder_feature_set(&nets.e_s, &data.source, eval)?;
    let set = match &nets.s {
        Some(s) => {
            let mut rng = stream_rng(cfg.seed, 8);
            merge_feature_sets(
                real,
                generated_feature_set(s, data.source.labels(), &mut rng)?,
            )?
        }
        None => real,
    };
    let csv = export_feature_set(&set, out)?;
    Ok((out.to_path_buf(), csv))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub variant: String,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
}

/// Summaries of every completed run directly under `dir`.
pub fn collect_summaries(dir: &Path) -> Result<Vec<RunSummary>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(super::run::SUMMARY_FILE).exists())
        .collect();
    paths.sort();
    paths.iter().map(|p| read_summary(p)).collect()
}

/// One row per variant. A single run reports its own window mean ± std;
/// several runs report the mean and population std of their final means.
pub fn report_rows(summaries: &[RunSummary]) -> Result<Vec<ReportRow>> {
    let Some(first) = summaries.first() else {
        return Err(Error::Dependency("no completed runs to report".into()));
    };
    if let Some(other) = summaries.iter().find(|s| s.protocol != first.protocol) {
        return Err(Error::Protocol(format!(
            "refusing to compare runs under different protocols: `{}` ({}) vs `{}` ({})",
            first.protocol, first.name, other.protocol, other.name
        )));
    }
    let mut groups: BTreeMap<usize, (String, Vec<&RunSummary>)> = BTreeMap::new();
    for s in summaries {
        let order = s.variant.parse::<Variant>().map_or(usize::MAX, |v| {
            Variant::ALL.iter().position(|&x| x == v).unwrap_or(0)
        });
        groups
            .entry(order)
            .or_insert_with(|| (s.variant.clone(), Vec::new()))
            .1
            .push(s);
    }
    Ok(groups
        .into_values()
        .map(|(variant, runs)| {
            let (mean, std) = match runs.as_slice() {
                [one] => (one.final_target.mean, one.final_target.std),
                many => {
                    let n = many.len() as f64;
                    let mean = many.iter().map(|r| r.final_target.mean).sum::<f64>() / n;
                    let var = many
                        .iter()
                        .map(|r| (r.final_target.mean - mean).powi(2))
                        .sum::<f64>()
                        / n;
                    (mean, var.sqrt())
                }
            };
            ReportRow {
                variant,
                runs: runs.len(),
                mean,
                std,
            }
        })
        .collect())
}

pub fn render_report(protocol: &str, rows: &[ReportRow]) -> String {
    let mut out = format!("protocol: {protocol}\n");
    let _ = writeln!(out, "{:<12} {:>4}  target accuracy", "variant", "runs");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>4}  {:.3} ± {:.3}",
            r.variant, r.runs, r.mean, r.std
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::Summary;

    fn summary(variant: &str, protocol: &str, mean: f64, std: f64) -> RunSummary {
        RunSummary {
            name: "x".into(),
            variant: variant.into(),
            seed: 0,
            config_hash: String::new(),
            protocol: protocol.into(),
            version: String::new(),
            source_train_accuracy: None,
            source_only_target: 0.5,
            generated_accuracy: None,
            final_target: Summary {
                mean,
                std,
                window: 10,
            },
            source_accuracy: 1.0,
            adapted_source_accuracy: None,
            source_fraction: None,
            checkpoints: Vec::new(),
        }
    }

    #[test]
    fn four_variants_give_four_rows_in_order() {
        let runs = [
            summary("difa", "p1", 0.9, 0.01),
            summary("source_only", "p1", 0.7, 0.0),
            summary("di", "p1", 0.85, 0.02),
            summary("ls_adda", "p1", 0.8, 0.03),
        ];
        let rows = report_rows(&runs).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(names, ["source_only", "ls_adda", "di", "difa"]);
        assert_eq!((rows[3].mean, rows[3].std), (0.9, 0.01));
        let text = render_report("p1", &rows);
        assert!(text.contains("difa"));
        assert!(text.contains("0.900 ± 0.010"), "{text}");
    }

    #[test]
    fn seeds_pool_into_mean_and_spread() {
        let runs = [
            summary("difa", "p1", 0.8, 0.1),
            summary("difa", "p1", 0.9, 0.1),
        ];
        let rows = report_rows(&runs).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean - 0.85).abs() < 1e-12);
        assert!((rows[0].std - 0.05).abs() < 1e-12);
    }

    #[test]
    fn mixed_protocols_are_refused() {
        let runs = [
            summary("difa", "p1", 0.9, 0.0),
            summary("di", "p2", 0.8, 0.0),
        ];
        assert!(matches!(report_rows(&runs), Err(Error::Protocol(_))));
        assert!(matches!(report_rows(&[]), Err(Error::Dependency(_))));
    }
}
