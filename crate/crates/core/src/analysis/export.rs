use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::adapt::{generate_features, Evaluator};
use crate::data::{write_fad, FeatureSet, LabeledDataset, Origin};
use crate::error::{Error, Result};
use crate::nn::{Mode, Network};

/// Writes `set` as FAD1 at `path` and as CSV next to it; returns the CSV
/// path. CSV columns: `label,origin,f0,f1,…` with origin `real` or
/// `generated`.
pub fn export_feature_set(set: &FeatureSet, path: &Path) -> Result<PathBuf> {
    write_fad(path, set)?;
    let csv = path.with_extension("csv");
    let file = std::fs::File::create(&csv).map_err(|e| Error::io(&csv, e))?;
    let mut w = std::io::BufWriter::new(file);
    let width = set.features.row_len();
    let io = |e| Error::io(&csv, e);
    write!(w, "label,origin").map_err(io)?;
    for i in 0..width {
        write!(w, ",f{i}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for r in 0..set.len() {
        let origin = match set.origins[r] {
            Origin::Real => "real",
            Origin::Generated => "generated",
        };
        write!(w, "{},{origin}", set.labels[r]).map_err(io)?;
        for v in &set.features.data()[r * width..(r + 1) * width] {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(csv)
}

/// Encoder features of every sample in `ds`, flagged real.
pub fn encoder_feature_set(
    encoder: &Network,
    ds: &LabeledDataset,
    eval: &Evaluator,
) -> Result<FeatureSet> {
    let features = eval.apply(&[encoder], ds.images())?;
    FeatureSet::new(features, ds.labels().to_vec(), vec![Origin::Real; ds.len()])
}

/// One generated feature per label, flagged generated.
pub fn generated_feature_set(
    s: &Network,
    labels: &[usize],
    rng: &mut impl Rng,
) -> Result<FeatureSet> {
    let features = generate_features(s, labels, rng, Mode::SAMPLE)?;
    FeatureSet::new(
        features,
        labels.to_vec(),
        vec![Origin::Generated; labels.len()],
    )
}

/// Real rows followed by generated rows.
pub fn merge_feature_sets(real: FeatureSet, generated: FeatureSet) -> Result<FeatureSet> {
    if real.features.row_len() != generated.features.row_len() {
        return Err(Error::Consistency(format!(
            "feature widths {} and {}",
            real.features.row_len(),
            generated.features.row_len()
        )));
    }
    let n = real.len() + generated.len();
    let width = real.features.row_len();
    let mut data = real.features.into_data();
    data.extend_from_slice(generated.features.data());
    let mut labels = real.labels;
    labels.extend(generated.labels);
    let mut origins = real.origins;
    origins.extend(generated.origins);
    FeatureSet::new(
        crate::autodiff::Tensor::new(vec![n, width], data)?,
        labels,
        origins,
    )
}
