//! Datasets, IDX ingestion, preprocessing, experimental protocols, and the
//! synthetic shifted-domain generator.

mod fad;
mod idx;
mod protocol;
mod synthetic;
mod transform;

pub use fad::{read_fad, write_fad, FeatureSet, Origin, FAD_MAGIC};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels};
pub use protocol::{apply_protocol, split_p2_target, stratified_sample, Protocol, ProtocolSpec};
pub use synthetic::{make_synthetic_domains, Render, SyntheticSpec};
pub use transform::{resize_bilinear, to_grayscale};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Source,
    Target,
}

/// Images `N×C×H×W` in `[-1, 1]` with one label per image.
///
/// Target datasets keep their labels for evaluation only; training code
/// never reads them.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub domain: DomainTag,
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        domain: DomainTag,
        images: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Data(format!(
                "images must be N×C×H×W, got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Label {
                index,
                label,
                classes: num_classes,
            });
        }
        if let Some(v) = images.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(LabeledDataset {
            name: name.into(),
            domain,
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `[C, H, W]`.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.images.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let (images, labels) = self.batch(indices);
        LabeledDataset {
            name: self.name.clone(),
            domain: self.domain,
            images,
            labels,
            num_classes: self.num_classes,
        }
    }

    pub fn with_domain(mut self, domain: DomainTag) -> Self {
        self.domain = domain;
        self
    }

    pub(crate) fn with_images(&self, images: Tensor) -> LabeledDataset {
        LabeledDataset {
            name: self.name.clone(),
            domain: self.domain,
            images,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        }
    }
}
