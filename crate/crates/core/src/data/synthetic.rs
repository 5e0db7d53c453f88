use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DomainTag, LabeledDataset};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Plain vectors are divided by this before clamping to `[-1, 1]`.
pub(crate) const VECTOR_SCALE: f32 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Render {
    /// `N×2×1×1` coordinates.
    Vector,
    /// `N×1×size×size` images with a Gaussian spot at the point.
    Image { size: usize },
}

/// Gaussian blobs on the unit circle (class `k` at angle `2πk/K`); the
/// target domain applies `rotation` (radians) and then `shift`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub num_classes: usize,
    pub shift: [f32; 2],
    pub rotation: f32,
    pub noise_sd: f32,
    pub seed: u64,
    pub render: Render,
}

impl SyntheticSpec {
    pub fn two_class(n_per_class: usize, shift_x: f32, noise_sd: f32, seed: u64) -> Self {
        SyntheticSpec {
            n_per_class,
            num_classes: 2,
            shift: [shift_x, 0.0],
            rotation: 0.0,
            noise_sd,
            seed,
            render: Render::Vector,
        }
    }

    pub fn center(&self, class: usize) -> [f32; 2] {
        let a = std::f32::consts::TAU * class as f32 / self.num_classes as f32;
        [a.cos(), a.sin()]
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.n_per_class == 0 {
            return Err(Error::Parameter(format!(
                "need ≥ 2 classes and ≥ 1 sample per class, got {} × {}",
                self.num_classes, self.n_per_class
            )));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
            return Err(Error::Parameter(format!("noise_sd {}", self.noise_sd)));
        }
        if !(self.shift.iter().all(|v| v.is_finite()) && self.rotation.is_finite()) {
            return Err(Error::Parameter("non-finite transform".into()));
        }
        if let Render::Image { size } = self.render {
            if size < 2 {
                return Err(Error::Parameter(format!("image size {size}")));
            }
        }
        Ok(())
    }
}

fn render(points: &[[f32; 2]], how: Render) -> Result<Tensor> {
    let n = points.len();
    match how {
        Render::Vector => {
            let data = points
                .iter()
                .flat_map(|p| p.map(|v| (v / VECTOR_SCALE).clamp(-1.0, 1.0)))
                .collect();
            Tensor::new(vec![n, 2, 1, 1], data)
        }
        Render::Image { size } => {
            // the plane [-3, 3]² spans the image; spot width is one pixel
            let half = (size as f32 - 1.0) / 2.0;
            let px_per_unit = half / 3.0;
            let mut data = Vec::with_capacity(n * size * size);
            for p in points {
                let cx = half + p[0] * px_per_unit;
                let cy = half - p[1] * px_per_unit;
                for r in 0..size {
                    for c in 0..size {
                        let d2 = (c as f32 - cx).powi(2) + (r as f32 - cy).powi(2);
                        data.push(2.0 * (-d2 / 2.0).exp() - 1.0);
                    }
                }
            }
            Tensor::new(vec![n, 1, size, size], data)
        }
    }
}

/// Returns `(source, target)`. Both domains share one noise stream, so a
/// zero shift and rotation yield identical tensors.
pub fn make_synthetic_domains(spec: &SyntheticSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let normal = Normal::new(0.0f32, spec.noise_sd)
        .map_err(|e| Error::Parameter(format!("noise_sd: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_per_class * spec.num_classes;
    let mut src = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.num_classes;
        let c = spec.center(class);
        src.push([
            c[0] + normal.sample(&mut rng),
            c[1] + normal.sample(&mut rng),
        ]);
        labels.push(class);
    }
    let (sin, cos) = spec.rotation.sin_cos();
    let tgt: Vec<[f32; 2]> = src
        .iter()
        .map(|&[x, y]| {
            [
                cos * x - sin * y + spec.shift[0],
                sin * x + cos * y + spec.shift[1],
            ]
        })
        .collect();
    let k = spec.num_classes;
    Ok((
        LabeledDataset::new(
            "synthetic-source",
            DomainTag::Source,
            render(&src, spec.render)?,
            labels.clone(),
            k,
        )?,
        LabeledDataset::new(
            "synthetic-target",
            DomainTag::Target,
            render(&tgt, spec.render)?,
            labels,
            k,
        )?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Standard normal CDF, erf by midpoint quadrature.
    fn phi(x: f64) -> f64 {
        let z = x / std::f64::consts::SQRT_2;
        let steps = 20_000;
        let h = z.abs() / steps as f64;
        let mut s = 0.0;
        for i in 0..steps {
            let t = (i as f64 + 0.5) * h;
            s += (-t * t).exp();
        }
        let erf = 2.0 / std::f64::consts::PI.sqrt() * s * h * z.signum();
        0.5 * (1.0 + erf)
    }

    #[test]
    fn zero_transform_gives_equal_domains() {
        let spec = SyntheticSpec::two_class(50, 0.0, 0.3, 7);
        let (s, t) = make_synthetic_domains(&spec).unwrap();
        assert_eq!(s.images(), t.images());
        assert_eq!(s.labels(), t.labels());
        assert_eq!(s.class_counts(), vec![50, 50]);
    }

    #[test]
    fn image_render_shape_and_range() {
        let mut spec = SyntheticSpec::two_class(5, 1.0, 0.25, 1);
        spec.num_classes = 3;
        spec.render = Render::Image { size: 8 };
        let (s, t) = make_synthetic_domains(&spec).unwrap();
        assert_eq!(s.images().shape(), &[15, 1, 8, 8]);
        assert_eq!(t.class_counts(), vec![5, 5, 5]);
        assert!(s.images().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn degenerate_parameters_rejected() {
        let mut spec = SyntheticSpec::two_class(5, 1.0, 0.25, 1);
        spec.num_classes = 1;
        assert!(matches!(
            make_synthetic_domains(&spec),
            Err(Error::Parameter(_))
        ));
        let spec = SyntheticSpec::two_class(5, 1.0, 0.0, 1);
        assert!(matches!(
            make_synthetic_domains(&spec),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn shifted_task_matches_gaussian_overlap_oracle() {
        // Source-optimal boundary x = 0; shifted target clusters at
        // -1 + s and 1 + s. Adapted boundary sits at the new midpoint s.
        let (shift, sd) = (1.2f64, 0.25f64);
        let source_only = 0.5 * (phi((0.0 - (-1.0 + shift)) / sd) + phi((1.0 + shift) / sd));
        let adapted = phi(1.0 / sd);
        assert!(source_only <= 0.75, "{source_only}");
        assert!(adapted > 0.99, "{adapted}");

        let spec = SyntheticSpec::two_class(5000, shift as f32, sd as f32, 11);
        let (_, t) = make_synthetic_domains(&spec).unwrap();
        let x: Vec<f32> = t.images().data().chunks(2).map(|p| p[0]).collect();
        let hits = |boundary: f32| {
            x.iter()
                .zip(t.labels())
                .filter(|(&v, &l)| (v > boundary) == (l == 0))
                .count() as f64
                / x.len() as f64
        };
        assert!((hits(0.0) - source_only).abs() < 0.02);
        assert!((hits(shift as f32 / VECTOR_SCALE) - adapted).abs() < 0.01);
    }
}
