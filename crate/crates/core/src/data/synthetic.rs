//! Synthetic multi-view benchmarks.
//!
//! [`generate_toy`] builds the two-view complementarity benchmark: a 9-d latent
//! code with class-specific active blocks, projected into a 3000-d view that is
//! blind to the last latent block and a 10-d view that only sees it.
//! [`generate_clustered`] builds generic Gaussian-cluster views of arbitrary widths.

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{DataError, MultiViewDataset};
use crate::rng::{stream, Stream};

/// Which latent dimensions each class activates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentLayout {
    /// C1 on dims 1-3, C2 on dims 4-6, C3 on dims 4-9: C3 shares the C2 block, so
    /// the view that cannot see dims 7-9 confuses C2 with C3.
    #[default]
    SharedBlock,
    /// C1 on 1-3, C2 on 4-6, C3 on 7-9, no overlap.
    Disjoint,
}

impl LatentLayout {
    /// Zero-based latent dimensions that are active for `class` (0, 1 or 2).
    pub fn active_dims(self, class: usize) -> std::ops::Range<usize> {
        match (self, class) {
            (_, 0) => 0..3,
            (_, 1) => 3..6,
            (LatentLayout::SharedBlock, 2) => 3..9,
            (LatentLayout::Disjoint, 2) => 6..9,
            _ => panic!("toy benchmark has 3 classes"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySpec {
    pub n_samples: usize,
    pub n_classes: usize,
    pub latent_dim: usize,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
    pub latent_noise_std: f64,
    pub view_dims: (usize, usize),
    pub w1_range: (f64, f64),
    pub w2_range: (f64, f64),
    pub noise_stds: (f64, f64),
    pub layout: LatentLayout,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            n_samples: 1500,
            n_classes: 3,
            latent_dim: 9,
            gamma_shape: 1.0,
            gamma_scale: 0.8,
            latent_noise_std: 0.1,
            view_dims: (3000, 10),
            w1_range: (0.2, 1.2),
            w2_range: (0.2, 0.8),
            noise_stds: (0.2, 0.75),
            layout: LatentLayout::default(),
            seed: 0,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Contract(format!("toy spec: {m}")));
        if self.n_classes != 3 || self.latent_dim != 9 {
            return bad("the block structure needs exactly 3 classes and a 9-d latent");
        }
        if self.n_samples == 0 || !self.n_samples.is_multiple_of(self.n_classes) {
            return bad("n_samples must be a positive multiple of n_classes");
        }
        if self.view_dims.0 == 0 || self.view_dims.1 == 0 {
            return bad("view dimensions must be positive");
        }
        if !(self.w1_range.0 < self.w1_range.1) || !(self.w2_range.0 < self.w2_range.1) {
            return bad("projection ranges must satisfy low < high");
        }
        if !(self.gamma_shape > 0.0 && self.gamma_scale > 0.0) {
            return bad("gamma parameters must be positive");
        }
        if !(self.latent_noise_std >= 0.0 && self.noise_stds.0 >= 0.0 && self.noise_stds.1 >= 0.0) {
            return bad("noise standard deviations must be nonnegative");
        }
        Ok(())
    }
}

/// Latent codes, projections and labels behind a toy dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyGroundTruth {
    pub z: Array2<f64>,
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub labels: Vec<usize>,
    pub layout: LatentLayout,
}

impl ToyGroundTruth {
    /// Latent dimensions with an all-zero projection column in view `v` (0 or 1).
    pub fn masked_latent_dims(&self, v: usize) -> Vec<usize> {
        let w = if v == 0 { &self.w1 } else { &self.w2 };
        (0..w.ncols())
            .filter(|&c| w.column(c).iter().all(|&x| x == 0.0))
            .collect()
    }
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("finite nonnegative std")
}

fn fill_normal(rng: &mut impl Rng, shape: (usize, usize), std: f64) -> Array2<f64> {
    let d = normal(std);
    Array2::from_shape_simple_fn(shape, || d.sample(rng))
}

pub fn generate_toy(spec: &ToySpec) -> Result<(MultiViewDataset, ToyGroundTruth), DataError> {
    spec.validate()?;
    let mut rng = stream(spec.seed, Stream::Data);
    let n = spec.n_samples;
    let per_class = n / spec.n_classes;
    let labels: Vec<usize> = (0..n).map(|i| i / per_class).collect();

    let mut z = fill_normal(&mut rng, (n, spec.latent_dim), spec.latent_noise_std);
    let gamma = Gamma::new(spec.gamma_shape, spec.gamma_scale).expect("validated");
    for (i, &c) in labels.iter().enumerate() {
        for d in spec.layout.active_dims(c) {
            z[[i, d]] += gamma.sample(&mut rng);
        }
    }

    let (d1, d2) = spec.view_dims;
    let u1 = Uniform::new(spec.w1_range.0, spec.w1_range.1).expect("validated");
    let u2 = Uniform::new(spec.w2_range.0, spec.w2_range.1).expect("validated");
    let mut w1 = Array2::from_shape_simple_fn((d1, spec.latent_dim), || u1.sample(&mut rng));
    let mut w2 = Array2::from_shape_simple_fn((d2, spec.latent_dim), || u2.sample(&mut rng));
    w1.slice_mut(s![.., 6..]).fill(0.0);
    w2.slice_mut(s![.., ..6]).fill(0.0);

    let x1 = z.dot(&w1.t()) + fill_normal(&mut rng, (n, d1), spec.noise_stds.0);
    let x2 = z.dot(&w2.t()) + fill_normal(&mut rng, (n, d2), spec.noise_stds.1);

    let ds = MultiViewDataset::new(
        vec![x1, x2],
        Some(labels.clone()),
        Some(vec!["high_dim".into(), "low_dim".into()]),
    )?;
    Ok((
        ds,
        ToyGroundTruth {
            z,
            w1,
            w2,
            labels,
            layout: spec.layout,
        },
    ))
}

/// Gaussian class clusters in a shared latent space, projected into views of
/// the requested widths with additive noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteredSpec {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub latent_dim: usize,
    pub view_dims: Vec<usize>,
    /// Standard deviation of the class centres around the origin.
    pub separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for ClusteredSpec {
    fn default() -> Self {
        Self {
            n_per_class: 60,
            n_classes: 10,
            latent_dim: 8,
            view_dims: vec![6, 47, 240],
            separation: 2.5,
            noise_std: 0.5,
            seed: 0,
        }
    }
}

pub fn generate_clustered(spec: &ClusteredSpec) -> Result<MultiViewDataset, DataError> {
    if spec.n_per_class == 0 || spec.n_classes < 2 || spec.latent_dim == 0 {
        return Err(DataError::Contract("clustered spec: empty sizes".into()));
    }
    if spec.view_dims.len() < 2 || spec.view_dims.contains(&0) {
        return Err(DataError::Contract(
            "clustered spec: need >= 2 positive view widths".into(),
        ));
    }
    let mut rng = stream(spec.seed, Stream::Data);
    let n = spec.n_per_class * spec.n_classes;
    let labels: Vec<usize> = (0..n).map(|i| i % spec.n_classes).collect();
    let centres = fill_normal(&mut rng, (spec.n_classes, spec.latent_dim), spec.separation);
    let mut latent = fill_normal(&mut rng, (n, spec.latent_dim), 1.0);
    for (i, &c) in labels.iter().enumerate() {
        let mut row = latent.row_mut(i);
        row += &centres.row(c);
    }
    let mut views = Vec::with_capacity(spec.view_dims.len());
    for &d in &spec.view_dims {
        let w = fill_normal(&mut rng, (d, spec.latent_dim), 1.0 / (spec.latent_dim as f64).sqrt());
        let x = latent.dot(&w.t()) + fill_normal(&mut rng, (n, d), spec.noise_std);
        views.push(x);
    }
    MultiViewDataset::new(views, Some(labels), None)
}
