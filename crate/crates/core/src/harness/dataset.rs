use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{stream, Stream};
use crate::score::GmmPrior;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    #[serde(rename = "gmm-2d")]
    Gmm2d,
    #[serde(rename = "blobs-8x8")]
    Blobs8,
    #[serde(rename = "blobs-16x16")]
    Blobs16,
}

impl DatasetKind {
    pub fn signal_shape(&self) -> Vec<usize> {
        match self {
            Self::Gmm2d => vec![2],
            Self::Blobs8 => vec![8, 8],
            Self::Blobs16 => vec![16, 16],
        }
    }
}

/// One diagonal mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Shape statistics of the blob images. Lengths are fractions of the side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobParams {
    pub min_blobs: usize,
    pub max_blobs: usize,
    pub min_width: f64,
    pub max_width: f64,
    /// Minor-to-major width ratio lower bound.
    pub min_aspect: f64,
    pub min_amplitude: f64,
    pub max_amplitude: f64,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            min_blobs: 1,
            max_blobs: 3,
            min_width: 0.08,
            max_width: 0.2,
            min_aspect: 0.4,
            min_amplitude: 0.6,
            max_amplitude: 1.0,
        }
    }
}

impl BlobParams {
    fn validate(&self) -> Result<()> {
        let ok = self.min_blobs >= 1
            && self.min_blobs <= self.max_blobs
            && 0.0 < self.min_width
            && self.min_width <= self.max_width
            && 0.0 < self.min_aspect
            && self.min_aspect <= 1.0
            && 0.0 < self.min_amplitude
            && self.min_amplitude <= self.max_amplitude;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("inconsistent blob parameters: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Seed of the training set; test signals use a derived seed.
    pub seed: u64,
    /// Mixture for `gmm-2d`; eight components on a ring by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<ComponentSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blobs: Option<BlobParams>,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, seed: u64) -> Self {
        Self { kind, seed, components: None, blobs: None }
    }

    /// The mixture behind a `gmm-2d` dataset.
    pub fn prior(&self) -> Result<GmmPrior> {
        if self.kind != DatasetKind::Gmm2d {
            return Err(invalid("only gmm-2d datasets have a closed-form prior"));
        }
        let comps = self.components.clone().unwrap_or_else(default_ring);
        if comps.is_empty() {
            return Err(invalid("gmm-2d needs at least one component"));
        }
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut vars = Vec::new();
        for c in comps {
            if c.mean.len() != 2 || c.var.len() != 2 {
                return Err(invalid("gmm-2d components need 2-D means and variances"));
            }
            weights.push(c.weight);
            means.push(Tensor::from_vec(c.mean));
            vars.push(Tensor::from_vec(c.var));
        }
        GmmPrior::diagonal(weights, means, vars)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DatasetKind::Gmm2d => {
                if self.blobs.is_some() {
                    return Err(invalid("blob parameters given for a gmm-2d dataset"));
                }
                self.prior().map(|_| ())
            }
            _ => {
                if self.components.is_some() {
                    return Err(invalid("mixture components given for a blob dataset"));
                }
                self.blobs.unwrap_or_default().validate()
            }
        }
    }
}

fn default_ring() -> Vec<ComponentSpec> {
    (0..8)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 8.0;
            ComponentSpec { weight: 1.0 / 8.0, mean: vec![0.6 * a.cos(), 0.6 * a.sin()], var: vec![0.005, 0.005] }
        })
        .collect()
}

/// Samples of one dataset, one signal per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: Vec<usize>,
    pub samples: Tensor,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample `i` in signal shape.
    pub fn signal(&self, i: usize) -> Tensor {
        Tensor::new(self.shape.clone(), self.samples.row(i).to_vec()).expect("row matches shape")
    }
}

/// Draw `count` signals from the dataset stream of `seed`.
pub fn generate_dataset(spec: &DatasetSpec, count: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if count == 0 {
        return Err(invalid("dataset must have at least one sample"));
    }
    let mut rng = stream(seed, Stream::Dataset);
    let shape = spec.kind.signal_shape();
    let samples = match spec.kind {
        DatasetKind::Gmm2d => spec.prior()?.sample(count, &mut rng)?,
        DatasetKind::Blobs8 | DatasetKind::Blobs16 => {
            let side = shape[0];
            let params = spec.blobs.unwrap_or_default();
            let mut data = Vec::with_capacity(count * side * side);
            for _ in 0..count {
                data.extend(blob_image(side, &params, &mut rng));
            }
            Tensor::new(vec![count, side * side], data)?
        }
    };
    Ok(Dataset { shape, samples })
}

fn blob_image<R: Rng + ?Sized>(side: usize, p: &BlobParams, rng: &mut R) -> Vec<f64> {
    let s = side as f64;
    let count = rng.random_range(p.min_blobs..=p.max_blobs);
    let mut acc = vec![0.0; side * side];
    for _ in 0..count {
        let cy = rng.random_range(0.15..=0.85) * s;
        let cx = rng.random_range(0.15..=0.85) * s;
        let major = rng.random_range(p.min_width..=p.max_width) * s;
        let minor = major * rng.random_range(p.min_aspect..=1.0);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let amp = rng.random_range(p.min_amplitude..=p.max_amplitude);
        let (sin, cos) = angle.sin_cos();
        for r in 0..side {
            for c in 0..side {
                // Pixel centres sit at half-integers.
                let dy = r as f64 + 0.5 - cy;
                let dx = c as f64 + 0.5 - cx;
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                acc[r * side + c] += amp * (-0.5 * (u * u / (major * major) + v * v / (minor * minor))).exp();
            }
        }
    }
    acc.into_iter().map(|a| 2.0 * a.min(1.0) - 1.0).collect()
}
