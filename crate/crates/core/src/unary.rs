//! Per-seed Gaussian models and the per-pixel posterior over seeds.
//!
//! The likelihood of pixel `i` under seed `j` is
//! `exp(-C_r * D_r(i, j) - C_g * D_g(i, j))`, where `D_r` is the squared
//! Mahalanobis distance to the seed's diagonal Gaussian and `D_g` the
//! geodesic distance to the seed region. Normalizing over seeds (equal priors)
//! gives the posterior `Z`; any constant factor on the likelihood cancels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dims, invalid, Result};
use crate::geodesic::GeodesicField;
use crate::seeds::SeedRegionSet;
use crate::tensor::{EmbeddingField, LabelMap};

/// Diagonal Gaussian per seed.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSegmentModel {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl GaussianSegmentModel {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnaryParams {
    /// Weight of the Mahalanobis term.
    pub c_r: f64,
    /// Weight of the geodesic term.
    pub c_g: f64,
    /// Lower bound on every per-channel variance.
    pub variance_floor: f64,
}

impl Default for UnaryParams {
    fn default() -> Self {
        Self {
            c_r: 1.25,
            c_g: 0.5,
            variance_floor: 1e-4,
        }
    }
}

impl UnaryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_r >= 0.0 && self.c_g >= 0.0) || !(self.c_r.is_finite() && self.c_g.is_finite()) {
            return Err(invalid("C_r and C_g must be finite and >= 0"));
        }
        if self.c_r == 0.0 && self.c_g == 0.0 {
            return Err(invalid("at least one of C_r, C_g must be positive"));
        }
        if !(self.variance_floor > 0.0) {
            return Err(invalid("variance floor must be > 0"));
        }
        Ok(())
    }
}

/// Per-pixel posterior over `K` seeds, row-major `(pixel, seed)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnaryField {
    height: usize,
    width: usize,
    k: usize,
    z: Vec<f64>,
}

impl UnaryField {
    /// Wraps posterior rows, checking they are probability vectors.
    pub fn new(height: usize, width: usize, k: usize, z: Vec<f64>) -> Result<Self> {
        if k == 0 || z.len() != height * width * k {
            return Err(invalid("posterior payload does not match H x W x K"));
        }
        for (p, row) in z.chunks_exact(k).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-6 {
                return Err(invalid(format!("posterior row {p} is not a probability vector")));
            }
        }
        Ok(Self { height, width, k, z })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    #[inline]
    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.z[pixel * self.k..(pixel + 1) * self.k]
    }

    /// Embedding-kind view (`N = K`) for inspection and DGST export.
    pub fn to_embedding(&self) -> Result<EmbeddingField> {
        EmbeddingField::new(self.height, self.width, self.k, self.z.iter().map(|&v| v as f32).collect())
    }
}

/// Fits a diagonal Gaussian to each seed: member mean and population
/// variance per channel, floored at `floor`.
pub fn fit_segment_gaussians(emb: &EmbeddingField, seeds: &SeedRegionSet, floor: f64) -> Result<GaussianSegmentModel> {
    if (emb.height(), emb.width()) != (seeds.height(), seeds.width()) {
        return Err(dims("embedding and seeds differ in size"));
    }
    if !(floor > 0.0) {
        return Err(invalid("variance floor must be > 0"));
    }
    let n = emb.depth();
    let (means, variances) = seeds
        .regions()
        .par_iter()
        .map(|r| {
            let count = r.len() as f64;
            let mut mean = vec![0.0; n];
            for &p in r {
                for (m, &v) in mean.iter_mut().zip(emb.pixel(p)) {
                    *m += f64::from(v);
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            let mut var = vec![0.0; n];
            for &p in r {
                for ((s, &v), m) in var.iter_mut().zip(emb.pixel(p)).zip(&mean) {
                    *s += (f64::from(v) - m).powi(2);
                }
            }
            var.iter_mut().for_each(|s| *s = (*s / count).max(floor));
            (mean, var)
        })
        .unzip();
    Ok(GaussianSegmentModel { means, variances })
}

/// Squared Mahalanobis distance of `r` to seed `j` under a diagonal covariance.
pub fn mahalanobis_sq<T: Copy + Into<f64>>(r: &[T], model: &GaussianSegmentModel, j: usize) -> Result<f64> {
    let (mean, var) = (&model.means[j], &model.variances[j]);
    if r.len() != mean.len() {
        return Err(dims(format!("vector depth {} vs model depth {}", r.len(), mean.len())));
    }
    Ok(r.iter()
        .zip(mean)
        .zip(var)
        .map(|((&x, m), v)| (x.into() - m).powi(2) / v)
        .sum())
}

/// Normalizes log-likelihoods into probabilities in place (max-subtracted
/// softmax). A row with no finite entry becomes uniform.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|v| *v = u);
        return;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Posterior of every pixel over the seeds.
pub fn posterior_field(
    emb: &EmbeddingField,
    model: &GaussianSegmentModel,
    geo: &[GeodesicField],
    params: &UnaryParams,
) -> Result<UnaryField> {
    params.validate()?;
    let k = model.len();
    if k == 0 {
        return Err(invalid("posterior needs at least one seed"));
    }
    if geo.len() != k {
        return Err(dims(format!("{} geodesic fields for {k} seeds", geo.len())));
    }
    if model.depth() != emb.depth() {
        return Err(dims("model depth differs from embedding depth"));
    }
    if geo.iter().any(|g| (g.height(), g.width()) != (emb.height(), emb.width())) {
        return Err(dims("geodesic field size differs from embedding"));
    }
    let mut z = vec![0.0; emb.num_pixels() * k];
    z.par_chunks_exact_mut(k).enumerate().for_each(|(p, row)| {
        let r = emb.pixel(p);
        for (j, slot) in row.iter_mut().enumerate() {
            let mut log_z = 0.0;
            if params.c_r > 0.0 {
                let d_r = mahalanobis_sq(r, model, j).expect("depth checked above");
                log_z -= params.c_r * d_r;
            }
            if params.c_g > 0.0 {
                log_z -= params.c_g * geo[j].get(p);
            }
            *slot = log_z;
        }
        softmax_in_place(row);
    });
    Ok(UnaryField {
        height: emb.height(),
        width: emb.width(),
        k,
        z,
    })
}

/// Index of the largest entry, ties to the lowest index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Independent per-pixel decision: the most probable seed, relabeled to
/// contiguous ids.
pub fn unary_argmax(z: &UnaryField) -> Result<LabelMap> {
    let labels = z.z.chunks_exact(z.k).map(|row| argmax(row) as u32).collect();
    LabelMap::new(z.height, z.width, labels)
}
