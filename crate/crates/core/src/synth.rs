//! Deterministic synthetic data: Voronoi ground truth, embedding fields with
//! known cluster structure, soft boundary maps and the exact distance
//! transform used in place of a learned one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::squared_edt;
use crate::tensor::{ColorImage, EmbeddingField, LabelMap, ScalarField};
use crate::unary::{softmax_in_place, UnaryField};

const SITE_RETRIES: usize = 1000;
const CENTER_RETRIES: usize = 100;
/// Preferred minimum distance between synthetic segment colors.
const MIN_COLOR_GAP: f64 = 0.3;

const STREAM_SITES: u64 = 0;
const STREAM_EMBEDDING: u64 = 1;
const STREAM_COLORS: u64 = 2;
const STREAM_POSTERIORS: u64 = 3;
const STREAM_EDGES: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub rng_seed: u64,
    pub height: usize,
    pub width: usize,
    /// Number of segments.
    pub k: usize,
    /// Embedding depth.
    pub n: usize,
    /// Distance between segment centers in embedding space.
    pub separation: f64,
    /// Per-channel standard deviation of the embedding noise.
    pub noise_sigma: f64,
    /// Distinct looks shared among segments: segment `l` is rendered with
    /// look `l % appearance_classes`. 0 gives every segment its own.
    pub appearance_classes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            height: 64,
            width: 64,
            k: 5,
            n: 8,
            separation: 8.0,
            noise_sigma: 1.0,
            appearance_classes: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(invalid("synthetic image dimensions must be positive"));
        }
        if self.k == 0 || self.k > self.height * self.width {
            return Err(invalid(format!(
                "segment count {} must be in 1..={}",
                self.k,
                self.height * self.width
            )));
        }
        if self.n == 0 {
            return Err(invalid("embedding depth must be positive"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(invalid("separation must be finite and >= 0"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid("noise_sigma must be finite and >= 0"));
        }
        Ok(())
    }

    /// Number of distinct looks for a map with `k` segments.
    fn looks(&self, k: usize) -> usize {
        match self.appearance_classes {
            0 => k,
            c => c.min(k),
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(stream);
        rng
    }
}

/// Assigns every pixel to its nearest site (squared Euclidean distance,
/// ties to the lower site index).
pub fn voronoi_partition(height: usize, width: usize, sites: &[(usize, usize)]) -> Result<LabelMap> {
    if sites.is_empty() {
        return Err(invalid("Voronoi partition needs at least one site"));
    }
    LabelMap::from_fn(height, width, |y, x| {
        let mut best = (i64::MAX, 0u32);
        for (k, &(sy, sx)) in sites.iter().enumerate() {
            let d = (y as i64 - sy as i64).pow(2) + (x as i64 - sx as i64).pow(2);
            if d < best.0 {
                best = (d, k as u32);
            }
        }
        best.1
    })
}

/// Voronoi ground truth from `k` distinct uniformly drawn pixel sites.
pub fn generate_segmentation(cfg: &SynthConfig) -> Result<LabelMap> {
    cfg.validate()?;
    let mut rng = cfg.rng(STREAM_SITES);
    let mut sites: Vec<(usize, usize)> = Vec::with_capacity(cfg.k);
    let mut retries = 0;
    while sites.len() < cfg.k {
        let site = (rng.gen_range(0..cfg.height), rng.gen_range(0..cfg.width));
        if sites.contains(&site) {
            retries += 1;
            if retries > SITE_RETRIES {
                return Err(Error::Sampling(format!(
                    "could not place {} distinct sites after {SITE_RETRIES} retries",
                    cfg.k
                )));
            }
            continue;
        }
        sites.push(site);
    }
    // Every site owns at least its own pixel, so all k labels occur.
    voronoi_partition(cfg.height, cfg.width, &sites)
}

fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}

/// `k <= n` random orthonormal vectors (Gram-Schmidt on Gaussian draws).
fn orthonormal_directions(k: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while dirs.len() < k {
        attempts += 1;
        if attempts > k * CENTER_RETRIES {
            return Err(Error::Sampling(format!("could not draw {k} orthonormal directions in {n} dimensions")));
        }
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for d in &dirs {
            let dot: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(d).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            dirs.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    Ok(dirs)
}

/// Segment centers with every pairwise distance `>= separation`.
///
/// With `k <= n` the centers are `separation / sqrt(2)` times `k` random
/// orthonormal directions, so every pair is exactly `separation` apart. Otherwise
/// Gaussian points are rescaled so their closest pair sits at `separation`.
pub fn segment_centers(
    k: usize,
    n: usize,
    separation: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    if k <= n {
        return orthonormal_directions(k, n, rng).map(|dirs| {
            let scale = separation / std::f64::consts::SQRT_2;
            dirs.into_iter()
                .map(|d| d.into_iter().map(|v| v * scale).collect())
                .collect()
        });
    }
    for _ in 0..CENTER_RETRIES {
        let points: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        let min = min_pairwise_distance(&points);
        if min > 0.0 && min.is_finite() {
            let scale = separation / min;
            return Ok(points
                .into_iter()
                .map(|p| p.into_iter().map(|v| v * scale).collect())
                .collect());
        }
    }
    Err(Error::Sampling(format!(
        "could not place {k} separated centers in {n} dimensions"
    )))
}

/// Embedding field whose vectors are the segment center plus isotropic
/// Gaussian noise.
pub fn generate_embeddings(labels: &LabelMap, cfg: &SynthConfig) -> Result<EmbeddingField> {
    cfg.validate()?;
    let mut rng = cfg.rng(STREAM_EMBEDDING);
    let looks = cfg.looks(labels.num_labels());
    let centers = segment_centers(looks, cfg.n, cfg.separation, &mut rng)?;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| invalid(e.to_string()))?;
    let mut data = Vec::with_capacity(labels.num_pixels() * cfg.n);
    for &l in labels.labels() {
        for &c in &centers[l as usize % looks] {
            let v = if cfg.noise_sigma > 0.0 {
                c + noise.sample(&mut rng)
            } else {
                c
            };
            data.push(v as f32);
        }
    }
    EmbeddingField::new(labels.height(), labels.width(), cfg.n, data)
}

/// Random segment colors, pairwise at least `MIN_COLOR_GAP` apart. The gap
/// shrinks when many segments make it hard to satisfy.
fn segment_colors(k: usize, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    let mut gap = MIN_COLOR_GAP;
    let mut colors: Vec<[f64; 3]> = Vec::with_capacity(k);
    let mut misses = 0;
    while colors.len() < k {
        let c = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let far = colors
            .iter()
            .all(|o| o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>() >= gap * gap);
        if far {
            colors.push(c);
            misses = 0;
        } else {
            misses += 1;
            if misses == SITE_RETRIES {
                gap *= 0.8;
                misses = 0;
            }
        }
    }
    colors
}

/// A color rendering of a label map: one random color per segment (kept
/// apart from the others) plus clamped Gaussian noise of standard deviation
/// `noise`, all in `[0, 1]` units.
pub fn generate_color_image(labels: &LabelMap, cfg: &SynthConfig, noise: f64) -> Result<ColorImage> {
    let mut rng = cfg.rng(STREAM_COLORS);
    let looks = cfg.looks(labels.num_labels());
    let colors = segment_colors(looks, &mut rng);
    let dist = Normal::new(0.0, noise.max(0.0)).map_err(|e| invalid(e.to_string()))?;
    let mut data = Vec::with_capacity(labels.num_pixels() * 3);
    for &l in labels.labels() {
        for c in colors[l as usize % looks] {
            let v = if noise > 0.0 { c + dist.sample(&mut rng) } else { c };
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    ColorImage::new(labels.height(), labels.width(), data)
}

/// Soft posteriors that favor the true label: per pixel, the softmax of a
/// one-hot logit vector plus Gaussian noise of standard deviation `noise`.
pub fn noisy_posteriors(labels: &LabelMap, cfg: &SynthConfig, noise: f64) -> Result<UnaryField> {
    let mut rng = cfg.rng(STREAM_POSTERIORS);
    let dist = Normal::new(0.0, noise).map_err(|e| invalid(e.to_string()))?;
    let k = labels.num_labels();
    let mut z = Vec::with_capacity(labels.num_pixels() * k);
    for &l in labels.labels() {
        let mut row: Vec<f64> = (0..k)
            .map(|c| f64::from(u8::from(c == l as usize)) + dist.sample(&mut rng))
            .collect();
        softmax_in_place(&mut row);
        z.extend(row);
    }
    UnaryField::new(labels.height(), labels.width(), k, z)
}

/// Pixels with at least one 4-neighbor carrying a different label.
pub fn boundary_pixels(labels: &LabelMap) -> Vec<bool> {
    let (h, w) = (labels.height(), labels.width());
    let l = labels.labels();
    let mut mask = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w && l[i] != l[i + 1] {
                mask[i] = true;
                mask[i + 1] = true;
            }
            if y + 1 < h && l[i] != l[i + w] {
                mask[i] = true;
                mask[i + w] = true;
            }
        }
    }
    mask
}

/// Soft edge-strength map: 1 on boundary pixels, decaying linearly to 0 over
/// `halo` pixels of Euclidean distance from the nearest boundary pixel.
pub fn edge_strength_from_labels(labels: &LabelMap, halo: f64) -> Result<ScalarField> {
    profile(&boundary_pixels(labels), labels.height(), labels.width(), halo)
}

fn profile(boundary: &[bool], h: usize, w: usize, halo: f64) -> Result<ScalarField> {
    if !(halo >= 0.0) {
        return Err(invalid("halo must be >= 0"));
    }
    if !boundary.iter().any(|&b| b) {
        return ScalarField::filled(h, w, 0.0);
    }
    let d2 = squared_edt(boundary, h, w);
    let data = d2
        .iter()
        .map(|&d2| {
            let d = d2.sqrt();
            if d == 0.0 {
                1.0
            } else if halo == 0.0 {
                0.0
            } else {
                (1.0 - d / halo).max(0.0) as f32
            }
        })
        .collect();
    ScalarField::new(h, w, data)
}

/// Corruptions applied to a clean edge-strength map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeNoise {
    /// Standard deviation of additive Gaussian noise.
    pub sigma: f64,
    /// Blur length of that noise, pixels (0 = independent per pixel).
    pub correlation: f64,
    /// Number of spurious straight edges drawn at random.
    pub clutter: usize,
    /// Length of each spurious edge, pixels.
    pub clutter_length: f64,
}

impl EdgeNoise {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.sigma, self.correlation, self.clutter_length];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("edge noise parameters must be finite and >= 0"));
        }
        Ok(())
    }
}

/// [`edge_strength_from_labels`] corrupted by `noise`: spurious straight
/// edges with the same profile as true ones, then additive Gaussian noise
/// (optionally blurred and rescaled back to `sigma`), clamped to `[0, 1]`.
pub fn noisy_edge_strength(labels: &LabelMap, cfg: &SynthConfig, halo: f64, noise: &EdgeNoise) -> Result<ScalarField> {
    noise.validate()?;
    let (h, w) = (labels.height(), labels.width());
    let mut boundary = boundary_pixels(labels);
    let mut rng = cfg.rng(STREAM_EDGES);
    for _ in 0..noise.clutter {
        let (y0, x0) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        let steps = (2.0 * noise.clutter_length).ceil() as usize;
        for s in 0..=steps {
            let t = s as f64 / 2.0;
            let (y, x) = (y0 + t * angle.sin(), x0 + t * angle.cos());
            if y < h as f64 && x >= 0.0 && x < w as f64 {
                boundary[y as usize * w + x as usize] = true;
            }
        }
    }
    let clean = profile(&boundary, h, w, halo)?;
    if noise.sigma == 0.0 {
        return Ok(clean);
    }
    let mut field: Vec<f64> = (0..h * w).map(|_| rng.sample(StandardNormal)).collect();
    if noise.correlation > 0.0 {
        field = blur(&field, h, w, noise.correlation);
        let mean = field.iter().sum::<f64>() / field.len() as f64;
        let sd = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / field.len() as f64).sqrt();
        if sd > 0.0 {
            field.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
    }
    let data = clean
        .data()
        .iter()
        .zip(&field)
        .map(|(&v, &n)| (f64::from(v) + noise.sigma * n).clamp(0.0, 1.0) as f32)
        .collect();
    ScalarField::new(h, w, data)
}

/// Separable Gaussian blur with replicated borders.
fn blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    let pass = |src: &[f64], len: usize, stride: usize, lines: usize, step: usize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..lines {
            for i in 0..len {
                let acc: f64 = taps
                    .iter()
                    .zip(-r..=r)
                    .map(|(t, d)| t * src[line * step + (i as isize + d).clamp(0, len as isize - 1) as usize * stride])
                    .sum();
                out[line * step + i * stride] = acc / total;
            }
        }
        out
    };
    let rows = pass(src, w, 1, h, w);
    pass(&rows, h, w, w, 1)
}

/// Exact Euclidean distance from every pixel to the nearest boundary pixel,
/// where boundary pixels are those with strength strictly above `tau`.
pub fn exact_distance_transform(strength: &ScalarField, tau: f32) -> Result<ScalarField> {
    let mask = strength.mask_above(tau);
    if !mask.iter().any(|&b| b) {
        return Err(Error::EmptyBoundary);
    }
    let d2 = squared_edt(&mask, strength.height(), strength.width());
    ScalarField::new(
        strength.height(),
        strength.width(),
        d2.into_iter().map(|v| v.sqrt() as f32).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64, h: usize, w: usize, k: usize) -> SynthConfig {
        SynthConfig {
            rng_seed: seed,
            height: h,
            width: w,
            k,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn single_segment() {
        let m = generate_segmentation(&cfg(3, 8, 8, 1)).unwrap();
        assert_eq!(m.num_labels(), 1);
    }

    #[test]
    fn opposite_corner_sites_split_on_the_diagonal() {
        let m = voronoi_partition(4, 4, &[(0, 0), (3, 3)]).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expected = if x + y <= 3 { 0 } else { 1 };
                assert_eq!(m.get(y, x), expected, "({y},{x})");
            }
        }
        // Off-diagonal cells are symmetric about the anti-diagonal bisector.
        assert_eq!(m.get(0, 1), 1 - m.get(3, 2));
    }

    #[test]
    fn segmentation_is_deterministic() {
        let c = cfg(7, 32, 32, 4);
        assert_eq!(generate_segmentation(&c).unwrap(), generate_segmentation(&c).unwrap());
        assert_eq!(generate_segmentation(&c).unwrap().num_labels(), 4);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_segmentation(&cfg(0, 2, 2, 5)).is_err());
        assert!(generate_segmentation(&cfg(0, 2, 2, 0)).is_err());
        let mut c = cfg(0, 4, 4, 2);
        c.separation = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn noise_free_embeddings_separate_segments() {
        let c = SynthConfig {
            noise_sigma: 0.0,
            separation: 5.0,
            ..cfg(1, 16, 16, 3)
        };
        let labels = generate_segmentation(&c).unwrap();
        let emb = generate_embeddings(&labels, &c).unwrap();
        for i in (0..256).step_by(7) {
            for j in (0..256).step_by(5) {
                let d: f64 = emb
                    .pixel(i)
                    .iter()
                    .zip(emb.pixel(j))
                    .map(|(a, b)| f64::from(a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if labels.labels()[i] == labels.labels()[j] {
                    assert_eq!(d, 0.0);
                } else {
                    assert!(d >= 5.0 - 1e-5, "{d}");
                }
            }
        }
    }

    #[test]
    fn zero_separation_and_noise_gives_identical_pixels() {
        let c = SynthConfig {
            noise_sigma: 0.0,
            separation: 0.0,
            ..cfg(2, 8, 8, 3)
        };
        let labels = generate_segmentation(&c).unwrap();
        let emb = generate_embeddings(&labels, &c).unwrap();
        assert!(emb.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthogonal_centers_are_equidistant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let centers = segment_centers(5, 8, 8.0, &mut rng).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = centers[i].iter().zip(&centers[j]).map(|(a, b)| a * b).sum();
                let expected = if i == j { 32.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-9, "{i} {j} {dot}");
            }
        }
    }

    #[test]
    fn segment_colors_keep_their_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let colors = segment_colors(6, &mut rng);
        for i in 0..6 {
            for j in i + 1..6 {
                let d: f64 = colors[i].iter().zip(&colors[j]).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d.sqrt() >= MIN_COLOR_GAP);
            }
        }
        // Far more segments than fit at the preferred gap still terminates.
        assert_eq!(segment_colors(400, &mut rng).len(), 400);
    }

    #[test]
    fn shared_looks_repeat_centers_and_colors() {
        let cfg = SynthConfig {
            height: 24,
            width: 24,
            k: 6,
            noise_sigma: 0.0,
            appearance_classes: 2,
            ..SynthConfig::default()
        };
        let labels = generate_segmentation(&cfg).unwrap();
        let emb = generate_embeddings(&labels, &cfg).unwrap();
        let img = generate_color_image(&labels, &cfg, 0.0).unwrap();
        let first = |l: u32| labels.labels().iter().position(|&v| v == l).unwrap();
        for l in 0..6u32 {
            let (p, q) = (first(l), first(l % 2));
            assert_eq!(emb.pixel(p), emb.pixel(q));
            assert_eq!(img.pixel(p), img.pixel(q));
        }
        assert_ne!(emb.pixel(first(0)), emb.pixel(first(1)));
    }

    #[test]
    fn clutter_adds_edges_away_from_boundaries() {
        let cfg = SynthConfig {
            height: 40,
            width: 40,
            k: 2,
            ..SynthConfig::default()
        };
        let labels = generate_segmentation(&cfg).unwrap();
        let clean = edge_strength_from_labels(&labels, 2.0).unwrap();
        let noise = EdgeNoise {
            clutter: 5,
            clutter_length: 10.0,
            ..EdgeNoise::default()
        };
        let cluttered = noisy_edge_strength(&labels, &cfg, 2.0, &noise).unwrap();
        let ones = |f: &ScalarField| f.data().iter().filter(|&&v| v == 1.0).count();
        assert!(ones(&cluttered) > ones(&clean));
        // Clutter only ever raises the strength.
        assert!(clean.data().iter().zip(cluttered.data()).all(|(a, b)| b >= a));
        assert_eq!(noisy_edge_strength(&labels, &cfg, 2.0, &EdgeNoise::default()).unwrap(), clean);
    }

    #[test]
    fn correlated_noise_keeps_its_scale() {
        let cfg = SynthConfig {
            height: 64,
            width: 64,
            k: 1,
            ..SynthConfig::default()
        };
        let labels = generate_segmentation(&cfg).unwrap();
        let noise = EdgeNoise {
            sigma: 0.1,
            correlation: 2.0,
            ..EdgeNoise::default()
        };
        // One segment: no boundaries, so clamping only cuts the lower half.
        let f = noisy_edge_strength(&labels, &cfg, 2.0, &noise).unwrap();
        let pos: Vec<f64> = f.data().iter().map(|&v| f64::from(v)).filter(|&v| v > 0.0).collect();
        let rms = (pos.iter().map(|v| v * v).sum::<f64>() / pos.len() as f64).sqrt();
        assert!((rms - 0.1).abs() < 0.02, "{rms}");
        // Neighbors are strongly correlated.
        let d = f.data();
        let same = (0..64 * 63).filter(|&i| (d[i] > 0.0) == (d[i + 64] > 0.0)).count();
        assert!(same as f64 > 0.8 * (64.0 * 63.0));
    }

    #[test]
    fn more_segments_than_dimensions_still_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let centers = segment_centers(7, 2, 3.0, &mut rng).unwrap();
        assert!(min_pairwise_distance(&centers) >= 3.0 - 1e-9);
        let one_d = segment_centers(4, 1, 2.0, &mut rng).unwrap();
        assert!(min_pairwise_distance(&one_d) >= 2.0 - 1e-9);
    }

    #[test]
    fn noisy_segment_mean_is_near_its_center() {
        let c = SynthConfig {
            rng_seed: 9,
            height: 32,
            width: 32,
            k: 2,
            n: 2,
            separation: 10.0,
            noise_sigma: 0.5,
            ..SynthConfig::default()
        };
        let labels = voronoi_partition(32, 32, &[(0, 0), (31, 31)]).unwrap();
        let emb = generate_embeddings(&labels, &c).unwrap();
        // The centers are the first draw on the embedding stream.
        let centers = segment_centers(2, 2, 10.0, &mut c.rng(STREAM_EMBEDDING)).unwrap();
        let norm0 = centers[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm0 - 10.0 / std::f64::consts::SQRT_2).abs() < 1e-9);
        let members: Vec<usize> = (0..1024).filter(|&i| labels.labels()[i] == 0).collect();
        let count = members.len() as f64;
        for ch in 0..2 {
            let mean: f64 =
                members.iter().map(|&i| f64::from(emb.pixel(i)[ch])).sum::<f64>() / count;
            assert!((mean - centers[0][ch]).abs() <= 3.0 * 0.5 / count.sqrt(), "{mean}");
        }
    }

    #[test]
    fn edge_strength_of_single_label_is_zero() {
        let m = LabelMap::new(3, 3, vec![0; 9]).unwrap();
        assert!(edge_strength_from_labels(&m, 2.0).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edge_strength_vertical_split() {
        let m = LabelMap::from_fn(4, 8, |_, x| u32::from(x >= 4)).unwrap();
        let e0 = edge_strength_from_labels(&m, 0.0).unwrap();
        for x in 0..8 {
            let v = if x == 3 || x == 4 { 1.0 } else { 0.0 };
            assert_eq!(e0.get(1, x), v);
        }
        let e2 = edge_strength_from_labels(&m, 2.0).unwrap();
        let row: Vec<f32> = (0..8).map(|x| e2.get(2, x)).collect();
        assert_eq!(row, vec![0.0, 0.0, 0.5, 1.0, 1.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn dt_of_all_boundary_is_zero() {
        let s = ScalarField::filled(3, 4, 1.0).unwrap();
        assert!(exact_distance_transform(&s, 0.5).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dt_single_corner_pixel() {
        let s = ScalarField::from_fn(3, 3, |y, x| if y == 0 && x == 0 { 1.0 } else { 0.0 }).unwrap();
        let dt = exact_distance_transform(&s, 0.5).unwrap();
        assert_eq!(dt.get(2, 2), (8f64).sqrt() as f32);
        assert_eq!(dt.get(1, 0), 1.0);
    }

    #[test]
    fn dt_without_boundary_is_an_error() {
        let s = ScalarField::filled(3, 3, 0.2).unwrap();
        assert!(matches!(exact_distance_transform(&s, 0.5), Err(Error::EmptyBoundary)));
    }
}
