//! Representation-quality tools: contrastive losses, the same-segment pixel
//! pair classification protocol and PCA virtual colors.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::distributions::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dims, invalid, Error, Result};
use crate::tensor::{ColorImage, EmbeddingField, LabelMap};

/// Dissimilarity between two representation vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
}

impl Metric {
    pub fn distance<A, B>(&self, a: &[A], b: &[B]) -> Result<f64>
    where
        A: Copy + Into<f64>,
        B: Copy + Into<f64>,
    {
        if a.len() != b.len() {
            return Err(dims(format!("vector depths {} and {} differ", a.len(), b.len())));
        }
        let diffs = a.iter().zip(b).map(|(&x, &y)| x.into() - y.into());
        Ok(match self {
            Metric::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::Manhattan => diffs.map(f64::abs).sum(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub margin: f64,
    pub metric: Metric,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            margin: 1.0,
            metric: Metric::Euclidean,
        }
    }
}

impl LossParams {
    fn check(&self) -> Result<()> {
        if self.margin >= 0.0 {
            Ok(())
        } else {
            Err(invalid("margin must be >= 0"))
        }
    }
}

/// Pairwise contrastive loss: squared distance for same-segment pairs,
/// un-squared hinge `max(0, m - d)` for different-segment pairs.
pub fn siamese_loss<A, B>(ri: &[A], rj: &[B], same: bool, params: &LossParams) -> Result<f64>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    params.check()?;
    let d = params.metric.distance(ri, rj)?;
    Ok(if same {
        d * d
    } else {
        (params.margin - d).max(0.0)
    })
}

/// Triplet loss `d(a, p)^2 + max(0, m - d(a, n))`.
pub fn triplet_loss<T: Copy + Into<f64>>(
    anchor: &[T],
    positive: &[T],
    negative: &[T],
    params: &LossParams,
) -> Result<f64> {
    params.check()?;
    let dp = params.metric.distance(anchor, positive)?;
    let dn = params.metric.distance(anchor, negative)?;
    Ok(dp * dp + (params.margin - dn).max(0.0))
}

/// Sum of [`siamese_loss`] over a pair dataset on an embedding field.
pub fn siamese_batch_loss(emb: &EmbeddingField, pairs: &PairDataset, params: &LossParams) -> Result<f64> {
    pairs.check_dims(emb.height(), emb.width())?;
    pairs.pairs.iter().try_fold(0.0, |acc, p| {
        Ok(acc + siamese_loss(emb.pixel(p.i), emb.pixel(p.j), p.same, params)?)
    })
}

/// Sum of [`triplet_loss`] over `(anchor, positive, negative)` pixel triples.
pub fn triplet_batch_loss(
    emb: &EmbeddingField,
    triplets: &[(usize, usize, usize)],
    params: &LossParams,
) -> Result<f64> {
    let n = emb.num_pixels();
    triplets.iter().try_fold(0.0, |acc, &(a, p, q)| {
        if a >= n || p >= n || q >= n {
            return Err(invalid("triplet pixel index out of range"));
        }
        Ok(acc + triplet_loss(emb.pixel(a), emb.pixel(p), emb.pixel(q), params)?)
    })
}

/// One labeled pixel pair (row-major pixel indices).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelPair {
    pub i: usize,
    pub j: usize,
    pub same: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairDataset {
    pub height: usize,
    pub width: usize,
    pub pairs: Vec<PixelPair>,
}

#[derive(Serialize, Deserialize)]
struct PairRow {
    i_y: usize,
    i_x: usize,
    j_y: usize,
    j_x: usize,
    label: u8,
}

impl PairDataset {
    fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        if (self.height, self.width) != (height, width) {
            return Err(dims(format!(
                "pairs were sampled on {}x{}, field is {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn same_fraction(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().filter(|p| p.same).count() as f64 / self.pairs.len() as f64
    }

    /// Writes the pairs as CSV with header `i_y,i_x,j_y,j_x,label`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for p in &self.pairs {
            w.serialize(PairRow {
                i_y: p.i / self.width,
                i_x: p.i % self.width,
                j_y: p.j / self.width,
                j_x: p.j % self.width,
                label: u8::from(p.same),
            })?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, height: usize, width: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut pairs = Vec::new();
        for row in r.deserialize() {
            let row: PairRow = row?;
            if row.i_y >= height || row.j_y >= height || row.i_x >= width || row.j_x >= width {
                return Err(invalid("pair coordinate out of range"));
            }
            let (i, j) = (row.i_y * width + row.i_x, row.j_y * width + row.j_x);
            if i == j {
                return Err(invalid("pair joins a pixel with itself"));
            }
            pairs.push(PixelPair {
                i,
                j,
                same: row.label != 0,
            });
        }
        Ok(Self {
            height,
            width,
            pairs,
        })
    }
}

/// Class-balanced pair sample: `ceil(count/2)` same-segment pairs and
/// `floor(count/2)` different-segment pairs, each uniform over all
/// qualifying unordered pairs of distinct pixels.
pub fn sample_pairs(labels: &LabelMap, count: usize, rng_seed: u64) -> Result<PairDataset> {
    let n_same = count.div_ceil(2);
    let n_diff = count / 2;
    let regions = labels.regions();
    let areas: Vec<usize> = regions.iter().map(Vec::len).collect();
    let total = labels.num_pixels();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut pairs = Vec::with_capacity(count);

    if n_same > 0 {
        let weights: Vec<f64> = areas.iter().map(|&a| (a * a.saturating_sub(1)) as f64).collect();
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::Sampling("no segment has two pixels".into()));
        }
        let pick = WeightedIndex::new(&weights).map_err(|e| Error::Sampling(e.to_string()))?;
        for _ in 0..n_same {
            let region = &regions[rng.sample(&pick)];
            let a = rng.gen_range(0..region.len());
            let mut b = rng.gen_range(0..region.len() - 1);
            if b >= a {
                b += 1;
            }
            pairs.push(PixelPair {
                i: region[a],
                j: region[b],
                same: true,
            });
        }
    }
    if n_diff > 0 {
        if labels.num_labels() < 2 {
            return Err(Error::SingleClass(
                "different-segment pairs need at least two segments".into(),
            ));
        }
        // Choose i with weight (P - |segment(i)|), then j uniformly outside
        // segment(i): every ordered qualifying pair is equally likely.
        let weights: Vec<f64> = areas.iter().map(|&a| (a * (total - a)) as f64).collect();
        let pick = WeightedIndex::new(&weights).map_err(|e| Error::Sampling(e.to_string()))?;
        for _ in 0..n_diff {
            let li = rng.sample(&pick);
            let i = regions[li][rng.gen_range(0..areas[li])];
            let mut r = rng.gen_range(0..total - areas[li]);
            let mut lj = 0;
            loop {
                if lj != li {
                    if r < areas[lj] {
                        break;
                    }
                    r -= areas[lj];
                }
                lj += 1;
            }
            pairs.push(PixelPair {
                i,
                j: regions[lj][r],
                same: false,
            });
        }
    }
    pairs.shuffle(&mut rng);
    Ok(PairDataset {
        height: labels.height(),
        width: labels.width(),
        pairs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairThreshold {
    pub threshold: f64,
    pub validation_accuracy: f64,
}

fn pair_distances(emb: &EmbeddingField, pairs: &PairDataset) -> Result<Vec<f64>> {
    pairs.check_dims(emb.height(), emb.width())?;
    pairs
        .pairs
        .iter()
        .map(|p| Metric::Euclidean.distance(emb.pixel(p.i), emb.pixel(p.j)))
        .collect()
}

/// Learns the distance threshold (pairs closer than it are called "same")
/// maximizing validation accuracy.
///
/// Candidates are the midpoints between consecutive distinct distances plus
/// two sentinels: `0` (every pair called different) and `max + 1` (every pair
/// called same). Ties go to the smaller threshold.
pub fn learn_threshold(emb: &EmbeddingField, validation: &PairDataset) -> Result<PairThreshold> {
    let d = pair_distances(emb, validation)?;
    let n_same = validation.pairs.iter().filter(|p| p.same).count();
    if n_same == 0 || n_same == d.len() {
        return Err(Error::SingleClass("validation set needs both classes".into()));
    }
    let mut order: Vec<(f64, bool)> = d.iter().copied().zip(validation.pairs.iter().map(|p| p.same)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = order.len();

    // Threshold 0: all called different; correct = number of different pairs.
    let mut correct = n - n_same;
    let mut best = (correct, 0.0);
    let mut k = 0;
    while k < n {
        let value = order[k].0;
        while k < n && order[k].0 == value {
            if order[k].1 {
                correct += 1;
            } else {
                correct -= 1;
            }
            k += 1;
        }
        let t = if k < n {
            0.5 * (value + order[k].0)
        } else {
            value + 1.0
        };
        if correct > best.0 {
            best = (correct, t);
        }
    }
    Ok(PairThreshold {
        threshold: best.1,
        validation_accuracy: best.0 as f64 / n as f64,
    })
}

/// Fraction of pairs where `(distance < threshold) == same`.
pub fn pair_accuracy(emb: &EmbeddingField, test: &PairDataset, t: &PairThreshold) -> Result<f64> {
    if test.pairs.is_empty() {
        return Err(invalid("test pair set is empty"));
    }
    let d = pair_distances(emb, test)?;
    let correct = d
        .iter()
        .zip(&test.pairs)
        .filter(|(&d, p)| (d < t.threshold) == p.same)
        .count();
    Ok(correct as f64 / d.len() as f64)
}

/// Per-image principal axes of the pixel representations.
#[derive(Clone, Debug)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Up to three unit-norm principal directions, largest variance first.
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

pub fn pca_projection(emb: &EmbeddingField) -> Result<PcaProjection> {
    let (p, n) = (emb.num_pixels(), emb.depth());
    if p < 2 {
        return Err(invalid("PCA needs at least two pixels"));
    }
    let mut mean = vec![0.0; n];
    for i in 0..p {
        for (m, &v) in mean.iter_mut().zip(emb.pixel(i)) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= p as f64);
    let mut cov = DMatrix::<f64>::zeros(n, n);
    let mut centered = vec![0.0; n];
    for i in 0..p {
        for ((c, &v), m) in centered.iter_mut().zip(emb.pixel(i)).zip(&mean) {
            *c = f64::from(v) - m;
        }
        for a in 0..n {
            let ca = centered[a];
            for b in a..n {
                cov[(a, b)] += ca * centered[b];
            }
        }
    }
    for a in 0..n {
        for b in a..n {
            let v = cov[(a, b)] / p as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = 1e-12 * top.max(1.0);
    let mut components = Vec::new();
    let mut variances = Vec::new();
    for &k in order.iter().take(3) {
        let lambda = eig.eigenvalues[k];
        if lambda <= tol {
            break;
        }
        components.push(eig.eigenvectors.column(k).iter().copied().collect());
        variances.push(lambda);
    }
    Ok(PcaProjection {
        mean,
        components,
        variances,
    })
}

/// Renders an embedding field as RGB by projecting onto its top three
/// principal components, min-max normalizing each channel. Channels beyond
/// the available rank are filled with 0.5.
pub fn pca_virtual_colors(emb: &EmbeddingField) -> Result<ColorImage> {
    let proj = pca_projection(emb)?;
    let p = emb.num_pixels();
    let mut channels = vec![vec![0.5f64; p]; 3];
    for (c, dir) in proj.components.iter().enumerate() {
        let values: Vec<f64> = (0..p)
            .map(|i| {
                emb.pixel(i)
                    .iter()
                    .zip(&proj.mean)
                    .zip(dir)
                    .map(|((&v, m), d)| (f64::from(v) - m) * d)
                    .sum()
            })
            .collect();
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi > lo {
            channels[c] = values.iter().map(|v| (v - lo) / (hi - lo)).collect();
        }
    }
    let mut data = Vec::with_capacity(p * 3);
    for i in 0..p {
        for ch in &channels {
            data.push(ch[i].clamp(0.0, 1.0) as f32);
        }
    }
    ColorImage::new(emb.height(), emb.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_embeddings, voronoi_partition, SynthConfig};

    const P: LossParams = LossParams {
        margin: 2.0,
        metric: Metric::Euclidean,
    };

    #[test]
    fn siamese_examples() {
        assert_eq!(siamese_loss(&[1.0f64, 2.0], &[1.0f64, 2.0], true, &P).unwrap(), 0.0);
        assert_eq!(siamese_loss(&[0.0f64, 0.0], &[3.0f64, 0.0], false, &P).unwrap(), 0.0);
        assert_eq!(siamese_loss(&[0.0f64, 0.0], &[1.0f64, 0.0], false, &P).unwrap(), 1.0);
        assert_eq!(siamese_loss(&[0.0f64, 0.0], &[3.0f64, 0.0], true, &P).unwrap(), 9.0);
    }

    #[test]
    fn triplet_examples() {
        let p1 = LossParams {
            margin: 1.0,
            ..P
        };
        assert_eq!(triplet_loss(&[0.0f64, 0.0], &[0.0, 0.0], &[1.0, 0.0], &p1).unwrap(), 0.0);
        assert_eq!(triplet_loss(&[0.0f64, 0.0], &[0.0, 1.0], &[0.0, 0.5], &p1).unwrap(), 1.5);
    }

    #[test]
    fn depth_mismatch_is_an_error() {
        assert!(siamese_loss(&[0.0f64], &[0.0f64, 1.0], true, &P).is_err());
        assert!(triplet_loss(&[0.0f64], &[0.0], &[0.0, 1.0], &P).is_err());
    }

    #[test]
    fn manhattan_metric() {
        assert_eq!(Metric::Manhattan.distance(&[0.0f64, 0.0], &[1.0f64, -2.0]).unwrap(), 3.0);
    }

    fn two_halves() -> LabelMap {
        LabelMap::from_fn(6, 6, |_, x| u32::from(x >= 3)).unwrap()
    }

    #[test]
    fn sampling_is_balanced_consistent_and_deterministic() {
        let labels = two_halves();
        let a = sample_pairs(&labels, 10, 3).unwrap();
        assert_eq!(a.pairs.iter().filter(|p| p.same).count(), 5);
        assert_eq!(a, sample_pairs(&labels, 10, 3).unwrap());
        let l = labels.labels();
        for p in &a.pairs {
            assert_ne!(p.i, p.j);
            assert_eq!(p.same, l[p.i] == l[p.j]);
        }
        let odd = sample_pairs(&labels, 7, 1).unwrap();
        assert_eq!(odd.pairs.iter().filter(|p| p.same).count(), 4);
    }

    #[test]
    fn single_segment_cannot_give_different_pairs() {
        let labels = LabelMap::new(2, 2, vec![0; 4]).unwrap();
        assert!(matches!(sample_pairs(&labels, 4, 0), Err(Error::SingleClass(_))));
    }

    fn line_field(values: &[f32]) -> EmbeddingField {
        EmbeddingField::new(1, values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn threshold_between_two_pairs() {
        // pixels: 0 at 0, 1 at 1, 2 at 3 -> d(0,1)=1 same, d(0,2)=3 different.
        let emb = line_field(&[0.0, 1.0, 3.0]);
        let val = PairDataset {
            height: 1,
            width: 3,
            pairs: vec![
                PixelPair { i: 0, j: 1, same: true },
                PixelPair { i: 0, j: 2, same: false },
            ],
        };
        let t = learn_threshold(&emb, &val).unwrap();
        assert_eq!(t.threshold, 2.0);
        assert_eq!(t.validation_accuracy, 1.0);
    }

    #[test]
    fn inverted_data_keeps_sentinel_accuracy() {
        let emb = line_field(&[0.0, 5.0, 1.0]);
        let val = PairDataset {
            height: 1,
            width: 3,
            pairs: vec![
                PixelPair { i: 0, j: 1, same: true },
                PixelPair { i: 0, j: 2, same: false },
                PixelPair { i: 1, j: 2, same: true },
            ],
        };
        let t = learn_threshold(&emb, &val).unwrap();
        assert!(t.validation_accuracy >= 2.0 / 3.0);
    }

    #[test]
    fn single_class_validation_is_an_error() {
        let emb = line_field(&[0.0, 1.0]);
        let val = PairDataset {
            height: 1,
            width: 2,
            pairs: vec![PixelPair { i: 0, j: 1, same: true }],
        };
        assert!(matches!(learn_threshold(&emb, &val), Err(Error::SingleClass(_))));
    }

    #[test]
    fn noise_free_field_is_perfectly_separable() {
        let labels = voronoi_partition(16, 16, &[(2, 2), (12, 5), (7, 14)]).unwrap();
        let cfg = SynthConfig {
            height: 16,
            width: 16,
            k: 3,
            n: 4,
            separation: 4.0,
            noise_sigma: 0.0,
            rng_seed: 0,
            ..SynthConfig::default()
        };
        let emb = generate_embeddings(&labels, &cfg).unwrap();
        let val = sample_pairs(&labels, 200, 1).unwrap();
        let t = learn_threshold(&emb, &val).unwrap();
        assert!(t.threshold > 0.0 && t.threshold < 4.0);
        assert_eq!(t.validation_accuracy, 1.0);
        let test = sample_pairs(&labels, 200, 2).unwrap();
        assert_eq!(pair_accuracy(&emb, &test, &t).unwrap(), 1.0);
        let all_same = PairThreshold {
            threshold: f64::INFINITY,
            validation_accuracy: 0.0,
        };
        assert_eq!(pair_accuracy(&emb, &test, &all_same).unwrap(), test.same_fraction());
    }

    #[test]
    fn empty_test_set_is_an_error() {
        let emb = line_field(&[0.0, 1.0]);
        let empty = PairDataset {
            height: 1,
            width: 2,
            pairs: vec![],
        };
        let t = PairThreshold {
            threshold: 1.0,
            validation_accuracy: 1.0,
        };
        assert!(pair_accuracy(&emb, &empty, &t).is_err());
    }

    #[test]
    fn pair_csv_roundtrip() {
        let labels = two_halves();
        let pairs = sample_pairs(&labels, 12, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        pairs.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("i_y,i_x,j_y,j_x,label\n"));
        assert_eq!(PairDataset::read_csv(&path, 6, 6).unwrap(), pairs);
    }

    #[test]
    fn constant_field_is_mid_gray() {
        let emb = EmbeddingField::new(3, 3, 4, vec![2.5; 36]).unwrap();
        let img = pca_virtual_colors(&emb).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn low_rank_field_fills_missing_channels() {
        // Variation only along one axis: rank 1.
        let emb = EmbeddingField::from_fn(2, 4, 3, |_, x, c| if c == 1 { x as f32 } else { 1.0 }).unwrap();
        let img = pca_virtual_colors(&emb).unwrap();
        for i in 0..8 {
            let p = img.pixel(i);
            assert_eq!(p[1], 0.5);
            assert_eq!(p[2], 0.5);
        }
        let xs: Vec<f32> = (0..4).map(|i| img.pixel(i)[0]).collect();
        assert!(xs == vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0] || xs == vec![1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0]);
    }
}
