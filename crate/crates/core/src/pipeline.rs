//! End-to-end segmentation: distance transform, seeds, optional merging,
//! geodesic unaries and CRF refinement.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crf::{mean_field_bruteforce, mean_field_fast, unary_potentials, CrfFeatures, CrfParams, MarginalField, DEFAULT_CLAMP};
use crate::error::{dims, invalid, Error, Result};
use crate::eval::Measure;
use crate::geodesic::seed_geodesic_fields;
use crate::io::read_bytes;
use crate::merge::{
    build_seed_graph, classify_edges, compute_edge_features, edge_ground_truth, merge_seeds, EdgeClassifier, SeedGraph,
};
use crate::seeds::{multiscale_seed_regions, SeedGenConfig, SeedRegionSet};
use crate::synth::{exact_distance_transform, EdgeNoise, SynthConfig};
use crate::tensor::{ColorImage, EmbeddingField, LabelMap, ScalarField};
use crate::unary::{fit_segment_gaussians, posterior_field, UnaryField, UnaryParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrfMethod {
    #[default]
    Fast,
    Bruteforce,
}

/// Synthetic dataset settings for `synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthDatasetConfig {
    #[serde(flatten)]
    pub image: SynthConfig,
    /// Image `i` uses `rng_seed + i`.
    pub num_images: usize,
    /// Width, in pixels, of the linear fall-off of the edge-strength map.
    pub edge_halo: f64,
    /// Standard deviation of the color-image noise, in `[0, 1]` units.
    pub color_noise: f64,
    pub edge_noise: EdgeNoise,
}

impl Default for SynthDatasetConfig {
    fn default() -> Self {
        Self {
            image: SynthConfig::default(),
            num_images: 1,
            edge_halo: 2.0,
            color_noise: 0.02,
            edge_noise: EdgeNoise::default(),
        }
    }
}

/// Benchmark settings for `bench`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Merge thresholds swept per image.
    pub thresholds: Vec<f64>,
    pub boundary_tolerance: f64,
    pub region_gamma: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            thresholds: (1..10).map(|i| f64::from(i) / 10.0).collect(),
            boundary_tolerance: 2.0,
            region_gamma: 0.5,
        }
    }
}

impl BenchConfig {
    pub fn measures(&self) -> [(&'static str, Measure); 2] {
        [
            ("boundary", Measure::Boundary { tolerance: self.boundary_tolerance }),
            ("region", Measure::Region { gamma: self.region_gamma }),
        ]
    }
}

/// Optional default input and output locations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub embedding: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub dt: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Edge strength above this value counts as boundary for the exact DT.
    pub tau: f32,
    pub seed_gen: SeedGenConfig,
    /// Neighbors per seed in the merge graph.
    pub knn_k: usize,
    pub merge_threshold: f64,
    /// Trained edge model; without one, seeds are not merged.
    pub classifier: Option<EdgeClassifier>,
    pub unary: UnaryParams,
    pub crf: CrfParams,
    pub crf_method: CrfMethod,
    pub synth: SynthDatasetConfig,
    pub bench: BenchConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            seed_gen: SeedGenConfig::default(),
            knn_k: 5,
            merge_threshold: 0.5,
            classifier: None,
            unary: UnaryParams::default(),
            crf: CrfParams::default(),
            crf_method: CrfMethod::default(),
            synth: SynthDatasetConfig::default(),
            bench: BenchConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && (0.0..1.0).contains(&self.tau)) {
            return Err(invalid("tau must lie in [0, 1)"));
        }
        if self.knn_k == 0 {
            return Err(invalid("knn_k must be at least 1"));
        }
        self.seed_gen.validate()?;
        self.unary.validate()?;
        self.crf.validate()?;
        if let Some(c) = &self.classifier {
            c.validate()?;
        }
        self.synth.edge_noise.validate()?;
        self.synth.image.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_bytes(path)?;
        Self::from_json(&String::from_utf8_lossy(&bytes))
    }

    /// Reads a numeric field addressed by a dotted path such as `crf.w1`.
    pub fn param(&self, name: &str) -> Result<f64> {
        let tree = serde_json::to_value(self)?;
        let mut slot = &tree;
        for key in name.split('.') {
            slot = slot.get(key).ok_or_else(|| invalid(format!("unknown parameter {name:?}")))?;
        }
        slot.as_f64().ok_or_else(|| invalid(format!("parameter {name:?} is not numeric")))
    }

    /// Sets a numeric field addressed by a dotted path. Integral values are
    /// stored as integers so counts like `crf.iterations` can be set too.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let mut slot = &mut tree;
        for key in name.split('.') {
            slot = slot
                .get_mut(key)
                .ok_or_else(|| invalid(format!("unknown parameter {name:?}")))?;
        }
        if !slot.is_number() {
            return Err(invalid(format!("parameter {name:?} is not numeric")));
        }
        *slot = if value.fract() == 0.0 && value.abs() < 2f64.powi(53) && slot.is_u64() {
            serde_json::Value::from(value as u64)
        } else {
            serde_json::Value::from(value)
        };
        let updated: Self = serde_json::from_value(tree)?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

/// Metadata written next to an exported embedding as `<file>.json`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub stride: u32,
    pub source_h: usize,
    pub source_w: usize,
}

pub fn sidecar_path(embedding: &Path) -> PathBuf {
    let mut name = embedding.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Reads the sidecar of an embedding file if one exists.
pub fn load_sidecar(embedding: &Path) -> Result<Option<EmbeddingSidecar>> {
    let path = sidecar_path(embedding);
    if !path.exists() {
        return Ok(None);
    }
    let car: EmbeddingSidecar = serde_json::from_slice(&read_bytes(&path)?)?;
    if car.stride == 0 {
        return Err(invalid(format!("{}: stride must be positive", path.display())));
    }
    Ok(Some(car))
}

/// Bilinear resampling with pixel centers at half-integer coordinates.
/// `scale` is source pixels per target pixel on each axis; sample positions
/// are clamped to the source grid.
pub fn upsample_bilinear(emb: &EmbeddingField, height: usize, width: usize, scale: (f64, f64)) -> Result<EmbeddingField> {
    let (sh, sw, n) = (emb.height(), emb.width(), emb.depth());
    let axis = |t: usize, s: f64, len: usize| {
        let u = ((t as f64 + 0.5) * s - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = u.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, u - i0 as f64)
    };
    let ys: Vec<_> = (0..height).map(|y| axis(y, scale.0, sh)).collect();
    let xs: Vec<_> = (0..width).map(|x| axis(x, scale.1, sw)).collect();
    let mut data = Vec::with_capacity(height * width * n);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let (a, b, c, d) = (emb.at(y0, x0), emb.at(y0, x1), emb.at(y1, x0), emb.at(y1, x1));
            for ch in 0..n {
                let top = f64::from(a[ch]) * (1.0 - fx) + f64::from(b[ch]) * fx;
                let bottom = f64::from(c[ch]) * (1.0 - fx) + f64::from(d[ch]) * fx;
                data.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    EmbeddingField::new(height, width, n, data)
}

/// Inputs to one segmentation run. The edge-strength map fixes the output
/// resolution; a coarser embedding is upsampled to it.
#[derive(Clone, Debug)]
pub struct SegmentInputs {
    pub embedding: EmbeddingField,
    pub strength: ScalarField,
    pub dt: Option<ScalarField>,
    pub image: Option<ColorImage>,
    pub sidecar: Option<EmbeddingSidecar>,
}

impl SegmentInputs {
    pub fn new(embedding: EmbeddingField, strength: ScalarField) -> Self {
        Self {
            embedding,
            strength,
            dt: None,
            image: None,
            sidecar: None,
        }
    }

    fn target_dims(&self) -> (usize, usize) {
        (self.strength.height(), self.strength.width())
    }

    fn check(&self) -> Result<()> {
        let (h, w) = self.target_dims();
        if let Some(dt) = &self.dt {
            if (dt.height(), dt.width()) != (h, w) {
                return Err(dims(format!("DT is {}x{}, edge strength is {h}x{w}", dt.height(), dt.width())));
            }
        }
        if let Some(img) = &self.image {
            if (img.height(), img.width()) != (h, w) {
                return Err(dims(format!("image is {}x{}, edge strength is {h}x{w}", img.height(), img.width())));
            }
        }
        if let Some(car) = &self.sidecar {
            if (car.source_h, car.source_w) != (h, w) {
                return Err(dims(format!(
                    "embedding was exported from a {}x{} image, edge strength is {h}x{w}",
                    car.source_h, car.source_w
                )));
            }
        }
        let (eh, ew) = (self.embedding.height(), self.embedding.width());
        if eh > h || ew > w {
            return Err(dims(format!("embedding is {eh}x{ew}, larger than the {h}x{w} image")));
        }
        Ok(())
    }

    /// The embedding at image resolution.
    pub fn full_resolution_embedding(&self) -> Result<EmbeddingField> {
        self.check()?;
        let (h, w) = self.target_dims();
        let emb = &self.embedding;
        if (emb.height(), emb.width()) == (h, w) {
            return Ok(emb.clone());
        }
        let scale = match self.sidecar {
            Some(car) => (1.0 / f64::from(car.stride), 1.0 / f64::from(car.stride)),
            None => (emb.height() as f64 / h as f64, emb.width() as f64 / w as f64),
        };
        upsample_bilinear(emb, h, w, scale)
    }
}

/// Everything up to (and including) the classified seed graph. Reused when
/// sweeping merge thresholds.
#[derive(Clone, Debug)]
pub struct PreparedImage {
    pub embedding: EmbeddingField,
    pub strength: ScalarField,
    pub dt: ScalarField,
    pub seeds: SeedRegionSet,
    /// Classified merge graph, present when a classifier is configured.
    pub graph: Option<SeedGraph>,
    pub features: CrfFeatures,
}

pub fn prepare(cfg: &PipelineConfig, inputs: &SegmentInputs) -> Result<PreparedImage> {
    cfg.validate()?;
    let embedding = inputs.full_resolution_embedding()?;
    inputs.strength.check_unit_range()?;
    let dt = match &inputs.dt {
        Some(dt) => dt.clone(),
        None => exact_distance_transform(&inputs.strength, cfg.tau)?,
    };
    let seeds = multiscale_seed_regions(&dt, &cfg.seed_gen)?;
    let graph = match &cfg.classifier {
        Some(clf) if seeds.len() > 1 => {
            let mut g = build_seed_graph(&seeds, cfg.knn_k)?;
            compute_edge_features(&embedding, &inputs.strength, &seeds, &mut g)?;
            Some(classify_edges(&g, clf))
        }
        _ => None,
    };
    let features = match &inputs.image {
        Some(img) => CrfFeatures::from_image(img),
        None => CrfFeatures::from_embedding(&embedding),
    };
    Ok(PreparedImage {
        embedding,
        strength: inputs.strength.clone(),
        dt,
        seeds,
        graph,
        features,
    })
}

/// Result of a segmentation run with its intermediate artifacts.
#[derive(Clone, Debug)]
pub struct Segmentation {
    pub labels: LabelMap,
    pub dt: ScalarField,
    /// Seeds before merging.
    pub seeds: SeedRegionSet,
    /// Seeds after merging (equal to `seeds` without a classifier).
    pub merged: SeedRegionSet,
    pub z: UnaryField,
    pub q: MarginalField,
    /// `true` when the appearance kernel used embedding channels as colors.
    pub colors_from_embedding: bool,
}

/// Unaries and CRF for one merge threshold.
pub fn finish(cfg: &PipelineConfig, prepared: &PreparedImage, threshold: f64) -> Result<Segmentation> {
    let merged = match &prepared.graph {
        Some(g) => merge_seeds(&prepared.seeds, g, threshold)?,
        None => prepared.seeds.clone(),
    };
    let model = fit_segment_gaussians(&prepared.embedding, &merged, cfg.unary.variance_floor)?;
    let geo = seed_geodesic_fields(&prepared.strength, &merged)?;
    let z = posterior_field(&prepared.embedding, &model, &geo, &cfg.unary)?;
    let psi = unary_potentials(&z, DEFAULT_CLAMP);
    let (q, labels) = match cfg.crf_method {
        CrfMethod::Fast => mean_field_fast(&psi, &prepared.features, &cfg.crf)?,
        CrfMethod::Bruteforce => mean_field_bruteforce(&psi, &prepared.features, &cfg.crf)?,
    };
    Ok(Segmentation {
        labels,
        dt: prepared.dt.clone(),
        seeds: prepared.seeds.clone(),
        merged,
        z,
        q,
        colors_from_embedding: prepared.features.from_embedding,
    })
}

/// The full pipeline at the configured merge threshold.
pub fn segment(cfg: &PipelineConfig, inputs: &SegmentInputs) -> Result<Segmentation> {
    let prepared = prepare(cfg, inputs)?;
    finish(cfg, &prepared, cfg.merge_threshold)
}

/// Seed-graph edges of one image with their feature vectors and
/// "same segment" labels derived from the ground truth.
pub fn labeled_edges(cfg: &PipelineConfig, inputs: &SegmentInputs, gt: &LabelMap) -> Result<(Vec<[f64; 2]>, Vec<bool>)> {
    cfg.validate()?;
    let embedding = inputs.full_resolution_embedding()?;
    let dt = match &inputs.dt {
        Some(dt) => dt.clone(),
        None => exact_distance_transform(&inputs.strength, cfg.tau)?,
    };
    let seeds = multiscale_seed_regions(&dt, &cfg.seed_gen)?;
    if seeds.len() < 2 {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut graph = build_seed_graph(&seeds, cfg.knn_k)?;
    compute_edge_features(&embedding, &inputs.strength, &seeds, &mut graph)?;
    let labels = edge_ground_truth(&graph, &seeds, gt)?;
    Ok((graph.edges.iter().map(|e| e.features).collect(), labels))
}

/// Process exit code for a pipeline error: 2 for an empty seed set, 3 for
/// missing inputs or inconsistent dimensions, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::EmptySeeds => 2,
        Error::DimensionMismatch(_) | Error::Read { .. } => 3,
        _ => 1,
    }
}
