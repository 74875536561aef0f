//! Synthetic datasets on disk: per scene an embedding, a ground-truth label
//! map and an edge-strength map (all DGST) plus a color image, indexed by a
//! JSON manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::io::{encode, load_embedding, load_labels, load_scalar, read_bytes, write_bytes};
use crate::pipeline::{SegmentInputs, SynthDatasetConfig};
use crate::pnm::{encode_ppm, read_ppm};
use crate::synth::{generate_color_image, generate_embeddings, generate_segmentation, noisy_edge_strength, SynthConfig};
use crate::tensor::{ColorImage, EmbeddingField, LabelMap, ScalarField};

pub const MANIFEST_NAME: &str = "manifest.json";

/// One generated scene.
#[derive(Clone, Debug)]
pub struct Scene {
    pub rng_seed: u64,
    pub labels: LabelMap,
    pub embedding: EmbeddingField,
    pub strength: ScalarField,
    pub image: ColorImage,
}

impl Scene {
    pub fn inputs(&self) -> SegmentInputs {
        SegmentInputs {
            image: Some(self.image.clone()),
            ..SegmentInputs::new(self.embedding.clone(), self.strength.clone())
        }
    }
}

/// Scene `index` of a dataset; it uses seed `rng_seed + index`.
pub fn synth_scene(cfg: &SynthDatasetConfig, index: usize) -> Result<Scene> {
    let image_cfg = SynthConfig {
        rng_seed: cfg.image.rng_seed.wrapping_add(index as u64),
        ..cfg.image.clone()
    };
    let labels = generate_segmentation(&image_cfg)?;
    Ok(Scene {
        rng_seed: image_cfg.rng_seed,
        embedding: generate_embeddings(&labels, &image_cfg)?,
        strength: noisy_edge_strength(&labels, &image_cfg, cfg.edge_halo, &cfg.edge_noise)?,
        image: generate_color_image(&labels, &image_cfg, cfg.color_noise)?,
        labels,
    })
}

/// File names are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub rng_seed: u64,
    pub embedding: PathBuf,
    pub labels: PathBuf,
    pub edges: PathBuf,
    pub image: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthDatasetConfig,
    pub images: Vec<ManifestEntry>,
}

/// Encoded files of a dataset, ready to be written.
pub struct DatasetFiles {
    pub manifest: Manifest,
    pub files: Vec<(PathBuf, Vec<u8>)>,
}

/// Generates every scene in memory. Nothing touches the disk.
pub fn build_dataset(cfg: &SynthDatasetConfig) -> Result<DatasetFiles> {
    cfg.image.validate()?;
    cfg.edge_noise.validate()?;
    let mut files = Vec::new();
    let mut images = Vec::with_capacity(cfg.num_images);
    for i in 0..cfg.num_images {
        let scene = synth_scene(cfg, i)?;
        let entry = ManifestEntry {
            rng_seed: scene.rng_seed,
            embedding: format!("image_{i:03}_embedding.dgst").into(),
            labels: format!("image_{i:03}_labels.dgst").into(),
            edges: format!("image_{i:03}_edges.dgst").into(),
            image: Some(format!("image_{i:03}.ppm").into()),
        };
        files.push((entry.embedding.clone(), encode(&scene.embedding)));
        files.push((entry.labels.clone(), encode(&scene.labels)));
        files.push((entry.edges.clone(), encode(&scene.strength)));
        files.push((format!("image_{i:03}.ppm").into(), encode_ppm(&scene.image)?));
        images.push(entry);
    }
    let manifest = Manifest {
        config: cfg.clone(),
        images,
    };
    files.push((MANIFEST_NAME.into(), serde_json::to_vec_pretty(&manifest)?));
    Ok(DatasetFiles { manifest, files })
}

/// Writes a dataset into `dir`, creating it if needed.
pub fn write_dataset(cfg: &SynthDatasetConfig, dir: &Path) -> Result<Manifest> {
    let built = build_dataset(cfg)?;
    std::fs::create_dir_all(dir).map_err(|source| crate::Error::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    for (name, bytes) in &built.files {
        write_bytes(dir.join(name), bytes)?;
    }
    Ok(built.manifest)
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Self = serde_json::from_slice(&read_bytes(dir.join(MANIFEST_NAME))?)?;
        if manifest.images.is_empty() {
            return Err(invalid(format!("{}: dataset has no images", dir.display())));
        }
        Ok(manifest)
    }
}

/// A scene read back from disk.
#[derive(Clone, Debug)]
pub struct LoadedScene {
    pub gt: LabelMap,
    pub inputs: SegmentInputs,
}

pub fn load_scene(dir: &Path, entry: &ManifestEntry, with_image: bool) -> Result<LoadedScene> {
    let embedding = load_embedding(dir.join(&entry.embedding))?;
    let strength = load_scalar(dir.join(&entry.edges))?;
    let image = match (&entry.image, with_image) {
        (Some(p), true) => Some(read_ppm(dir.join(p))?),
        _ => None,
    };
    Ok(LoadedScene {
        gt: load_labels(dir.join(&entry.labels))?,
        inputs: SegmentInputs {
            image,
            ..SegmentInputs::new(embedding, strength)
        },
    })
}
