//! Threshold sweeps over a dataset: per-image PR curves for every measure,
//! their ODS/OIS/AP summary and mean segmentation covering.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LoadedScene;
use crate::error::{invalid, Result};
use crate::eval::{aggregate, covering, pooled_curve, BenchmarkSummary, PrPoint};
use crate::pipeline::{finish, prepare, PipelineConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub name: String,
    pub summary: BenchmarkSummary,
    /// Counts summed over images, one point per threshold.
    pub pooled: Vec<PrPoint>,
    pub per_image: Vec<Vec<PrPoint>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub images: usize,
    pub thresholds: Vec<f64>,
    pub measures: Vec<MeasureReport>,
    /// Mean covering over images at each threshold.
    pub covering: Vec<f64>,
}

impl BenchReport {
    pub fn measure(&self, name: &str) -> Option<&MeasureReport> {
        self.measures.iter().find(|m| m.name == name)
    }

    pub fn best_covering(&self) -> f64 {
        self.covering.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Segments every scene at every `cfg.bench.thresholds` merge threshold and
/// scores the results against the scene ground truth.
pub fn run_benchmark(cfg: &PipelineConfig, scenes: &[LoadedScene]) -> Result<BenchReport> {
    if scenes.is_empty() {
        return Err(invalid("benchmark needs at least one image"));
    }
    let thresholds = &cfg.bench.thresholds;
    if thresholds.is_empty() {
        return Err(invalid("benchmark needs at least one threshold"));
    }
    let measures = cfg.bench.measures();
    // per image: per threshold: (per-measure points, covering)
    let runs: Vec<Vec<(Vec<PrPoint>, f64)>> = scenes
        .par_iter()
        .map(|scene| {
            let prepared = prepare(cfg, &scene.inputs)?;
            thresholds
                .iter()
                .map(|&t| {
                    let seg = finish(cfg, &prepared, t)?;
                    let points = measures
                        .iter()
                        .map(|(_, m)| Ok(m.evaluate(&seg.labels, &scene.gt)?.at_threshold(t)))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((points, covering(&seg.labels, &scene.gt)?))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let n = scenes.len() as f64;
    let covering = (0..thresholds.len())
        .map(|t| runs.iter().map(|r| r[t].1).sum::<f64>() / n)
        .collect();
    let measures = measures
        .iter()
        .enumerate()
        .map(|(m, (name, _))| {
            let per_image: Vec<Vec<PrPoint>> = runs
                .iter()
                .map(|r| r.iter().map(|(points, _)| points[m]).collect())
                .collect();
            Ok(MeasureReport {
                name: (*name).to_string(),
                summary: aggregate(&per_image)?,
                pooled: pooled_curve(&per_image)?,
                per_image,
            })
        })
        .collect::<Result<_>>()?;
    Ok(BenchReport {
        images: scenes.len(),
        thresholds: thresholds.clone(),
        measures,
        covering,
    })
}
