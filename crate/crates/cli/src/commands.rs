use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use dgseg::bench::{run_benchmark, BenchReport};
use dgseg::dataset::{build_dataset, load_scene, LoadedScene, Manifest};
use dgseg::eval::{grid_search as search, pr_csv, pr_svg, BenchmarkSummary};
use dgseg::io::{encode, encode_raw_labels, load_embedding, load_labels, load_scalar};
use dgseg::merge::{train_edge_classifier, EdgeClassifier, FeatureSet};
use dgseg::pipeline::{labeled_edges, load_sidecar, segment as run_segment, SegmentInputs};
use dgseg::pnm::{encode_ppm, read_ppm};
use dgseg::rep::{learn_threshold, pair_accuracy, pca_virtual_colors, sample_pairs};
use dgseg::{embedding_from_colors, Error};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ConfigArgs;

/// Largest tolerated deviation of a posterior row sum from 1.
const ROW_SUM_TOL: f64 = 1e-6;

/// Writes every file next to its destination first and renames afterwards,
/// so a failure never leaves a half-written output set behind.
fn write_outputs(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|source| Error::Write {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = PathBuf::from(tmp);
        if let Err(e) = dgseg::io::write_bytes(&tmp, bytes) {
            for (t, _) in &staged {
                let _ = std::fs::remove_file(t);
            }
            return Err(e.into());
        }
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        std::fs::rename(&tmp, path).map_err(|source| Error::Write {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| anyhow!("--{name} is required (or set paths.{name} in the config)"))
}

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `synth.num_images`.
    #[arg(long)]
    num_images: Option<usize>,
    /// Overrides `synth.rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg = args.config.load()?.synth;
    if let Some(n) = args.num_images {
        cfg.num_images = n;
    }
    if let Some(s) = args.seed {
        cfg.image.rng_seed = s;
    }
    let built = build_dataset(&cfg)?;
    let files: Vec<_> = built.files.into_iter().map(|(name, bytes)| (args.out.join(name), bytes)).collect();
    write_outputs(&files)?;
    println!("wrote {} images to {}", built.manifest.images.len(), args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Embedding tensor; a `<file>.json` sidecar sets the export stride.
    #[arg(long)]
    embedding: Option<PathBuf>,
    /// Edge-strength map in [0, 1]; fixes the output resolution.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Precomputed distance transform (otherwise exact from the edges).
    #[arg(long)]
    dt: Option<PathBuf>,
    /// Color image for the CRF appearance kernel.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Output label map.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write seeds, merged seeds, DT, unaries (Z) and marginals (Q) here.
    #[arg(long)]
    debug_artifacts: Option<PathBuf>,
}

#[derive(Serialize)]
struct SegmentReport {
    height: usize,
    width: usize,
    segments: usize,
    seeds: usize,
    merged_seeds: usize,
    colors_from_embedding: bool,
}

pub fn segment(args: SegmentArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let paths = &cfg.paths;
    let emb_path = required(args.embedding, &paths.embedding, "embedding")?;
    let edges_path = required(args.edges, &paths.edges, "edges")?;
    let out = required(args.out, &paths.output, "output")?;

    let mut inputs = SegmentInputs::new(load_embedding(&emb_path)?, load_scalar(&edges_path)?);
    inputs.sidecar = load_sidecar(&emb_path)?;
    if let Some(p) = args.dt.or_else(|| paths.dt.clone()) {
        inputs.dt = Some(load_scalar(p)?);
    }
    if let Some(p) = args.image.or_else(|| paths.image.clone()) {
        inputs.image = Some(read_ppm(p)?);
    }

    let seg = run_segment(&cfg, &inputs)?;
    if seg.colors_from_embedding {
        eprintln!("note: no color image given; the appearance kernel uses embedding channels 0-2");
    }
    let mut files = vec![(out, encode(&seg.labels))];
    if let Some(dir) = args.debug_artifacts {
        let worst = (0..seg.z.height() * seg.z.width())
            .map(|p| (seg.z.row(p).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        if worst > ROW_SUM_TOL {
            bail!("unary rows do not sum to 1 (worst deviation {worst:e})");
        }
        let (h, w) = (seg.seeds.height(), seg.seeds.width());
        files.push((dir.join("seeds.dgst"), encode_raw_labels(h, w, &seg.seeds.id_map())));
        files.push((dir.join("merged_seeds.dgst"), encode_raw_labels(h, w, &seg.merged.id_map())));
        files.push((dir.join("dt.dgst"), encode(&seg.dt)));
        files.push((dir.join("z.dgst"), encode(&seg.z.to_embedding()?)));
        files.push((dir.join("q.dgst"), encode(&seg.q.to_embedding()?)));
    }
    write_outputs(&files)?;
    let report = SegmentReport {
        height: seg.labels.height(),
        width: seg.labels.width(),
        segments: seg.labels.num_labels(),
        seeds: seg.seeds.len(),
        merged_seeds: seg.merged.len(),
        colors_from_embedding: seg.colors_from_embedding,
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[derive(Args)]
pub struct PairEvalArgs {
    /// Embedding to evaluate (ignored with --rgb).
    #[arg(long)]
    embedding: Option<PathBuf>,
    /// Ground-truth label map.
    #[arg(long)]
    labels: PathBuf,
    /// Color image; required with --rgb.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Evaluate raw RGB colors instead of the embedding.
    #[arg(long)]
    rgb: bool,
    #[arg(long, default_value_t = 1000)]
    validation_pairs: usize,
    #[arg(long, default_value_t = 1000)]
    test_pairs: usize,
    /// Validation pairs use this seed, test pairs the next one.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairReport {
    pub representation: String,
    pub threshold: f64,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
    pub validation_pairs: usize,
    pub test_pairs: usize,
    pub seed: u64,
}

pub fn pair_eval(args: PairEvalArgs) -> Result<()> {
    let labels = load_labels(&args.labels)?;
    let (name, emb) = if args.rgb {
        let path = args.image.as_ref().ok_or_else(|| anyhow!("--rgb needs --image"))?;
        ("rgb", embedding_from_colors(&read_ppm(path)?))
    } else {
        let path = args.embedding.as_ref().ok_or_else(|| anyhow!("--embedding is required"))?;
        ("embedding", load_embedding(path)?)
    };
    let validation = sample_pairs(&labels, args.validation_pairs, args.seed)?;
    let test = sample_pairs(&labels, args.test_pairs, args.seed.wrapping_add(1))?;
    let t = learn_threshold(&emb, &validation)?;
    let report = PairReport {
        representation: name.into(),
        threshold: t.threshold,
        validation_accuracy: t.validation_accuracy,
        test_accuracy: pair_accuracy(&emb, &test, &t)?,
        validation_pairs: validation.pairs.len(),
        test_pairs: test.pairs.len(),
        seed: args.seed,
    };
    match args.out {
        Some(path) => write_outputs(&[(path, json_bytes(&report)?)])?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn load_dataset(dir: &Path, with_image: bool) -> Result<Vec<LoadedScene>> {
    let manifest = Manifest::load(dir)?;
    Ok(manifest
        .images
        .iter()
        .map(|e| load_scene(dir, e, with_image))
        .collect::<dgseg::Result<_>>()?)
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FeaturesArg {
    Both,
    Representation,
    Geodesic,
}

#[derive(Args)]
pub struct TrainEdgesArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    features: FeaturesArg,
    /// Classifier output (JSON).
    #[arg(long)]
    out: PathBuf,
}

/// Classifier file written by `train-edges` and read by `--classifier`.
#[derive(Debug, Serialize, Deserialize)]
pub struct EdgeModelFile {
    pub classifier: EdgeClassifier,
    pub edges: usize,
    pub same_edges: usize,
    pub training_accuracy: f64,
}

pub fn train_edges(args: TrainEdgesArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let scenes = load_dataset(&args.dataset, false)?;
    let per_image = scenes
        .par_iter()
        .map(|s| labeled_edges(&cfg, &s.inputs, &s.gt))
        .collect::<dgseg::Result<Vec<_>>>()?;
    let (features, labels): (Vec<[f64; 2]>, Vec<bool>) = per_image
        .into_iter()
        .flat_map(|(f, l)| f.into_iter().zip(l))
        .unzip();
    let set = match args.features {
        FeaturesArg::Both => FeatureSet::Both,
        FeaturesArg::Representation => FeatureSet::Representation,
        FeaturesArg::Geodesic => FeatureSet::Geodesic,
    };
    let classifier = train_edge_classifier(&features, &labels, set)?;
    let model = EdgeModelFile {
        training_accuracy: classifier.accuracy(&features, &labels),
        edges: labels.len(),
        same_edges: labels.iter().filter(|&&y| y).count(),
        classifier,
    };
    write_outputs(&[(args.out, json_bytes(&model)?)])?;
    println!(
        "trained on {} edges ({} same), accuracy {:.4}",
        model.edges, model.same_edges, model.training_accuracy
    );
    Ok(())
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad number {v:?}")))
        .collect()
}

#[derive(Args)]
pub struct BenchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated merge thresholds (overrides `bench.thresholds`).
    #[arg(long)]
    thresholds: Option<String>,
    /// Ignore the dataset's color images.
    #[arg(long)]
    no_image: bool,
    /// Output directory for summary.json, report.json and PR curves.
    #[arg(long)]
    out: PathBuf,
}

/// Contents of `summary.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct BenchSummaryFile {
    pub images: usize,
    pub thresholds: Vec<f64>,
    pub boundary: BenchmarkSummary,
    pub region: BenchmarkSummary,
    pub covering: Vec<f64>,
}

fn bench_files(report: &BenchReport, out: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let summary_of = |name: &str| {
        report
            .measure(name)
            .map(|m| m.summary)
            .ok_or_else(|| anyhow!("measure {name} missing"))
    };
    let summary = BenchSummaryFile {
        images: report.images,
        thresholds: report.thresholds.clone(),
        boundary: summary_of("boundary")?,
        region: summary_of("region")?,
        covering: report.covering.clone(),
    };
    let mut files = vec![
        (out.join("summary.json"), json_bytes(&summary)?),
        (out.join("report.json"), json_bytes(report)?),
    ];
    for m in &report.measures {
        files.push((out.join(format!("{}_pr.csv", m.name)), pr_csv(&m.pooled)?));
        files.push((
            out.join(format!("{}_pr.svg", m.name)),
            pr_svg(&m.pooled, &format!("{} PR", m.name)).into_bytes(),
        ));
    }
    Ok(files)
}

pub fn bench(args: BenchArgs) -> Result<()> {
    let mut cfg = args.config.load()?;
    if let Some(t) = &args.thresholds {
        cfg.bench.thresholds = parse_list(t)?;
    }
    let scenes = load_dataset(&args.dataset, !args.no_image)?;
    let report = run_benchmark(&cfg, &scenes)?;
    write_outputs(&bench_files(&report, &args.out)?)?;
    for m in &report.measures {
        let s = m.summary;
        println!("{}: ODS {:.4} OIS {:.4} AP {:.4}", m.name, s.ods, s.ois, s.ap);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Objective {
    /// Region-F ODS.
    Region,
    /// Boundary-F ODS.
    Boundary,
    /// Best mean covering over the threshold sweep.
    Covering,
}

#[derive(Args)]
pub struct GridSearchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    dataset: PathBuf,
    /// `name=v1,v2,...` with a dotted config path, e.g. `crf.w1=3,6`. Repeatable.
    #[arg(long = "param", required = true)]
    params: Vec<String>,
    #[arg(long, value_enum, default_value = "region")]
    objective: Objective,
    #[arg(long)]
    no_image: bool,
    /// Result JSON.
    #[arg(long)]
    out: PathBuf,
}

pub fn grid_search(args: GridSearchArgs) -> Result<()> {
    let base = args.config.load()?;
    let space = args
        .params
        .iter()
        .map(|p| {
            let (name, values) = p.split_once('=').ok_or_else(|| anyhow!("--param {p:?} is not name=values"))?;
            base.param(name.trim())?;
            Ok((name.trim().to_string(), parse_list(values)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let scenes = load_dataset(&args.dataset, !args.no_image)?;
    let objective = args.objective;
    let result = search(&space, |values| {
        let mut cfg = base.clone();
        for ((name, _), &v) in space.iter().zip(values) {
            cfg.set_param(name, v)?;
        }
        let report = run_benchmark(&cfg, &scenes)?;
        Ok(match objective {
            Objective::Region => report.measure("region").map_or(f64::NAN, |m| m.summary.ods),
            Objective::Boundary => report.measure("boundary").map_or(f64::NAN, |m| m.summary.ods),
            Objective::Covering => report.best_covering(),
        })
    })?;
    write_outputs(&[(args.out, json_bytes(&result)?)])?;
    println!("best {:?} = {:?} (score {:.4})", result.names, result.best, result.best_score);
    Ok(())
}

#[derive(Args)]
pub struct VisualizeArgs {
    #[arg(long)]
    embedding: PathBuf,
    /// Output portable pixmap.
    #[arg(long)]
    out: PathBuf,
}

pub fn visualize(args: VisualizeArgs) -> Result<()> {
    let emb = load_embedding(&args.embedding)?;
    let img = pca_virtual_colors(&emb)?;
    write_outputs(&[(args.out, encode_ppm(&img)?)])?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_parse() {
        assert_eq!(parse_list("0.1, 2,3e1").unwrap(), vec![0.1, 2.0, 30.0]);
        assert!(parse_list("1,x").is_err());
    }

    #[test]
    fn staged_writes_land_together() {
        let dir = tempfile::tempdir().unwrap();
        let files = vec![
            (dir.path().join("a/b.bin"), vec![1u8]),
            (dir.path().join("c.bin"), vec![2u8, 3]),
        ];
        write_outputs(&files).unwrap();
        assert_eq!(std::fs::read(dir.path().join("a/b.bin")).unwrap(), vec![1]);
        assert_eq!(std::fs::read(dir.path().join("c.bin")).unwrap(), vec![2, 3]);
        assert!(!dir.path().join("c.bin.partial").exists());
    }
}
