//! `dgseg` command-line front end.
//!
//! Exit codes: 0 success, 1 other failures, 2 no seed regions, 3 missing
//! input or inconsistent dimensions.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dgseg::pipeline::{exit_code, CrfMethod, PipelineConfig};

#[derive(Parser)]
#[command(name = "dgseg", version, about = "Generic segmentation from per-pixel embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (DGST triples, color images, manifest).
    Synth(commands::SynthArgs),
    /// Segment one image.
    Segment(commands::SegmentArgs),
    /// Same/different pixel-pair classification with a learned distance threshold.
    PairEval(commands::PairEvalArgs),
    /// Train the seed-merge edge classifier on a dataset.
    TrainEdges(commands::TrainEdgesArgs),
    /// Sweep merge thresholds over a dataset and report ODS/OIS/AP.
    Bench(commands::BenchArgs),
    /// Exhaustive parameter search scored on a dataset.
    GridSearch(commands::GridSearchArgs),
    /// Render an embedding's top principal components as a color image.
    Visualize(commands::VisualizeArgs),
}

/// Config file plus the flags that override it.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// JSON pipeline configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    crf_iters: Option<usize>,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    w2: Option<f64>,
    #[arg(long)]
    theta_a: Option<f64>,
    #[arg(long)]
    theta_b: Option<f64>,
    #[arg(long)]
    theta_gamma: Option<f64>,
    #[arg(long)]
    merge_threshold: Option<f64>,
    #[arg(long, value_enum)]
    crf_method: Option<MethodArg>,
    /// Edge classifier JSON as written by `train-edges`.
    #[arg(long)]
    classifier: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    Fast,
    Bruteforce,
}

impl ConfigArgs {
    pub fn load(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        let crf = &mut cfg.crf;
        if let Some(v) = self.crf_iters {
            crf.iterations = v;
        }
        for (flag, slot) in [
            (self.w1, &mut crf.w1),
            (self.w2, &mut crf.w2),
            (self.theta_a, &mut crf.theta_a),
            (self.theta_b, &mut crf.theta_b),
            (self.theta_gamma, &mut crf.theta_gamma),
        ] {
            if let Some(v) = flag {
                *slot = v;
            }
        }
        if let Some(v) = self.merge_threshold {
            cfg.merge_threshold = v;
        }
        if let Some(m) = self.crf_method {
            cfg.crf_method = match m {
                MethodArg::Fast => CrfMethod::Fast,
                MethodArg::Bruteforce => CrfMethod::Bruteforce,
            };
        }
        if let Some(path) = &self.classifier {
            let bytes = dgseg::io::read_bytes(path)?;
            let report: commands::EdgeModelFile =
                serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
            cfg.classifier = Some(report.classifier);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("DGS_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("DGS_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Segment(a) => commands::segment(a),
        Command::PairEval(a) => commands::pair_eval(a),
        Command::TrainEdges(a) => commands::train_edges(a),
        Command::Bench(a) => commands::bench(a),
        Command::GridSearch(a) => commands::grid_search(a),
        Command::Visualize(a) => commands::visualize(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors share code 1 so that 2 keeps meaning "no seeds".
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<dgseg::Error>().map_or(1, exit_code);
            ExitCode::from(code as u8)
        }
    }
}
