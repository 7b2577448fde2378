use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use occ_core::detectors::DetectorKind;
use occ_core::io::{self, IngestFormat};
use occ_core::pipeline::{embed_split, fit_detector, Pipeline, Split, Stage};
use occ_core::{Detector, Error, PipelineConfig};

#[derive(Parser)]
#[command(name = "occ", version, about = "Self-supervised one-class classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config file.
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData(Common),
    /// Train the representation for one seed, or every configured seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute f(x) for the train and test splits, or for one split with an explicit model.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, requires_all = ["split", "out"])]
        model: Option<PathBuf>,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the one-class detector on training representations.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        detector: Option<DetectorKind>,
        /// External representations (`.oct` tensor or CSV rows); requires --out.
        #[arg(long, requires = "out")]
        reps: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score both splits with the fitted detector.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Score external representations with an explicit detector; requires --reps and --out.
        #[arg(long, requires_all = ["reps", "out"])]
        detector: Option<PathBuf>,
        #[arg(long)]
        reps: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize AUCs over seeds and write summary.txt.
    Eval(Common),
    /// Batch-size sweep of MMD to the uniform distribution on the sphere.
    Mmd {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        batch_sizes: Option<Vec<usize>>,
    },
    /// Gradient and integrated-gradients attributions for test samples.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        samples: Option<Vec<usize>>,
        /// Print the ASCII heatmaps.
        #[arg(long)]
        heatmap: bool,
    },
    /// Run every stage in order.
    All(Common),
    /// Convert CSV rows or a tensor file into a canonical tensor file.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> anyhow::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn with_seed(mut cfg: PipelineConfig, seed: Option<u64>) -> PipelineConfig {
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    cfg
}

fn run_stage(cfg: PipelineConfig, stage: Stage) -> anyhow::Result<Pipeline> {
    cfg.validate()?;
    let p = Pipeline::new(cfg);
    p.run(stage)?;
    Ok(p)
}

fn read_reps(path: &Path) -> occ_core::Result<occ_core::Tensor> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    io::ingest(path, if is_csv { IngestFormat::CsvVectors } else { IngestFormat::BinaryTensor })
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let p = run_stage(load(&c)?, Stage::Gen)?;
            println!("wrote {}", p.data_dir().display());
        }
        Command::Train { common, seed } => {
            let p = run_stage(with_seed(load(&common)?, seed), Stage::Train)?;
            for &s in &p.config.seeds {
                println!("wrote {}", p.model_path(s).display());
            }
        }
        Command::Embed { common, seed, model, split, out } => {
            let cfg = with_seed(load(&common)?, seed);
            match (model, split, out) {
                (Some(m), Some(split), Some(out)) => {
                    let p = Pipeline::new(cfg);
                    let reps = embed_split(&m, &p.data_dir(), split, &out)?;
                    println!("wrote {} ({} x {})", out.display(), reps.rows(), reps.cols());
                }
                _ => {
                    run_stage(cfg, Stage::Embed)?;
                }
            }
        }
        Command::Fit { common, seed, detector, reps, out } => {
            let mut cfg = with_seed(load(&common)?, seed);
            if let Some(kind) = detector {
                cfg.detector.kind = kind;
            }
            match (reps, out) {
                (Some(r), Some(out)) => {
                    cfg.validate()?;
                    let reps = read_reps(&r)?;
                    fit_detector(&cfg.detector, &reps)?.save(&out)?;
                    println!("wrote {}", out.display());
                }
                _ => {
                    let p = run_stage(cfg, Stage::Fit)?;
                    for &s in &p.config.seeds {
                        println!("wrote {}", p.detector_path(s).display());
                    }
                }
            }
        }
        Command::Score { common, seed, detector, reps, out } => {
            let cfg = with_seed(load(&common)?, seed);
            match (detector, reps, out) {
                (Some(d), Some(r), Some(out)) => {
                    let scores = Detector::load(&d)?.score(&read_reps(&r)?)?;
                    let mut text = String::from("sample_id,score\n");
                    for (i, s) in scores.iter().enumerate() {
                        text += &format!("{i},{s}\n");
                    }
                    io::write_atomic(&out, text.as_bytes())?;
                    println!("wrote {}", out.display());
                }
                _ => {
                    run_stage(cfg, Stage::Score)?;
                }
            }
        }
        Command::Eval(c) => {
            let p = run_stage(load(&c)?, Stage::Eval)?;
            let text = std::fs::read_to_string(p.summary_path()).context("reading summary")?;
            print!("{text}");
        }
        Command::Mmd { common, batch_sizes } => {
            let mut cfg = load(&common)?;
            if let Some(b) = batch_sizes {
                cfg.evaluation.mmd_batch_sizes = b;
            }
            let p = run_stage(cfg, Stage::Mmd)?;
            print!("{}", std::fs::read_to_string(p.mmd_path())?);
        }
        Command::Explain { common, samples, heatmap } => {
            let mut cfg = load(&common)?;
            if let Some(s) = samples {
                cfg.evaluation.explain_samples = s;
            }
            let p = run_stage(cfg, Stage::Explain)?;
            for id in &p.config.evaluation.explain_samples {
                let path = p.explain_dir().join(format!("sample_{id}_heatmap.txt"));
                if heatmap {
                    print!("{}", std::fs::read_to_string(&path)?);
                } else {
                    println!("wrote {}", path.display());
                }
            }
        }
        Command::All(c) => {
            let p = run_stage(load(&c)?, Stage::All)?;
            print!("{}", std::fs::read_to_string(p.summary_path())?);
        }
        Command::Ingest { input, out } => {
            let t = read_reps(&input)?;
            io::write_tensor(&out, &t)?;
            println!("wrote {} ({} x {})", out.display(), t.rows(), t.cols());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. } | Error::InvalidArgument(_) | Error::Parse { .. }) => 2,
        Some(Error::MissingArtifact(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
