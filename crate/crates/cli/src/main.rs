//! `wordwriter` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or config, 3 ingestion, 4 segmentation, 5 patch
//! extraction, 6 embedding, 7 sparse basis or saliency, 8 SVM, 9 bundle, 10 I/O.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use wordwriter::bundle::{self, BUNDLE_DIR_ENV};
use wordwriter::config::{FusionMode, PipelineConfig};
use wordwriter::corpus::{generate_synthetic, open_corpus, Split};
use wordwriter::imaging::{segment_page, GrayImage, RegionRecord};
use wordwriter::keypoints::{create_manifest, dump_patches, word_patches};
use wordwriter::pipeline::{evaluate_split, identifications_csv, identify, results_csv, run_experiment, summary_json};
use wordwriter::Error;

#[derive(Parser)]
#[command(name = "wordwriter", version, about = "Writer identification from handwritten word images")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log level filter when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "info")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic multi-writer corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        writers: usize,
        #[arg(long, default_value_t = 40)]
        words: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Split page images into word images.
    Segment {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(required = true)]
        pages: Vec<PathBuf>,
    },
    /// Dump the normalized keypoint patches of word images.
    Patches {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(required = true)]
        words: Vec<PathBuf>,
    },
    /// Fit every stage on a corpus and write a model bundle.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Corpus layout: auto, iam or cvl.
        #[arg(long, default_value = "auto")]
        layout: String,
        #[arg(long, env = BUNDLE_DIR_ENV)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        embed_dim: Option<usize>,
        /// Fusion mode stored in the bundle.
        #[arg(long)]
        mode: Option<FusionMode>,
        /// Also evaluate baseline, sparse and weighted descriptors on the test split.
        #[arg(long)]
        ablation: bool,
        /// Directory for ablation reports.
        #[arg(long, default_value = "reports")]
        reports: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Rank writers for word (or page) images.
    Identify {
        #[arg(long, env = BUNDLE_DIR_ENV)]
        bundle: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        topk: usize,
        /// Treat inputs as pages: segment, then average word scores.
        #[arg(long)]
        pages: bool,
        /// Write identify.csv and identify.json here instead of printing CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Evaluate a bundle on a corpus test split.
    Eval {
        #[arg(long, env = BUNDLE_DIR_ENV)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "auto")]
        layout: String,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
}

impl Command {
    /// Exit code for failures that do not identify their own stage.
    fn stage_code(&self) -> u8 {
        match self {
            Command::Synth { .. } => 10,
            Command::Segment { .. } => 4,
            Command::Patches { .. } => 5,
            Command::Train { .. } | Command::Identify { .. } | Command::Eval { .. } => 6,
        }
    }
}

fn exit_code(err: &anyhow::Error, stage: u8) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Usage(_) | Error::Config(_) => 2,
                Error::Ingestion { .. } | Error::Corpus(_) | Error::Image(_) => 3,
                Error::PatchTooSmall { .. } => 5,
                Error::NoConvergence { .. } | Error::Degenerate(_) => 7,
                Error::NoEvidence(_) => 8,
                Error::Bundle(_) => 9,
                Error::Io(_) | Error::Json(_) => 10,
                Error::Dimension(_) | Error::Parameter(_) => stage,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 10;
        }
    }
    stage
}

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn bundle_dir(arg: Option<PathBuf>) -> PathBuf {
    arg.unwrap_or_else(bundle::default_bundle_dir)
}

fn load_image(path: &Path) -> Result<GrayImage> {
    GrayImage::load(path).map_err(|e| {
        Error::Ingestion {
            paths: vec![path.to_path_buf()],
            reason: e.to_string(),
        }
        .into()
    })
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "item".into())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { out, writers, words, seed } => {
            let corpus = generate_synthetic(seed, writers, words, &out)?;
            info!("wrote {} writers, {} words to {}", corpus.writers.len(), corpus.items.len(), out.display());
        }
        Command::Segment { out, cfg, pages } => {
            let cfg = load_config(&cfg)?;
            fs::create_dir_all(&out)?;
            let mut records = String::new();
            for page in &pages {
                let image = load_image(page)?;
                let s = &cfg.segment;
                let regions = segment_page(&image, s.denoise_sigma, s.threshold, s.log_sigma, s.min_area)?;
                if regions.is_empty() {
                    warn!("{}: no word regions", page.display());
                }
                let source = stem(page);
                for (i, r) in regions.iter().enumerate() {
                    r.image.save_png(out.join(format!("{source}_{i}.png")))?;
                    let rec = RegionRecord {
                        source: source.clone(),
                        index: i,
                        x: r.bbox.x,
                        y: r.bbox.y,
                        w: r.bbox.w,
                        h: r.bbox.h,
                    };
                    records.push_str(&serde_json::to_string(&rec)?);
                    records.push('\n');
                }
            }
            fs::write(out.join("regions.jsonl"), records)?;
        }
        Command::Patches { out, cfg, words } => {
            let cfg = load_config(&cfg)?;
            fs::create_dir_all(&out)?;
            let mut manifest = create_manifest(&out.join("patches.jsonl"))?;
            for word in &words {
                let image = load_image(word)?;
                let id = stem(word);
                let patches = word_patches(&image, &id, &cfg.sift)?;
                if patches.is_empty() {
                    warn!("{}: no keypoints, no patches written", word.display());
                }
                dump_patches(&out, &patches, &mut manifest)?;
            }
            std::io::Write::flush(&mut manifest)?;
        }
        Command::Train {
            corpus,
            layout,
            bundle,
            embed_dim,
            mode,
            ablation,
            reports,
            cfg,
        } => {
            let mut cfg = load_config(&cfg)?;
            if let Some(d) = embed_dim {
                cfg.set("net.embed_dim", &d.to_string())?;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            cfg.validate()?;
            if !corpus.is_dir() {
                return Err(Error::Ingestion {
                    paths: vec![corpus],
                    reason: "corpus root is not a directory".into(),
                }
                .into());
            }
            let corpus = open_corpus(&corpus, &layout, cfg.seed)?;
            let modes: Vec<FusionMode> = if ablation { FusionMode::ALL.to_vec() } else { vec![cfg.mode] };
            let exp = run_experiment(&cfg, &corpus, &modes, ablation)?;
            let model = exp
                .models
                .iter()
                .find(|m| m.mode == cfg.mode)
                .context("no model for the configured mode")?;
            let dir = bundle_dir(bundle);
            let manifest = bundle::save(model, &dir)?;
            info!(
                "bundle written to {} (D = {}, {} writers, {} mode)",
                dir.display(),
                manifest.embed_dim,
                manifest.writers.len(),
                manifest.mode.name()
            );
            if ablation {
                fs::create_dir_all(&reports)?;
                let table = exp.ablation_csv();
                fs::write(reports.join("ablation.csv"), &table)?;
                for r in &exp.reports {
                    let name = r.summary.mode.name();
                    fs::write(reports.join(format!("results_{name}.csv")), results_csv(&r.results, cfg.topk))?;
                    fs::write(reports.join(format!("summary_{name}.json")), summary_json(&r.summary)?)?;
                }
                print!("{table}");
            }
        }
        Command::Identify {
            bundle,
            topk,
            pages,
            out,
            images,
        } => {
            if topk == 0 {
                return Err(Error::Usage("--topk must be at least 1".into()).into());
            }
            let model = bundle::load(&bundle_dir(bundle))?;
            for p in &images {
                if !p.is_file() {
                    return Err(Error::Ingestion {
                        paths: vec![p.clone()],
                        reason: "not a file".into(),
                    }
                    .into());
                }
            }
            let ids = identify(&model, &images, pages, topk)?;
            let csv = identifications_csv(&ids, topk);
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    fs::write(dir.join("identify.csv"), csv)?;
                    fs::write(dir.join("identify.json"), serde_json::to_string_pretty(&ids)? + "\n")?;
                }
                None => print!("{csv}"),
            }
        }
        Command::Eval {
            bundle,
            corpus,
            layout,
            out,
        } => {
            let model = bundle::load(&bundle_dir(bundle))?;
            if !corpus.is_dir() {
                bail!(Error::Ingestion {
                    paths: vec![corpus],
                    reason: "corpus root is not a directory".into(),
                });
            }
            let corpus = open_corpus(&corpus, &layout, model.config.seed)?;
            let report = evaluate_split(&model, &corpus, Split::Test)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("results.csv"), results_csv(&report.results, model.config.topk))?;
            fs::write(out.join("summary.json"), summary_json(&report.summary)?)?;
            let s = &report.summary;
            println!("mode {} words {} no_evidence {}", s.mode.name(), s.words, s.no_evidence);
            println!("top1 {:.4} top5 {:.4}", s.top1, s.top5);
            println!("words_per_writer,accuracy");
            for p in &s.curve {
                println!("{},{:.4}", p.words, p.accuracy);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let stage = cli.command.stage_code();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e, stage))
        }
    }
}
