//! `pers` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pers_core::corpus::Dimension;
use pers_core::pipeline::{self, BaselineMode, PipelineConfig, ViewSelection};
use pers_core::PersError;

#[derive(Parser, Debug)]
#[command(name = "pers", version, about = "Multi-view stacked MBTI profiling pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-source and per-dimension label statistics.
    Stats,
    /// Write the normalized corpus.
    Preprocess,
    /// Fit featurizers on the training split and write feature matrices.
    Featurize,
    /// Train the stacked models (and baselines) and write the model archive.
    Train,
    /// Score the model archive on its held-out users.
    Evaluate,
    /// Predict every user of the corpus.
    Predict,
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n_users: Option<usize>,
    /// Signal strength for every dimension of both views.
    #[arg(long)]
    strength: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ViewsArg {
    Text,
    Image,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DimensionArg {
    #[value(name = "EI")]
    Ei,
    #[value(name = "SN")]
    Sn,
    #[value(name = "TF")]
    Tf,
    #[value(name = "JP")]
    Jp,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaselineArg {
    None,
    Single,
    Early,
    #[value(name = "early_pca")]
    EarlyPca,
}

#[derive(Args, Debug)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    views: Option<ViewsArg>,
    #[arg(long, global = true, value_enum)]
    dimension: Option<DimensionArg>,
    #[arg(long, global = true, value_enum)]
    baseline: Option<BaselineArg>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Users JSONL file.
    #[arg(long, global = true)]
    users: Option<PathBuf>,
    /// Image concept CSV file or directory of shards.
    #[arg(long, global = true)]
    images: Option<PathBuf>,
    /// Model archive path (default: <out>/model.tar).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true)]
    emoji_table: Option<PathBuf>,
    #[arg(long, global = true)]
    datetime_patterns: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, PersError> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => PersError::Config(format!("config file {} not found", path.display())),
        _ => PersError::io(path, e),
    })?;
    toml::from_str(&text).map_err(|e| PersError::Config(format!("{}: {e}", path.display())))
}

fn apply_overrides(cfg: &mut PipelineConfig, o: &Overrides) {
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(w) = o.workers {
        cfg.workers = w;
    }
    if let Some(v) = o.views {
        cfg.views = match v {
            ViewsArg::Text => ViewSelection::Text,
            ViewsArg::Image => ViewSelection::Image,
            ViewsArg::Both => ViewSelection::Both,
        };
    }
    if let Some(d) = o.dimension {
        cfg.dimensions = match d {
            DimensionArg::Ei => vec![Dimension::EI],
            DimensionArg::Sn => vec![Dimension::SN],
            DimensionArg::Tf => vec![Dimension::TF],
            DimensionArg::Jp => vec![Dimension::JP],
            DimensionArg::All => Dimension::ALL.to_vec(),
        };
    }
    if let Some(b) = o.baseline {
        cfg.baseline = match b {
            BaselineArg::None => BaselineMode::None,
            BaselineArg::Single => BaselineMode::Single,
            BaselineArg::Early => BaselineMode::Early,
            BaselineArg::EarlyPca => BaselineMode::EarlyPca,
        };
    }
    if let Some(p) = &o.out {
        cfg.paths.out_dir = p.clone();
    }
    if let Some(p) = &o.users {
        cfg.paths.users = p.clone();
    }
    if let Some(p) = &o.images {
        cfg.paths.images = Some(p.clone());
    }
    if let Some(p) = &o.model {
        cfg.paths.model = Some(p.clone());
    }
    if let Some(p) = &o.emoji_table {
        cfg.normalizer.emoji_table = Some(p.clone());
    }
    if let Some(p) = &o.datetime_patterns {
        cfg.normalizer.datetime_patterns = Some(p.clone());
    }
}

fn run(command: &Command, cfg: &PipelineConfig) -> Result<String, PersError> {
    Ok(match command {
        Command::Stats => pipeline::run_stats(cfg)?.to_text(),
        Command::Preprocess => format!("wrote {}\n", pipeline::run_preprocess(cfg)?.display()),
        Command::Featurize => {
            let out = pipeline::run_featurize(cfg)?;
            let mut s = format!("wrote {}\n", out.featurizers.display());
            for p in out.text.iter().chain(out.image.iter()) {
                s.push_str(&format!("wrote {}\n", p.display()));
            }
            s
        }
        Command::Train => {
            let (path, bundle) = pipeline::run_train(cfg)?;
            format!(
                "trained {} dimension(s) on {} users; wrote {}\n",
                bundle.models.len(),
                bundle.manifest.n_train,
                path.display()
            )
        }
        Command::Evaluate => pipeline::run_evaluate(cfg)?.to_text(),
        Command::Predict => format!("wrote {}\n", pipeline::run_predict(cfg)?.display()),
        Command::Synth(_) => {
            let files = pipeline::run_synth(cfg)?;
            format!("wrote {}\nwrote {}\n", files.users.display(), files.images.display())
        }
    })
}

fn exit_code(e: &PersError) -> u8 {
    match e {
        PersError::Config(_) => 3,
        PersError::Io { .. } => 4,
        PersError::MissingArtifact(_) => 5,
        PersError::FingerprintMismatch { .. } => 6,
        PersError::Schema(_) | PersError::InvalidCode(_) | PersError::DanglingImageRef { .. } | PersError::Format(_) => 7,
        _ => 8,
    }
}

fn fail(e: &PersError) -> ExitCode {
    let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    eprintln!("{msg}");
    ExitCode::from(exit_code(e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match load_config(cli.opts.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    apply_overrides(&mut cfg, &cli.opts);
    if let Command::Synth(a) = &cli.command {
        if let Some(n) = a.n_users {
            cfg.synth.n_users = n;
        }
        if let Some(s) = a.strength {
            cfg.synth.text_strength = [s; 4];
            cfg.synth.image_strength = [s; 4];
        }
        if let Some(s) = cli.opts.seed {
            cfg.synth.seed = s;
        }
    }
    match pipeline::with_workers(cfg.workers, || run(&cli.command, &cfg)) {
        Ok(Ok(out)) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Ok(Err(e)) | Err(e) => fail(&e),
    }
}
