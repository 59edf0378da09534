use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use multiact::corpus::{
    generate_corpus, load_corpus, load_motion, save_corpus, save_motion, ActionScript, CorpusConfig, Segment,
    SegmentedSequence,
};
use multiact::evaluation::{
    evaluate_long_term, evaluate_single_step, EquivalenceMap, FidMode, LongTermConfig, SingleStepConfig,
};
use multiact::kinematics::forward_kinematics;
use multiact::pipeline::run;
use multiact_cli::artifacts::{checkpoint_dir, train_all, Stages};
use multiact_cli::service::{serve, AppState};
use multiact_cli::{CliError, CliResult, ModelSet, TrainConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "multiact",
    version,
    about = "Long-horizon skeletal motion from action label sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Corpus {
        /// Corpus config (TOML or JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the MACVAE, initializer and recognition classifier.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Training config (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue from checkpoints already in the output directory.
        #[arg(long)]
        resume: bool,
        /// Train only these models.
        #[arg(long, value_enum, value_delimiter = ',')]
        only: Vec<Stage>,
    },
    /// Generate a long-term motion from an action sequence.
    Generate {
        #[command(flatten)]
        checkpoints: CheckpointArg,
        /// Comma-separated action names.
        #[arg(long, conflicts_with = "script", required_unless_present = "script")]
        actions: Option<String>,
        /// Action script JSON: `{"entries": [{"label", "transition_length", "action_length"}]}`.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Motion file; `.bin` selects the binary encoding.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the single-step protocol and optionally the long-term curves.
    Evaluate {
        #[command(flatten)]
        checkpoints: CheckpointArg,
        #[arg(long)]
        corpus: PathBuf,
        /// Number of steps for per-step long-term curves.
        #[arg(long)]
        long_term: Option<usize>,
        #[arg(long, default_value_t = 50)]
        scripts: usize,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, value_enum, default_value_t = FidArg::Pooled)]
        fid: FidArg,
        /// Label equivalence map JSON; identity when omitted.
        #[arg(long)]
        equivalence: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a motion file's poses with forward-kinematics joint positions.
    Export {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP steering API.
    Serve {
        #[command(flatten)]
        checkpoints: CheckpointArg,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Write sessions through to this directory and restore them on start.
        #[arg(long)]
        sessions: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CheckpointArg {
    /// Checkpoint directory (or MULTIACT_CHECKPOINT_DIR).
    #[arg(long)]
    checkpoints: Option<PathBuf>,
}

impl CheckpointArg {
    fn load(self) -> CliResult<ModelSet> {
        ModelSet::load(&checkpoint_dir(self.checkpoints)?)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    Macvae,
    Initializer,
    Classifier,
}

#[derive(Clone, Copy, ValueEnum)]
enum FidArg {
    Pooled,
    PerAction,
}

fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn corpus_command(config: &Path, seed: u64, out: &Path) -> CliResult<()> {
    let text = read_input(config)?;
    let is_json = config.extension().is_some_and(|e| e == "json");
    let parsed = if is_json {
        CorpusConfig::from_json(&text)
    } else {
        CorpusConfig::from_toml(&text)
    };
    let config = parsed.map_err(|e| CliError::Usage(e.to_string()))?;
    let corpus = generate_corpus(&config, seed)?;
    save_corpus(out, &corpus)?;
    println!(
        "wrote {} sequences ({} train, {} test) to {}",
        corpus.sequences.len(),
        corpus.split.train.len(),
        corpus.split.test.len(),
        out.display()
    );
    Ok(())
}

fn load_corpus_dir(dir: &Path) -> CliResult<multiact::corpus::Corpus> {
    if !dir.join("manifest.json").exists() {
        return Err(CliError::Usage(format!("{} is not a corpus directory", dir.display())));
    }
    Ok(load_corpus(dir)?)
}

fn train_command(
    corpus: &Path,
    config: Option<&Path>,
    seed: u64,
    out: &Path,
    resume: bool,
    only: &[Stage],
) -> CliResult<()> {
    let corpus = load_corpus_dir(corpus)?;
    let config = match config {
        Some(p) => TrainConfig::from_toml(&read_input(p)?)?,
        None => TrainConfig::default(),
    };
    let stages = if only.is_empty() {
        Stages::ALL
    } else {
        Stages {
            macvae: only.contains(&Stage::Macvae),
            initializer: only.contains(&Stage::Initializer),
            classifier: only.contains(&Stage::Classifier),
        }
    };
    let summary = train_all(&corpus, &config, seed, out, stages, resume)?;
    for (name, report) in [("macvae", &summary.macvae), ("initializer", &summary.initializer)] {
        if let Some(last) = report.as_ref().and_then(|r| r.last()) {
            println!("{name}: final loss {:.5} after {} epochs", last.total, last.epoch + 1);
        }
    }
    if let Some(c) = &summary.classifier {
        println!("classifier: held-out accuracy {:.3}", c.test_accuracy);
    }
    Ok(())
}

fn generate_command(
    set: &ModelSet,
    actions: Option<&str>,
    script: Option<&Path>,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    let labels = set.labels();
    let script = match (actions, script) {
        (Some(list), _) => {
            let names: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            ActionScript::from_names(&names, labels, &set.manifest.lengths).map_err(|e| match e {
                multiact::Error::UnknownLabel(_) | multiact::Error::TransitionLabelRejected => {
                    let valid: Vec<&str> = labels.action_ids().filter_map(|i| labels.name(i)).collect();
                    CliError::Usage(format!("{e}; valid labels: {}", valid.join(", ")))
                }
                other => CliError::Usage(other.to_string()),
            })?
        }
        (None, Some(path)) => serde_json::from_str(&read_input(path)?)
            .map_err(|e| CliError::Usage(format!("invalid script {}: {e}", path.display())))?,
        (None, None) => return Err(CliError::Usage("pass --actions or --script".into())),
    };
    let (motion, log) = run(&script, &set.models, seed)?;
    let sequence = SegmentedSequence {
        segments: log
            .iter()
            .map(|s| Segment {
                start: s.start,
                end: s.end,
                label: s.label,
            })
            .collect(),
        motion,
    };
    save_motion(out, &sequence, set.skeleton(), labels)?;
    println!(
        "wrote {} frames in {} segments to {}",
        sequence.motion.len(),
        log.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_command(
    set: &ModelSet,
    corpus: &Path,
    long_term: Option<usize>,
    scripts: usize,
    samples: usize,
    repeats: usize,
    fid: FidArg,
    equivalence: Option<&Path>,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    let corpus = load_corpus_dir(corpus)?;
    let classifier = set.classifier()?;
    let eq = match equivalence {
        Some(p) => EquivalenceMap::from_json(&read_input(p)?, &corpus.labels)?,
        None => EquivalenceMap::identity(&corpus.labels),
    };
    fs::create_dir_all(out)?;
    let config = SingleStepConfig {
        n_samples: samples,
        repeats,
        fid_mode: match fid {
            FidArg::Pooled => FidMode::Pooled,
            FidArg::PerAction => FidMode::PerAction,
        },
        ..Default::default()
    };
    let report = evaluate_single_step(&set.models, classifier, &corpus, &eq, &config, seed)?;
    write_json(&out.join("single_step.json"), &report)?;
    for row in &report.rows {
        println!(
            "{:<28} FID_test {:>9.4} ± {:.4}  top1 {:.3} ± {:.3}",
            row.method, row.fid_test.mean, row.fid_test.ci95, row.top1.mean, row.top1.ci95
        );
    }
    if let Some(steps) = long_term {
        let config = LongTermConfig {
            n_scripts: scripts,
            max_steps: steps,
        };
        let curves = evaluate_long_term(&set.models, classifier, &corpus, &eq, &config, seed)?;
        fs::write(out.join("long_term.csv"), curves.to_csv()?)?;
        write_json(&out.join("long_term.json"), &curves)?;
        println!("wrote {}-step curves", curves.steps.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct ExportFrame {
    pose: Vec<f64>,
    joints: Vec<[f64; 3]>,
}

#[derive(Serialize)]
struct Export<'a> {
    fps: f64,
    skeleton: &'a multiact::kinematics::Skeleton,
    labels: &'a [String],
    segments: &'a [Segment],
    frames: Vec<ExportFrame>,
}

fn export_command(motion: &Path, out: &Path) -> CliResult<()> {
    if !motion.exists() {
        return Err(CliError::Usage(format!("no motion file at {}", motion.display())));
    }
    let file = load_motion(motion)?;
    let frames = file
        .sequence
        .motion
        .frames
        .iter()
        .map(|p| {
            let fk = forward_kinematics(p, &file.skeleton)?;
            Ok(ExportFrame {
                pose: p.flatten(),
                joints: fk.joints.iter().map(|j| [j.x, j.y, j.z]).collect(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let export = Export {
        fps: file.sequence.motion.fps,
        skeleton: &file.skeleton,
        labels: file.labels.names(),
        segments: &file.sequence.segments,
        frames,
    };
    write_json(out, &export)?;
    println!("exported {} frames to {}", export.frames.len(), out.display());
    Ok(())
}

fn serve_command(set: ModelSet, host: &str, port: u16, sessions: Option<PathBuf>) -> CliResult<()> {
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::Usage(format!("bad address {host}:{port}: {e}")))?;
    let models = Arc::new(set);
    let state = match sessions {
        Some(dir) => AppState::with_store(models, dir)?,
        None => AppState::new(models),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve(Arc::new(state), addr))
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Corpus { config, seed, out } => corpus_command(&config, seed, &out),
        Command::Train {
            corpus,
            config,
            seed,
            out,
            resume,
            only,
        } => train_command(&corpus, config.as_deref(), seed, &out, resume, &only),
        Command::Generate {
            checkpoints,
            actions,
            script,
            seed,
            out,
        } => generate_command(&checkpoints.load()?, actions.as_deref(), script.as_deref(), seed, &out),
        Command::Evaluate {
            checkpoints,
            corpus,
            long_term,
            scripts,
            samples,
            repeats,
            fid,
            equivalence,
            seed,
            out,
        } => evaluate_command(
            &checkpoints.load()?,
            &corpus,
            long_term,
            scripts,
            samples,
            repeats,
            fid,
            equivalence.as_deref(),
            seed,
            &out,
        ),
        Command::Export { motion, out } => export_command(&motion, &out),
        Command::Serve {
            checkpoints,
            host,
            port,
            sessions,
        } => serve_command(checkpoints.load()?, &host, port, sessions),
    }
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
