use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use masscast::data::{ContainerClass, PatchArchive};
use masscast::eval::{self, combine_scores, make_folds, random_split, CatalogEntry, TruthRecord};
use masscast::gradcheck;
use masscast::massnet::{load_model, save_model, train, TrainConfig, TrainHistory};
use masscast::nn::OptimizerKind;
use masscast::pipeline::{extract_tree, predict_archive, training_samples};
use masscast::selection::SelectionConfig;
use masscast::synth::{generate, SynthSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "masscast", version, about = "Container mass estimation from RGB-D recordings")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Serialize)]
struct SelectionArgs {
    /// Candidates kept per recording.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Consider every n-th frame.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Minimum fraction of mask pixels with valid depth.
    #[arg(long, default_value_t = 0.1)]
    min_valid_depth: f64,
}

impl SelectionArgs {
    fn config(&self) -> SelectionConfig {
        SelectionConfig {
            k_max: self.k,
            frame_stride: self.stride,
            min_valid_depth_fraction: self.min_valid_depth,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Cv3,
    Final,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Select the K nearest container patches of every recording.
    Extract {
        #[arg(long)]
        recordings: PathBuf,
        /// Root holding `<id>/detections.jsonl`; defaults to the recordings root.
        #[arg(long)]
        detections: Option<PathBuf>,
        #[command(flatten)]
        selection: SelectionArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the regressor on an extracted archive.
    Train {
        #[arg(long)]
        patches: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, env = "MASSCAST_SEED", default_value_t = 0)]
        seed: u64,
        /// Model path; cv3 writes `<stem>.fold<i>.<ext>` instead.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the mode default (100 for cv3, 300 for final).
        #[arg(long)]
        epochs: Option<usize>,
        /// Augmented copies per patch (mode default: 3 for cv3, 4 for final).
        #[arg(long)]
        copies: Option<usize>,
        #[arg(long, value_enum, default_value = "sgd")]
        optimizer: OptimizerArg,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Predict one mass per recording.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        recordings: PathBuf,
        #[arg(long)]
        detections: Option<PathBuf>,
        #[command(flatten)]
        selection: SelectionArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions; repeat --pred/--truth pairs to score several
    /// splits and their combination.
    Score {
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, required = true)]
        truth: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic recordings.
    Synth {
        /// TOML spec; missing keys take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, env = "MASSCAST_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        recordings: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every backward pass.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 10)]
        model_seeds: u64,
        #[arg(long, default_value_t = 3)]
        coords: usize,
    },
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<String>,
    outputs: Vec<Artifact>,
    started_unix_s: u64,
    wall_clock_s: f64,
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

struct Run {
    command: &'static str,
    started: Instant,
    started_unix_s: u64,
}

impl Run {
    fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            started_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    /// Writes `<dir>/<command>.manifest.json`.
    fn finish(
        self,
        dir: &Path,
        config: serde_json::Value,
        seed: Option<u64>,
        inputs: &[&Path],
        outputs: &[PathBuf],
    ) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config,
            seed,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: outputs
                .iter()
                .map(|p| {
                    Ok(Artifact {
                        path: p.display().to_string(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect::<anyhow::Result<_>>()?,
            started_unix_s: self.started_unix_s,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        let path = dir.join(format!("{}.manifest.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_parent(p: &Path) -> anyhow::Result<PathBuf> {
    let dir = parent_dir(p);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// `dir/stem<suffix>` for a path `dir/stem.ext`.
fn sibling(p: &Path, suffix: &str) -> PathBuf {
    let stem = p.file_stem().map_or("out".into(), |s| s.to_string_lossy().into_owned());
    parent_dir(p).join(format!("{stem}{suffix}"))
}

fn cmd_extract(recordings: &Path, detections: Option<&Path>, sel: &SelectionArgs, out: &Path) -> anyhow::Result<()> {
    let run = Run::start("extract");
    let dir = ensure_parent(out)?;
    let archive = extract_tree(recordings, detections, &sel.config())?;
    archive.save(out)?;

    let mut summary = String::new();
    writeln!(summary, "recordings={}", archive.recordings.len())?;
    writeln!(summary, "patches={}", archive.candidates.len())?;
    let class_of: std::collections::HashMap<&str, ContainerClass> =
        archive.recordings.iter().map(|r| (r.id.as_str(), r.class)).collect();
    for class in ContainerClass::ALL {
        let n = archive.candidates.iter().filter(|c| class_of[c.recording_id.as_str()] == class).count();
        writeln!(summary, "patches.{class}={n}")?;
    }
    let unknown = archive
        .candidates
        .iter()
        .filter(|c| class_of[c.recording_id.as_str()] == ContainerClass::Unknown)
        .count();
    let frac = if archive.candidates.is_empty() {
        0.0
    } else {
        unknown as f64 / archive.candidates.len() as f64
    };
    writeln!(summary, "non_annotated_fraction={frac}")?;
    if archive.candidates.is_empty() {
        log::warn!("no candidates extracted");
    }
    print!("{summary}");
    let summary_path = sibling(out, ".summary.txt");
    fs::write(&summary_path, &summary)?;
    let mut inputs = vec![recordings];
    inputs.extend(detections);
    run.finish(
        &dir,
        serde_json::to_value(sel)?,
        None,
        &inputs,
        &[out.to_path_buf(), summary_path],
    )
}

#[derive(Serialize)]
struct TrainSnapshot {
    mode: Mode,
    epochs: usize,
    copies: usize,
    optimizer: OptimizerArg,
    base_lr: f64,
    batch_size: usize,
}

fn history_csv(h: &TrainHistory) -> String {
    format!("# best_epoch={}\n{}", h.best_epoch, h.to_csv())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    patches: &Path,
    mode: Mode,
    seed: u64,
    out: &Path,
    epochs: Option<usize>,
    copies: Option<usize>,
    optimizer: OptimizerArg,
    lr: Option<f64>,
    batch_size: usize,
) -> anyhow::Result<()> {
    let run = Run::start("train");
    let dir = ensure_parent(out)?;
    let archive = PatchArchive::load(patches)?;
    let mut config = match mode {
        Mode::Cv3 => TrainConfig::cross_validation(seed),
        Mode::Final => TrainConfig::final_model(seed),
    };
    config.epochs = epochs.unwrap_or(config.epochs);
    config.copies = copies.unwrap_or(config.copies);
    config.batch_size = batch_size;
    config.optimizer.kind = match optimizer {
        OptimizerArg::Sgd => OptimizerKind::Sgd,
        OptimizerArg::Adam => OptimizerKind::Adam,
    };
    config.optimizer.base_lr = lr.unwrap_or(config.optimizer.base_lr);
    let snapshot = TrainSnapshot {
        mode,
        epochs: config.epochs,
        copies: config.copies,
        optimizer,
        base_lr: config.optimizer.base_lr,
        batch_size,
    };

    let labeled: Vec<String> = archive
        .recordings
        .iter()
        .filter(|r| r.true_mass.is_some())
        .map(|r| r.id.clone())
        .collect();
    let mut outputs = Vec::new();
    match mode {
        Mode::Final => {
            let (train_ids, val_ids) = random_split(&labeled, 0.8, seed)?;
            let (model, history) = train(
                &training_samples(&archive, &train_ids),
                &training_samples(&archive, &val_ids),
                &config,
            )?;
            save_model(&model, out)?;
            let hist = sibling(out, ".history.csv");
            fs::write(&hist, history_csv(&history))?;
            println!("best_epoch={} val_loss={}", history.best_epoch, history.epochs[history.best_epoch].val_loss);
            outputs.extend([out.to_path_buf(), hist]);
        }
        Mode::Cv3 => {
            let catalog = archive
                .recordings
                .iter()
                .filter(|r| r.true_mass.is_some())
                .map(|r| {
                    let container_id = r.container_id.clone().with_context(|| {
                        format!("recording {} has no container id; cv3 needs one per recording", r.id)
                    })?;
                    Ok(CatalogEntry {
                        recording_id: r.id.clone(),
                        class: r.class,
                        container_id,
                    })
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let folds = make_folds(&catalog, 0.8, seed)?;
            let ext = out.extension().map_or("bin".into(), |e| e.to_string_lossy().into_owned());
            let truth: std::collections::HashMap<&str, &masscast::data::ArchiveRecording> =
                archive.recordings.iter().map(|r| (r.id.as_str(), r)).collect();
            let mut report = String::new();
            let mut parts = Vec::new();
            for fold in &folds {
                let (model, history) = train(
                    &training_samples(&archive, &fold.train),
                    &training_samples(&archive, &fold.val),
                    &config,
                )?;
                let model_path = sibling(out, &format!(".fold{}.{ext}", fold.id));
                save_model(&model, &model_path)?;
                let hist = sibling(out, &format!(".fold{}.history.csv", fold.id));
                fs::write(&hist, history_csv(&history))?;
                let preds = predict_archive(&model, &archive, Some(&fold.test))?;
                let truths: Vec<TruthRecord> = fold
                    .test
                    .iter()
                    .map(|id| {
                        let r = truth[id.as_str()];
                        TruthRecord {
                            recording_id: id.clone(),
                            mass: r.true_mass.expect("labeled"),
                            class: r.class,
                        }
                    })
                    .collect();
                let rep = eval::score(&preds, &truths)?;
                let held: Vec<String> = fold.held_out.iter().map(|(_, c)| c.clone()).collect();
                writeln!(report, "fold F{} (held out: {})", fold.id, held.join(", "))?;
                report += &rep.to_text();
                writeln!(report)?;
                parts.push((rep.total.score, rep.total.count));
                outputs.extend([model_path, hist]);
            }
            let agg = combine_scores(parts.iter().copied());
            writeln!(report, "aggregate score_% {:.2}", 100.0 * agg)?;
            let report_path = sibling(out, ".cv3_report.txt");
            fs::write(&report_path, &report)?;
            print!("{report}");
            outputs.push(report_path);
        }
    }
    run.finish(&dir, serde_json::to_value(&snapshot)?, Some(seed), &[patches], &outputs)
}

fn cmd_predict(
    model_path: &Path,
    recordings: &Path,
    detections: Option<&Path>,
    sel: &SelectionArgs,
    out: &Path,
) -> anyhow::Result<()> {
    let run = Run::start("predict");
    let dir = ensure_parent(out)?;
    let model = load_model(model_path)?;
    let archive = extract_tree(recordings, detections, &sel.config())?;
    let preds = predict_archive(&model, &archive, None)?;
    eval::save_predictions(&preds, out)?;
    let missing = preds.iter().filter(|p| p.estimate().is_none()).count();
    println!("recordings={} missing={missing}", preds.len());
    let mut inputs = vec![model_path, recordings];
    inputs.extend(detections);
    run.finish(&dir, serde_json::to_value(sel)?, None, &inputs, &[out.to_path_buf()])
}

fn cmd_score(pred: &[PathBuf], truth: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    if pred.len() != truth.len() {
        return Err(CliError::Usage(format!(
            "{} --pred files but {} --truth files",
            pred.len(),
            truth.len()
        ))
        .into());
    }
    let run = Run::start("score");
    let dir = ensure_parent(out)?;
    let mut text = String::new();
    let mut kv = String::new();
    let mut parts = Vec::new();
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        let rep = eval::score(&eval::load_predictions(p)?, &eval::load_truth(t)?)?;
        if pred.len() > 1 {
            writeln!(text, "split {} ({})", i + 1, p.display())?;
            for line in rep.to_key_values().lines() {
                writeln!(kv, "split{}.{line}", i + 1)?;
            }
        } else {
            kv += &rep.to_key_values();
        }
        text += &rep.to_text();
        parts.push((rep.total.score, rep.total.count));
    }
    if pred.len() > 1 {
        let c = combine_scores(parts.iter().copied());
        writeln!(text, "combination score_% {:.2}", 100.0 * c)?;
        writeln!(kv, "combination.score={c}")?;
    }
    fs::write(out, &text)?;
    let kv_path = out.with_extension("kv");
    fs::write(&kv_path, &kv)?;
    print!("{text}");
    let inputs: Vec<&Path> = pred.iter().chain(truth).map(PathBuf::as_path).collect();
    run.finish(&dir, serde_json::Value::Null, None, &inputs, &[out.to_path_buf(), kv_path])
}

fn cmd_synth(spec_path: Option<&Path>, seed: Option<u64>, recordings: Option<usize>, out: &Path) -> anyhow::Result<()> {
    let run = Run::start("synth");
    let mut spec = match spec_path {
        Some(p) => SynthSpec::parse_toml(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => SynthSpec::default(),
    };
    spec.seed = seed.unwrap_or(spec.seed);
    spec.recordings = recordings.unwrap_or(spec.recordings);
    let records = generate(&spec, out)?;
    println!("recordings={}", records.len());
    let inputs: Vec<&Path> = spec_path.into_iter().collect();
    run.finish(
        out,
        serde_json::to_value(&spec)?,
        Some(spec.seed),
        &inputs,
        &[out.join("truth.csv")],
    )
}

fn cmd_gradcheck(seeds: u64, model_seeds: u64, coords: usize) -> anyhow::Result<()> {
    let reports = gradcheck::run_suite(seeds, model_seeds, coords)?;
    let mut failed = Vec::new();
    for r in &reports {
        println!(
            "{:<10} {} seeds={} checked={} skipped={} max_rel_err={:.3e} tol={:.0e}",
            r.name,
            if r.passed() { "PASS" } else { "FAIL" },
            r.seeds,
            r.checked,
            r.skipped,
            r.max_rel_error,
            r.tolerance
        );
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    if !failed.is_empty() {
        return Err(CliError::Numerical(format!("gradient check failed: {}", failed.join(", "))).into());
    }
    Ok(())
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) | Self::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CliError>() {
        Some(CliError::Usage(_)) => return EXIT_USAGE,
        Some(CliError::Numerical(_)) => return EXIT_NUMERICAL,
        None => {}
    }
    match err.downcast_ref::<masscast::Error>() {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Extract {
            recordings,
            detections,
            selection,
            out,
        } => cmd_extract(recordings, detections.as_deref(), selection, out),
        Command::Train {
            patches,
            mode,
            seed,
            out,
            epochs,
            copies,
            optimizer,
            lr,
            batch_size,
        } => cmd_train(patches, *mode, *seed, out, *epochs, *copies, *optimizer, *lr, *batch_size),
        Command::Predict {
            model,
            recordings,
            detections,
            selection,
            out,
        } => cmd_predict(model, recordings, detections.as_deref(), selection, out),
        Command::Score { pred, truth, out } => cmd_score(pred, truth, out),
        Command::Synth {
            spec,
            seed,
            recordings,
            out,
        } => cmd_synth(spec.as_deref(), *seed, *recordings, out),
        Command::Gradcheck {
            seeds,
            model_seeds,
            coords,
        } => cmd_gradcheck(*seeds, *model_seeds, *coords),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
