//! Command line: `synth-data`, `train`, `eval`, `embed`, `bench`, `stream`.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use percgest_core::data::{AugmentPolicy, ClassScheme, ExclusionList, Facet, HandPart, InterfaceProfile, RebalanceMode, SynthConfig, SynthLayout};
use percgest_core::models::{ArchitectureId, HeadConfig, ModelBundle};
use percgest_core::onset::OnsetConfig;
use percgest_core::train::{train, Selection, TrainConfig};

use crate::analysis::{cross_dataset_eval, embed_report, eval_report, evaluate_examples, Subset};
use crate::bench::{bench, BenchReport, DEFAULT_CALLS};
use crate::bundle::{load_bundle, save_bundle, sha256_hex, to_bytes};
use crate::engine::{run_stream, Source, StreamOptions};
use crate::error::{exit, Error, Result};
use crate::manifest::{load_manifest_examples, read_manifest, Strictness};
use crate::report::{dataset_hash, write_points_csv, Report, ReportMeta, SCHEMA_VERSION};
use crate::synth::write_synth;
use crate::wav;

#[derive(Debug, Parser)]
#[command(name = "percgest", version, about = "Percussive hit recognition: data, training, evaluation and streaming")]
pub struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-channel hit dataset.
    SynthData(SynthArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Evaluate a bundle on one or more manifests.
    Eval(EvalArgs),
    /// Write 2-D embeddings and the KL matrix of one label facet.
    Embed(EmbedArgs),
    /// Measure per-call inference latency.
    Bench(BenchArgs),
    /// Run onset-gated inference over a recording or raw frames on stdin.
    Stream(StreamArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Studio,
    Shifted,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hits per (hand part, location) combination.
    #[arg(long, default_value_t = 20)]
    pub hits_per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    #[arg(long, default_value_t = -60.0, allow_hyphen_values = true)]
    pub noise_floor_db: f64,
    #[arg(long, value_enum, default_value_t = Profile::Studio)]
    pub profile: Profile,
    /// Put every hit in one file instead of one file per combination.
    #[arg(long)]
    pub single_file: bool,
    /// Frames between consecutive hits.
    #[arg(long)]
    pub spacing: Option<usize>,
    /// Restrict to these hand parts (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub hand_parts: Vec<HandPart>,
    /// Generate every combination, including excluded ones.
    #[arg(long)]
    pub no_exclusions: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Accept unknown manifest fields with a warning.
    #[arg(long)]
    pub lenient: bool,
    /// Accept every (hand part, location) combination.
    #[arg(long)]
    pub no_exclusions: bool,
}

impl DataArgs {
    fn strictness(&self) -> Strictness {
        if self.lenient {
            Strictness::Lenient
        } else {
            Strictness::Strict
        }
    }

    fn exclusions(&self) -> ExclusionList {
        if self.no_exclusions {
            ExclusionList::none()
        } else {
            ExclusionList::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Rebalance {
    None,
    Undersample,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub arch: ArchitectureId,
    /// 2 (kick / non-kick) or 4 (hand parts).
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Add the 5-way location head (4 classes only).
    #[arg(long)]
    pub hierarchical: bool,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// `val` selects on the validation split, `test` (alias `paper`) on the test split.
    #[arg(long, default_value = "val")]
    pub selection: Selection,
    #[arg(long, value_enum, default_value_t = Rebalance::None)]
    pub rebalance: Rebalance,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Write held-out test metrics and training history here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// One or more manifests, each evaluated independently.
    #[arg(long, required = true, num_args = 1..)]
    pub manifest: Vec<PathBuf>,
    /// Only entries with this split tag.
    #[arg(long)]
    pub split: Option<String>,
    /// Report path; with several manifests, a directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "dynamics")]
    pub facet: Facet,
    /// all, kick, non_kick, or a hand part.
    #[arg(long, default_value = "all")]
    pub subset: Subset,
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub bundle: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CALLS)]
    pub calls: usize,
    /// Include feature extraction in each timed call.
    #[arg(long)]
    pub include_features: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Six-channel 44.1 kHz wave file.
    #[arg(long, conflicts_with = "stdin", required_unless_present = "stdin")]
    pub input: Option<PathBuf>,
    /// Read raw interleaved little-endian f32 frames from standard input.
    #[arg(long)]
    pub stdin: bool,
    #[arg(long, default_value_t = 256)]
    pub chunk: usize,
    #[arg(long, default_value_t = OnsetConfig::default().threshold)]
    pub threshold: f64,
    #[arg(long, default_value_t = OnsetConfig::default().refractory_ms)]
    pub refractory_ms: f64,
    /// Mirror events as 64-byte datagrams to this address.
    #[arg(long)]
    pub udp: Option<SocketAddr>,
    /// Report zero inference time so output depends on the input only.
    #[arg(long)]
    pub deterministic: bool,
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).try_init();
    match run(cli.command) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Embed(a) => embed_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Stream(a) => stream_cmd(a),
    }
}

fn synth_data(a: SynthArgs) -> Result<()> {
    let mut layout = if a.single_file {
        SynthLayout::SingleFile { spacing: 44_100, pre_roll: 1024 }
    } else {
        SynthLayout::default()
    };
    if let Some(s) = a.spacing {
        match &mut layout {
            SynthLayout::PerCombo { spacing, .. } | SynthLayout::SingleFile { spacing, .. } => *spacing = s,
        }
    }
    let cfg = SynthConfig {
        seed: a.seed,
        hits_per_class: a.hits_per_class,
        separation: a.separation,
        noise_floor_db: a.noise_floor_db,
        interface_profile: match a.profile {
            Profile::Studio => InterfaceProfile::studio(),
            Profile::Shifted => InterfaceProfile::shifted(),
        },
        exclusions: if a.no_exclusions { ExclusionList::none() } else { ExclusionList::default() },
        layout,
        hand_parts: a.hand_parts,
    };
    let out = write_synth(&cfg, &a.out)?;
    log::info!("wrote {} hits in {} files; manifest {}", out.hits, out.files.len(), out.manifest.display());
    Ok(())
}

fn head_for(classes: usize, hierarchical: bool) -> Result<HeadConfig> {
    match (classes, hierarchical) {
        (2, false) => Ok(HeadConfig::TWO_CLASS),
        (4, false) => Ok(HeadConfig::FOUR_CLASS),
        (4, true) => Ok(HeadConfig::HIERARCHICAL),
        (2, true) => Err(Error::Usage("the location head requires --classes 4".into())),
        (n, _) => Err(Error::Usage(format!("--classes must be 2 or 4, got {n}"))),
    }
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let head = head_for(a.classes, a.hierarchical)?;
    head.validate_for(a.arch)?;
    let manifest = read_manifest(&a.manifest, a.data.strictness(), &a.data.exclusions())?;
    let examples = load_manifest_examples(&manifest)?;
    let hash = dataset_hash(&examples);
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        adam: percgest_core::nn::AdamConfig { lr: a.lr, ..Default::default() },
        augment: if a.no_augment { AugmentPolicy::none() } else { AugmentPolicy::full() },
        selection: a.selection,
        rebalance: match a.rebalance {
            Rebalance::None => RebalanceMode::None,
            Rebalance::Undersample => RebalanceMode::Undersample,
        },
        ..TrainConfig::default()
    };
    log::info!("training {} ({} classes{}) on {} examples", a.arch, head.n_cl, if head.is_hierarchical() { " + location" } else { "" }, examples.len());
    let outcome = train(a.arch, head, &examples, &cfg, &hash, |s| {
        if s.epoch == 1 || s.epoch % 10 == 0 || s.selected {
            log::info!(
                "epoch {:>3} loss {:.4} val acc {:.4}{}",
                s.epoch,
                s.train_loss.total,
                s.val_accuracy,
                if s.selected { " *" } else { "" }
            );
        }
    })?;
    save_bundle(&outcome.bundle, &a.out)?;
    log::info!("saved {}", a.out.display());
    if let Some(path) = &a.report {
        let test: Vec<_> = outcome.split.test.iter().map(|&i| examples[i].clone()).collect();
        let metrics = evaluate_examples(&outcome.bundle, &test)?;
        let bundle_hash = sha256_hex(&to_bytes(&outcome.bundle)?);
        let report = Report {
            schema_version: SCHEMA_VERSION,
            metrics: Some(metrics),
            kl: None,
            meta: ReportMeta {
                bundle_hash,
                dataset_hash: hash,
                seed: Some(a.seed),
                architecture: a.arch.to_string(),
                source: format!("held-out test split of {}", a.manifest.display()),
            },
        };
        report.write(path)?;
        let history = path.with_extension("history.json");
        fs::write(&history, serde_json::to_vec_pretty(&outcome.history)?).map_err(|e| Error::io(&history, e))?;
    }
    Ok(())
}

fn load_with_hash(path: &Path) -> Result<(ModelBundle, String)> {
    let bundle = load_bundle(path)?;
    let hash = sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?);
    Ok((bundle, hash))
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let (bundle, hash) = load_with_hash(&a.bundle)?;
    let results: Vec<(PathBuf, Result<Report>)> = match &a.split {
        None => cross_dataset_eval(&bundle, &hash, &a.manifest, a.data.strictness(), &a.data.exclusions()),
        Some(tag) => a
            .manifest
            .iter()
            .map(|m| {
                let r = read_manifest(m, a.data.strictness(), &a.data.exclusions()).and_then(|mut man| {
                    man.entries.retain(|e| e.split.as_deref() == Some(tag.as_str()));
                    let ex = load_manifest_examples(&man)?;
                    eval_report(&bundle, &hash, &ex, &format!("{} [split {tag}]", m.display()))
                });
                (m.clone(), r)
            })
            .collect(),
    };
    let several = results.len() > 1;
    let mut first_err = None;
    let stdout = io::stdout();
    for (i, (m, r)) in results.into_iter().enumerate() {
        match r {
            Ok(report) => {
                let mut out = stdout.lock();
                let _ = writeln!(out, "== {}", m.display());
                if let Some(metrics) = &report.metrics {
                    let _ = write!(out, "{}", metrics.classes.table());
                    if let Some(l) = &metrics.locations {
                        let _ = write!(out, "{}", l.table());
                    }
                } else {
                    let _ = writeln!(out, "(no entries)");
                }
                if let Some(path) = &a.out {
                    let target = if several {
                        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
                        path.join(format!("report_{i}.json"))
                    } else {
                        path.clone()
                    };
                    report.write(&target)?;
                }
            }
            Err(e) => {
                eprintln!("error: {}: {e}", m.display());
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn embed_cmd(a: EmbedArgs) -> Result<()> {
    let (bundle, hash) = load_with_hash(&a.bundle)?;
    let manifest = read_manifest(&a.manifest, a.data.strictness(), &a.data.exclusions())?;
    let examples = load_manifest_examples(&manifest)?;
    let (report, set) = embed_report(&bundle, &hash, &examples, a.facet, a.subset, &a.manifest.display().to_string())?;
    write_points_csv(&set, &a.points)?;
    if let Some(kl) = &report.kl {
        let mut out = io::stdout().lock();
        let _ = writeln!(out, "KL({}), rows = from, columns = to", kl.facet);
        let _ = writeln!(out, "{:>12}{}", "", kl.labels.iter().map(|l| format!("{l:>12}")).collect::<String>());
        for (l, row) in kl.labels.iter().zip(&kl.matrix) {
            let cells: String = row.iter().map(|v| v.map_or(format!("{:>12}", "-"), |x| format!("{x:>12.3}"))).collect();
            let _ = writeln!(out, "{l:>12}{cells}");
        }
        if !kl.missing.is_empty() {
            let _ = writeln!(out, "too few points: {}", kl.missing.join(", "));
        }
    }
    if let Some(path) = &a.out {
        report.write(path)?;
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let mut reports = Vec::new();
    for path in &a.bundle {
        let b = load_bundle(path)?;
        let r = bench(&b, a.calls, a.include_features, a.seed)?;
        if r.jitter_flag {
            log::warn!("{}: p99 {:.2} us exceeds ten times the mean {:.2} us", r.architecture, r.p99_us, r.mean_us);
        }
        reports.push(r);
    }
    print!("{}", BenchReport::table(&reports));
    if let Some(path) = &a.json {
        fs::write(path, serde_json::to_vec_pretty(&reports)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn stream_cmd(a: StreamArgs) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    // Fail early on a head the event schema cannot name.
    ClassScheme::for_head(bundle.head.n_cl, bundle.head.n_loc)?;
    let source = match &a.input {
        Some(p) => Source::Frames(wav::read(p)?),
        None => Source::Reader(Box::new(io::stdin())),
    };
    let opts = StreamOptions {
        onset: OnsetConfig { threshold: a.threshold, refractory_ms: a.refractory_ms, ..OnsetConfig::default() },
        chunk_frames: a.chunk,
        deterministic: a.deterministic,
        udp: a.udp,
        ..StreamOptions::default()
    };
    let (summary, _) = run_stream(&bundle, source, &opts, io::BufWriter::new(io::stdout()))?;
    log::info!(
        "{} frames, {} events ({} dropped by the queue, {} onsets dropped, {} failed)",
        summary.frames,
        summary.events,
        summary.dropped_events,
        summary.dropped_onsets,
        summary.failed
    );
    Ok(())
}
