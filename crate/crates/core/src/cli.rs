//! The `hcmfl` command line.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 for data errors.
//! Every subcommand that writes files puts them under `--out DIR`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cptdl::{filter_topk, two_phase_train, FilterScope};
use crate::error::{Error, Result};
use crate::experiment::{ablation, ExperimentConfig};
use crate::features::{
    load_dataset, pool_videos, read_jsonl, save_dataset, write_jsonl, Dataset, FrameFeature, InputView, PoolMode,
    VideoLabel,
};
use crate::hier_prior::{training_log_csv, DataTerm, EpochLog};
use crate::hierarchy::VenueHierarchy;
use crate::keyframes::{load_video_dir, select_keyframes, KeyframeConfig, KeyframeRecord};
use crate::metrics::{argmax_predict, evaluate, EvaluationReport};
use crate::network::FusionNetwork;
use crate::synth::generate;

#[derive(Debug, Parser)]
#[command(name = "hcmfl", version, about = "Venue category prediction from multi-view video features")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    #[command(subcommand)]
    Hierarchy(HierarchyCmd),
    #[command(subcommand)]
    Keyframes(KeyframesCmd),
    #[command(subcommand)]
    Features(FeaturesCmd),
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Two-phase training on source videos and, optionally, target images.
    Train(TrainArgs),
    /// Score target samples with a trained model and keep the top K.
    Filter(FilterArgs),
    /// Macro/Micro-F1 from a predictions file or a model and a dataset.
    Evaluate(EvaluateArgs),
    /// Run the method grid on a synthetic instance.
    Ablation(AblationArgs),
}

#[derive(Debug, Subcommand)]
enum HierarchyCmd {
    /// Parse and check a hierarchy file.
    Validate { file: PathBuf },
    /// Spawn leaves for labeled internal nodes.
    Normalize {
        file: PathBuf,
        /// Node ids carrying samples, one per line.
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum KeyframesCmd {
    /// Select key frames for every video directory under `--videos`.
    Extract {
        /// Directory with one sub-directory of numbered PPM frames per video.
        #[arg(long)]
        videos: PathBuf,
        #[arg(long, default_value_t = 16)]
        bins: usize,
        #[arg(long, default_value_t = 3.0)]
        sigma: f64,
        #[arg(long, default_value_t = 20)]
        cap: usize,
        #[arg(long, default_value_t = 10)]
        keep: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum FeaturesCmd {
    /// Pool per-frame features into one multi-view sample per video.
    Pool {
        /// JSON lines of `{video_id, frame_index, view, vector}`.
        #[arg(long)]
        frames: PathBuf,
        /// JSON lines of `{video_id, label, platform}`.
        #[arg(long)]
        labels: PathBuf,
        /// Sum instead of average.
        #[arg(long)]
        sum: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum SynthCmd {
    /// Write a synthetic source/target pair with ground truth.
    Generate {
        /// TOML experiment config; only `seed` and `[synth]` are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        shift: Option<f64>,
        /// Draw leaf means independently of the hierarchy.
        #[arg(long)]
        misspecified: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PriorKind {
    Flat,
    Hier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum DataTermArg {
    Mean,
    Sum,
}

/// `None` keeps everything.
#[derive(Debug, Clone, Copy)]
struct Budget(Option<usize>);

fn parse_budget(s: &str) -> std::result::Result<Budget, String> {
    match s {
        "inf" | "all" => Ok(Budget(None)),
        _ => match s.parse::<usize>() {
            Ok(0) => Err("K must be at least 1".into()),
            Ok(k) => Ok(Budget(Some(k))),
            Err(_) => Err(format!("expected a positive integer or `inf`, got `{s}`")),
        },
    }
}

fn parse_lambdas(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("bad λ `{x}`: {e}"))).collect()
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    hierarchy: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    /// TOML experiment config; `seed` and `[model]` supply the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "fused")]
    view: InputView,
    #[arg(long, value_enum, default_value = "hier")]
    prior: PriorKind,
    /// Per-category budget K, or `inf`.
    #[arg(long, value_parser = parse_budget)]
    topk: Option<Budget>,
    #[arg(long)]
    filter_scope: Option<FilterScope>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    units: Option<usize>,
    /// Hierarchy layers kept by the prior (0 is a flat prior).
    #[arg(long)]
    hier_layers: Option<usize>,
    /// Comma-separated precisions per parent layer.
    #[arg(long, value_parser = parse_lambdas)]
    lambdas: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    phase2_epochs: Option<usize>,
    /// Phase-1 learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    phase2_lr: Option<f64>,
    /// 0 trains full batch.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    data_term: Option<DataTermArg>,
    /// Shorthand for `--data-term sum`.
    #[arg(long, conflicts_with = "data_term")]
    sum_data_term: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FilterArgs {
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Per-category budget K, or `inf` [default: 100].
    #[arg(long, value_parser = parse_budget)]
    topk: Option<Budget>,
    #[arg(long, default_value = "per-category")]
    filter_scope: FilterScope,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// CSV with header `id,truth,pred`; labels are leaf ids or indices.
    #[arg(long, conflicts_with_all = ["model", "data"], requires = "hierarchy")]
    predictions: Option<PathBuf>,
    #[arg(long)]
    hierarchy: Option<PathBuf>,
    /// Directory written by `train`.
    #[arg(long, requires = "data")]
    model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AblationArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Why a command failed; decides the exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.into())
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Hierarchy(HierarchyCmd::Validate { file }) => {
            let h = read_hierarchy(&file)?;
            println!("ok: {} nodes, {} leaves, {} layers", h.len(), h.num_leaves(), h.max_layer());
            Ok(())
        }
        Command::Hierarchy(HierarchyCmd::Normalize { file, labeled, out }) => normalize(&file, &labeled, &out),
        Command::Keyframes(KeyframesCmd::Extract { videos, bins, sigma, cap, keep, out }) => {
            let cfg = KeyframeConfig { bins_per_channel: bins, sigma_multiplier: sigma, candidate_cap: cap, keep_top: keep };
            cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            extract_keyframes(&videos, &cfg, &out)
        }
        Command::Features(FeaturesCmd::Pool { frames, labels, sum, out }) => {
            let frames: Vec<FrameFeature> = at(&frames, read_jsonl(&frames))?;
            let labels: Vec<VideoLabel> = at(&labels, read_jsonl(&labels))?;
            let mode = if sum { PoolMode::Sum } else { PoolMode::Mean };
            let ds = Dataset::from_samples(pool_videos(&frames, &labels, mode)?)?;
            create_out(&out)?;
            save_dataset(&out.join("dataset.jsonl"), &ds)?;
            Ok(())
        }
        Command::Synth(SynthCmd::Generate { config, seed, noise, shift, misspecified, out }) => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = noise {
                cfg.synth.target_noise_rate = n;
            }
            if let Some(s) = shift {
                cfg.synth.domain_shift = s;
            }
            cfg.synth.misspecified |= misspecified;
            synth_generate(&cfg, &out)
        }
        Command::Train(args) => train(args),
        Command::Filter(args) => filter(args),
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::Ablation(args) => {
            let mut cfg = load_config(args.config.as_deref())?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(r) = args.runs {
                cfg.runs = r;
            }
            let report = ablation(&cfg)?;
            create_out(&args.out)?;
            fs::write(args.out.join("report.csv"), report.to_csv())?;
            fs::write(args.out.join("report.md"), report.to_markdown())?;
            fs::write(args.out.join("runs.csv"), report.runs_csv())?;
            fs::write(args.out.join("config.toml"), cfg.to_toml())?;
            print!("{}", report.to_markdown());
            Ok(())
        }
    }
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Prefix I/O failures with the path they concern.
fn at<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Invalid(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn read_text(path: &Path) -> Result<String> {
    at(path, fs::read_to_string(path).map_err(Error::from))
}

fn read_hierarchy(path: &Path) -> Result<VenueHierarchy> {
    VenueHierarchy::parse(&read_text(path)?)
}

fn load_config(path: Option<&Path>) -> std::result::Result<ExperimentConfig, Failure> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => Ok(ExperimentConfig::from_toml(&read_text(p)?)?),
    }
}

fn normalize(file: &Path, labeled: &Path, out: &Path) -> CliResult {
    let h = read_hierarchy(file)?;
    let text = read_text(labeled)?;
    let names: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
    let normalized = h.normalize_leaves(names)?;
    create_out(out)?;
    fs::write(out.join("hierarchy.tsv"), normalized.hierarchy.serialize())?;
    let mut remap = String::from("from\tto\n");
    for (from, to) in &normalized.remap {
        let _ = writeln!(remap, "{from}\t{to}");
    }
    fs::write(out.join("remap.tsv"), remap)?;
    Ok(())
}

fn extract_keyframes(videos: &Path, cfg: &KeyframeConfig, out: &Path) -> CliResult {
    let listing = at(videos, fs::read_dir(videos).map_err(Error::from))?;
    let mut dirs: Vec<PathBuf> = listing.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    dirs.retain(|p| p.is_dir());
    dirs.sort();
    let mut records = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let video_id = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let frames = at(&dir, load_video_dir(&dir))?;
        if frames.is_empty() {
            log::warn!("`{video_id}` has no frames; skipped");
            continue;
        }
        records.push(KeyframeRecord { video_id, keyframes: select_keyframes(&frames, cfg)? });
    }
    create_out(out)?;
    write_jsonl(&out.join("keyframes.jsonl"), &records)?;
    Ok(())
}

fn synth_generate(cfg: &ExperimentConfig, out: &Path) -> CliResult {
    let data = generate(&cfg.synth.spec(cfg.seed)?)?;
    create_out(out)?;
    fs::write(out.join("hierarchy.tsv"), cfg.synth.hierarchy()?.serialize())?;
    save_dataset(&out.join("source.jsonl"), &data.source)?;
    save_dataset(&out.join("target.jsonl"), &data.target)?;
    write_jsonl(&out.join("groundtruth.jsonl"), &data.ground_truth)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

/// Sidecar written next to `model.bin`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    view: InputView,
    prior: PriorKind,
    hier_layers: Option<usize>,
    lambdas: Vec<f64>,
    data_term: DataTerm,
    /// Serialized full hierarchy; leaf labels index its leaves.
    hierarchy: String,
}

fn load_model(dir: &Path) -> Result<(FusionNetwork, ModelMeta, VenueHierarchy)> {
    let meta: ModelMeta = serde_json::from_str(&read_text(&dir.join("model.json"))?)?;
    let bin = dir.join("model.bin");
    let net = at(&bin, FusionNetwork::load(&bin))?;
    let h = VenueHierarchy::parse(&meta.hierarchy)?;
    if net.shape().num_leaves != h.num_leaves() {
        return Err(Error::Inconsistent(format!(
            "model has {} classes, its hierarchy {} leaves",
            net.shape().num_leaves,
            h.num_leaves()
        )));
    }
    Ok((net, meta, h))
}

fn phase_log(phase: usize, history: &[EpochLog], out: &mut String) {
    for line in training_log_csv(history).lines().skip(1) {
        let _ = writeln!(out, "{phase},{line}");
    }
}

fn train(a: TrainArgs) -> CliResult {
    let cfg = load_config(a.config.as_deref())?;
    let mut m = cfg.model.clone();
    if let Some(Budget(k)) = a.topk {
        m.topk = k;
    }
    if let Some(s) = a.filter_scope {
        m.filter_scope = s;
    }
    if let Some(l) = a.layers {
        m.fused_layers = l;
    }
    if let Some(u) = a.units {
        m.fused_units = u;
    }
    if a.hier_layers.is_some() {
        m.hier_layers = a.hier_layers;
    }
    if let Some(l) = a.lambdas {
        m.lambdas = l;
    }
    if let Some(e) = a.epochs {
        m.phase1.epochs = e;
    }
    if let Some(e) = a.phase2_epochs {
        m.phase2.epochs = e;
    }
    if let Some(lr) = a.lr {
        m.phase1.learning_rate = lr;
    }
    if let Some(lr) = a.phase2_lr {
        m.phase2.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        m.phase1.batch_size = b;
        m.phase2.batch_size = b;
    }
    match (a.data_term, a.sum_data_term) {
        (Some(DataTermArg::Sum), _) | (None, true) => m.data_term = DataTerm::Sum,
        (Some(DataTermArg::Mean), _) => m.data_term = DataTerm::Mean,
        (None, false) => {}
    }
    let seed = a.seed.unwrap_or(cfg.seed);
    m.prior().validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let h = read_hierarchy(&a.hierarchy)?;
    let t = h.num_leaves();
    let source = at(&a.source, load_dataset(&a.source, t))?;
    let target = a.target.as_deref().map(|p| at(p, load_dataset(p, t))).transpose()?;
    let val = a.val.as_deref().map(|p| at(p, load_dataset(p, t))).transpose()?;

    let prior_h = m.prior_hierarchy(&h, a.prior == PriorKind::Hier);
    let out = two_phase_train(&source, target.as_ref(), &prior_h, &m.plan(a.view, seed), &m.prior(), &m.filter(), val.as_ref())?;

    create_out(&a.out)?;
    out.model.net.save(&a.out.join("model.bin"))?;
    let meta = ModelMeta {
        view: a.view,
        prior: a.prior,
        hier_layers: m.hier_layers,
        lambdas: m.lambdas.clone(),
        data_term: m.data_term,
        hierarchy: h.serialize(),
    };
    fs::write(a.out.join("model.json"), serde_json::to_string_pretty(&meta).map_err(Error::from)? + "\n")?;
    let mut log = String::from("phase,epoch,data_loss,prior_penalty,total_loss,macro_f1_val,micro_f1_val\n");
    phase_log(1, &out.phase1_history, &mut log);
    phase_log(2, &out.phase2_history, &mut log);
    fs::write(a.out.join("train_log.csv"), log)?;
    if let Some(f) = &out.filter {
        fs::write(a.out.join("filter_report.csv"), f.report_csv(Some(&h.leaf_names())))?;
    }
    Ok(())
}

fn filter(a: FilterArgs) -> CliResult {
    let (net, meta, h) = load_model(&a.model)?;
    let target = at(&a.target, load_dataset(&a.target, h.num_leaves()))?;
    let cfg = crate::cptdl::FilterConfig { k: a.topk.map_or(Some(100), |b| b.0), scope: a.filter_scope };
    let outcome = filter_topk(&net, meta.view, &target.samples, &cfg)?;
    create_out(&a.out)?;
    fs::write(a.out.join("filter_report.csv"), outcome.report_csv(Some(&h.leaf_names())))?;
    save_dataset(&a.out.join("kept.jsonl"), &target.select(&outcome.kept))?;
    Ok(())
}

fn resolve_label(h: &VenueHierarchy, token: &str, line: usize) -> Result<usize> {
    h.label_of(token).or_else(|_| {
        token
            .parse::<usize>()
            .ok()
            .filter(|&i| i < h.num_leaves())
            .ok_or_else(|| Error::Parse { line, msg: format!("`{token}` is neither a leaf id nor a leaf index") })
    })
}

fn read_predictions(path: &Path, h: &VenueHierarchy) -> Result<(Vec<usize>, Vec<usize>)> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == "id,truth,pred" => {}
        _ => return Err(Error::Parse { line: 1, msg: "expected header `id,truth,pred`".into() }),
    }
    let (mut preds, mut truths) = (Vec::new(), Vec::new());
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [_, truth, pred] = fields[..] else {
            return Err(Error::Parse { line: i + 1, msg: "expected three fields".into() });
        };
        truths.push(resolve_label(h, truth, i + 1)?);
        preds.push(resolve_label(h, pred, i + 1)?);
    }
    Ok((preds, truths))
}

fn write_report(report: &EvaluationReport, h: &VenueHierarchy, out: &Path) -> Result<()> {
    create_out(out)?;
    fs::write(out.join("report.csv"), report.to_csv(Some(&h.leaf_names())))?;
    fs::write(out.join("report.md"), report.to_markdown("model"))?;
    println!("macro_f1={:.6} micro_f1={:.6}", report.macro_f1, report.micro_f1);
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> CliResult {
    match (&a.predictions, &a.model, &a.data) {
        (Some(p), None, None) => {
            let h = read_hierarchy(a.hierarchy.as_deref().expect("clap enforces --hierarchy"))?;
            let (preds, truths) = read_predictions(p, &h)?;
            write_report(&evaluate(&preds, &truths, h.num_leaves())?, &h, &a.out)?;
            Ok(())
        }
        (None, Some(model), Some(data)) => {
            let (net, meta, h) = load_model(model)?;
            let ds = at(data, load_dataset(data, h.num_leaves()))?;
            let preds = argmax_predict(&net, meta.view, &ds.samples)?;
            let truths: Vec<usize> = ds.samples.iter().map(|s| s.label).collect();
            let report = evaluate(&preds, &truths, h.num_leaves())?;
            write_report(&report, &h, &a.out)?;
            let names = h.leaf_names();
            let mut csv = String::from("id,truth,pred\n");
            for (s, &p) in ds.samples.iter().zip(&preds) {
                let _ = writeln!(csv, "{},{},{}", s.id, names[s.label], names[p]);
            }
            fs::write(a.out.join("predictions.csv"), csv)?;
            Ok(())
        }
        _ => Err(Failure::Usage("give either --predictions with --hierarchy, or --model with --data".into())),
    }
}
