//! Command-line pipeline: `synth`, `label`, `train`, `evaluate`.
//!
//! Every command writes its outputs plus a `run_manifest.json` with the
//! fully resolved configuration into `--out`, and refuses to reuse an
//! existing output directory without `--force`. Timestamps appear only in
//! the run manifest, so re-running a command with identical inputs and
//! seeds reproduces every other output byte for byte.

use crate::arch::{CascadeHead, CascadeMode, Network, NetworkSpec};
use crate::data::synth::generate_synthetic_dataset;
use crate::data::{
    load_volume, patient_split, read_manifest, save_volume, write_manifest, write_split_csv,
    ManifestRow, Modality, Split, SplitAssignment,
};
use crate::error::{Error, Result};
use crate::fusion::{
    alpha_sweep, fuse_predictions, optimal_alpha, write_sweep_csv, FusionWeight, MetricKind,
};
use crate::labeling::{
    label_dataset, read_ehr_csv, read_labeled_csv, write_exclusions_csv, write_labeled_csv, Label,
    LabeledScan, ScanRecord,
};
use crate::metrics::{write_auc_report_json, write_roc_csv, AucReport, PredictionSet};
use crate::train::{
    evaluate_cascade, evaluate_network, pair_encodings, train, train_cascade, EncodingPair,
    TrainConfig, TrainSample, TransferMode, write_training_log_csv,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "nfuse",
    about = "Volumetric multi-modal MRI stage classification pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired T1/FLAIR dataset with a matching EHR extract
    Synth(SynthArgs),
    /// Derive per-scan stage labels from an EHR extract
    Label(LabelArgs),
    /// Train a single-modality network or a cascade head
    Train(TrainArgs),
    /// Evaluate checkpoints and emit the AUC report
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of synthetic patients
    #[arg(long, default_value_t = 30)]
    patients: usize,
    /// Imaging sessions per patient
    #[arg(long, default_value_t = 1)]
    sessions: usize,
    /// Relative class balance CN,MCI,AD
    #[arg(long, default_value = "1,1,1")]
    balance: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing output directory
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct LabelArgs {
    /// EHR visit extract CSV (patient_id, visit_date, age_at_scan, diagnosis)
    #[arg(long)]
    ehr: PathBuf,
    /// Dataset manifest CSV listing the scans to label
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Baseline,
    #[value(name = "fine-tune", alias = "fine_tune")]
    FineTune,
    Retrain,
}

impl ModeArg {
    fn to_mode(self) -> TransferMode {
        match self {
            ModeArg::Baseline => TransferMode::Baseline,
            ModeArg::FineTune => TransferMode::FineTune,
            ModeArg::Retrain => TransferMode::Retrain,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModalityArg {
    T1,
    Flair,
}

impl ModalityArg {
    fn to_modality(self) -> Modality {
        match self {
            ModalityArg::T1 => Modality::T1,
            ModalityArg::Flair => Modality::Flair,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CascadeArg {
    Add,
    Concat,
}

impl CascadeArg {
    fn to_mode(self) -> CascadeMode {
        match self {
            CascadeArg::Add => CascadeMode::Additive,
            CascadeArg::Concat => CascadeMode::Concatenated,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FusionArg {
    None,
    Weighted,
    #[value(name = "cascade-add")]
    CascadeAdd,
    #[value(name = "cascade-concat")]
    CascadeConcat,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Labeled-scan CSV from `label`
    #[arg(long)]
    labels: PathBuf,
    /// Seed for the patient-level 70/15/15 split
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Transfer regime (single-modality training)
    #[arg(long, value_enum, conflicts_with = "cascade")]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    modality: Option<ModalityArg>,
    /// Train a cascade head on frozen encodings instead of a backbone
    #[arg(long, value_enum)]
    cascade: Option<CascadeArg>,
    /// Pretrained checkpoint to start from (required for baseline/fine-tune)
    #[arg(long)]
    checkpoint_in: Option<PathBuf>,
    /// T1 backbone checkpoint (cascade only)
    #[arg(long)]
    t1_checkpoint: Option<PathBuf>,
    /// FLAIR backbone checkpoint (cascade only)
    #[arg(long)]
    flair_checkpoint: Option<PathBuf>,
    /// Channel widening factor for fresh networks
    #[arg(long, default_value_t = 1)]
    widening: usize,
    /// Explicit channel counts c1,c2,c3,c4 for fresh networks (overrides --widening)
    #[arg(long)]
    channels: Option<String>,
    /// Defaults to the regime's standard budget when omitted
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    lr: f32,
    #[arg(long, default_value_t = 0.9)]
    momentum: f32,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable blur + random-crop training augmentation
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Which split the report is computed on
    #[arg(long, value_enum, default_value_t = SplitArg::Validation)]
    split: SplitArg,
    #[arg(long, value_enum, default_value_t = FusionArg::None)]
    fusion: FusionArg,
    /// Modality for --fusion none
    #[arg(long, value_enum)]
    modality: Option<ModalityArg>,
    #[arg(long)]
    t1_checkpoint: Option<PathBuf>,
    #[arg(long)]
    flair_checkpoint: Option<PathBuf>,
    /// Cascade head checkpoint (cascade fusion only)
    #[arg(long)]
    head_checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl SplitArg {
    fn to_split(self) -> Split {
        match self {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Parse and run; returns the process exit code. Failures print one
/// machine-parsable line: `error[<category>]: <message>`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version via this path with exit code 0
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Label(a) => cmd_label(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e);
            1
        }
    }
}

fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if out.exists() && !force {
        return Err(Error::AlreadyExists(out.display().to_string()));
    }
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn write_run_manifest(out: &Path, config: serde_json::Value) -> Result<()> {
    let manifest = json!({
        "generated_at": chrono::Utc::now().to_rfc3339(),
        "config": config,
    });
    let file = std::fs::File::create(out.join("run_manifest.json"))?;
    serde_json::to_writer_pretty(file, &manifest)?;
    Ok(())
}

fn parse_list<const N: usize>(s: &str, what: &str) -> Result<[f64; N]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(format!("bad {what} {s:?}: {e}")))?;
    parts
        .try_into()
        .map_err(|_| Error::InvalidArgument(format!("{what} needs {N} comma-separated values")))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let balance: [f64; 3] = parse_list(&a.balance, "class balance")?;
    prepare_out(&a.out, a.force)?;
    let vol_dir = a.out.join("volumes");
    std::fs::create_dir_all(&vol_dir)?;

    let ds = generate_synthetic_dataset(a.patients, a.sessions, balance, a.seed)?;
    let mut manifest = Vec::with_capacity(ds.pairs.len());
    for pair in &ds.pairs {
        let t1_path = vol_dir.join(format!("{}_t1.nfvol", pair.session_id));
        let fl_path = vol_dir.join(format!("{}_flair.nfvol", pair.session_id));
        save_volume(&t1_path, &pair.t1)?;
        save_volume(&fl_path, &pair.flair)?;
        manifest.push(ManifestRow {
            patient_id: pair.patient_id.clone(),
            session_id: pair.session_id.clone(),
            scan_date: pair.scan_date.to_string(),
            t1_path: t1_path.display().to_string(),
            flair_path: fl_path.display().to_string(),
        });
    }
    write_manifest(&a.out.join("manifest.csv"), &manifest)?;

    // EHR CSV matching the labeling pipeline's input schema
    let mut w = csv::Writer::from_path(a.out.join("ehr.csv"))?;
    w.write_record(["patient_id", "visit_date", "age_at_scan", "diagnosis"])?;
    for v in &ds.ehr {
        w.write_record([
            v.patient_id.as_str(),
            &v.visit_date.to_string(),
            &format!("{}", v.age_at_scan),
            v.diagnosis.map(|d| d.as_str()).unwrap_or(""),
        ])?;
    }
    w.flush()?;

    write_run_manifest(
        &a.out,
        json!({
            "command": "synth",
            "patients": a.patients,
            "sessions": a.sessions,
            "balance": balance,
            "seed": a.seed,
        }),
    )?;
    println!(
        "synth: {} sessions across {} patients -> {}",
        manifest.len(),
        a.patients,
        a.out.display()
    );
    Ok(())
}

fn cmd_label(a: LabelArgs) -> Result<()> {
    prepare_out(&a.out, a.force)?;
    let (visits, mut exclusions) = read_ehr_csv(&a.ehr)?;
    let scans: Vec<ScanRecord> = read_manifest(&a.manifest)?
        .into_iter()
        .map(|r| {
            let scan_date = r.scan_date.parse().map_err(|e| {
                Error::MalformedRecord(format!(
                    "session {}: bad scan date {:?}: {e}",
                    r.session_id, r.scan_date
                ))
            })?;
            Ok(ScanRecord {
                patient_id: r.patient_id,
                session_id: r.session_id,
                scan_date,
            })
        })
        .collect::<Result<_>>()?;
    let (labeled, dropped) = label_dataset(&visits, &scans)?;
    exclusions.extend(dropped);
    write_labeled_csv(&a.out.join("labeled.csv"), &labeled)?;
    write_exclusions_csv(&a.out.join("exclusions.csv"), &exclusions)?;
    write_run_manifest(
        &a.out,
        json!({
            "command": "label",
            "ehr": a.ehr.display().to_string(),
            "manifest": a.manifest.display().to_string(),
            "labeled": labeled.len(),
            "excluded": exclusions.len(),
        }),
    )?;
    println!(
        "label: {} scans labeled, {} excluded -> {}",
        labeled.len(),
        exclusions.len(),
        a.out.display()
    );
    Ok(())
}

/// One manifest row joined with its derived label.
struct LabeledSession {
    patient_id: String,
    session_id: String,
    label: Label,
    t1_path: String,
    flair_path: String,
}

fn load_labeled_sessions(manifest: &Path, labels: &Path) -> Result<Vec<LabeledSession>> {
    let rows = read_manifest(manifest)?;
    let labeled: BTreeMap<String, LabeledScan> = read_labeled_csv(labels)?
        .into_iter()
        .map(|l| (l.session_id.clone(), l))
        .collect();
    let sessions: Vec<LabeledSession> = rows
        .into_iter()
        .filter_map(|r| {
            labeled.get(&r.session_id).map(|l| LabeledSession {
                patient_id: r.patient_id,
                session_id: r.session_id,
                label: l.label,
                t1_path: r.t1_path,
                flair_path: r.flair_path,
            })
        })
        .collect();
    if sessions.is_empty() {
        return Err(Error::EmptyDataset(
            "no manifest session has a label; run `label` first".into(),
        ));
    }
    Ok(sessions)
}

/// 70/15/15 patient-level split, stratified by each patient's worst label.
fn split_sessions(sessions: &[LabeledSession], seed: u64) -> Result<SplitAssignment> {
    let mut worst: BTreeMap<&str, Label> = BTreeMap::new();
    for s in sessions {
        worst
            .entry(&s.patient_id)
            .and_modify(|w| *w = (*w).max(s.label))
            .or_insert(s.label);
    }
    let patients: Vec<(String, Option<Label>)> = worst
        .into_iter()
        .map(|(p, l)| (p.to_string(), Some(l)))
        .collect();
    patient_split(&patients, [0.70, 0.15, 0.15], seed, true)
}

fn load_samples(
    sessions: &[LabeledSession],
    assignment: &SplitAssignment,
    split: Split,
    modality: Modality,
) -> Result<Vec<TrainSample>> {
    let mut out = Vec::new();
    for s in sessions {
        if assignment.get(&s.patient_id) != Some(split) {
            continue;
        }
        let path = match modality {
            Modality::T1 => &s.t1_path,
            Modality::Flair => &s.flair_path,
        };
        let volume = load_volume(Path::new(path))?;
        if volume.modality() != modality {
            return Err(Error::Format(format!(
                "{path}: expected a {} volume, found {}",
                modality.as_str(),
                volume.modality().as_str()
            )));
        }
        out.push(TrainSample {
            session_id: s.session_id.clone(),
            volume,
            label: s.label,
        });
    }
    Ok(out)
}

fn fresh_network(a: &TrainArgs) -> Result<Network> {
    let spec = match &a.channels {
        Some(s) => {
            let c: [f64; 4] = parse_list(s, "channel counts")?;
            NetworkSpec::with_channels([c[0] as usize, c[1] as usize, c[2] as usize, c[3] as usize])?
        }
        None => NetworkSpec::with_widening(a.widening)?,
    };
    Network::init(spec, a.seed)
}

/// Deterministic per-sample encodings for a split, ready for the cascade head.
fn encode_split(
    network: &Network,
    samples: &[TrainSample],
    batch_size: usize,
) -> Result<Vec<(String, Vec<f32>, Label)>> {
    let extent = network.spec.input_extent;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let views: Vec<_> = chunk
            .iter()
            .map(|s| crate::train::evaluation_view(&s.volume, extent))
            .collect::<Result<_>>()?;
        let mut data = Vec::new();
        let [d, h, w] = views[0].extents();
        for v in &views {
            data.extend_from_slice(v.data());
        }
        let batch = crate::tensor::Tensor::new(vec![views.len(), 1, d, h, w], data)?;
        let enc = network.encode(&batch)?;
        let width = enc.shape()[1];
        for (i, s) in chunk.iter().enumerate() {
            out.push((
                s.session_id.clone(),
                enc.data()[i * width..(i + 1) * width].to_vec(),
                s.label,
            ));
        }
    }
    Ok(out)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    prepare_out(&a.out, a.force)?;
    let sessions = load_labeled_sessions(&a.manifest, &a.labels)?;
    let assignment = split_sessions(&sessions, a.split_seed)?;
    write_split_csv(&a.out.join("split.csv"), &assignment)?;

    if let Some(cascade) = a.cascade {
        return cmd_train_cascade(&a, cascade, &sessions, &assignment);
    }

    let mode = a
        .mode
        .ok_or_else(|| Error::InvalidArgument("--mode is required (or pass --cascade)".into()))?
        .to_mode();
    let modality = a
        .modality
        .ok_or_else(|| Error::InvalidArgument("--modality is required".into()))?
        .to_modality();
    let network = match (&a.checkpoint_in, mode) {
        (Some(path), _) => Network::load(path)?,
        (None, TransferMode::Baseline) => {
            return Err(Error::InvalidArgument(
                "baseline mode applies pretrained weights: --checkpoint-in is required".into(),
            ))
        }
        (None, TransferMode::FineTune) => {
            return Err(Error::InvalidArgument(
                "fine-tune transfers a pretrained network: --checkpoint-in is required".into(),
            ))
        }
        (None, _) => fresh_network(&a)?,
    };

    let train_set = load_samples(&sessions, &assignment, Split::Train, modality)?;
    let val_set = load_samples(&sessions, &assignment, Split::Validation, modality)?;

    let mut config = TrainConfig::new(mode);
    config.learning_rate = a.lr;
    config.momentum = a.momentum;
    config.batch_size = a.batch_size;
    config.seed = a.seed;
    config.augment = !a.no_augment;
    if let Some(e) = a.epochs {
        config.epochs = e;
    }

    let outcome = train(&network, &train_set, &val_set, &config)?;
    outcome.network.save(&a.out.join("checkpoint.nfuse"))?;
    write_training_log_csv(&a.out.join("training_log.csv"), &outcome.log)?;
    write_run_manifest(
        &a.out,
        json!({
            "command": "train",
            "mode": mode.as_str(),
            "modality": modality.as_str(),
            "manifest": a.manifest.display().to_string(),
            "labels": a.labels.display().to_string(),
            "checkpoint_in": a.checkpoint_in.as_ref().map(|p| p.display().to_string()),
            "split_seed": a.split_seed,
            "epochs": config.epochs,
            "learning_rate": config.learning_rate,
            "momentum": config.momentum,
            "batch_size": config.batch_size,
            "seed": config.seed,
            "augment": config.augment,
            "train_sessions": train_set.len(),
            "validation_sessions": val_set.len(),
            "optimizer_steps": outcome.steps,
            "best_epoch": outcome.best_epoch,
            "best_validation_micro_auc": outcome.best_val_micro_auc,
        }),
    )?;
    println!(
        "train: {} {} | {} steps | best val micro-AUC {} -> {}",
        mode.as_str(),
        modality.as_str(),
        outcome.steps,
        outcome
            .best_val_micro_auc
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        a.out.display()
    );
    Ok(())
}

fn cascade_pairs(
    a: &TrainArgs,
    sessions: &[LabeledSession],
    assignment: &SplitAssignment,
    t1_net: &Network,
    fl_net: &Network,
    split: Split,
) -> Result<Vec<EncodingPair>> {
    let t1_samples = load_samples(sessions, assignment, split, Modality::T1)?;
    let fl_samples = load_samples(sessions, assignment, split, Modality::Flair)?;
    let t1_enc = encode_split(t1_net, &t1_samples, a.batch_size)?;
    let fl_enc = encode_split(fl_net, &fl_samples, a.batch_size)?;
    pair_encodings(&t1_enc, &fl_enc)
}

fn cmd_train_cascade(
    a: &TrainArgs,
    cascade: CascadeArg,
    sessions: &[LabeledSession],
    assignment: &SplitAssignment,
) -> Result<()> {
    let t1_path = a.t1_checkpoint.as_ref().ok_or_else(|| {
        Error::InvalidArgument("cascade training needs --t1-checkpoint".into())
    })?;
    let fl_path = a.flair_checkpoint.as_ref().ok_or_else(|| {
        Error::InvalidArgument("cascade training needs --flair-checkpoint".into())
    })?;
    let t1_net = Network::load(t1_path)?;
    let fl_net = Network::load(fl_path)?;

    let train_pairs = cascade_pairs(a, sessions, assignment, &t1_net, &fl_net, Split::Train)?;
    let val_pairs = cascade_pairs(a, sessions, assignment, &t1_net, &fl_net, Split::Validation)?;

    let head = CascadeHead::init(cascade.to_mode(), a.seed);
    let mut config = TrainConfig::new(TransferMode::Cascade);
    config.learning_rate = a.lr;
    config.momentum = a.momentum;
    config.batch_size = a.batch_size;
    config.seed = a.seed;
    if let Some(e) = a.epochs {
        config.epochs = e;
    }

    let outcome = train_cascade(&head, &train_pairs, &val_pairs, &config)?;
    outcome.head.save(&a.out.join("head.nfuse"))?;
    write_training_log_csv(&a.out.join("training_log.csv"), &outcome.log)?;
    write_run_manifest(
        &a.out,
        json!({
            "command": "train",
            "mode": "cascade",
            "cascade": match cascade { CascadeArg::Add => "add", CascadeArg::Concat => "concat" },
            "manifest": a.manifest.display().to_string(),
            "labels": a.labels.display().to_string(),
            "t1_checkpoint": t1_path.display().to_string(),
            "flair_checkpoint": fl_path.display().to_string(),
            "split_seed": a.split_seed,
            "epochs": config.epochs,
            "learning_rate": config.learning_rate,
            "momentum": config.momentum,
            "batch_size": config.batch_size,
            "seed": config.seed,
            "train_sessions": train_pairs.len(),
            "validation_sessions": val_pairs.len(),
            "optimizer_steps": outcome.steps,
            "best_epoch": outcome.best_epoch,
            "best_validation_micro_auc": outcome.best_val_micro_auc,
        }),
    )?;
    println!(
        "train: cascade | {} steps | best val micro-AUC {} -> {}",
        outcome.steps,
        outcome
            .best_val_micro_auc
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        a.out.display()
    );
    Ok(())
}

fn modality_predictions(
    network: &Network,
    sessions: &[LabeledSession],
    assignment: &SplitAssignment,
    split: Split,
    modality: Modality,
    batch_size: usize,
) -> Result<PredictionSet> {
    let samples = load_samples(sessions, assignment, split, modality)?;
    Ok(evaluate_network(network, &samples, batch_size)?.predictions)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    prepare_out(&a.out, a.force)?;
    let sessions = load_labeled_sessions(&a.manifest, &a.labels)?;
    let assignment = split_sessions(&sessions, a.split_seed)?;
    let split = a.split.to_split();

    let need = |path: &Option<PathBuf>, flag: &str| -> Result<PathBuf> {
        path.clone().ok_or_else(|| {
            Error::InvalidArgument(format!("--fusion {:?} needs {flag}", a.fusion))
        })
    };

    let mut extra = json!({});
    let report = match a.fusion {
        FusionArg::None => {
            let modality = a
                .modality
                .ok_or_else(|| {
                    Error::InvalidArgument("--fusion none needs --modality".into())
                })?
                .to_modality();
            let path = match modality {
                Modality::T1 => need(&a.t1_checkpoint, "--t1-checkpoint")?,
                Modality::Flair => need(&a.flair_checkpoint, "--flair-checkpoint")?,
            };
            let network = Network::load(&path)?;
            let preds =
                modality_predictions(&network, &sessions, &assignment, split, modality, a.batch_size)?;
            AucReport::from_predictions(&preds)
        }
        FusionArg::Weighted => {
            let t1_net = Network::load(&need(&a.t1_checkpoint, "--t1-checkpoint")?)?;
            let fl_net = Network::load(&need(&a.flair_checkpoint, "--flair-checkpoint")?)?;
            // weights are selected on the validation split, then applied to
            // the requested split (one weight per report column)
            let val_t1 = modality_predictions(
                &t1_net, &sessions, &assignment, Split::Validation, Modality::T1, a.batch_size,
            )?;
            let val_fl = modality_predictions(
                &fl_net, &sessions, &assignment, Split::Validation, Modality::Flair, a.batch_size,
            )?;
            let sweep = alpha_sweep(&val_t1, &val_fl, 0.01)?;
            write_sweep_csv(&a.out.join("alpha_sweep.csv"), &sweep)?;

            let (eval_t1, eval_fl) = if split == Split::Validation {
                (val_t1.clone(), val_fl.clone())
            } else {
                (
                    modality_predictions(
                        &t1_net, &sessions, &assignment, split, Modality::T1, a.batch_size,
                    )?,
                    modality_predictions(
                        &fl_net, &sessions, &assignment, split, Modality::Flair, a.batch_size,
                    )?,
                )
            };

            let mut columns = [None; 5];
            let mut alphas = BTreeMap::new();
            let mut micro_alpha = FusionWeight::new(0.5)?;
            for (i, metric) in MetricKind::ALL.iter().enumerate() {
                // a metric undefined at every weight (tiny split missing a
                // class) stays null in the report instead of failing the run
                let Ok((alpha, _, _)) = optimal_alpha(&val_t1, &val_fl, *metric, 0.01) else {
                    continue;
                };
                let fused = fuse_predictions(&eval_t1, &eval_fl, alpha)?;
                columns[i] = metric.evaluate(&fused);
                alphas.insert(metric.as_str(), alpha.value());
                if *metric == MetricKind::Micro {
                    micro_alpha = alpha;
                }
            }
            // keep the definitional identity in the emitted report: macro is
            // the mean of the three (per-metric-optimal) one-vs-rest columns
            columns[4] = match (columns[0], columns[1], columns[2]) {
                (Some(a), Some(b), Some(c)) => Some((a + b + c) / 3.0),
                _ => None,
            };
            extra = json!({ "alpha_per_metric": alphas });
            // ROC curves come from the fusion at the micro-optimal weight
            let fused_micro = fuse_predictions(&eval_t1, &eval_fl, micro_alpha)?;
            let mut report = AucReport::from_predictions(&fused_micro);
            report.cn_vs_all = columns[0];
            report.mci_vs_all = columns[1];
            report.ad_vs_all = columns[2];
            report.micro = columns[3];
            report.macro_avg = columns[4];
            report
        }
        FusionArg::CascadeAdd | FusionArg::CascadeConcat => {
            let t1_net = Network::load(&need(&a.t1_checkpoint, "--t1-checkpoint")?)?;
            let fl_net = Network::load(&need(&a.flair_checkpoint, "--flair-checkpoint")?)?;
            let head = CascadeHead::load(&need(&a.head_checkpoint, "--head-checkpoint")?)?;
            let expected = match a.fusion {
                FusionArg::CascadeAdd => CascadeMode::Additive,
                _ => CascadeMode::Concatenated,
            };
            if head.mode != expected {
                return Err(Error::InvalidArgument(format!(
                    "head checkpoint was trained for {:?}, not {:?}",
                    head.mode, expected
                )));
            }
            let t1_samples = load_samples(&sessions, &assignment, split, Modality::T1)?;
            let fl_samples = load_samples(&sessions, &assignment, split, Modality::Flair)?;
            let t1_enc = encode_split(&t1_net, &t1_samples, a.batch_size)?;
            let fl_enc = encode_split(&fl_net, &fl_samples, a.batch_size)?;
            let pairs = pair_encodings(&t1_enc, &fl_enc)?;
            let eval = evaluate_cascade(&head, &pairs, a.batch_size)?;
            AucReport::from_predictions(&eval.predictions)
        }
    };

    write_auc_report_json(&a.out.join("report.json"), &report)?;
    write_roc_csv(&a.out.join("roc.csv"), &report.curves)?;
    write_run_manifest(
        &a.out,
        json!({
            "command": "evaluate",
            "fusion": format!("{:?}", a.fusion),
            "split": a.split.to_split().as_str(),
            "split_seed": a.split_seed,
            "manifest": a.manifest.display().to_string(),
            "labels": a.labels.display().to_string(),
            "t1_checkpoint": a.t1_checkpoint.as_ref().map(|p| p.display().to_string()),
            "flair_checkpoint": a.flair_checkpoint.as_ref().map(|p| p.display().to_string()),
            "head_checkpoint": a.head_checkpoint.as_ref().map(|p| p.display().to_string()),
            "extra": extra,
        }),
    )?;
    let cols = report.columns();
    println!(
        "evaluate: cn {} | mci {} | ad {} | micro {} | macro {} -> {}",
        fmt_col(cols[0]),
        fmt_col(cols[1]),
        fmt_col(cols[2]),
        fmt_col(cols[3]),
        fmt_col(cols[4]),
        a.out.display()
    );
    Ok(())
}

fn fmt_col(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}
