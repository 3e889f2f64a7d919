use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ocp_core::diagnostics::{
    export_hit_csv, export_se_csv, export_spectrum_csv, stratified_se, DEFAULT_QUANTILE,
};
use ocp_core::synth::{DatasetSpec, DEFAULT_HOLDOUT};
use ocp_core::{
    hit_at_k, spectrum_report, trainer, InteractionLog, ProjectionMode, TrainConfig, TrainState,
    VocabMap, ZipfConfig,
};

use crate::config::parse_config;
use crate::error::CliError;
use crate::manifest::{file_hash, now, write_json, ConfigEcho, DataManifest, RunManifest};
use crate::sweep::{self, SweepArgs};

pub const HIT_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Parser)]
#[command(
    name = "ocp-lab",
    version,
    about = "Orthogonal constrained projection embedding lab"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Zipf-skewed interaction log.
    GenData(GenDataArgs),
    /// Train embeddings with an OCP or baseline projection.
    Train(TrainArgs),
    /// Spectrum, stratified singular entropy and hit@k for a checkpoint.
    Diagnose(DiagnoseArgs),
    /// Paired OCP/baseline runs across a vocabulary, dimension or threshold axis.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub vocab: usize,
    #[arg(long, default_value_t = 1.2)]
    pub zipf_s: f64,
    #[arg(long, default_value_t = 2_000_000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rank of the latent item factors.
    #[arg(long, default_value_t = 16)]
    pub rank: usize,
    /// Softmax temperature of the target distribution.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long)]
    pub out: PathBuf,
}

impl GenDataArgs {
    pub fn dataset(&self) -> Result<DatasetSpec, CliError> {
        dataset_spec(
            self.vocab,
            self.zipf_s,
            self.pairs,
            self.seed,
            self.rank,
            self.tau,
        )
    }
}

pub fn dataset_spec(
    vocab: usize,
    zipf_s: f64,
    pairs: usize,
    seed: u64,
    rank: usize,
    tau: f64,
) -> Result<DatasetSpec, CliError> {
    if vocab < 2 {
        return Err(CliError::Usage(format!(
            "--vocab must be at least 2, got {vocab}"
        )));
    }
    if !(zipf_s > 0.0 && zipf_s.is_finite()) {
        return Err(CliError::Usage(format!(
            "--zipf-s must be positive, got {zipf_s}"
        )));
    }
    if pairs == 0 || rank == 0 {
        return Err(CliError::Usage(
            "--pairs and --rank must be at least 1".into(),
        ));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(CliError::Usage(format!(
            "--tau must be positive, got {tau}"
        )));
    }
    Ok(DatasetSpec {
        zipf: ZipfConfig {
            v: vocab,
            s: zipf_s,
            seed,
        },
        rank,
        tau,
        pairs,
    })
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Key-value training configuration; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<ProjectionMode>,
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pairs held out from the end of the log (never trained on).
    #[arg(long, default_value_t = DEFAULT_HOLDOUT)]
    pub holdout: usize,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// The log the checkpoint was trained on (for counts and held-out pairs).
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = DEFAULT_QUANTILE)]
    pub quantile: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Access threshold used at training time.
    #[arg(long, default_value_t = 0)]
    pub access_threshold: u64,
    #[arg(long, default_value_t = DEFAULT_HOLDOUT)]
    pub holdout: usize,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(args) => gen_data(&args),
        Command::Train(args) => train(&args).map(|_| ()),
        Command::Diagnose(args) => diagnose(&args),
        Command::Sweep(args) => sweep::run(&args).map(|_| ()),
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn manifest_path_for(log: &Path) -> PathBuf {
    let mut name = log.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn gen_data(args: &GenDataArgs) -> Result<(), CliError> {
    let spec = args.dataset()?;
    let log = spec.generate()?;
    log.save(&args.out)?;
    let manifest = DataManifest {
        vocab: args.vocab,
        zipf_s: args.zipf_s,
        pairs: args.pairs,
        seed: args.seed,
        rank: args.rank,
        tau: args.tau,
        log_path: args.out.display().to_string(),
        log_hash: file_hash(&args.out)?,
        created_at: now(),
    };
    write_json(&manifest, &manifest_path_for(&args.out))
}

pub fn load_config(path: Option<&Path>) -> Result<TrainConfig, CliError> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_config(&text).map_err(|source| CliError::Config {
                path: path.to_path_buf(),
                source,
            })
        }
    }
}

pub fn train(args: &TrainArgs) -> Result<RunManifest, CliError> {
    let started_at = now();
    let mut config = load_config(args.config.as_deref())?;
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let log = InteractionLog::load(&args.log)?;
    let (train_log, _) = log.split_holdout(args.holdout);
    let outcome = trainer::train(&config, &train_log)?;

    create_dir(&args.out)?;
    let checkpoint = args.out.join("checkpoint.ocpc");
    let loss_csv = args.out.join("loss.csv");
    outcome.state.save(&checkpoint)?;
    fs::write(&loss_csv, outcome.curve.to_csv()).map_err(|e| CliError::io(&loss_csv, e))?;

    let manifest = RunManifest {
        config: ConfigEcho::from(&config),
        log_path: args.log.display().to_string(),
        log_hash: file_hash(&args.log)?,
        data_order_hash: outcome.data_order_digest.clone(),
        holdout_pairs: log.len() - train_log.len(),
        effective_vocab: outcome.vocab_map.size(),
        started_at,
        finished_at: now(),
        final_loss: outcome.curve.final_loss(),
        final_orthonormality_defect: outcome.state.projection_defect(),
        checkpoint: checkpoint.display().to_string(),
        reports: vec![loss_csv.display().to_string()],
    };
    write_json(&manifest, &args.out.join("manifest.json"))?;
    Ok(manifest)
}

/// Rebuilds the training-time vocabulary map and checks it against the checkpoint.
pub fn training_vocab(
    state: &TrainState,
    log: &InteractionLog,
    holdout: usize,
    threshold: u64,
) -> Result<(VocabMap, Vec<(usize, usize)>), CliError> {
    let (train_log, eval) = log.split_holdout(holdout);
    let map = VocabMap::from_counts(train_log.counts(), threshold);
    let remapped = map.remap(&train_log)?;
    if map.size() != state.vocab() || remapped.counts() != state.counts.as_slice() {
        return Err(CliError::DataFormat(format!(
            "checkpoint (vocabulary {}) was not trained on this log with access threshold \
             {threshold} and holdout {holdout} (vocabulary {})",
            state.vocab(),
            map.size()
        )));
    }
    Ok((map, eval))
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<(), CliError> {
    if !(args.quantile > 0.0 && args.quantile < 1.0) {
        return Err(CliError::Usage(format!(
            "--quantile must be in (0, 1), got {}",
            args.quantile
        )));
    }
    let state = TrainState::load(&args.checkpoint)?;
    let log = InteractionLog::load(&args.log)?;
    let (map, eval) = training_vocab(&state, &log, args.holdout, args.access_threshold)?;

    let e = state.table.matrix();
    let spectrum = spectrum_report(e)?;
    let strata = stratified_se(e, &state.counts, args.quantile)?;
    let hits = hit_at_k(&state, &eval, &HIT_KS, &map)?;

    create_dir(&args.out)?;
    export_spectrum_csv(&spectrum.values, &args.out.join("spectrum.csv"))?;
    export_se_csv(&strata, &args.out.join("se.csv"))?;
    export_hit_csv(&hits, &args.out.join("hit.csv"))?;
    Ok(())
}
