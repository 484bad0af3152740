//! Command-line interface.
//!
//! Subcommands: `gen-toy`, `train`, `eval`, `predict`, `ensemble-train`,
//! `calibrate`, `bench`, `stats`. Configuration comes from an optional TOML
//! file (`--config`), point overrides (`--set key=value`, repeatable), and
//! the `--seed` / `--threads` / `--out` flags. Diagnostics go to stderr
//! (level set by `DIMEKIT_LOG`); data goes to stdout or to files under
//! `--out`. Exit code 0 means success, 1 an input problem, 2 an internal
//! failure.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    dataset_stats, generate_dataset, read_extxyz_file, write_extxyz_file, DatasetManifest,
    ToyPotentialConfig,
};
use crate::error::{Error, Result};
use crate::geometry::AtomicConfiguration;
use crate::model::{
    self, load_checkpoint, save_checkpoint, time_combination, triplet_combination_flops,
    InteractionKind, ModelConfig, ParameterStore, Prediction,
};
use crate::train::{evaluate, train, Metrics, TrainConfig};
use crate::uncertainty::{
    calibrate, cov_identity_check, ensemble_predict, ensemble_train, Ensemble,
    DEFAULT_MEMBERS,
};

/// Trajectory counts per split for `gen-toy`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub train_trajectories: usize,
    pub val_trajectories: usize,
    pub test_trajectories: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { train_trajectories: 20, val_trajectories: 5, test_trajectories: 5 }
    }
}

/// Problem size for `bench`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub n_edges: usize,
    pub n_triplets: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { n_edges: 2000, n_triplets: 100_000, repeats: 3 }
    }
}

/// Histogram size for `stats`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    pub bins: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig { bins: 20 }
    }
}

/// Everything configurable from the TOML file and `--set` overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub toy: ToyPotentialConfig,
    pub gen: GenConfig,
    pub bench: BenchConfig,
    pub stats: StatsConfig,
}

#[derive(Parser, Debug)]
#[command(
    name = "dimekit",
    version,
    about = "Directional message-passing potential-energy models"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set train.peak_lr=1e-3.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Master random seed; overrides train.seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for ensemble prediction.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output directory for generated files.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a toy collision dataset (train/val/test splits + manifest).
    GenToy,
    /// Train a model on a generated dataset.
    Train {
        /// Dataset directory containing manifest.toml.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split; metrics CSV on stdout.
    Eval {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
    },
    /// Predict energies for an extended-XYZ file; one energy per line.
    Predict {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Also write the records with predicted energy and forces here.
        #[arg(long, value_name = "FILE")]
        forces_out: Option<PathBuf>,
    },
    /// Train an ensemble of models differing only in seed.
    EnsembleTrain {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MEMBERS)]
        members: usize,
    },
    /// Correlate predicted sigmas with actual errors on a split.
    Calibrate {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Ensemble directory (from ensemble-train).
        #[arg(long, value_name = "DIR")]
        ensemble: Option<PathBuf>,
        /// Single checkpoint with a mean-variance head.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Time the Hadamard and bilinear triplet combinations.
    Bench,
    /// Per-atom residual-energy histogram of a split; CSV on stdout.
    Stats {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
    },
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(bt)), toml::Value::Table(ot)) => merge_tables(bt, ot),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Load the configuration file (when given) and apply `--set` overrides.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<AppConfig> {
    let mut table: toml::Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            text.parse().map_err(|e| {
                Error::Input(format!("invalid configuration {}: {e}", p.display()))
            })?
        }
        None => toml::Table::new(),
    };
    for s in sets {
        let (key, value) = s.split_once('=').ok_or_else(|| {
            Error::Input(format!("--set expects KEY=VALUE, got {s:?}"))
        })?;
        // Try the value as a TOML literal first, falling back to a string so
        // `--set train.loss_kind=nll` works without explicit quotes.
        let parsed: toml::Table = format!("{key} = {value}")
            .parse()
            .or_else(|_| format!("{key} = {value:?}").parse())
            .map_err(|e| Error::Input(format!("cannot parse --set {s:?}: {e}")))?;
        merge_tables(&mut table, parsed);
    }
    table
        .try_into()
        .map_err(|e| Error::Input(format!("invalid configuration: {e}")))
}

/// Run the CLI; the returned code is the process exit status.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                0
            } else {
                // bad flags and arguments: usage goes to stderr, exit 1
                eprint!("{e}");
                1
            };
        }
    };
    let _ = env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("DIMEKIT_LOG", "error"),
    )
    .format_timestamp(None)
    .try_init();
    match std::panic::catch_unwind(AssertUnwindSafe(|| execute(cli))) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            eprintln!("internal error: {msg}");
            2
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref(), &cli.sets)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if cli.threads == 0 {
        return Err(Error::Input("--threads must be at least 1".into()));
    }
    let seed = cfg.train.seed;
    match &cli.command {
        Command::GenToy => cmd_gen_toy(&cfg, seed, cli.out.as_deref()),
        Command::Train { data } => cmd_train(&cfg, data, cli.out.as_deref()),
        Command::Eval { data, split, checkpoint } => cmd_eval(data, split, checkpoint),
        Command::Predict { checkpoint, input, forces_out } => {
            cmd_predict(checkpoint, input, forces_out.as_deref())
        }
        Command::EnsembleTrain { data, members } => {
            cmd_ensemble_train(&cfg, data, *members, cli.out.as_deref())
        }
        Command::Calibrate { data, split, ensemble, checkpoint } => cmd_calibrate(
            data,
            split,
            ensemble.as_deref(),
            checkpoint.as_deref(),
            cli.threads,
            cli.out.as_deref(),
        ),
        Command::Bench => cmd_bench(&cfg, seed),
        Command::Stats { data, split } => cmd_stats(&cfg, data, split),
    }
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Input(format!("{what} {} does not exist", path.display())))
    }
}

fn require_out(out: Option<&Path>, what: &str) -> Result<PathBuf> {
    let dir = out
        .ok_or_else(|| Error::Input(format!("{what} requires --out <dir>")))?
        .to_path_buf();
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_split(data: &Path, split: &str) -> Result<(DatasetManifest, Vec<AtomicConfiguration>)> {
    require_exists(&data.join("manifest.toml"), "dataset manifest")?;
    let manifest = DatasetManifest::load(&data.join("manifest.toml"))?;
    let entry = manifest
        .splits
        .iter()
        .find(|s| s.name == split)
        .ok_or_else(|| {
            let known: Vec<&str> = manifest.splits.iter().map(|s| s.name.as_str()).collect();
            Error::Input(format!(
                "no split named {split:?} in {}; available: {}",
                data.display(),
                known.join(", ")
            ))
        })?;
    let records = read_extxyz_file(&data.join(&entry.file))?;
    if records.len() != entry.records {
        return Err(Error::Input(format!(
            "split {split:?} lists {} records but the file holds {}",
            entry.records,
            records.len()
        )));
    }
    Ok((manifest, records))
}

fn cmd_gen_toy(cfg: &AppConfig, seed: u64, out: Option<&Path>) -> Result<()> {
    let dir = require_out(out, "gen-toy")?;
    let plan = vec![
        ("train".to_string(), cfg.gen.train_trajectories),
        ("val".to_string(), cfg.gen.val_trajectories),
        ("test".to_string(), cfg.gen.test_trajectories),
    ];
    let (manifest, log) =
        generate_dataset(&cfg.toy, seed, &plan, cfg.model.basis.cutoff, &dir)?;
    log::info!(
        "generated {} trajectories ({} snapshots, {} discarded) into {}",
        log.trajectories,
        log.snapshots,
        log.discarded,
        dir.display()
    );
    for s in &manifest.splits {
        log::info!("split {}: {} records in {}", s.name, s.records, s.file);
    }
    Ok(())
}

fn cmd_train(cfg: &AppConfig, data: &Path, out: Option<&Path>) -> Result<()> {
    let dir = require_out(out, "train")?;
    let (_, train_set) = load_split(data, "train")?;
    let (_, val_set) = load_split(data, "val")?;
    log::info!(
        "training on {} configurations, validating on {}",
        train_set.len(),
        val_set.len()
    );
    let (store, tlog) = train(&train_set, &val_set, &cfg.model, &cfg.train)?;
    save_checkpoint(&dir.join("model.ckpt"), &cfg.model, &store)?;
    std::fs::write(dir.join("train_log.csv"), tlog.to_csv())?;
    let resolved = toml::to_string_pretty(cfg)
        .map_err(|e| Error::Input(format!("cannot serialize configuration: {e}")))?;
    std::fs::write(dir.join("config.toml"), resolved)?;
    log::info!(
        "finished in {:.1}s; best validation at step {}",
        tlog.wall_seconds,
        tlog.best_step
    );
    Ok(())
}

fn metrics_csv(metrics: &Metrics) -> String {
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("mae_E,{:.17e}\n", metrics.mae_e));
    if let Some(f) = metrics.mae_f {
        out.push_str(&format!("mae_F,{f:.17e}\n"));
    }
    out.push_str(&format!("std_MAE,{:.17e}\n", metrics.std_mae));
    out.push_str(&format!("log_MAE,{:.17e}\n", metrics.log_mae));
    out
}

fn cmd_eval(data: &Path, split: &str, checkpoint: &Path) -> Result<()> {
    require_exists(checkpoint, "checkpoint")?;
    let (mcfg, store) = load_checkpoint(checkpoint)?;
    let (_, records) = load_split(data, split)?;
    let metrics = evaluate(&records, &mcfg, &store)?;
    print!("{}", metrics_csv(&metrics));
    Ok(())
}

fn cmd_predict(checkpoint: &Path, input: &Path, forces_out: Option<&Path>) -> Result<()> {
    require_exists(checkpoint, "checkpoint")?;
    require_exists(input, "input file")?;
    let (mcfg, store) = load_checkpoint(checkpoint)?;
    let records = read_extxyz_file(input)?;
    if records.is_empty() {
        return Err(Error::Input(format!("{} holds no records", input.display())));
    }
    let want_forces = forces_out.is_some();
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let mut labelled = Vec::new();
    for r in &records {
        let p = model::predict(&mcfg, &store, r, want_forces)?;
        writeln!(w, "{:.17e}", p.energy)?;
        if want_forces {
            labelled.push(AtomicConfiguration::with_labels(
                r.atomic_numbers.clone(),
                r.positions.clone(),
                Some(p.energy),
                p.forces,
            )?);
        }
    }
    if let Some(path) = forces_out {
        write_extxyz_file(path, &labelled)?;
        log::info!("wrote predictions for {} records to {}", records.len(), path.display());
    }
    Ok(())
}

/// Files and seeds of a trained ensemble, stored as `ensemble.toml`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleManifest {
    members: Vec<String>,
    seeds: Vec<u64>,
}

fn cmd_ensemble_train(
    cfg: &AppConfig,
    data: &Path,
    members: usize,
    out: Option<&Path>,
) -> Result<()> {
    let dir = require_out(out, "ensemble-train")?;
    let (_, train_set) = load_split(data, "train")?;
    let (_, val_set) = load_split(data, "val")?;
    let outcome = ensemble_train(&train_set, &val_set, &cfg.model, &cfg.train, members)?;
    let mut files = Vec::with_capacity(members);
    for (k, store) in outcome.ensemble.members.iter().enumerate() {
        let file = format!("member_{k}.ckpt");
        save_checkpoint(&dir.join(&file), &cfg.model, store)?;
        std::fs::write(
            dir.join(format!("train_log_member_{k}.csv")),
            outcome.logs[k].to_csv(),
        )?;
        files.push(file);
    }
    let manifest = EnsembleManifest { members: files, seeds: outcome.ensemble.seeds.clone() };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::Input(format!("cannot serialize ensemble manifest: {e}")))?;
    std::fs::write(dir.join("ensemble.toml"), text)?;
    log::info!(
        "trained {} members in {:.1}s (sum of member times {:.1}s)",
        members,
        outcome.wall_seconds,
        outcome.logs.iter().map(|l| l.wall_seconds).sum::<f64>()
    );
    Ok(())
}

fn load_ensemble(dir: &Path) -> Result<Ensemble> {
    let path = dir.join("ensemble.toml");
    let text = std::fs::read_to_string(&path)?;
    let manifest: EnsembleManifest = toml::from_str(&text)
        .map_err(|e| Error::Input(format!("invalid ensemble manifest {}: {e}", path.display())))?;
    if manifest.members.is_empty() {
        return Err(Error::Input("ensemble manifest lists no members".into()));
    }
    let mut config: Option<ModelConfig> = None;
    let mut stores: Vec<ParameterStore> = Vec::with_capacity(manifest.members.len());
    for file in &manifest.members {
        let (mcfg, store) = load_checkpoint(&dir.join(file))?;
        match &config {
            None => config = Some(mcfg),
            Some(c) if *c == mcfg => {}
            Some(_) => {
                return Err(Error::Input(format!(
                    "member {file} was trained with a different model configuration"
                )));
            }
        }
        stores.push(store);
    }
    Ensemble::new(config.expect("at least one member"), stores, manifest.seeds)
}

fn cmd_calibrate(
    data: &Path,
    split: &str,
    ensemble_dir: Option<&Path>,
    checkpoint: Option<&Path>,
    threads: usize,
    out: Option<&Path>,
) -> Result<()> {
    let (_, records) = load_split(data, split)?;
    // For an ensemble, also verify dVar(E)/dx = -2 Cov(E, F) on a sample of
    // the split and report the residual alongside the correlations.
    let mut identity_row = None;
    let preds: Vec<Prediction> = match (ensemble_dir, checkpoint) {
        (Some(dir), None) => {
            require_exists(&dir.join("ensemble.toml"), "ensemble manifest")?;
            let ens = load_ensemble(dir)?;
            if ens.members.len() >= 2 {
                let sample = &records[..records.len().min(10)];
                let (mut disc, mut rhs) = (0.0f64, 0.0f64);
                for r in sample {
                    let id = cov_identity_check(&ens, r)?;
                    disc = disc.max(id.max_abs_discrepancy);
                    rhs = rhs.max(id.max_abs_rhs);
                }
                let residual = disc / rhs.max(1.0);
                identity_row =
                    Some(format!("cov_identity_residual,{residual:.17e},{}\n", sample.len()));
            }
            records
                .iter()
                .map(|r| ensemble_predict(&ens, r, true, threads))
                .collect::<Result<_>>()?
        }
        (None, Some(ckpt)) => {
            require_exists(ckpt, "checkpoint")?;
            let (mcfg, store) = load_checkpoint(ckpt)?;
            if !mcfg.mve_head {
                return Err(Error::Input(
                    "the checkpoint has no mean-variance head; calibrate an ensemble instead"
                        .into(),
                ));
            }
            records
                .iter()
                .map(|r| model::predict(&mcfg, &store, r, true))
                .collect::<Result<_>>()?
        }
        _ => {
            return Err(Error::Input(
                "calibrate needs exactly one of --ensemble <dir> or --checkpoint <file>".into(),
            ))
        }
    };
    let report = calibrate(&preds, &records)?;
    print!("{}", report.metrics_csv());
    if let Some(row) = identity_row {
        print!("{row}");
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("calibration_samples.csv");
        std::fs::write(&path, report.samples_csv())?;
        log::info!("wrote per-sample calibration data to {}", path.display());
    }
    Ok(())
}

fn cmd_bench(cfg: &AppConfig, seed: u64) -> Result<()> {
    let b = &cfg.bench;
    let hadamard = time_combination(
        InteractionKind::Hadamard,
        &cfg.model,
        b.n_edges,
        b.n_triplets,
        b.repeats,
        seed,
    );
    let bilinear = time_combination(
        InteractionKind::Bilinear,
        &cfg.model,
        b.n_edges,
        b.n_triplets,
        b.repeats,
        seed,
    );
    let mut rows: Vec<(String, String)> = Vec::new();
    for r in [&hadamard, &bilinear] {
        let tag = match r.kind {
            InteractionKind::Hadamard => "hadamard",
            InteractionKind::Bilinear => "bilinear",
        };
        rows.push((format!("{tag}_seconds_per_pass"), format!("{:.17e}", r.seconds_per_pass)));
        rows.push((format!("{tag}_ns_per_triplet"), format!("{:.17e}", r.ns_per_triplet)));
        rows.push((format!("{tag}_flops_per_triplet"), format!("{}", r.flops_per_triplet)));
    }
    rows.push((
        "wall_time_ratio".into(),
        format!("{:.17e}", bilinear.seconds_per_pass / hadamard.seconds_per_pass),
    ));
    let flop_ratio = triplet_combination_flops(InteractionKind::Bilinear, &cfg.model) as f64
        / triplet_combination_flops(InteractionKind::Hadamard, &cfg.model) as f64;
    rows.push(("flop_ratio".into(), format!("{flop_ratio:.17e}")));
    let mut text = String::from("metric,value\n");
    for (k, v) in rows {
        text.push_str(&format!("{k},{v}\n"));
    }
    print!("{text}");
    log::info!(
        "{} edges, {} triplets, {} repeats: bilinear/hadamard wall ratio {:.2}",
        b.n_edges,
        b.n_triplets,
        b.repeats,
        bilinear.seconds_per_pass / hadamard.seconds_per_pass
    );
    Ok(())
}

fn cmd_stats(cfg: &AppConfig, data: &Path, split: &str) -> Result<()> {
    let (manifest, records) = load_split(data, split)?;
    let reference: BTreeMap<u32, f64> = manifest.reference_energies();
    let hist = dataset_stats(&records, &reference, cfg.stats.bins)?;
    print!("{}", hist.to_csv());
    log::info!(
        "residual per atom over {} records: mean {:.4e}, min {:.4e}, max {:.4e} eV",
        records.len(),
        hist.mean,
        hist.min,
        hist.max
    );
    Ok(())
}
