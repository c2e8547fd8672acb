//! Command-line entry point. `dispatch` returns the process exit code:
//! 0 on success, 1 on a runtime error, 2 on a usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::chanstats::{self, CapacityConfig};
use crate::evalharness::{self, AblationTable, AblationVariant};
use crate::model::ModelConfig;
use crate::scenegen::{
    derive_seed, generate_dataset, load_dataset, read_paths_csv, BandConfig, ScenarioConfig, ScenarioKind, Vtd,
};
use crate::trainer::{self, fine_tune_few_shot, load_checkpoint, save_checkpoint, TrainConfig, TrainState};

/// Environment variable capping worker threads; 0 or unset means automatic.
pub const THREADS_ENV: &str = "SOM_MULTIPATH_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "som-multipath",
    version,
    about = "Multi-modal sensing to multipath channel generation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a synthetic dataset.
    Generate(GenerateArgs),
    /// Train a model on a dataset's train split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Evaluate(EvaluateArgs),
    /// Adapt a checkpoint to a new dataset with a fraction of its train split.
    Finetune(FinetuneArgs),
    /// Delay and frequency statistics of one paths.csv.
    Stats(StatsArgs),
    /// Shannon capacity of every snapshot in a dataset.
    Capacity(CapacityArgs),
    /// Train and test one ablation variant, or all of them.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Scenario config JSON; urban, low density, 60 GHz when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub snapshots: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides both the initialization and the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Report JSON; predictions.csv and plots.json are written beside it.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub fraction: f64,
    /// Source dataset interleaved with the target samples.
    #[arg(long)]
    pub mix_data: Option<PathBuf>,
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub paths: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Upper end of the frequency-separation grid.
    #[arg(long, default_value_t = 50e6)]
    pub fcf_max_hz: f64,
    #[arg(long, default_value_t = 101)]
    pub fcf_points: usize,
}

#[derive(Debug, Args)]
pub struct CapacityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    pub bandwidth_mhz: f64,
    #[arg(long, default_value_t = 128)]
    pub segments: usize,
    #[arg(long, default_value_t = -174.0, allow_hyphen_values = true)]
    pub noise_dbm_hz: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// A variant name or `all`.
    #[arg(long)]
    pub variant: String,
    #[command(flatten)]
    pub train: TrainArgs,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return 2;
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| format!("{THREADS_ENV} must be a non-negative integer, got {value:?}"))?;
    // The global pool can only be built once per process; later calls keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Finetune(a) => finetune(a),
        Command::Stats(a) => stats(a),
        Command::Capacity(a) => capacity(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn read_file<T: DeserializeOwned>(p: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    path.map_or_else(|| Ok(T::default()), read_file)
}

fn write_pretty(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn resolved_path(out_file: &Path) -> PathBuf {
    out_file
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .join("resolved_config.json")
}

fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    let mut config = match &a.config {
        Some(p) => read_file::<ScenarioConfig>(p)?,
        None => ScenarioConfig::new(ScenarioKind::Urban, Vtd::Low, BandConfig::MMWAVE),
    };
    if let Some(n) = a.snapshots {
        config.snapshots = n;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let manifest = generate_dataset(&config, &a.out, a.force)?;
    write_pretty(
        &a.out.join("resolved_config.json"),
        &json!({ "command": "generate", "scenario": config }),
    )?;
    println!("wrote {} snapshots to {}", manifest.snapshot_count, a.out.display());
    Ok(())
}

struct TrainSetup {
    model: ModelConfig,
    train: TrainConfig,
}

fn train_setup(a: &TrainArgs) -> anyhow::Result<TrainSetup> {
    let mut model: ModelConfig = read_config(a.model_config.as_deref())?;
    let mut train: TrainConfig = read_config(a.train_config.as_deref())?;
    if let Some(s) = a.seed {
        model.init_seed = s;
        train.seed = s;
    }
    Ok(TrainSetup { model, train })
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let setup = train_setup(&a)?;
    let dataset = load_dataset(&a.data)?;
    evalharness::check_compatible(&setup.model, &dataset)?;
    create_dir(&a.out)?;
    write_pretty(
        &a.out.join("resolved_config.json"),
        &json!({ "command": "train", "data": a.data, "model": setup.model, "train": setup.train }),
    )?;
    let outcome = trainer::train(&dataset, &setup.model, &setup.train, Some(&a.out))?;
    if let Some(last) = outcome.history.last() {
        println!(
            "epoch {} train loss {:.6} val loss {:.6} val accuracy {}",
            last.epoch,
            last.train_loss,
            last.val_loss,
            evalharness::format_percent(last.val_accuracy)
        );
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let dataset = load_dataset(&a.data)?;
    let eval = evalharness::evaluate(&a.ckpt, &dataset, &a.split)?;
    eval.write(&a.report)?;
    write_pretty(
        &resolved_path(&a.report),
        &json!({ "command": "evaluate", "ckpt": a.ckpt, "data": a.data, "split": a.split }),
    )?;
    let r = &eval.report;
    println!(
        "accuracy {} nmse power {:.6} nmse delay {:.6} (baseline {} / {:.6} / {:.6})",
        r.model.accuracy_percent(),
        r.model.nmse_power,
        r.model.nmse_delay,
        r.baseline.accuracy_percent(),
        r.baseline.nmse_power,
        r.baseline.nmse_delay
    );
    Ok(())
}

fn finetune(a: FinetuneArgs) -> anyhow::Result<()> {
    let mut cfg: TrainConfig = read_config(a.train_config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (model, _) = load_checkpoint(&a.ckpt)?;
    let target = load_dataset(&a.data)?;
    evalharness::check_compatible(&model.config, &target)?;
    let mix = a.mix_data.as_deref().map(load_dataset).transpose()?;
    create_dir(&a.out)?;
    write_pretty(
        &a.out.join("resolved_config.json"),
        &json!({
            "command": "finetune", "ckpt": a.ckpt, "data": a.data, "fraction": a.fraction,
            "mix_data": a.mix_data, "train": cfg,
        }),
    )?;
    let (tuned, result) = fine_tune_few_shot(&model, &target, a.fraction, &cfg, mix.as_ref(), Some(&a.out))?;
    if result.samples_used == 0 {
        let state = TrainState {
            epoch: 0,
            global_step: 0,
            seed: cfg.seed,
            lora_active: tuned.lora_active,
            val_loss: f64::NAN,
        };
        save_checkpoint(&a.out.join("last"), &tuned, &state)?;
    }
    write_pretty(&a.out.join("few_shot.json"), &result)?;
    println!(
        "fraction {} samples {} accuracy {} nmse power {:.6} nmse delay {:.6}",
        result.fraction,
        result.samples_used,
        result.metrics.accuracy_percent(),
        result.metrics.nmse_power,
        result.metrics.nmse_delay
    );
    Ok(())
}

fn stats(a: StatsArgs) -> anyhow::Result<()> {
    if a.fcf_points < 2 || !(a.fcf_max_hz > 0.0) {
        bail!("need fcf_points >= 2 and fcf_max_hz > 0");
    }
    let text = fs::read_to_string(&a.paths).with_context(|| format!("reading {}", a.paths.display()))?;
    let paths = read_paths_csv(&text)?;
    let entry = chanstats::pdp(&paths);
    let grid: Vec<f64> = (0..a.fcf_points)
        .map(|i| a.fcf_max_hz * i as f64 / (a.fcf_points - 1) as f64)
        .collect();
    let report = json!({
        "pdp": entry,
        "mean_delay_s": chanstats::mean_delay(&entry)?,
        "rms_delay_spread_s": chanstats::rms_delay_spread(&entry)?,
        "fcf": { "delta_f_hz": grid, "magnitude_normalized": chanstats::fcf_normalized(&entry, &grid)? },
    });
    write_pretty(&a.out, &report)?;
    write_pretty(
        &resolved_path(&a.out),
        &json!({ "command": "stats", "paths": a.paths, "fcf_max_hz": a.fcf_max_hz, "fcf_points": a.fcf_points }),
    )?;
    println!(
        "rms delay spread {:.6e} s",
        report["rms_delay_spread_s"].as_f64().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn capacity(a: CapacityArgs) -> anyhow::Result<()> {
    let cfg = CapacityConfig {
        bandwidth_hz: a.bandwidth_mhz * 1e6,
        segments: a.segments,
        noise_psd_dbm_per_hz: a.noise_dbm_hz,
        seed: a.seed,
    };
    cfg.validate()?;
    let dataset = load_dataset(&a.data)?;
    let mut rows = Vec::with_capacity(dataset.snapshots.len());
    for s in &dataset.snapshots {
        let c = CapacityConfig {
            seed: derive_seed(cfg.seed, s.index as u64),
            ..cfg
        };
        rows.push(json!({ "index": s.index, "capacity_bps": chanstats::channel_capacity(&s.paths, &c)? }));
    }
    let values: Vec<f64> = rows.iter().filter_map(|r| r["capacity_bps"].as_f64()).collect();
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    write_pretty(
        &a.out,
        &json!({ "config": cfg, "per_snapshot": rows, "mean_bps": mean, "min_bps": min, "max_bps": max }),
    )?;
    write_pretty(
        &resolved_path(&a.out),
        &json!({ "command": "capacity", "data": a.data, "capacity": cfg }),
    )?;
    println!("mean capacity {mean:.6e} bit/s over {} snapshots", values.len());
    Ok(())
}

fn ablate(a: AblateArgs) -> anyhow::Result<()> {
    let variants: Vec<AblationVariant> = if a.variant == "all" {
        AblationVariant::ALL.to_vec()
    } else {
        vec![a.variant.parse()?]
    };
    let setup = train_setup(&a.train)?;
    let dataset = load_dataset(&a.train.data)?;
    create_dir(&a.train.out)?;
    write_pretty(
        &a.train.out.join("resolved_config.json"),
        &json!({
            "command": "ablate", "variants": variants, "data": a.train.data,
            "model": setup.model, "train": setup.train,
        }),
    )?;
    let table = AblationTable::run(&variants, &dataset, &setup.model, &setup.train, Some(&a.train.out))?;
    write_pretty(&a.train.out.join("ablation.json"), &table)?;
    let csv = a.train.out.join("ablation.csv");
    let text = table.to_csv();
    fs::write(&csv, &text).with_context(|| format!("writing {}", csv.display()))?;
    print!("{text}");
    Ok(())
}
