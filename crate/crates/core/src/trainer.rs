//! Warm-up plus cosine schedule, the AdamW training loop with delayed
//! adapter activation, checkpoints and few-shot fine-tuning.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalharness::MetricsReport;
use crate::model::{prepare_all, Model, ModelConfig, Prepared};
use crate::nn::{clip_global_norm, AdamW, AdamWConfig, Graph, Mat};
use crate::scenegen::{derive_seed, read_json, write_json, Dataset, MultipathSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: f64,
    /// 0-based epoch index at whose start the adapters switch on.
    pub lora_activation_epoch: usize,
    pub lr_max: f64,
    pub lr_warmup_start: f64,
    pub lr_min: f64,
    pub cosine_period_epochs: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 24,
            epochs: 100,
            warmup_epochs: 3.0,
            lora_activation_epoch: 10,
            lr_max: 1e-5,
            lr_warmup_start: 1e-6,
            lr_min: 5e-7,
            cosine_period_epochs: 80.0,
            weight_decay: 0.01,
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.warmup_epochs >= 0.0 && self.cosine_period_epochs > 0.0) {
            return Err(Error::Config(
                "warm-up and cosine period must be non-negative/positive".into(),
            ));
        }
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_warmup_start && self.lr_warmup_start < self.lr_max) {
            return Err(Error::Config(format!(
                "need 0 < lr_min < lr_warmup_start < lr_max, got {} / {} / {}",
                self.lr_min, self.lr_warmup_start, self.lr_max
            )));
        }
        if !(self.grad_clip > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "grad_clip must be positive and weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Also enforces the staged ordering warm-up < activation < epochs.
    pub fn validate_staged(&self) -> Result<()> {
        self.validate()?;
        if !(self.warmup_epochs < self.lora_activation_epoch as f64 && self.lora_activation_epoch < self.epochs) {
            return Err(Error::Config(format!(
                "need warmup_epochs < lora_activation_epoch < epochs, got {} / {} / {}",
                self.warmup_epochs, self.lora_activation_epoch, self.epochs
            )));
        }
        Ok(())
    }
}

/// Learning rate at fractional epoch progress.
pub fn lr_at(epoch: f64, cfg: &TrainConfig) -> Result<f64> {
    if !(epoch >= 0.0 && epoch <= cfg.epochs as f64) {
        return Err(Error::Domain(format!("epoch {epoch} outside [0, {}]", cfg.epochs)));
    }
    if epoch < cfg.warmup_epochs {
        let f = epoch / cfg.warmup_epochs;
        return Ok(cfg.lr_warmup_start + (cfg.lr_max - cfg.lr_warmup_start) * f);
    }
    let progress = ((epoch - cfg.warmup_epochs) / cfg.cosine_period_epochs).min(1.0);
    Ok(cfg.lr_min + (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0)
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate at the start of the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_nmae_power: f64,
    pub val_nmse_power: f64,
    pub val_nmae_delay: f64,
    pub val_nmse_delay: f64,
    pub trainable_params: usize,
    pub lora_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: usize,
    pub global_step: u64,
    /// Seed every data-order and dropout stream derives from.
    pub seed: u64,
    pub lora_active: bool,
    pub val_loss: f64,
}

pub fn save_checkpoint(dir: &Path, model: &Model, state: &TrainState) -> Result<()> {
    model.save(dir)?;
    write_json(&dir.join("state.json"), state)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, TrainState)> {
    let mut model = Model::load(dir)?;
    let state: TrainState = read_json(&dir.join("state.json"))?;
    if state.lora_active {
        model.activate_lora();
    }
    Ok((model, state))
}

/// Evaluation-mode loss and metrics over a prepared split.
pub fn evaluate_prepared(
    model: &Model,
    data: &[Prepared],
    batch_size: usize,
) -> Result<(f64, MetricsReport, Vec<crate::heads::TaskOutputs>)> {
    let mut outputs = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    for chunk in data.chunks(batch_size.max(1)) {
        let batch: Vec<&Prepared> = chunk.iter().collect();
        let mut g = Graph::new();
        let (heads, l) = model.loss(&mut g, &batch, None)?;
        loss += g.scalar(l) * chunk.len() as f64;
        outputs.extend(heads.outputs(&g));
    }
    let truths: Vec<MultipathSet> = data.iter().map(|p| p.paths.clone()).collect();
    let report = MetricsReport::compute(&outputs, &truths, model.config.loss.tau_max_s)?;
    Ok((loss / data.len().max(1) as f64, report, outputs))
}

/// Gradients of the batch loss for every parameter used, trainable or not,
/// keyed in name order so reductions over them are reproducible.
pub fn batch_gradients(
    model: &Model,
    batch: &[&Prepared],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, BTreeMap<String, Mat>)> {
    let mut g = Graph::new();
    let (_, loss) = model.loss(&mut g, batch, rng)?;
    g.backward(loss);
    let grads = g.param_grads().map(|(n, m)| (n.to_string(), m.clone())).collect();
    Ok((g.scalar(loss), grads))
}

/// Options of one optimization run over prepared data.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions<'a> {
    /// Epoch index at which adapters switch on; `Some(0)` for fine-tuning.
    pub lora_from: Option<usize>,
    /// Where `best/`, `last/` and `metrics.ndjson` go.
    pub out_dir: Option<&'a Path>,
}

/// Trains `model` in place and returns the per-epoch log.
pub fn run_training(
    model: &mut Model,
    train: &[Prepared],
    val: &[Prepared],
    cfg: &TrainConfig,
    opts: RunOptions<'_>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training needs non-empty train and val splits".into()));
    }
    let mut log = match opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("metrics.ndjson");
            Some((fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };
    let mut opt = AdamW::new(AdamWConfig {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
        weight_decay: cfg.weight_decay,
    });
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut global_step = 0u64;
    for epoch in 0..cfg.epochs {
        if opts.lora_from.is_some_and(|e| epoch >= e) && !model.lora_active {
            model.activate_lora();
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2 * epoch as u64)));
        let mut dropout = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2 * epoch as u64 + 1));
        let mut train_loss = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let progress = epoch as f64 + step as f64 / steps_per_epoch as f64;
            let lr = lr_at(progress, cfg)?;
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grads) = batch_gradients(model, &batch, Some(&mut dropout))?;
            grads.retain(|name, _| model.store.get(name).is_some_and(|p| p.trainable));
            clip_global_norm(&mut grads, cfg.grad_clip);
            opt.step(&mut model.store, &grads, lr);
            train_loss += loss * chunk.len() as f64;
            global_step += 1;
        }
        let (val_loss, report, _) = evaluate_prepared(model, val, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            lr: lr_at(epoch as f64, cfg)?,
            train_loss: train_loss / train.len() as f64,
            val_loss,
            val_accuracy: report.accuracy,
            val_nmae_power: report.nmae_power,
            val_nmse_power: report.nmse_power,
            val_nmae_delay: report.nmae_delay,
            val_nmse_delay: report.nmse_delay,
            trainable_params: model.trainable_count(),
            lora_active: model.lora_active,
        };
        let state = TrainState {
            epoch: epoch + 1,
            global_step,
            seed: cfg.seed,
            lora_active: model.lora_active,
            val_loss,
        };
        if let Some((file, path)) = log.as_mut() {
            let line = serde_json::to_string(&record).map_err(|e| Error::json(path.as_path(), e))?;
            writeln!(file, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        if let Some(dir) = opts.out_dir {
            if val_loss < best {
                save_checkpoint(&dir.join("best"), model, &state)?;
            }
            if epoch + 1 == cfg.epochs {
                save_checkpoint(&dir.join("last"), model, &state)?;
            }
        }
        best = best.min(val_loss);
        history.push(record);
    }
    Ok(history)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights after the last epoch.
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

/// Full staged training on a dataset's train split, validated on its val split.
pub fn train(
    dataset: &Dataset,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate_staged()?;
    let train = prepare_all(&dataset.split("train")?, model_config)?;
    let val = prepare_all(&dataset.split("val")?, model_config)?;
    let mut model = Model::new(model_config.clone())?;
    let history = run_training(
        &mut model,
        &train,
        &val,
        cfg,
        RunOptions {
            lora_from: Some(cfg.lora_activation_epoch),
            out_dir,
        },
    )?;
    Ok(TrainOutcome { model, history })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotResult {
    pub fraction: f64,
    pub samples_used: usize,
    /// Extra samples drawn from the mixing dataset.
    pub mixed_samples: usize,
    pub metrics: MetricsReport,
}

/// `floor(fraction * n)` with a domain check on the fraction.
pub fn few_shot_count(fraction: f64, n: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Domain(format!("fraction {fraction} outside [0, 1]")));
    }
    Ok((fraction * n as f64).floor() as usize)
}

/// Seeded sample without replacement, in draw order.
fn sample_indices(seed: u64, n: usize, k: usize) -> Vec<usize> {
    index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n, k).into_vec()
}

/// Fine-tunes a copy of `model` on a seeded `fraction` of the target train
/// split with adapters on from the first step, then evaluates on the target
/// test split. With `mix`, as many source samples are interleaved 1:1.
pub fn fine_tune_few_shot(
    model: &Model,
    target: &Dataset,
    fraction: f64,
    cfg: &TrainConfig,
    mix: Option<&Dataset>,
    out_dir: Option<&Path>,
) -> Result<(Model, FewShotResult)> {
    let config = &model.config;
    let train_all = target.split("train")?;
    let k = few_shot_count(fraction, train_all.len())?;
    let test = prepare_all(&target.split("test")?, config)?;
    let mut tuned = model.clone();
    let mut mixed_samples = 0;
    if k > 0 {
        let picked: Vec<_> = sample_indices(derive_seed(cfg.seed, 0x5107), train_all.len(), k)
            .into_iter()
            .map(|i| train_all[i])
            .collect();
        let mut train = Vec::with_capacity(2 * k);
        let own = prepare_all(&picked, config)?;
        match mix {
            Some(source) => {
                let pool = source.split("train")?;
                let m = k.min(pool.len());
                let other: Vec<_> = sample_indices(derive_seed(cfg.seed, 0x3141), pool.len(), m)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect();
                let other = prepare_all(&other, config)?;
                mixed_samples = other.len();
                let mut other = other.into_iter();
                for p in own {
                    train.push(p);
                    if let Some(o) = other.next() {
                        train.push(o);
                    }
                }
            }
            None => train = own,
        }
        let val = prepare_all(&target.split("val")?, config)?;
        run_training(
            &mut tuned,
            &train,
            &val,
            cfg,
            RunOptions {
                lora_from: Some(0),
                out_dir,
            },
        )?;
    }
    let (_, metrics, _) = evaluate_prepared(&tuned, &test, cfg.batch_size)?;
    Ok((
        tuned,
        FewShotResult {
            fraction,
            samples_used: k,
            mixed_samples,
            metrics,
        },
    ))
}

/// Every `.arr` weight file name under a checkpoint, sorted.
pub fn checkpoint_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_anchor_points() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0.0, &cfg).unwrap(), 1e-6);
        assert_eq!(lr_at(3.0, &cfg).unwrap(), 1e-5);
        let mid = lr_at(43.0, &cfg).unwrap();
        assert!((mid - 5.25e-6).abs() < 1e-18);
        assert_eq!(lr_at(83.0, &cfg).unwrap(), 5e-7);
        assert_eq!(lr_at(100.0, &cfg).unwrap(), 5e-7);
        let below = lr_at(3.0 - 1e-12, &cfg).unwrap();
        assert!((below - 1e-5).abs() < 1e-15);
        assert!(matches!(lr_at(-0.1, &cfg), Err(Error::Domain(_))));
        assert!(matches!(lr_at(100.5, &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn config_invariants() {
        assert!(TrainConfig::default().validate_staged().is_ok());
        let bad = TrainConfig {
            lora_activation_epoch: 2,
            ..Default::default()
        };
        assert!(bad.validate_staged().is_err());
        let bad = TrainConfig {
            lr_min: 2e-6,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn few_shot_counts() {
        assert_eq!(few_shot_count(0.014, 6000).unwrap(), 84);
        assert_eq!(few_shot_count(0.0, 6000).unwrap(), 0);
        assert_eq!(few_shot_count(1.0, 37).unwrap(), 37);
        assert!(few_shot_count(1.5, 10).is_err());
        let s = sample_indices(4, 100, 10);
        let mut u = s.clone();
        u.sort();
        u.dedup();
        assert_eq!(u.len(), 10);
        assert_eq!(s, sample_indices(4, 100, 10));
    }
}
