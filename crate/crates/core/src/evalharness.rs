//! Metrics, baselines, ablation variants and the generalization protocol.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::{BASE_PREFIX, LORA_PREFIX};
use crate::chanstats::{self, CapacityConfig, PdpEntry};
use crate::encoders::Modality;
use crate::error::{Error, Result};
use crate::heads::TaskOutputs;
use crate::model::{prepare_all, Model, ModelConfig};
use crate::nn::ParamStore;
use crate::scenegen::{
    derive_seed, generate_dataset, load_dataset, write_json, BandConfig, Dataset, MultipathSet, ScenarioConfig,
    ScenarioKind, Vtd,
};
use crate::trainer::{
    evaluate_prepared, fine_tune_few_shot, load_checkpoint, run_training, train, FewShotResult, RunOptions, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    #[default]
    Full,
    CameraOnly,
    LidarOnly,
    RadarOnly,
    NoPrompt,
    NoBackbone,
    FrozenBackbone,
    NoPretrain,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 8] = [
        AblationVariant::Full,
        AblationVariant::CameraOnly,
        AblationVariant::LidarOnly,
        AblationVariant::RadarOnly,
        AblationVariant::NoPrompt,
        AblationVariant::NoBackbone,
        AblationVariant::FrozenBackbone,
        AblationVariant::NoPretrain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::CameraOnly => "camera_only",
            AblationVariant::LidarOnly => "lidar_only",
            AblationVariant::RadarOnly => "radar_only",
            AblationVariant::NoPrompt => "no_prompt",
            AblationVariant::NoBackbone => "no_backbone",
            AblationVariant::FrozenBackbone => "frozen_backbone",
            AblationVariant::NoPretrain => "no_pretrain",
        }
    }

    /// Whether the encoder of `m` runs; disabled modalities use learned null embeddings.
    pub fn uses(self, m: Modality) -> bool {
        match self {
            AblationVariant::CameraOnly => m == Modality::Image,
            AblationVariant::LidarOnly => m == Modality::Lidar,
            AblationVariant::RadarOnly => m == Modality::Radar,
            _ => true,
        }
    }

    pub fn uses_backbone(self) -> bool {
        self != AblationVariant::NoBackbone
    }

    pub fn uses_prompt(self) -> bool {
        !matches!(self, AblationVariant::NoPrompt | AblationVariant::NoBackbone)
    }

    pub fn allows_lora(self) -> bool {
        !matches!(self, AblationVariant::FrozenBackbone | AblationVariant::NoBackbone)
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant {s:?}")))
    }
}

/// Per-snapshot regression errors averaged over the snapshots that have at
/// least one valid path with non-zero truth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub nmae_power: f64,
    pub nmse_power: f64,
    pub nmae_delay: f64,
    pub nmse_delay: f64,
    /// Snapshots averaged over (T).
    pub snapshots: usize,
    /// Snapshots skipped because the truth denominator vanished.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case: String,
    pub count: usize,
    pub accuracy: f64,
    #[serde(flatten)]
    pub regression: RegressionMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub nmae_power: f64,
    pub nmse_power: f64,
    pub nmae_delay: f64,
    pub nmse_delay: f64,
    /// Snapshots entering the regression averages.
    pub snapshots: usize,
    pub skipped: usize,
    pub count: usize,
    /// Breakdown by true link state.
    pub per_case: Vec<CaseMetrics>,
}

/// Fraction of argmax predictions that match the labels (`true` = LoS).
pub fn classification_accuracy(probs: &[[f64; 2]], labels: &[bool]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::Domain(format!(
            "accuracy needs equal non-empty inputs, got {} and {}",
            probs.len(),
            labels.len()
        )));
    }
    let correct = probs.iter().zip(labels).filter(|(p, &l)| (p[0] >= p[1]) == l).count();
    Ok(correct as f64 / probs.len() as f64)
}

/// Normalized absolute and squared errors of power ratios and delays,
/// restricted to the truth's valid entries.
pub fn nmae_nmse(pred: &[MultipathSet], truth: &[MultipathSet]) -> Result<RegressionMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} snapshots",
            pred.len(),
            truth.len()
        )));
    }
    let mut m = RegressionMetrics::default();
    for (p, t) in pred.iter().zip(truth) {
        if p.n_max() != t.n_max() {
            return Err(Error::Shape("prediction and truth path counts differ".into()));
        }
        let mut s = [0.0; 8];
        for n in (0..t.n_max()).filter(|&n| t.valid[n]) {
            let (dp, dd) = (t.power_ratio[n] - p.power_ratio[n], t.delay_s[n] - p.delay_s[n]);
            s[0] += dp.abs();
            s[1] += t.power_ratio[n].abs();
            s[2] += dp * dp;
            s[3] += t.power_ratio[n] * t.power_ratio[n];
            s[4] += dd.abs();
            s[5] += t.delay_s[n].abs();
            s[6] += dd * dd;
            s[7] += t.delay_s[n] * t.delay_s[n];
        }
        if s[1] == 0.0 || s[3] == 0.0 || s[5] == 0.0 || s[7] == 0.0 {
            m.skipped += 1;
            continue;
        }
        m.nmae_power += s[0] / s[1];
        m.nmse_power += s[2] / s[3];
        m.nmae_delay += s[4] / s[5];
        m.nmse_delay += s[6] / s[7];
        m.snapshots += 1;
    }
    if m.snapshots > 0 {
        let t = m.snapshots as f64;
        m.nmae_power /= t;
        m.nmse_power /= t;
        m.nmae_delay /= t;
        m.nmse_delay /= t;
    }
    Ok(m)
}

/// Predicted multipath set on the truth's valid mask.
pub fn predicted_paths(out: &TaskOutputs, truth: &MultipathSet, tau_max_s: f64) -> MultipathSet {
    MultipathSet {
        n_paths: truth.n_paths,
        power_ratio: out.power_pred.clone(),
        delay_s: out.delay_pred.iter().map(|d| d * tau_max_s).collect(),
        valid: truth.valid.clone(),
        los_present: out.predicts_los(),
        total_power_w: truth.total_power_w,
    }
}

impl MetricsReport {
    pub fn compute(outputs: &[TaskOutputs], truths: &[MultipathSet], tau_max_s: f64) -> Result<Self> {
        let probs: Vec<[f64; 2]> = outputs.iter().map(|o| o.los_prob).collect();
        let labels: Vec<bool> = truths.iter().map(|t| t.los_present).collect();
        let accuracy = classification_accuracy(&probs, &labels)?;
        let preds: Vec<MultipathSet> = outputs
            .iter()
            .zip(truths)
            .map(|(o, t)| predicted_paths(o, t, tau_max_s))
            .collect();
        let r = nmae_nmse(&preds, truths)?;
        let mut per_case = Vec::new();
        for (case, los) in [("los", true), ("nlos", false)] {
            let idx: Vec<usize> = (0..truths.len()).filter(|&i| truths[i].los_present == los).collect();
            if idx.is_empty() {
                continue;
            }
            let pick = |v: &[MultipathSet]| idx.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
            let p: Vec<[f64; 2]> = idx.iter().map(|&i| probs[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            per_case.push(CaseMetrics {
                case: case.into(),
                count: idx.len(),
                accuracy: classification_accuracy(&p, &l)?,
                regression: nmae_nmse(&pick(&preds), &pick(truths))?,
            });
        }
        Ok(Self {
            accuracy,
            nmae_power: r.nmae_power,
            nmse_power: r.nmse_power,
            nmae_delay: r.nmae_delay,
            nmse_delay: r.nmse_delay,
            snapshots: r.snapshots,
            skipped: r.skipped,
            count: truths.len(),
            per_case,
        })
    }

    /// Accuracy in percent with two decimals, e.g. `92.76%`.
    pub fn accuracy_percent(&self) -> String {
        format_percent(self.accuracy)
    }
}

pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}%", 100.0 * fraction)
}

/// Per-rank mean power ratio and delay over valid training entries plus the
/// majority link state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanBaseline {
    pub power: Vec<f64>,
    pub delay_norm: Vec<f64>,
    pub majority_los: bool,
}

impl MeanBaseline {
    pub fn fit(train: &[MultipathSet], tau_max_s: f64) -> Result<Self> {
        let Some(first) = train.first() else {
            return Err(Error::Domain("baseline needs at least one training snapshot".into()));
        };
        let n = first.n_max();
        let mut power = vec![0.0; n];
        let mut delay = vec![0.0; n];
        let mut counts = vec![0usize; n];
        for t in train {
            for k in (0..n).filter(|&k| t.valid[k]) {
                power[k] += t.power_ratio[k];
                delay[k] += t.delay_s[k] / tau_max_s;
                counts[k] += 1;
            }
        }
        for k in 0..n {
            if counts[k] > 0 {
                power[k] /= counts[k] as f64;
                delay[k] /= counts[k] as f64;
            }
        }
        let los = train.iter().filter(|t| t.los_present).count();
        Ok(Self {
            power,
            delay_norm: delay,
            majority_los: 2 * los >= train.len(),
        })
    }

    pub fn predict(&self) -> TaskOutputs {
        TaskOutputs {
            los_prob: if self.majority_los { [1.0, 0.0] } else { [0.0, 1.0] },
            power_pred: self.power.clone(),
            delay_pred: self.delay_norm.clone(),
        }
    }
}

/// Model and baseline metrics on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub model: MetricsReport,
    /// Mean/majority predictor fitted on the train split.
    pub baseline: MetricsReport,
    pub eval_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub outputs: Vec<TaskOutputs>,
    pub truths: Vec<MultipathSet>,
    pub indices: Vec<usize>,
    pub tau_max_s: f64,
    pub band: BandConfig,
}

/// Errors when the dataset cannot feed the checkpoint's network.
pub fn check_compatible(config: &ModelConfig, dataset: &Dataset) -> Result<()> {
    let Some(s) = dataset.snapshots.first() else {
        return Err(Error::Compatibility("dataset has no snapshots".into()));
    };
    if s.paths.n_max() != config.heads.n_paths {
        return Err(Error::Compatibility(format!(
            "dataset keeps {} paths, model predicts {}",
            s.paths.n_max(),
            config.heads.n_paths
        )));
    }
    let want = (config.encoder.image_height, config.encoder.image_width);
    if s.tx.depth.dim() != want {
        return Err(Error::Compatibility(format!(
            "camera grid {:?}, model expects {want:?}",
            s.tx.depth.dim()
        )));
    }
    Ok(())
}

/// Evaluation-mode metrics of `model` on `split` plus the baseline.
pub fn evaluate_model(model: &Model, dataset: &Dataset, split: &str) -> Result<Evaluation> {
    check_compatible(&model.config, dataset)?;
    let snaps = dataset.split(split)?;
    if snaps.is_empty() {
        return Err(Error::Config(format!("split {split:?} is empty")));
    }
    let data = prepare_all(&snaps, &model.config)?;
    let (eval_loss, metrics, outputs) = evaluate_prepared(model, &data, 32)?;
    let tau = model.config.loss.tau_max_s;
    let train: Vec<MultipathSet> = dataset.split("train")?.iter().map(|s| s.paths.clone()).collect();
    let base = MeanBaseline::fit(&train, tau)?;
    let truths: Vec<MultipathSet> = snaps.iter().map(|s| s.paths.clone()).collect();
    let base_out: Vec<TaskOutputs> = truths.iter().map(|_| base.predict()).collect();
    Ok(Evaluation {
        report: EvalReport {
            split: split.to_string(),
            model: metrics,
            baseline: MetricsReport::compute(&base_out, &truths, tau)?,
            eval_loss,
        },
        outputs,
        truths,
        indices: snaps.iter().map(|s| s.index).collect(),
        tau_max_s: tau,
        band: dataset.manifest.config.band,
    })
}

/// Loads a checkpoint directory and evaluates it.
pub fn evaluate(checkpoint: &Path, dataset: &Dataset, split: &str) -> Result<Evaluation> {
    let (model, _) = load_checkpoint(checkpoint)?;
    evaluate_model(&model, dataset, split)
}

impl Evaluation {
    /// One row per snapshot: index, link-state probability and label, then
    /// predicted power ratios and delays in seconds.
    pub fn predictions_csv(&self) -> String {
        let n = self.outputs.first().map_or(0, |o| o.power_pred.len());
        let mut out = String::from("index,los_prob,pred_los,true_los");
        for k in 0..n {
            write!(out, ",power_{k}").unwrap();
        }
        for k in 0..n {
            write!(out, ",delay_s_{k}").unwrap();
        }
        out.push('\n');
        for ((o, t), i) in self.outputs.iter().zip(&self.truths).zip(&self.indices) {
            write!(
                out,
                "{i},{:e},{},{}",
                o.los_prob[0],
                o.predicts_los() as u8,
                t.los_present as u8
            )
            .unwrap();
            for p in &o.power_pred {
                write!(out, ",{p:e}").unwrap();
            }
            for d in &o.delay_pred {
                write!(out, ",{:e}", d * self.tau_max_s).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn plots(&self) -> Result<PlotData> {
        let preds: Vec<MultipathSet> = self
            .outputs
            .iter()
            .zip(&self.truths)
            .map(|(o, t)| predicted_paths(o, t, self.tau_max_s))
            .collect();
        PlotData::compute(&self.truths, &preds, &self.indices, self.band.bandwidth_hz)
    }

    /// Writes the report to `report_path` and `predictions.csv` plus
    /// `plots.json` next to it.
    pub fn write(&self, report_path: &Path) -> Result<()> {
        let dir = report_path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(report_path, &self.report)?;
        let csv = dir.join("predictions.csv");
        fs::write(&csv, self.predictions_csv()).map_err(|e| Error::io(&csv, e))?;
        write_json(&dir.join("plots.json"), &self.plots()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpTrace {
    pub index: usize,
    pub truth: PdpEntry,
    pub predicted: PdpEntry,
}

/// Sorted samples against their empirical CDF levels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Cdf {
    pub value: Vec<f64>,
    pub probability: Vec<f64>,
}

impl Cdf {
    pub fn from_samples(mut v: Vec<f64>) -> Self {
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let probability = (1..=v.len()).map(|i| i as f64 / n).collect();
        Self { value: v, probability }
    }
}

/// Series for external plotting of PDPs, delay-spread CDFs, mean normalized
/// |FCF| and mean capacity, truth against prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub pdp: Vec<PdpTrace>,
    pub rms_delay_spread_s: [Cdf; 2],
    pub fcf_delta_f_hz: Vec<f64>,
    pub fcf_truth: Vec<f64>,
    pub fcf_predicted: Vec<f64>,
    pub capacity_bps: [f64; 2],
    /// Snapshots with power entering the statistics.
    pub snapshots: usize,
}

pub const PDP_TRACES: usize = 5;
pub const FCF_POINTS: usize = 101;

impl PlotData {
    /// Snapshots without received power are left out.
    pub fn compute(
        truths: &[MultipathSet],
        preds: &[MultipathSet],
        indices: &[usize],
        bandwidth_hz: f64,
    ) -> Result<Self> {
        let grid: Vec<f64> = (0..FCF_POINTS)
            .map(|i| bandwidth_hz * i as f64 / (FCF_POINTS - 1) as f64)
            .collect();
        let cap = CapacityConfig {
            bandwidth_hz,
            ..CapacityConfig::default()
        };
        let mut pdp = Vec::new();
        let mut rms = [Vec::new(), Vec::new()];
        let mut fcf = [vec![0.0; FCF_POINTS], vec![0.0; FCF_POINTS]];
        let mut capacity = [0.0; 2];
        let mut used = 0;
        for ((t, p), &i) in truths.iter().zip(preds).zip(indices) {
            let entries = [chanstats::pdp(t), chanstats::pdp(p)];
            if entries.iter().any(|e| !(e.total_power() > 0.0)) {
                continue;
            }
            let cap = CapacityConfig {
                seed: derive_seed(cap.seed, i as u64),
                ..cap
            };
            for (k, (e, set)) in entries.iter().zip([t, p]).enumerate() {
                rms[k].push(chanstats::rms_delay_spread(e)?);
                for (acc, v) in fcf[k].iter_mut().zip(chanstats::fcf_normalized(e, &grid)?) {
                    *acc += v;
                }
                capacity[k] += chanstats::channel_capacity(set, &cap)?;
            }
            if pdp.len() < PDP_TRACES {
                let [truth, predicted] = entries;
                pdp.push(PdpTrace {
                    index: i,
                    truth,
                    predicted,
                });
            }
            used += 1;
        }
        if used > 0 {
            let n = used as f64;
            fcf.iter_mut().flatten().for_each(|v| *v /= n);
            capacity.iter_mut().for_each(|v| *v /= n);
        }
        let [fcf_truth, fcf_predicted] = fcf;
        let [rt, rp] = rms;
        Ok(Self {
            pdp,
            rms_delay_spread_s: [Cdf::from_samples(rt), Cdf::from_samples(rp)],
            fcf_delta_f_hz: grid,
            fcf_truth,
            fcf_predicted,
            capacity_bps: capacity,
            snapshots: used,
        })
    }
}

/// Outcome of training and testing one ablation variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub variant: AblationVariant,
    pub metrics: MetricsReport,
    /// Trainable scalars at the end of training.
    pub trainable_params: usize,
    /// Whether every backbone and adapter weight is bit-identical after training.
    pub backbone_unchanged: bool,
    pub final_train_loss: f64,
}

fn frozen_part(store: &ParamStore) -> Vec<(String, crate::nn::Mat)> {
    store
        .iter()
        .filter(|(n, _)| n.starts_with(BASE_PREFIX) || n.starts_with(LORA_PREFIX))
        .map(|(n, p)| (n.clone(), p.value.clone()))
        .collect()
}

/// Trains `variant` on the train split and reports test metrics.
pub fn run_ablation(
    variant: AblationVariant,
    dataset: &Dataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<AblationResult> {
    let config = ModelConfig {
        variant,
        ..model_config.clone()
    };
    check_compatible(&config, dataset)?;
    let train_set = prepare_all(&dataset.split("train")?, &config)?;
    let val = prepare_all(&dataset.split("val")?, &config)?;
    let test = prepare_all(&dataset.split("test")?, &config)?;
    let mut model = Model::new(config)?;
    let before = frozen_part(&model.store);
    let history = run_training(
        &mut model,
        &train_set,
        &val,
        train_config,
        RunOptions {
            lora_from: Some(train_config.lora_activation_epoch),
            out_dir,
        },
    )?;
    let (_, metrics, _) = evaluate_prepared(&model, &test, train_config.batch_size)?;
    Ok(AblationResult {
        variant,
        metrics,
        trainable_params: model.trainable_count(),
        backbone_unchanged: before == frozen_part(&model.store),
        final_train_loss: history.last().map_or(f64::NAN, |h| h.train_loss),
    })
}

/// One row per variant in the order run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationResult>,
}

impl AblationTable {
    pub fn run(
        variants: &[AblationVariant],
        dataset: &Dataset,
        model_config: &ModelConfig,
        train_config: &TrainConfig,
        out_dir: Option<&Path>,
    ) -> Result<Self> {
        let rows = variants
            .iter()
            .map(|&v| {
                run_ablation(
                    v,
                    dataset,
                    model_config,
                    train_config,
                    out_dir.map(|d| d.join(v.name())).as_deref(),
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,accuracy,nmae_power,nmse_power,nmae_delay,nmse_delay,trainable_params\n");
        for r in &self.rows {
            let m = &r.metrics;
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{}",
                r.variant,
                format_percent(m.accuracy),
                m.nmae_power,
                m.nmse_power,
                m.nmae_delay,
                m.nmse_delay,
                r.trainable_params
            )
            .unwrap();
        }
        out
    }
}

/// Few-shot fractions of the target train split.
pub const FEW_SHOT_FRACTIONS: [f64; 5] = [0.0025, 0.005, 0.01, 0.014, 0.016];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// Low to high traffic density.
    CrossVtd,
    /// 60 GHz to 5.9 GHz.
    CrossBand,
    /// Urban to suburban.
    CrossScenario,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 3] = [ShiftKind::CrossVtd, ShiftKind::CrossBand, ShiftKind::CrossScenario];

    pub fn name(self) -> &'static str {
        match self {
            ShiftKind::CrossVtd => "cross_vtd",
            ShiftKind::CrossBand => "cross_band",
            ShiftKind::CrossScenario => "cross_scenario",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationCase {
    pub kind: ShiftKind,
    pub source: ScenarioConfig,
    pub target: ScenarioConfig,
}

impl GeneralizationCase {
    /// Source is urban, low density, 60 GHz; the target changes one factor.
    pub fn standard(kind: ShiftKind, snapshots: usize, seed: u64) -> Self {
        let config = |s, v, b| {
            let mut c = ScenarioConfig::new(s, v, b);
            c.snapshots = snapshots;
            c
        };
        let mut source = config(ScenarioKind::Urban, Vtd::Low, BandConfig::MMWAVE);
        let mut target = match kind {
            ShiftKind::CrossVtd => config(ScenarioKind::Urban, Vtd::High, BandConfig::MMWAVE),
            ShiftKind::CrossBand => config(ScenarioKind::Urban, Vtd::Low, BandConfig::SUB6),
            ShiftKind::CrossScenario => config(ScenarioKind::Suburban, Vtd::Low, BandConfig::MMWAVE),
        };
        source.seed = derive_seed(seed, 0);
        target.seed = derive_seed(seed, 1);
        Self { kind, source, target }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub kind: ShiftKind,
    /// Source-trained model on the target test split without adaptation.
    pub zero_shot: MetricsReport,
    /// One entry per fraction, in grid order.
    pub few_shot: Vec<FewShotResult>,
    /// Adaptation on the whole target train split.
    pub full_shot: FewShotResult,
}

/// Generates both datasets under `work_dir`, trains on the source, then
/// adapts to the target at every fraction.
pub fn run_generalization(
    case: &GeneralizationCase,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    finetune_config: &TrainConfig,
    fractions: &[f64],
    work_dir: &Path,
) -> Result<GeneralizationReport> {
    let dirs: [PathBuf; 2] = [work_dir.join("source"), work_dir.join("target")];
    generate_dataset(&case.source, &dirs[0], true)?;
    generate_dataset(&case.target, &dirs[1], true)?;
    let source = load_dataset(&dirs[0])?;
    let target = load_dataset(&dirs[1])?;
    let trained = train(&source, model_config, train_config, None)?.model;
    let zero_shot = evaluate_model(&trained, &target, "test")?.report.model;
    let few_shot = fractions
        .iter()
        .map(|&f| fine_tune_few_shot(&trained, &target, f, finetune_config, None, None).map(|r| r.1))
        .collect::<Result<_>>()?;
    let (_, full_shot) = fine_tune_few_shot(&trained, &target, 1.0, finetune_config, None, None)?;
    Ok(GeneralizationReport {
        kind: case.kind,
        zero_shot,
        few_shot,
        full_shot,
    })
}
