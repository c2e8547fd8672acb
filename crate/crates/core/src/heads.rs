//! Task adapters on top of the pooled hidden state and the composite loss.
//!
//! Class index 0 is LoS, index 1 is NLoS.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{init_linear, linear};
use crate::nn::{Graph, Mat, ParamStore, Segment, Var};
use crate::scenegen::MultipathSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Power,
    Delay,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Classification, Task::Power, Task::Delay];

    fn prefix(self) -> &'static str {
        match self {
            Task::Classification => "head.cls",
            Task::Power => "head.power",
            Task::Delay => "head.delay",
        }
    }

    fn outputs(self, n_paths: usize) -> usize {
        match self {
            Task::Classification => 2,
            _ => n_paths,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    /// Width of the two residual-branch layers.
    pub hidden: usize,
    /// Dropout rate on the regression branches, training only.
    pub dropout: f64,
    pub n_paths: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            dropout: 0.3,
            n_paths: 6,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.n_paths == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("invalid head config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Per-rank power weights in the numerator of the power NMSE.
    pub mu: Vec<f64>,
    pub weight_classification: f64,
    pub weight_power: f64,
    pub weight_delay: f64,
    /// Delay normalization, seconds.
    pub tau_max_s: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mu: vec![3.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            weight_classification: 1.0,
            weight_power: 1.0,
            weight_delay: 1.0,
            tau_max_s: 2000e-9,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, n_paths: usize) -> Result<()> {
        if self.mu.len() != n_paths || self.mu.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config(format!("mu must hold {n_paths} positive weights")));
        }
        if !(self.tau_max_s > 0.0) {
            return Err(Error::Config("tau_max_s must be positive".into()));
        }
        let w = [self.weight_classification, self.weight_power, self.weight_delay];
        if w.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::Config("task weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-sample predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutputs {
    /// `[p_los, p_nlos]`
    pub los_prob: [f64; 2],
    /// Power ratios in (0, 1).
    pub power_pred: Vec<f64>,
    /// Delays as fractions of `tau_max`.
    pub delay_pred: Vec<f64>,
}

impl TaskOutputs {
    pub fn predicts_los(&self) -> bool {
        self.los_prob[0] >= self.los_prob[1]
    }
}

/// Regression and classification targets of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub los: bool,
    pub power: Vec<f64>,
    pub delay_norm: Vec<f64>,
    pub valid: Vec<bool>,
}

impl Target {
    pub fn from_paths(paths: &MultipathSet, tau_max_s: f64) -> Self {
        Self {
            los: paths.los_present,
            power: paths.power_ratio.clone(),
            delay_norm: paths.delay_s.iter().map(|d| d / tau_max_s).collect(),
            valid: paths.valid.clone(),
        }
    }
}

pub fn init_heads(store: &mut ParamStore, seed: u64, d_model: usize, cfg: &HeadConfig) {
    for task in Task::ALL {
        let p = task.prefix();
        init_linear(store, seed, &format!("{p}.fc1"), d_model, cfg.hidden, true, true);
        init_linear(store, seed, &format!("{p}.fc2"), cfg.hidden, d_model, true, true);
        init_linear(
            store,
            seed,
            &format!("{p}.out"),
            d_model,
            task.outputs(cfg.n_paths),
            true,
            true,
        );
    }
}

/// Keep-mask scaled by `1/(1-rate)`.
pub fn dropout_mask(rng: &mut (impl Rng + ?Sized), rows: usize, cols: usize, rate: f64) -> Mat {
    let keep = 1.0 / (1.0 - rate);
    Mat::from_shape_fn((rows, cols), |_| if rng.random::<f64>() < rate { 0.0 } else { keep })
}

/// Residual branch of one task on pooled rows. Dropout applies only to the
/// regression branches and only when `rng` is given.
pub fn adapt(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &HeadConfig,
    pooled: Var,
    task: Task,
    rng: Option<&mut ChaCha8Rng>,
) -> Var {
    let p = task.prefix();
    let h = linear(g, store, &format!("{p}.fc1"), pooled);
    let mut h = g.relu(h);
    if let (Some(rng), false) = (rng, task == Task::Classification) {
        if cfg.dropout > 0.0 {
            let (r, c) = g.shape(h);
            let mask = dropout_mask(rng, r, c, cfg.dropout);
            h = g.dropout(h, mask);
        }
    }
    let h = linear(g, store, &format!("{p}.fc2"), h);
    g.add(pooled, h)
}

/// Head output nodes for a batch.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub log_prob: Var,
    pub power: Var,
    pub delay: Var,
}

pub fn heads_forward(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &HeadConfig,
    hidden: Var,
    segs: &[Segment],
    mut rng: Option<&mut ChaCha8Rng>,
) -> HeadVars {
    let pooled = g.segment_mean(hidden, segs);
    let mut out = [pooled; 3];
    for (i, task) in Task::ALL.into_iter().enumerate() {
        let m = adapt(g, store, cfg, pooled, task, rng.as_deref_mut());
        let logits = linear(g, store, &format!("{}.out", task.prefix()), m);
        out[i] = match task {
            Task::Classification => g.log_softmax(logits),
            _ => g.sigmoid(logits),
        };
    }
    HeadVars {
        log_prob: out[0],
        power: out[1],
        delay: out[2],
    }
}

impl HeadVars {
    pub fn outputs(&self, g: &Graph) -> Vec<TaskOutputs> {
        let (lp, pw, dl) = (g.value(self.log_prob), g.value(self.power), g.value(self.delay));
        (0..lp.nrows())
            .map(|i| TaskOutputs {
                los_prob: [lp[[i, 0]].exp(), lp[[i, 1]].exp()],
                power_pred: pw.row(i).to_vec(),
                delay_pred: dl.row(i).to_vec(),
            })
            .collect()
    }
}

/// Mean over rows followed by the task branch, evaluation mode unless a
/// dropout seed is given.
pub fn pool_and_adapt(
    hidden: &Mat,
    task: Task,
    store: &ParamStore,
    cfg: &HeadConfig,
    dropout_seed: Option<u64>,
) -> Result<Array1<f64>> {
    if hidden.nrows() == 0 {
        return Err(Error::Shape("cannot pool an empty sequence".into()));
    }
    let mut g = Graph::new();
    let h = g.constant(hidden.clone());
    let pooled = g.segment_mean(h, &[Segment::new(0, hidden.nrows())]);
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let m = adapt(&mut g, store, cfg, pooled, task, rng.as_mut());
    Ok(g.value(m).row(0).to_owned())
}

pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let z = e[0] + e[1];
    [e[0] / z, e[1] / z]
}

fn out_logits(store: &ParamStore, task: Task, mapping: &Array1<f64>) -> Array1<f64> {
    let p = task.prefix();
    store.value(&format!("{p}.out.w")).dot(mapping) + store.value(&format!("{p}.out.b")).row(0)
}

pub fn classify_los(mapping: &Array1<f64>, store: &ParamStore) -> [f64; 2] {
    let z = out_logits(store, Task::Classification, mapping);
    softmax2([z[0], z[1]])
}

/// `(power_pred, delay_pred)` from the two regression mappings.
pub fn regress_paths(
    power_mapping: &Array1<f64>,
    delay_mapping: &Array1<f64>,
    store: &ParamStore,
) -> (Vec<f64>, Vec<f64>) {
    let sig = |z: Array1<f64>| z.mapv(|v| 1.0 / (1.0 + (-v).exp())).to_vec();
    (
        sig(out_logits(store, Task::Power, power_mapping)),
        sig(out_logits(store, Task::Delay, delay_mapping)),
    )
}

/// `sum mu_n (t_n - p_n)^2 / sum t_n^2` over valid entries; `None` when no
/// entry is valid or the denominator vanishes.
pub fn weighted_nmse(truth: &[f64], pred: &[f64], valid: &[bool], mu: &[f64]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for n in 0..truth.len() {
        if valid[n] {
            num += mu[n] * (truth[n] - pred[n]).powi(2);
            den += truth[n] * truth[n];
        }
    }
    (den > 0.0).then_some(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub classification: f64,
    pub power: f64,
    pub delay: f64,
    pub total: f64,
}

/// Composite loss of one sample. Regression terms are skipped when the
/// truth has no valid path.
pub fn compute_loss(outputs: &TaskOutputs, truth: &MultipathSet, cfg: &LossConfig) -> Result<LossBreakdown> {
    let n = truth.n_max();
    cfg.validate(n)?;
    if outputs.power_pred.len() != n || outputs.delay_pred.len() != n {
        return Err(Error::Shape(format!("predictions must have {n} entries")));
    }
    let t = Target::from_paths(truth, cfg.tau_max_s);
    let label = if t.los { 0 } else { 1 };
    let classification = -outputs.los_prob[label].ln();
    let ones = vec![1.0; n];
    let power = weighted_nmse(&t.power, &outputs.power_pred, &t.valid, &cfg.mu).unwrap_or(0.0);
    let delay = weighted_nmse(&t.delay_norm, &outputs.delay_pred, &t.valid, &ones).unwrap_or(0.0);
    let total = cfg.weight_classification * classification + cfg.weight_power * power + cfg.weight_delay * delay;
    Ok(LossBreakdown {
        classification,
        power,
        delay,
        total,
    })
}

/// Batch-mean composite loss as a graph node.
pub fn loss_forward(g: &mut Graph, heads: &HeadVars, targets: &[Target], cfg: &LossConfig) -> Var {
    let b = targets.len() as f64;
    let n = cfg.mu.len();
    let onehot = Mat::from_shape_fn((targets.len(), 2), |(i, c)| {
        let label = if targets[i].los { 0 } else { 1 };
        if c == label {
            -cfg.weight_classification / b
        } else {
            0.0
        }
    });
    let w = g.constant(onehot);
    let ce = g.mul(heads.log_prob, w);
    let ce = g.sum(ce);

    let mut term = |pred: Var, truth: &dyn Fn(&Target) -> &[f64], mu: &[f64], weight: f64| {
        let mut t = Mat::zeros((targets.len(), n));
        let mut scale = Mat::zeros((targets.len(), n));
        for (i, tg) in targets.iter().enumerate() {
            let values = truth(tg);
            let den: f64 = (0..n).filter(|&k| tg.valid[k]).map(|k| values[k] * values[k]).sum();
            if den <= 0.0 {
                continue;
            }
            for k in 0..n {
                if tg.valid[k] {
                    t[[i, k]] = values[k];
                    scale[[i, k]] = weight * mu[k] / den / b;
                }
            }
        }
        let tv = g.constant(t);
        let diff = g.sub(pred, tv);
        let sq = g.mul(diff, diff);
        let sv = g.constant(scale);
        let weighted = g.mul(sq, sv);
        g.sum(weighted)
    };
    let power = term(heads.power, &|t| &t.power, &cfg.mu, cfg.weight_power);
    let ones = vec![1.0; n];
    let delay = term(heads.delay, &|t| &t.delay_norm, &ones, cfg.weight_delay);
    let s = g.add(ce, power);
    g.add(s, delay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_normal;

    fn paths(power: &[f64], delay_s: &[f64], los: bool) -> MultipathSet {
        let mut m = MultipathSet::empty(6);
        for (i, (&p, &d)) in power.iter().zip(delay_s).enumerate() {
            m.power_ratio[i] = p;
            m.delay_s[i] = d;
            m.valid[i] = true;
        }
        m.n_paths = power.len();
        m.los_present = los;
        m.total_power_w = 1.0;
        m
    }

    #[test]
    fn nmse_hand_cases() {
        let mu = [3.0, 1.0, 1.0];
        let v = weighted_nmse(&[0.6, 0.3, 0.1], &[0.5, 0.4, 0.1], &[true; 3], &mu).unwrap();
        assert!((v - 0.04 / 0.46).abs() < 1e-12);
        assert!((v - 0.08696).abs() < 1e-5);
        let d = weighted_nmse(&[100.0, 200.0], &[110.0, 190.0], &[true; 2], &[1.0, 1.0]).unwrap();
        assert!((d - 0.004).abs() < 1e-15);
        assert_eq!(weighted_nmse(&[0.5], &[0.1], &[false], &[1.0]), None);
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax2([0.0, 0.0]), [0.5, 0.5]);
        let p = softmax2([3f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }

    fn zero_store(d: usize, cfg: &HeadConfig) -> ParamStore {
        let mut s = ParamStore::new();
        init_heads(&mut s, 1, d, cfg);
        for (_, p) in s.iter_mut() {
            p.value.fill(0.0);
        }
        s
    }

    #[test]
    fn zero_heads_are_uninformative() {
        let cfg = HeadConfig {
            hidden: 8,
            ..Default::default()
        };
        let s = zero_store(4, &cfg);
        let m = Array1::from(vec![0.3, -1.0, 2.0, 0.5]);
        assert_eq!(classify_los(&m, &s), [0.5, 0.5]);
        let (p, d) = regress_paths(&m, &m, &s);
        assert_eq!(p, vec![0.5; 6]);
        assert_eq!(d, vec![0.5; 6]);
    }

    #[test]
    fn pooling_and_dropout_modes() {
        let cfg = HeadConfig {
            hidden: 16,
            ..Default::default()
        };
        let mut s = ParamStore::new();
        init_heads(&mut s, 2, 4, &cfg);
        // zeroed branch: mapping = pooled
        let mut z = s.clone();
        for name in ["head.cls.fc2.w", "head.cls.fc2.b"] {
            z.get_mut(name).unwrap().value.fill(0.0);
        }
        let row = Array1::from(vec![1.0, -2.0, 0.5, 3.0]);
        let hidden = Mat::from_shape_fn((5, 4), |(_, c)| row[c]);
        assert_eq!(
            pool_and_adapt(&hidden, Task::Classification, &z, &cfg, None).unwrap(),
            row
        );

        let hidden = init_normal(3, "h", 6, 4, 1.0);
        let e1 = pool_and_adapt(&hidden, Task::Power, &s, &cfg, None).unwrap();
        let e2 = pool_and_adapt(&hidden, Task::Power, &s, &cfg, None).unwrap();
        assert_eq!(e1, e2);
        let t1 = pool_and_adapt(&hidden, Task::Power, &s, &cfg, Some(9)).unwrap();
        let t2 = pool_and_adapt(&hidden, Task::Power, &s, &cfg, Some(9)).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(t1, e1);
        assert!(pool_and_adapt(&Mat::zeros((0, 4)), Task::Power, &s, &cfg, None).is_err());
    }

    #[test]
    fn loss_zero_iff_exact() {
        let truth = paths(&[0.6, 0.3, 0.1], &[100e-9, 200e-9, 300e-9], true);
        let cfg = LossConfig::default();
        let t = Target::from_paths(&truth, cfg.tau_max_s);
        let mut out = TaskOutputs {
            los_prob: [1.0, 0.0],
            power_pred: t.power.clone(),
            delay_pred: t.delay_norm.clone(),
        };
        assert_eq!(compute_loss(&out, &truth, &cfg).unwrap().total, 0.0);
        out.power_pred[5] = 0.9; // padded entry is ignored
        assert_eq!(compute_loss(&out, &truth, &cfg).unwrap().total, 0.0);
        out.power_pred[0] = 0.5;
        assert!(compute_loss(&out, &truth, &cfg).unwrap().total > 0.0);
    }

    #[test]
    fn no_paths_gives_classification_only() {
        let truth = MultipathSet::empty(6);
        let out = TaskOutputs {
            los_prob: [0.25, 0.75],
            power_pred: vec![0.3; 6],
            delay_pred: vec![0.3; 6],
        };
        let l = compute_loss(&out, &truth, &LossConfig::default()).unwrap();
        assert_eq!((l.power, l.delay), (0.0, 0.0));
        assert!((l.total - -(0.75f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn graph_loss_matches_per_sample_mean() {
        let cfg = HeadConfig {
            hidden: 8,
            ..Default::default()
        };
        let lcfg = LossConfig::default();
        let mut s = ParamStore::new();
        init_heads(&mut s, 5, 4, &cfg);
        let truths = [
            paths(&[0.7, 0.2, 0.1], &[50e-9, 80e-9, 120e-9], true),
            MultipathSet::empty(6),
            paths(&[1.0], &[300e-9], false),
        ];
        let targets: Vec<Target> = truths.iter().map(|p| Target::from_paths(p, lcfg.tau_max_s)).collect();
        let mut g = Graph::new();
        let h = g.constant(init_normal(6, "h", 7, 4, 1.0));
        let segs = Segment::packed([2, 3, 2]);
        let heads = heads_forward(&mut g, &s, &cfg, h, &segs, None);
        let loss = loss_forward(&mut g, &heads, &targets, &lcfg);
        let outs = heads.outputs(&g);
        let expect: f64 = outs
            .iter()
            .zip(&truths)
            .map(|(o, t)| compute_loss(o, t, &lcfg).unwrap().total)
            .sum::<f64>()
            / 3.0;
        assert!((g.scalar(loss) - expect).abs() < 1e-12);
        for o in &outs {
            assert!((o.los_prob[0] + o.los_prob[1] - 1.0).abs() < 1e-12);
            assert!(o.power_pred.iter().chain(&o.delay_pred).all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn power_nmse_is_scale_invariant() {
        let mu = [3.0, 1.0, 1.0];
        let t = [0.6, 0.3, 0.1];
        let p = [0.5, 0.4, 0.2];
        let a = weighted_nmse(&t, &p, &[true; 3], &mu).unwrap();
        let k = 7.5;
        let b = weighted_nmse(&t.map(|v| v * k), &p.map(|v| v * k), &[true; 3], &mu).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
