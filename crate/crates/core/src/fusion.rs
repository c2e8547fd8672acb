//! Per-view channel attention over the concatenated modality features, then
//! Tx|Rx concatenation and projection into the backbone width.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::encoders::{Modality, ModalityFeature, View};
use crate::error::{Error, Result};
use crate::nn::layers::{init_linear, linear};
use crate::nn::{Graph, Mat, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EcaConfig {
    pub gamma: f64,
    pub b: f64,
    /// Fixed odd kernel size; `None` derives it from the channel count.
    pub kernel_override: Option<usize>,
}

impl Default for EcaConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            b: 1.0,
            kernel_override: Some(3),
        }
    }
}

impl EcaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.b.is_finite() {
            return Err(Error::Config(format!(
                "invalid ECA gamma {} / b {}",
                self.gamma, self.b
            )));
        }
        if let Some(k) = self.kernel_override {
            if k % 2 == 0 {
                return Err(Error::Config(format!("ECA kernel size {k} must be odd")));
            }
        }
        Ok(())
    }

    pub fn kernel_size(&self, channels: usize) -> Result<usize> {
        match self.kernel_override {
            Some(k) => Ok(k),
            None => eca_kernel_size(channels, self.gamma, self.b),
        }
    }
}

/// Nearest odd integer to `log2(C)/gamma + b/gamma`; ties go up, minimum 1.
pub fn eca_kernel_size(channels: usize, gamma: f64, b: f64) -> Result<usize> {
    if channels < 1 {
        return Err(Error::Domain("ECA needs at least one channel".into()));
    }
    let t = (channels as f64).log2() / gamma + b / gamma;
    let half = ((t - 1.0) / 2.0 + 0.5).floor();
    Ok(if half < 0.0 { 1 } else { 2 * half as usize + 1 })
}

/// Gates each channel by `sigmoid(conv1d(x))` with zero padding.
pub fn eca_attend(vector: &Array1<f64>, weights: &Array1<f64>, k: usize) -> Result<Array1<f64>> {
    if k.is_multiple_of(2) {
        return Err(Error::Config(format!("ECA kernel size {k} must be odd")));
    }
    if weights.len() != k {
        return Err(Error::Shape(format!("{} kernel weights for k = {k}", weights.len())));
    }
    if vector.len() < k {
        return Err(Error::Shape(format!(
            "width {} is smaller than kernel {k}",
            vector.len()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(vector.clone().insert_axis(ndarray::Axis(0)));
    let w = g.constant(weights.clone().insert_axis(ndarray::Axis(0)));
    let y = eca_gate(&mut g, x, w);
    Ok(g.value(y).row(0).to_owned())
}

fn eca_gate(g: &mut Graph, x: Var, kernel: Var) -> Var {
    let conv = g.channel_conv(x, kernel);
    let gate = g.sigmoid(conv);
    g.mul(x, gate)
}

pub const ECA_KERNEL: &str = "fusion.eca.kernel";
pub const PROJECTION: &str = "fusion.proj";

/// `view_width` is the concatenated image+lidar+radar width of one view.
pub fn init_fusion(
    store: &mut ParamStore,
    seed: u64,
    cfg: &EcaConfig,
    view_width: usize,
    d_model: usize,
) -> Result<()> {
    cfg.validate()?;
    let k = cfg.kernel_size(view_width)?;
    if view_width < k {
        return Err(Error::Config(format!(
            "fused view width {view_width} is smaller than ECA kernel {k}"
        )));
    }
    store.normal(seed, ECA_KERNEL, 1, k, 0.5, true);
    if 2 * view_width != d_model {
        init_linear(store, seed, PROJECTION, 2 * view_width, d_model, true, true);
    }
    Ok(())
}

/// Batched fusion. Each view is `[image, lidar, radar]`, one row per sample.
pub fn fusion_forward(g: &mut Graph, store: &ParamStore, tx: [Var; 3], rx: [Var; 3]) -> Var {
    let kernel = g.param(store, ECA_KERNEL);
    let t = g.hcat(&tx);
    let t = eca_gate(g, t, kernel);
    let r = g.hcat(&rx);
    let r = eca_gate(g, r, kernel);
    let both = g.hcat(&[t, r]);
    if store.contains(&format!("{PROJECTION}.w")) {
        linear(g, store, PROJECTION, both)
    } else {
        both
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature {
    /// Gated Tx|Rx concatenation before projection.
    pub vector: Array1<f64>,
    /// Projection into the backbone width.
    pub projected: Array1<f64>,
}

fn ordered(features: &[ModalityFeature], view: View) -> Result<[Mat; 3]> {
    let pick = |m: Modality| {
        features
            .iter()
            .find(|f| f.modality == m && f.view == view)
            .map(|f| f.vector.clone().insert_axis(ndarray::Axis(0)))
            .ok_or_else(|| Error::Shape(format!("{view:?} view is missing its {m:?} feature")))
    };
    Ok([pick(Modality::Image)?, pick(Modality::Lidar)?, pick(Modality::Radar)?])
}

/// Fuses one sample's six modality features.
pub fn fuse_views(store: &ParamStore, tx: &[ModalityFeature], rx: &[ModalityFeature]) -> Result<FusedFeature> {
    let tx = ordered(tx, View::Tx)?;
    let rx = ordered(rx, View::Rx)?;
    let view_width: usize = tx.iter().map(|m| m.ncols()).sum();
    if rx.iter().map(|m| m.ncols()).sum::<usize>() != view_width || store.value(ECA_KERNEL).ncols() > view_width {
        return Err(Error::Shape("Tx and Rx feature widths disagree".into()));
    }
    let mut g = Graph::new();
    let tv = tx.map(|m| g.constant(m));
    let rv = rx.map(|m| g.constant(m));
    let kernel = g.param(store, ECA_KERNEL);
    let t = g.hcat(&tv);
    let t = eca_gate(&mut g, t, kernel);
    let r = g.hcat(&rv);
    let r = eca_gate(&mut g, r, kernel);
    let both = g.hcat(&[t, r]);
    let vector = g.value(both).row(0).to_owned();
    let out = fusion_forward(&mut g, store, tv, rv);
    Ok(FusedFeature {
        vector,
        projected: g.value(out).row(0).to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_normal;
    use proptest::prelude::*;

    #[test]
    fn kernel_size_cases() {
        assert_eq!(eca_kernel_size(64, 2.0, 1.0).unwrap(), 3);
        assert_eq!(eca_kernel_size(2, 2.0, 1.0).unwrap(), 1);
        assert_eq!(eca_kernel_size(2048, 2.0, 1.0).unwrap(), 7);
        assert_eq!(eca_kernel_size(1, 2.0, 1.0).unwrap(), 1);
        assert!(matches!(eca_kernel_size(0, 2.0, 1.0), Err(Error::Domain(_))));
        assert_eq!(EcaConfig::default().kernel_size(2048).unwrap(), 3);
    }

    /// Independent evaluation: candidates 1, 3, 5, ... scored by distance to t.
    fn kernel_oracle(c: usize, gamma: f64, b: f64) -> usize {
        let t = (c as f64).log2() / gamma + b / gamma;
        let mut best = 1;
        let mut k = 1;
        while (k as f64) < t + 2.0 {
            let d = (k as f64 - t).abs();
            let bd = (best as f64 - t).abs();
            if d <= bd {
                best = k;
            }
            k += 2;
        }
        best
    }

    proptest! {
        #[test]
        fn kernel_size_is_nearest_odd(c in 1usize..100_000, gamma in 0.5f64..4.0, b in 0.0f64..4.0) {
            let k = eca_kernel_size(c, gamma, b).unwrap();
            prop_assert!(k % 2 == 1);
            prop_assert_eq!(k, kernel_oracle(c, gamma, b));
        }

        #[test]
        fn gates_shrink_magnitude(seed in 0u64..500) {
            let x = init_normal(seed, "x", 1, 12, 2.0).row(0).to_owned();
            let w = init_normal(seed, "w", 1, 3, 1.0).row(0).to_owned();
            let y = eca_attend(&x, &w, 3).unwrap();
            prop_assert_eq!(y.len(), x.len());
            for (a, b) in x.iter().zip(y.iter()) {
                prop_assert!(b.abs() <= a.abs());
            }
        }
    }

    #[test]
    fn constant_input_gives_equal_interior_gates() {
        let x = Array1::from_elem(10, 1.5);
        let w = Array1::from(vec![0.2, -0.4, 0.9]);
        let y = eca_attend(&x, &w, 3).unwrap();
        for i in 2..9 {
            assert_eq!(y[i], y[1]);
        }
        for v in y.iter() {
            let gate = v / 1.5;
            assert!(gate > 0.0 && gate < 1.0);
        }
        assert!(matches!(eca_attend(&x, &Array1::zeros(2), 2), Err(Error::Config(_))));
    }

    fn feats(view: View, widths: [usize; 3], seed: u64) -> Vec<ModalityFeature> {
        [Modality::Image, Modality::Lidar, Modality::Radar]
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (&modality, w))| ModalityFeature {
                vector: init_normal(seed + i as u64, "f", 1, w, 1.0).row(0).to_owned(),
                modality,
                view,
            })
            .collect()
    }

    #[test]
    fn fused_widths_and_order_sensitivity() {
        let mut store = ParamStore::new();
        init_fusion(&mut store, 1, &EcaConfig::default(), 384, 64).unwrap();
        let tx = feats(View::Tx, [128, 128, 128], 1);
        let rx = feats(View::Rx, [128, 128, 128], 10);
        let f = fuse_views(&store, &tx, &rx).unwrap();
        assert_eq!(f.vector.len(), 768);
        assert_eq!(f.projected.len(), 64);

        let swapped_tx: Vec<_> = rx
            .iter()
            .cloned()
            .map(|mut m| {
                m.view = View::Tx;
                m
            })
            .collect();
        let swapped_rx: Vec<_> = tx
            .iter()
            .cloned()
            .map(|mut m| {
                m.view = View::Rx;
                m
            })
            .collect();
        let s = fuse_views(&store, &swapped_tx, &swapped_rx).unwrap();
        assert_ne!(f.projected, s.projected);

        assert!(matches!(fuse_views(&store, &tx[..2], &rx), Err(Error::Shape(_))));
    }

    #[test]
    fn full_scale_width_needs_no_projection() {
        let mut store = ParamStore::new();
        init_fusion(&mut store, 1, &EcaConfig::default(), 1024, 2048).unwrap();
        assert!(!store.contains("fusion.proj.w"));
        let tx = feats(View::Tx, [512, 256, 256], 1);
        let rx = feats(View::Rx, [512, 256, 256], 4);
        let f = fuse_views(&store, &tx, &rx).unwrap();
        assert_eq!(f.projected.len(), 2048);
        assert_eq!(f.vector, f.projected);
    }
}
