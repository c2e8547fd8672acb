//! Channel statistics from multipath sets: power delay profile, RMS delay
//! spread, frequency correlation, random-phase impulse response and
//! segment-wise Shannon capacity.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegen::MultipathSet;

/// Impulse representation of one snapshot's PDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpEntry {
    pub delay_s: Vec<f64>,
    pub power_w: Vec<f64>,
}

impl PdpEntry {
    pub fn total_power(&self) -> f64 {
        self.power_w.iter().sum()
    }
}

/// One impulse per valid path at `(delay, ratio * total_power)`.
pub fn pdp(paths: &MultipathSet) -> PdpEntry {
    let (delay_s, power_w) = (0..paths.n_max())
        .filter(|&n| paths.valid[n])
        .map(|n| (paths.delay_s[n], paths.power_ratio[n] * paths.total_power_w))
        .unzip();
    PdpEntry { delay_s, power_w }
}

/// Power-weighted mean delay.
pub fn mean_delay(entry: &PdpEntry) -> Result<f64> {
    let total = entry.total_power();
    if !(total > 0.0) {
        return Err(Error::Domain("PDP has no power".into()));
    }
    Ok(entry
        .delay_s
        .iter()
        .zip(&entry.power_w)
        .map(|(t, p)| t * p)
        .sum::<f64>()
        / total)
}

/// Square root of the second central moment of the PDP.
pub fn rms_delay_spread(entry: &PdpEntry) -> Result<f64> {
    let mean = mean_delay(entry)?;
    let total = entry.total_power();
    let second = entry
        .delay_s
        .iter()
        .zip(&entry.power_w)
        .map(|(t, p)| p * (t - mean) * (t - mean))
        .sum::<f64>()
        / total;
    Ok(second.max(0.0).sqrt())
}

/// `xi(df) = sum_n P_n exp(-j 2 pi df tau_n)` on each grid point.
pub fn fcf(entry: &PdpEntry, delta_f_hz: &[f64]) -> Vec<Complex64> {
    delta_f_hz
        .iter()
        .map(|&df| {
            entry
                .delay_s
                .iter()
                .zip(&entry.power_w)
                .map(|(&t, &p)| Complex64::from_polar(p, -2.0 * PI * df * t))
                .sum()
        })
        .collect()
}

/// `|xi(df)| / xi(0)`.
pub fn fcf_normalized(entry: &PdpEntry, delta_f_hz: &[f64]) -> Result<Vec<f64>> {
    let total = entry.total_power();
    if !(total > 0.0) {
        return Err(Error::Domain("PDP has no power".into()));
    }
    Ok(fcf(entry, delta_f_hz).into_iter().map(|x| x.norm() / total).collect())
}

/// Complex taps `sqrt(P_n) exp(j phi_n)` of the valid paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Cir {
    pub delay_s: Vec<f64>,
    pub taps: Vec<Complex64>,
}

/// Random-phase impulse response with phases i.i.d. uniform on `[0, 2 pi)`.
pub fn synthesize_cir(paths: &MultipathSet, seed: u64) -> Cir {
    let entry = pdp(paths);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taps = entry
        .power_w
        .iter()
        .map(|&p| Complex64::from_polar(p.sqrt(), rng.random_range(0.0..2.0 * PI)))
        .collect();
    Cir {
        delay_s: entry.delay_s,
        taps,
    }
}

impl Cir {
    /// `H(f) = sum_n h_n exp(-j 2 pi f tau_n)`.
    pub fn frequency_response(&self, f_hz: f64) -> Complex64 {
        self.delay_s
            .iter()
            .zip(&self.taps)
            .map(|(&t, &h)| h * Complex64::from_polar(1.0, -2.0 * PI * f_hz * t))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapacityConfig {
    pub bandwidth_hz: f64,
    pub segments: usize,
    pub noise_psd_dbm_per_hz: f64,
    pub seed: u64,
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self {
            bandwidth_hz: 20e6,
            segments: 128,
            noise_psd_dbm_per_hz: -174.0,
            seed: 0,
        }
    }
}

impl CapacityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 || !(self.bandwidth_hz > 0.0) || !self.noise_psd_dbm_per_hz.is_finite() {
            return Err(Error::Config(format!("invalid capacity config {self:?}")));
        }
        Ok(())
    }

    /// Baseband centre of each segment: `-B/2 + (s - 1/2) B/S`, `s = 1..S`.
    pub fn segment_frequencies(&self) -> Vec<f64> {
        let w = self.bandwidth_hz / self.segments as f64;
        (1..=self.segments)
            .map(|s| -self.bandwidth_hz / 2.0 + (s as f64 - 0.5) * w)
            .collect()
    }

    pub fn noise_psd_w_per_hz(&self) -> f64 {
        dbm_to_w(self.noise_psd_dbm_per_hz)
    }
}

pub fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Capacity from the per-segment channel power gains `|H(f_s)|^2`. The
/// received power is shared equally across segments, so segment `s` carries
/// `P_s = |H(f_s)|^2 / S` against noise `N0 B / S`.
pub fn capacity_from_gains(gains: &[f64], cfg: &CapacityConfig) -> Result<f64> {
    cfg.validate()?;
    if gains.len() != cfg.segments {
        return Err(Error::Shape(format!(
            "{} gains for {} segments",
            gains.len(),
            cfg.segments
        )));
    }
    let s = cfg.segments as f64;
    let seg_bw = cfg.bandwidth_hz / s;
    let noise = cfg.noise_psd_w_per_hz() * seg_bw;
    Ok(seg_bw * gains.iter().map(|&g| (1.0 + (g / s) / noise).log2()).sum::<f64>())
}

/// Per-segment gains of a seeded random-phase realization.
pub fn segment_gains(paths: &MultipathSet, cfg: &CapacityConfig) -> Vec<f64> {
    let cir = synthesize_cir(paths, cfg.seed);
    cfg.segment_frequencies()
        .into_iter()
        .map(|f| cir.frequency_response(f).norm_sqr())
        .collect()
}

/// Shannon capacity in bit/s of one multipath set.
pub fn channel_capacity(paths: &MultipathSet, cfg: &CapacityConfig) -> Result<f64> {
    cfg.validate()?;
    capacity_from_gains(&segment_gains(paths, cfg), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(delays: &[f64], powers: &[f64]) -> PdpEntry {
        PdpEntry {
            delay_s: delays.to_vec(),
            power_w: powers.to_vec(),
        }
    }

    fn set(powers: &[f64], delays: &[f64], total: f64) -> MultipathSet {
        let mut m = MultipathSet::empty(6);
        for (i, (&p, &d)) in powers.iter().zip(delays).enumerate() {
            m.power_ratio[i] = p;
            m.delay_s[i] = d;
            m.valid[i] = true;
        }
        m.n_paths = powers.len();
        m.total_power_w = total;
        m
    }

    #[test]
    fn pdp_masks_and_scales() {
        let mut m = set(&[0.75, 0.25], &[10e-9, 30e-9], 2e-9);
        m.power_ratio[4] = 0.9; // padded, ignored
        let e = pdp(&m);
        assert_eq!(e.delay_s, vec![10e-9, 30e-9]);
        for (got, want) in e.power_w.iter().zip([1.5e-9, 0.5e-9]) {
            assert!((got - want).abs() < 1e-24);
        }
        assert!((e.total_power() - 2e-9).abs() < 1e-24);
    }

    #[test]
    fn delay_spread_hand_cases() {
        assert_eq!(rms_delay_spread(&entry(&[40e-9], &[1.0])).unwrap(), 0.0);
        let two = rms_delay_spread(&entry(&[0.0, 100e-9], &[1.0, 1.0])).unwrap();
        assert!((two - 50e-9).abs() < 1e-12 * 50e-9 + 1e-24);
        let e = entry(&[0.0, 100e-9], &[0.9, 0.1]);
        assert!((mean_delay(&e).unwrap() - 10e-9).abs() < 1e-21);
        assert!((rms_delay_spread(&e).unwrap() - 30e-9).abs() < 1e-20);
        assert!(matches!(
            rms_delay_spread(&entry(&[1.0], &[0.0])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn fcf_cases() {
        let single = entry(&[37e-9], &[2.0]);
        for v in fcf_normalized(&single, &[0.0, 1e6, 7.3e6]).unwrap() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let tau = 50e-9;
        let two = entry(&[0.0, tau], &[1.0, 1.0]);
        let x = fcf(&two, &[0.0, 1.0 / (2.0 * tau)]);
        assert_eq!(x[0].re, 2.0);
        assert!(x[1].norm() < 1e-9 * 2.0);
    }

    #[test]
    fn capacity_cases() {
        let cfg = CapacityConfig::default();
        let c = capacity_from_gains(&vec![1e-10; 128], &cfg).unwrap();
        let n0b = dbm_to_w(-174.0) * 20e6;
        assert!((n0b - 7.96e-14).abs() < 0.01e-14);
        assert!((1e-10 / n0b - 1256.0).abs() < 1.0);
        assert!((c - 2.06e8).abs() < 0.01e8);

        for s in [1, 7, 128] {
            let cfg = CapacityConfig {
                segments: s,
                seed: 3,
                ..Default::default()
            };
            let m = set(&[1.0], &[123e-9], 3e-11);
            let exact = 20e6 * (1.0 + 3e-11 / n0b).log2();
            let got = channel_capacity(&m, &cfg).unwrap();
            assert!((got - exact).abs() <= 1e-9 * exact);
        }
    }

    #[test]
    fn cir_magnitudes_and_determinism() {
        let m = set(&[0.5, 0.3, 0.2], &[1e-8, 2e-8, 3e-8], 4.0);
        let a = synthesize_cir(&m, 11);
        assert_eq!(a, synthesize_cir(&m, 11));
        for (h, p) in a.taps.iter().zip(pdp(&m).power_w) {
            assert!((h.norm_sqr() - p).abs() < 1e-12 * p);
        }
        assert_ne!(a, synthesize_cir(&m, 12));
    }

    proptest! {
        #[test]
        fn fcf_bounded_by_zero_lag(p in proptest::collection::vec(0.01f64..5.0, 1..6), df in -1e8f64..1e8) {
            let delays: Vec<f64> = (0..p.len()).map(|i| 17e-9 * i as f64 + 3e-9).collect();
            let e = entry(&delays, &p);
            let v = fcf_normalized(&e, &[df]).unwrap()[0];
            prop_assert!(v <= 1.0 + 1e-12);
        }

        #[test]
        fn spread_ignores_scale_and_shift(p in proptest::collection::vec(0.01f64..5.0, 1..6), k in 0.1f64..10.0, shift in 0.0f64..1e-6) {
            let delays: Vec<f64> = (0..p.len()).map(|i| 23e-9 * i as f64).collect();
            let base = rms_delay_spread(&entry(&delays, &p)).unwrap();
            let scaled: Vec<f64> = p.iter().map(|x| x * k).collect();
            let shifted: Vec<f64> = delays.iter().map(|d| d + shift).collect();
            let other = rms_delay_spread(&entry(&shifted, &scaled)).unwrap();
            prop_assert!((base - other).abs() <= 1e-6 * base.max(1e-12));
        }

        #[test]
        fn capacity_monotone_in_gain(g in proptest::collection::vec(0.0f64..1e-9, 8), i in 0usize..8, bump in 0.0f64..1e-9) {
            let cfg = CapacityConfig { segments: 8, ..Default::default() };
            let a = capacity_from_gains(&g, &cfg).unwrap();
            let mut h = g.clone();
            h[i] += bump;
            prop_assert!(capacity_from_gains(&h, &cfg).unwrap() >= a);
        }
    }
}
