mod common;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use som_multipath::chanstats::{self, capacity_from_gains, dbm_to_w, CapacityConfig, PdpEntry};
use som_multipath::geometry::{Aabb, Vec3};
use som_multipath::scenegen::{
    enumerate_paths, trace_multipath, BandConfig, BoxKind, MultipathSet, Scene, SceneBox, TraceConfig, SPEED_OF_LIGHT,
};

use common::{brute_force_paths, ks_uniform, random_scene};

#[test]
fn free_space_link_matches_closed_form() {
    for (band, d) in [(BandConfig::MMWAVE, 37.5), (BandConfig::SUB6, 212.25)] {
        let scene = Scene::new(vec![], Vec3::new(1.0, 2.0, 3.0), Vec3::new(1.0 + d, 2.0, 3.0)).unwrap();
        let cfg = TraceConfig {
            max_order: 0,
            tx_power_w: 2.5,
            ..TraceConfig::default()
        };
        let set = trace_multipath(&scene, &band, &cfg).unwrap();
        let want_delay = d / SPEED_OF_LIGHT;
        let lambda = SPEED_OF_LIGHT / band.carrier_frequency_hz;
        let want_power = 2.5 * (lambda / (4.0 * std::f64::consts::PI * d)).powi(2);
        assert!((set.delay_s[0] - want_delay).abs() <= 1e-9 * want_delay);
        assert!((set.total_power_w - want_power).abs() <= 1e-9 * want_power);
    }
}

#[test]
fn mirror_case() {
    let wall = SceneBox::new(
        Aabb::new(Vec3::new(-50.0, 5.0, 0.0), Vec3::new(50.0, 7.0, 30.0)),
        Vec3::zeros(),
        BoxKind::Building,
    );
    let scene = Scene::new(vec![wall], Vec3::new(0.0, 0.0, 1.5), Vec3::new(10.0, 0.0, 1.5)).unwrap();
    let cfg = TraceConfig {
        max_order: 1,
        ..TraceConfig::default()
    };
    let p = enumerate_paths(&scene, &BandConfig::MMWAVE, &cfg)
        .into_iter()
        .find(|p| p.bounces() == 1 && p.vertices[1].y == 5.0)
        .expect("wall reflection");
    assert!((p.length_m - 14.1421356237).abs() < 1e-9);
    assert!((p.delay_s * 1e9 - 47.17).abs() < 5e-3);
}

#[test]
fn tracer_matches_brute_force_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let band = BandConfig::MMWAVE;
    let cfg = TraceConfig::default();
    let mut second_order = 0;
    for case in 0..300 {
        let scene = random_scene(&mut rng, 3);
        let mut got: Vec<_> = enumerate_paths(&scene, &band, &cfg)
            .into_iter()
            .map(|p| (p.facets, p.length_m, p.power_w))
            .collect();
        let mut want = brute_force_paths(&scene, &band, &cfg);
        got.sort_by(|a, b| a.0.cmp(&b.0));
        want.sort_by(|a, b| a.0.cmp(&b.0));
        let keys = |v: &[(Vec<usize>, f64, f64)]| v.iter().map(|p| p.0.clone()).collect::<Vec<_>>();
        assert_eq!(keys(&got), keys(&want), "case {case}");
        second_order += want.iter().filter(|p| p.0.len() == 2).count();
        for (g, w) in got.iter().zip(&want) {
            assert!((g.1 - w.1).abs() <= 1e-9 * w.1, "case {case} length");
            assert!((g.2 - w.2).abs() <= 1e-9 * w.2, "case {case} power");
        }
    }
    assert!(second_order > 30, "only {second_order} double bounces exercised");
}

#[test]
fn kept_set_is_strongest_and_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let scene = random_scene(&mut rng, 3);
        let set = trace_multipath(&scene, &BandConfig::SUB6, &TraceConfig::default()).unwrap();
        if set.n_paths == 0 {
            continue;
        }
        let sum: f64 = set.power_ratio.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(set.power_ratio.windows(2).all(|w| w[0] >= w[1]));
    }
}

/// Brute-force DFT of a PDP sampled on an oversampled delay grid.
fn dft_on_grid(bins: &[f64], dt: f64, df: f64) -> Complex64 {
    bins.iter()
        .enumerate()
        .map(|(k, &p)| Complex64::from_polar(p, -2.0 * std::f64::consts::PI * df * k as f64 * dt))
        .sum()
}

#[test]
fn fcf_matches_brute_force_dft() {
    let dt = 0.25e-9;
    let taps = [(12usize, 0.5), (40, 0.3), (41, 0.15), (400, 0.05)];
    let mut bins = vec![0.0; 512];
    for &(k, p) in &taps {
        bins[k] = p;
    }
    let entry = PdpEntry {
        delay_s: taps.iter().map(|t| t.0 as f64 * dt).collect(),
        power_w: taps.iter().map(|t| t.1).collect(),
    };
    let grid: Vec<f64> = (0..64).map(|i| i as f64 * 3.7e6).collect();
    for (x, &df) in chanstats::fcf(&entry, &grid).iter().zip(&grid) {
        let want = dft_on_grid(&bins, dt, df);
        assert!((x - want).norm() <= 1e-9 * want.norm().max(1e-300));
    }
}

#[test]
fn two_path_fcf_null() {
    let tau = 80e-9;
    let entry = PdpEntry {
        delay_s: vec![10e-9, 10e-9 + tau],
        power_w: vec![1.0, 1.0],
    };
    let v = chanstats::fcf(&entry, &[1.0 / (2.0 * tau)])[0];
    assert!(v.norm() <= 1e-9 * 2.0);
}

#[test]
fn random_phases_are_uniform() {
    let mut set = MultipathSet::empty(6);
    set.valid[0] = true;
    set.power_ratio[0] = 1.0;
    set.total_power_w = 1.0;
    set.n_paths = 1;
    let u: Vec<f64> = (0..10_000u64)
        .map(|s| {
            chanstats::synthesize_cir(&set, s).taps[0]
                .arg()
                .rem_euclid(2.0 * std::f64::consts::PI)
                / (2.0 * std::f64::consts::PI)
        })
        .collect();
    assert!(ks_uniform(u) < 0.02);
}

#[test]
fn flat_channel_reduces_to_shannon() {
    let n0 = dbm_to_w(-174.0);
    for (bw, s, p) in [(20e6, 128, 1e-10), (2e9, 64, 3e-9), (5e6, 1, 7e-13)] {
        let cfg = CapacityConfig {
            bandwidth_hz: bw,
            segments: s,
            ..CapacityConfig::default()
        };
        let mut set = MultipathSet::empty(6);
        set.valid[0] = true;
        set.power_ratio[0] = 1.0;
        set.delay_s[0] = 55e-9;
        set.total_power_w = p;
        set.n_paths = 1;
        let want = bw * (1.0 + p / (n0 * bw)).log2();
        let got = chanstats::channel_capacity(&set, &cfg).unwrap();
        assert!((got - want).abs() <= 1e-9 * want);
    }
    let c = capacity_from_gains(&[1e-10; 128], &CapacityConfig::default()).unwrap();
    assert!((c / 2.06e8 - 1.0).abs() < 0.005);
}
