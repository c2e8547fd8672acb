//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use som_multipath::geometry::{Aabb, Vec3};
use som_multipath::model::{prepare_all, Model, ModelConfig, Prepared};
use som_multipath::scenegen::{
    generate_dataset, load_dataset, BandConfig, BoxKind, Dataset, Facet, ScenarioConfig, ScenarioKind, Scene, SceneBox,
    TraceConfig, Vtd, SPEED_OF_LIGHT,
};
use som_multipath::trainer::{batch_gradients, TrainConfig};

/// A path as (facet sequence, length, power).
pub type PathKey = (Vec<usize>, f64, f64);

fn plane(f: &Facet) -> (Vec3, Vec3) {
    let mut n = Vec3::zeros();
    n[f.axis] = f.sign;
    let mut q = Vec3::zeros();
    q[f.axis] = f.offset;
    (q, n)
}

fn reflect(p: &Vec3, f: &Facet) -> Vec3 {
    let (q, n) = plane(f);
    p - n * (2.0 * (p - q).dot(&n))
}

fn side(p: &Vec3, f: &Facet) -> f64 {
    let (q, n) = plane(f);
    (p - q).dot(&n)
}

/// Intersection of segment `a -> b` with the facet plane, strictly inside.
fn hit(a: &Vec3, b: &Vec3, f: &Facet) -> Option<Vec3> {
    let (q, n) = plane(f);
    let denom = (b - a).dot(&n);
    if denom == 0.0 {
        return None;
    }
    let t = (q - a).dot(&n) / denom;
    (t > 0.0 && t < 1.0).then(|| a + (b - a) * t)
}

fn on_facet(p: &Vec3, f: &Facet) -> bool {
    let others: Vec<usize> = (0..3).filter(|&i| i != f.axis).collect();
    others
        .iter()
        .enumerate()
        .all(|(k, &i)| p[i] >= f.lo[k] - 1e-9 && p[i] <= f.hi[k] + 1e-9)
}

/// Blocking by dense sampling of the open segment against strict interiors.
fn sampled_clear(scene: &Scene, a: &Vec3, b: &Vec3) -> bool {
    const N: usize = 4000;
    (1..N).all(|k| {
        let p = a + (b - a) * (k as f64 / N as f64);
        !scene
            .boxes
            .iter()
            .any(|bx| (0..3).all(|i| p[i] > bx.bounds.min[i] + 1e-7 && p[i] < bx.bounds.max[i] - 1e-7))
    })
}

fn finish(scene: &Scene, band: &BandConfig, cfg: &TraceConfig, verts: &[Vec3], facets: Vec<usize>) -> Option<PathKey> {
    if !verts.windows(2).all(|w| sampled_clear(scene, &w[0], &w[1])) {
        return None;
    }
    let len: f64 = verts.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let lambda = SPEED_OF_LIGHT / band.carrier_frequency_hz;
    let friis = (lambda / (4.0 * std::f64::consts::PI * len)).powi(2);
    let power = cfg.tx_power_w * friis * cfg.reflection_coefficient.powi(2 * facets.len() as i32);
    Some((facets, len, power))
}

/// Every ordered facet sequence of length up to two, checked without pruning.
pub fn brute_force_paths(scene: &Scene, band: &BandConfig, cfg: &TraceConfig) -> Vec<PathKey> {
    let tx = scene.tx_pose.position;
    let rx = scene.rx_pose.position;
    let facets = Facet::all(scene);
    let mut out = Vec::new();
    out.extend(finish(scene, band, cfg, &[tx, rx], vec![]));
    if cfg.max_order >= 1 {
        for (i, f) in facets.iter().enumerate() {
            if side(&tx, f) <= 0.0 || side(&rx, f) <= 0.0 {
                continue;
            }
            let Some(p) = hit(&reflect(&tx, f), &rx, f) else {
                continue;
            };
            if on_facet(&p, f) {
                out.extend(finish(scene, band, cfg, &[tx, p, rx], vec![i]));
            }
        }
    }
    if cfg.max_order >= 2 {
        for (i, f1) in facets.iter().enumerate() {
            for (j, f2) in facets.iter().enumerate() {
                if i == j || side(&tx, f1) <= 0.0 || side(&rx, f2) <= 0.0 {
                    continue;
                }
                let im1 = reflect(&tx, f1);
                let im2 = reflect(&im1, f2);
                let Some(p2) = hit(&im2, &rx, f2) else { continue };
                let Some(p1) = hit(&im1, &p2, f1) else { continue };
                if !on_facet(&p1, f1) || !on_facet(&p2, f2) || side(&p2, f1) <= 0.0 || side(&p1, f2) <= 0.0 {
                    continue;
                }
                out.extend(finish(scene, band, cfg, &[tx, p1, p2, rx], vec![i, j]));
            }
        }
    }
    out
}

/// Up to three random boxes with Tx and Rx placed outside all of them.
pub fn random_scene(rng: &mut ChaCha8Rng, max_boxes: usize) -> Scene {
    let n = rng.random_range(0..=max_boxes);
    let boxes: Vec<SceneBox> = (0..n)
        .map(|_| {
            let c = Vec3::new(rng.random_range(-30.0..30.0), rng.random_range(-20.0..20.0), 0.0);
            let h = Vec3::new(rng.random_range(1.0..8.0), rng.random_range(1.0..8.0), 0.0);
            let top = rng.random_range(2.0..25.0);
            SceneBox::new(
                Aabb::new(
                    Vec3::new(c.x - h.x, c.y - h.y, 0.0),
                    Vec3::new(c.x + h.x, c.y + h.y, top),
                ),
                Vec3::zeros(),
                BoxKind::Building,
            )
        })
        .collect();
    let outside = |rng: &mut ChaCha8Rng| loop {
        let p = Vec3::new(
            rng.random_range(-40.0..40.0),
            rng.random_range(-30.0..30.0),
            rng.random_range(0.5..8.0),
        );
        if !boxes
            .iter()
            .any(|b| (0..3).all(|i| p[i] >= b.bounds.min[i] - 0.5 && p[i] <= b.bounds.max[i] + 0.5))
        {
            return p;
        }
    };
    let tx = outside(rng);
    let rx = outside(rng);
    Scene::new(boxes, tx, rx).expect("valid random scene")
}

/// One-sample Kolmogorov-Smirnov statistic against U[0, 1).
pub fn ks_uniform(mut u: Vec<f64>) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub checked: usize,
    /// Checked entries whose analytic gradient exceeds 1e-9 in magnitude.
    pub nonzero: usize,
    pub max_rel: f64,
    pub worst: String,
    pub prefixes: Vec<String>,
}

/// Compares analytic gradients with central differences on `count` scalars
/// drawn from parameters matching each prefix group in turn.
pub fn finite_difference_check(
    model: &mut Model,
    batch: &[&Prepared],
    groups: &[&str],
    count: usize,
    seed: u64,
) -> GradCheck {
    let (_, grads) = batch_gradients(model, batch, None).expect("gradients");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = Vec::new();
    for (k, prefix) in groups.iter().enumerate() {
        let mut names: Vec<&String> = grads.keys().filter(|n| n.starts_with(prefix)).collect();
        assert!(!names.is_empty(), "no parameters under {prefix}");
        names.shuffle(&mut rng);
        let share = count / groups.len() + usize::from(k < count % groups.len());
        for i in 0..share {
            let name = names[i % names.len()].clone();
            let (r, c) = grads[&name].dim();
            picks.push((name, rng.random_range(0..r), rng.random_range(0..c)));
        }
    }
    let loss_at = |m: &Model| {
        let mut g = som_multipath::nn::Graph::new();
        let (_, l) = m.loss(&mut g, batch, None).expect("loss");
        g.scalar(l)
    };
    let mut out = GradCheck {
        checked: 0,
        nonzero: 0,
        max_rel: 0.0,
        worst: String::new(),
        prefixes: groups.iter().map(|s| s.to_string()).collect(),
    };
    for (name, r, c) in picks {
        let h = 1e-5;
        let orig = model.store.get(&name).unwrap().value[[r, c]];
        model.store.get_mut(&name).unwrap().value[[r, c]] = orig + h;
        let up = loss_at(model);
        model.store.get_mut(&name).unwrap().value[[r, c]] = orig - h;
        let down = loss_at(model);
        model.store.get_mut(&name).unwrap().value[[r, c]] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = grads[&name][[r, c]];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
        if rel > out.max_rel {
            out.max_rel = rel;
            out.worst = format!("{name}[{r},{c}] analytic {an:e} numeric {fd:e}");
        }
        out.checked += 1;
        out.nonzero += usize::from(an.abs() > 1e-9);
    }
    out
}

pub fn scenario(kind: ScenarioKind, vtd: Vtd, band: BandConfig, snapshots: usize, seed: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(kind, vtd, band);
    c.snapshots = snapshots;
    c.seed = seed;
    c
}

pub fn dataset(dir: &Path, snapshots: usize, seed: u64) -> Dataset {
    let cfg = scenario(ScenarioKind::Urban, Vtd::Low, BandConfig::MMWAVE, snapshots, seed);
    generate_dataset(&cfg, dir, true).expect("generate");
    load_dataset(dir).expect("load")
}

/// The smallest network used in integration tests.
pub fn tiny_model_config() -> ModelConfig {
    let mut c = ModelConfig::compact();
    c.encoder.image_dim = 8;
    c.encoder.lidar_dim = 8;
    c.encoder.radar_dim = 8;
    c.encoder.radar_hidden = 8;
    for l in &mut c.encoder.lidar_levels {
        l.width = 8;
        l.centroids = l.centroids.min(8);
        l.nsample = 4;
    }
    c.backbone.d_model = 16;
    c.backbone.n_heads = 2;
    c.backbone.ffn_width = 24;
    c.backbone.lora_rank = 2;
    c.heads.hidden = 16;
    c
}

/// Short staged schedule with a learning rate that moves a random-init model.
pub fn quick_train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        warmup_epochs: 1.0,
        lora_activation_epoch: 2.min(epochs.saturating_sub(1)),
        lr_max: 1e-3,
        lr_warmup_start: 1e-4,
        lr_min: 5e-5,
        cosine_period_epochs: epochs.max(2) as f64,
        seed,
        ..TrainConfig::default()
    }
}

pub fn prepared(ds: &Dataset, split: &str, config: &ModelConfig) -> Vec<Prepared> {
    prepare_all(&ds.split(split).expect("split"), config).expect("prepare")
}

/// Every file under `dir` keyed by relative path.
pub fn tree_bytes(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).expect("read dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).expect("read file"));
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Writes any serializable config as pretty JSON.
pub fn write_config(path: &Path, value: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}
