//! Dataset layout on disk:
//!
//! ```text
//! manifest.json
//! snapshots/NNNNNN/{tx,rx}_{depth,albedo,lidar,radar}.arr
//! snapshots/NNNNNN/paths.csv
//! snapshots/NNNNNN/prompt.json
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::derive_seed;
use super::scene::{build_scene, Scene};
use super::sensors::{render_sensors, SensorFrame};
use super::trace::{trace_multipath, MultipathSet};
use crate::arr::{self, DType};
use crate::error::{Error, Result};
use crate::prompt::PropagationPrompt;

pub const FORMAT_VERSION: u32 = 1;

/// Snapshot indices per split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Contiguous 3:1:1 blocks in snapshot order.
    pub fn contiguous(n: usize) -> Self {
        let (tr, va, _) = split_sizes(n);
        Self {
            train: (0..tr).collect(),
            val: (tr..tr + va).collect(),
            test: (tr + va..n).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&[usize]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Sizes of the (train, val, test) blocks for `n` snapshots.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = n / 5;
    let test = n / 5;
    (n - val - test, val, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub snapshot_count: usize,
    pub config: ScenarioConfig,
    pub splits: Splits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub index: usize,
    pub tx: SensorFrame,
    pub rx: SensorFrame,
    pub paths: MultipathSet,
    pub prompt: PropagationPrompt,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub snapshots: Vec<Snapshot>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<Vec<&Snapshot>> {
        Ok(self
            .manifest
            .splits
            .get(name)?
            .iter()
            .map(|&i| &self.snapshots[i])
            .collect())
    }
}

fn prompt_for(scene: &Scene, config: &ScenarioConfig) -> PropagationPrompt {
    let d = scene.rx_pose.position - scene.tx_pose.position;
    let dist = d.norm();
    PropagationPrompt {
        carrier_frequency_hz: config.band.carrier_frequency_hz,
        bandwidth_hz: config.band.bandwidth_hz,
        distance_m: dist,
        azimuth_deg: d.y.atan2(d.x).to_degrees(),
        elevation_deg: (d.z / dist).asin().to_degrees(),
    }
}

/// Computes one snapshot in memory.
pub fn simulate_snapshot(base: &Scene, config: &ScenarioConfig, index: usize) -> Result<Snapshot> {
    let scene = base.advanced(index as f64 * config.snapshot_interval_s);
    let paths = trace_multipath(&scene, &config.band, &config.trace)?;
    let tx = render_sensors(
        &scene,
        &scene.tx_pose,
        &config.sensors,
        derive_seed(config.seed, 2 * index as u64),
    )?;
    let rx = render_sensors(
        &scene,
        &scene.rx_pose,
        &config.sensors,
        derive_seed(config.seed, 2 * index as u64 + 1),
    )?;
    Ok(Snapshot {
        index,
        tx,
        rx,
        paths,
        prompt: prompt_for(&scene, config),
    })
}

pub fn write_paths_csv(paths: &MultipathSet) -> String {
    let mut out = String::from("index,power_ratio,delay_ns,valid,los_present,total_power_w\n");
    for i in 0..paths.n_max() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            i,
            paths.power_ratio[i],
            paths.delay_s[i] * 1e9,
            u8::from(paths.valid[i]),
            u8::from(paths.los_present),
            paths.total_power_w
        )
        .expect("write to string");
    }
    out
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Parses `paths.csv`. Rows may appear in any order; `index` places them.
pub fn read_paths_csv(text: &str) -> Result<MultipathSet> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Format("empty paths.csv".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let expected = [
        "index",
        "power_ratio",
        "delay_ns",
        "valid",
        "los_present",
        "total_power_w",
    ];
    if cols != expected {
        return Err(Error::Format(format!("unexpected paths.csv header {header:?}")));
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Format(format!("paths.csv row {}: {line:?}", ln + 1));
        if f.len() != 6 {
            return Err(bad());
        }
        let index: usize = f[0].parse().map_err(|_| bad())?;
        let ratio: f64 = f[1].parse().map_err(|_| bad())?;
        let delay_ns: f64 = f[2].parse().map_err(|_| bad())?;
        let valid = parse_bool(f[3]).ok_or_else(bad)?;
        let los = parse_bool(f[4]).ok_or_else(bad)?;
        let total: f64 = f[5].parse().map_err(|_| bad())?;
        rows.push((index, ratio, delay_ns, valid, los, total));
    }
    let n = rows.len();
    let mut set = MultipathSet::empty(n);
    for &(index, ratio, delay_ns, valid, los, total) in &rows {
        if index >= n {
            return Err(Error::Format(format!("paths.csv index {index} out of range")));
        }
        set.power_ratio[index] = ratio;
        set.delay_s[index] = delay_ns * 1e-9;
        set.valid[index] = valid;
        set.los_present = los;
        set.total_power_w = total;
    }
    set.n_paths = set.valid.iter().filter(|&&v| v).count();
    Ok(set)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub(crate) fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if non_empty {
            if !force {
                return Err(Error::Refusal(dir.to_path_buf()));
            }
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_frame(dir: &Path, view: &str, frame: &SensorFrame) -> Result<()> {
    let items: [(&str, &Array2<f64>); 4] = [
        ("depth", &frame.depth),
        ("albedo", &frame.albedo),
        ("lidar", &frame.lidar),
        ("radar", &frame.radar),
    ];
    for (name, a) in items {
        arr::write(
            &dir.join(format!("{view}_{name}.arr")),
            &a.clone().into_dyn(),
            DType::F32,
        )?;
    }
    Ok(())
}

fn read_frame(dir: &Path, view: &str) -> Result<SensorFrame> {
    let load = |name: &str| -> Result<Array2<f64>> {
        let path = dir.join(format!("{view}_{name}.arr"));
        arr::read(&path)?
            .into_dimensionality()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    };
    Ok(SensorFrame {
        depth: load("depth")?,
        albedo: load("albedo")?,
        lidar: load("lidar")?,
        radar: load("radar")?,
    })
}

fn snapshot_dir(root: &Path, index: usize) -> PathBuf {
    root.join("snapshots").join(format!("{index:06}"))
}

/// Simulates `config.snapshots` snapshots from `config.seed` and writes them under `out_dir`.
///
/// Output bytes depend only on the config; snapshots are computed in parallel
/// but each one draws from its own `(seed, index)` stream.
pub fn generate_dataset(config: &ScenarioConfig, out_dir: &Path, force: bool) -> Result<DatasetManifest> {
    config.validate()?;
    let base = build_scene(config, config.seed)?;
    prepare_out_dir(out_dir, force)?;
    (0..config.snapshots).into_par_iter().try_for_each(|i| -> Result<()> {
        let snap = simulate_snapshot(&base, config, i)?;
        let dir = snapshot_dir(out_dir, i);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_frame(&dir, "tx", &snap.tx)?;
        write_frame(&dir, "rx", &snap.rx)?;
        let csv = dir.join("paths.csv");
        fs::write(&csv, write_paths_csv(&snap.paths)).map_err(|e| Error::io(&csv, e))?;
        write_json(&dir.join("prompt.json"), &snap.prompt)
    })?;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        seed: config.seed,
        snapshot_count: config.snapshots,
        config: config.clone(),
        splits: Splits::contiguous(config.snapshots),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "dataset format version {} is not {FORMAT_VERSION}",
            manifest.format_version
        )));
    }
    let snapshots = (0..manifest.snapshot_count)
        .into_par_iter()
        .map(|i| -> Result<Snapshot> {
            let sd = snapshot_dir(dir, i);
            let csv = sd.join("paths.csv");
            let text = fs::read_to_string(&csv).map_err(|e| Error::io(&csv, e))?;
            Ok(Snapshot {
                index: i,
                tx: read_frame(&sd, "tx")?,
                rx: read_frame(&sd, "rx")?,
                paths: read_paths_csv(&text)?,
                prompt: read_json(&sd.join("prompt.json"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        dir: dir.to_path_buf(),
        manifest,
        snapshots,
    })
}
