//! The full network: encoders, fusion, backbone and heads wired together,
//! plus weight-store persistence.

use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arr::{self, DType};
use crate::backbone::{self, BackboneConfig, BASE_PREFIX, LORA_PREFIX};
use crate::encoders::{
    self, image_forward, lidar_forward, patch_tokens, radar_forward, EncoderConfig, LidarPlan, Modality, RadarInput,
    SaLevel,
};
use crate::error::{Error, Result};
use crate::evalharness::AblationVariant;
use crate::fusion::{self, EcaConfig};
use crate::heads::{self, heads_forward, loss_forward, HeadConfig, HeadVars, LossConfig, Target, TaskOutputs};
use crate::nn::{Graph, Mat, ParamStore, Segment, Var};
use crate::scenegen::{MultipathSet, Snapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub eca: EcaConfig,
    pub backbone: BackboneConfig,
    pub heads: HeadConfig,
    pub loss: LossConfig,
    pub variant: AblationVariant,
    pub init_seed: u64,
    /// Checkpoint directory whose `backbone.*` weights replace the random base.
    pub backbone_init: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            eca: EcaConfig::default(),
            backbone: BackboneConfig::default(),
            heads: HeadConfig::default(),
            loss: LossConfig::default(),
            variant: AblationVariant::Full,
            init_seed: 0,
            backbone_init: None,
        }
    }
}

impl ModelConfig {
    /// A narrow configuration that trains quickly on one CPU core.
    pub fn compact() -> Self {
        Self {
            encoder: EncoderConfig {
                image_dim: 32,
                image_heads: 2,
                lidar_dim: 32,
                lidar_levels: vec![
                    SaLevel {
                        centroids: 32,
                        radius_m: 10.0,
                        nsample: 8,
                        width: 32,
                    },
                    SaLevel {
                        centroids: 8,
                        radius_m: 30.0,
                        nsample: 8,
                        width: 32,
                    },
                ],
                radar_dim: 32,
                radar_hidden: 32,
                ..EncoderConfig::default()
            },
            backbone: BackboneConfig {
                d_model: 64,
                n_layers: 2,
                n_heads: 4,
                ffn_width: 128,
                ..BackboneConfig::default()
            },
            heads: HeadConfig {
                hidden: 128,
                ..HeadConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn view_width(&self) -> usize {
        self.encoder.image_dim + self.encoder.lidar_dim + self.encoder.radar_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.eca.validate()?;
        self.backbone.validate()?;
        self.heads.validate()?;
        self.loss.validate(self.heads.n_paths)
    }
}

fn null_name(m: Modality) -> &'static str {
    match m {
        Modality::Image => "null.image",
        Modality::Lidar => "null.lidar",
        Modality::Radar => "null.radar",
    }
}

const MODALITIES: [Modality; 3] = [Modality::Image, Modality::Lidar, Modality::Radar];

/// Weight-independent inputs of one snapshot, cached across epochs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub index: usize,
    patches: [Mat; 2],
    lidar: [LidarPlan; 2],
    radar: [RadarInput; 2],
    tokens: Vec<usize>,
    pub target: Target,
    pub paths: MultipathSet,
}

pub fn prepare(snapshot: &Snapshot, config: &ModelConfig) -> Result<Prepared> {
    let enc = &config.encoder;
    let frames = [&snapshot.tx, &snapshot.rx];
    let patches = [
        patch_tokens(&frames[0].depth, &frames[0].albedo, enc)?,
        patch_tokens(&frames[1].depth, &frames[1].albedo, enc)?,
    ];
    let lidar = [
        LidarPlan::new(&frames[0].lidar, enc)?,
        LidarPlan::new(&frames[1].lidar, enc)?,
    ];
    let radar = [
        RadarInput::new(&frames[0].radar, enc)?,
        RadarInput::new(&frames[1].radar, enc)?,
    ];
    if snapshot.paths.n_max() != config.heads.n_paths {
        return Err(Error::Compatibility(format!(
            "dataset keeps {} paths, model predicts {}",
            snapshot.paths.n_max(),
            config.heads.n_paths
        )));
    }
    Ok(Prepared {
        index: snapshot.index,
        patches,
        lidar,
        radar,
        tokens: backbone::prompt_tokens(&snapshot.prompt)?,
        target: Target::from_paths(&snapshot.paths, config.loss.tau_max_s),
        paths: snapshot.paths.clone(),
    })
}

/// Prepares every snapshot in parallel, preserving order.
pub fn prepare_all(snapshots: &[&Snapshot], config: &ModelConfig) -> Result<Vec<Prepared>> {
    use rayon::prelude::*;
    snapshots.par_iter().map(|s| prepare(s, config)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub lora_active: bool,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.init_seed;
        let variant = config.variant;
        let mut store = ParamStore::new();
        let enc = &config.encoder;
        let mut full = ParamStore::new();
        encoders::init_encoders(&mut full, seed, enc);
        for m in MODALITIES {
            let prefix = match m {
                Modality::Image => "enc.image.",
                Modality::Lidar => "enc.lidar.",
                Modality::Radar => "enc.radar.",
            };
            if variant.uses(m) {
                for (name, p) in full.iter().filter(|(n, _)| n.starts_with(prefix)) {
                    store.insert(name.clone(), p.value.clone(), p.trainable);
                }
            } else {
                let width = match m {
                    Modality::Image => enc.image_dim,
                    Modality::Lidar => enc.lidar_dim,
                    Modality::Radar => enc.radar_dim,
                };
                store.normal(seed, null_name(m), 1, width, 0.02, true);
            }
        }
        fusion::init_fusion(
            &mut store,
            seed,
            &config.eca,
            config.view_width(),
            config.backbone.d_model,
        )?;
        if variant.uses_backbone() {
            backbone::init_backbone(&mut store, seed, &config.backbone)?;
            if let (Some(dir), false) = (&config.backbone_init, variant == AblationVariant::NoPretrain) {
                load_prefix(&mut store, dir, BASE_PREFIX)?;
            }
        }
        heads::init_heads(&mut store, seed, config.backbone.d_model, &config.heads);
        Ok(Self {
            config,
            store,
            lora_active: false,
        })
    }

    /// Makes the adapters part of the forward pass and trainable. No-op for
    /// variants without adapters.
    pub fn activate_lora(&mut self) {
        if self.config.variant.allows_lora() {
            self.store.set_trainable(LORA_PREFIX, true);
            self.lora_active = true;
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.store.trainable_count()
    }

    /// Output nodes for a batch. Dropout is applied when `rng` is given.
    pub fn forward(&self, g: &mut Graph, batch: &[&Prepared], rng: Option<&mut ChaCha8Rng>) -> Result<HeadVars> {
        let n = batch.len();
        let cfg = &self.config;
        let variant = cfg.variant;
        let store = &self.store;
        let mut feats = [None; 3];
        for (slot, m) in MODALITIES.into_iter().enumerate() {
            let v = if variant.uses(m) {
                match m {
                    Modality::Image => {
                        let p: Vec<&Mat> = (0..2).flat_map(|v| batch.iter().map(move |b| &b.patches[v])).collect();
                        image_forward(g, store, &cfg.encoder, &p)
                    }
                    Modality::Lidar => {
                        let p: Vec<&LidarPlan> = (0..2).flat_map(|v| batch.iter().map(move |b| &b.lidar[v])).collect();
                        lidar_forward(g, store, &cfg.encoder, &p)
                    }
                    Modality::Radar => {
                        let p: Vec<&RadarInput> = (0..2).flat_map(|v| batch.iter().map(move |b| &b.radar[v])).collect();
                        radar_forward(g, store, &cfg.encoder, &p)
                    }
                }
            } else {
                let e = g.param(store, null_name(m));
                g.gather(e, &vec![0; 2 * n])
            };
            feats[slot] = Some(v);
        }
        let feats = feats.map(|f| f.expect("all modalities filled"));
        let tx_rows: Vec<usize> = (0..n).collect();
        let rx_rows: Vec<usize> = (n..2 * n).collect();
        let tx = feats.map(|f| g.gather(f, &tx_rows));
        let rx = feats.map(|f| g.gather(f, &rx_rows));
        let fused = fusion::fusion_forward(g, store, tx, rx);
        let (hidden, segs) = if variant.uses_backbone() {
            let tokens: Vec<Vec<usize>> = batch
                .iter()
                .map(|b| {
                    if variant.uses_prompt() {
                        b.tokens.clone()
                    } else {
                        Vec::new()
                    }
                })
                .collect();
            backbone::backbone_batch(g, store, &cfg.backbone, &tokens, fused, self.lora_active)?
        } else {
            (fused, Segment::packed(batch.iter().map(|_| 1)))
        };
        Ok(heads_forward(g, store, &cfg.heads, hidden, &segs, rng))
    }

    /// Forward pass plus the batch-mean loss node.
    pub fn loss(&self, g: &mut Graph, batch: &[&Prepared], rng: Option<&mut ChaCha8Rng>) -> Result<(HeadVars, Var)> {
        let heads = self.forward(g, batch, rng)?;
        let targets: Vec<Target> = batch.iter().map(|b| b.target.clone()).collect();
        let loss = loss_forward(g, &heads, &targets, &self.config.loss);
        Ok((heads, loss))
    }

    /// Evaluation-mode predictions.
    pub fn predict(&self, batch: &[&Prepared]) -> Result<Vec<TaskOutputs>> {
        let mut g = Graph::new();
        let heads = self.forward(&mut g, batch, None)?;
        Ok(heads.outputs(&g))
    }

    /// Writes `config.json` and one `.arr` file per weight.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::scenegen::write_json(&dir.join("config.json"), &self.config)?;
        for (name, p) in self.store.iter() {
            arr::write(
                &dir.join(format!("{name}.arr")),
                &p.value.clone().into_dyn(),
                DType::F64,
            )?;
        }
        Ok(())
    }

    /// Rebuilds the model from `config.json` and overwrites every weight
    /// from its `.arr` file. Adapters stay inactive.
    pub fn load(dir: &Path) -> Result<Self> {
        let config: ModelConfig = crate::scenegen::read_json(&dir.join("config.json"))?;
        let mut model = Model::new(config)?;
        let names: Vec<String> = model.store.iter().map(|(n, _)| n.clone()).collect();
        for name in names {
            let value = read_weight(dir, &name)?;
            let slot = model.store.get_mut(&name).expect("listed name");
            if value.dim() != slot.value.dim() {
                return Err(Error::Compatibility(format!(
                    "{name}: stored shape {:?}, expected {:?}",
                    value.dim(),
                    slot.value.dim()
                )));
            }
            slot.value = value;
        }
        Ok(model)
    }
}

fn read_weight(dir: &Path, name: &str) -> Result<Mat> {
    let path = dir.join(format!("{name}.arr"));
    if !path.exists() {
        return Err(Error::Compatibility(format!(
            "checkpoint {} has no weight {name}",
            dir.display()
        )));
    }
    arr::read(&path)?
        .into_dimensionality()
        .map_err(|_| Error::Compatibility(format!("{name} is not a matrix")))
}

/// Overwrites every weight whose name starts with `prefix` from `dir`.
pub fn load_prefix(store: &mut ParamStore, dir: &Path, prefix: &str) -> Result<()> {
    let names: Vec<String> = store
        .iter()
        .map(|(n, _)| n.clone())
        .filter(|n| n.starts_with(prefix))
        .collect();
    for name in names {
        let value = read_weight(dir, &name)?;
        let slot = store.get_mut(&name).expect("listed name");
        if value.dim() != slot.value.dim() {
            return Err(Error::Compatibility(format!(
                "{name}: shape {:?} vs {:?}",
                value.dim(),
                slot.value.dim()
            )));
        }
        slot.value = value;
    }
    Ok(())
}
