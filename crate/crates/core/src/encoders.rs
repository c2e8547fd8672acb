//! Per-modality feature extractors: a patch-attention image encoder, a
//! set-abstraction LiDAR encoder and an RCS-weighted dual-stream radar encoder.
//!
//! Every encoder runs batched on a [`Graph`]; the point-cloud encoders first
//! build weight-independent plans (canonical ordering, sampling, grouping)
//! that can be cached across epochs.

use std::cmp::Ordering;

use ndarray::{s, Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{attention_sublayer, init_attention, init_linear, init_mlp, linear, mlp, NORM_EPS};
use crate::nn::{Graph, Mat, ParamStore, Segment, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Lidar,
    Radar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Tx,
    Rx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeature {
    pub vector: Array1<f64>,
    pub modality: Modality,
    pub view: View,
}

/// One set-abstraction level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaLevel {
    /// Farthest-point samples kept (fewer when the input is smaller).
    pub centroids: usize,
    pub radius_m: f64,
    /// Nearest neighbours kept per group, centroid included.
    pub nsample: usize,
    /// Hidden width of the shared MLP; also its output width except on the last level.
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub image_patch_size: usize,
    pub image_dim: usize,
    pub image_heads: usize,
    pub image_layers: usize,
    /// Depth values are clipped to this and scaled into [0, 1].
    pub depth_scale_m: f64,
    pub lidar_dim: usize,
    pub lidar_levels: Vec<SaLevel>,
    pub radar_dim: usize,
    pub radar_hidden: usize,
    /// Point coordinates are divided by this before entering an MLP.
    pub point_scale_m: f64,
    pub doppler_scale_mps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_height: 36,
            image_width: 64,
            image_patch_size: 4,
            image_dim: 128,
            image_heads: 4,
            image_layers: 1,
            depth_scale_m: 200.0,
            lidar_dim: 128,
            lidar_levels: vec![
                SaLevel {
                    centroids: 64,
                    radius_m: 10.0,
                    nsample: 16,
                    width: 64,
                },
                SaLevel {
                    centroids: 16,
                    radius_m: 30.0,
                    nsample: 8,
                    width: 128,
                },
            ],
            radar_dim: 128,
            radar_hidden: 64,
            point_scale_m: 50.0,
            doppler_scale_mps: 30.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.image_patch_size;
        if p == 0 || !self.image_height.is_multiple_of(p) || !self.image_width.is_multiple_of(p) {
            return Err(Error::Config(format!(
                "image {}x{} is not divisible into {p}-pixel patches",
                self.image_width, self.image_height
            )));
        }
        if [self.image_dim, self.lidar_dim, self.radar_dim, self.radar_hidden].contains(&0) {
            return Err(Error::Config("feature widths must be positive".into()));
        }
        if self.image_heads == 0 || !self.image_dim.is_multiple_of(self.image_heads) {
            return Err(Error::Config("image_dim must be divisible by image_heads".into()));
        }
        if self.lidar_levels.is_empty() {
            return Err(Error::Config("at least one set-abstraction level is required".into()));
        }
        for l in &self.lidar_levels {
            if l.centroids == 0 || l.nsample == 0 || l.width == 0 || !(l.radius_m > 0.0) {
                return Err(Error::Config(format!("invalid set-abstraction level {l:?}")));
            }
        }
        if !(self.depth_scale_m > 0.0 && self.point_scale_m > 0.0 && self.doppler_scale_mps > 0.0) {
            return Err(Error::Config("scales must be positive".into()));
        }
        Ok(())
    }

    pub fn patch_count(&self) -> usize {
        (self.image_height / self.image_patch_size) * (self.image_width / self.image_patch_size)
    }

    fn patch_len(&self) -> usize {
        2 * self.image_patch_size * self.image_patch_size
    }
}

pub fn init_encoders(store: &mut ParamStore, seed: u64, cfg: &EncoderConfig) {
    let d = cfg.image_dim;
    init_linear(store, seed, "enc.image.patch", cfg.patch_len(), d, true, true);
    store.normal(seed, "enc.image.pos", cfg.patch_count(), d, 0.02, true);
    for l in 0..cfg.image_layers {
        init_attention(store, seed, &format!("enc.image.block{l}.attn"), d, true);
        store.ones(&format!("enc.image.block{l}.ffn.norm"), 1, d, true);
        init_linear(
            store,
            seed,
            &format!("enc.image.block{l}.ffn.fc1"),
            d,
            2 * d,
            true,
            true,
        );
        init_linear(
            store,
            seed,
            &format!("enc.image.block{l}.ffn.fc2"),
            2 * d,
            d,
            true,
            true,
        );
    }

    let mut d_in = 4;
    for (i, level) in cfg.lidar_levels.iter().enumerate() {
        let last = i + 1 == cfg.lidar_levels.len();
        let d_out = if last { cfg.lidar_dim } else { level.width };
        init_mlp(store, seed, &format!("enc.lidar.sa{i}"), d_in, level.width, d_out);
        d_in = 3 + d_out;
    }
    store.normal(seed, "enc.lidar.empty", 1, cfg.lidar_dim, 0.02, true);

    let r = cfg.radar_dim;
    init_mlp(store, seed, "enc.radar.point", 5, cfg.radar_hidden, r);
    store.normal(seed, "enc.radar.query", 1, r, 0.1, true);
    init_linear(store, seed, "enc.radar.k", r, r, false, true);
    init_linear(store, seed, "enc.radar.v", r, r, false, true);
    init_linear(store, seed, "enc.radar.out", 2 * r, r, true, true);
    store.normal(seed, "enc.radar.empty", 1, r, 0.02, true);
}

/// Non-overlapping patches as rows: depth values then albedo values of each
/// patch, patches in row-major grid order.
pub fn patch_tokens(depth: &Mat, albedo: &Mat, cfg: &EncoderConfig) -> Result<Mat> {
    let expect = (cfg.image_height, cfg.image_width);
    if depth.dim() != expect || albedo.dim() != expect {
        return Err(Error::Shape(format!(
            "image grids {:?}/{:?} do not match configured {expect:?}",
            depth.dim(),
            albedo.dim()
        )));
    }
    let p = cfg.image_patch_size;
    if !cfg.image_height.is_multiple_of(p) || !cfg.image_width.is_multiple_of(p) {
        return Err(Error::Shape(format!(
            "grid {}x{} is not divisible by patch size {p}",
            cfg.image_width, cfg.image_height
        )));
    }
    let (gh, gw) = (cfg.image_height / p, cfg.image_width / p);
    let scale = cfg.depth_scale_m;
    let mut out = Mat::zeros((gh * gw, 2 * p * p));
    for pr in 0..gh {
        for pc in 0..gw {
            let mut row = out.row_mut(pr * gw + pc);
            let rows = pr * p..(pr + 1) * p;
            let cols = pc * p..(pc + 1) * p;
            let d = depth.slice(s![rows.clone(), cols.clone()]);
            let a = albedo.slice(s![rows, cols]);
            for (k, v) in d.iter().enumerate() {
                row[k] = v.min(scale) / scale;
            }
            for (k, v) in a.iter().enumerate() {
                row[p * p + k] = *v;
            }
        }
    }
    Ok(out)
}

/// Batched image encoder: one row of width `image_dim` per patch matrix.
pub fn image_forward(g: &mut Graph, store: &ParamStore, cfg: &EncoderConfig, patches: &[&Mat]) -> Var {
    let n_patch = cfg.patch_count();
    let views: Vec<_> = patches.iter().map(|p| p.view()).collect();
    let stacked = ndarray::concatenate(Axis(0), &views).expect("patch widths agree");
    let x = g.constant(stacked);
    let x = linear(g, store, "enc.image.patch", x);
    let pos = g.param(store, "enc.image.pos");
    let index: Vec<usize> = (0..patches.len()).flat_map(|_| 0..n_patch).collect();
    let pos = g.gather(pos, &index);
    let mut x = g.add(x, pos);
    let segs = Segment::packed(patches.iter().map(|_| n_patch));
    for l in 0..cfg.image_layers {
        let prefix = format!("enc.image.block{l}");
        x = attention_sublayer(g, store, &format!("{prefix}.attn"), x, &segs, cfg.image_heads, false);
        let gain = g.param(store, &format!("{prefix}.ffn.norm"));
        let h = g.rms_norm(x, gain, NORM_EPS);
        let h = linear(g, store, &format!("{prefix}.ffn.fc1"), h);
        let h = g.gelu(h);
        let h = linear(g, store, &format!("{prefix}.ffn.fc2"), h);
        x = g.add(x, h);
    }
    g.segment_mean(x, &segs)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Rows sorted lexicographically with exact duplicates removed.
fn canonical_rows(points: &Mat) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = points.rows().into_iter().map(|r| r.to_vec()).collect();
    rows.sort_by(|a, b| lex_cmp(a, b));
    rows.dedup_by(|a, b| lex_cmp(a, b).is_eq());
    rows
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).take(3).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Farthest-point sampling over canonically ordered points. Starts at the
/// point of largest norm; ties go to the earliest (lexicographically smallest).
pub fn farthest_point_sample(points: &[Vec<f64>], count: usize) -> Vec<usize> {
    if points.is_empty() || count == 0 {
        return Vec::new();
    }
    let origin = [0.0; 3];
    let mut start = 0;
    for (i, p) in points.iter().enumerate() {
        if dist2(p, &origin) > dist2(&points[start], &origin) {
            start = i;
        }
    }
    let mut chosen = vec![start];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &points[start])).collect();
    while chosen.len() < count.min(points.len()) {
        let mut next = 0;
        for i in 1..points.len() {
            if nearest[i] > nearest[next] {
                next = i;
            }
        }
        if nearest[next] == 0.0 {
            break;
        }
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(p, &points[next]));
        }
    }
    chosen
}

#[derive(Debug, Clone, PartialEq)]
struct LevelPlan {
    /// Per grouped row: neighbour minus centroid (scaled), plus intensity on level 0.
    input: Mat,
    /// Per grouped row: index of the neighbour among the previous level's centroids.
    members: Vec<usize>,
    group_sizes: Vec<usize>,
}

/// Weight-independent sampling and grouping for one LiDAR cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarPlan {
    levels: Vec<LevelPlan>,
}

impl LidarPlan {
    pub fn new(points: &Mat, cfg: &EncoderConfig) -> Result<Self> {
        if points.ncols() != 4 && points.nrows() > 0 {
            return Err(Error::Shape(format!(
                "lidar array has {} columns, expected 4",
                points.ncols()
            )));
        }
        let rows = canonical_rows(points);
        if rows.is_empty() {
            return Ok(Self { levels: Vec::new() });
        }
        let mut current: Vec<Vec<f64>> = rows;
        let mut levels = Vec::new();
        for (li, level) in cfg.lidar_levels.iter().enumerate() {
            let centers = farthest_point_sample(&current, level.centroids);
            let r2 = level.radius_m * level.radius_m;
            let cols = if li == 0 { 4 } else { 3 };
            let mut input = Vec::new();
            let mut members = Vec::new();
            let mut group_sizes = Vec::new();
            for &c in &centers {
                let mut near: Vec<(f64, usize)> = current
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (dist2(p, &current[c]), i))
                    .filter(|&(d, _)| d <= r2)
                    .collect();
                near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                near.truncate(level.nsample);
                group_sizes.push(near.len());
                for &(_, i) in &near {
                    for (a, b) in current[i][..3].iter().zip(&current[c][..3]) {
                        input.push((a - b) / cfg.point_scale_m);
                    }
                    if li == 0 {
                        input.push(current[i][3]);
                    }
                    members.push(i);
                }
            }
            let n_rows = members.len();
            levels.push(LevelPlan {
                input: Mat::from_shape_vec((n_rows, cols), input).expect("row-major fill"),
                members,
                group_sizes,
            });
            current = centers.iter().map(|&c| current[c][..3].to_vec()).collect();
        }
        Ok(Self { levels })
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Centroid count per level.
    pub fn centroid_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.group_sizes.len()).collect()
    }
}

/// Replaces rows of empty inputs by a learned embedding.
fn with_empty(g: &mut Graph, store: &ParamStore, name: &str, encoded: Option<Var>, empty: &[bool]) -> Var {
    let e = g.param(store, name);
    let Some(enc) = encoded else {
        return g.gather(e, &vec![0; empty.len()]);
    };
    if !empty.iter().any(|&x| x) {
        return enc;
    }
    let n_enc = g.shape(enc).0;
    let all = g.vcat(&[enc, e]);
    let mut k = 0;
    let index: Vec<usize> = empty
        .iter()
        .map(|&is_empty| {
            if is_empty {
                n_enc
            } else {
                k += 1;
                k - 1
            }
        })
        .collect();
    g.gather(all, &index)
}

/// Batched LiDAR encoder: one row of width `lidar_dim` per plan.
pub fn lidar_forward(g: &mut Graph, store: &ParamStore, cfg: &EncoderConfig, plans: &[&LidarPlan]) -> Var {
    let live: Vec<&LidarPlan> = plans.iter().copied().filter(|p| !p.is_empty()).collect();
    let empty: Vec<bool> = plans.iter().map(|p| p.is_empty()).collect();
    let encoded = (!live.is_empty()).then(|| {
        let mut prev: Option<Var> = None;
        let mut prev_offsets: Vec<usize> = Vec::new();
        for li in 0..cfg.lidar_levels.len() {
            let views: Vec<_> = live.iter().map(|p| p.levels[li].input.view()).collect();
            let consts = g.constant(ndarray::concatenate(Axis(0), &views).expect("level widths agree"));
            let x = match prev {
                None => consts,
                Some(feat) => {
                    let index: Vec<usize> = live
                        .iter()
                        .zip(&prev_offsets)
                        .flat_map(|(p, &off)| p.levels[li].members.iter().map(move |m| m + off))
                        .collect();
                    let gathered = g.gather(feat, &index);
                    g.hcat(&[consts, gathered])
                }
            };
            let h = mlp(g, store, &format!("enc.lidar.sa{li}"), x);
            let mut groups = Vec::new();
            let mut row = 0;
            prev_offsets.clear();
            for p in &live {
                prev_offsets.push(groups.len());
                for &size in &p.levels[li].group_sizes {
                    groups.push((row..row + size).collect());
                    row += size;
                }
            }
            prev = Some(g.group_max(h, &groups));
        }
        let last = cfg.lidar_levels.len() - 1;
        let mut groups = Vec::new();
        let mut row = 0;
        for p in &live {
            let n = p.levels[last].group_sizes.len();
            groups.push((row..row + n).collect());
            row += n;
        }
        g.group_max(prev.expect("at least one level"), &groups)
    });
    with_empty(g, store, "enc.lidar.empty", encoded, &empty)
}

/// Canonically ordered radar points as MLP inputs plus RCS pooling weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarInput {
    features: Mat,
    weights: Vec<f64>,
}

impl RadarInput {
    pub fn new(points: &Mat, cfg: &EncoderConfig) -> Result<Self> {
        if points.ncols() != 5 && points.nrows() > 0 {
            return Err(Error::Shape(format!(
                "radar array has {} columns, expected 5",
                points.ncols()
            )));
        }
        let rows = canonical_rows(points);
        let total: f64 = rows.iter().map(|r| r[3].max(0.0)).sum();
        let weights = rows
            .iter()
            .map(|r| {
                if total > 0.0 {
                    r[3].max(0.0) / total
                } else {
                    1.0 / rows.len() as f64
                }
            })
            .collect();
        let mut features = Mat::zeros((rows.len(), 5));
        for (i, r) in rows.iter().enumerate() {
            for k in 0..3 {
                features[[i, k]] = r[k] / cfg.point_scale_m;
            }
            features[[i, 3]] = r[3].max(0.0).ln_1p();
            features[[i, 4]] = r[4] / cfg.doppler_scale_mps;
        }
        Ok(Self { features, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Batched radar encoder: RCS-weighted point stream plus a learned-query
/// cross-attention stream, merged to `radar_dim`.
pub fn radar_forward(g: &mut Graph, store: &ParamStore, _cfg: &EncoderConfig, clouds: &[&RadarInput]) -> Var {
    let live: Vec<&RadarInput> = clouds.iter().copied().filter(|c| !c.is_empty()).collect();
    let empty: Vec<bool> = clouds.iter().map(|c| c.is_empty()).collect();
    let encoded = (!live.is_empty()).then(|| {
        let views: Vec<_> = live.iter().map(|c| c.features.view()).collect();
        let x = g.constant(ndarray::concatenate(Axis(0), &views).expect("radar widths agree"));
        let h = mlp(g, store, "enc.radar.point", x);
        let segs = Segment::packed(live.iter().map(|c| c.len()));
        let weights: Vec<f64> = live.iter().flat_map(|c| c.weights.iter().copied()).collect();
        let pooled = g.segment_sum(h, &segs, Some(weights));
        let q = g.param(store, "enc.radar.query");
        let q = g.gather(q, &vec![0; live.len()]);
        let k = linear(g, store, "enc.radar.k", h);
        let v = linear(g, store, "enc.radar.v", h);
        let q_segs = Segment::packed(live.iter().map(|_| 1));
        let attended = g.attention(q, k, v, &q_segs, &segs, 1, false);
        let both = g.hcat(&[pooled, attended]);
        linear(g, store, "enc.radar.out", both)
    });
    with_empty(g, store, "enc.radar.empty", encoded, &empty)
}

fn single(g: &Graph, v: Var, modality: Modality, view: View) -> ModalityFeature {
    ModalityFeature {
        vector: g.value(v).row(0).to_owned(),
        modality,
        view,
    }
}

/// Encodes one camera view.
pub fn encode_image(
    store: &ParamStore,
    cfg: &EncoderConfig,
    depth: &Mat,
    albedo: &Mat,
    view: View,
) -> Result<ModalityFeature> {
    let patches = patch_tokens(depth, albedo, cfg)?;
    let mut g = Graph::new();
    let v = image_forward(&mut g, store, cfg, &[&patches]);
    Ok(single(&g, v, Modality::Image, view))
}

/// Encodes one LiDAR cloud (`M x 4`).
pub fn encode_lidar(store: &ParamStore, cfg: &EncoderConfig, points: &Mat, view: View) -> Result<ModalityFeature> {
    let plan = LidarPlan::new(points, cfg)?;
    let mut g = Graph::new();
    let v = lidar_forward(&mut g, store, cfg, &[&plan]);
    Ok(single(&g, v, Modality::Lidar, view))
}

/// Encodes one radar cloud (`K x 5`).
pub fn encode_radar(store: &ParamStore, cfg: &EncoderConfig, points: &Mat, view: View) -> Result<ModalityFeature> {
    let input = RadarInput::new(points, cfg)?;
    let mut g = Graph::new();
    let v = radar_forward(&mut g, store, cfg, &[&input]);
    Ok(single(&g, v, Modality::Radar, view))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_normal;
    use proptest::prelude::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            image_dim: 16,
            image_heads: 2,
            lidar_dim: 16,
            lidar_levels: vec![
                SaLevel {
                    centroids: 8,
                    radius_m: 10.0,
                    nsample: 4,
                    width: 8,
                },
                SaLevel {
                    centroids: 3,
                    radius_m: 30.0,
                    nsample: 3,
                    width: 8,
                },
            ],
            radar_dim: 16,
            radar_hidden: 8,
            ..Default::default()
        }
    }

    fn store(cfg: &EncoderConfig) -> ParamStore {
        let mut s = ParamStore::new();
        init_encoders(&mut s, 7, cfg);
        s
    }

    fn cloud(seed: u64, n: usize, cols: usize) -> Mat {
        init_normal(seed, "cloud", n, cols, 10.0).mapv(|v| v.abs())
    }

    #[test]
    fn patch_count_and_divisibility() {
        let cfg = EncoderConfig::default();
        let depth = Mat::from_elem((36, 64), 20.0);
        let albedo = Mat::zeros((36, 64));
        let p = patch_tokens(&depth, &albedo, &cfg).unwrap();
        assert_eq!(p.dim(), (144, 32));
        assert!((p[[0, 0]] - 0.1).abs() < 1e-15);

        let odd = EncoderConfig {
            image_width: 65,
            ..Default::default()
        };
        let depth = Mat::zeros((36, 65));
        assert!(matches!(patch_tokens(&depth, &depth, &odd), Err(Error::Shape(_))));
        assert!(odd.validate().is_err());
    }

    #[test]
    fn image_encoder_is_deterministic() {
        let cfg = small();
        let s = store(&cfg);
        let depth = init_normal(1, "d", 36, 64, 50.0).mapv(f64::abs);
        let albedo = init_normal(2, "a", 36, 64, 0.3).mapv(f64::abs);
        let a = encode_image(&s, &cfg, &depth, &albedo, View::Tx).unwrap();
        let b = encode_image(&s, &cfg, &depth, &albedo, View::Tx).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vector.len(), 16);
        assert!(a.vector.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn fps_starts_at_max_norm() {
        let pts = vec![vec![1.0, 0.0, 0.0], vec![5.0, 0.0, 0.0], vec![-4.0, 0.0, 0.0]];
        assert_eq!(farthest_point_sample(&pts, 3), vec![1, 2, 0]);
        assert_eq!(farthest_point_sample(&pts, 10).len(), 3);
    }

    #[test]
    fn lidar_empty_and_duplicates() {
        let cfg = small();
        let s = store(&cfg);
        let e = encode_lidar(&s, &cfg, &Mat::zeros((0, 4)), View::Rx).unwrap();
        assert_eq!(e.vector, s.value("enc.lidar.empty").row(0));

        let pts = cloud(3, 30, 4);
        let doubled = ndarray::concatenate(Axis(0), &[pts.view(), pts.view()]).unwrap();
        let a = encode_lidar(&s, &cfg, &pts, View::Tx).unwrap();
        let b = encode_lidar(&s, &cfg, &doubled, View::Tx).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn radar_empty_and_rcs_sensitivity() {
        let cfg = small();
        let s = store(&cfg);
        let e = encode_radar(&s, &cfg, &Mat::zeros((0, 5)), View::Tx).unwrap();
        assert_eq!(e.vector, s.value("enc.radar.empty").row(0));

        let pts = cloud(4, 6, 5);
        let mut bumped = pts.clone();
        bumped[[2, 3]] *= 2.0;
        let a = encode_radar(&s, &cfg, &pts, View::Tx).unwrap();
        let b = encode_radar(&s, &cfg, &bumped, View::Tx).unwrap();
        let diff: f64 = (&a.vector - &b.vector).mapv(|v| v * v).sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn batched_matches_single_with_mixed_empties() {
        let cfg = small();
        let s = store(&cfg);
        let clouds = [cloud(5, 20, 4), Mat::zeros((0, 4)), cloud(6, 9, 4)];
        let plans: Vec<LidarPlan> = clouds.iter().map(|c| LidarPlan::new(c, &cfg).unwrap()).collect();
        let mut g = Graph::new();
        let v = lidar_forward(&mut g, &s, &cfg, &plans.iter().collect::<Vec<_>>());
        for (i, c) in clouds.iter().enumerate() {
            let one = encode_lidar(&s, &cfg, c, View::Tx).unwrap();
            assert_eq!(g.value(v).row(i), one.vector);
        }
        let radar = [cloud(7, 4, 5), Mat::zeros((0, 5)), cloud(8, 3, 5)];
        let inputs: Vec<RadarInput> = radar.iter().map(|c| RadarInput::new(c, &cfg).unwrap()).collect();
        let mut g = Graph::new();
        let v = radar_forward(&mut g, &s, &cfg, &inputs.iter().collect::<Vec<_>>());
        for (i, c) in radar.iter().enumerate() {
            let one = encode_radar(&s, &cfg, c, View::Tx).unwrap();
            assert_eq!(g.value(v).row(i), one.vector);
        }
    }

    fn permute(m: &Mat, order: &[usize]) -> Mat {
        m.select(Axis(0), order)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn point_encoders_are_permutation_invariant(seed in 0u64..1000, n in 1usize..25, shuffle in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let cfg = small();
            let s = store(&cfg);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle));
            let lidar = cloud(seed, n, 4);
            let a = encode_lidar(&s, &cfg, &lidar, View::Tx).unwrap();
            let b = encode_lidar(&s, &cfg, &permute(&lidar, &order), View::Tx).unwrap();
            prop_assert_eq!(a.vector, b.vector);
            let radar = cloud(seed + 1, n, 5);
            let a = encode_radar(&s, &cfg, &radar, View::Tx).unwrap();
            let b = encode_radar(&s, &cfg, &permute(&radar, &order), View::Tx).unwrap();
            prop_assert_eq!(a.vector, b.vector);
        }
    }
}
