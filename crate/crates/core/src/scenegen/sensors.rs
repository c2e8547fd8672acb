//! Depth/albedo camera, 16-ring LiDAR and a face-sampling radar.
//!
//! Camera depth is planar (distance along the optical axis). The camera
//! raycasts boxes only, so sky and road surface read as the far-plane
//! sentinel; the LiDAR does see the ground.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::scene::{material_albedo, Pose, Scene};
use super::trace::Facet;
use crate::error::{Error, Result};
use crate::geometry::{rotate_yaw_pitch, world_to_yaw_frame, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub fov_deg: f64,
    /// Far-plane sentinel for depth.
    pub max_range_m: f64,
    pub lidar_rings: usize,
    pub lidar_azimuth_steps: usize,
    pub lidar_min_elevation_deg: f64,
    pub lidar_max_elevation_deg: f64,
    pub lidar_range_m: f64,
    pub radar_range_m: f64,
    pub radar_fov_deg: f64,
    pub radar_points_per_face: usize,
    pub radar_max_points: usize,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            image_width: 64,
            image_height: 36,
            fov_deg: 90.0,
            max_range_m: 200.0,
            lidar_rings: 16,
            lidar_azimuth_steps: 32,
            lidar_min_elevation_deg: -15.0,
            lidar_max_elevation_deg: 15.0,
            lidar_range_m: 100.0,
            radar_range_m: 100.0,
            radar_fov_deg: 120.0,
            radar_points_per_face: 2,
            radar_max_points: 48,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_height == 0 || self.lidar_rings == 0 || self.lidar_azimuth_steps == 0 {
            return Err(Error::Config("sensor resolutions must be positive".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Config("camera fov must be in (0, 180)".into()));
        }
        if !(self.max_range_m > 0.0 && self.lidar_range_m > 0.0 && self.radar_range_m > 0.0) {
            return Err(Error::Config("sensor ranges must be positive".into()));
        }
        Ok(())
    }
}

/// One sensor view.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    /// H x W planar depth, metres.
    pub depth: Array2<f64>,
    /// H x W albedo proxy in [0, 1]; 0 where nothing was hit.
    pub albedo: Array2<f64>,
    /// M x 4: x, y, z (sensor frame), intensity.
    pub lidar: Array2<f64>,
    /// K x 5: x, y, z (sensor frame), rcs proxy, radial velocity m/s.
    pub radar: Array2<f64>,
}

fn nearest_box_hit(scene: &Scene, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize)> {
    scene
        .boxes
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.bounds.ray_hit(origin, dir).map(|t| (t, i)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
}

/// Renders every sensor for a pose. Deterministic in `(scene, pose, config, seed)`.
pub fn render_sensors(scene: &Scene, pose: &Pose, config: &SensorConfig, seed: u64) -> Result<SensorFrame> {
    config.validate()?;
    let origin = pose.position;
    if !(origin.z > 0.0) || scene.boxes.iter().any(|b| b.bounds.contains_strict(&origin)) {
        return Err(Error::Geometry(format!("sensor pose {origin:?} is inside geometry")));
    }

    let (w, h) = (config.image_width, config.image_height);
    let tan_h = (config.fov_deg.to_radians() / 2.0).tan();
    let tan_v = tan_h * h as f64 / w as f64;
    let mut depth = Array2::from_elem((h, w), config.max_range_m);
    let mut albedo = Array2::zeros((h, w));
    for r in 0..h {
        let v = 1.0 - 2.0 * (r as f64 + 0.5) / h as f64;
        for c in 0..w {
            let u = 2.0 * (c as f64 + 0.5) / w as f64 - 1.0;
            // forward component is 1, so the hit parameter is planar depth
            let cam = Vec3::new(1.0, -u * tan_h, v * tan_v);
            let dir = rotate_yaw_pitch(&cam, pose.yaw, pose.pitch);
            if let Some((t, i)) = nearest_box_hit(scene, &origin, &dir) {
                if t <= config.max_range_m {
                    depth[[r, c]] = t;
                    albedo[[r, c]] = material_albedo(scene.boxes[i].material);
                }
            }
        }
    }

    let mut lidar = Vec::new();
    for ring in 0..config.lidar_rings {
        let el = if config.lidar_rings == 1 {
            0.0
        } else {
            let f = ring as f64 / (config.lidar_rings - 1) as f64;
            config.lidar_min_elevation_deg + f * (config.lidar_max_elevation_deg - config.lidar_min_elevation_deg)
        }
        .to_radians();
        for step in 0..config.lidar_azimuth_steps {
            let az = pose.yaw + std::f64::consts::TAU * step as f64 / config.lidar_azimuth_steps as f64;
            let dir = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let box_hit = nearest_box_hit(scene, &origin, &dir);
            let ground_t = (dir.z < 0.0).then(|| -origin.z / dir.z);
            let (t, material, normal) = match (box_hit, ground_t) {
                (Some((tb, _)), Some(tg)) if tg < tb => (tg, 0, Vec3::z()),
                (Some((tb, i)), _) => {
                    let p = origin + dir * tb;
                    (tb, scene.boxes[i].material, scene.boxes[i].bounds.face_normal_at(&p))
                }
                (None, Some(tg)) => (tg, 0, Vec3::z()),
                (None, None) => continue,
            };
            if t > config.lidar_range_m {
                continue;
            }
            let local = world_to_yaw_frame(&(dir * t), pose.yaw);
            let intensity = material_albedo(material) * normal.dot(&dir).abs();
            lidar.extend_from_slice(&[local.x, local.y, local.z, intensity]);
        }
    }
    let lidar = Array2::from_shape_vec((lidar.len() / 4, 4), lidar).expect("rows of 4");

    let radar = radar_points(scene, pose, config, seed);
    Ok(SensorFrame {
        depth,
        albedo,
        lidar,
        radar,
    })
}

fn radar_points(scene: &Scene, pose: &Pose, config: &SensorConfig, seed: u64) -> Array2<f64> {
    let origin = pose.position;
    let half_fov = config.radar_fov_deg.to_radians() / 2.0;
    let facets = Facet::all(scene);
    let mut points: Vec<(f64, [f64; 5])> = Vec::new();
    for (fi, f) in facets.iter().enumerate() {
        let Some(owner) = f.owner else { continue };
        if f.height(&origin) <= 0.0 {
            continue;
        }
        let area = (f.hi[0] - f.lo[0]) * (f.hi[1] - f.lo[1]);
        let velocity = scene.boxes[owner].velocity;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, fi as u64));
        for _ in 0..config.radar_points_per_face {
            let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
            let mut p = Vec3::zeros();
            p[f.axis] = f.offset;
            let others = match f.axis {
                0 => [1, 2],
                1 => [0, 2],
                _ => [0, 1],
            };
            p[others[0]] = f.lo[0] + a * (f.hi[0] - f.lo[0]);
            p[others[1]] = f.lo[1] + b * (f.hi[1] - f.lo[1]);
            let offset = p - origin;
            let range = offset.norm();
            if range > config.radar_range_m || range == 0.0 {
                continue;
            }
            let local = world_to_yaw_frame(&offset, pose.yaw);
            if local.y.atan2(local.x).abs() > half_fov {
                continue;
            }
            if scene.boxes.iter().any(|bx| bx.bounds.blocks_segment(&origin, &p)) {
                continue;
            }
            let unit = offset / range;
            let rcs = area * f.normal().dot(&unit).abs() / config.radar_points_per_face as f64;
            let doppler = velocity.dot(&unit);
            points.push((range, [local.x, local.y, local.z, rcs, doppler]));
        }
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points.truncate(config.radar_max_points);
    let flat: Vec<f64> = points.iter().flat_map(|(_, row)| row.iter().copied()).collect();
    Array2::from_shape_vec((points.len(), 5), flat).expect("rows of 5")
}
