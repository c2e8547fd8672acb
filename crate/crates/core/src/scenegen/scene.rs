use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
}

impl Pose {
    pub fn new(position: Vec3, yaw: f64, pitch: f64) -> Self {
        Self { position, yaw, pitch }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxKind {
    Building,
    Obstacle,
    Vehicle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub bounds: Aabb,
    /// m/s; zero for static geometry.
    pub velocity: Vec3,
    pub material: u8,
    pub kind: BoxKind,
}

impl SceneBox {
    pub fn new(bounds: Aabb, velocity: Vec3, kind: BoxKind) -> Self {
        let material = match kind {
            BoxKind::Building => 1,
            BoxKind::Vehicle => 2,
            BoxKind::Obstacle => 3,
        };
        Self {
            bounds,
            velocity,
            material,
            kind,
        }
    }

    pub fn is_dynamic(&self) -> bool {
        self.velocity != Vec3::zeros()
    }
}

/// Albedo proxy per material id; id 0 is the ground plane.
pub fn material_albedo(material: u8) -> f64 {
    match material {
        0 => 0.3,
        1 => 0.6,
        2 => 0.9,
        3 => 0.45,
        _ => 0.5,
    }
}

/// A static snapshot of the street: boxes over the ground plane `z = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub boxes: Vec<SceneBox>,
    pub tx_pose: Pose,
    pub rx_pose: Pose,
    /// Index of the box carrying the Tx antenna, if any.
    pub tx_vehicle: Option<usize>,
    /// Dynamic boxes wrap around `[0, road_length_m)` along x.
    pub road_length_m: f64,
    pub tx_antenna_height_m: f64,
}

impl Scene {
    /// Scene with explicit geometry, mainly for tests and hand cases.
    pub fn new(boxes: Vec<SceneBox>, tx: Vec3, rx: Vec3) -> Result<Self> {
        let scene = Self {
            boxes,
            tx_pose: Pose::new(tx, 0.0, 0.0),
            rx_pose: Pose::new(rx, 0.0, 0.0),
            tx_vehicle: None,
            road_length_m: f64::INFINITY,
            tx_antenna_height_m: tx.z,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.boxes.iter().enumerate() {
            if b.bounds.is_degenerate() {
                return Err(Error::Geometry(format!("box {i} is degenerate: {:?}", b.bounds)));
            }
        }
        for (name, pose) in [("tx", &self.tx_pose), ("rx", &self.rx_pose)] {
            if !(pose.position.z > 0.0) {
                return Err(Error::Geometry(format!("{name} pose must be above ground")));
            }
            if self.boxes.iter().any(|b| b.bounds.contains_strict(&pose.position)) {
                return Err(Error::Geometry(format!("{name} pose lies inside a box")));
            }
        }
        Ok(())
    }

    pub fn count(&self, kind: BoxKind) -> usize {
        self.boxes.iter().filter(|b| b.kind == kind).count()
    }

    /// The scene after `dt` seconds: dynamic boxes move and wrap along the road.
    pub fn advanced(&self, dt: f64) -> Scene {
        let mut next = self.clone();
        for b in next.boxes.iter_mut().filter(|b| b.is_dynamic()) {
            let c = b.bounds.center();
            let mut target = c + b.velocity * dt;
            if self.road_length_m.is_finite() {
                target.x = target.x.rem_euclid(self.road_length_m);
            }
            let shift = target - c;
            b.bounds = Aabb::new(b.bounds.min + shift, b.bounds.max + shift);
        }
        if let Some(i) = self.tx_vehicle {
            let b = &next.boxes[i];
            let c = b.bounds.center();
            next.tx_pose.position = Vec3::new(c.x, c.y, self.tx_antenna_height_m);
        }
        next
    }

    /// Velocity of the Tx antenna (that of its vehicle).
    pub fn tx_velocity(&self) -> Vec3 {
        self.tx_vehicle
            .map(|i| self.boxes[i].velocity)
            .unwrap_or_else(Vec3::zeros)
    }
}

struct VehicleShape {
    length: f64,
    width: f64,
    height: f64,
}

const CAR: VehicleShape = VehicleShape {
    length: 4.5,
    width: 1.8,
    height: 1.5,
};
const VAN: VehicleShape = VehicleShape {
    length: 5.5,
    width: 2.0,
    height: 2.4,
};
const TRUCK: VehicleShape = VehicleShape {
    length: 10.0,
    width: 2.5,
    height: 3.6,
};

/// Builds the street for `config` from `seed`. Pure function of its inputs.
pub fn build_scene(config: &ScenarioConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let length = config.road_length_m;
    let mut boxes = Vec::new();

    let rows = &config.buildings;
    for side in [1.0, -1.0] {
        let mut x = rows.gap_m.sample(&mut rng) * 0.5;
        for _ in 0..rows.max_per_side {
            let frontage = rows.frontage_m.sample(&mut rng);
            let depth = rows.depth_m.sample(&mut rng);
            let height = rows.height_m.sample(&mut rng);
            if x + frontage > length {
                break;
            }
            let (y0, y1) = if side > 0.0 {
                (rows.setback_m, rows.setback_m + depth)
            } else {
                (-rows.setback_m - depth, -rows.setback_m)
            };
            boxes.push(SceneBox::new(
                Aabb::new(Vec3::new(x, y0, 0.0), Vec3::new(x + frontage, y1, height)),
                Vec3::zeros(),
                BoxKind::Building,
            ));
            x += frontage + rows.gap_m.sample(&mut rng);
        }
    }

    let obs = &config.obstacles;
    let mut x = obs.gap_m.sample(&mut rng);
    loop {
        let width = obs.width_m.sample(&mut rng);
        let height = obs.height_m.sample(&mut rng);
        if x + width > length {
            break;
        }
        boxes.push(SceneBox::new(
            Aabb::new(
                Vec3::new(x, obs.offset_m, 0.0),
                Vec3::new(x + width, obs.offset_m + obs.depth_m, height),
            ),
            Vec3::zeros(),
            BoxKind::Obstacle,
        ));
        x += width + obs.gap_m.sample(&mut rng);
    }

    // Lanes: index 0 is the far side from the base station. All vehicles in a
    // lane share one speed, so non-overlapping starts stay non-overlapping.
    let lane_y = |k: usize| (k as f64 + 0.5) * config.lane_width_m - config.lanes as f64 * config.lane_width_m / 2.0;
    let lane_speed = |k: usize| config.vehicle_speed_mps * (0.8 + 0.4 * k as f64 / config.lanes.max(2) as f64);
    let mut occupied: Vec<Vec<(f64, f64)>> = vec![Vec::new(); config.lanes];
    let n_vehicles = config.resolved_vehicle_count();
    let tx_lane = rng.random_range(0..config.lanes);
    let mut tx_vehicle = None;
    for v in 0..n_vehicles {
        let shape = if v == 0 {
            VehicleShape {
                height: config.tx_antenna_height_m - 0.2,
                ..CAR
            }
        } else {
            match rng.random_range(0..100) {
                0..70 => CAR,
                70..85 => VAN,
                _ => TRUCK,
            }
        };
        let mut placed = None;
        for _attempt in 0..64 {
            let lane = if v == 0 {
                tx_lane
            } else {
                rng.random_range(0..config.lanes)
            };
            let x0 = rng.random_range(0.0..length);
            let span = (x0 - shape.length / 2.0 - 1.0, x0 + shape.length / 2.0 + 1.0);
            let clash = occupied[lane].iter().any(|&(a, b)| {
                // compare on the ring of circumference `length`
                [-length, 0.0, length].iter().any(|&s| span.0 < b + s && a + s < span.1)
            });
            if !clash {
                placed = Some((lane, x0, span));
                break;
            }
        }
        let Some((lane, x0, span)) = placed else {
            return Err(Error::Config(format!(
                "could not place vehicle {v}; road too short for {n_vehicles} vehicles"
            )));
        };
        occupied[lane].push(span);
        let y = lane_y(lane);
        let bounds = Aabb::new(
            Vec3::new(x0 - shape.length / 2.0, y - shape.width / 2.0, 0.0),
            Vec3::new(x0 + shape.length / 2.0, y + shape.width / 2.0, shape.height),
        );
        if v == 0 {
            tx_vehicle = Some(boxes.len());
        }
        boxes.push(SceneBox::new(
            bounds,
            Vec3::new(lane_speed(lane), 0.0, 0.0),
            BoxKind::Vehicle,
        ));
    }

    let tx_box = &boxes[tx_vehicle.expect("at least one vehicle")].bounds;
    let c = tx_box.center();
    let tx_pose = Pose::new(Vec3::new(c.x, c.y, config.tx_antenna_height_m), 0.0, 0.0);
    // The mast faces the road, tilted down.
    let rx_pose = Pose::new(
        Vec3::new(length / 2.0, config.bs_offset_m, config.bs_height_m),
        -std::f64::consts::FRAC_PI_2,
        -10f64.to_radians(),
    );
    let scene = Scene {
        boxes,
        tx_pose,
        rx_pose,
        tx_vehicle,
        road_length_m: length,
        tx_antenna_height_m: config.tx_antenna_height_m,
    };
    scene.validate()?;
    Ok(scene)
}
