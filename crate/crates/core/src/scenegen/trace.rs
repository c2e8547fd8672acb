//! Specular image-method tracer over box faces and the ground plane.

use serde::{Deserialize, Serialize};

use super::config::BandConfig;
use super::scene::Scene;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Tolerance for "point lies on the facet" tests, metres.
const FACET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    /// Path budget kept per snapshot.
    pub n_max: usize,
    /// Amplitude reflection coefficient applied per bounce.
    pub reflection_coefficient: f64,
    pub tx_power_w: f64,
    /// Highest reflection order traced (0, 1 or 2).
    pub max_order: u8,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            n_max: 6,
            reflection_coefficient: 0.6,
            tx_power_w: 1.0,
            max_order: 2,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        if !(self.reflection_coefficient > 0.0 && self.reflection_coefficient <= 1.0) {
            return Err(Error::Config("reflection coefficient must be in (0, 1]".into()));
        }
        if !(self.tx_power_w > 0.0) {
            return Err(Error::Config("tx_power_w must be positive".into()));
        }
        if self.max_order > 2 {
            return Err(Error::Config("max_order above 2 is not supported".into()));
        }
        Ok(())
    }
}

/// A planar reflector: the face of a box or the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Facet {
    pub axis: usize,
    /// +1 when the outward normal points along +axis.
    pub sign: f64,
    pub offset: f64,
    /// Bounds along the two remaining axes, in increasing axis order.
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    /// Owning box index; `None` for the ground.
    pub owner: Option<usize>,
}

impl Facet {
    pub fn ground() -> Self {
        Self {
            axis: 2,
            sign: 1.0,
            offset: 0.0,
            lo: [f64::NEG_INFINITY; 2],
            hi: [f64::INFINITY; 2],
            owner: None,
        }
    }

    fn others(&self) -> [usize; 2] {
        match self.axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }

    pub fn normal(&self) -> Vec3 {
        let mut n = Vec3::zeros();
        n[self.axis] = self.sign;
        n
    }

    /// Signed height of `p` above the facet plane along the outward normal.
    pub fn height(&self, p: &Vec3) -> f64 {
        (p[self.axis] - self.offset) * self.sign
    }

    pub fn mirror(&self, p: &Vec3) -> Vec3 {
        let mut m = *p;
        m[self.axis] = 2.0 * self.offset - p[self.axis];
        m
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let [a, b] = self.others();
        p[a] >= self.lo[0] - FACET_TOL
            && p[a] <= self.hi[0] + FACET_TOL
            && p[b] >= self.lo[1] - FACET_TOL
            && p[b] <= self.hi[1] + FACET_TOL
    }

    /// Where segment `a -> b` crosses the facet plane, if it does so strictly inside the segment.
    pub fn crossing(&self, a: &Vec3, b: &Vec3) -> Option<Vec3> {
        let da = a[self.axis] - self.offset;
        let db = b[self.axis] - self.offset;
        if da * db >= 0.0 {
            return None;
        }
        let t = da / (da - db);
        let mut p = a + (b - a) * t;
        p[self.axis] = self.offset;
        Some(p)
    }

    /// The six faces of every box in the scene, preceded by the ground.
    pub fn all(scene: &Scene) -> Vec<Facet> {
        let mut out = vec![Facet::ground()];
        for (i, b) in scene.boxes.iter().enumerate() {
            let (mn, mx) = (b.bounds.min, b.bounds.max);
            for axis in 0..3 {
                let [a, c] = match axis {
                    0 => [1, 2],
                    1 => [0, 2],
                    _ => [0, 1],
                };
                for (offset, sign) in [(mn[axis], -1.0), (mx[axis], 1.0)] {
                    out.push(Facet {
                        axis,
                        sign,
                        offset,
                        lo: [mn[a], mn[c]],
                        hi: [mx[a], mx[c]],
                        owner: Some(i),
                    });
                }
            }
        }
        out
    }
}

/// One traced propagation path.
#[derive(Debug, Clone, PartialEq)]
pub struct RayPath {
    /// Tx, reflection points in order, Rx.
    pub vertices: Vec<Vec3>,
    /// Indices into [`Facet::all`] for each bounce.
    pub facets: Vec<usize>,
    pub length_m: f64,
    pub delay_s: f64,
    pub power_w: f64,
}

impl RayPath {
    pub fn bounces(&self) -> usize {
        self.facets.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipathSet {
    pub n_paths: usize,
    /// Fraction of the kept set's received power, non-increasing.
    pub power_ratio: Vec<f64>,
    /// Absolute propagation delay, seconds.
    pub delay_s: Vec<f64>,
    pub valid: Vec<bool>,
    pub los_present: bool,
    /// Received power of the kept set, watts.
    pub total_power_w: f64,
}

impl MultipathSet {
    pub fn empty(n_max: usize) -> Self {
        Self {
            n_paths: 0,
            power_ratio: vec![0.0; n_max],
            delay_s: vec![0.0; n_max],
            valid: vec![false; n_max],
            los_present: false,
            total_power_w: 0.0,
        }
    }

    pub fn n_max(&self) -> usize {
        self.valid.len()
    }

    /// Keeps the `n_max` strongest paths and normalizes their powers.
    pub fn from_paths(paths: &[RayPath], n_max: usize) -> Self {
        let mut order: Vec<&RayPath> = paths.iter().collect();
        order.sort_by(|a, b| {
            b.power_w
                .total_cmp(&a.power_w)
                .then(a.delay_s.total_cmp(&b.delay_s))
                .then(a.facets.cmp(&b.facets))
        });
        order.truncate(n_max);
        let mut set = Self::empty(n_max);
        let total: f64 = order.iter().map(|p| p.power_w).sum();
        if order.is_empty() || !(total > 0.0) {
            return set;
        }
        set.n_paths = order.len();
        set.total_power_w = total;
        set.los_present = order.iter().any(|p| p.bounces() == 0);
        for (i, p) in order.iter().enumerate() {
            set.power_ratio[i] = p.power_w / total;
            set.delay_s[i] = p.delay_s;
            set.valid[i] = true;
        }
        set
    }

    /// Absolute per-path powers of the valid entries.
    pub fn powers_w(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.n_max())
            .filter(|&i| self.valid[i])
            .map(|i| (self.delay_s[i], self.power_ratio[i] * self.total_power_w))
    }
}

fn segment_clear(scene: &Scene, a: &Vec3, b: &Vec3) -> bool {
    !scene.boxes.iter().any(|bx| bx.bounds.blocks_segment(a, b))
}

fn finish(
    scene: &Scene,
    band: &BandConfig,
    cfg: &TraceConfig,
    vertices: Vec<Vec3>,
    facets: Vec<usize>,
) -> Option<RayPath> {
    if !vertices.windows(2).all(|w| segment_clear(scene, &w[0], &w[1])) {
        return None;
    }
    let length_m: f64 = vertices.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let lambda = band.wavelength_m();
    let friis = (lambda / (4.0 * std::f64::consts::PI * length_m)).powi(2);
    let gamma2 = cfg.reflection_coefficient.powi(2 * facets.len() as i32);
    Some(RayPath {
        vertices,
        facets,
        length_m,
        delay_s: length_m / SPEED_OF_LIGHT,
        power_w: cfg.tx_power_w * friis * gamma2,
    })
}

/// Every specular path of order `<= cfg.max_order` between Tx and Rx.
pub fn enumerate_paths(scene: &Scene, band: &BandConfig, cfg: &TraceConfig) -> Vec<RayPath> {
    let tx = scene.tx_pose.position;
    let rx = scene.rx_pose.position;
    let facets = Facet::all(scene);
    let mut paths = Vec::new();

    if let Some(p) = finish(scene, band, cfg, vec![tx, rx], vec![]) {
        paths.push(p);
    }
    if cfg.max_order == 0 {
        return paths;
    }

    // Facets the Tx sees from their outward side; a reflection off any other
    // facet would have to start inside its box.
    let tx_front: Vec<usize> = (0..facets.len()).filter(|&i| facets[i].height(&tx) > 0.0).collect();
    let rx_front: Vec<bool> = facets.iter().map(|f| f.height(&rx) > 0.0).collect();

    for &i in &tx_front {
        let f = &facets[i];
        if !rx_front[i] {
            continue;
        }
        let image = f.mirror(&tx);
        let Some(p) = f.crossing(&image, &rx) else { continue };
        if !f.contains(&p) {
            continue;
        }
        if let Some(path) = finish(scene, band, cfg, vec![tx, p, rx], vec![i]) {
            paths.push(path);
        }
    }
    if cfg.max_order < 2 {
        return paths;
    }

    for &i in &tx_front {
        let f1 = &facets[i];
        let image1 = f1.mirror(&tx);
        for (j, f2) in facets.iter().enumerate() {
            if j == i || !rx_front[j] || f2.height(&image1) <= 0.0 {
                continue;
            }
            let image2 = f2.mirror(&image1);
            let Some(p2) = f2.crossing(&image2, &rx) else { continue };
            if !f2.contains(&p2) || f1.height(&p2) <= 0.0 {
                continue;
            }
            let Some(p1) = f1.crossing(&image1, &p2) else { continue };
            if !f1.contains(&p1) || f2.height(&p1) <= 0.0 {
                continue;
            }
            if let Some(path) = finish(scene, band, cfg, vec![tx, p1, p2, rx], vec![i, j]) {
                paths.push(path);
            }
        }
    }
    paths
}

/// Traces the scene and keeps the `cfg.n_max` strongest paths.
///
/// A fully enclosed receiver yields an empty set rather than an error.
pub fn trace_multipath(scene: &Scene, band: &BandConfig, cfg: &TraceConfig) -> Result<MultipathSet> {
    cfg.validate()?;
    band.validate()?;
    scene.validate()?;
    let paths = enumerate_paths(scene, band, cfg);
    Ok(MultipathSet::from_paths(&paths, cfg.n_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use crate::scenegen::{BoxKind, SceneBox};

    fn los_only() -> TraceConfig {
        TraceConfig {
            max_order: 0,
            ..TraceConfig::default()
        }
    }

    #[test]
    fn free_space_delay_and_friis() {
        let d = 299.792458;
        let scene = Scene::new(vec![], Vec3::new(0.0, 0.0, 10.0), Vec3::new(d, 0.0, 10.0)).unwrap();
        let band = BandConfig::MMWAVE;
        let set = trace_multipath(&scene, &band, &los_only()).unwrap();
        assert_eq!(set.n_paths, 1);
        assert!(set.los_present);
        assert!((set.delay_s[0] - 1e-6).abs() / 1e-6 < 1e-9);
        let lambda = SPEED_OF_LIGHT / 60e9;
        let friis = (lambda / (4.0 * std::f64::consts::PI * d)).powi(2);
        assert!((set.total_power_w - friis).abs() / friis < 1e-9);
        assert_eq!(set.power_ratio[0], 1.0);
        assert!(!set.valid[1] && set.power_ratio[1] == 0.0 && set.delay_s[1] == 0.0);
    }

    #[test]
    fn wall_reflection_matches_image_distance() {
        let wall = SceneBox::new(
            Aabb::new(Vec3::new(-100.0, 5.0, 0.0), Vec3::new(100.0, 6.0, 50.0)),
            Vec3::zeros(),
            BoxKind::Building,
        );
        let scene = Scene::new(vec![wall], Vec3::new(0.0, 0.0, 2.0), Vec3::new(10.0, 0.0, 2.0)).unwrap();
        let cfg = TraceConfig {
            max_order: 1,
            ..TraceConfig::default()
        };
        let paths = enumerate_paths(&scene, &BandConfig::MMWAVE, &cfg);
        let wall_path = paths
            .iter()
            .find(|p| p.bounces() == 1 && p.vertices[1].z > 0.0)
            .expect("wall bounce");
        let expect = 200f64.sqrt();
        assert!((wall_path.length_m - expect).abs() < 1e-9);
        assert!((wall_path.delay_s * 1e9 - 47.17).abs() < 5e-3);
        assert_eq!(wall_path.vertices[1], Vec3::new(5.0, 5.0, 2.0));
    }

    #[test]
    fn blocker_removes_los() {
        let blocker = SceneBox::new(
            Aabb::new(Vec3::new(4.0, -1.0, 0.0), Vec3::new(6.0, 1.0, 5.0)),
            Vec3::zeros(),
            BoxKind::Vehicle,
        );
        let wall = SceneBox::new(
            Aabb::new(Vec3::new(-100.0, 5.0, 0.0), Vec3::new(100.0, 6.0, 50.0)),
            Vec3::zeros(),
            BoxKind::Building,
        );
        let scene = Scene::new(vec![blocker, wall], Vec3::new(0.0, 0.0, 2.0), Vec3::new(10.0, 0.0, 2.0)).unwrap();
        let set = trace_multipath(&scene, &BandConfig::MMWAVE, &TraceConfig::default()).unwrap();
        assert!(!set.los_present);
        assert!(set.n_paths > 0);
    }

    #[test]
    fn enclosed_receiver_yields_empty_set() {
        let mut boxes = Vec::new();
        // a closed shell of six slabs around the receiver
        let slabs = [
            ([-1.0, -1.0, 0.0], [1.0, 1.0, 0.5]),
            ([-1.0, -1.0, 3.5], [1.0, 1.0, 4.0]),
            ([-1.0, -1.0, 0.5], [-0.9, 1.0, 3.5]),
            ([0.9, -1.0, 0.5], [1.0, 1.0, 3.5]),
            ([-0.9, -1.0, 0.5], [0.9, -0.9, 3.5]),
            ([-0.9, 0.9, 0.5], [0.9, 1.0, 3.5]),
        ];
        for (a, b) in slabs {
            boxes.push(SceneBox::new(
                Aabb::new(Vec3::from(a), Vec3::from(b)),
                Vec3::zeros(),
                BoxKind::Building,
            ));
        }
        let scene = Scene::new(boxes, Vec3::new(20.0, 0.0, 2.0), Vec3::new(0.0, 0.0, 2.0)).unwrap();
        let set = trace_multipath(&scene, &BandConfig::SUB6, &TraceConfig::default()).unwrap();
        assert_eq!(set.n_paths, 0);
        assert!(!set.los_present);
        assert!(set.valid.iter().all(|v| !v));
    }

    #[test]
    fn ground_bounce_is_traced() {
        let scene = Scene::new(vec![], Vec3::new(0.0, 0.0, 1.5), Vec3::new(30.0, 0.0, 6.0)).unwrap();
        let paths = enumerate_paths(&scene, &BandConfig::SUB6, &TraceConfig::default());
        assert_eq!(paths.len(), 2);
        let g = paths.iter().find(|p| p.bounces() == 1).unwrap();
        let expect = (30f64.powi(2) + 7.5f64.powi(2)).sqrt();
        assert!((g.length_m - expect).abs() < 1e-9);
    }
}
