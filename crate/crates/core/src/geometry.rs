//! Axis-aligned boxes and the ray/segment queries the tracer and sensors share.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Interior-intersection tolerance in segment parameter units.
pub const SEGMENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|i| !(self.max[i] > self.min[i]))
    }

    /// Strict containment: points on the surface are outside.
    pub fn contains_strict(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] > self.min[i] && p[i] < self.max[i])
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Slab test. Returns the entry/exit parameters of the infinite line
    /// `origin + t * dir`, or `None` when the line misses the box.
    pub fn line_span(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                // parallel: the line stays outside the open slab unless strictly inside it
                if origin[i] <= self.min[i] || origin[i] >= self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (a, b) = {
                let a = (self.min[i] - origin[i]) * inv;
                let b = (self.max[i] - origin[i]) * inv;
                if a <= b {
                    (a, b)
                } else {
                    (b, a)
                }
            };
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }

    /// True when the open segment `a -> b` passes through the box interior.
    /// Segments that only touch the surface (e.g. end on a face) are clear.
    pub fn blocks_segment(&self, a: &Vec3, b: &Vec3) -> bool {
        let dir = b - a;
        match self.line_span(a, &dir) {
            None => false,
            Some((t0, t1)) => {
                let lo = t0.max(SEGMENT_EPS);
                let hi = t1.min(1.0 - SEGMENT_EPS);
                hi - lo > SEGMENT_EPS
            }
        }
    }

    /// First positive hit parameter of a ray starting outside the box.
    pub fn ray_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let (t0, t1) = self.line_span(origin, dir)?;
        if t1 <= 0.0 || t1 - t0 <= 0.0 {
            return None;
        }
        (t0 > 0.0).then_some(t0)
    }

    /// Outward normal of the face hit at `p` (the axis whose face is nearest).
    pub fn face_normal_at(&self, p: &Vec3) -> Vec3 {
        let mut best = (f64::INFINITY, Vec3::zeros());
        for i in 0..3 {
            for (plane, sign) in [(self.min[i], -1.0), (self.max[i], 1.0)] {
                let d = (p[i] - plane).abs();
                if d < best.0 {
                    let mut n = Vec3::zeros();
                    n[i] = sign;
                    best = (d, n);
                }
            }
        }
        best.1
    }
}

/// Rotation of a sensor-frame direction (x forward, y left, z up) into the world frame.
pub fn rotate_yaw_pitch(v: &Vec3, yaw: f64, pitch: f64) -> Vec3 {
    // pitch about the sensor y axis (positive looks up), then yaw about world z
    let (sp, cp) = pitch.sin_cos();
    let pitched = Vec3::new(v.x * cp - v.z * sp, v.y, v.x * sp + v.z * cp);
    let (sy, cy) = yaw.sin_cos();
    Vec3::new(
        pitched.x * cy - pitched.y * sy,
        pitched.x * sy + pitched.y * cy,
        pitched.z,
    )
}

/// Inverse yaw rotation: world offset into a level sensor frame.
pub fn world_to_yaw_frame(v: &Vec3, yaw: f64) -> Vec3 {
    let (sy, cy) = yaw.sin_cos();
    Vec3::new(v.x * cy + v.y * sy, -v.x * sy + v.y * cy, v.z)
}
