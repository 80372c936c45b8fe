//! Minimal vector math and analytic ray/primitive intersection.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f32; 3]", into = "[f32; 3]")]
pub struct Vec3 {
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

impl From<[f32; 3]> for Vec3 {
    fn from(v: [f32; 3]) -> Self {
        Vec3::new(v[0], v[1], v[2])
    }
}

impl From<Vec3> for [f32; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Vec3 {
    pub const fn new(x: f32, y: f32, z: f32) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f32 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f32 {
        self.dot(self).sqrt()
    }

    /// Unit vector, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n > 1e-12 && n.is_finite() {
            Some(self * (1.0 / n))
        } else {
            None
        }
    }

    pub fn to_array(self) -> [f32; 3] {
        self.into()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f32> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f32) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Rotation `Ry(yaw) * Rx(pitch)` applied to `v`.
pub fn rotate(v: Vec3, yaw: f32, pitch: f32) -> Vec3 {
    let (sp, cp) = pitch.sin_cos();
    let r = Vec3::new(v.x, v.y * cp - v.z * sp, v.y * sp + v.z * cp);
    let (sy, cy) = yaw.sin_cos();
    Vec3::new(r.x * cy + r.z * sy, r.y, -r.x * sy + r.z * cy)
}

/// Inverse of [`rotate`].
pub fn unrotate(v: Vec3, yaw: f32, pitch: f32) -> Vec3 {
    let (sy, cy) = yaw.sin_cos();
    let r = Vec3::new(v.x * cy - v.z * sy, v.y, v.x * sy + v.z * cy);
    let (sp, cp) = pitch.sin_cos();
    Vec3::new(r.x, r.y * cp + r.z * sp, -r.y * sp + r.z * cp)
}

/// Nearest intersection in a primitive's local frame: `(t, local normal)`.
pub(crate) fn intersect_plane(o: Vec3, d: Vec3, half_x: f32, half_z: f32, t_min: f32) -> Option<(f32, Vec3)> {
    if d.y.abs() < 1e-9 {
        return None;
    }
    let t = -o.y / d.y;
    if t <= t_min || !t.is_finite() {
        return None;
    }
    let p = o + d * t;
    if (half_x > 0.0 && p.x.abs() > half_x) || (half_z > 0.0 && p.z.abs() > half_z) {
        return None;
    }
    // Two-sided: the normal faces the incoming ray.
    let n = if o.y >= 0.0 {
        Vec3::new(0.0, 1.0, 0.0)
    } else {
        Vec3::new(0.0, -1.0, 0.0)
    };
    Some((t, n))
}

pub(crate) fn intersect_sphere(o: Vec3, d: Vec3, radius: f32, t_min: f32) -> Option<(f32, Vec3)> {
    let a = d.dot(d);
    let b = o.dot(d);
    let c = o.dot(o) - radius * radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let mut t = (-b - sq) / a;
    if t <= t_min {
        t = (-b + sq) / a;
        if t <= t_min {
            return None;
        }
    }
    let n = (o + d * t).normalized()?;
    Some((t, n))
}

pub(crate) fn intersect_box(o: Vec3, d: Vec3, half: Vec3, t_min: f32) -> Option<(f32, Vec3)> {
    let oa = [o.x, o.y, o.z];
    let da = [d.x, d.y, d.z];
    let ha = [half.x, half.y, half.z];
    let mut t_near = f32::NEG_INFINITY;
    let mut t_far = f32::INFINITY;
    let mut near_axis = 0usize;
    let mut far_axis = 0usize;
    for i in 0..3 {
        if da[i].abs() < 1e-12 {
            if oa[i].abs() > ha[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / da[i];
        let mut t0 = (-ha[i] - oa[i]) * inv;
        let mut t1 = (ha[i] - oa[i]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            near_axis = i;
        }
        if t1 < t_far {
            t_far = t1;
            far_axis = i;
        }
    }
    if t_near > t_far {
        return None;
    }
    let (t, axis) = if t_near > t_min {
        (t_near, near_axis)
    } else if t_far > t_min {
        (t_far, far_axis)
    } else {
        return None;
    };
    let p = [oa[0] + da[0] * t, oa[1] + da[1] * t, oa[2] + da[2] * t];
    let mut n = [0.0f32; 3];
    n[axis] = if p[axis] >= 0.0 { 1.0 } else { -1.0 };
    Some((t, Vec3::new(n[0], n[1], n[2])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_round_trip() {
        let v = Vec3::new(0.3, -1.2, 2.5);
        let r = unrotate(rotate(v, 0.7, -0.3), 0.7, -0.3);
        assert!((r - v).norm() < 1e-5);
    }

    #[test]
    fn box_hit_from_front() {
        let (t, n) = intersect_box(Vec3::new(0.0, 0.0, 5.0), Vec3::new(0.0, 0.0, -1.0), Vec3::new(1.0, 1.0, 1.0), 1e-4).unwrap();
        assert!((t - 4.0).abs() < 1e-6);
        assert_eq!(n, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn sphere_hit_and_miss() {
        let (t, n) = intersect_sphere(Vec3::new(0.0, 0.0, 5.0), Vec3::new(0.0, 0.0, -1.0), 2.0, 1e-4).unwrap();
        assert!((t - 3.0).abs() < 1e-6);
        assert!((n - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-6);
        assert!(intersect_sphere(Vec3::new(0.0, 3.0, 5.0), Vec3::new(0.0, 0.0, -1.0), 2.0, 1e-4).is_none());
    }

    #[test]
    fn bounded_plane() {
        let o = Vec3::new(0.0, 2.0, 0.0);
        assert!(intersect_plane(o, Vec3::new(0.0, -1.0, 0.0), 1.0, 1.0, 1e-4).is_some());
        assert!(intersect_plane(o, Vec3::new(3.0, -1.0, 0.0), 1.0, 1.0, 1e-4).is_none());
        assert!(intersect_plane(o, Vec3::new(3.0, -1.0, 0.0), 0.0, 0.0, 1e-4).is_some());
    }
}
