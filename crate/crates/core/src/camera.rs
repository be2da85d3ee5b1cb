//! Spherical camera rigs and pinhole projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat4, Vec3};

pub const RIG_DISTANCE: f32 = 3.25;
pub const RIG_FOV_Y_DEG: f32 = 10.0;
pub const NEAR: f32 = 0.1;
pub const FAR: f32 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub fov_y_deg: f32,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RigPreset {
    Train,
    Eval,
}

impl RigPreset {
    /// (elevation rings, cameras per ring)
    pub fn layout(self) -> (usize, usize) {
        match self {
            RigPreset::Train => (15, 50),
            RigPreset::Eval => (6, 40),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElevationRange {
    pub min_deg: f32,
    pub max_deg: f32,
}

impl Default for ElevationRange {
    fn default() -> Self {
        ElevationRange {
            min_deg: -75.0,
            max_deg: 75.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub preset: RigPreset,
    pub cameras: Vec<Camera>,
}

impl CameraRig {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

pub fn build_rig(preset: RigPreset, resolution: usize) -> Result<CameraRig> {
    build_rig_with(preset, resolution, ElevationRange::default())
}

/// Rings of cameras at evenly spaced elevations (inclusive range), each ring
/// evenly spaced in azimuth and rotated by half a step per ring index.
/// The eval rig carries an extra quarter-step azimuth offset so it never
/// coincides with a train camera.
pub fn build_rig_with(preset: RigPreset, resolution: usize, range: ElevationRange) -> Result<CameraRig> {
    if resolution < 16 {
        return Err(Error::InvalidArgument(format!(
            "rig resolution must be at least 16, got {resolution}"
        )));
    }
    if !(range.min_deg > -90.0 && range.max_deg < 90.0 && range.min_deg <= range.max_deg) {
        return Err(Error::InvalidArgument(format!(
            "elevation range [{}, {}] must lie strictly inside (-90, 90)",
            range.min_deg, range.max_deg
        )));
    }
    let (rings, per_ring) = preset.layout();
    let step = 360.0 / per_ring as f64;
    let offset = match preset {
        RigPreset::Train => 0.0,
        RigPreset::Eval => step / 4.0,
    };
    let mut cameras = Vec::with_capacity(rings * per_ring);
    for k in 0..rings {
        let t = if rings == 1 { 0.5 } else { k as f64 / (rings - 1) as f64 };
        let elev = (range.min_deg as f64 + t * (range.max_deg - range.min_deg) as f64).to_radians();
        let phase = k as f64 * step / 2.0 + offset;
        for j in 0..per_ring {
            let az = ((j as f64 * step + phase) % 360.0).to_radians();
            let d = RIG_DISTANCE as f64;
            let position = Vec3::new(
                (d * elev.cos() * az.sin()) as f32,
                (d * elev.sin()) as f32,
                (d * elev.cos() * az.cos()) as f32,
            );
            cameras.push(Camera {
                position,
                look_at: Vec3::ZERO,
                up: Vec3::new(0.0, 1.0, 0.0),
                fov_y_deg: RIG_FOV_Y_DEG,
                width: resolution,
                height: resolution,
            });
        }
    }
    Ok(CameraRig { preset, cameras })
}

impl Camera {
    pub fn with_resolution(&self, width: usize, height: usize) -> Camera {
        Camera { width, height, ..*self }
    }

    /// Right-handed look-at view matrix.
    pub fn view(&self) -> Mat4 {
        let f = (self.look_at - self.position).normalize();
        let s = f.cross(self.up).normalize();
        let u = s.cross(f);
        let e = self.position;
        Mat4::from_rows([
            [s.x, s.y, s.z, -s.dot(e)],
            [u.x, u.y, u.z, -u.dot(e)],
            [-f.x, -f.y, -f.z, f.dot(e)],
            [0.0, 0.0, 0.0, 1.0],
        ])
    }

    /// OpenGL-style perspective projection (NDC z in [-1, 1]).
    pub fn projection(&self) -> Mat4 {
        let f = 1.0 / (self.fov_y_deg.to_radians() * 0.5).tan();
        let aspect = self.width as f32 / self.height as f32;
        Mat4::from_rows([
            [f / aspect, 0.0, 0.0, 0.0],
            [0.0, f, 0.0, 0.0],
            [0.0, 0.0, (FAR + NEAR) / (NEAR - FAR), 2.0 * FAR * NEAR / (NEAR - FAR)],
            [0.0, 0.0, -1.0, 0.0],
        ])
    }

    pub fn view_proj(&self) -> (Mat4, Mat4) {
        (self.view(), self.projection())
    }

    pub fn json(&self) -> CameraJson {
        CameraJson {
            position: self.position.to_array(),
            look_at: self.look_at.to_array(),
            up: self.up.to_array(),
            fov_y_deg: self.fov_y_deg,
            width: self.width,
            height: self.height,
        }
    }
}

/// Serialized form written by `rig --dump`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    pub position: [f32; 3],
    pub look_at: [f32; 3],
    pub up: [f32; 3],
    pub fov_y_deg: f32,
    pub width: usize,
    pub height: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn project(cam: &Camera, p: Vec3) -> [f32; 3] {
        let (v, pr) = cam.view_proj();
        let c = pr.transform(v.transform([p.x, p.y, p.z, 1.0]));
        [c[0] / c[3], c[1] / c[3], c[2] / c[3]]
    }

    #[test]
    fn rig_sizes_and_distance() {
        let train = build_rig(RigPreset::Train, 64).unwrap();
        assert_eq!(train.len(), 750);
        assert!(train
            .cameras
            .iter()
            .all(|c| (c.position.length() - 3.25).abs() < 1e-6 && c.fov_y_deg == 10.0));
        assert_eq!(build_rig(RigPreset::Eval, 64).unwrap().len(), 240);
        assert!(build_rig(RigPreset::Train, 8).is_err());
    }

    #[test]
    fn rig_has_no_duplicates_and_is_disjoint() {
        let train = build_rig(RigPreset::Train, 64).unwrap();
        let eval = build_rig(RigPreset::Eval, 64).unwrap();
        let all: Vec<Vec3> = train.cameras.iter().chain(&eval.cameras).map(|c| c.position).collect();
        let mut min_d = f32::MAX;
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                min_d = min_d.min((all[i] - all[j]).length());
            }
        }
        assert!(min_d > 1e-3, "min pairwise distance {min_d}");
    }

    #[test]
    fn rig_is_deterministic() {
        assert_eq!(build_rig(RigPreset::Train, 32).unwrap(), build_rig(RigPreset::Train, 32).unwrap());
    }

    #[test]
    fn origin_projects_to_center_and_near_plane_to_minus_one() {
        let cam = Camera {
            position: Vec3::new(0.0, 0.0, 3.25),
            look_at: Vec3::ZERO,
            up: Vec3::new(0.0, 1.0, 0.0),
            fov_y_deg: 10.0,
            width: 64,
            height: 64,
        };
        let o = project(&cam, Vec3::ZERO);
        assert!(o[0].abs() < 1e-6 && o[1].abs() < 1e-6);
        let n = project(&cam, Vec3::new(0.0, 0.0, 3.25 - NEAR));
        assert!((n[2] + 1.0).abs() < 1e-5, "{}", n[2]);
    }

    #[test]
    fn projection_matches_homogeneous_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let rig = build_rig(RigPreset::Eval, 40).unwrap();
        let cam = rig.cameras[17].with_resolution(80, 40);
        // independent f64 construction: camera basis + pinhole equations
        let e = cam.position.to_f64();
        let fwd = {
            let d = [-e[0], -e[1], -e[2]];
            let l = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            [d[0] / l, d[1] / l, d[2] / l]
        };
        let cross = |a: [f64; 3], b: [f64; 3]| {
            [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
        };
        let norm = |a: [f64; 3]| {
            let l = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            [a[0] / l, a[1] / l, a[2] / l]
        };
        let right = norm(cross(fwd, [0.0, 1.0, 0.0]));
        let up = cross(right, fwd);
        let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let t = (5.0f64.to_radians()).tan();
        let (n, f) = (0.1f64, 100.0f64);
        for _ in 0..20 {
            let p = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let d = [p.x as f64 - e[0], p.y as f64 - e[1], p.z as f64 - e[2]];
            let depth = dot(d, fwd);
            let x = dot(d, right) / (depth * t * 2.0);
            let y = dot(d, up) / (depth * t);
            let z = (f + n) / (f - n) - 2.0 * f * n / ((f - n) * depth);
            let got = project(&cam, p);
            assert!((got[0] as f64 - x).abs() < 1e-5);
            assert!((got[1] as f64 - y).abs() < 1e-5);
            assert!((got[2] as f64 - z).abs() < 1e-5);
        }
    }
}
