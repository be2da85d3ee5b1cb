//! Environment lighting for split-sum image-based shading, and a
//! directional light used for validation.
//!
//! Equirectangular convention: texel `(x, y)` has center
//! `u = (x + 0.5) / W`, `v = (y + 0.5) / H`, azimuth `phi = 2 pi (u - 0.5)`,
//! polar angle `theta = pi v`, and direction
//! `(sin theta sin phi, cos theta, -sin theta cos phi)` (row 0 is +Y).

use std::f32::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{read_pfm, FloatImage};
use crate::math::{Real, Vec3};

pub const IRRADIANCE_SIZE: (usize, usize) = (32, 16);
pub const PREFILTER_LEVELS: usize = 6;
pub const PREFILTER_BASE: (usize, usize) = (128, 64);
pub const LUT_SIZE: usize = 32;
pub const PREFILTER_SAMPLES: u32 = 256;
pub const LUT_SAMPLES: u32 = 1024;

/// Smallest roughness used by the analytic (directional) BRDF.
pub const MIN_ROUGHNESS: f32 = 0.045;

pub fn uv_to_dir(u: f32, v: f32) -> Vec3 {
    let phi = 2.0 * PI * (u - 0.5);
    let theta = PI * v;
    Vec3::new(theta.sin() * phi.sin(), theta.cos(), -theta.sin() * phi.cos())
}

#[inline]
pub fn dir_to_uv<S: Real>(d: Vec3<S>) -> (S, S) {
    let phi = d.x.atan2(-d.z);
    let u = phi * (0.5 / PI) + 0.5;
    let v = d.y.clamp_c(-1.0, 1.0).acos() * (1.0 / PI);
    (u, v)
}

/// Bilinear lookup with wrap in u and clamp in v.
#[inline]
pub fn sample_equirect<S: Real>(map: &FloatImage, dir: Vec3<S>) -> [S; 3] {
    let (u, v) = dir_to_uv(dir);
    let (w, h) = (map.width, map.height);
    let x = u * w as f32 - 0.5;
    let x0f = x.re().floor();
    let fx = x - x0f;
    let x0 = (x0f as i64).rem_euclid(w as i64) as usize;
    let x1 = (x0 + 1) % w;
    let (y0, y1, fy) = if h == 1 {
        (0, 0, S::cst(0.0))
    } else {
        let y = (v * h as f32 - 0.5).clamp_c(0.0, (h - 1) as f32);
        let y0 = (y.re().floor() as usize).min(h - 2);
        (y0, y0 + 1, y - y0 as f32)
    };
    let a = map.get(x0, y0);
    let b = map.get(x1, y0);
    let c = map.get(x0, y1);
    let d = map.get(x1, y1);
    let gx = S::cst(1.0) - fx;
    let gy = S::cst(1.0) - fy;
    std::array::from_fn(|k| (fx * b[k] + gx * a[k]) * gy + (fx * d[k] + gx * c[k]) * fy)
}

fn sample_equirect_f32(map: &FloatImage, dir: Vec3) -> [f32; 3] {
    sample_equirect::<f32>(map, dir)
}

pub fn radical_inverse(i: u32) -> f32 {
    i.reverse_bits() as f32 * (1.0 / 4_294_967_296.0)
}

#[inline]
pub fn hammersley(i: u32, n: u32) -> (f32, f32) {
    (i as f32 / n as f32, radical_inverse(i))
}

/// GGX half-vector sample in tangent space (z = normal), alpha = roughness^2.
pub fn importance_sample_ggx(xi: (f32, f32), alpha: f32) -> Vec3 {
    let phi = 2.0 * PI * xi.0;
    let a2 = alpha * alpha;
    let cos2 = ((1.0 - xi.1) / (1.0 + (a2 - 1.0) * xi.1)).clamp(0.0, 1.0);
    let cos_t = cos2.sqrt();
    let sin_t = (1.0 - cos2).sqrt();
    Vec3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
}

fn tangent_frame(n: Vec3) -> (Vec3, Vec3) {
    let up = if n.z.abs() < 0.999 { Vec3::new(0.0, 0.0, 1.0) } else { Vec3::new(1.0, 0.0, 0.0) };
    let t = up.cross(n).normalize();
    (t, n.cross(t))
}

/// GGX normal distribution.
#[inline]
pub fn ggx_d<S: Real>(n_dot_h: S, alpha: S) -> S {
    let a2 = alpha * alpha;
    let f = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
    a2 / (f * f * PI)
}

/// Height-correlated Smith visibility, `G / (4 (n.v)(n.l))`.
#[inline]
pub fn smith_visibility<S: Real>(n_dot_v: S, n_dot_l: S, alpha: S) -> S {
    let a2 = alpha * alpha;
    let one_minus = S::cst(1.0) - a2;
    let gv = n_dot_l * (n_dot_v * n_dot_v * one_minus + a2).sqrt();
    let gl = n_dot_v * (n_dot_l * n_dot_l * one_minus + a2).sqrt();
    S::cst(0.5) / (gv + gl)
}

/// Schlick Fresnel for one channel.
#[inline]
pub fn schlick<S: Real>(f0: S, v_dot_h: S) -> S {
    let m = (S::cst(1.0) - v_dot_h).clamp_c(0.0, 1.0);
    f0 + (S::cst(1.0) - f0) * m.powi(5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentLight {
    pub radiance: FloatImage,
    /// Cosine-weighted irradiance with the 1/pi Lambert factor folded in.
    pub irradiance: FloatImage,
    /// GGX-prefiltered radiance, level `l` at roughness `l / (levels - 1)`.
    pub prefiltered: Vec<FloatImage>,
    /// Split-sum scale/bias `(A, B)`, row-major with n.v along x, roughness along y.
    pub brdf_lut: Vec<[f32; 2]>,
}

/// Area-averaging resample (bilinear when upsampling).
fn resample(src: &FloatImage, w: usize, h: usize) -> FloatImage {
    if src.width == w && src.height == h {
        return src.clone();
    }
    if src.width % w == 0 && src.height % h == 0 {
        let (fx, fy) = (src.width / w, src.height / h);
        let norm = 1.0 / (fx * fy) as f64;
        return FloatImage::from_fn(w, h, |x, y| {
            let mut acc = [0.0f64; 3];
            for sy in y * fy..(y + 1) * fy {
                for sx in x * fx..(x + 1) * fx {
                    let v = src.get(sx, sy);
                    for k in 0..3 {
                        acc[k] += v[k] as f64;
                    }
                }
            }
            acc.map(|a| (a * norm) as f32)
        });
    }
    FloatImage::from_fn(w, h, |x, y| {
        let d = uv_to_dir((x as f32 + 0.5) / w as f32, (y as f32 + 0.5) / h as f32);
        sample_equirect_f32(src, d)
    })
}

impl EnvironmentLight {
    pub fn from_radiance(radiance: FloatImage) -> Result<Self> {
        if radiance.width < 2 || radiance.height < 2 {
            return Err(Error::InvalidArgument("environment map must be at least 2x2".into()));
        }
        if let Some(i) = radiance.data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "environment radiance must be finite and non-negative (float {i} is {})",
                radiance.data[i]
            )));
        }
        let irradiance = compute_irradiance(&radiance);
        let prefiltered = compute_prefiltered(&radiance);
        let brdf_lut = compute_brdf_lut();
        Ok(EnvironmentLight {
            radiance,
            irradiance,
            prefiltered,
            brdf_lut,
        })
    }

    pub fn constant(value: [f32; 3]) -> Self {
        Self::from_radiance(FloatImage::from_fn(64, 32, |_, _| value)).expect("valid constant map")
    }

    #[inline]
    pub fn irradiance<S: Real>(&self, n: Vec3<S>) -> [S; 3] {
        sample_equirect(&self.irradiance, n)
    }

    /// Trilinear lookup across prefilter levels.
    #[inline]
    pub fn prefiltered<S: Real>(&self, dir: Vec3<S>, roughness: S) -> [S; 3] {
        let top = (self.prefiltered.len() - 1) as f32;
        let level = roughness.clamp_c(0.0, 1.0) * top;
        let l0 = (level.re().floor() as usize).min(self.prefiltered.len() - 2);
        let t = level - l0 as f32;
        let a = sample_equirect(&self.prefiltered[l0], dir);
        let b = sample_equirect(&self.prefiltered[l0 + 1], dir);
        std::array::from_fn(|k| a[k] + (b[k] - a[k]) * t)
    }

    /// Bilinear `(A, B)` lookup, clamp-to-edge.
    #[inline]
    pub fn brdf<S: Real>(&self, n_dot_v: S, roughness: S) -> (S, S) {
        let n = LUT_SIZE;
        let axis = |c: S| {
            let x = (c * n as f32 - 0.5).clamp_c(0.0, (n - 1) as f32);
            let i0 = (x.re().floor() as usize).min(n - 2);
            (i0, x - i0 as f32)
        };
        let (x0, fx) = axis(n_dot_v);
        let (y0, fy) = axis(roughness);
        let at = |x: usize, y: usize| self.brdf_lut[y * n + x];
        let (a, b, c, d) = (at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1));
        let gx = S::cst(1.0) - fx;
        let gy = S::cst(1.0) - fy;
        let lerp = |k: usize| (fx * b[k] + gx * a[k]) * gy + (fx * d[k] + gx * c[k]) * fy;
        (lerp(0), lerp(1))
    }

    pub fn eval_diffuse_irradiance(&self, world_normal: Vec3) -> [f32; 3] {
        self.irradiance(world_normal)
    }

    /// Split-sum specular: `prefiltered(r, roughness) * (k_s A + B)`.
    pub fn eval_specular(&self, reflect_dir: Vec3, n_dot_v: f32, roughness: f32, k_s: [f32; 3]) -> [f32; 3] {
        let pre = self.prefiltered(reflect_dir, roughness);
        let (a, b) = self.brdf(n_dot_v, roughness);
        std::array::from_fn(|k| pre[k] * (k_s[k] * a + b))
    }
}

pub fn load_envmap(path: &Path) -> Result<EnvironmentLight> {
    let img = read_pfm(path)?;
    EnvironmentLight::from_radiance(img).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::parse(path, 0, m),
        other => other,
    })
}

fn compute_irradiance(radiance: &FloatImage) -> FloatImage {
    let src = resample(radiance, 64, 32);
    // per-texel direction and solid angle of the source grid
    let (sw, sh) = (src.width, src.height);
    let mut samples = Vec::with_capacity(sw * sh);
    for y in 0..sh {
        let t0 = PI as f64 * y as f64 / sh as f64;
        let t1 = PI as f64 * (y + 1) as f64 / sh as f64;
        let solid = (2.0 * std::f64::consts::PI / sw as f64) * (t0.cos() - t1.cos());
        for x in 0..sw {
            let d = uv_to_dir((x as f32 + 0.5) / sw as f32, (y as f32 + 0.5) / sh as f32);
            samples.push((d, solid, src.get(x, y)));
        }
    }
    let (w, h) = IRRADIANCE_SIZE;
    let data: Vec<[f32; 3]> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let n = uv_to_dir(((i % w) as f32 + 0.5) / w as f32, ((i / w) as f32 + 0.5) / h as f32);
            let mut acc = [0.0f64; 3];
            for (d, solid, l) in &samples {
                let c = n.dot(*d);
                if c > 0.0 {
                    let wgt = c as f64 * solid;
                    for k in 0..3 {
                        acc[k] += wgt * l[k] as f64;
                    }
                }
            }
            acc.map(|a| (a / std::f64::consts::PI) as f32)
        })
        .collect();
    FloatImage {
        width: w,
        height: h,
        data: data.into_iter().flatten().collect(),
    }
}

/// Trilinear lookup into a box-filtered mip chain.
fn sample_mips(mips: &[FloatImage], dir: Vec3, lod: f32) -> [f32; 3] {
    let lod = lod.clamp(0.0, (mips.len() - 1) as f32);
    let l0 = (lod.floor() as usize).min(mips.len() - 1);
    let l1 = (l0 + 1).min(mips.len() - 1);
    let t = lod - l0 as f32;
    let a = sample_equirect_f32(&mips[l0], dir);
    if t == 0.0 || l0 == l1 {
        return a;
    }
    let b = sample_equirect_f32(&mips[l1], dir);
    std::array::from_fn(|k| a[k] + (b[k] - a[k]) * t)
}

fn compute_prefiltered(radiance: &FloatImage) -> Vec<FloatImage> {
    let (bw, bh) = PREFILTER_BASE;
    let base = resample(radiance, bw, bh);
    let mut mips = vec![base.clone()];
    while mips.last().is_some_and(|m| m.height > 1) {
        let m = mips.last().unwrap();
        mips.push(resample(m, m.width / 2, m.height / 2));
    }
    let texel_solid = 4.0 * PI / (bw * bh) as f32;
    let mut levels = vec![base];
    for l in 1..PREFILTER_LEVELS {
        let (w, h) = (bw >> l, bh >> l);
        let roughness = l as f32 / (PREFILTER_LEVELS - 1) as f32;
        let alpha = roughness * roughness;
        let data: Vec<[f32; 3]> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let n = uv_to_dir(((i % w) as f32 + 0.5) / w as f32, ((i / w) as f32 + 0.5) / h as f32);
                let (t, b) = tangent_frame(n);
                let mut acc = [0.0f64; 3];
                let mut wsum = 0.0f64;
                for s in 0..PREFILTER_SAMPLES {
                    let hs = importance_sample_ggx(hammersley(s, PREFILTER_SAMPLES), alpha);
                    let hw = t.scale(hs.x) + b.scale(hs.y) + n.scale(hs.z);
                    let v_dot_h = hw.dot(n);
                    let l_dir = hw.scale(2.0 * v_dot_h) - n;
                    let n_dot_l = n.dot(l_dir);
                    if n_dot_l <= 0.0 {
                        continue;
                    }
                    let n_dot_h = hs.z;
                    let pdf = ggx_d(n_dot_h, alpha) * 0.25;
                    let sample_solid = 1.0 / (PREFILTER_SAMPLES as f32 * pdf.max(1e-8));
                    let lod = 0.5 * (sample_solid / texel_solid).log2() + 1.0;
                    let c = sample_mips(&mips, l_dir.normalize(), lod);
                    for k in 0..3 {
                        acc[k] += (c[k] * n_dot_l) as f64;
                    }
                    wsum += n_dot_l as f64;
                }
                acc.map(|a| (a / wsum.max(1e-12)) as f32)
            })
            .collect();
        levels.push(FloatImage {
            width: w,
            height: h,
            data: data.into_iter().flatten().collect(),
        });
    }
    levels
}

/// Split-sum BRDF integral for one `(n.v, roughness)` pair.
pub fn integrate_brdf(n_dot_v: f32, roughness: f32, samples: u32) -> [f32; 2] {
    let alpha = roughness * roughness;
    let v = Vec3::new((1.0 - n_dot_v * n_dot_v).max(0.0).sqrt(), 0.0, n_dot_v);
    let mut a = 0.0f64;
    let mut b = 0.0f64;
    for s in 0..samples {
        let h = importance_sample_ggx(hammersley(s, samples), alpha);
        let v_dot_h = v.dot(h);
        let l = h.scale(2.0 * v_dot_h) - v;
        let n_dot_l = l.z;
        let n_dot_h = h.z;
        if n_dot_l > 0.0 && v_dot_h > 0.0 {
            let vis = smith_visibility(n_dot_v, n_dot_l, alpha);
            let gv = 4.0 * vis * n_dot_l * v_dot_h / n_dot_h;
            let fc = (1.0 - v_dot_h).powi(5);
            a += ((1.0 - fc) * gv) as f64;
            b += (fc * gv) as f64;
        }
    }
    [(a / samples as f64) as f32, (b / samples as f64) as f32]
}

fn compute_brdf_lut() -> Vec<[f32; 2]> {
    let n = LUT_SIZE;
    (0..n * n)
        .into_par_iter()
        .map(|i| {
            let nv = ((i % n) as f32 + 0.5) / n as f32;
            let r = ((i / n) as f32 + 0.5) / n as f32;
            integrate_brdf(nv, r, LUT_SAMPLES)
        })
        .collect()
}

/// Validation light: one delta direction plus a constant ambient term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalLight {
    /// Unit vector pointing from the light toward the surface.
    pub direction: Vec3,
    pub radiance: [f32; 3],
    pub ambient: [f32; 3],
}

impl DirectionalLight {
    pub fn new(direction: Vec3, radiance: [f32; 3], ambient: [f32; 3]) -> Result<Self> {
        let len = direction.length();
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::InvalidArgument("light direction must be non-zero".into()));
        }
        if radiance.iter().chain(&ambient).any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("light radiance must be non-negative".into()));
        }
        Ok(DirectionalLight {
            direction: direction.scale(1.0 / len),
            radiance,
            ambient,
        })
    }

    /// Parses `dx,dy,dz,r,g,b,ar,ag,ab`.
    pub fn parse(spec: &str) -> Result<Self> {
        let vals: Vec<f32> = spec
            .split(',')
            .map(|s| s.trim().parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("bad directional light '{spec}'")))?;
        if vals.len() != 9 {
            return Err(Error::InvalidArgument(format!(
                "directional light needs 9 comma-separated values, got {}",
                vals.len()
            )));
        }
        DirectionalLight::new(
            Vec3::new(vals[0], vals[1], vals[2]),
            [vals[3], vals[4], vals[5]],
            [vals[6], vals[7], vals[8]],
        )
    }
}

/// Material inputs to the shading model, generic so the same code yields
/// values and derivatives.
#[derive(Debug, Clone, Copy)]
pub struct ShadingInputs<S> {
    pub k_d: [S; 3],
    pub roughness: S,
    pub metallic: S,
    /// Unit world-space shading normal.
    pub normal: Vec3<S>,
}

impl<S: Real> ShadingInputs<S> {
    #[inline]
    pub fn k_s(&self) -> [S; 3] {
        let m = self.metallic;
        self.k_d.map(|d| (S::cst(1.0) - m) * 0.04 + m * d)
    }

    #[inline]
    fn diffuse_albedo(&self) -> [S; 3] {
        let w = S::cst(1.0) - self.metallic;
        self.k_d.map(|d| d * w)
    }
}

/// Lambert plus GGX/Schlick/Smith under one directional light, plus
/// ambient times the diffuse albedo. `view` points from surface to eye.
#[inline]
pub fn shade_directional<S: Real>(light: &DirectionalLight, m: &ShadingInputs<S>, view: Vec3) -> [S; 3] {
    let n = m.normal;
    let l = Vec3::<S>::lift(-light.direction);
    let v = Vec3::<S>::lift(view);
    let diffuse_albedo = m.diffuse_albedo();
    let ambient: [S; 3] = std::array::from_fn(|k| diffuse_albedo[k] * light.ambient[k]);
    let n_dot_l = n.dot(l);
    if n_dot_l.re() <= 0.0 {
        return ambient;
    }
    let n_dot_v = n.dot(v).max_c(1e-4);
    let h = (l + v).normalize();
    let n_dot_h = n.dot(h).max_c(0.0);
    let v_dot_h = v.dot(h).max_c(0.0);
    let r = m.roughness.max_c(MIN_ROUGHNESS);
    let alpha = r * r;
    let d = ggx_d(n_dot_h, alpha);
    let vis = smith_visibility(n_dot_v, n_dot_l, alpha);
    let k_s = m.k_s();
    std::array::from_fn(|k| {
        let f = schlick(k_s[k], v_dot_h);
        let spec = d * vis * f;
        (diffuse_albedo[k] * (1.0 / PI) + spec) * n_dot_l * light.radiance[k] + ambient[k]
    })
}

/// Split-sum image-based shading.
#[inline]
pub fn shade_environment<S: Real>(env: &EnvironmentLight, m: &ShadingInputs<S>, view: Vec3) -> [S; 3] {
    let n = m.normal;
    let v = Vec3::<S>::lift(view);
    let n_dot_v_raw = n.dot(v);
    let n_dot_v = n_dot_v_raw.max_c(1e-4);
    let refl = n * (n_dot_v_raw * 2.0) - v;
    let irr = env.irradiance(n);
    let pre = env.prefiltered(refl, m.roughness);
    let (a, b) = env.brdf(n_dot_v, m.roughness.clamp_c(0.0, 1.0));
    let k_s = m.k_s();
    let diffuse_albedo = m.diffuse_albedo();
    std::array::from_fn(|k| diffuse_albedo[k] * irr[k] + pre[k] * (k_s[k] * a + b))
}

/// Either lighting mode; shared by renderer and evaluation.
#[derive(Debug, Clone)]
pub enum Light {
    Environment(Arc<EnvironmentLight>),
    Directional(DirectionalLight),
}

impl Light {
    #[inline]
    pub fn shade<S: Real>(&self, m: &ShadingInputs<S>, view: Vec3) -> [S; 3] {
        match self {
            Light::Environment(env) => shade_environment(env, m, view),
            Light::Directional(d) => shade_directional(d, m, view),
        }
    }

    pub fn eval_directional(&self, m: &ShadingInputs<f32>, view: Vec3) -> Option<[f32; 3]> {
        match self {
            Light::Directional(d) => Some(shade_directional(d, m, view)),
            Light::Environment(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Dual;
    use std::sync::OnceLock;

    fn white() -> &'static EnvironmentLight {
        static ENV: OnceLock<EnvironmentLight> = OnceLock::new();
        ENV.get_or_init(|| EnvironmentLight::constant([1.0; 3]))
    }

    fn upper_white() -> &'static EnvironmentLight {
        static ENV: OnceLock<EnvironmentLight> = OnceLock::new();
        ENV.get_or_init(|| {
            EnvironmentLight::from_radiance(FloatImage::from_fn(128, 64, |_, y| {
                if y < 32 { [1.0; 3] } else { [0.0; 3] }
            }))
            .unwrap()
        })
    }

    fn fib_dirs(n: usize) -> Vec<Vec3> {
        let golden = PI * (3.0 - 5.0f32.sqrt());
        (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f32 + 0.5) / n as f32;
                let r = (1.0 - y * y).sqrt();
                let t = golden * i as f32;
                Vec3::new(r * t.cos(), y, r * t.sin())
            })
            .collect()
    }

    #[test]
    fn uv_dir_round_trip() {
        for d in fib_dirs(200) {
            let (u, v) = dir_to_uv(d);
            let back = uv_to_dir(u, v);
            assert!((back - d).max_abs() < 1e-5);
        }
    }

    #[test]
    fn constant_environment_irradiance_and_prefilter() {
        let env = white();
        assert!(env.irradiance.data.iter().all(|v| (v - 1.0).abs() < 0.02));
        assert_eq!(env.prefiltered.len(), 6);
        assert_eq!((env.prefiltered[0].width, env.prefiltered[5].width), (128, 4));
        for level in &env.prefiltered {
            assert!(level.data.iter().all(|v| (v - 1.0).abs() < 0.02));
        }
        for d in fib_dirs(50) {
            assert!(env.eval_diffuse_irradiance(d).iter().all(|v| (v - 1.0).abs() < 0.02));
        }
    }

    #[test]
    fn lut_bounds_and_mirror_limit() {
        let env = white();
        for ab in &env.brdf_lut {
            assert!(ab[0] >= 0.0 && ab[1] >= 0.0 && ab[0] + ab[1] <= 1.05, "{ab:?}");
        }
        let (a, b) = env.brdf(1.0, 0.0);
        assert!((a - 1.0).abs() < 0.05 && b.abs() < 0.05, "A={a} B={b}");
    }

    /// Numeric hemisphere integral of the half-white environment.
    fn hemisphere_oracle(n: Vec3) -> f64 {
        let steps = 400;
        let mut acc = 0.0f64;
        for i in 0..steps {
            let theta = (i as f64 + 0.5) / steps as f64 * std::f64::consts::PI;
            for j in 0..2 * steps {
                let phi = (j as f64 + 0.5) / (2 * steps) as f64 * 2.0 * std::f64::consts::PI;
                let d = [theta.sin() * phi.sin(), theta.cos(), -theta.sin() * phi.cos()];
                if d[1] <= 0.0 {
                    continue;
                }
                let c = n.x as f64 * d[0] + n.y as f64 * d[1] + n.z as f64 * d[2];
                if c > 0.0 {
                    let dw = (std::f64::consts::PI / steps as f64)
                        * (std::f64::consts::PI / steps as f64)
                        * theta.sin();
                    acc += c * dw;
                }
            }
        }
        acc / std::f64::consts::PI
    }

    #[test]
    fn upper_hemisphere_irradiance() {
        let env = upper_white();
        let up = env.eval_diffuse_irradiance(Vec3::new(0.0, 1.0, 0.0));
        assert!((up[0] - 1.0).abs() < 0.02, "{up:?}");
        assert!((hemisphere_oracle(Vec3::new(0.0, 1.0, 0.0)) - 1.0).abs() < 0.01);
        let down = env.eval_diffuse_irradiance(Vec3::new(0.0, -1.0, 0.0));
        assert!(down[0] <= 0.05, "{down:?}");
        let side = Vec3::new(1.0, 0.0, 0.0);
        let got = env.eval_diffuse_irradiance(side)[0] as f64;
        assert!((got - hemisphere_oracle(side)).abs() < 0.03, "{got}");
    }

    #[test]
    fn irradiance_mirror_symmetry() {
        // env symmetric under x -> -x
        let env = EnvironmentLight::from_radiance(FloatImage::from_fn(128, 64, |x, y| {
            let d = uv_to_dir((x as f32 + 0.5) / 128.0, (y as f32 + 0.5) / 64.0);
            [d.x.abs() + 0.2 * d.y.max(0.0), 0.5, (d.z + 1.0) * 0.5]
        }))
        .unwrap();
        for d in fib_dirs(40) {
            let a = env.eval_diffuse_irradiance(d);
            let b = env.eval_diffuse_irradiance(Vec3::new(-d.x, d.y, d.z));
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 0.02);
            }
        }
    }

    #[test]
    fn specular_mirror_limit_and_bound() {
        let env = white();
        let n = Vec3::new(0.0, 0.0, 1.0);
        let s = env.eval_specular(n, 1.0, 0.0, [1.0; 3]);
        assert!(s.iter().all(|v| (v - 1.0).abs() < 0.05), "{s:?}");
        let b_max = env.brdf_lut.iter().map(|ab| ab[1]).fold(0.0f32, f32::max);
        let s = env.eval_specular(n, 1.0, 0.5, [0.0; 3]);
        assert!(s.iter().all(|v| *v <= b_max * 1.02));
    }

    #[test]
    fn specular_non_increasing_in_roughness_for_a_bright_texel() {
        let env = EnvironmentLight::from_radiance(FloatImage::from_fn(128, 64, |x, y| {
            if (60..68).contains(&x) && (28..36).contains(&y) { [50.0; 3] } else { [0.0; 3] }
        }))
        .unwrap();
        let dir = uv_to_dir(0.5, 0.5);
        let mut prev = f32::MAX;
        for i in 0..=20 {
            let r = i as f32 / 20.0;
            let s = env.eval_specular(dir, 1.0, r, [1.0; 3])[0];
            assert!(s <= prev + 1e-4, "roughness {r}: {s} > {prev}");
            prev = s;
        }
    }

    fn inputs(k_d: [f32; 3], roughness: f32, metallic: f32, normal: Vec3) -> ShadingInputs<f32> {
        ShadingInputs { k_d, roughness, metallic, normal }
    }

    #[test]
    fn directional_lambert_hand_value() {
        let light = DirectionalLight::new(Vec3::new(0.0, 0.0, -1.0), [PI; 3], [0.0; 3]).unwrap();
        let n = Vec3::new(0.0, 0.0, 1.0);
        let m = inputs([0.5; 3], 1.0, 0.0, n);
        let out = shade_directional(&light, &m, n);
        for v in out {
            assert!(v >= 0.5 && v < 0.6, "{v}");
        }
        let m_no_spec = ShadingInputs { k_d: [0.5; 3], ..m };
        let diffuse_only = m_no_spec.diffuse_albedo()[0] / PI * PI;
        assert!((diffuse_only - 0.5).abs() < 1e-6);
    }

    #[test]
    fn directional_backlit_is_ambient_only() {
        let light = DirectionalLight::new(Vec3::new(0.0, 0.0, 1.0), [3.0; 3], [0.1, 0.2, 0.3]).unwrap();
        let m = inputs([0.5, 0.6, 0.7], 0.4, 0.25, Vec3::new(0.0, 0.0, 1.0));
        let out = shade_directional(&light, &m, Vec3::new(0.0, 0.0, 1.0));
        for k in 0..3 {
            let want = [0.1, 0.2, 0.3][k] * [0.5, 0.6, 0.7][k] * 0.75;
            assert!((out[k] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn schlick_grazing_limit() {
        for f0 in [0.04f32, 0.3, 0.9] {
            assert!((schlick(f0, 1e-6) - 1.0).abs() < 1e-4);
            assert!((schlick(f0, 1.0) - f0).abs() < 1e-7);
        }
    }

    #[test]
    fn lambertian_energy_bound() {
        let env = white();
        for d in fib_dirs(64) {
            let n = Vec3::new(0.0, 1.0, 0.0);
            if d.y <= 0.0 {
                continue;
            }
            let out = shade_environment(env, &inputs([1.0; 3], 1.0, 0.0, n), d);
            assert!(out.iter().all(|v| *v <= 1.1), "{out:?} at {d:?}");
        }
    }

    #[test]
    fn environment_gradients_match_finite_differences() {
        let env = EnvironmentLight::from_radiance(FloatImage::from_fn(64, 32, |x, y| {
            let d = uv_to_dir((x as f32 + 0.5) / 64.0, (y as f32 + 0.5) / 32.0);
            [1.0 + 0.5 * d.y, 0.8 + 0.3 * d.x, 0.6 + 0.2 * d.z]
        }))
        .unwrap();
        let view = Vec3::new(0.3, 0.4, 0.866).normalize();
        let eval = |p: [f64; 8]| -> [f64; 3] {
            let n = Vec3::new(p[5] as f32, p[6] as f32, p[7] as f32).normalize();
            let m = inputs([p[0] as f32, p[1] as f32, p[2] as f32], p[3] as f32, p[4] as f32, n);
            shade_environment(&env, &m, view).map(|v| v as f64)
        };
        let p0 = [0.6, 0.5, 0.4, 0.37, 0.3, 0.1, 0.2, 0.95];
        let dual = {
            let raw = Vec3::new(
                Dual::var(p0[5] as f32, 5),
                Dual::var(p0[6] as f32, 6),
                Dual::var(p0[7] as f32, 7),
            );
            let m = ShadingInputs {
                k_d: [0, 1, 2].map(|i| Dual::var(p0[i] as f32, i)),
                roughness: Dual::var(p0[3] as f32, 3),
                metallic: Dual::var(p0[4] as f32, 4),
                normal: raw.normalize(),
            };
            shade_environment(&env, &m, view)
        };
        for i in 0..8 {
            let h = 1e-3;
            let mut pp = p0;
            pp[i] += h;
            let mut pm = p0;
            pm[i] -= h;
            let (fp, fm) = (eval(pp), eval(pm));
            for k in 0..3 {
                let fd = (fp[k] - fm[k]) / (2.0 * h);
                let an = dual[k].d[i] as f64;
                assert!(
                    (fd - an).abs() <= 3e-3 * fd.abs().max(an.abs()).max(0.05),
                    "param {i} ch {k}: fd {fd} vs {an}"
                );
            }
        }
    }
}
