//! Texture storage and the texel-space operators used by the optimizer:
//! bilinear sampling (and its scatter), average pooling, total variation
//! and bicubic upsampling.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image;
use crate::math::Vec3;
use crate::oracle::{SrOracle, SrRequest, TEXTURE_VIEW_ID};

/// Row-major, channel-interleaved float texture with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Up to four texels touched by one bilinear lookup, with their weights.
/// Zero-weight taps are dropped, so `len` may be 1, 2 or 4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTaps {
    pub texels: [usize; 4],
    pub weights: [f32; 4],
    pub len: usize,
}

impl BilinearTaps {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f32)> + '_ {
        self.texels[..self.len]
            .iter()
            .copied()
            .zip(self.weights[..self.len].iter().copied())
    }
}

/// Clamp-to-edge bilinear addressing with texel centers at `(i + 0.5) / W`.
pub fn bilinear_taps(width: usize, height: usize, uv: [f32; 2]) -> BilinearTaps {
    let (x0, x1, fx) = axis_taps(uv[0], width);
    let (y0, y1, fy) = axis_taps(uv[1], height);
    let cand = [
        (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * width + x1, fx * (1.0 - fy)),
        (y1 * width + x0, (1.0 - fx) * fy),
        (y1 * width + x1, fx * fy),
    ];
    let mut taps = BilinearTaps {
        texels: [0; 4],
        weights: [0.0; 4],
        len: 0,
    };
    for (t, w) in cand {
        if w != 0.0 {
            taps.texels[taps.len] = t;
            taps.weights[taps.len] = w;
            taps.len += 1;
        }
    }
    taps
}

fn axis_taps(u: f32, n: usize) -> (usize, usize, f32) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let x = (u * n as f32 - 0.5).clamp(0.0, (n - 1) as f32);
    let i0 = (x.floor() as usize).min(n - 2);
    let f = x - i0 as f32;
    (i0, i0 + 1, f)
}

/// Catmull-Rom kernel (a = -0.5).
pub fn catmull_rom(x: f32) -> f32 {
    const A: f32 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

impl TextureMap {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, &vec![0.0; channels])
    }

    pub fn filled(width: usize, height: usize, value: &[f32]) -> Self {
        let mut data = Vec::with_capacity(width * height * value.len());
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        TextureMap {
            width,
            height,
            channels: value.len(),
            data,
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || !(1..=4).contains(&channels) {
            return Err(Error::InvalidArgument(format!(
                "texture shape {width}x{height}x{channels} is invalid"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "texture data has {} values, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(TextureMap {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize) -> Vec<f32>,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                debug_assert_eq!(v.len(), channels);
                data.extend_from_slice(&v);
            }
        }
        TextureMap {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn texel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn texel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn texel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, o: &TextureMap) -> bool {
        self.width == o.width && self.height == o.height && self.channels == o.channels
    }

    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Extracts one channel as a single-channel map.
    pub fn channel(&self, c: usize) -> TextureMap {
        TextureMap {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    pub fn sample(&self, uv: [f32; 2]) -> Vec<f32> {
        bilinear_sample(self, uv)
    }

    pub fn flip_horizontal(&self) -> TextureMap {
        TextureMap::from_fn(self.width, self.height, self.channels, |x, y| {
            self.texel(self.width - 1 - x, y).to_vec()
        })
    }

    pub fn flip_vertical(&self) -> TextureMap {
        TextureMap::from_fn(self.width, self.height, self.channels, |x, y| {
            self.texel(x, self.height - 1 - y).to_vec()
        })
    }
}

pub fn bilinear_sample(map: &TextureMap, uv: [f32; 2]) -> Vec<f32> {
    let taps = bilinear_taps(map.width, map.height, uv);
    let mut out = vec![0.0f32; map.channels];
    for (t, w) in taps.iter() {
        let base = t * map.channels;
        for (c, o) in out.iter_mut().enumerate() {
            *o += w * map.data[base + c];
        }
    }
    out
}

/// Gradient of one bilinear lookup with respect to the texels it reads:
/// `(texel index, upstream * weight)` per touched texel.
pub fn bilinear_sample_backward(
    width: usize,
    height: usize,
    uv: [f32; 2],
    upstream: &[f32],
) -> Vec<(usize, Vec<f32>)> {
    bilinear_taps(width, height, uv)
        .iter()
        .map(|(t, w)| (t, upstream.iter().map(|g| g * w).collect()))
        .collect()
}

/// Mean over non-overlapping `factor x factor` blocks.
pub fn avg_pool(map: &TextureMap, factor: usize) -> Result<TextureMap> {
    if factor == 0 || map.width % factor != 0 || map.height % factor != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} is not divisible by pooling factor {factor}",
            map.width, map.height
        )));
    }
    let (w, h, c) = (map.width / factor, map.height / factor, map.channels);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = TextureMap::new(w, h, c);
    let mut acc = vec![0.0f64; c];
    for y in 0..h {
        for x in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for dy in 0..factor {
                for dx in 0..factor {
                    let t = map.texel(x * factor + dx, y * factor + dy);
                    for (a, v) in acc.iter_mut().zip(t) {
                        *a += *v as f64;
                    }
                }
            }
            for (o, a) in out.texel_mut(x, y).iter_mut().zip(&acc) {
                *o = (a * norm) as f32;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`avg_pool`]: spreads each pooled gradient evenly over its block.
pub fn avg_pool_backward(pooled_grad: &TextureMap, factor: usize) -> TextureMap {
    let norm = 1.0 / (factor * factor) as f32;
    TextureMap::from_fn(
        pooled_grad.width * factor,
        pooled_grad.height * factor,
        pooled_grad.channels,
        |x, y| {
            pooled_grad
                .texel(x / factor, y / factor)
                .iter()
                .map(|g| g * norm)
                .collect()
        },
    )
}

#[inline]
fn sign0(x: f32) -> f32 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Anisotropic total variation: sum of absolute forward differences along
/// both axes, all channels, no wraparound. Returns the loss and its
/// subgradient (with `sign(0) = 0`) laid out like `map.data`.
pub fn tv_loss(map: &TextureMap) -> (f64, Vec<f32>) {
    let (w, h, c) = (map.width, map.height, map.channels);
    let mut grad = vec![0.0f32; map.data.len()];
    let mut loss = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * c;
            for ch in 0..c {
                if x + 1 < w {
                    let j = i + c;
                    let d = map.data[j + ch] - map.data[i + ch];
                    loss += d.abs() as f64;
                    let s = sign0(d);
                    grad[j + ch] += s;
                    grad[i + ch] -= s;
                }
                if y + 1 < h {
                    let j = i + w * c;
                    let d = map.data[j + ch] - map.data[i + ch];
                    loss += d.abs() as f64;
                    let s = sign0(d);
                    grad[j + ch] += s;
                    grad[i + ch] -= s;
                }
            }
        }
    }
    (loss, grad)
}

/// Number of finite differences summed by [`tv_loss`].
pub fn tv_term_count(map: &TextureMap) -> usize {
    let (w, h) = (map.width, map.height);
    (w.saturating_sub(1) * h + w * h.saturating_sub(1)) * map.channels
}

/// Separable Catmull-Rom upsampling by an integer factor, half-texel aligned,
/// clamp-to-edge, output clamped to `[0, 1]`.
pub fn upsample_bicubic(map: &TextureMap, factor: usize) -> TextureMap {
    if factor == 1 {
        return map.clone();
    }
    let c = map.channels;
    let taps = |n_in: usize, n_out: usize| -> Vec<([usize; 4], [f32; 4])> {
        (0..n_out)
            .map(|o| {
                let src = (o as f32 + 0.5) / factor as f32 - 0.5;
                let base = src.floor();
                let t = src - base;
                let mut idx = [0usize; 4];
                let mut w = [0.0f32; 4];
                for k in 0..4 {
                    let i = base as i64 + k as i64 - 1;
                    idx[k] = i.clamp(0, n_in as i64 - 1) as usize;
                    w[k] = catmull_rom(t - (k as f32 - 1.0));
                }
                (idx, w)
            })
            .collect()
    };
    let (w_out, h_out) = (map.width * factor, map.height * factor);
    let tx = taps(map.width, w_out);
    let ty = taps(map.height, h_out);

    let mut horiz = vec![0.0f32; w_out * map.height * c];
    for y in 0..map.height {
        for (x, (idx, w)) in tx.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += w[k] * map.data[(y * map.width + idx[k]) * c + ch];
                }
                horiz[(y * w_out + x) * c + ch] = acc;
            }
        }
    }
    let mut out = TextureMap::new(w_out, h_out, c);
    for (y, (idx, w)) in ty.iter().enumerate() {
        for x in 0..w_out {
            for ch in 0..c {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += w[k] * horiz[(idx[k] * w_out + x) * c + ch];
                }
                out.data[(y * w_out + x) * c + ch] = acc.clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Channel layout of the packed ARM map.
pub mod arm {
    pub const AO: usize = 0;
    pub const ROUGHNESS: usize = 1;
    pub const METALLIC: usize = 2;
}

/// Albedo, ARM (AO / roughness / metallic) and tangent-space normal maps at
/// a shared resolution. Normals are stored encoded as `(n + 1) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureSet {
    pub albedo: TextureMap,
    pub arm: TextureMap,
    pub normal: TextureMap,
}

impl TextureSet {
    pub fn new(albedo: TextureMap, arm: TextureMap, normal: TextureMap) -> Result<Self> {
        let set = TextureSet { albedo, arm, normal };
        set.validate()?;
        Ok(set)
    }

    /// Uniform material: one albedo, roughness and metallic, flat normal.
    pub fn constant(
        width: usize,
        height: usize,
        albedo: [f32; 3],
        roughness: f32,
        metallic: f32,
    ) -> Self {
        TextureSet {
            albedo: TextureMap::filled(width, height, &albedo),
            arm: TextureMap::filled(width, height, &[1.0, roughness, metallic]),
            normal: TextureMap::filled(width, height, &[0.5, 0.5, 1.0]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in self.maps() {
            if m.channels != 3 {
                return Err(Error::DimensionMismatch(format!(
                    "{name} map must have 3 channels, has {}",
                    m.channels
                )));
            }
            if m.width != self.albedo.width || m.height != self.albedo.height {
                return Err(Error::DimensionMismatch(format!(
                    "{name} map is {}x{}, albedo is {}x{}",
                    m.width, m.height, self.albedo.width, self.albedo.height
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.albedo.width
    }

    pub fn height(&self) -> usize {
        self.albedo.height
    }

    pub fn maps(&self) -> [(&'static str, &TextureMap); 3] {
        [
            ("albedo", &self.albedo),
            ("arm", &self.arm),
            ("normal", &self.normal),
        ]
    }

    pub fn maps_mut(&mut self) -> [&mut TextureMap; 3] {
        [&mut self.albedo, &mut self.arm, &mut self.normal]
    }

    pub fn clamp01(&mut self) {
        for m in self.maps_mut() {
            m.clamp01();
        }
    }

    /// Samples every map at `uv` (shared taps) and decodes the material.
    pub fn sample_material(&self, uv: [f32; 2], flip_green: bool) -> MaterialSample {
        let taps = bilinear_taps(self.width(), self.height(), uv);
        let mut a = [0.0f32; 3];
        let mut r = [0.0f32; 3];
        let mut n = [0.0f32; 3];
        for (t, w) in taps.iter() {
            for c in 0..3 {
                a[c] += w * self.albedo.data[t * 3 + c];
                r[c] += w * self.arm.data[t * 3 + c];
                n[c] += w * self.normal.data[t * 3 + c];
            }
        }
        MaterialSample::from_encoded(a, r[arm::ROUGHNESS], r[arm::METALLIC], n, flip_green)
    }

    pub fn paths(stem: &Path) -> [PathBuf; 3] {
        let s = stem.to_string_lossy();
        [
            PathBuf::from(format!("{s}_albedo.png")),
            PathBuf::from(format!("{s}_arm.png")),
            PathBuf::from(format!("{s}_normal.png")),
        ]
    }

    /// Loads `<stem>_albedo.png`, `<stem>_arm.png`, `<stem>_normal.png`.
    pub fn load(stem: &Path) -> Result<Self> {
        let [a, r, n] = Self::paths(stem);
        TextureSet::new(
            image::load_png(&a, 3)?,
            image::load_png(&r, 3)?,
            image::load_png(&n, 3)?,
        )
    }

    /// Writes the three maps as 16-bit PNGs.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let [a, r, n] = Self::paths(stem);
        image::save_png16(&self.albedo, &a)?;
        image::save_png16(&self.arm, &r)?;
        image::save_png16(&self.normal, &n)
    }
}

/// Material attributes at one surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialSample {
    pub k_d: [f32; 3],
    pub k_r: f32,
    pub k_m: f32,
    /// Unit tangent-space normal.
    pub k_n: Vec3,
    pub k_s: [f32; 3],
}

/// Dielectric reflectance blended toward albedo by metalness.
#[inline]
pub fn specular_reflectance(k_d: [f32; 3], k_m: f32) -> [f32; 3] {
    k_d.map(|d| 0.04 * (1.0 - k_m) + k_m * d)
}

#[inline]
pub fn decode_normal(enc: [f32; 3], flip_green: bool) -> Vec3 {
    let g = 2.0 * enc[1] - 1.0;
    Vec3::new(
        2.0 * enc[0] - 1.0,
        if flip_green { -g } else { g },
        2.0 * enc[2] - 1.0,
    )
}

#[inline]
pub fn encode_normal(n: Vec3) -> [f32; 3] {
    [n.x, n.y, n.z].map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

impl MaterialSample {
    pub fn from_encoded(k_d: [f32; 3], k_r: f32, k_m: f32, normal: [f32; 3], flip_green: bool) -> Self {
        let n = decode_normal(normal, flip_green);
        let len = n.length();
        let k_n = if len > 1e-8 {
            n.scale(1.0 / len)
        } else {
            Vec3::new(0.0, 0.0, 1.0)
        };
        MaterialSample {
            k_d,
            k_r,
            k_m,
            k_n,
            k_s: specular_reflectance(k_d, k_m),
        }
    }
}

/// Produces the high-resolution starting point: albedo through the oracle,
/// ARM and normal through bicubic upsampling; normals are re-unitized.
pub fn initialize_sr_textures(
    lr: &TextureSet,
    factor: usize,
    oracle: &dyn SrOracle,
) -> Result<TextureSet> {
    lr.validate()?;
    let mut albedo = oracle.upscale(&SrRequest {
        image: lr.albedo.clone(),
        scale: factor,
        view_id: TEXTURE_VIEW_ID,
        prompt: None,
    })?;
    albedo.clamp01();
    let arm = upsample_bicubic(&lr.arm, factor);
    let mut normal = upsample_bicubic(&lr.normal, factor);
    for t in normal.data.chunks_exact_mut(3) {
        let n = decode_normal([t[0], t[1], t[2]], false);
        let len = n.length();
        if len > 1e-6 {
            t.copy_from_slice(&encode_normal(n.scale(1.0 / len)));
        }
    }
    TextureSet::new(albedo, arm, normal)
}
