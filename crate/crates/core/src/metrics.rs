//! PSNR / SSIM and the texture + novel-view evaluation protocol.

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::camera::{build_rig, RigPreset};
use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::lighting::Light;
use crate::renderer::{rasterize, shade, ShadeOptions};
use crate::texture::{arm, TextureMap, TextureSet};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn mse_to_psnr(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

fn shape_check(a: &TextureMap, b: &TextureMap) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio for data range 1; identical inputs give +inf.
pub fn psnr(a: &TextureMap, b: &TextureMap) -> Result<f64> {
    shape_check(a, b)?;
    let se: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    Ok(mse_to_psnr(se / a.data.len() as f64))
}

/// PSNR over the pixels where `mask` is set. `None` if the mask is empty.
pub fn masked_psnr(a: &TextureMap, b: &TextureMap, mask: &[bool]) -> Result<Option<f64>> {
    shape_check(a, b)?;
    if mask.len() != a.texel_count() {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} entries for {} pixels",
            mask.len(),
            a.texel_count()
        )));
    }
    let c = a.channels;
    let (mut se, mut n) = (0.0f64, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for k in 0..c {
            se += (a.data[i * c + k] as f64 - b.data[i * c + k] as f64).powi(2);
        }
        n += c;
    }
    Ok((n > 0).then(|| mse_to_psnr(se / n as f64)))
}

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable "valid" correlation with the SSIM window.
fn filter_valid(x: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x0 in 0..ow {
            tmp[y * ow + x0] = (0..SSIM_WINDOW).map(|k| g[k] * x[y * w + x0 + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_WINDOW).map(|k| g[k] * tmp[(y0 + k) * ow + x0]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads an output-sized map back over the input.
fn filter_valid_transpose(m: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y0 in 0..oh {
        for x0 in 0..ow {
            let v = m[y0 * ow + x0];
            for k in 0..SSIM_WINDOW {
                tmp[(y0 + k) * ow + x0] += g[k] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x0 in 0..ow {
            let v = tmp[y * ow + x0];
            for k in 0..SSIM_WINDOW {
                out[y * w + x0 + k] += g[k] * v;
            }
        }
    }
    out
}

struct SsimStats {
    s: Vec<f64>,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
}

fn ssim_stats(x: &[f64], y: &[f64], w: usize, h: usize) -> SsimStats {
    let g = gaussian_window();
    let mu_x = filter_valid(x, w, h, &g);
    let mu_y = filter_valid(y, w, h, &g);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let exx = filter_valid(&sq(x, x), w, h, &g);
    let eyy = filter_valid(&sq(y, y), w, h, &g);
    let exy = filter_valid(&sq(x, y), w, h, &g);
    let n = mu_x.len();
    let mut st = SsimStats {
        s: vec![0.0; n],
        mu_x,
        mu_y,
        a1: vec![0.0; n],
        a2: vec![0.0; n],
        b1: vec![0.0; n],
        b2: vec![0.0; n],
    };
    for i in 0..n {
        let (mx, my) = (st.mu_x[i], st.mu_y[i]);
        let vx = exx[i] - mx * mx;
        let vy = eyy[i] - my * my;
        let cxy = exy[i] - mx * my;
        st.a1[i] = 2.0 * mx * my + SSIM_C1;
        st.a2[i] = 2.0 * cxy + SSIM_C2;
        st.b1[i] = mx * mx + my * my + SSIM_C1;
        st.b2[i] = vx + vy + SSIM_C2;
        st.s[i] = st.a1[i] * st.a2[i] / (st.b1[i] * st.b2[i]);
    }
    st
}

fn plane_check(w: usize, h: usize) -> Result<()> {
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    Ok(())
}

/// Mean SSIM of one channel plane.
pub fn ssim_plane(x: &[f64], y: &[f64], w: usize, h: usize) -> Result<f64> {
    plane_check(w, h)?;
    let st = ssim_stats(x, y, w, h);
    Ok(st.s.iter().sum::<f64>() / st.s.len() as f64)
}

/// Mean SSIM of one plane and its gradient with respect to `x`.
pub fn ssim_plane_grad(x: &[f64], y: &[f64], w: usize, h: usize) -> Result<(f64, Vec<f64>)> {
    plane_check(w, h)?;
    let st = ssim_stats(x, y, w, h);
    let m = st.s.len() as f64;
    let n = st.s.len();
    // d mean(S) / d x_q = sum_p g(q - p) (alpha_p + beta_p x_q + gamma_p y_q) / M
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut gamma = vec![0.0; n];
    for i in 0..n {
        let (s, mx, my) = (st.s[i], st.mu_x[i], st.mu_y[i]);
        alpha[i] = s * (2.0 * my / st.a1[i] - 2.0 * my / st.a2[i] - 2.0 * mx / st.b1[i] + 2.0 * mx / st.b2[i]) / m;
        beta[i] = -2.0 * s / st.b2[i] / m;
        gamma[i] = 2.0 * s / st.a2[i] / m;
    }
    let g = gaussian_window();
    let ta = filter_valid_transpose(&alpha, w, h, &g);
    let tb = filter_valid_transpose(&beta, w, h, &g);
    let tc = filter_valid_transpose(&gamma, w, h, &g);
    let grad = (0..w * h).map(|q| ta[q] + tb[q] * x[q] + tc[q] * y[q]).collect();
    Ok((st.s.iter().sum::<f64>() / m, grad))
}

pub fn plane(map: &TextureMap, c: usize) -> Vec<f64> {
    map.data.iter().skip(c).step_by(map.channels).map(|v| *v as f64).collect()
}

/// Mean over channels of per-channel mean SSIM.
pub fn ssim(a: &TextureMap, b: &TextureMap) -> Result<f64> {
    shape_check(a, b)?;
    let mut acc = 0.0;
    for c in 0..a.channels {
        acc += ssim_plane(&plane(a, c), &plane(b, c), a.width, a.height)?;
    }
    Ok(acc / a.channels as f64)
}

/// Texels whose centers fall inside some triangle in UV space.
pub fn uv_chart_mask(mesh: &Mesh, width: usize, height: usize) -> Vec<bool> {
    let mut mask = vec![false; width * height];
    for t in &mesh.triangles {
        let p = t.map(|i| {
            let uv = Mesh::texture_uv(mesh.uvs[i as usize]);
            [uv[0] * width as f32, uv[1] * height as f32]
        });
        let area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
        if area.abs() < 1e-12 {
            continue;
        }
        let x0 = p.iter().map(|q| q[0]).fold(f32::MAX, f32::min).floor().max(0.0) as usize;
        let x1 = (p.iter().map(|q| q[0]).fold(f32::MIN, f32::max).ceil().max(0.0) as usize).min(width);
        let y0 = p.iter().map(|q| q[1]).fold(f32::MAX, f32::min).floor().max(0.0) as usize;
        let y1 = (p.iter().map(|q| q[1]).fold(f32::MIN, f32::max).ceil().max(0.0) as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let s = [x as f32 + 0.5, y as f32 + 0.5];
                let e = |a: [f32; 2], b: [f32; 2]| ((b[0] - a[0]) * (s[1] - a[1]) - (b[1] - a[1]) * (s[0] - a[0])) / area;
                if e(p[0], p[1]) >= 0.0 && e(p[1], p[2]) >= 0.0 && e(p[2], p[0]) >= 0.0 {
                    mask[y * width + x] = true;
                }
            }
        }
    }
    mask
}

fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewPsnr {
    pub view: usize,
    #[serde(serialize_with = "serialize_db")]
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(serialize_with = "serialize_db")]
    pub psnr_albedo: f64,
    #[serde(serialize_with = "serialize_db")]
    pub psnr_roughness: f64,
    #[serde(serialize_with = "serialize_db")]
    pub psnr_metallic: f64,
    #[serde(serialize_with = "serialize_db")]
    pub psnr_normal: f64,
    #[serde(serialize_with = "serialize_db")]
    pub psnr_renderings: f64,
    pub uv_masked: bool,
    pub per_view: Vec<ViewPsnr>,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let f = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v:.3}") };
        format!(
            "{:>10} {:>10} {:>10} {:>10} {:>10}\n{:>10} {:>10} {:>10} {:>10} {:>10}\n",
            "Albedo",
            "Roughness",
            "Metallic",
            "Normal",
            "Renderings",
            f(self.psnr_albedo),
            f(self.psnr_roughness),
            f(self.psnr_metallic),
            f(self.psnr_normal),
            f(self.psnr_renderings)
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub resolution: usize,
    pub mask_uv: bool,
    pub shade: ShadeOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            resolution: 512,
            mask_uv: false,
            shade: ShadeOptions::default(),
        }
    }
}

/// PSNR of selected channels over selected texels.
fn texture_psnr(a: &TextureMap, b: &TextureMap, channels: &[usize], mask: Option<&[bool]>) -> f64 {
    let (mut se, mut n) = (0.0f64, 0usize);
    for i in 0..a.texel_count() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        for &c in channels {
            se += (a.data[i * a.channels + c] as f64 - b.data[i * b.channels + c] as f64).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return f64::NAN;
    }
    mse_to_psnr(se / n as f64)
}

/// Per-map texture PSNR only (no rendering).
pub fn texture_report(sr: &TextureSet, gt: &TextureSet, mask: Option<&[bool]>) -> Result<[f64; 4]> {
    for ((_, a), (_, b)) in sr.maps().into_iter().zip(gt.maps()) {
        shape_check(a, b)?;
    }
    Ok([
        texture_psnr(&sr.albedo, &gt.albedo, &[0, 1, 2], mask),
        texture_psnr(&sr.arm, &gt.arm, &[arm::ROUGHNESS], mask),
        texture_psnr(&sr.arm, &gt.arm, &[arm::METALLIC], mask),
        texture_psnr(&sr.normal, &gt.normal, &[0, 1, 2], mask),
    ])
}

pub fn evaluate(sr: &TextureSet, gt: &TextureSet, mesh: &Mesh, light: &Light, opts: EvalOptions) -> Result<EvalReport> {
    let mask = opts.mask_uv.then(|| uv_chart_mask(mesh, gt.width(), gt.height()));
    let [pa, pr, pm, pn] = texture_report(sr, gt, mask.as_deref())?;
    let rig = build_rig(RigPreset::Eval, opts.resolution)?;
    let per_view: Vec<Option<f64>> = rig
        .cameras
        .par_iter()
        .map(|cam| {
            let g = rasterize(mesh, cam);
            let a = shade(&g, sr, light, opts.shade);
            let b = shade(&g, gt, light, opts.shade);
            masked_psnr(&a.rgb, &b.rgb, &a.mask)
        })
        .collect::<Result<_>>()?;
    let per_view: Vec<ViewPsnr> = per_view
        .into_iter()
        .enumerate()
        .filter_map(|(view, p)| p.map(|psnr| ViewPsnr { view, psnr }))
        .collect();
    let psnr_renderings = if per_view.is_empty() {
        f64::NAN
    } else {
        per_view.iter().map(|v| v.psnr).sum::<f64>() / per_view.len() as f64
    };
    Ok(EvalReport {
        psnr_albedo: pa,
        psnr_roughness: pr,
        psnr_metallic: pm,
        psnr_normal: pn,
        psnr_renderings,
        uv_masked: opts.mask_uv,
        per_view,
    })
}
