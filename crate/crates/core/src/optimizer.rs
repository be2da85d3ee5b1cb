//! Loss terms, Adam, and the multi-view texture optimization loop.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{build_rig, RigPreset};
use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::image::{decode_image, encode_image, load_png, save_png16, Image};
use crate::lighting::Light;
use crate::metrics::{plane, ssim_plane_grad};
use crate::oracle::{SrOracle, SrRequest};
use crate::renderer::{backward_from_jacobians, rasterize, shade, shade_with_jacobian, GBuffer, ShadeOptions, TextureGrads};
use crate::texture::{arm, avg_pool, bilinear_taps, initialize_sr_textures, tv_loss, tv_term_count, BilinearTaps, TextureMap, TextureSet};

/// Side length of the per-view robustness maps.
pub const WEIGHT_RES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TvNormalization {
    /// Plain sum of absolute forward differences.
    Sum,
    /// Sum divided by the number of difference terms of each map.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lambda_pix: f32,
    pub lambda_reg: f32,
    pub lambda_pbr: f32,
    pub lambda_tv: f32,
    pub lambda_ssim: f32,
    pub w_albedo: f32,
    pub w_rough: f32,
    pub w_metal: f32,
    pub w_normal: f32,
    pub w_ao: f32,
    pub batch: usize,
    pub lr: f32,
    /// Learning rate of the weight maps; `None` means `lr`.
    pub lr_weights: Option<f32>,
    pub iters: usize,
    pub pseudo_res: usize,
    pub seed: u64,
    pub robust: bool,
    pub use_tv: bool,
    pub use_pbr: bool,
    pub tv_normalization: TvNormalization,
    pub refresh_pseudo_gt: bool,
    pub flip_normal_green: bool,
    pub log_every: usize,
    pub max_skip_fraction: f64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lambda_pix: 100.0,
            lambda_reg: 0.5,
            lambda_pbr: 10.0,
            lambda_tv: 0.5,
            lambda_ssim: 10.0,
            w_albedo: 1.0,
            w_rough: 1.0,
            w_metal: 0.1,
            w_normal: 1.0,
            w_ao: 0.0,
            batch: 4,
            lr: 1e-4,
            lr_weights: None,
            iters: 2000,
            pseudo_res: 1024,
            seed: 0,
            robust: true,
            use_tv: true,
            use_pbr: true,
            tv_normalization: TvNormalization::Mean,
            refresh_pseudo_gt: false,
            flip_normal_green: false,
            log_every: 100,
            max_skip_fraction: 0.05,
            cache_dir: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self, scale: usize) -> Result<()> {
        let lambdas = [
            ("lambda_pix", self.lambda_pix),
            ("lambda_reg", self.lambda_reg),
            ("lambda_pbr", self.lambda_pbr),
            ("lambda_tv", self.lambda_tv),
            ("lambda_ssim", self.lambda_ssim),
            ("w_albedo", self.w_albedo),
            ("w_rough", self.w_rough),
            ("w_metal", self.w_metal),
            ("w_normal", self.w_normal),
            ("w_ao", self.w_ao),
        ];
        if let Some((k, v)) = lambdas.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("{k} must be a finite value >= 0, got {v}")));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        let lrw = self.lr_weights.unwrap_or(self.lr);
        if !(self.lr.is_finite() && self.lr > 0.0 && lrw.is_finite() && lrw > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if scale == 0 || self.pseudo_res % scale != 0 || self.pseudo_res / scale < 16 {
            return Err(Error::Config(format!(
                "pseudo_res {} must be a multiple of scale {scale} with pseudo_res/scale >= 16",
                self.pseudo_res
            )));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn weight_lr(&self) -> f32 {
        self.lr_weights.unwrap_or(self.lr)
    }
}

// ---------------------------------------------------------------------------
// loss terms

/// Bilinear footprint of each render pixel in the 64×64 weight grid.
pub fn weight_taps(width: usize, height: usize) -> Vec<BilinearTaps> {
    (0..width * height)
        .map(|i| {
            let (x, y) = (i % width, i / width);
            bilinear_taps(
                WEIGHT_RES,
                WEIGHT_RES,
                [(x as f32 + 0.5) / width as f32, (y as f32 + 0.5) / height as f32],
            )
        })
        .collect()
}

pub fn upsample_weights(w: &[f32], taps: &[BilinearTaps]) -> Vec<f32> {
    taps.iter().map(|t| t.iter().map(|(i, k)| k * w[i]).sum()).collect()
}

#[derive(Debug, Clone)]
pub struct PixelLoss {
    pub loss: f64,
    /// d loss / d pred, 3 values per pixel.
    pub d_pred: Vec<f32>,
    /// d loss / d W at the native weight resolution.
    pub d_weights: Vec<f32>,
}

/// Normalized weighted MSE of one view: `sum W² e / sum W²` over masked
/// pixels, with `e` the per-pixel mean squared error over channels and `W`
/// the bilinearly upsampled weight map.
pub fn robust_pixel_loss(
    pred: &Image,
    gt: &Image,
    mask: &[bool],
    weights: &[f32],
    taps: &[BilinearTaps],
) -> Result<PixelLoss> {
    if !pred.same_shape(gt) || pred.channels != 3 || mask.len() != pred.texel_count() || taps.len() != mask.len() {
        return Err(Error::DimensionMismatch(format!(
            "pred {}x{}, gt {}x{}, mask {}, taps {}",
            pred.width,
            pred.height,
            gt.width,
            gt.height,
            mask.len(),
            taps.len()
        )));
    }
    if weights.len() != WEIGHT_RES * WEIGHT_RES {
        return Err(Error::DimensionMismatch(format!("weight map has {} values", weights.len())));
    }
    let w_up = upsample_weights(weights, taps);
    let per_px: Vec<(f64, f64)> = (0..mask.len())
        .into_par_iter()
        .map(|i| {
            if !mask[i] {
                return (0.0, 0.0);
            }
            let e: f64 = (0..3)
                .map(|c| (pred.data[i * 3 + c] as f64 - gt.data[i * 3 + c] as f64).powi(2))
                .sum::<f64>()
                / 3.0;
            let w2 = (w_up[i] as f64).powi(2);
            (w2 * e, w2)
        })
        .collect();
    let (num, den) = per_px.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    if den <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    let loss = num / den;
    let d_pred: Vec<f32> = (0..mask.len() * 3)
        .into_par_iter()
        .map(|j| {
            let i = j / 3;
            if !mask[i] {
                return 0.0;
            }
            let w2 = (w_up[i] as f64).powi(2);
            (w2 * 2.0 * (pred.data[j] as f64 - gt.data[j] as f64) / (3.0 * den)) as f32
        })
        .collect();
    let mut d_weights = vec![0.0f64; WEIGHT_RES * WEIGHT_RES];
    for i in 0..mask.len() {
        if !mask[i] {
            continue;
        }
        let e: f64 = (0..3)
            .map(|c| (pred.data[i * 3 + c] as f64 - gt.data[i * 3 + c] as f64).powi(2))
            .sum::<f64>()
            / 3.0;
        let g = 2.0 * w_up[i] as f64 * (e - loss) / den;
        for (t, k) in taps[i].iter() {
            d_weights[t] += k as f64 * g;
        }
    }
    Ok(PixelLoss {
        loss,
        d_pred,
        d_weights: d_weights.into_iter().map(|v| v as f32).collect(),
    })
}

/// Mean over the native grid of `(1 - W²)²`, and its gradient.
pub fn weight_regularizer(weights: &[f32]) -> (f64, Vec<f32>) {
    let n = weights.len() as f64;
    let loss = weights.iter().map(|w| (1.0 - (*w as f64).powi(2)).powi(2)).sum::<f64>() / n;
    let grad = weights
        .iter()
        .map(|w| {
            let w = *w as f64;
            (-4.0 * w * (1.0 - w * w) / n) as f32
        })
        .collect();
    (loss, grad)
}

/// `lambda_pix * pixel + lambda_reg * reg`.
pub fn robust_loss(pixel: f64, reg: f64, cfg: &OptimConfig) -> f64 {
    cfg.lambda_pix as f64 * pixel + cfg.lambda_reg as f64 * reg
}

/// `robust + lambda_pbr * pbr + lambda_tv * tv`.
pub fn total_loss(robust: f64, pbr: f64, tv: f64, cfg: &OptimConfig) -> f64 {
    robust + cfg.lambda_pbr as f64 * pbr + cfg.lambda_tv as f64 * tv
}

/// One consistency component: a set of channels of one map with a weight.
struct Component {
    map: usize,
    channels: &'static [usize],
    weight: f32,
}

fn components(cfg: &OptimConfig) -> [Component; 5] {
    [
        Component { map: 0, channels: &[0, 1, 2], weight: cfg.w_albedo },
        Component { map: 1, channels: &[arm::ROUGHNESS], weight: cfg.w_rough },
        Component { map: 1, channels: &[arm::METALLIC], weight: cfg.w_metal },
        Component { map: 1, channels: &[arm::AO], weight: cfg.w_ao },
        Component { map: 2, channels: &[0, 1, 2], weight: cfg.w_normal },
    ]
}

/// Sum over components of `w (mean|Pool(T) - T_lr| + lambda_ssim (1 - SSIM))`,
/// with the gradient scattered back to the high-resolution texels.
pub fn pbr_consistency_loss(
    hr: &TextureSet,
    lr: &TextureSet,
    factor: usize,
    cfg: &OptimConfig,
) -> Result<(f64, TextureGrads)> {
    let pooled = [avg_pool(&hr.albedo, factor)?, avg_pool(&hr.arm, factor)?, avg_pool(&hr.normal, factor)?];
    let lr_maps = [&lr.albedo, &lr.arm, &lr.normal];
    for (p, l) in pooled.iter().zip(lr_maps) {
        if !p.same_shape(l) {
            return Err(Error::DimensionMismatch(format!(
                "pooled {}x{} vs low-res {}x{}",
                p.width, p.height, l.width, l.height
            )));
        }
    }
    let mut grads = TextureGrads::zeros_like(hr);
    let mut pooled_grads: Vec<Vec<f64>> = pooled.iter().map(|p| vec![0.0; p.data.len()]).collect();
    let mut total = 0.0;
    for comp in components(cfg) {
        if comp.weight == 0.0 {
            continue;
        }
        let (p, l) = (&pooled[comp.map], lr_maps[comp.map]);
        let (w, h, c) = (p.width, p.height, p.channels);
        let n = (w * h * comp.channels.len()) as f64;
        let mut l1 = 0.0;
        let mut ssim_sum = 0.0;
        let g = &mut pooled_grads[comp.map];
        for &ch in comp.channels {
            for i in 0..w * h {
                let d = p.data[i * c + ch] as f64 - l.data[i * c + ch] as f64;
                l1 += d.abs();
                let s = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
                g[i * c + ch] += comp.weight as f64 * s / n;
            }
            let (s, sg) = ssim_plane_grad(&plane(p, ch), &plane(l, ch), w, h)?;
            ssim_sum += s;
            let k = comp.weight as f64 * cfg.lambda_ssim as f64 / comp.channels.len() as f64;
            for i in 0..w * h {
                g[i * c + ch] -= k * sg[i];
            }
        }
        let ssim_mean = ssim_sum / comp.channels.len() as f64;
        total += comp.weight as f64 * (l1 / n + cfg.lambda_ssim as f64 * (1.0 - ssim_mean));
    }
    for ((dst, pg), p) in grads.maps_mut().into_iter().zip(&pooled_grads).zip(&pooled) {
        let inv = 1.0 / (factor * factor) as f64;
        let ow = p.width;
        let c = p.channels;
        let hw = ow * factor;
        for (j, v) in dst.iter_mut().enumerate() {
            let (texel, ch) = (j / c, j % c);
            let (x, y) = (texel % hw, texel / hw);
            *v = (pg[((y / factor) * ow + x / factor) * c + ch] * inv) as f32;
        }
    }
    Ok((total, grads))
}

/// TV over the three maps (ARM per channel, AO included), with gradient.
pub fn texture_tv(hr: &TextureSet, mode: TvNormalization) -> (f64, TextureGrads) {
    let mut grads = TextureGrads::zeros_like(hr);
    let mut total = 0.0;
    for ((_, map), dst) in hr.maps().into_iter().zip(grads.maps_mut()) {
        let (v, g) = tv_loss(map);
        let scale = match mode {
            TvNormalization::Sum => 1.0,
            TvNormalization::Mean => 1.0 / tv_term_count(map).max(1) as f64,
        };
        total += v * scale;
        for (d, s) in dst.iter_mut().zip(g) {
            *d = (s as f64 * scale) as f32;
        }
    }
    (total, grads)
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected step followed by projection onto `[0, 1]`.
    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f32, what: &'static str) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "adam: {} params, {} grads, {} state",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some((index, value)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { what, index, value: *value });
        }
        self.t += 1;
        let bc1 = 1.0 - (self.beta1 as f64).powi(self.t as i32);
        let bc2 = 1.0 - (self.beta2 as f64).powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        params
            .par_iter_mut()
            .zip(grads.par_iter())
            .zip(self.m.par_iter_mut().zip(self.v.par_iter_mut()))
            .for_each(|((p, g), (m, v))| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m as f64 / bc1;
                let v_hat = *v as f64 / bc2;
                let upd = lr as f64 * m_hat / (v_hat.sqrt() + eps as f64);
                *p = ((*p as f64 - upd) as f32).clamp(0.0, 1.0);
            });
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// optimization loop

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    pub total: f64,
    pub pixel: f64,
    pub reg: f64,
    pub pbr: f64,
    pub tv: f64,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub textures: TextureSet,
    pub initial: TextureSet,
    /// Native-resolution weight map of every visited view.
    pub weights: BTreeMap<usize, TextureMap>,
    /// Every iteration's loss components.
    pub history: Vec<LossRecord>,
    pub skipped_views: Vec<usize>,
    pub attempted_views: usize,
}

impl OptimResult {
    /// Records at the logging cadence (every `every` iterations plus the last).
    pub fn log(&self, every: usize) -> Vec<LossRecord> {
        let last = self.history.len().saturating_sub(1);
        self.history
            .iter()
            .filter(|r| r.iter % every == 0 || r.iter == last)
            .cloned()
            .collect()
    }
}

pub struct OptimInputs<'a> {
    /// Normalized mesh with tangents.
    pub mesh: &'a Mesh,
    pub lr_textures: &'a TextureSet,
    pub light: &'a Light,
    pub scale: usize,
    /// Oracle producing pseudo ground truth for views.
    pub oracle: &'a dyn SrOracle,
    /// Oracle for the albedo initialization; defaults to `oracle`.
    pub init_oracle: Option<&'a dyn SrOracle>,
}

enum GtCache {
    Memory(HashMap<usize, Vec<u16>>),
    Disk(PathBuf),
}

impl GtCache {
    fn get(&self, view: usize, res: usize) -> Result<Option<Image>> {
        match self {
            GtCache::Memory(m) => Ok(m.get(&view).map(|q| Image {
                width: res,
                height: res,
                channels: 3,
                data: q.iter().map(|v| *v as f32 / 65535.0).collect(),
            })),
            GtCache::Disk(dir) => {
                let p = dir.join(format!("pseudo_{view:04}.png"));
                if p.exists() {
                    Ok(Some(load_png(&p, 3)?))
                } else {
                    Ok(None)
                }
            }
        }
    }

    fn put(&mut self, view: usize, img: &Image) -> Result<()> {
        match self {
            GtCache::Memory(m) => {
                m.insert(view, img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect());
                Ok(())
            }
            GtCache::Disk(dir) => save_png16(img, &dir.join(format!("pseudo_{view:04}.png"))),
        }
    }
}

/// Renders `textures` from a rig camera: the forward model used everywhere.
pub fn render_view(mesh: &Mesh, cam: &crate::camera::Camera, textures: &TextureSet, light: &Light, opts: ShadeOptions) -> crate::renderer::RenderImage {
    shade(&rasterize(mesh, cam), textures, light, opts)
}

/// One view of a batch: fixed G-buffer, pseudo ground truth, weight map.
pub struct BatchView<'a> {
    pub gbuffer: &'a GBuffer,
    pub target: &'a Image,
    pub weights: &'a [f32],
}

pub struct BatchStep {
    pub record: LossRecord,
    pub grads: TextureGrads,
    /// Per view, `None` when the view was dropped (all weights zero).
    pub weight_grads: Vec<Option<Vec<f32>>>,
}

/// Total loss of one batch and its gradients with respect to the texels and
/// every view's weight map. Views whose weights vanish under the mask are
/// dropped with a warning; the pixel term is averaged over the rest.
pub fn batch_objective(
    tex: &TextureSet,
    lr: &TextureSet,
    scale: usize,
    light: &Light,
    views: &[BatchView],
    taps: &[BilinearTaps],
    cfg: &OptimConfig,
) -> Result<BatchStep> {
    let shade_opts = ShadeOptions { flip_normal_green: cfg.flip_normal_green };
    let mut grads = TextureGrads::zeros_like(tex);
    let mut per_view = Vec::with_capacity(views.len());
    for bv in views {
        let (pred, jac) = shade_with_jacobian(bv.gbuffer, tex, light, shade_opts);
        match robust_pixel_loss(&pred.rgb, bv.target, &pred.mask, bv.weights, taps) {
            Ok(pl) => per_view.push(Some((pl, jac))),
            Err(Error::DegenerateWeights) => {
                log::warn!("all weights under the mask are zero, view ignored");
                per_view.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let n_ok = per_view.iter().flatten().count();
    let mut pixel = 0.0;
    let mut reg = 0.0;
    let mut weight_grads = Vec::with_capacity(views.len());
    for (bv, pv) in views.iter().zip(per_view) {
        let Some((pl, jac)) = pv else {
            weight_grads.push(None);
            continue;
        };
        let s = cfg.lambda_pix / n_ok as f32;
        pixel += pl.loss / n_ok as f64;
        let up: Vec<f32> = pl.d_pred.iter().map(|d| d * s).collect();
        backward_from_jacobians(&jac, &up, &mut grads);
        if cfg.robust {
            let (r, rg) = weight_regularizer(bv.weights);
            reg += r;
            weight_grads.push(Some(rg.iter().zip(&pl.d_weights).map(|(a, b)| cfg.lambda_reg * a + s * b).collect()));
        } else {
            weight_grads.push(None);
        }
    }
    let pbr = if cfg.use_pbr {
        let (l, g) = pbr_consistency_loss(tex, lr, scale, cfg)?;
        grads.add_scaled(&g, cfg.lambda_pbr);
        l
    } else {
        0.0
    };
    let tv = if cfg.use_tv {
        let (l, g) = texture_tv(tex, cfg.tv_normalization);
        grads.add_scaled(&g, cfg.lambda_tv);
        l
    } else {
        0.0
    };
    let total = total_loss(robust_loss(pixel, reg, cfg), pbr, tv, cfg);
    Ok(BatchStep {
        record: LossRecord { iter: 0, total, pixel, reg, pbr, tv },
        grads,
        weight_grads,
    })
}

pub fn optimize(inputs: &OptimInputs, cfg: &OptimConfig) -> Result<OptimResult> {
    cfg.validate(inputs.scale)?;
    inputs.mesh.validate()?;
    let initial = initialize_sr_textures(
        inputs.lr_textures,
        inputs.scale,
        inputs.init_oracle.unwrap_or(inputs.oracle),
    )?;
    let mut tex = initial.clone();
    let rig = build_rig(RigPreset::Train, cfg.pseudo_res)?;
    let low_res = cfg.pseudo_res / inputs.scale;
    let shade_opts = ShadeOptions { flip_normal_green: cfg.flip_normal_green };
    let taps = weight_taps(cfg.pseudo_res, cfg.pseudo_res);

    let mut cache = match &cfg.cache_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            GtCache::Disk(d.clone())
        }
        None => GtCache::Memory(HashMap::new()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam_tex = [Adam::new(tex.albedo.data.len()), Adam::new(tex.arm.data.len()), Adam::new(tex.normal.data.len())];
    let mut weights: BTreeMap<usize, (TextureMap, Adam)> = BTreeMap::new();
    let mut history = Vec::with_capacity(cfg.iters);
    let mut skipped: Vec<usize> = Vec::new();
    let mut attempted = 0usize;
    let mut oracle_successes = 0usize;
    let batch = cfg.batch.min(rig.len());

    for iter in 0..cfg.iters {
        let views: Vec<usize> = sample(&mut rng, rig.len(), batch).into_vec();
        let mut batch_views: Vec<(usize, GBuffer, Image)> = Vec::with_capacity(views.len());
        for &v in &views {
            let cam = &rig.cameras[v];
            let g = rasterize(inputs.mesh, cam);
            if g.covered_count() == 0 {
                continue;
            }
            let cached = if cfg.refresh_pseudo_gt { None } else { cache.get(v, cfg.pseudo_res)? };
            let gt = match cached {
                Some(img) => decode_image(&img),
                None => {
                    if skipped.contains(&v) {
                        continue;
                    }
                    attempted += 1;
                    let source = if cfg.refresh_pseudo_gt { &tex } else { &initial };
                    let low = render_view(inputs.mesh, &cam.with_resolution(low_res, low_res), source, inputs.light, shade_opts);
                    let req = SrRequest {
                        image: encode_image(&low.rgb),
                        scale: inputs.scale,
                        view_id: v as u64,
                        prompt: None,
                    };
                    match inputs.oracle.upscale(&req) {
                        Ok(sr) => {
                            oracle_successes += 1;
                            if !cfg.refresh_pseudo_gt {
                                cache.put(v, &sr)?;
                            }
                            decode_image(&sr)
                        }
                        Err(e) => {
                            if e.is_unreachable() && oracle_successes == 0 {
                                return Err(e.into());
                            }
                            log::warn!("view {v}: oracle failed, skipping: {e}");
                            skipped.push(v);
                            let limit = cfg.max_skip_fraction * attempted.max(20) as f64;
                            if skipped.len() as f64 > limit {
                                return Err(Error::TooManySkippedViews { skipped: skipped.len(), attempted });
                            }
                            continue;
                        }
                    }
                }
            };
            if cfg.robust {
                weights
                    .entry(v)
                    .or_insert_with(|| (TextureMap::filled(WEIGHT_RES, WEIGHT_RES, &[1.0]), Adam::new(WEIGHT_RES * WEIGHT_RES)));
            }
            batch_views.push((v, g, gt));
        }

        let ones = vec![1.0f32; WEIGHT_RES * WEIGHT_RES];
        let targets: Vec<BatchView> = batch_views
            .iter()
            .map(|(v, g, gt)| BatchView {
                gbuffer: g,
                target: gt,
                weights: if cfg.robust { &weights[v].0.data } else { &ones },
            })
            .collect();
        let step = batch_objective(&tex, inputs.lr_textures, inputs.scale, inputs.light, &targets, &taps, cfg)?;
        drop(targets);
        let mut record = step.record;
        record.iter = iter;
        if iter % cfg.log_every == 0 {
            log::info!(
                "iter {iter}: total {:.6} pixel {:.6} reg {:.6} pbr {:.6} tv {:.6}",
                record.total,
                record.pixel,
                record.reg,
                record.pbr,
                record.tv
            );
        }
        history.push(record);

        let names = ["albedo", "arm", "normal"];
        for (((map, g), adam), name) in tex.maps_mut().into_iter().zip(step.grads.maps()).zip(adam_tex.iter_mut()).zip(names) {
            adam.step(&mut map.data, g, cfg.lr, name)?;
        }
        if cfg.robust {
            for ((v, _, _), g) in batch_views.iter().zip(&step.weight_grads) {
                if let Some(g) = g {
                    let (map, adam) = weights.get_mut(v).expect("weight map exists");
                    adam.step(&mut map.data, g, cfg.weight_lr(), "weights")?;
                }
            }
        }
    }

    Ok(OptimResult {
        textures: tex,
        initial,
        weights: weights.into_iter().map(|(k, (m, _))| (k, m)).collect(),
        history,
        skipped_views: skipped,
        attempted_views: attempted,
    })
}
