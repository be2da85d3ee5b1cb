#![allow(dead_code)]

use std::sync::Arc;
use std::time::Instant;

use texup::camera::{build_rig, Camera, RigPreset};
use texup::geometry::{compute_tangents, normalize_mesh, Mesh};
use texup::image::{encode_image, Image};
use texup::lighting::{EnvironmentLight, Light};
use texup::metrics::{texture_report, uv_chart_mask};
use texup::optimizer::{optimize, render_view, OptimConfig, OptimInputs, OptimResult};
use texup::oracle::{BicubicOracle, CheatOracle, GtStore, OracleError, SrOracle, SrRequest};
use texup::renderer::ShadeOptions;
use texup::synth;
use texup::texture::TextureSet;

pub const GT_RES: usize = 256;
pub const SCALE: usize = 4;

pub struct Fixture {
    pub mesh: Mesh,
    pub gt: TextureSet,
    pub lr: TextureSet,
    pub light: Light,
    pub chart: Vec<bool>,
}

pub fn fixture() -> Fixture {
    let mesh = compute_tangents(&normalize_mesh(&synth::cube(8)).unwrap());
    let gt = synth::procedural_textures(GT_RES, 64, 11);
    let lr = synth::downsample_set(&gt, SCALE).unwrap();
    let env = EnvironmentLight::from_radiance(synth::procedural_environment(128, 64)).unwrap();
    let chart = uv_chart_mask(&mesh, GT_RES, GT_RES);
    Fixture { mesh, gt, lr, light: Light::Environment(Arc::new(env)), chart }
}

/// Renders the ground-truth textures on demand for the cheat oracle.
pub struct RenderStore {
    pub mesh: Mesh,
    pub textures: TextureSet,
    pub light: Light,
    pub cameras: Vec<Camera>,
}

impl RenderStore {
    pub fn new(f: &Fixture, res: usize) -> Self {
        RenderStore {
            mesh: f.mesh.clone(),
            textures: f.gt.clone(),
            light: f.light.clone(),
            cameras: build_rig(RigPreset::Train, res).unwrap().cameras,
        }
    }
}

impl GtStore for RenderStore {
    fn get(&self, view_id: u64, w: usize, h: usize) -> Result<Image, OracleError> {
        let cam = self.cameras.get(view_id as usize).ok_or(OracleError::MissingView { view_id })?;
        let r = render_view(&self.mesh, &cam.with_resolution(w, h), &self.textures, &self.light, ShadeOptions::default());
        Ok(encode_image(&r.rgb))
    }
}

/// Wraps an oracle and blacks out square patches in a fixed subset of views.
pub struct CorruptingOracle<O> {
    pub inner: O,
    pub patch: usize,
    pub patches_per_view: usize,
}

impl<O> CorruptingOracle<O> {
    pub fn is_corrupted(view: u64) -> bool {
        view % 4 == 1
    }

    /// Top-left corners of the patches in an image of side `res`.
    pub fn patch_origins(&self, view: u64, res: usize) -> Vec<(usize, usize)> {
        let mut s = view.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03;
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            s
        };
        let span = res - self.patch;
        // keep patches near the center where the object is
        (0..self.patches_per_view)
            .map(|_| {
                let x = span / 4 + (next() as usize) % (span / 2);
                let y = span / 4 + (next() as usize) % (span / 2);
                (x, y)
            })
            .collect()
    }

    pub fn corrupted_mask(&self, view: u64, res: usize) -> Vec<bool> {
        let mut m = vec![false; res * res];
        if Self::is_corrupted(view) {
            for (x0, y0) in self.patch_origins(view, res) {
                for y in y0..y0 + self.patch {
                    for x in x0..x0 + self.patch {
                        m[y * res + x] = true;
                    }
                }
            }
        }
        m
    }
}

impl<O: SrOracle> SrOracle for CorruptingOracle<O> {
    fn name(&self) -> String {
        format!("corrupt({})", self.inner.name())
    }

    fn upscale(&self, req: &SrRequest) -> Result<Image, OracleError> {
        let mut img = self.inner.upscale(req)?;
        let mask = self.corrupted_mask(req.view_id, img.width);
        for (i, m) in mask.iter().enumerate() {
            if *m {
                img.data[i * 3..i * 3 + 3].fill(0.0);
            }
        }
        Ok(img)
    }
}

pub fn recovery_config() -> OptimConfig {
    OptimConfig {
        iters: 500,
        batch: 4,
        lr: 1e-2,
        lr_weights: Some(0.25),
        pseudo_res: 256,
        seed: 0,
        ..OptimConfig::default()
    }
}

pub fn run(f: &Fixture, oracle: &dyn SrOracle, cfg: &OptimConfig) -> (OptimResult, f64) {
    let t0 = Instant::now();
    let inputs = OptimInputs {
        mesh: &f.mesh,
        lr_textures: &f.lr,
        light: &f.light,
        scale: SCALE,
        oracle,
        init_oracle: Some(&BicubicOracle),
    };
    let r = optimize(&inputs, cfg).unwrap();
    (r, t0.elapsed().as_secs_f64())
}

/// [albedo, roughness, metallic, normal] PSNR over the UV chart.
pub fn report(f: &Fixture, t: &TextureSet) -> [f64; 4] {
    texture_report(t, &f.gt, Some(&f.chart)).unwrap()
}

pub fn cheat(f: &Fixture, cfg: &OptimConfig) -> CheatOracle {
    CheatOracle::new(RenderStore::new(f, cfg.pseudo_res))
}
