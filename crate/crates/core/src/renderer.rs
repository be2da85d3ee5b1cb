//! Software rasterization into a G-buffer and differentiable shading.
//!
//! Geometry, cameras and lights are fixed; only texture texels receive
//! gradients, so there is no visibility or edge derivative anywhere.

use rayon::prelude::*;

use crate::camera::{Camera, NEAR};
use crate::geometry::Mesh;
use crate::image::Image;
use crate::lighting::{Light, ShadingInputs};
use crate::math::{Dual, Real, Vec3, TANGENTS};
use crate::texture::{arm, bilinear_taps, BilinearTaps, TextureSet};

const BAND_ROWS: usize = 8;

/// Interpolated surface attributes at one covered pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    /// Texture-space lookup coordinate (row-down v).
    pub uv: [f32; 2],
    pub normal: Vec3,
    pub tangent: Vec3,
    pub handedness: f32,
    /// Unit vector from the surface toward the eye.
    pub view_dir: Vec3,
    pub depth: f32,
    pub triangle: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub fragments: Vec<Option<Fragment>>,
}

impl GBuffer {
    pub fn coverage(&self) -> Vec<bool> {
        self.fragments.iter().map(Option::is_some).collect()
    }

    pub fn covered_count(&self) -> usize {
        self.fragments.iter().filter(|f| f.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderImage {
    pub rgb: Image,
    pub mask: Vec<bool>,
}

impl RenderImage {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShadeOptions {
    pub flip_normal_green: bool,
}

struct ScreenVertex {
    x: f32,
    y: f32,
    z: f32,
    inv_w: f32,
    visible: bool,
}

/// Edge-function rasterization with a z-buffer, one sample per pixel at the
/// pixel center. Triangles are processed in index order and only a strictly
/// nearer fragment replaces a stored one, so ties keep the lower index.
/// Triangles with a vertex in front of the near plane are dropped.
pub fn rasterize(mesh: &Mesh, camera: &Camera) -> GBuffer {
    let (w, h) = (camera.width, camera.height);
    let (view, proj) = camera.view_proj();
    let vp = proj.mul_mat(&view);
    let verts: Vec<ScreenVertex> = mesh
        .positions
        .iter()
        .map(|p| {
            let c = vp.transform([p.x, p.y, p.z, 1.0]);
            let visible = c[3] >= NEAR;
            let inv_w = 1.0 / c[3];
            ScreenVertex {
                x: (c[0] * inv_w + 1.0) * 0.5 * w as f32,
                y: (1.0 - c[1] * inv_w) * 0.5 * h as f32,
                z: c[2] * inv_w,
                inv_w,
                visible,
            }
        })
        .collect();

    let bands = h.div_ceil(BAND_ROWS);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); bands];
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let v = t.map(|i| &verts[i as usize]);
        if !v.iter().all(|s| s.visible) {
            continue;
        }
        let min_y = v.iter().map(|s| s.y).fold(f32::MAX, f32::min);
        let max_y = v.iter().map(|s| s.y).fold(f32::MIN, f32::max);
        if max_y < 0.0 || min_y > h as f32 {
            continue;
        }
        let y0 = (min_y.max(0.0) as usize).min(h - 1);
        let y1 = (max_y.max(0.0) as usize).min(h - 1);
        for band in bins.iter_mut().take(y1 / BAND_ROWS + 1).skip(y0 / BAND_ROWS) {
            band.push(ti as u32);
        }
    }

    let bands_out: Vec<Vec<Option<(u32, [f32; 3], f32)>>> = (0..bands)
        .into_par_iter()
        .map(|b| {
            let row0 = b * BAND_ROWS;
            let rows = BAND_ROWS.min(h - row0);
            let mut hits: Vec<Option<(u32, [f32; 3], f32)>> = vec![None; rows * w];
            for &ti in &bins[b] {
                let [a, bb, c] = mesh.triangles[ti as usize].map(|i| &verts[i as usize]);
                let area = (bb.x - a.x) * (c.y - a.y) - (bb.y - a.y) * (c.x - a.x);
                if area.abs() < 1e-12 {
                    continue;
                }
                let inv_area = 1.0 / area;
                let min_x = a.x.min(bb.x).min(c.x).max(0.0).floor() as usize;
                let max_x = (a.x.max(bb.x).max(c.x).ceil().max(0.0) as usize).min(w);
                let min_y = (a.y.min(bb.y).min(c.y).max(row0 as f32).floor() as usize).max(row0);
                let max_y = (a.y.max(bb.y).max(c.y).ceil().max(0.0) as usize).min(row0 + rows);
                for py in min_y..max_y {
                    let sy = py as f32 + 0.5;
                    for px in min_x..max_x {
                        let sx = px as f32 + 0.5;
                        let w0 = ((bb.x - sx) * (c.y - sy) - (bb.y - sy) * (c.x - sx)) * inv_area;
                        let w1 = ((c.x - sx) * (a.y - sy) - (c.y - sy) * (a.x - sx)) * inv_area;
                        let w2 = 1.0 - w0 - w1;
                        if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                            continue;
                        }
                        let z = w0 * a.z + w1 * bb.z + w2 * c.z;
                        if !(-1.0..=1.0).contains(&z) {
                            continue;
                        }
                        let slot = &mut hits[(py - row0) * w + px];
                        if slot.map_or(true, |(_, _, zs)| z < zs) {
                            *slot = Some((ti, [w0, w1, w2], z));
                        }
                    }
                }
            }
            hits
        })
        .collect();

    let eye = camera.position;
    let fragments = bands_out
        .into_iter()
        .flatten()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|hit| {
            hit.map(|(ti, bary, z)| {
                let idx = mesh.triangles[ti as usize].map(|i| i as usize);
                let pw: [f32; 3] = std::array::from_fn(|k| bary[k] * verts[idx[k]].inv_w);
                let s = 1.0 / (pw[0] + pw[1] + pw[2]);
                let b = pw.map(|v| v * s);
                let lerp3 = |f: &dyn Fn(usize) -> Vec3| f(idx[0]).scale(b[0]) + f(idx[1]).scale(b[1]) + f(idx[2]).scale(b[2]);
                let pos = lerp3(&|i| mesh.positions[i]);
                let mut normal = lerp3(&|i| mesh.normals[i]).normalize();
                let uv_obj = [0, 1].map(|k| b[0] * mesh.uvs[idx[0]][k] + b[1] * mesh.uvs[idx[1]][k] + b[2] * mesh.uvs[idx[2]][k]);
                let (tangent, mut handedness) = if mesh.tangents.len() == mesh.positions.len() {
                    let t = lerp3(&|i| {
                        let t = mesh.tangents[i];
                        Vec3::new(t[0], t[1], t[2])
                    });
                    let hw: f32 = (0..3).map(|k| b[k] * mesh.tangents[idx[k]][3]).sum();
                    (t, if hw < 0.0 { -1.0 } else { 1.0 })
                } else {
                    (Vec3::ZERO, 1.0)
                };
                let tangent = orthonormal_tangent(normal, tangent);
                let view_dir = (eye - pos).normalize();
                if normal.dot(view_dir) < 0.0 {
                    // back side: mirror the frame through the surface plane
                    normal = -normal;
                    handedness = -handedness;
                }
                Fragment {
                    uv: Mesh::texture_uv(uv_obj),
                    normal,
                    tangent,
                    handedness,
                    view_dir,
                    depth: z,
                    triangle: ti,
                }
            })
        })
        .collect();
    GBuffer {
        width: w,
        height: h,
        fragments,
    }
}

fn orthonormal_tangent(n: Vec3, t: Vec3) -> Vec3 {
    let o = t - n.scale(n.dot(t));
    let l = o.length();
    if l > 1e-6 {
        return o.scale(1.0 / l);
    }
    let helper = if n.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    (helper - n.scale(n.dot(helper))).normalize()
}

/// Material inputs at a fragment: albedo rgb, roughness, metallic, encoded normal rgb.
#[inline]
fn gather(textures: &TextureSet, taps: &BilinearTaps) -> [f32; TANGENTS] {
    let mut p = [0.0f32; TANGENTS];
    for (t, w) in taps.iter() {
        let b = t * 3;
        p[0] += w * textures.albedo.data[b];
        p[1] += w * textures.albedo.data[b + 1];
        p[2] += w * textures.albedo.data[b + 2];
        p[3] += w * textures.arm.data[b + arm::ROUGHNESS];
        p[4] += w * textures.arm.data[b + arm::METALLIC];
        p[5] += w * textures.normal.data[b];
        p[6] += w * textures.normal.data[b + 1];
        p[7] += w * textures.normal.data[b + 2];
    }
    p
}

/// Evaluates the shading model at one fragment from the 8 material inputs.
#[inline]
pub fn shade_fragment<S: Real>(frag: &Fragment, params: [S; TANGENTS], light: &Light, opts: ShadeOptions) -> [S; 3] {
    let n = Vec3::<S>::lift(frag.normal);
    let t = Vec3::<S>::lift(frag.tangent);
    let b = Vec3::<S>::lift(frag.normal.cross(frag.tangent).scale(frag.handedness));
    let nx = params[5] * 2.0 - 1.0;
    let mut ny = params[6] * 2.0 - 1.0;
    if opts.flip_normal_green {
        ny = -ny;
    }
    let nz = params[7] * 2.0 - 1.0;
    let world = t * nx + b * ny + n * nz;
    let len = world.length();
    let normal = if len.re() > 1e-8 { world * (S::cst(1.0) / len) } else { n };
    let inputs = ShadingInputs {
        k_d: [params[0], params[1], params[2]],
        roughness: params[3],
        metallic: params[4],
        normal,
    };
    light.shade(&inputs, frag.view_dir)
}

/// Forward shading, clamped to `[0, 1]`, black background.
pub fn shade(gbuffer: &GBuffer, textures: &TextureSet, light: &Light, opts: ShadeOptions) -> RenderImage {
    let (tw, th) = (textures.width(), textures.height());
    let data: Vec<[f32; 3]> = gbuffer
        .fragments
        .par_iter()
        .map(|f| match f {
            None => [0.0; 3],
            Some(frag) => {
                let p = gather(textures, &bilinear_taps(tw, th, frag.uv));
                shade_fragment::<f32>(frag, p, light, opts).map(|v| v.clamp(0.0, 1.0))
            }
        })
        .collect();
    RenderImage {
        rgb: Image {
            width: gbuffer.width,
            height: gbuffer.height,
            channels: 3,
            data: data.into_iter().flatten().collect(),
        },
        mask: gbuffer.coverage(),
    }
}

/// Per-pixel Jacobian of the clamped color with respect to the 8 material
/// inputs, plus the bilinear taps that produced those inputs.
#[derive(Debug, Clone)]
pub struct PixelJacobian {
    pub taps: BilinearTaps,
    pub d_rgb: [[f32; TANGENTS]; 3],
}

/// Forward shading that also records per-pixel Jacobians.
pub fn shade_with_jacobian(
    gbuffer: &GBuffer,
    textures: &TextureSet,
    light: &Light,
    opts: ShadeOptions,
) -> (RenderImage, Vec<Option<PixelJacobian>>) {
    let (tw, th) = (textures.width(), textures.height());
    let per_pixel: Vec<([f32; 3], Option<PixelJacobian>)> = gbuffer
        .fragments
        .par_iter()
        .map(|f| match f {
            None => ([0.0; 3], None),
            Some(frag) => {
                let taps = bilinear_taps(tw, th, frag.uv);
                let p = gather(textures, &taps);
                let duals: [Dual; TANGENTS] = std::array::from_fn(|i| Dual::var(p[i], i));
                let out = shade_fragment(frag, duals, light, opts);
                let mut rgb = [0.0f32; 3];
                let mut d_rgb = [[0.0f32; TANGENTS]; 3];
                for k in 0..3 {
                    let v = out[k].v;
                    rgb[k] = v.clamp(0.0, 1.0);
                    if (0.0..=1.0).contains(&v) {
                        d_rgb[k] = out[k].d;
                    }
                }
                (rgb, Some(PixelJacobian { taps, d_rgb }))
            }
        })
        .collect();
    let mut data = Vec::with_capacity(per_pixel.len() * 3);
    let mut jac = Vec::with_capacity(per_pixel.len());
    for (rgb, j) in per_pixel {
        data.extend_from_slice(&rgb);
        jac.push(j);
    }
    (
        RenderImage {
            rgb: Image {
                width: gbuffer.width,
                height: gbuffer.height,
                channels: 3,
                data,
            },
            mask: gbuffer.coverage(),
        },
        jac,
    )
}

/// Texel-space gradients laid out exactly like the maps of a [`TextureSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct TextureGrads {
    pub albedo: Vec<f32>,
    pub arm: Vec<f32>,
    pub normal: Vec<f32>,
}

impl TextureGrads {
    pub fn zeros_like(t: &TextureSet) -> Self {
        TextureGrads {
            albedo: vec![0.0; t.albedo.data.len()],
            arm: vec![0.0; t.arm.data.len()],
            normal: vec![0.0; t.normal.data.len()],
        }
    }

    pub fn maps(&self) -> [&Vec<f32>; 3] {
        [&self.albedo, &self.arm, &self.normal]
    }

    pub fn maps_mut(&mut self) -> [&mut Vec<f32>; 3] {
        [&mut self.albedo, &mut self.arm, &mut self.normal]
    }

    pub fn add_scaled(&mut self, o: &TextureGrads, s: f32) {
        for (a, b) in self.maps_mut().into_iter().zip(o.maps()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.maps().iter().all(|m| m.iter().all(|v| *v == 0.0))
    }
}

/// Chains per-pixel color gradients through the recorded Jacobians and
/// scatters them into texels in pixel order (deterministic).
pub fn backward_from_jacobians(
    jacobians: &[Option<PixelJacobian>],
    upstream: &[f32],
    grads: &mut TextureGrads,
) {
    let per_pixel: Vec<Option<[f32; TANGENTS]>> = jacobians
        .par_iter()
        .enumerate()
        .map(|(i, j)| {
            j.as_ref().and_then(|j| {
                let up = &upstream[i * 3..i * 3 + 3];
                if up.iter().all(|v| *v == 0.0) {
                    return None;
                }
                let mut g = [0.0f32; TANGENTS];
                for (k, u) in up.iter().enumerate() {
                    for (gi, d) in g.iter_mut().zip(&j.d_rgb[k]) {
                        *gi += u * d;
                    }
                }
                Some(g)
            })
        })
        .collect();
    for (j, g) in jacobians.iter().zip(per_pixel) {
        let (Some(j), Some(g)) = (j, g) else { continue };
        for (t, w) in j.taps.iter() {
            let b = t * 3;
            grads.albedo[b] += w * g[0];
            grads.albedo[b + 1] += w * g[1];
            grads.albedo[b + 2] += w * g[2];
            grads.arm[b + arm::ROUGHNESS] += w * g[3];
            grads.arm[b + arm::METALLIC] += w * g[4];
            grads.normal[b] += w * g[5];
            grads.normal[b + 1] += w * g[6];
            grads.normal[b + 2] += w * g[7];
        }
    }
}

/// Gradient of `sum(upstream * shade(...))` with respect to every texel.
pub fn shade_backward(
    gbuffer: &GBuffer,
    textures: &TextureSet,
    light: &Light,
    opts: ShadeOptions,
    upstream: &[f32],
) -> TextureGrads {
    let (_, jac) = shade_with_jacobian(gbuffer, textures, light, opts);
    let mut grads = TextureGrads::zeros_like(textures);
    backward_from_jacobians(&jac, upstream, &mut grads);
    grads
}
