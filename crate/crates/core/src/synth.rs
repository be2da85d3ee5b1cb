//! Procedural meshes, material sets and environments used by the tests and
//! by the `synth` command.

use std::collections::HashMap;
use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::Mesh;
use crate::image::FloatImage;
use crate::math::Vec3;
use crate::texture::{avg_pool, encode_normal, TextureMap, TextureSet};

/// Axis-aligned square of side `side` in the plane z = `z`, facing +z,
/// UV (0,0) at the bottom-left corner.
pub fn quad(side: f32, z: f32) -> Mesh {
    let h = side * 0.5;
    Mesh {
        positions: vec![
            Vec3::new(-h, -h, z),
            Vec3::new(h, -h, z),
            Vec3::new(h, h, z),
            Vec3::new(-h, h, z),
        ],
        uvs: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        normals: vec![Vec3::new(0.0, 0.0, 1.0); 4],
        tangents: Vec::new(),
        triangles: vec![[0, 1, 2], [0, 2, 3]],
    }
}

/// Unit cube centered at the origin; each face is an `n`×`n` quad grid and
/// occupies one cell of a 3×2 UV atlas.
pub fn cube(n: usize) -> Mesh {
    let n = n.max(1);
    // (normal, u axis, v axis) per face; u × v = normal
    let faces = [
        (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.0, 1.0, 0.0)),
        (Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 1.0, 0.0)),
        (Vec3::new(0.0, 1.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, -1.0)),
        (Vec3::new(0.0, -1.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0)),
        (Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
        (Vec3::new(0.0, 0.0, -1.0), Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
    ];
    let mut m = Mesh::default();
    for (f, (nrm, ua, va)) in faces.iter().enumerate() {
        let (cx, cy) = ((f % 3) as f32, (f / 3) as f32);
        let base = m.positions.len() as u32;
        for j in 0..=n {
            for i in 0..=n {
                let (s, t) = (i as f32 / n as f32, j as f32 / n as f32);
                m.positions.push(nrm.scale(0.5) + ua.scale(s - 0.5) + va.scale(t - 0.5));
                m.normals.push(*nrm);
                m.uvs.push([(cx + s) / 3.0, (cy + t) / 2.0]);
            }
        }
        let row = (n + 1) as u32;
        for j in 0..n as u32 {
            for i in 0..n as u32 {
                let a = base + j * row + i;
                m.triangles.push([a, a + 1, a + row + 1]);
                m.triangles.push([a, a + row + 1, a + row]);
            }
        }
    }
    m
}

/// Latitude-longitude sphere of radius 1 with a duplicated seam column.
pub fn uv_sphere(segments: usize, rings: usize) -> Mesh {
    let mut m = Mesh::default();
    for r in 0..=rings {
        let theta = PI * r as f32 / rings as f32;
        for s in 0..=segments {
            let phi = 2.0 * PI * s as f32 / segments as f32;
            let p = Vec3::new(theta.sin() * phi.cos(), theta.cos(), -theta.sin() * phi.sin());
            m.positions.push(p);
            m.normals.push(p);
            m.uvs.push([s as f32 / segments as f32, 1.0 - r as f32 / rings as f32]);
        }
    }
    let row = (segments + 1) as u32;
    for r in 0..rings as u32 {
        for s in 0..segments as u32 {
            let a = r * row + s;
            if r != 0 {
                m.triangles.push([a, a + row, a + 1]);
            }
            if r + 1 != rings as u32 {
                m.triangles.push([a + 1, a + row, a + row + 1]);
            }
        }
    }
    m
}

/// Subdivided icosahedron on the unit sphere with spherical UVs.
pub fn icosphere(subdivisions: usize) -> Mesh {
    let t = (1.0 + 5.0f32.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut tris: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push((verts[a as usize] + verts[b as usize]).normalize());
                verts.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let uvs = verts
        .iter()
        .map(|p| [0.5 + p.z.atan2(p.x) / (2.0 * PI), 0.5 + p.y.clamp(-1.0, 1.0).asin() / PI])
        .collect();
    Mesh {
        normals: verts.clone(),
        positions: verts,
        uvs,
        tangents: Vec::new(),
        triangles: tris,
    }
}

/// Piecewise-constant material: Voronoi cells with per-cell albedo,
/// roughness, metallic and a tilted flat normal; AO is 1.
pub fn procedural_textures(size: usize, cells: usize, seed: u64) -> TextureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    struct Cell {
        site: [f32; 2],
        albedo: [f32; 3],
        rough: f32,
        metal: f32,
        normal: [f32; 3],
    }
    let sites: Vec<Cell> = (0..cells)
        .map(|_| {
            let tilt = Vec3::new(rng.gen_range(-0.35..0.35), rng.gen_range(-0.35..0.35), 1.0).normalize();
            Cell {
                site: [rng.gen(), rng.gen()],
                albedo: [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)],
                rough: rng.gen_range(0.25..0.95),
                metal: if rng.gen_bool(0.25) { rng.gen_range(0.6..0.9) } else { rng.gen_range(0.0..0.1) },
                normal: encode_normal(tilt),
            }
        })
        .collect();
    let nearest = |x: usize, y: usize| {
        let p = [(x as f32 + 0.5) / size as f32, (y as f32 + 0.5) / size as f32];
        let d2 = |c: &Cell| (c.site[0] - p[0]).powi(2) + (c.site[1] - p[1]).powi(2);
        sites
            .iter()
            .min_by(|a, b| d2(a).total_cmp(&d2(b)))
            .expect("at least one cell")
    };
    let albedo = TextureMap::from_fn(size, size, 3, |x, y| nearest(x, y).albedo.to_vec());
    let arm = TextureMap::from_fn(size, size, 3, |x, y| {
        let c = nearest(x, y);
        vec![1.0, c.rough, c.metal]
    });
    let normal = TextureMap::from_fn(size, size, 3, |x, y| nearest(x, y).normal.to_vec());
    TextureSet { albedo, arm, normal }
}

/// Average-pools every map by `factor`.
pub fn downsample_set(hr: &TextureSet, factor: usize) -> Result<TextureSet> {
    TextureSet::new(
        avg_pool(&hr.albedo, factor)?,
        avg_pool(&hr.arm, factor)?,
        avg_pool(&hr.normal, factor)?,
    )
}

/// Sky gradient over a darker ground with a soft sun.
pub fn procedural_environment(width: usize, height: usize) -> FloatImage {
    let sun = Vec3::new(0.5, 0.6, 0.62).normalize();
    FloatImage::from_fn(width, height, |x, y| {
        let d = crate::lighting::uv_to_dir((x as f32 + 0.5) / width as f32, (y as f32 + 0.5) / height as f32);
        let base = if d.y >= 0.0 {
            let t = d.y;
            [0.9 - 0.4 * t, 0.95 - 0.25 * t, 1.0]
        } else {
            let t = -d.y;
            [0.45 - 0.15 * t, 0.4 - 0.15 * t, 0.3 - 0.1 * t]
        };
        let s = (d.dot(sun) - 0.97).max(0.0) / 0.03;
        let glow = 3.0 * s * s;
        [base[0] + glow, base[1] + glow, base[2] + 0.9 * glow]
    })
}
