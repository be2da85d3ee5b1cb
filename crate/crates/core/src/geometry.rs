//! Triangle meshes: OBJ I/O, normalization and per-vertex tangent frames.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Indexed triangle mesh. UVs follow the OBJ convention (v points up the
/// image); [`Mesh::texture_uv`] converts to row-down texture addressing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub positions: Vec<Vec3>,
    pub uvs: Vec<[f32; 2]>,
    pub normals: Vec<Vec3>,
    /// xyz tangent plus handedness sign in w.
    pub tangents: Vec<[f32; 4]>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn texture_uv(uv: [f32; 2]) -> [f32; 2] {
        [uv[0], 1.0 - uv[1]]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.uvs.len() != n || self.normals.len() != n {
            return Err(Error::DegenerateMesh(format!(
                "attribute counts differ: {} positions, {} uvs, {} normals",
                n,
                self.uvs.len(),
                self.normals.len()
            )));
        }
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::DegenerateMesh(format!("triangle {t:?} references a missing vertex")));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.positions.first()?;
        Some(self.positions.iter().fold((first, first), |(lo, hi), p| {
            (
                Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
                Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
            )
        }))
    }

    /// Loads, normalizes and computes tangents: the form the renderer expects.
    pub fn load_prepared(path: &Path) -> Result<Mesh> {
        Ok(compute_tangents(&normalize_mesh(&load_mesh(path)?)?))
    }
}

fn parse_floats<const N: usize>(path: &Path, line: usize, it: &mut std::str::SplitWhitespace) -> Result<[f32; N]> {
    let mut out = [0.0f32; N];
    for o in &mut out {
        *o = it
            .next()
            .ok_or_else(|| Error::parse(path, line, "too few components"))?
            .parse()
            .map_err(|_| Error::parse(path, line, "invalid number"))?;
    }
    Ok(out)
}

fn resolve_index(path: &Path, line: usize, s: &str, count: usize) -> Result<usize> {
    let i: i64 = s.parse().map_err(|_| Error::parse(path, line, format!("invalid index '{s}'")))?;
    let idx = if i < 0 { count as i64 + i } else { i - 1 };
    if idx < 0 || idx as usize >= count {
        return Err(Error::parse(path, line, format!("index {i} out of range")));
    }
    Ok(idx as usize)
}

/// Parses an OBJ subset (`v`, `vt`, `vn`, `f`). Polygons are fan
/// triangulated and every distinct (position, uv, normal) triple becomes one
/// vertex. Missing normals are rebuilt from area-weighted face normals.
pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let mut pos = Vec::new();
    let mut tex = Vec::new();
    let mut nrm = Vec::new();
    let mut mesh = Mesh::default();
    let mut remap: HashMap<(usize, usize, Option<usize>), u32> = HashMap::new();
    let mut needs_normals = false;

    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut it = content.split_whitespace();
        match it.next() {
            Some("v") => {
                let [x, y, z] = parse_floats::<3>(path, line, &mut it)?;
                pos.push(Vec3::new(x, y, z));
            }
            Some("vt") => {
                let [u, v] = parse_floats::<2>(path, line, &mut it)?;
                tex.push([u, v]);
            }
            Some("vn") => {
                let [x, y, z] = parse_floats::<3>(path, line, &mut it)?;
                nrm.push(Vec3::new(x, y, z));
            }
            Some("f") => {
                let mut corners = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let p = resolve_index(path, line, parts.next().unwrap_or(""), pos.len())?;
                    let t = match parts.next() {
                        Some(s) if !s.is_empty() => resolve_index(path, line, s, tex.len())?,
                        _ => return Err(Error::MissingUv),
                    };
                    let n = match parts.next() {
                        Some(s) if !s.is_empty() => Some(resolve_index(path, line, s, nrm.len())?),
                        _ => {
                            needs_normals = true;
                            None
                        }
                    };
                    let key = (p, t, n);
                    let id = *remap.entry(key).or_insert_with(|| {
                        mesh.positions.push(pos[p]);
                        mesh.uvs.push(tex[t]);
                        mesh.normals.push(n.map_or(Vec3::ZERO, |n| unitize(nrm[n])));
                        (mesh.positions.len() - 1) as u32
                    });
                    corners.push(id);
                }
                if corners.len() < 3 {
                    return Err(Error::parse(path, line, "face with fewer than 3 vertices"));
                }
                for k in 1..corners.len() - 1 {
                    mesh.triangles.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if mesh.triangles.is_empty() && !pos.is_empty() && tex.is_empty() {
        return Err(Error::MissingUv);
    }
    if needs_normals {
        rebuild_missing_normals(&mut mesh);
    }
    mesh.validate()?;
    Ok(mesh)
}

fn rebuild_missing_normals(mesh: &mut Mesh) {
    let mut acc = vec![Vec3::ZERO; mesh.positions.len()];
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.positions[i as usize]);
        let n = (b - a).cross(c - a);
        for &i in t {
            acc[i as usize] += n;
        }
    }
    for (n, a) in mesh.normals.iter_mut().zip(acc) {
        if *n == Vec3::ZERO {
            let l = a.length();
            *n = if l > 0.0 { a.scale(1.0 / l) } else { Vec3::new(0.0, 0.0, 1.0) };
        }
    }
}

/// Leaves vectors that are already unit length (to f32 precision) untouched
/// so load/write round trips are exact.
fn unitize(v: Vec3) -> Vec3 {
    if (v.dot(v) - 1.0).abs() <= 4.0 * f32::EPSILON {
        v
    } else {
        v.normalize()
    }
}

pub fn write_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    let mut s = String::new();
    for p in &mesh.positions {
        let _ = writeln!(s, "v {:?} {:?} {:?}", p.x, p.y, p.z);
    }
    for t in &mesh.uvs {
        let _ = writeln!(s, "vt {:?} {:?}", t[0], t[1]);
    }
    for n in &mesh.normals {
        let _ = writeln!(s, "vn {:?} {:?} {:?}", n.x, n.y, n.z);
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        let _ = writeln!(s, "f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Centers the bounding box at the origin and scales its longest side to 1.
pub fn normalize_mesh(mesh: &Mesh) -> Result<Mesh> {
    let (lo, hi) = mesh
        .bounds()
        .ok_or_else(|| Error::DegenerateMesh("mesh has no vertices".into()))?;
    let ext = hi - lo;
    let longest = ext.x.max(ext.y).max(ext.z);
    if !(longest > 0.0) || !longest.is_finite() {
        return Err(Error::DegenerateMesh("bounding box has zero extent".into()));
    }
    let c = [
        (lo.x as f64 + hi.x as f64) * 0.5,
        (lo.y as f64 + hi.y as f64) * 0.5,
        (lo.z as f64 + hi.z as f64) * 0.5,
    ];
    let s = 1.0 / longest as f64;
    let mut out = mesh.clone();
    for p in &mut out.positions {
        *p = Vec3::new(
            ((p.x as f64 - c[0]) * s) as f32,
            ((p.y as f64 - c[1]) * s) as f32,
            ((p.z as f64 - c[2]) * s) as f32,
        );
    }
    Ok(out)
}

fn any_orthogonal(n: Vec3) -> Vec3 {
    let helper = if n.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    (helper - n.scale(n.dot(helper))).normalize()
}

/// Per-vertex tangents from accumulated per-face UV derivatives,
/// Gram-Schmidt orthogonalized against the vertex normal.
pub fn compute_tangents(mesh: &Mesh) -> Mesh {
    let n = mesh.positions.len();
    let mut tan = vec![[0.0f64; 3]; n];
    let mut bit = vec![[0.0f64; 3]; n];
    for t in &mesh.triangles {
        let [i0, i1, i2] = t.map(|i| i as usize);
        let (p0, p1, p2) = (
            mesh.positions[i0].to_f64(),
            mesh.positions[i1].to_f64(),
            mesh.positions[i2].to_f64(),
        );
        let (w0, w1, w2) = (mesh.uvs[i0], mesh.uvs[i1], mesh.uvs[i2]);
        let e1: [f64; 3] = std::array::from_fn(|k| p1[k] - p0[k]);
        let e2: [f64; 3] = std::array::from_fn(|k| p2[k] - p0[k]);
        let (du1, dv1) = ((w1[0] - w0[0]) as f64, (w1[1] - w0[1]) as f64);
        let (du2, dv2) = ((w2[0] - w0[0]) as f64, (w2[1] - w0[1]) as f64);
        let r = du1 * dv2 - du2 * dv1;
        if r.abs() < 1e-14 {
            continue;
        }
        let sdir: [f64; 3] = std::array::from_fn(|k| (e1[k] * dv2 - e2[k] * dv1) / r);
        let tdir: [f64; 3] = std::array::from_fn(|k| (e2[k] * du1 - e1[k] * du2) / r);
        for i in [i0, i1, i2] {
            for k in 0..3 {
                tan[i][k] += sdir[k];
                bit[i][k] += tdir[k];
            }
        }
    }
    let mut out = mesh.clone();
    out.tangents = (0..n)
        .map(|i| {
            let nn = mesh.normals[i].normalize();
            let nd = nn.to_f64();
            let t = tan[i];
            let d = t[0] * nd[0] + t[1] * nd[1] + t[2] * nd[2];
            let o: [f64; 3] = std::array::from_fn(|k| t[k] - nd[k] * d);
            let len = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
            let tv = if len > 1e-12 {
                let v = Vec3::new((o[0] / len) as f32, (o[1] / len) as f32, (o[2] / len) as f32);
                // one more projection in f32 to keep T.N at rounding level
                (v - nn.scale(nn.dot(v))).normalize()
            } else {
                any_orthogonal(nn)
            };
            let c = nn.cross(tv).to_f64();
            let handed = c[0] * bit[i][0] + c[1] * bit[i][1] + c[2] * bit[i][2];
            [tv.x, tv.y, tv.z, if handed < 0.0 { -1.0 } else { 1.0 }]
        })
        .collect();
    out
}
