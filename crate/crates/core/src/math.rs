//! Small vector algebra plus a forward-mode dual number.
//!
//! The shading model is written once against [`Real`] and evaluated either
//! with plain `f32` (forward rendering) or with [`Dual`] (forward rendering
//! plus the exact Jacobian with respect to the per-pixel material inputs).

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Number of tangent directions carried by [`Dual`]: albedo rgb, roughness,
/// metallic and the three encoded normal-map channels.
pub const TANGENTS: usize = 8;

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f32, Output = Self>
    + Sub<f32, Output = Self>
    + Mul<f32, Output = Self>
    + Div<f32, Output = Self>
{
    fn cst(v: f32) -> Self;
    fn re(self) -> f32;
    fn sqrt(self) -> Self;
    fn acos(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    fn powi(self, n: i32) -> Self;

    /// `max(self, lo)`; the derivative is zero on the clamped branch.
    #[inline]
    fn max_c(self, lo: f32) -> Self {
        if self.re() < lo {
            Self::cst(lo)
        } else {
            self
        }
    }

    #[inline]
    fn min_c(self, hi: f32) -> Self {
        if self.re() > hi {
            Self::cst(hi)
        } else {
            self
        }
    }

    #[inline]
    fn clamp_c(self, lo: f32, hi: f32) -> Self {
        self.max_c(lo).min_c(hi)
    }
}

impl Real for f32 {
    #[inline]
    fn cst(v: f32) -> Self {
        v
    }
    #[inline]
    fn re(self) -> f32 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    #[inline]
    fn acos(self) -> Self {
        f32::acos(self.clamp(-1.0, 1.0))
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        f32::atan2(self, x)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f32::powi(self, n)
    }
}

/// Double-precision scalar for validating the shading model; `f32`
/// constants are widened on use.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Wide(pub f64);

macro_rules! wide_ops {
    ($($tr:ident $f:ident $op:tt),*) => {$(
        impl $tr for Wide {
            type Output = Wide;
            #[inline]
            fn $f(self, o: Wide) -> Wide {
                Wide(self.0 $op o.0)
            }
        }
        impl $tr<f32> for Wide {
            type Output = Wide;
            #[inline]
            fn $f(self, o: f32) -> Wide {
                Wide(self.0 $op o as f64)
            }
        }
    )*};
}
wide_ops!(Add add +, Sub sub -, Mul mul *, Div div /);

impl Neg for Wide {
    type Output = Wide;
    #[inline]
    fn neg(self) -> Wide {
        Wide(-self.0)
    }
}

impl Real for Wide {
    #[inline]
    fn cst(v: f32) -> Self {
        Wide(v as f64)
    }
    #[inline]
    fn re(self) -> f32 {
        self.0 as f32
    }
    #[inline]
    fn sqrt(self) -> Self {
        Wide(self.0.sqrt())
    }
    #[inline]
    fn acos(self) -> Self {
        Wide(self.0.clamp(-1.0, 1.0).acos())
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        Wide(self.0.atan2(x.0))
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        Wide(self.0.powi(n))
    }
}

/// Value plus gradient with respect to [`TANGENTS`] independent inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f32,
    pub d: [f32; TANGENTS],
}

impl Dual {
    #[inline]
    pub fn var(v: f32, slot: usize) -> Self {
        let mut d = [0.0; TANGENTS];
        d[slot] = 1.0;
        Dual { v, d }
    }

    #[inline]
    fn chain(self, v: f32, dv: f32) -> Self {
        let mut d = self.d;
        for x in &mut d {
            *x *= dv;
        }
        Dual { v, d }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: Dual) -> Dual {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a += b;
        }
        Dual { v: self.v + o.v, d }
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: Dual) -> Dual {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a -= b;
        }
        Dual { v: self.v - o.v, d }
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: Dual) -> Dual {
        let mut d = [0.0; TANGENTS];
        for i in 0..TANGENTS {
            d[i] = self.d[i] * o.v + o.d[i] * self.v;
        }
        Dual { v: self.v * o.v, d }
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut d = [0.0; TANGENTS];
        for i in 0..TANGENTS {
            d[i] = (self.d[i] - v * o.d[i]) * inv;
        }
        Dual { v, d }
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        self.chain(-self.v, -1.0)
    }
}

impl Add<f32> for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: f32) -> Dual {
        Dual { v: self.v + o, d: self.d }
    }
}

impl Sub<f32> for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: f32) -> Dual {
        Dual { v: self.v - o, d: self.d }
    }
}

impl Mul<f32> for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: f32) -> Dual {
        self.chain(self.v * o, o)
    }
}

impl Div<f32> for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: f32) -> Dual {
        let inv = 1.0 / o;
        self.chain(self.v * inv, inv)
    }
}

impl Real for Dual {
    #[inline]
    fn cst(v: f32) -> Self {
        Dual { v, d: [0.0; TANGENTS] }
    }
    #[inline]
    fn re(self) -> f32 {
        self.v
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let ds = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.chain(s, ds)
    }
    #[inline]
    fn acos(self) -> Self {
        let x = self.v.clamp(-1.0, 1.0);
        let ds = -1.0 / (1.0 - x * x).max(1e-12).sqrt();
        self.chain(x.acos(), ds)
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        // d atan2(y, x) = (x dy - y dx) / (x^2 + y^2)
        let r2 = (x.v * x.v + self.v * self.v).max(1e-20);
        let mut d = [0.0; TANGENTS];
        for i in 0..TANGENTS {
            d[i] = (x.v * self.d[i] - self.v * x.d[i]) / r2;
        }
        Dual {
            v: self.v.atan2(x.v),
            d,
        }
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::cst(1.0);
        }
        let p = self.v.powi(n - 1);
        self.chain(p * self.v, n as f32 * p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<S = f32> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S> Vec3<S> {
    #[inline]
    pub const fn new(x: S, y: S, z: S) -> Self {
        Vec3 { x, y, z }
    }
}

impl<S: Real> Vec3<S> {
    #[inline]
    pub fn splat(v: S) -> Self {
        Vec3::new(v, v, v)
    }
    #[inline]
    pub fn lift(v: Vec3<f32>) -> Self {
        Vec3::new(S::cst(v.x), S::cst(v.y), S::cst(v.z))
    }
    #[inline]
    pub fn dot(self, o: Self) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }
    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }
    #[inline]
    pub fn length(self) -> S {
        self.dot(self).sqrt()
    }
    #[inline]
    pub fn normalize(self) -> Self {
        let l = self.length();
        self * (S::cst(1.0) / l)
    }
    #[inline]
    pub fn scale(self, s: f32) -> Self {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
    #[inline]
    pub fn re(self) -> Vec3<f32> {
        Vec3::new(self.x.re(), self.y.re(), self.z.re())
    }
    #[inline]
    pub fn to_array(self) -> [S; 3] {
        [self.x, self.y, self.z]
    }
    #[inline]
    pub fn from_array(a: [S; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Vec3<f32> {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    #[inline]
    pub fn max_abs(self) -> f32 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
    #[inline]
    pub fn to_f64(self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }
}

impl<S: Real> Add for Vec3<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<S: Real> AddAssign for Vec3<S> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<S: Real> Sub for Vec3<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<S: Real> Neg for Vec3<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl<S: Real> Mul<S> for Vec3<S> {
    type Output = Self;
    #[inline]
    fn mul(self, s: S) -> Self {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Column-major 4x4 matrix (`m[col][row]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat4 {
    pub m: [[f32; 4]; 4],
}

impl Mat4 {
    pub const IDENTITY: Mat4 = Mat4 {
        m: [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
    };

    pub fn from_rows(r: [[f32; 4]; 4]) -> Mat4 {
        let mut m = [[0.0; 4]; 4];
        for (row, vals) in r.iter().enumerate() {
            for (col, v) in vals.iter().enumerate() {
                m[col][row] = *v;
            }
        }
        Mat4 { m }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.m[col][row]
    }

    pub fn mul_mat(&self, o: &Mat4) -> Mat4 {
        let mut m = [[0.0; 4]; 4];
        for (col, out_col) in m.iter_mut().enumerate() {
            for (row, out) in out_col.iter_mut().enumerate() {
                *out = (0..4).map(|k| self.get(row, k) * o.get(k, col)).sum();
            }
        }
        Mat4 { m }
    }

    #[inline]
    pub fn transform(&self, p: [f32; 4]) -> [f32; 4] {
        let mut out = [0.0; 4];
        for (row, o) in out.iter_mut().enumerate() {
            *o = self.get(row, 0) * p[0]
                + self.get(row, 1) * p[1]
                + self.get(row, 2) * p[2]
                + self.get(row, 3) * p[3];
        }
        out
    }
}
