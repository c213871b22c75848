//! Vector and rotation algebra shared by the simulator and the analysis tools.
//!
//! Conventions: the inertial frame is north-east-down (gravity along `+z`) and
//! body frames are forward-right-down. `Rot3` maps body vectors into the
//! inertial frame.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance used when checking rotation matrix invariants.
pub const ROTATION_TOL: f64 = 1e-9;

/// Third standard basis vector (points down in the inertial frame).
pub fn e3() -> Vec3 {
    Vec3::new(0.0, 0.0, 1.0)
}

/// Skew-symmetric matrix such that `hat(v) * w == v.cross(&w)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Only the skew-symmetric part of `m` contributes.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rot3(Mat3);

impl Rot3 {
    pub fn identity() -> Self {
        Rot3(Mat3::identity())
    }

    /// Wraps `m`, projecting it onto SO(3) first.
    pub fn from_matrix(m: Mat3) -> Self {
        Rot3(orthonormalize(&m))
    }

    /// Wraps `m` without projection. Caller guarantees the invariants.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rot3(m)
    }

    /// Rotation about inertial `z` by `yaw` radians.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Rot3(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Z-Y-X Euler angles (roll about x, pitch about y, yaw about z).
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        let r = nalgebra::Rotation3::from_euler_angles(roll, pitch, yaw);
        Rot3(*r.matrix())
    }

    /// Exponential map of an axis-angle vector.
    pub fn exp(omega: &Vec3) -> Self {
        let r = nalgebra::Rotation3::new(*omega);
        Rot3(*r.matrix())
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Rot3 {
        Rot3(self.0.transpose())
    }

    pub fn compose(&self, other: &Rot3) -> Rot3 {
        Rot3(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Heading of the body x axis projected on the horizontal plane.
    pub fn yaw(&self) -> f64 {
        self.0[(1, 0)].atan2(self.0[(0, 0)])
    }

    /// Frobenius norm of `RᵀR - I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }

    pub fn is_valid(&self) -> bool {
        self.orthonormality_error() <= ROTATION_TOL && (self.0.determinant() - 1.0).abs() <= ROTATION_TOL
    }

    /// Unit quaternion `[w, x, y, z]` for logging.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.w, q.i, q.j, q.k]
    }
}

impl Default for Rot3 {
    fn default() -> Self {
        Rot3::identity()
    }
}

/// Nearest rotation to `m` (polar projection) via Newton iteration, falling
/// back to SVD when `m` is far from orthonormal.
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    let err = (m.transpose() * m - Mat3::identity()).norm();
    if err < 0.1 {
        let mut r = *m;
        for _ in 0..4 {
            // X <- X (3I - XᵀX) / 2
            let next = r * (Mat3::identity() * 3.0 - r.transpose() * r) * 0.5;
            let done = (next - r).norm() < 1e-15;
            r = next;
            if done {
                break;
            }
        }
        return r;
    }
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fixed = u;
        u_fixed.column_mut(2).neg_mut();
        r = u_fixed * v_t;
    }
    r
}

/// Planar wrench `[f_x, f_y, τ]` used by the grasp analysis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WrenchPlanar {
    pub fx: f64,
    pub fy: f64,
    pub tau: f64,
}

impl WrenchPlanar {
    pub const ZERO: WrenchPlanar = WrenchPlanar { fx: 0.0, fy: 0.0, tau: 0.0 };

    pub fn new(fx: f64, fy: f64, tau: f64) -> Self {
        WrenchPlanar { fx, fy, tau }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.fx, self.fy, self.tau]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        WrenchPlanar::new(a[0], a[1], a[2])
    }

    pub fn norm(&self) -> f64 {
        (self.fx * self.fx + self.fy * self.fy + self.tau * self.tau).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        WrenchPlanar::new(self.fx * s, self.fy * s, self.tau * s)
    }

    pub fn is_finite(&self) -> bool {
        self.fx.is_finite() && self.fy.is_finite() && self.tau.is_finite()
    }
}

impl std::ops::Neg for WrenchPlanar {
    type Output = WrenchPlanar;
    fn neg(self) -> WrenchPlanar {
        self.scale(-1.0)
    }
}

impl std::ops::Add for WrenchPlanar {
    type Output = WrenchPlanar;
    fn add(self, o: WrenchPlanar) -> WrenchPlanar {
        WrenchPlanar::new(self.fx + o.fx, self.fy + o.fy, self.tau + o.tau)
    }
}

impl std::ops::Sub for WrenchPlanar {
    type Output = WrenchPlanar;
    fn sub(self, o: WrenchPlanar) -> WrenchPlanar {
        WrenchPlanar::new(self.fx - o.fx, self.fy - o.fy, self.tau - o.tau)
    }
}

/// Vector space operations needed by [`rk4_step`].
pub trait OdeState: Clone {
    fn axpy(&self, a: f64, d: &Self) -> Self;
    fn is_finite(&self) -> bool;
}

impl OdeState for f64 {
    fn axpy(&self, a: f64, d: &Self) -> Self {
        self + a * d
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl<const N: usize> OdeState for [f64; N] {
    fn axpy(&self, a: f64, d: &Self) -> Self {
        let mut out = *self;
        for (o, di) in out.iter_mut().zip(d) {
            *o += a * di;
        }
        out
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntegrationError {
    #[error("non-finite derivative at t = {t}")]
    NonFinite { t: f64 },
    #[error("time step {0} outside (0, 0.01] s")]
    BadStep(f64),
}

/// Largest accepted fixed step.
pub const MAX_STEP: f64 = 0.01;

/// One classical RK4 step of `ẏ = f(t, y)`. The derivative type is the same
/// vector space as the state.
pub fn rk4_step<S, F>(t: f64, y: &S, dt: f64, mut f: F) -> Result<S, IntegrationError>
where
    S: OdeState,
    F: FnMut(f64, &S) -> S,
{
    if !(dt > 0.0 && dt <= MAX_STEP) {
        return Err(IntegrationError::BadStep(dt));
    }
    let k1 = f(t, y);
    check(&k1, t)?;
    let k2 = f(t + 0.5 * dt, &y.axpy(0.5 * dt, &k1));
    check(&k2, t)?;
    let k3 = f(t + 0.5 * dt, &y.axpy(0.5 * dt, &k2));
    check(&k3, t)?;
    let k4 = f(t + dt, &y.axpy(dt, &k3));
    check(&k4, t)?;
    let out = y
        .axpy(dt / 6.0, &k1)
        .axpy(dt / 3.0, &k2)
        .axpy(dt / 3.0, &k3)
        .axpy(dt / 6.0, &k4);
    check(&out, t)?;
    Ok(out)
}

fn check<S: OdeState>(s: &S, t: f64) -> Result<(), IntegrationError> {
    if s.is_finite() {
        Ok(())
    } else {
        Err(IntegrationError::NonFinite { t })
    }
}
