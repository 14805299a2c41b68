//! Rigid-body motion on SE(3) and the pinhole camera model.
//!
//! Tangent vectors are ordered `[rho; phi]`: translation part first, then the
//! rotation vector (radians). Poses act on points as `p' = R p + t`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6, SVD};

use crate::error::{invalid, Error, Result};

pub type Point3 = Vector3<f64>;

/// Below this rotation angle the exponential map switches to its Taylor branch.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Minimum depth accepted by [`Intrinsics::project`].
pub const MIN_Z: f64 = 1e-6;

const ORTHO_TOL: f64 = 1e-9;

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// An se(3) tangent vector `[rho; phi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tangent(pub Vector6<f64>);

impl Tangent {
    pub fn zero() -> Self {
        Tangent(Vector6::zeros())
    }

    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Tangent(Vector6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z))
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Tangent(Vector6::from_column_slice(&v))
    }

    pub fn rho(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn phi(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn exp(&self) -> Result<Pose> {
        exp_map(self)
    }
}

impl std::ops::Neg for Tangent {
    type Output = Tangent;
    fn neg(self) -> Tangent {
        Tangent(-self.0)
    }
}

/// Coefficients `(sin θ/θ, (1 − cos θ)/θ², (θ − sin θ)/θ³)`.
fn so3_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let half = (0.5 * theta).sin();
        let t2 = theta * theta;
        (
            theta.sin() / theta,
            2.0 * half * half / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    }
}

/// Closed-form exponential map (Rodrigues rotation, left Jacobian for translation).
pub fn exp_map(xi: &Tangent) -> Result<Pose> {
    if !xi.is_finite() {
        return Err(invalid(format!("non-finite tangent {:?}", xi.0.as_slice())));
    }
    let phi = xi.phi();
    let theta = phi.norm();
    let (a, b, c) = so3_coefficients(theta);
    let w = hat(&phi);
    let w2 = w * w;
    let rotation = Matrix3::identity() + w * a + w2 * b;
    let v = Matrix3::identity() + w * b + w2 * c;
    Ok(Pose {
        rotation,
        translation: v * xi.rho(),
    })
}

/// Inverse of [`exp_map`]. Fails within 1e-6 rad of a half turn.
pub fn log_map(pose: &Pose) -> Result<Tangent> {
    let r = &pose.rotation;
    let w = vee(&(r - r.transpose())) * 0.5;
    let s = w.norm();
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if std::f64::consts::PI - theta < 1e-6 {
        return Err(Error::IllConditioned(format!("rotation angle {theta} too close to pi")));
    }
    let phi = if theta < SMALL_ANGLE {
        w * (1.0 + theta * theta / 6.0)
    } else {
        w * (theta / s)
    };
    let coef = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / (theta * theta)
    };
    let wh = hat(&phi);
    let v_inv = Matrix3::identity() - wh * 0.5 + wh * wh * coef;
    Ok(Tangent::new(v_inv * pose.translation, phi))
}

/// A rigid transform `p ↦ R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, checking that `rotation` lies on SO(3) within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let p = Pose { rotation, translation };
        if !p.is_valid(ORTHO_TOL) {
            return Err(invalid("rotation is not orthonormal with det +1"));
        }
        Ok(p)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` about the camera y axis (yaw for a forward-looking camera).
    pub fn yaw(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Pose {
            rotation: Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            translation: Vector3::zeros(),
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        ortho <= tol && (r.determinant() - 1.0).abs() <= tol && self.translation.iter().all(|x| x.is_finite())
    }

    /// Projects a near-rotation matrix onto SO(3) via SVD.
    pub fn orthonormalized(&self) -> Self {
        let svd = SVD::new(self.rotation, true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Pose {
            rotation: u * d * vt,
            translation: self.translation,
        }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// Adjoint: `exp(Ad_T ξ) = T exp(ξ) T⁻¹`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let mut ad = Matrix6::zeros();
        let r = self.rotation;
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(0, 3).copy_from(&(hat(&self.translation) * r));
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let s = (vee(&(self.rotation - self.rotation.transpose())) * 0.5).norm();
        s.atan2(c)
    }

    /// Yaw angle about the y axis, `atan2(r02, r22)`.
    pub fn yaw_angle(&self) -> f64 {
        self.rotation[(0, 2)].atan2(self.rotation[(2, 2)])
    }

    /// Row-major `[R | t]`, the KITTI odometry line layout.
    pub fn to_row(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    /// Parses 12 numbers in KITTI layout. Rotations off SO(3) by less than 1e-4
    /// (e.g. printed with few decimals) are re-orthonormalized.
    pub fn from_row(v: &[f64]) -> Result<Pose> {
        if v.len() != 12 {
            return Err(invalid(format!("pose row needs 12 values, got {}", v.len())));
        }
        let p = Pose {
            rotation: Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            translation: Vector3::new(v[3], v[7], v[11]),
        };
        if p.is_valid(ORTHO_TOL) {
            Ok(p)
        } else if p.is_valid(1e-4) {
            Ok(p.orthonormalized())
        } else {
            Err(invalid("pose row rotation is not a rotation matrix"))
        }
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = self.to_row();
        for (i, x) in row.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{x:e}")?;
        }
        Ok(())
    }
}

pub fn parse_pose_file(text: &str) -> Result<Vec<Pose>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let vals = l
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            Pose::from_row(&vals).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn format_pose_file(poses: &[Pose]) -> String {
    let mut out = String::new();
    for p in poses {
        out.push_str(&p.to_string());
        out.push('\n');
    }
    out
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let ok = fx > 0.0 && fy > 0.0 && cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64;
        if !ok {
            return Err(invalid(format!(
                "bad intrinsics fx={fx} fy={fy} cx={cx} cy={cy} for {width}x{height}"
            )));
        }
        Ok(Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// `K⁻¹ [u, v, 1]ᵀ`, the ray with unit z through pixel `(u, v)`.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn project_unchecked(&self, p: &Point3) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    pub fn project(&self, p: &Point3) -> Result<(f64, f64)> {
        if !(p.z > MIN_Z) {
            return Err(Error::BehindCamera(p.z));
        }
        Ok(self.project_unchecked(p))
    }

    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Result<Point3> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::InvalidDepth(format!("depth {depth} at ({u}, {v})")));
        }
        Ok(self.ray(u, v) * depth)
    }

    /// Rows of `∂(u, v)/∂p` at `p`.
    #[inline]
    pub fn project_jacobian(&self, p: &Point3) -> ([f64; 3], [f64; 3]) {
        let iz = 1.0 / p.z;
        (
            [self.fx * iz, 0.0, -self.fx * p.x * iz * iz],
            [0.0, self.fy * iz, -self.fy * p.y * iz * iz],
        )
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Same camera with the image resampled by `factor` (used for coarser runs).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Intrinsics::new(
            self.fx * factor,
            self.fy * factor,
            (self.cx + 0.5) * factor - 0.5,
            (self.cy + 0.5) * factor - 0.5,
            (self.width as f64 * factor).round() as usize,
            (self.height as f64 * factor).round() as usize,
        )
    }
}
