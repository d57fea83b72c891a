//! Small SO(3) toolkit on plain `Matrix3`/`Vector3`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Skew-symmetric matrix such that `hat(a) * b == a.cross(&b)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]; reads the lower-left entries, no antisymmetrization.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues exponential of a rotation vector.
pub fn exp(w: &Vec3) -> Mat3 {
    let theta = w.norm();
    let k = hat(w);
    if theta < 1e-8 {
        // second-order Taylor expansion; exact identity for a zero vector
        return Mat3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Mat3::identity() + a * k + b * k * k
}

/// Principal logarithm as a rotation vector (angle in [0, pi]).
pub fn log(r: &Mat3) -> Vec3 {
    let anti = 0.5 * vee(&(r - r.transpose()));
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = anti.norm();
    let theta = sin.atan2(cos);
    if sin < 1e-9 {
        if cos > 0.0 {
            // theta / sin(theta) -> 1
            return anti;
        }
        // near pi: axis from the symmetric part
        let s = 0.5 * (r + Mat3::identity());
        let diag = s.diagonal();
        let i = diag.imax();
        let mut axis = s.column(i).into_owned();
        axis /= axis.norm();
        return axis * theta;
    }
    anti * (theta / sin)
}

/// Gram-Schmidt on the columns, keeping the first column's direction.
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let c0 = r.column(0).normalize();
    let c1 = r.column(1) - c0 * c0.dot(&r.column(1));
    let c1 = c1.normalize();
    let c2 = c0.cross(&c1);
    Mat3::from_columns(&[c0, c1, c2])
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Heading of the body x axis projected on the world xy plane.
pub fn yaw_of(r: &Mat3) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

/// Wrap an angle into [-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can land exactly on -pi for inputs equal to pi
    if w == -PI && a > 0.0 {
        PI
    } else {
        w
    }
}

pub fn is_rotation(r: &Mat3, tol: f64) -> bool {
    let e = r.transpose() * r - Mat3::identity();
    e.amax() <= tol && (r.determinant() - 1.0).abs() <= tol
}
