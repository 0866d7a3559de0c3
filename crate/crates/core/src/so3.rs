//! Rotation algebra on SO(3).
//!
//! Frames follow the `ᴬR_V` convention throughout the crate: a rotation named
//! `a_r_v` maps coordinates expressed in frame V into frame A. Quaternions are
//! Hamilton, stored with a non-negative scalar part.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Rot3 = Rotation3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Below this angle exp/log/J_r switch to their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix with `skew(v) * u == v.cross(&u)`.
#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] for an antisymmetric matrix (uses the antisymmetric part).
#[inline]
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Exponential map (Rodrigues).
pub fn exp_so3(phi: &Vec3) -> Rot3 {
    let theta = phi.norm();
    let k = skew(phi);
    let k2 = k * k;
    let m = if theta < SMALL_ANGLE {
        Mat3::identity() + k + 0.5 * k2
    } else {
        let t2 = theta * theta;
        Mat3::identity() + (theta.sin() / theta) * k + ((1.0 - theta.cos()) / t2) * k2
    };
    Rot3::from_matrix_unchecked(m)
}

/// Logarithm map; the returned rotation vector has norm in `[0, π]`.
pub fn log_so3(r: &Rot3) -> Vec3 {
    let m = r.matrix();
    let w = vee(m);
    let sin_theta = w.norm();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < SMALL_ANGLE {
        // theta / sin(theta) ~ 1 + theta^2 / 6
        return w * (1.0 + theta * theta / 6.0);
    }
    if cos_theta > -0.99 {
        return w * (theta / sin_theta);
    }

    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part (1 - cos) n nᵀ and take the sign from `w`.
    let b = 0.5 * (m + m.transpose()) - Mat3::identity() * cos_theta;
    let mut i = 0;
    for j in 1..3 {
        if b[(j, j)] > b[(i, i)] {
            i = j;
        }
    }
    let mut axis: Vec3 = b.column(i).into_owned();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Right Jacobian of SO(3): `Exp(φ + δ) ≈ Exp(φ) Exp(J_r(φ) δ)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        return Mat3::identity() - 0.5 * k + k2 / 6.0;
    }
    let t2 = theta * theta;
    Mat3::identity() - ((1.0 - theta.cos()) / t2) * k + ((theta - theta.sin()) / (t2 * theta)) * k2
}

/// Canonical quaternion (scalar part ≥ 0) for a rotation matrix.
pub fn quat_from_rotation(r: &Rot3) -> Quat {
    canonical(Quat::from_rotation_matrix(r))
}

pub fn rotation_from_quat(q: &Quat) -> Rot3 {
    q.to_rotation_matrix()
}

/// Flips the quaternion so that `w ≥ 0`.
pub fn canonical(q: Quat) -> Quat {
    if q.w < 0.0 {
        Quat::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Builds a canonical unit quaternion from `[w, x, y, z]`, normalising it.
///
/// Returns `None` for non-finite or (near) zero-norm input.
pub fn quat_from_wxyz(wxyz: [f64; 4]) -> Option<Quat> {
    let q = nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
    let n = q.norm();
    if !n.is_finite() || n < 1e-12 {
        return None;
    }
    if (n - 1.0).abs() < 1e-12 {
        return Some(canonical(Quat::new_unchecked(q)));
    }
    Some(canonical(Quat::new_normalize(q)))
}

pub fn quat_to_wxyz(q: &Quat) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Right retraction on the quaternion: `q ⊗ exp(δ)`, renormalised.
pub fn quat_retract(q: &Quat, delta: &Vec3) -> Quat {
    canonical(Quat::new_normalize(
        (q * Quat::from_scaled_axis(*delta)).into_inner(),
    ))
}

/// Geodesic angle between two rotations, `‖log(aᵀ b)‖`.
pub fn geodesic_angle(a: &Rot3, b: &Rot3) -> f64 {
    log_so3(&(a.transpose() * b)).norm()
}

pub fn quat_geodesic_angle(a: &Quat, b: &Quat) -> f64 {
    geodesic_angle(&a.to_rotation_matrix(), &b.to_rotation_matrix())
}

/// Largest deviation of `RᵀR` from identity and of `det R` from one.
pub fn orthonormality_error(m: &Mat3) -> f64 {
    let e = (m.transpose() * m - Mat3::identity()).abs().max();
    e.max((m.determinant() - 1.0).abs())
}
