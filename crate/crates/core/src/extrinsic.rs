use serde::{Deserialize, Serialize};

use crate::so3::{quat_from_wxyz, quat_to_wxyz, Quat, Rot3, Vec3};

/// Rigid transform between two sensor frames A and B.
///
/// `q` is `ᴮq_A` (maps A-coordinates into B) and `p` is `ᴬp_B`, the origin of
/// B expressed in A. A mount on a rigid body uses the same type with the body
/// as frame A: `q = ᴵq_body`, `p = ᵇᵒᵈʸp_I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExtrinsicRepr", into = "ExtrinsicRepr")]
pub struct Extrinsic {
    pub q: Quat,
    pub p: Vec3,
}

#[derive(Serialize, Deserialize)]
struct ExtrinsicRepr {
    q_wxyz: [f64; 4],
    p_m: [f64; 3],
}

impl TryFrom<ExtrinsicRepr> for Extrinsic {
    type Error = String;

    fn try_from(r: ExtrinsicRepr) -> Result<Self, Self::Error> {
        let q = quat_from_wxyz(r.q_wxyz).ok_or("quaternion must be finite and non-zero")?;
        if r.p_m.iter().any(|v| !v.is_finite()) {
            return Err("translation must be finite".into());
        }
        Ok(Extrinsic::new(q, Vec3::from(r.p_m)))
    }
}

impl From<Extrinsic> for ExtrinsicRepr {
    fn from(e: Extrinsic) -> Self {
        ExtrinsicRepr {
            q_wxyz: quat_to_wxyz(&e.q),
            p_m: e.p.into(),
        }
    }
}

impl Default for Extrinsic {
    fn default() -> Self {
        Self::identity()
    }
}

impl Extrinsic {
    pub fn new(q: Quat, p: Vec3) -> Self {
        Self {
            q: crate::so3::canonical(q),
            p,
        }
    }

    pub fn identity() -> Self {
        Self::new(Quat::identity(), Vec3::zeros())
    }

    /// `ᴮR_A`.
    pub fn rotation(&self) -> Rot3 {
        self.q.to_rotation_matrix()
    }

    /// Extrinsic from A to B given both mounts relative to a common body frame.
    pub fn between_mounts(mount_a: &Extrinsic, mount_b: &Extrinsic) -> Self {
        let q = mount_b.q * mount_a.q.inverse();
        let p = mount_a.q * (mount_b.p - mount_a.p);
        Self::new(q, p)
    }

    /// The reverse transform: `ᴬq_B`, `ᴮp_A`.
    pub fn inverse(&self) -> Self {
        Self::new(self.q.inverse(), -(self.q * self.p))
    }

    /// Translation error (m) and geodesic rotation error (rad) against `truth`.
    pub fn error_to(&self, truth: &Extrinsic) -> (f64, f64) {
        (
            (self.p - truth.p).norm(),
            crate::so3::quat_geodesic_angle(&self.q, &truth.q),
        )
    }
}
