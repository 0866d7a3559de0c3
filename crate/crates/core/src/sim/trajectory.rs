//! Closed-form sinusoidal trajectories with exact derivatives.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::so3::{Rot3, Vec3};

/// Per-axis sinusoids `A·sin(2π f t + φ₀)` for position (x, y, z, in m) and
/// for the roll/pitch/yaw Euler angles (rad). Orientation is `Rz(yaw)·Ry(pitch)·Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryParams {
    pub pos_amplitude: Vec3,
    pub pos_freq: Vec3,
    pub pos_phase: Vec3,
    pub rot_amplitude: Vec3,
    pub rot_freq: Vec3,
    pub rot_phase: Vec3,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            pos_amplitude: Vec3::new(0.8, 0.6, 0.4),
            pos_freq: Vec3::new(0.31, 0.23, 0.17),
            pos_phase: Vec3::new(0.0, 1.3, 2.1),
            rot_amplitude: Vec3::new(0.6, 0.5, 0.8),
            rot_freq: Vec3::new(0.7, 0.55, 0.4),
            rot_phase: Vec3::new(0.4, 1.7, 2.6),
        }
    }
}

impl TrajectoryParams {
    pub fn stationary() -> Self {
        Self {
            pos_amplitude: Vec3::zeros(),
            rot_amplitude: Vec3::zeros(),
            ..Self::default()
        }
    }

    /// Same amplitudes and frequencies, phases drawn uniformly from `[0, 2π)`.
    pub fn with_random_phases<R: Rng>(mut self, rng: &mut R) -> Self {
        for i in 0..3 {
            self.pos_phase[i] = rng.random_range(0.0..TAU);
            self.rot_phase[i] = rng.random_range(0.0..TAU);
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        [
            self.pos_amplitude,
            self.pos_freq,
            self.pos_phase,
            self.rot_amplitude,
            self.rot_freq,
            self.rot_phase,
        ]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Pose and derivatives at time `t` (no range check).
    pub fn evaluate(&self, t: f64) -> TrajectorySample {
        let (pos, vel, acc) = sinusoid3(&self.pos_amplitude, &self.pos_freq, &self.pos_phase, t);
        let (e, de, dde) = sinusoid3(&self.rot_amplitude, &self.rot_freq, &self.rot_phase, t);

        let (sr, cr) = e.x.sin_cos();
        let (sp, cp) = e.y.sin_cos();
        let (dr, dp, dy) = (de.x, de.y, de.z);
        let (ddr, ddp, ddy) = (dde.x, dde.y, dde.z);

        let rot = Rot3::from_axis_angle(&Vec3::z_axis(), e.z)
            * Rot3::from_axis_angle(&Vec3::y_axis(), e.y)
            * Rot3::from_axis_angle(&Vec3::x_axis(), e.x);

        // Body rates of the ZYX Euler sequence and their time derivative.
        let omega = Vec3::new(
            dr - dy * sp,
            dp * cr + dy * sr * cp,
            -dp * sr + dy * cr * cp,
        );
        let omega_dot = Vec3::new(
            ddr - ddy * sp - dy * dp * cp,
            ddp * cr - dp * dr * sr + ddy * sr * cp + dy * dr * cr * cp - dy * dp * sr * sp,
            -ddp * sr - dp * dr * cr + ddy * cr * cp - dy * dr * sr * cp - dy * dp * cr * sp,
        );

        TrajectorySample {
            t,
            rot,
            pos,
            vel,
            acc,
            omega,
            omega_dot,
        }
    }
}

fn sinusoid3(amp: &Vec3, freq: &Vec3, phase: &Vec3, t: f64) -> (Vec3, Vec3, Vec3) {
    let mut x = Vec3::zeros();
    let mut dx = Vec3::zeros();
    let mut ddx = Vec3::zeros();
    for i in 0..3 {
        let w = TAU * freq[i];
        let (s, c) = (w * t + phase[i]).sin_cos();
        x[i] = amp[i] * s;
        dx[i] = amp[i] * w * c;
        ddx[i] = -amp[i] * w * w * s;
    }
    (x, dx, ddx)
}

/// Ground-truth body state at one instant. `rot` is `ʷR_body`; `omega` and
/// `omega_dot` are body-frame rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub rot: Rot3,
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
    pub omega: Vec3,
    pub omega_dot: Vec3,
}

impl TrajectorySample {
    /// State of a frame rigidly attached at `body_p_f` with orientation `body_r_f`.
    pub fn attached_frame(&self, body_r_f: &Rot3, body_p_f: &Vec3) -> TrajectorySample {
        let lever = self.omega.cross(body_p_f);
        let acc_body = self.omega_dot.cross(body_p_f) + self.omega.cross(&lever);
        TrajectorySample {
            t: self.t,
            rot: self.rot * body_r_f,
            pos: self.pos + self.rot * body_p_f,
            vel: self.vel + self.rot * lever,
            acc: self.acc + self.rot * acc_body,
            omega: body_r_f.inverse() * self.omega,
            omega_dot: body_r_f.inverse() * self.omega_dot,
        }
    }
}
