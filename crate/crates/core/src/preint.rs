//! On-manifold preintegration of virtual-IMU samples between keyframes, with
//! first-order propagation of the 9×9 preintegration noise covariance.
//!
//! The covariance is ordered `[δφ, δv, δp]` with `ΔR̃ = ΔR Exp(δφ)`,
//! `Δṽ = Δv + δv`, `Δp̃ = Δp + δp`.

use std::ops::Range;

use nalgebra::{DMatrix, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::sim::TrajectorySample;
use crate::so3::{exp_so3, log_so3, right_jacobian, skew, Mat3, Rot3, Vec3};
use crate::vimu::{FusionMatrices, VimuConfig, VimuNoise, VirtualSample};

pub type Cov9 = SMatrix<f64, 9, 9>;
pub type Cov6 = SMatrix<f64, 6, 6>;
pub type Vec9 = SVector<f64, 9>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VimuState {
    /// `ʷR_V`
    pub rot: Rot3,
    pub pos: Vec3,
    pub vel: Vec3,
    pub bias_g: Vec3,
    pub bias_a: Vec3,
}

impl VimuState {
    /// Zero-bias state matching a ground-truth sample of the V frame.
    pub fn from_truth(s: &TrajectorySample) -> Self {
        Self {
            rot: s.rot,
            pos: s.pos,
            vel: s.vel,
            bias_g: Vec3::zeros(),
            bias_a: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreintDelta {
    pub delta_rot: Rot3,
    pub delta_vel: Vec3,
    pub delta_pos: Vec3,
    pub cov: Cov9,
    /// Integrated time (s).
    pub dt: f64,
    pub count: usize,
}

impl Default for PreintDelta {
    fn default() -> Self {
        Self {
            delta_rot: Rot3::identity(),
            delta_vel: Vec3::zeros(),
            delta_pos: Vec3::zeros(),
            cov: Cov9::zeros(),
            dt: 0.0,
            count: 0,
        }
    }
}

/// Bias-corrected rate and specific force: `ω̂ = ω̃ − b_g`,
/// `â = ã − b_a + T·S_a`.
pub fn bias_correct(sample: &VirtualSample, state: &VimuState) -> (Vec3, Vec3) {
    (
        sample.omega - state.bias_g,
        sample.accel - state.bias_a + sample.correction,
    )
}

/// Jacobian of the stacked centripetal lever-arm terms with respect to `ω`:
/// block `I` is `ᴵR_V (−⌊ω⌋⌊ⱽp_I⌋ − ⌊⌊ω⌋ⱽp_I⌋)`, unwhitened.
pub fn psi_matrix(cfg: &VimuConfig, omega: &Vec3) -> DMatrix<f64> {
    let w = skew(omega);
    let mut out = DMatrix::zeros(3 * cfg.len(), 3);
    for i in 0..cfg.len() {
        let p = cfg.lever(i);
        let block = cfg.rotation(i) * (-w * skew(&p) - skew(&(w * p)));
        out.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(&block);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMatrices {
    pub a: Cov9,
    pub b: SMatrix<f64, 9, 6>,
}

/// Per-step transition `A` and noise input `B`, linearised about zero noise.
///
/// `t_psi` is `T` applied to the σ-whitened `Ψ`.
pub fn step_matrices(delta_rot: &Rot3, omega_hat: &Vec3, accel_hat: &Vec3, t_psi: &Mat3, dt: f64) -> StepMatrices {
    let phi = omega_hat * dt;
    let r = delta_rot.matrix();
    let ra = r * skew(accel_hat);
    let half_dt2 = 0.5 * dt * dt;

    let mut a = Cov9::identity();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&exp_so3(&phi).matrix().transpose());
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-ra * dt));
    a.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-ra * half_dt2));
    a.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Mat3::identity() * dt));

    let mut b = SMatrix::<f64, 9, 6>::zeros();
    b.fixed_view_mut::<3, 3>(0, 0).copy_from(&(right_jacobian(&phi) * dt));
    b.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-(r * t_psi) * half_dt2));
    b.fixed_view_mut::<3, 3>(3, 3).copy_from(&(r * dt));
    b.fixed_view_mut::<3, 3>(6, 3).copy_from(&(r * half_dt2));
    StepMatrices { a, b }
}

/// Discrete-time noise covariance of one virtual sample:
/// `blockdiag(Q_gV, Q_aV) · freq`.
pub fn discrete_noise(noise: &VimuNoise, freq: f64) -> Cov6 {
    let mut out = Cov6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(noise.q_gyro * freq));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(noise.q_accel * freq));
    out
}

/// Preintegrates virtual samples at a fixed rate.
#[derive(Debug, Clone)]
pub struct Preintegrator {
    cfg: VimuConfig,
    accel_op: DMatrix<f64>,
    noise_cov: Cov6,
    dt: f64,
    with_covariance: bool,
}

impl Preintegrator {
    pub fn new(cfg: &VimuConfig, fm: &FusionMatrices, noise: &VimuNoise, freq: f64) -> Result<Self> {
        if !(freq.is_finite() && freq > 0.0) {
            return Err(Error::InvalidInput(format!("rate {freq} Hz must be positive")));
        }
        if fm.sensor_count() != cfg.len() {
            return Err(Error::LengthMismatch("fusion matrices do not match the config".into()));
        }
        Ok(Self {
            cfg: cfg.clone(),
            accel_op: fm.accel_operator(),
            noise_cov: discrete_noise(noise, freq),
            dt: 1.0 / freq,
            with_covariance: true,
        })
    }

    /// Skips covariance propagation; deltas carry a zero covariance.
    pub fn without_covariance(mut self) -> Self {
        self.with_covariance = false;
        self
    }

    pub fn noise_covariance(&self) -> &Cov6 {
        &self.noise_cov
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_matrices(&self, prev: &PreintDelta, omega_hat: &Vec3, accel_hat: &Vec3) -> StepMatrices {
        let t_psi = &self.accel_op * psi_matrix(&self.cfg, omega_hat);
        let t_psi = Mat3::from_fn(|i, j| t_psi[(i, j)]);
        step_matrices(&prev.delta_rot, omega_hat, accel_hat, &t_psi, self.dt)
    }

    pub fn propagate_step(&self, prev: &PreintDelta, sample: &VirtualSample, state: &VimuState) -> PreintDelta {
        let (w, a) = bias_correct(sample, state);
        let dt = self.dt;

        let cov = if self.with_covariance {
            let m = self.step_matrices(prev, &w, &a);
            let c = m.a * prev.cov * m.a.transpose() + m.b * self.noise_cov * m.b.transpose();
            0.5 * (c + c.transpose())
        } else {
            prev.cov
        };

        let ra = prev.delta_rot * a;
        PreintDelta {
            delta_pos: prev.delta_pos + prev.delta_vel * dt + ra * (0.5 * dt * dt),
            delta_vel: prev.delta_vel + ra * dt,
            delta_rot: Rot3::from_matrix_unchecked(prev.delta_rot.matrix() * exp_so3(&(w * dt)).matrix()),
            cov,
            dt: prev.dt + dt,
            count: prev.count + 1,
        }
    }

    /// Preintegrates `samples` from `Σ = 0`. Only the state's biases are read.
    pub fn preintegrate(&self, samples: &[VirtualSample], state: &VimuState) -> Result<PreintDelta> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("preintegration needs at least one sample".into()));
        }
        let mut d = PreintDelta::default();
        for s in samples {
            d = self.propagate_step(&d, s, state);
        }
        d.delta_rot.renormalize();
        Ok(d)
    }
}

/// State at the end of a preintegrated interval.
pub fn predict_state(start: &VimuState, delta: &PreintDelta, gravity: &Vec3) -> VimuState {
    let t = delta.dt;
    VimuState {
        rot: start.rot * delta.delta_rot,
        vel: start.vel + gravity * t + start.rot * delta.delta_vel,
        pos: start.pos + start.vel * t + gravity * (0.5 * t * t) + start.rot * delta.delta_pos,
        bias_g: start.bias_g,
        bias_a: start.bias_a,
    }
}

/// Error `[δφ, δv, δp]` of `estimate` against `reference`, in the covariance's
/// convention.
pub fn delta_error(reference: &PreintDelta, estimate: &PreintDelta) -> Vec9 {
    let phi = log_so3(&(reference.delta_rot.inverse() * estimate.delta_rot));
    let dv = estimate.delta_vel - reference.delta_vel;
    let dp = estimate.delta_pos - reference.delta_pos;
    Vec9::from_iterator(phi.iter().chain(dv.iter()).chain(dp.iter()).copied())
}

/// Normalised estimation error squared `eᵀ Σ⁻¹ e`.
pub fn nees(err: &Vec9, cov: &Cov9) -> Result<f64> {
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::SingularNormalEquations("covariance is not positive definite".into()))?;
    Ok(err.dot(&chol.solve(err)))
}

/// Half-open keyframe intervals of `interval` seconds over `len` samples.
/// A trailing partial interval is dropped.
pub fn keyframe_ranges(len: usize, freq: f64, interval: f64) -> Result<Vec<Range<usize>>> {
    let step = (interval * freq).round();
    if !(step.is_finite() && step >= 1.0) {
        return Err(Error::InvalidInput(format!(
            "keyframe interval {interval} s is shorter than one sample"
        )));
    }
    let step = step as usize;
    Ok((0..len / step).map(|k| k * step..(k + 1) * step).collect())
}

/// Chains keyframe predictions from `start` (the state at sample 0). Entry
/// `k` of the result is the state at the first sample of interval `k`; the
/// final entry is the state after the last interval.
pub fn dead_reckon(
    pre: &Preintegrator,
    samples: &[VirtualSample],
    start: &VimuState,
    ranges: &[Range<usize>],
    gravity: &Vec3,
) -> Result<Vec<VimuState>> {
    let mut states = Vec::with_capacity(ranges.len() + 1);
    states.push(*start);
    let mut cur = *start;
    for r in ranges {
        let delta = pre.preintegrate(&samples[r.clone()], &cur)?;
        cur = predict_state(&cur, &delta, gravity);
        states.push(cur);
    }
    Ok(states)
}
