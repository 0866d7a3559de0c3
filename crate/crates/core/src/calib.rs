//! Two-stage extrinsic calibration between two IMUs on a rigid body.
//!
//! Stage one fits the relative rotation `ᴮq_A` to the gyroscope pairs
//! (`ᴮω̃ ≈ ᴮq_A ᴬω̃`) by damped Gauss–Newton on the quaternion. Stage two holds
//! the rotation fixed and solves the lever arm `ᴬp_B` from the specific-force
//! pairs; the residual is affine in `p`, so this is a weighted linear least
//! squares problem. Angular acceleration comes from a central difference of the
//! averaged A/B gyro signal.
//!
//! Sample indices are 0-based. The covariance weights use `t = k + 1`, the
//! number of samples since the start of the window.

use std::time::Instant;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extrinsic::Extrinsic;
use crate::series::ImuSeries;
use crate::sim::NoiseSpec;
use crate::so3::{quat_from_rotation, quat_retract, skew, Mat3, Quat, Rot3, Vec3};

/// Minimum smallest eigenvalue of the mean gyro second-moment matrix
/// ((rad/s)²), and of the mean lever-arm normal matrix, for the motion to
/// count as exciting.
pub const EXCITATION_MIN_EIGENVALUE: f64 = 1e-4;
pub const MAX_ITERATIONS: usize = 100;
const REL_COST_TOL: f64 = 1e-12;
const STEP_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct CalibrationInput {
    pub series_a: ImuSeries,
    pub series_b: ImuSeries,
    pub noise_a: NoiseSpec,
    pub noise_b: NoiseSpec,
}

impl CalibrationInput {
    pub fn new(series_a: ImuSeries, series_b: ImuSeries, noise_a: NoiseSpec, noise_b: NoiseSpec) -> Result<Self> {
        if series_a.len() != series_b.len() {
            return Err(Error::LengthMismatch(format!(
                "series A has {} samples, B has {}",
                series_a.len(),
                series_b.len()
            )));
        }
        if series_a.len() < 3 {
            return Err(Error::InvalidInput("calibration needs at least 3 samples".into()));
        }
        if ((series_a.freq - series_b.freq) / series_a.freq).abs() > 1e-6 {
            return Err(Error::RateMismatch(format!("{} Hz vs {} Hz", series_a.freq, series_b.freq)));
        }
        noise_a.validate()?;
        noise_b.validate()?;
        Ok(Self {
            series_a,
            series_b,
            noise_a,
            noise_b,
        })
    }

    /// Restricts both series to their first `secs` seconds.
    pub fn window(&self, secs: f64) -> Result<Self> {
        Self::new(
            self.series_a.window(secs),
            self.series_b.window(secs),
            self.noise_a,
            self.noise_b,
        )
    }

    pub fn len(&self) -> usize {
        self.series_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series_a.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.series_a.dt()
    }
}

/// `ᴮω̃ − ᴮq_A ᴬω̃`.
pub fn residual_omega(q: &Quat, omega_a: &Vec3, omega_b: &Vec3) -> Vec3 {
    omega_b - q * omega_a
}

/// Isotropic gyro-residual variance at sample count `t ≥ 1`:
/// `(σ_gA² + σ_gB²)/Δt + (σ_bgA² + σ_bgB²)·Δt·t`.
pub fn sigma_omega(t: usize, noise_a: &NoiseSpec, noise_b: &NoiseSpec, dt: f64) -> f64 {
    debug_assert!(t >= 1 && dt > 0.0);
    (noise_a.sigma_g.powi(2) + noise_b.sigma_g.powi(2)) / dt
        + (noise_a.sigma_bg.powi(2) + noise_b.sigma_bg.powi(2)) * dt * t as f64
}

/// Isotropic accel-residual variance at sample count `t ≥ 1`, taken literally:
/// the squared virtual-gyro noise/bias term plus the accelerometer term.
pub fn sigma_accel(t: usize, noise_a: &NoiseSpec, noise_b: &NoiseSpec, dt: f64) -> f64 {
    debug_assert!(t >= 1 && dt > 0.0);
    let (ga2, gb2) = (noise_a.sigma_g.powi(2), noise_b.sigma_g.powi(2));
    let (bga2, bgb2) = (noise_a.sigma_bg.powi(2), noise_b.sigma_bg.powi(2));
    let tt = dt * t as f64;
    let sum = ga2 + gb2;
    let virtual_gyro = if sum > 0.0 {
        ga2 * gb2 / (sum * dt) + (gb2 * gb2 * bga2 + ga2 * ga2 * bgb2) / (sum * sum) * tt
    } else {
        0.0
    };
    virtual_gyro.powi(2)
        + (noise_a.sigma_a.powi(2) + noise_b.sigma_a.powi(2)) / dt
        + (noise_a.sigma_ba.powi(2) + noise_b.sigma_ba.powi(2)) * tt
}

/// Per-sample inverse-variance weights for both stages.
///
/// A zero variance (noiseless spec) falls back to unit weight.
#[derive(Debug, Clone)]
pub struct WeightSchedule {
    pub omega: Vec<f64>,
    pub accel: Vec<f64>,
}

impl WeightSchedule {
    pub fn new(input: &CalibrationInput) -> Self {
        let dt = input.dt();
        let inv = |v: f64| if v > 0.0 { 1.0 / v } else { 1.0 };
        let omega = (1..=input.len())
            .map(|t| inv(sigma_omega(t, &input.noise_a, &input.noise_b, dt)))
            .collect();
        let accel = (1..=input.len())
            .map(|t| inv(sigma_accel(t, &input.noise_a, &input.noise_b, dt)))
            .collect();
        Self { omega, accel }
    }

    /// Every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            omega: self.omega.iter().map(|w| w * factor).collect(),
            accel: self.accel.iter().map(|w| w * factor).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub iterations: usize,
    pub cost: f64,
    pub elapsed_ms: f64,
}

/// Closed-form `argmin_R Σ wᵢ ‖bᵢ − R aᵢ‖²` via SVD of `Σ wᵢ bᵢ aᵢᵀ`.
pub fn weighted_procrustes(a: &[Vec3], b: &[Vec3], weights: &[f64]) -> Rot3 {
    let mut h = Mat3::zeros();
    for ((a, b), w) in a.iter().zip(b).zip(weights) {
        h += *w * b * a.transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let d = (u * v_t).determinant().signum();
    let m = u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * v_t;
    Rot3::from_matrix_unchecked(m)
}

fn min_eigenvalue(m: &Mat3) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.min()
}

fn check_rotation_excitation(omega_a: &[Vec3]) -> Result<()> {
    let mut m = Mat3::zeros();
    for w in omega_a {
        m += w * w.transpose();
    }
    m /= omega_a.len() as f64;
    let lmin = min_eigenvalue(&m);
    if lmin < EXCITATION_MIN_EIGENVALUE {
        return Err(Error::DegenerateMotion(format!(
            "gyro second moment smallest eigenvalue {lmin:.3e} < {EXCITATION_MIN_EIGENVALUE:e} (rad/s)²"
        )));
    }
    Ok(())
}

/// Damped Gauss–Newton over the right quaternion retraction. `eval` returns
/// `(cost, JᵀWJ, JᵀWr)` at a rotation.
fn minimize_rotation<F>(init: Quat, eval: F) -> Result<(Quat, usize, f64)>
where
    F: Fn(&Quat) -> (f64, Mat3, Vec3),
{
    let mut q = init;
    let (mut cost, mut h, mut g) = eval(&q);
    let mut lambda = 1e-4;
    for it in 1..=MAX_ITERATIONS {
        if cost == 0.0 {
            return Ok((q, it - 1, cost));
        }
        let damped = h + Mat3::from_diagonal(&h.diagonal()) * lambda;
        let Some(chol) = damped.cholesky() else {
            return Err(Error::SingularNormalEquations(
                "rotation normal matrix is not positive definite".into(),
            ));
        };
        let step = chol.solve(&(-g));
        if step.norm() < STEP_TOL {
            return Ok((q, it, cost));
        }
        let candidate = quat_retract(&q, &step);
        let (c_new, h_new, g_new) = eval(&candidate);
        if c_new <= cost {
            let rel = (cost - c_new) / cost;
            q = candidate;
            (cost, h, g) = (c_new, h_new, g_new);
            lambda = (lambda / 10.0).max(1e-12);
            if rel < REL_COST_TOL {
                return Ok((q, it, cost));
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                // No descent direction left at machine precision.
                return Ok((q, it, cost));
            }
        }
    }
    Err(Error::NotConverged {
        iterations: MAX_ITERATIONS,
        cost,
    })
}

fn gyro_normal_terms(q: &Quat, input: &CalibrationInput, weights: &[f64]) -> (f64, Mat3, Vec3) {
    let r_mat = q.to_rotation_matrix();
    let mut cost = 0.0;
    let mut h = Mat3::zeros();
    let mut g = Vec3::zeros();
    for ((wa, wb), w) in input.series_a.gyro.iter().zip(&input.series_b.gyro).zip(weights) {
        let r = residual_omega(q, wa, wb);
        let j = r_mat.matrix() * skew(wa);
        cost += w * r.norm_squared();
        h += *w * j.transpose() * j;
        g += *w * j.transpose() * r;
    }
    (cost, h, g)
}

/// Stage one from an explicit starting rotation.
pub fn estimate_rotation_from(
    input: &CalibrationInput,
    weights: &WeightSchedule,
    init: Quat,
) -> Result<(Quat, StageDiagnostics)> {
    let start = Instant::now();
    check_rotation_excitation(&input.series_a.gyro)?;
    let (q, iterations, cost) = minimize_rotation(init, |q| gyro_normal_terms(q, input, &weights.omega))?;
    Ok((
        q,
        StageDiagnostics {
            iterations,
            cost,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    ))
}

/// Stage one: Procrustes initialisation refined by weighted Gauss–Newton.
pub fn estimate_rotation(input: &CalibrationInput) -> Result<(Quat, StageDiagnostics)> {
    let start = Instant::now();
    check_rotation_excitation(&input.series_a.gyro)?;
    let weights = WeightSchedule::new(input);
    let init = quat_from_rotation(&weighted_procrustes(
        &input.series_a.gyro,
        &input.series_b.gyro,
        &weights.omega,
    ));
    let (q, mut diag) = estimate_rotation_from(input, &weights, init)?;
    diag.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((q, diag))
}

/// `ᴬω̇̃(k) = (freq/4)(q⁻¹ᴮω̃(k+1) − q⁻¹ᴮω̃(k−1) + ᴬω̃(k+1) − ᴬω̃(k−1))`.
pub fn estimate_angular_accel(q: &Quat, series_a: &ImuSeries, series_b: &ImuSeries, k: usize) -> Result<Vec3> {
    let n = series_a.len().min(series_b.len());
    if k == 0 || k + 1 >= n {
        return Err(Error::BoundaryIndex { index: k, len: n });
    }
    let inv = q.inverse();
    let (a, b) = (&series_a.gyro, &series_b.gyro);
    Ok(series_a.freq / 4.0 * (inv * b[k + 1] - inv * b[k - 1] + a[k + 1] - a[k - 1]))
}

/// Lever-arm operator `⌊ω⌋² + ⌊ω̇⌋`.
pub fn lever_arm_operator(omega: &Vec3, omega_dot: &Vec3) -> Mat3 {
    let w = skew(omega);
    w * w + skew(omega_dot)
}

/// `ᴮã − ᴮq_A (ᴬã + ⌊ᴬω̃⌋²ᴬp_B + ⌊ᴬω̇̃⌋ᴬp_B)`.
pub fn residual_accel(ext: &Extrinsic, omega_a: &Vec3, omega_dot_a: &Vec3, accel_a: &Vec3, accel_b: &Vec3) -> Vec3 {
    accel_b - ext.q * (accel_a + lever_arm_operator(omega_a, omega_dot_a) * ext.p)
}

#[derive(Debug, Clone, Copy)]
struct TranslationRow {
    jac: Mat3,
    rhs: Vec3,
    weight: f64,
}

/// Stage two as a weighted linear least-squares problem in `p`:
/// residual `rₖ(p) = yₖ − Jₖ p` with `Jₖ = R(⌊ω⌋² + ⌊ω̇⌋)`, `yₖ = ᴮã − R ᴬã`.
#[derive(Debug, Clone)]
pub struct TranslationProblem {
    rows: Vec<TranslationRow>,
}

impl TranslationProblem {
    /// Rows for every interior sample (endpoints lack ω̇).
    pub fn build(input: &CalibrationInput, q: &Quat, accel_weights: &[f64]) -> Result<Self> {
        if accel_weights.len() != input.len() {
            return Err(Error::LengthMismatch(format!(
                "{} weights for {} samples",
                accel_weights.len(),
                input.len()
            )));
        }
        let r_mat = q.to_rotation_matrix();
        let (a, b) = (&input.series_a, &input.series_b);
        let mut rows = Vec::with_capacity(input.len().saturating_sub(2));
        for (k, &weight) in accel_weights.iter().enumerate().take(input.len() - 1).skip(1) {
            let wdot = estimate_angular_accel(q, a, b, k)?;
            rows.push(TranslationRow {
                jac: r_mat.matrix() * lever_arm_operator(&a.gyro[k], &wdot),
                rhs: b.accel[k] - r_mat * a.accel[k],
                weight,
            });
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cost(&self, p: &Vec3) -> f64 {
        self.rows
            .iter()
            .map(|r| r.weight * (r.rhs - r.jac * p).norm_squared())
            .sum()
    }

    /// `(Σ w JᵀJ, Σ w Jᵀy)`.
    pub fn normal_equations(&self) -> (Mat3, Vec3) {
        let mut h = Mat3::zeros();
        let mut b = Vec3::zeros();
        for r in &self.rows {
            h += r.weight * r.jac.transpose() * r.jac;
            b += r.weight * r.jac.transpose() * r.rhs;
        }
        (h, b)
    }

    fn check_rank(&self, h: &Mat3) -> Result<()> {
        let wsum: f64 = self.rows.iter().map(|r| r.weight).sum();
        if self.rows.is_empty() || wsum <= 0.0 {
            return Err(Error::DegenerateMotion("no interior samples for translation".into()));
        }
        let lmin = min_eigenvalue(&(h / wsum));
        if lmin < EXCITATION_MIN_EIGENVALUE {
            return Err(Error::DegenerateMotion(format!(
                "lever-arm normal matrix smallest eigenvalue {lmin:.3e} < {EXCITATION_MIN_EIGENVALUE:e}"
            )));
        }
        Ok(())
    }

    /// Direct solve of the normal equations.
    pub fn solve(&self) -> Result<Vec3> {
        let (h, b) = self.normal_equations();
        self.check_rank(&h)?;
        h.cholesky()
            .map(|c| c.solve(&b))
            .ok_or_else(|| Error::SingularNormalEquations("lever-arm normal matrix".into()))
    }

    /// One Gauss–Newton step from `p`.
    pub fn gauss_newton_step(&self, p: &Vec3) -> Result<Vec3> {
        let mut h = Mat3::zeros();
        let mut g = Vec3::zeros();
        for r in &self.rows {
            let res = r.rhs - r.jac * p;
            h += r.weight * r.jac.transpose() * r.jac;
            g += r.weight * r.jac.transpose() * res;
        }
        let chol = h
            .cholesky()
            .ok_or_else(|| Error::SingularNormalEquations("lever-arm normal matrix".into()))?;
        Ok(p + chol.solve(&g))
    }
}

/// Stage two with the rotation held fixed.
pub fn estimate_translation(input: &CalibrationInput, q_fixed: &Quat) -> Result<(Vec3, StageDiagnostics)> {
    let weights = WeightSchedule::new(input);
    estimate_translation_weighted(input, q_fixed, &weights.accel)
}

pub fn estimate_translation_weighted(
    input: &CalibrationInput,
    q_fixed: &Quat,
    accel_weights: &[f64],
) -> Result<(Vec3, StageDiagnostics)> {
    let start = Instant::now();
    let problem = TranslationProblem::build(input, q_fixed, accel_weights)?;
    let p = problem.solve()?;
    Ok((
        p,
        StageDiagnostics {
            iterations: 1,
            cost: problem.cost(&p),
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    ))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// After the two stages, re-fit the rotation on gyro and accel residuals
    /// jointly (lever arm and ω̇ fixed), then re-solve the lever arm once.
    pub refine_pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CalibrationResultRepr", into = "CalibrationResultRepr")]
pub struct CalibrationResult {
    pub extrinsic: Extrinsic,
    pub rotation: StageDiagnostics,
    pub translation: StageDiagnostics,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct CalibrationResultRepr {
    q_BA: [f64; 4],
    p_AB_m: [f64; 3],
    rotation_stage: StageDiagnostics,
    translation_stage: StageDiagnostics,
}

impl TryFrom<CalibrationResultRepr> for CalibrationResult {
    type Error = String;

    fn try_from(r: CalibrationResultRepr) -> std::result::Result<Self, Self::Error> {
        let q = crate::so3::quat_from_wxyz(r.q_BA).ok_or("q_BA must be finite and non-zero")?;
        if r.p_AB_m.iter().any(|v| !v.is_finite()) {
            return Err("p_AB_m must be finite".into());
        }
        Ok(CalibrationResult {
            extrinsic: Extrinsic::new(q, Vec3::from(r.p_AB_m)),
            rotation: r.rotation_stage,
            translation: r.translation_stage,
        })
    }
}

impl From<CalibrationResult> for CalibrationResultRepr {
    fn from(c: CalibrationResult) -> Self {
        CalibrationResultRepr {
            q_BA: crate::so3::quat_to_wxyz(&c.extrinsic.q),
            p_AB_m: c.extrinsic.p.into(),
            rotation_stage: c.rotation,
            translation_stage: c.translation,
        }
    }
}

impl CalibrationResult {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Rotation then translation. Noise and bias states are never estimated.
pub fn calibrate(input: &CalibrationInput) -> Result<CalibrationResult> {
    calibrate_with(input, &CalibrationOptions::default())
}

pub fn calibrate_with(input: &CalibrationInput, opts: &CalibrationOptions) -> Result<CalibrationResult> {
    let (mut q, mut rotation) = estimate_rotation(input)?;
    let weights = WeightSchedule::new(input);
    let (mut p, mut translation) = estimate_translation_weighted(input, &q, &weights.accel)?;

    if opts.refine_pass {
        let start = Instant::now();
        let wdot: Vec<Vec3> = (1..input.len() - 1)
            .map(|k| estimate_angular_accel(&q, &input.series_a, &input.series_b, k))
            .collect::<Result<_>>()?;
        let (q_ref, iters, cost) = minimize_rotation(q, |qc| {
            let (mut cost, mut h, mut g) = gyro_normal_terms(qc, input, &weights.omega);
            let r_mat = qc.to_rotation_matrix();
            for (i, k) in (1..input.len() - 1).enumerate() {
                let a = &input.series_a;
                let u = a.accel[k] + lever_arm_operator(&a.gyro[k], &wdot[i]) * p;
                let r = input.series_b.accel[k] - r_mat * u;
                let j = r_mat.matrix() * skew(&u);
                let w = weights.accel[k];
                cost += w * r.norm_squared();
                h += w * j.transpose() * j;
                g += w * j.transpose() * r;
            }
            (cost, h, g)
        })?;
        q = q_ref;
        rotation.iterations += iters;
        rotation.cost = cost;
        rotation.elapsed_ms += start.elapsed().as_secs_f64() * 1e3;
        let (p2, t2) = estimate_translation_weighted(input, &q, &weights.accel)?;
        p = p2;
        translation.iterations += t2.iterations;
        translation.cost = t2.cost;
        translation.elapsed_ms += t2.elapsed_ms;
    }

    Ok(CalibrationResult {
        extrinsic: Extrinsic::new(q, p),
        rotation,
        translation,
    })
}
