//! Virtual IMU: noise-weighted least-squares fusion of rigidly mounted IMUs
//! into a single sensor located at a chosen frame V.
//!
//! Each sensor `I` is described by its placement relative to V, stored as an
//! [`ImuMount`] whose body frame is V: `mount.q = ᴵq_V`, `mount.p = ⱽp_I`.
//! The measurement model is the rigid-body transfer
//! `ω_I = ᴵR_V ω`, `a_I = ᴵR_V (a + ⌊ω⌋² ⱽp_I + ⌊ω̇⌋ ⱽp_I)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extrinsic::Extrinsic;
use crate::series::ImuSeries;
use crate::sim::{ImuMount, NoiseSpec};
use crate::so3::{skew, Mat3, Quat, Vec3};

/// Largest accepted condition number of `NᵀN` / `MᵀM`.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VimuConfig {
    pub sensors: Vec<ImuMount>,
}

impl VimuConfig {
    pub fn new(sensors: Vec<ImuMount>) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::InvalidInput("virtual IMU needs at least one sensor".into()));
        }
        Ok(Self { sensors })
    }

    /// Places V at `v_mount` (`q = ⱽq_body`, `p = ᵇᵒᵈʸp_V`) on a body carrying
    /// the given sensor mounts.
    pub fn from_body(mounts: &[ImuMount], v_mount: &Extrinsic) -> Result<Self> {
        Self::new(
            mounts
                .iter()
                .map(|m| ImuMount {
                    mount: Extrinsic::between_mounts(v_mount, &m.mount),
                    noise: m.noise,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    /// `ᴵR_V` for sensor `i`.
    pub fn rotation(&self, i: usize) -> Mat3 {
        *self.sensors[i].mount.rotation().matrix()
    }

    /// `ⱽp_I` for sensor `i`.
    pub fn lever(&self, i: usize) -> Vec3 {
        self.sensors[i].mount.p
    }

    /// Extrinsic from sensor `i` to sensor `j` implied by the placements.
    pub fn extrinsic_between(&self, i: usize, j: usize) -> Extrinsic {
        Extrinsic::between_mounts(&self.sensors[i].mount, &self.sensors[j].mount)
    }

    /// Checks that sensors 0 and 1 reproduce `ext` (A = sensor 0, B = sensor 1).
    pub fn check_consistent(&self, ext: &Extrinsic, tol: f64) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::InvalidInput("consistency check needs two sensors".into()));
        }
        let (dp, dr) = self.extrinsic_between(0, 1).error_to(ext);
        if dp > tol || dr > tol {
            return Err(Error::InvalidInput(format!(
                "placements disagree with extrinsic: {dp:.3e} m, {dr:.3e} rad"
            )));
        }
        Ok(())
    }
}

/// V at the midpoint of A and B with A's orientation, so `ᴬR_V = I`,
/// `ᴮR_V = ᴮR_A`, `ⱽp_A = −½ ᴬp_B` and `ⱽp_B = ½ ᴬp_B`.
pub fn midpoint_frame(ext: &Extrinsic, noise_a: NoiseSpec, noise_b: NoiseSpec) -> VimuConfig {
    VimuConfig {
        sensors: vec![
            ImuMount {
                mount: Extrinsic::new(Quat::identity(), -0.5 * ext.p),
                noise: noise_a,
            },
            ImuMount {
                mount: Extrinsic::new(ext.q, 0.5 * ext.p),
                noise: noise_b,
            },
        ],
    }
}

/// Precomputed fusion operators for `n` sensors.
///
/// `N` stacks `ᴵR_V / σ_gI`, `M` stacks `ᴵR_V / σ_aI`; `N⁺` and `T` are their
/// left pseudo-inverses, applied to σ-whitened stacked measurements.
#[derive(Debug, Clone)]
pub struct FusionMatrices {
    pub n: DMatrix<f64>,
    pub n_pinv: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub t: DMatrix<f64>,
    inv_sigma_g: Vec<f64>,
    inv_sigma_a: Vec<f64>,
}

fn stacked(cfg: &VimuConfig, inv_sigma: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(3 * cfg.len(), 3);
    for (i, w) in inv_sigma.iter().enumerate() {
        out.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(&(cfg.rotation(i) * *w));
    }
    out
}

fn left_pinv(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let ata = a.transpose() * a;
    let sv = ata.singular_values();
    let (max, min) = (sv.max(), sv.min());
    let well_conditioned = min > 0.0 && max / min <= MAX_CONDITION;
    if !well_conditioned {
        return Err(Error::SingularFusion(format!(
            "{what}: condition number {:.3e}",
            max / min
        )));
    }
    let inv = ata
        .try_inverse()
        .ok_or_else(|| Error::SingularFusion(format!("{what} is not invertible")))?;
    Ok(inv * a.transpose())
}

fn inverse_sigmas(cfg: &VimuConfig, pick: impl Fn(&NoiseSpec) -> f64, name: &str) -> Result<Vec<f64>> {
    cfg.sensors
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let sigma = pick(&s.noise);
            if sigma.is_finite() && sigma > 0.0 {
                Ok(1.0 / sigma)
            } else {
                Err(Error::SingularFusion(format!("sensor {i}: {name} = {sigma} must be positive")))
            }
        })
        .collect()
}

pub fn build_fusion(cfg: &VimuConfig) -> Result<FusionMatrices> {
    if cfg.is_empty() {
        return Err(Error::InvalidInput("virtual IMU needs at least one sensor".into()));
    }
    let inv_sigma_g = inverse_sigmas(cfg, |n| n.sigma_g, "sigma_g")?;
    let inv_sigma_a = inverse_sigmas(cfg, |n| n.sigma_a, "sigma_a")?;
    let n = stacked(cfg, &inv_sigma_g);
    let m = stacked(cfg, &inv_sigma_a);
    let n_pinv = left_pinv(&n, "NᵀN")?;
    let t = left_pinv(&m, "MᵀM")?;
    Ok(FusionMatrices {
        n,
        n_pinv,
        m,
        t,
        inv_sigma_g,
        inv_sigma_a,
    })
}

impl FusionMatrices {
    pub fn sensor_count(&self) -> usize {
        self.inv_sigma_g.len()
    }

    fn whiten(values: &[Vec3], inv_sigma: &[f64]) -> DVector<f64> {
        assert_eq!(values.len(), inv_sigma.len(), "one measurement per sensor");
        let mut out = DVector::zeros(3 * values.len());
        for (i, (v, w)) in values.iter().zip(inv_sigma).enumerate() {
            out.fixed_rows_mut::<3>(3 * i).copy_from(&(v * *w));
        }
        out
    }

    fn apply(op: &DMatrix<f64>, x: &DVector<f64>) -> Vec3 {
        let r = op * x;
        Vec3::new(r[0], r[1], r[2])
    }

    /// `T` composed with the accelerometer whitening, i.e. the map from raw
    /// stacked accelerations to the fused one.
    pub fn accel_operator(&self) -> DMatrix<f64> {
        let mut out = self.t.clone();
        for (i, w) in self.inv_sigma_a.iter().enumerate() {
            out.columns_mut(3 * i, 3).scale_mut(*w);
        }
        out
    }

    /// `N⁺` composed with the gyro whitening.
    pub fn gyro_operator(&self) -> DMatrix<f64> {
        let mut out = self.n_pinv.clone();
        for (i, w) in self.inv_sigma_g.iter().enumerate() {
            out.columns_mut(3 * i, 3).scale_mut(*w);
        }
        out
    }
}

pub fn fuse_gyro(fm: &FusionMatrices, gyros: &[Vec3]) -> Vec3 {
    FusionMatrices::apply(&fm.n_pinv, &FusionMatrices::whiten(gyros, &fm.inv_sigma_g))
}

/// Stacked, σ-whitened lever-arm accelerations `ᴵR_V (⌊ω⌋² + ⌊ω̇⌋) ⱽp_I / σ_aI`.
pub fn lever_arm_stack(cfg: &VimuConfig, fm: &FusionMatrices, omega: &Vec3, omega_dot: &Vec3) -> DVector<f64> {
    let op = {
        let w = skew(omega);
        w * w + skew(omega_dot)
    };
    let mut out = DVector::zeros(3 * cfg.len());
    for i in 0..cfg.len() {
        let block = cfg.rotation(i) * (op * cfg.lever(i)) * fm.inv_sigma_a[i];
        out.fixed_rows_mut::<3>(3 * i).copy_from(&block);
    }
    out
}

pub fn fuse_accel(
    fm: &FusionMatrices,
    cfg: &VimuConfig,
    accels: &[Vec3],
    omega: &Vec3,
    omega_dot: &Vec3,
) -> Vec3 {
    let y = FusionMatrices::whiten(accels, &fm.inv_sigma_a) - lever_arm_stack(cfg, fm, omega, omega_dot);
    FusionMatrices::apply(&fm.t, &y)
}

/// Noise and bias-walk covariances of the virtual sensor, in the same
/// continuous-time units as [`NoiseSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VimuNoise {
    pub q_gyro: Mat3,
    pub q_gyro_bias: Mat3,
    pub q_accel: Mat3,
    pub q_accel_bias: Mat3,
}

fn sandwich(op: &DMatrix<f64>, diag: &[f64]) -> Mat3 {
    let d = DVector::from_iterator(diag.len() * 3, diag.iter().flat_map(|v| [*v; 3]));
    let r = op * DMatrix::from_diagonal(&d) * op.transpose();
    let out = Mat3::from_fn(|i, j| r[(i, j)]);
    0.5 * (out + out.transpose())
}

pub fn virtual_covariances(cfg: &VimuConfig, fm: &FusionMatrices) -> VimuNoise {
    let ones = vec![1.0; cfg.len()];
    let ratio = |num: fn(&NoiseSpec) -> f64, den: fn(&NoiseSpec) -> f64| -> Vec<f64> {
        cfg.sensors
            .iter()
            .map(|s| (num(&s.noise) / den(&s.noise)).powi(2))
            .collect()
    };
    VimuNoise {
        q_gyro: sandwich(&fm.n_pinv, &ones),
        q_gyro_bias: sandwich(&fm.n_pinv, &ratio(|n| n.sigma_bg, |n| n.sigma_g)),
        q_accel: sandwich(&fm.t, &ones),
        q_accel_bias: sandwich(&fm.t, &ratio(|n| n.sigma_ba, |n| n.sigma_a)),
    }
}

/// JSON sidecar written next to a virtual IMU CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VimuSidecar {
    pub config: VimuConfig,
    pub noise: VimuNoise,
}

impl VimuSidecar {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: VimuSidecar = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if s.config.is_empty() {
            return Err(Error::InvalidInput("virtual IMU needs at least one sensor".into()));
        }
        for imu in &s.config.sensors {
            imu.noise.validate()?;
        }
        let n = &s.noise;
        if [n.q_gyro, n.q_gyro_bias, n.q_accel, n.q_accel_bias]
            .iter()
            .any(|m| m.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidInput("sidecar covariances must be finite".into()));
        }
        Ok(s)
    }
}

/// One fused measurement at V.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VirtualSample {
    pub omega: Vec3,
    pub accel: Vec3,
    pub omega_dot: Vec3,
    /// `T·S_a`: the fused-accel error caused by evaluating the lever-arm
    /// stack at the measured rather than the true `ω`, `ω̇`. Zero when no
    /// reference is available.
    pub correction: Vec3,
}

/// Fused measurements at V; sample `k` corresponds to raw index `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualSeries {
    pub freq: f64,
    pub start_ns: i64,
    pub samples: Vec<VirtualSample>,
}

impl VirtualSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_imu_series(&self) -> Result<ImuSeries> {
        ImuSeries::new(
            self.freq,
            self.start_ns,
            self.samples.iter().map(|s| s.omega).collect(),
            self.samples.iter().map(|s| s.accel).collect(),
        )
    }

    /// Rebuilds a series from a stored virtual CSV. `ω̇` is re-estimated by
    /// central differences, so the first and last rows are dropped again.
    pub fn from_imu_series(series: &ImuSeries) -> Result<Self> {
        let n = series.len();
        if n < 3 {
            return Err(Error::InvalidInput("need at least 3 samples".into()));
        }
        let half_freq = 0.5 * series.freq;
        let samples = (1..n - 1)
            .map(|k| VirtualSample {
                omega: series.gyro[k],
                accel: series.accel[k],
                omega_dot: (series.gyro[k + 1] - series.gyro[k - 1]) * half_freq,
                correction: Vec3::zeros(),
            })
            .collect();
        Ok(Self {
            freq: series.freq,
            start_ns: series.timestamp_ns(1),
            samples,
        })
    }
}

/// Fuses synchronised series into a virtual IMU.
///
/// `ω̇` at V is the central difference of the fused gyro, so the first and
/// last samples are dropped. When `reference` holds the true `(ω, ω̇)` at V
/// for every raw sample (simulation), the `T·S_a` correction is filled in.
pub fn fuse_series(
    cfg: &VimuConfig,
    fm: &FusionMatrices,
    series: &[ImuSeries],
    reference: Option<&[(Vec3, Vec3)]>,
) -> Result<VirtualSeries> {
    if series.len() != cfg.len() {
        return Err(Error::LengthMismatch(format!(
            "{} series for {} sensors",
            series.len(),
            cfg.len()
        )));
    }
    let n = series[0].len();
    let freq = series[0].freq;
    if series.iter().any(|s| s.len() != n) {
        return Err(Error::LengthMismatch("series lengths differ".into()));
    }
    if series.iter().any(|s| (s.freq - freq).abs() > crate::series::RATE_TOLERANCE * freq) {
        return Err(Error::RateMismatch("series rates differ".into()));
    }
    if n < 3 {
        return Err(Error::InvalidInput("need at least 3 samples".into()));
    }
    if let Some(r) = reference {
        if r.len() != n {
            return Err(Error::LengthMismatch(format!("reference has {} of {n} samples", r.len())));
        }
    }

    let mut gyro_buf = vec![Vec3::zeros(); cfg.len()];
    let omega: Vec<Vec3> = (0..n)
        .map(|k| {
            for (g, s) in gyro_buf.iter_mut().zip(series) {
                *g = s.gyro[k];
            }
            fuse_gyro(fm, &gyro_buf)
        })
        .collect();

    let half_freq = 0.5 * freq;
    let mut accel_buf = vec![Vec3::zeros(); cfg.len()];
    let samples = (1..n - 1)
        .map(|k| {
            let omega_dot = (omega[k + 1] - omega[k - 1]) * half_freq;
            for (a, s) in accel_buf.iter_mut().zip(series) {
                *a = s.accel[k];
            }
            let accel = fuse_accel(fm, cfg, &accel_buf, &omega[k], &omega_dot);
            let correction = match reference {
                Some(r) => {
                    let (w, wd) = r[k];
                    let ds = lever_arm_stack(cfg, fm, &omega[k], &omega_dot) - lever_arm_stack(cfg, fm, &w, &wd);
                    FusionMatrices::apply(&fm.t, &ds)
                }
                None => Vec3::zeros(),
            };
            VirtualSample {
                omega: omega[k],
                accel,
                omega_dot,
                correction,
            }
        })
        .collect();

    Ok(VirtualSeries {
        freq,
        start_ns: series[0].timestamp_ns(1),
        samples,
    })
}
