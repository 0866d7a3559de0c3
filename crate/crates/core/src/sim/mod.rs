//! Synthetic IMU arrays on a rigid body.

mod noise;
mod trajectory;

pub use noise::{noise_pair_from_toml_str, NoiseProcess, NoiseSpec};
pub use trajectory::{TrajectoryParams, TrajectorySample};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extrinsic::Extrinsic;
use crate::series::ImuSeries;
use crate::so3::{quat_from_wxyz, quat_retract, quat_to_wxyz, skew, Vec3};

pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

/// Upper bound on samples per simulated series (guards config typos).
pub const MAX_SAMPLES: usize = 50_000_000;

/// One IMU rigidly mounted on the body: `mount.q = ᴵq_body`, `mount.p = ᵇᵒᵈʸp_I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ImuMountRepr", into = "ImuMountRepr")]
pub struct ImuMount {
    pub mount: Extrinsic,
    pub noise: NoiseSpec,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImuMountRepr {
    #[serde(default = "identity_wxyz")]
    q_wxyz: [f64; 4],
    #[serde(default)]
    p_m: [f64; 3],
    #[serde(default)]
    noise: NoiseSpec,
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl TryFrom<ImuMountRepr> for ImuMount {
    type Error = String;

    fn try_from(r: ImuMountRepr) -> std::result::Result<Self, Self::Error> {
        let q = quat_from_wxyz(r.q_wxyz).ok_or("mount quaternion must be finite and non-zero")?;
        if r.p_m.iter().any(|v| !v.is_finite()) {
            return Err("mount position must be finite".into());
        }
        r.noise.validate().map_err(|e| e.to_string())?;
        Ok(ImuMount {
            mount: Extrinsic::new(q, Vec3::from(r.p_m)),
            noise: r.noise,
        })
    }
}

impl From<ImuMount> for ImuMountRepr {
    fn from(m: ImuMount) -> Self {
        ImuMountRepr {
            q_wxyz: quat_to_wxyz(&m.mount.q),
            p_m: m.mount.p.into(),
            noise: m.noise,
        }
    }
}

/// 3×3 planar grid, row-major from (-pitch, -pitch), identity orientations.
/// Index 4 is the centre, 0/2/6/8 the corners.
pub fn grid_array(pitch: f64, noise: NoiseSpec) -> Vec<ImuMount> {
    let mut out = Vec::with_capacity(9);
    for row in 0..3 {
        for col in 0..3 {
            let p = Vec3::new((col as f64 - 1.0) * pitch, (row as f64 - 1.0) * pitch, 0.0);
            out.push(ImuMount {
                mount: Extrinsic::new(crate::so3::Quat::identity(), p),
                noise,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// World-frame gravity (m/s²).
    pub gravity: Vec3,
    /// Sample rate (Hz).
    pub freq: f64,
    /// Duration (s).
    pub duration: f64,
    pub seed: u64,
    pub trajectory: TrajectoryParams,
    pub imus: Vec<ImuMount>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            gravity: Vec3::from(DEFAULT_GRAVITY),
            freq: 200.0,
            duration: 60.0,
            seed: 42,
            trajectory: TrajectoryParams::default(),
            imus: grid_array(0.05, NoiseSpec::default()),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.freq.is_finite() && self.freq > 0.0) {
            return Err(Error::InvalidInput("freq must be positive".into()));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidInput("duration must be positive".into()));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) || !self.trajectory.is_finite() {
            return Err(Error::InvalidInput("gravity and trajectory must be finite".into()));
        }
        let n = (self.duration * self.freq).round();
        if n < 1.0 || n > MAX_SAMPLES as f64 {
            return Err(Error::InvalidInput(format!(
                "duration × freq gives {n} samples, expected 1..={MAX_SAMPLES}"
            )));
        }
        for imu in &self.imus {
            imu.noise.validate()?;
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.duration * self.freq).round() as usize
    }

    /// Parses TOML, applies `key=value` overrides (dotted keys), validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let cfg: SimConfig = crate::config::parse_toml(text, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Ground truth at sample times `k / freq`.
    pub fn truth(&self) -> Vec<TrajectorySample> {
        (0..self.sample_count())
            .map(|k| self.trajectory.evaluate(k as f64 / self.freq))
            .collect()
    }
}

/// Pose and derivatives at `t`, rejecting times outside `[0, duration]`.
pub fn sample_trajectory(cfg: &SimConfig, t: f64) -> Result<TrajectorySample> {
    if !(0.0..=cfg.duration).contains(&t) {
        return Err(Error::OutOfRange(format!("t = {t} s (duration {} s)", cfg.duration)));
    }
    Ok(cfg.trajectory.evaluate(t))
}

/// Noise-free gyro and specific force in the body frame: `a = ᵇR_W (ʷa − ʷg)`.
pub fn ideal_body_measurements(sample: &TrajectorySample, gravity: &Vec3) -> (Vec3, Vec3) {
    (sample.omega, sample.rot.inverse() * (sample.acc - gravity))
}

/// Rigid-body transfer of A's angular rate and specific force to B:
/// `ᴮω = ᴮR_A ᴬω`, `ᴮa = ᴮR_A (ᴬa + ⌊ᴬω⌋² ᴬp_B + ⌊ᴬω̇⌋ ᴬp_B)`.
pub fn transfer_measurement(
    omega_a: &Vec3,
    omega_dot_a: &Vec3,
    accel_a: &Vec3,
    ext: &Extrinsic,
) -> (Vec3, Vec3) {
    let w = skew(omega_a);
    let lever = w * (w * ext.p) + skew(omega_dot_a) * ext.p;
    (ext.q * omega_a, ext.q * (accel_a + lever))
}

/// Noise-free measurements of a mounted IMU, computed from the world-frame
/// motion of the sensor origin.
pub fn mounted_measurements(sample: &TrajectorySample, mount: &Extrinsic, gravity: &Vec3) -> (Vec3, Vec3) {
    let sensor = sample.attached_frame(&mount.rotation().inverse(), &mount.p);
    ideal_body_measurements(&sensor, gravity)
}

/// Measurements of one mounted IMU along a precomputed truth sequence.
pub fn simulate_from_truth(
    truth: &[TrajectorySample],
    freq: f64,
    gravity: &Vec3,
    mount: &Extrinsic,
    noise: &NoiseSpec,
    seed: u64,
) -> ImuSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut process = NoiseProcess::new(*noise, freq);
    let mut gyro = Vec::with_capacity(truth.len());
    let mut accel = Vec::with_capacity(truth.len());
    for s in truth {
        let (w, a) = mounted_measurements(s, mount, gravity);
        let (w, a) = process.corrupt(&mut rng, w, a);
        gyro.push(w);
        accel.push(a);
    }
    let start_ns = truth.first().map_or(0, |s| (s.t * 1e9).round() as i64);
    ImuSeries::new(freq, start_ns, gyro, accel).expect("gyro and accel built with equal length")
}

/// One IMU series over the configured duration; deterministic in `seed`.
pub fn simulate_imu(cfg: &SimConfig, mount: &Extrinsic, noise: &NoiseSpec, seed: u64) -> Result<ImuSeries> {
    cfg.validate()?;
    noise.validate()?;
    Ok(simulate_from_truth(&cfg.truth(), cfg.freq, &cfg.gravity, mount, noise, seed))
}

/// Output of [`simulate_array`].
pub struct SimOutput {
    pub truth: Vec<TrajectorySample>,
    pub series: Vec<ImuSeries>,
}

/// Every IMU of `cfg.imus`, seeded per index from `cfg.seed`.
pub fn simulate_array(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let truth = cfg.truth();
    let series = cfg
        .imus
        .iter()
        .enumerate()
        .map(|(i, imu)| {
            simulate_from_truth(
                &truth,
                cfg.freq,
                &cfg.gravity,
                &imu.mount,
                &imu.noise,
                derive_seed(cfg.seed, &[i as u64]),
            )
        })
        .collect();
    Ok(SimOutput { truth, series })
}

/// Rotation perturbed on the right by `Exp(δ)`, `δ ~ N(0, σ_rot² I)`;
/// translation perturbed additively by `N(0, σ_trans² I)`.
pub fn perturb_extrinsics(ext: &Extrinsic, sigma_rot: f64, sigma_trans: f64, seed: u64) -> Result<Extrinsic> {
    if !(sigma_rot >= 0.0 && sigma_trans >= 0.0 && sigma_rot.is_finite() && sigma_trans.is_finite()) {
        return Err(Error::InvalidInput("perturbation sigmas must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec3 {
        Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        )
    };
    let delta = draw() * sigma_rot;
    let dp = draw() * sigma_trans;
    Ok(Extrinsic::new(quat_retract(&ext.q, &delta), ext.p + dp))
}

/// Counter-based seed split (SplitMix64 over the path), so that trial seeds do
/// not depend on execution order.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(master), |acc, &x| mix(acc ^ mix(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{exp_so3, log_so3, quat_from_rotation, Quat};

    fn static_cfg() -> SimConfig {
        SimConfig {
            duration: 1.0,
            trajectory: TrajectoryParams::stationary(),
            ..SimConfig::default()
        }
    }

    #[test]
    fn trajectory_range_check() {
        let cfg = static_cfg();
        assert!(sample_trajectory(&cfg, 0.5).is_ok());
        assert!(matches!(sample_trajectory(&cfg, 1.5), Err(Error::OutOfRange(_))));
        assert!(matches!(sample_trajectory(&cfg, -0.1), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn ideal_measurement_examples() {
        let g = Vec3::from(DEFAULT_GRAVITY);
        let cfg = static_cfg();
        let s = cfg.trajectory.evaluate(0.0);
        let s = TrajectorySample { rot: crate::so3::Rot3::identity(), ..s };
        let (w, a) = ideal_body_measurements(&s, &g);
        assert_eq!(w, Vec3::zeros());
        assert_eq!(a, Vec3::new(0.0, 0.0, 9.81));

        let free_fall = TrajectorySample { acc: g, ..s };
        assert_eq!(ideal_body_measurements(&free_fall, &g).1, Vec3::zeros());
    }

    #[test]
    fn circular_motion_centripetal() {
        // Body on a 1 m circle at 1 rad/s, yaw tracking the tangent, no gravity.
        let params = TrajectoryParams::stationary();
        let base = params.evaluate(0.0);
        let t = 0.7_f64;
        let rot = exp_so3(&Vec3::new(0.0, 0.0, t));
        let s = TrajectorySample {
            t,
            rot,
            pos: Vec3::new(t.cos(), t.sin(), 0.0),
            vel: Vec3::new(-t.sin(), t.cos(), 0.0),
            acc: Vec3::new(-t.cos(), -t.sin(), 0.0),
            omega: Vec3::new(0.0, 0.0, 1.0),
            ..base
        };
        let (_, a) = ideal_body_measurements(&s, &Vec3::zeros());
        assert!((a.norm() - 1.0).abs() < 1e-12);
        // Points to the centre, i.e. −x in this body frame.
        assert!((a - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn transfer_examples() {
        let (w, a) = (Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, -2.0, 9.0));
        let (wb, ab) = transfer_measurement(&w, &Vec3::new(1.0, 1.0, 1.0), &a, &Extrinsic::identity());
        assert_eq!((wb, ab), (w, a));

        let ext = Extrinsic::new(Quat::identity(), Vec3::new(1.0, 0.0, 0.0));
        let (_, ab) = transfer_measurement(&Vec3::z(), &Vec3::zeros(), &Vec3::zeros(), &ext);
        assert!((ab - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn independent_sensors_satisfy_transfer() {
        let cfg = SimConfig::default();
        let ma = Extrinsic::new(
            quat_from_rotation(&exp_so3(&Vec3::new(0.3, -0.2, 0.5))),
            Vec3::new(0.02, -0.03, 0.01),
        );
        let mb = Extrinsic::new(
            quat_from_rotation(&exp_so3(&Vec3::new(-0.4, 0.6, 0.1))),
            Vec3::new(-0.09, 0.04, 0.02),
        );
        let ab = Extrinsic::between_mounts(&ma, &mb);
        let g = cfg.gravity;
        for k in 0..200 {
            let s = cfg.trajectory.evaluate(k as f64 * 0.137);
            let (wa, aa) = mounted_measurements(&s, &ma, &g);
            let (wb, ab_meas) = mounted_measurements(&s, &mb, &g);
            let wdot_a = ma.q * s.omega_dot;
            let (wb_t, ab_t) = transfer_measurement(&wa, &wdot_a, &aa, &ab);
            assert!((wb - wb_t).norm() < 1e-10);
            assert!((ab_meas - ab_t).norm() < 1e-10);
        }
    }

    #[test]
    fn static_noiseless_series() {
        let cfg = static_cfg();
        let s = TrajectoryParams::stationary().evaluate(0.0);
        // Default stationary Euler angles are zero so orientation is identity.
        assert!(log_so3(&s.rot).norm() < 1e-15);
        let series = simulate_imu(&cfg, &Extrinsic::identity(), &NoiseSpec::noiseless(), 1).unwrap();
        assert_eq!(series.len(), 200);
        for (w, a) in series.gyro.iter().zip(&series.accel) {
            assert_eq!(*w, Vec3::zeros());
            assert!((a - Vec3::new(0.0, 0.0, 9.81)).norm() < 1e-15);
        }
    }

    #[test]
    fn sample_count_at_200hz() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.freq, 200.0);
        assert_eq!(cfg.duration, 60.0);
        assert_eq!(cfg.sample_count(), 12_000);
    }

    #[test]
    fn white_noise_level() {
        let cfg = SimConfig {
            duration: 500.0,
            trajectory: TrajectoryParams::stationary(),
            ..SimConfig::default()
        };
        let noise = NoiseSpec::default().without_bias();
        let series = simulate_imu(&cfg, &Extrinsic::identity(), &noise, 9).unwrap();
        assert_eq!(series.len(), 100_000);
        let n = series.len() as f64;
        let var = series.gyro.iter().map(|w| w.x * w.x).sum::<f64>() / n;
        let expected = noise.sigma_g * cfg.freq.sqrt();
        assert!((var.sqrt() / expected - 1.0).abs() < 0.05);
    }

    #[test]
    fn seeds_are_reproducible() {
        let cfg = SimConfig {
            duration: 2.0,
            ..SimConfig::default()
        };
        let a = simulate_imu(&cfg, &Extrinsic::identity(), &NoiseSpec::default(), 5).unwrap();
        let b = simulate_imu(&cfg, &Extrinsic::identity(), &NoiseSpec::default(), 5).unwrap();
        let c = simulate_imu(&cfg, &Extrinsic::identity(), &NoiseSpec::default(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn perturbation_statistics() {
        let ext = Extrinsic::new(
            quat_from_rotation(&exp_so3(&Vec3::new(0.1, 0.2, 0.3))),
            Vec3::new(0.05, 0.0, 0.0),
        );
        assert_eq!(perturb_extrinsics(&ext, 0.0, 0.0, 3).unwrap(), ext);
        assert!(perturb_extrinsics(&ext, -1.0, 0.0, 3).is_err());

        let (sr, st) = (0.01, 0.001);
        let n = 10_000;
        let mut sq_rot = Vec3::zeros();
        let mut sq_trans = Vec3::zeros();
        for i in 0..n {
            let p = perturb_extrinsics(&ext, sr, st, derive_seed(77, &[i])).unwrap();
            let d = log_so3(&(ext.rotation().inverse() * p.rotation()));
            sq_rot += d.component_mul(&d);
            let dp = p.p - ext.p;
            sq_trans += dp.component_mul(&dp);
        }
        for i in 0..3 {
            let s_rot = (sq_rot[i] / n as f64).sqrt();
            let s_trans = (sq_trans[i] / n as f64).sqrt();
            assert!((s_rot / sr - 1.0).abs() < 0.05, "rot axis {i}: {s_rot}");
            assert!((s_trans / st - 1.0).abs() < 0.05, "trans axis {i}: {s_trans}");
        }
    }

    #[test]
    fn config_toml_and_overrides() {
        let text = r#"
            freq = 100.0
            duration = 5.0
            [trajectory]
            pos_amplitude = [0.1, 0.2, 0.3]
            [[imus]]
            p_m = [0.1, 0.0, 0.0]
            [imus.noise]
            sigma_g = 0.001
        "#;
        let cfg = SimConfig::from_toml_str(text, &["duration=3.0".into(), "seed=9".into()]).unwrap();
        assert_eq!(cfg.freq, 100.0);
        assert_eq!(cfg.duration, 3.0);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.imus.len(), 1);
        assert_eq!(cfg.imus[0].noise.sigma_g, 0.001);
        assert_eq!(cfg.trajectory.pos_amplitude, Vec3::new(0.1, 0.2, 0.3));

        assert!(SimConfig::from_toml_str("freq = -1.0", &[]).is_err());
        assert!(SimConfig::from_toml_str("bogus = 1", &[]).is_err());
        let round = toml::to_string(&SimConfig::default()).unwrap();
        assert_eq!(SimConfig::from_toml_str(&round, &[]).unwrap(), SimConfig::default());
    }

    #[test]
    fn derive_seed_distinct() {
        let a = derive_seed(1, &[0, 1]);
        assert_ne!(a, derive_seed(1, &[1, 0]));
        assert_ne!(a, derive_seed(2, &[0, 1]));
        assert_eq!(a, derive_seed(1, &[0, 1]));
    }
}
