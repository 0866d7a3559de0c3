use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::Vec3;

/// Continuous-time noise densities of one IMU, plus its initial biases.
///
/// Units: `sigma_g` rad/s/√Hz, `sigma_a` m/s²/√Hz, `sigma_bg` rad/s²/√Hz,
/// `sigma_ba` m/s³/√Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma_g: f64,
    pub sigma_a: f64,
    pub sigma_bg: f64,
    pub sigma_ba: f64,
    pub initial_bias_g: Vec3,
    pub initial_bias_a: Vec3,
}

impl Default for NoiseSpec {
    /// Consumer MEMS grade (MPU-6050 class).
    fn default() -> Self {
        Self {
            sigma_g: 1.7e-4,
            sigma_a: 2.0e-3,
            sigma_bg: 1.0e-5,
            sigma_ba: 3.0e-4,
            initial_bias_g: Vec3::zeros(),
            initial_bias_a: Vec3::zeros(),
        }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            sigma_g: 0.0,
            sigma_a: 0.0,
            sigma_bg: 0.0,
            sigma_ba: 0.0,
            initial_bias_g: Vec3::zeros(),
            initial_bias_a: Vec3::zeros(),
        }
    }

    /// Same densities, biases disabled (no initial offset, no random walk).
    pub fn without_bias(mut self) -> Self {
        self.sigma_bg = 0.0;
        self.sigma_ba = 0.0;
        self.initial_bias_g = Vec3::zeros();
        self.initial_bias_a = Vec3::zeros();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_g, self.sigma_a, self.sigma_bg, self.sigma_ba];
        if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidInput(
                "noise densities must be finite and non-negative".into(),
            ));
        }
        if self
            .initial_bias_g
            .iter()
            .chain(self.initial_bias_a.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("initial biases must be finite".into()));
        }
        Ok(())
    }
}

/// Reads a noise file for a sensor pair: either one spec shared by both
/// sensors, or separate `[a]` and `[b]` tables.
pub fn noise_pair_from_toml_str(text: &str) -> Result<(NoiseSpec, NoiseSpec)> {
    let table: toml::Table = crate::config::parse_toml(text, &[])?;
    let (a, b) = if table.contains_key("a") || table.contains_key("b") {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Pair {
            a: NoiseSpec,
            b: NoiseSpec,
        }
        let pair: Pair = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Format(e.message().to_string()))?;
        (pair.a, pair.b)
    } else {
        let shared: NoiseSpec = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Format(e.message().to_string()))?;
        (shared, shared)
    };
    a.validate()?;
    b.validate()?;
    Ok((a, b))
}

/// Discrete-time corruption of ideal samples at a fixed rate.
///
/// White noise per sample is `N(0, σ²·freq)`; biases follow
/// `b_{k+1} = b_k + σ_b·√(1/freq)·n_k`.
#[derive(Debug, Clone)]
pub struct NoiseProcess {
    spec: NoiseSpec,
    sqrt_freq: f64,
    sqrt_dt: f64,
    pub bias_g: Vec3,
    pub bias_a: Vec3,
}

fn normal3<R: Rng>(rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

impl NoiseProcess {
    pub fn new(spec: NoiseSpec, freq: f64) -> Self {
        Self {
            spec,
            sqrt_freq: freq.sqrt(),
            sqrt_dt: (1.0 / freq).sqrt(),
            bias_g: spec.initial_bias_g,
            bias_a: spec.initial_bias_a,
        }
    }

    /// Corrupts one (gyro, accel) sample and advances the bias walk.
    pub fn corrupt<R: Rng>(&mut self, rng: &mut R, gyro: Vec3, accel: Vec3) -> (Vec3, Vec3) {
        let eta_g = normal3(rng) * (self.spec.sigma_g * self.sqrt_freq);
        let eta_a = normal3(rng) * (self.spec.sigma_a * self.sqrt_freq);
        let out = (gyro + self.bias_g + eta_g, accel + self.bias_a + eta_a);
        self.bias_g += normal3(rng) * (self.spec.sigma_bg * self.sqrt_dt);
        self.bias_a += normal3(rng) * (self.spec.sigma_ba * self.sqrt_dt);
        out
    }
}
