//! Monte-Carlo comparison of virtual-IMU variants built from a 3×3 IMU grid
//! with perturbed mounting extrinsics.
//!
//! For every extrinsic-error sample the grid's true mounts are the nominal
//! ones perturbed by `σ_rot`/`σ_trans`; fusion always uses the nominal (or
//! calibrated) extrinsics. Each sequence dead-reckons the virtual IMU over
//! keyframe intervals from the true initial state and scores the keyframe
//! states against ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{calibrate, CalibrationInput};
use crate::error::{Error, Result};
use crate::extrinsic::Extrinsic;
use crate::preint::{dead_reckon, keyframe_ranges, Preintegrator, VimuState};
use crate::series::ImuSeries;
use crate::sim::{derive_seed, perturb_extrinsics, simulate_from_truth, ImuMount, SimConfig, TrajectorySample};
use crate::so3::geodesic_angle;
use crate::vimu::{build_fusion, fuse_series, midpoint_frame, virtual_covariances, FusionMatrices, VimuConfig};

pub const CENTRE: usize = 4;
pub const PAIR: [usize; 2] = [3, 5];
pub const CORNERS: [usize; 4] = [0, 2, 6, 8];
pub const GRID_SIZE: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "1-imu-true")]
    OneTrue,
    #[serde(rename = "2-imu-perturbed")]
    TwoPerturbed,
    #[serde(rename = "4-imu-perturbed")]
    FourPerturbed,
    #[serde(rename = "9-imu-perturbed")]
    NinePerturbed,
    #[serde(rename = "2-imu-calibrated")]
    TwoCalibrated,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::OneTrue,
        Variant::TwoPerturbed,
        Variant::FourPerturbed,
        Variant::NinePerturbed,
        Variant::TwoCalibrated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::OneTrue => "1-imu-true",
            Variant::TwoPerturbed => "2-imu-perturbed",
            Variant::FourPerturbed => "4-imu-perturbed",
            Variant::NinePerturbed => "9-imu-perturbed",
            Variant::TwoCalibrated => "2-imu-calibrated",
        }
    }

    /// Grid indices fused by this variant.
    pub fn sensors(self) -> &'static [usize] {
        match self {
            Variant::OneTrue => &[CENTRE],
            Variant::TwoPerturbed | Variant::TwoCalibrated => &PAIR,
            Variant::FourPerturbed => &CORNERS,
            Variant::NinePerturbed => &[0, 1, 2, 3, 4, 5, 6, 7, 8],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub variants: Vec<Variant>,
    /// Extrinsic-error samples.
    pub samples: usize,
    /// Sequences per extrinsic-error sample.
    pub sequences: usize,
    /// Mount rotation perturbation (rad, per axis).
    pub sigma_rot: f64,
    /// Mount translation perturbation (m, per axis).
    pub sigma_trans: f64,
    pub sequence_secs: f64,
    pub keyframe_secs: f64,
    /// Data window for the calibrated variant.
    pub calibration_secs: f64,
    pub seed: u64,
    pub sim: SimConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            samples: 20,
            sequences: 100,
            sigma_rot: 0.01,
            sigma_trans: 0.001,
            sequence_secs: 5.0,
            keyframe_secs: 0.5,
            calibration_secs: 60.0,
            seed: 42,
            sim: SimConfig::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let plan: ExperimentPlan = crate::config::parse_toml(text, overrides)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn full_scale(mut self) -> Self {
        self.samples = 100;
        self.sequences = 5000;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::InvalidInput("plan lists no variants".into()));
        }
        if self.samples == 0 || self.sequences == 0 {
            return Err(Error::InvalidInput("sample and sequence counts must be at least 1".into()));
        }
        for (name, v) in [("sigma_rot", self.sigma_rot), ("sigma_trans", self.sigma_trans)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be non-negative")));
            }
        }
        for (name, v) in [
            ("sequence_secs", self.sequence_secs),
            ("keyframe_secs", self.keyframe_secs),
            ("calibration_secs", self.calibration_secs),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        if self.keyframe_secs > self.sequence_secs {
            return Err(Error::InvalidInput("keyframe interval exceeds the sequence".into()));
        }
        if self.sim.imus.len() != GRID_SIZE {
            return Err(Error::InvalidInput(format!(
                "the harness needs a {GRID_SIZE}-IMU grid, got {}",
                self.sim.imus.len()
            )));
        }
        self.sim.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rmse {
    /// m
    pub pos: f64,
    /// rad
    pub rot: f64,
    /// m/s
    pub vel: f64,
}

impl Rmse {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Position => self.pos,
            Metric::Rotation => self.rot,
            Metric::Velocity => self.vel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Position,
    Rotation,
    Velocity,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Position, Metric::Rotation, Metric::Velocity];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Position => "position",
            Metric::Rotation => "rotation",
            Metric::Velocity => "velocity",
        }
    }
}

/// Position, geodesic rotation and velocity RMSE of `predicted` against `truth`.
pub fn rmse_metrics(predicted: &[VimuState], truth: &[TrajectorySample]) -> Result<Rmse> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} truth states",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidInput("no states to compare".into()));
    }
    let mut sum = Rmse::default();
    for (p, t) in predicted.iter().zip(truth) {
        sum.pos += (p.pos - t.pos).norm_squared();
        sum.rot += geodesic_angle(&t.rot, &p.rot).powi(2);
        sum.vel += (p.vel - t.vel).norm_squared();
    }
    let n = predicted.len() as f64;
    Ok(Rmse {
        pos: (sum.pos / n).sqrt(),
        rot: (sum.rot / n).sqrt(),
        vel: (sum.vel / n).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub sample: usize,
    pub sequence: Option<usize>,
    pub variant: Variant,
    pub kind: String,
    pub message: String,
}

impl Failure {
    fn new(sample: usize, sequence: Option<usize>, variant: Variant, err: &Error) -> Self {
        Self {
            sample,
            sequence,
            variant,
            kind: err.kind().to_string(),
            message: err.to_string(),
        }
    }
}

/// Per-sample outcome, streamed as soon as the sample finishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample: usize,
    /// Mean RMSE over the sample's successful sequences.
    pub metrics: BTreeMap<Variant, Rmse>,
    pub succeeded: BTreeMap<Variant, usize>,
    /// Translation (m) and rotation (rad) error of the pair calibration.
    pub calibration_error: Option<[f64; 2]>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub pos: Option<Stat>,
    pub rot: Option<Stat>,
    pub vel: Option<Stat>,
    /// Indexed by sample; `None` where every sequence failed.
    pub per_sample: Vec<Option<Rmse>>,
    pub failed_trials: usize,
}

impl VariantSummary {
    pub fn stat(&self, metric: Metric) -> Option<Stat> {
        match metric {
            Metric::Position => self.pos,
            Metric::Rotation => self.rot,
            Metric::Velocity => self.vel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub plan: ExperimentPlan,
    pub variants: Vec<VariantSummary>,
    pub calibration: Option<[Stat; 2]>,
    pub failures: Vec<Failure>,
}

impl RmseReport {
    pub fn variant(&self, v: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == v)
    }

    /// Per-sample values of `metric` for the samples where both variants
    /// succeeded.
    pub fn paired(&self, lhs: Variant, rhs: Variant, metric: Metric) -> Option<(Vec<f64>, Vec<f64>)> {
        let (a, b) = (self.variant(lhs)?, self.variant(rhs)?);
        Some(
            a.per_sample
                .iter()
                .zip(&b.per_sample)
                .filter_map(|(x, y)| Some((x.as_ref()?.get(metric), y.as_ref()?.get(metric))))
                .unzip(),
        )
    }
}

/// Paired bootstrap: fraction of resamples (with replacement, over paired
/// entries) whose mean of `lhs` is ≤ that of `rhs`.
pub fn bootstrap_confidence(lhs: &[f64], rhs: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    if lhs.len() != rhs.len() {
        return Err(Error::LengthMismatch("bootstrap inputs must be paired".into()));
    }
    if lhs.is_empty() || resamples == 0 {
        return Err(Error::InvalidInput("bootstrap needs data and resamples".into()));
    }
    let n = lhs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..resamples {
        let mut diff = 0.0;
        for _ in 0..n {
            let i = rng.random_range(0..n);
            diff += lhs[i] - rhs[i];
        }
        if diff <= 0.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / resamples as f64)
}

/// One ordering claim `lhs ≤ rhs` on a metric, with bootstrap support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub lhs: Variant,
    pub rhs: Variant,
    pub metric: Metric,
    pub lhs_mean: f64,
    pub rhs_mean: f64,
    pub confidence: f64,
}

impl Claim {
    pub fn holds(&self, level: f64) -> bool {
        self.lhs_mean <= self.rhs_mean && self.confidence >= level
    }
}

/// Evaluates `lhs ≤ rhs` on every metric. Pairs involving a variant that
/// was not run are skipped.
pub fn ordering_claims(report: &RmseReport, pairs: &[(Variant, Variant)], resamples: usize, seed: u64) -> Result<Vec<Claim>> {
    let mut out = Vec::new();
    for &(lhs, rhs) in pairs {
        for metric in Metric::ALL {
            let Some((a, b)) = report.paired(lhs, rhs, metric) else {
                continue;
            };
            if a.is_empty() {
                continue;
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            out.push(Claim {
                lhs,
                rhs,
                metric,
                lhs_mean: mean(&a),
                rhs_mean: mean(&b),
                confidence: bootstrap_confidence(&a, &b, resamples, seed)?,
            });
        }
    }
    Ok(out)
}

/// The orderings the sweep is designed to test.
pub fn expected_orderings() -> Vec<(Variant, Variant)> {
    use Variant::*;
    vec![
        (TwoCalibrated, NinePerturbed),
        (OneTrue, TwoPerturbed),
        (OneTrue, FourPerturbed),
        (OneTrue, NinePerturbed),
        (NinePerturbed, FourPerturbed),
        (FourPerturbed, TwoPerturbed),
    ]
}

/// Fusion setup of one variant within one extrinsic-error sample.
struct VariantSetup {
    variant: Variant,
    cfg: VimuConfig,
    fm: FusionMatrices,
    pre: Preintegrator,
    /// Where V truly sits on the body: `q = ⱽq_body`, `p = ᵇᵒᵈʸp_V`.
    v_mount: Extrinsic,
}

impl VariantSetup {
    fn new(variant: Variant, cfg: VimuConfig, v_mount: Extrinsic, freq: f64) -> Result<Self> {
        let fm = build_fusion(&cfg)?;
        let pre = Preintegrator::new(&cfg, &fm, &virtual_covariances(&cfg, &fm), freq)?.without_covariance();
        Ok(Self {
            variant,
            cfg,
            fm,
            pre,
            v_mount,
        })
    }

    fn run(&self, truth: &[TrajectorySample], series: &[Option<ImuSeries>], plan: &ExperimentPlan) -> Result<Rmse> {
        let inputs: Vec<ImuSeries> = self
            .variant
            .sensors()
            .iter()
            .map(|&i| series[i].clone().expect("simulated for every used sensor"))
            .collect();
        let v = fuse_series(&self.cfg, &self.fm, &inputs, None)?;
        let ranges = keyframe_ranges(v.len(), plan.sim.freq, plan.keyframe_secs)?;
        let body_r_v = self.v_mount.rotation().inverse();
        let truth_v = |k: usize| truth[k + 1].attached_frame(&body_r_v, &self.v_mount.p);
        let start = VimuState::from_truth(&truth_v(0));
        let states = dead_reckon(&self.pre, &v.samples, &start, &ranges, &plan.sim.gravity)?;
        let reference: Vec<TrajectorySample> = ranges.iter().map(|r| truth_v(r.end)).collect();
        rmse_metrics(&states[1..], &reference)
    }
}

fn sequence_config(plan: &ExperimentPlan, secs: f64, seed: u64) -> SimConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SimConfig {
        // two extra samples are consumed by the central-difference ω̇
        duration: secs + 2.0 / plan.sim.freq,
        trajectory: plan.sim.trajectory.with_random_phases(&mut rng),
        ..plan.sim.clone()
    }
}

fn calibrate_pair(plan: &ExperimentPlan, mounts: &[ImuMount], sample: usize) -> Result<(Extrinsic, [f64; 2])> {
    let cfg = sequence_config(plan, plan.calibration_secs, derive_seed(plan.seed, &[sample as u64, 1]));
    let truth = cfg.truth();
    let [a, b] = PAIR.map(|i| {
        simulate_from_truth(
            &truth,
            cfg.freq,
            &cfg.gravity,
            &mounts[i].mount,
            &mounts[i].noise,
            derive_seed(plan.seed, &[sample as u64, 2, i as u64]),
        )
    });
    let input = CalibrationInput::new(a, b, mounts[PAIR[0]].noise, mounts[PAIR[1]].noise)?;
    let ext = calibrate(&input)?.extrinsic;
    let (dp, dr) = ext.error_to(&Extrinsic::between_mounts(&mounts[PAIR[0]].mount, &mounts[PAIR[1]].mount));
    Ok((ext, [dp, dr]))
}

fn run_sample(plan: &ExperimentPlan, sample: usize) -> Result<SampleRecord> {
    let nominal = &plan.sim.imus;
    let truth_mounts = nominal
        .iter()
        .enumerate()
        .map(|(i, m)| {
            Ok(ImuMount {
                mount: perturb_extrinsics(
                    &m.mount,
                    plan.sigma_rot,
                    plan.sigma_trans,
                    derive_seed(plan.seed, &[sample as u64, 0, i as u64]),
                )?,
                noise: m.noise,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut failures = Vec::new();
    let mut calibration_error = None;
    let mut setups = Vec::new();
    let freq = plan.sim.freq;
    for &variant in &plan.variants {
        let setup = match variant {
            Variant::OneTrue => {
                let centre = truth_mounts[CENTRE];
                let cfg = VimuConfig::new(vec![ImuMount {
                    mount: Extrinsic::identity(),
                    noise: centre.noise,
                }]);
                cfg.and_then(|cfg| VariantSetup::new(variant, cfg, centre.mount, freq))
            }
            Variant::TwoPerturbed | Variant::FourPerturbed | Variant::NinePerturbed => {
                let used: Vec<ImuMount> = variant.sensors().iter().map(|&i| nominal[i]).collect();
                VimuConfig::from_body(&used, &Extrinsic::identity())
                    .and_then(|cfg| VariantSetup::new(variant, cfg, Extrinsic::identity(), freq))
            }
            Variant::TwoCalibrated => calibrate_pair(plan, &truth_mounts, sample).and_then(|(ext, err)| {
                calibration_error = Some(err);
                let a = truth_mounts[PAIR[0]];
                let cfg = midpoint_frame(&ext, a.noise, truth_mounts[PAIR[1]].noise);
                // V keeps A's orientation and sits halfway along the calibrated lever arm.
                let v_mount = Extrinsic::new(a.mount.q, a.mount.p + a.mount.q.inverse() * (0.5 * ext.p));
                VariantSetup::new(variant, cfg, v_mount, freq)
            }),
        };
        match setup {
            Ok(s) => setups.push(s),
            Err(e) => failures.push(Failure::new(sample, None, variant, &e)),
        }
    }

    let mut needed = [false; GRID_SIZE];
    for s in &setups {
        for &i in s.variant.sensors() {
            needed[i] = true;
        }
    }

    let per_sequence: Vec<Vec<(Variant, Result<Rmse>)>> = (0..plan.sequences)
        .into_par_iter()
        .map(|seq| {
            let cfg = sequence_config(plan, plan.sequence_secs, derive_seed(plan.seed, &[sample as u64, 3, seq as u64]));
            let truth = cfg.truth();
            let series: Vec<Option<ImuSeries>> = (0..GRID_SIZE)
                .map(|i| {
                    needed[i].then(|| {
                        simulate_from_truth(
                            &truth,
                            cfg.freq,
                            &cfg.gravity,
                            &truth_mounts[i].mount,
                            &truth_mounts[i].noise,
                            derive_seed(plan.seed, &[sample as u64, 4, seq as u64, i as u64]),
                        )
                    })
                })
                .collect();
            setups
                .iter()
                .map(|s| (s.variant, s.run(&truth, &series, plan)))
                .collect()
        })
        .collect();

    let mut sums: BTreeMap<Variant, (Rmse, usize)> = BTreeMap::new();
    for (seq, results) in per_sequence.into_iter().enumerate() {
        for (variant, res) in results {
            match res {
                Ok(r) => {
                    let e = sums.entry(variant).or_default();
                    e.0.pos += r.pos;
                    e.0.rot += r.rot;
                    e.0.vel += r.vel;
                    e.1 += 1;
                }
                Err(e) => failures.push(Failure::new(sample, Some(seq), variant, &e)),
            }
        }
    }
    let metrics = sums
        .iter()
        .map(|(v, (s, n))| {
            let n = *n as f64;
            (
                *v,
                Rmse {
                    pos: s.pos / n,
                    rot: s.rot / n,
                    vel: s.vel / n,
                },
            )
        })
        .collect();
    Ok(SampleRecord {
        sample,
        metrics,
        succeeded: sums.iter().map(|(v, (_, n))| (*v, *n)).collect(),
        calibration_error,
        failures,
    })
}

/// Runs the sweep, handing each finished sample to `sink` before starting
/// the next one.
pub fn run_experiment_with<F>(plan: &ExperimentPlan, mut sink: F) -> Result<RmseReport>
where
    F: FnMut(&SampleRecord) -> Result<()>,
{
    plan.validate()?;
    let mut records = Vec::with_capacity(plan.samples);
    for sample in 0..plan.samples {
        let rec = run_sample(plan, sample)?;
        log::info!(
            "sample {}/{}: {} failures",
            sample + 1,
            plan.samples,
            rec.failures.len()
        );
        sink(&rec)?;
        records.push(rec);
    }
    Ok(aggregate(plan, &records))
}

pub fn run_experiment(plan: &ExperimentPlan) -> Result<RmseReport> {
    run_experiment_with(plan, |_| Ok(()))
}

fn aggregate(plan: &ExperimentPlan, records: &[SampleRecord]) -> RmseReport {
    let failures: Vec<Failure> = records.iter().flat_map(|r| r.failures.iter().cloned()).collect();
    let variants = plan
        .variants
        .iter()
        .map(|&variant| {
            let per_sample: Vec<Option<Rmse>> = records.iter().map(|r| r.metrics.get(&variant).copied()).collect();
            let values = |m: Metric| -> Vec<f64> { per_sample.iter().flatten().map(|r| r.get(m)).collect() };
            VariantSummary {
                variant,
                pos: Stat::of(&values(Metric::Position)),
                rot: Stat::of(&values(Metric::Rotation)),
                vel: Stat::of(&values(Metric::Velocity)),
                failed_trials: failures
                    .iter()
                    .filter(|f| f.variant == variant)
                    .map(|f| if f.sequence.is_some() { 1 } else { plan.sequences })
                    .sum(),
                per_sample,
            }
        })
        .collect();
    let cal: Vec<[f64; 2]> = records.iter().filter_map(|r| r.calibration_error).collect();
    let calibration = match (
        Stat::of(&cal.iter().map(|c| c[0]).collect::<Vec<_>>()),
        Stat::of(&cal.iter().map(|c| c[1]).collect::<Vec<_>>()),
    ) {
        (Some(p), Some(r)) => Some([p, r]),
        _ => None,
    };
    RmseReport {
        plan: plan.clone(),
        variants,
        calibration,
        failures,
    }
}

pub fn report_json(report: &RmseReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_report(text: &str) -> Result<RmseReport> {
    serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
}

/// `variant,metric,mean,std` rows for external plotting.
pub fn plot_data_csv(report: &RmseReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["variant", "metric", "mean", "std"]).map_err(csv_err)?;
    for v in &report.variants {
        for m in Metric::ALL {
            if let Some(s) = v.stat(m) {
                w.write_record([
                    v.variant.name(),
                    m.name(),
                    &s.mean.to_string(),
                    &s.std.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn failures_log(report: &RmseReport) -> String {
    let mut out = String::new();
    for f in &report.failures {
        let seq = f.sequence.map_or_else(|| "-".to_string(), |s| s.to_string());
        out.push_str(&format!(
            "sample={} sequence={} variant={} kind={} message={}\n",
            f.sample, seq, f.variant, f.kind, f.message
        ));
    }
    out
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Writes `report.json`, `plot_data.csv` and `failures.log` into `dir`.
pub fn emit_report(report: &RmseReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("report.json"), report_json(report)?.as_bytes())?;
    write_atomic(&dir.join("plot_data.csv"), plot_data_csv(report)?.as_bytes())?;
    write_atomic(&dir.join("failures.log"), failures_log(report).as_bytes())?;
    Ok(())
}
