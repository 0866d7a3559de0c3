//! Fixed-rate IMU sample series and the `t_ns,wx,wy,wz,ax,ay,az` CSV format.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::so3::Vec3;

pub const CSV_HEADER: [&str; 7] = ["t_ns", "wx", "wy", "wz", "ax", "ay", "az"];

/// Allowed deviation of any sample interval from the mean interval, and of two
/// series' rates from each other.
pub const RATE_TOLERANCE: f64 = 0.01;

/// Synchronised gyro (rad/s) and accel (m/s²) samples at a fixed rate.
/// Sample `k` is taken at `start_ns + k·1e9/freq`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuSeries {
    pub freq: f64,
    pub start_ns: i64,
    pub gyro: Vec<Vec3>,
    pub accel: Vec<Vec3>,
}

impl ImuSeries {
    pub fn new(freq: f64, start_ns: i64, gyro: Vec<Vec3>, accel: Vec<Vec3>) -> Result<Self> {
        if !(freq.is_finite() && freq > 0.0) {
            return Err(Error::InvalidInput(format!("freq must be positive, got {freq}")));
        }
        if gyro.len() != accel.len() {
            return Err(Error::LengthMismatch(format!(
                "{} gyro vs {} accel samples",
                gyro.len(),
                accel.len()
            )));
        }
        Ok(Self {
            freq,
            start_ns,
            gyro,
            accel,
        })
    }

    pub fn len(&self) -> usize {
        self.gyro.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gyro.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.freq
    }

    pub fn timestamp_ns(&self, k: usize) -> i64 {
        self.start_ns + (k as f64 * 1e9 / self.freq).round() as i64
    }

    /// Time of the last sample minus time of the first (s).
    pub fn span_secs(&self) -> f64 {
        self.len().saturating_sub(1) as f64 / self.freq
    }

    /// Samples `range`, keeping timestamps.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            freq: self.freq,
            start_ns: self.timestamp_ns(range.start),
            gyro: self.gyro[range.clone()].to_vec(),
            accel: self.accel[range].to_vec(),
        }
    }

    /// The first `secs` seconds of data (`round(secs·freq)` samples, at most all).
    pub fn window(&self, secs: f64) -> Self {
        let n = ((secs * self.freq).round().max(0.0) as usize).min(self.len());
        self.slice(0..n)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for k in 0..self.len() {
            let (g, a) = (self.gyro[k], self.accel[k]);
            w.write_record([
                self.timestamp_ns(k).to_string(),
                g.x.to_string(),
                g.y.to_string(),
                g.z.to_string(),
                a.x.to_string(),
                a.y.to_string(),
                a.z.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses and validates a CSV document: exact header, finite values,
    /// strictly increasing timestamps, every interval within 1% of the mean.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers().map_err(csv_err)?;
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(Error::Format(format!(
                "expected header `{}`, found `{}`",
                CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }

        let mut times: Vec<i64> = Vec::new();
        let mut gyro = Vec::new();
        let mut accel = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let row = line + 2;
            if rec.len() != 7 {
                return Err(Error::Format(format!("row {row}: expected 7 fields")));
            }
            let t: i64 = rec[0]
                .parse()
                .map_err(|_| Error::Format(format!("row {row}: bad t_ns `{}`", &rec[0])))?;
            let mut v = [0.0; 6];
            for (i, slot) in v.iter_mut().enumerate() {
                let x: f64 = rec[i + 1]
                    .parse()
                    .map_err(|_| Error::Format(format!("row {row}: bad value `{}`", &rec[i + 1])))?;
                if !x.is_finite() {
                    return Err(Error::Format(format!("row {row}: non-finite value")));
                }
                *slot = x;
            }
            if let Some(&prev) = times.last() {
                if t <= prev {
                    return Err(Error::Format(format!("row {row}: t_ns not strictly increasing")));
                }
            }
            times.push(t);
            gyro.push(Vec3::new(v[0], v[1], v[2]));
            accel.push(Vec3::new(v[3], v[4], v[5]));
        }

        if times.len() < 2 {
            return Err(Error::Format("need at least two rows to determine the rate".into()));
        }
        let span = (times[times.len() - 1] as i128 - times[0] as i128) as f64;
        let period = span / (times.len() - 1) as f64;
        for (k, w) in times.windows(2).enumerate() {
            let d = (w[1] as i128 - w[0] as i128) as f64;
            if ((d - period) / period).abs() > RATE_TOLERANCE {
                return Err(Error::Format(format!(
                    "row {}: interval {d} ns deviates more than 1% from mean {period:.1} ns",
                    k + 3
                )));
            }
        }
        Self::new(1e9 / period, times[0], gyro, accel)
    }

    pub fn parse_csv(bytes: &[u8]) -> Result<Self> {
        Self::read_csv(bytes)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(File::open(path)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!("checked is_io_error"),
        }
    } else {
        Error::Format(e.to_string())
    }
}

/// Cuts already-parsed series to their common time window.
///
/// Rates must agree within 1%; no resampling is done, so every output series
/// has the same length and starts within half a period of the common start.
pub fn synchronize(series: &[ImuSeries]) -> Result<Vec<ImuSeries>> {
    let Some(first) = series.first() else {
        return Ok(Vec::new());
    };
    for s in series {
        if s.is_empty() {
            return Err(Error::EmptyOverlap);
        }
        if ((s.freq - first.freq) / first.freq).abs() > RATE_TOLERANCE {
            return Err(Error::RateMismatch(format!("{} Hz vs {} Hz", first.freq, s.freq)));
        }
    }
    let start = series.iter().map(|s| s.start_ns).max().expect("non-empty");
    let end = series
        .iter()
        .map(|s| s.timestamp_ns(s.len() - 1))
        .min()
        .expect("non-empty");
    if end < start {
        return Err(Error::EmptyOverlap);
    }

    let mut bounds = Vec::with_capacity(series.len());
    for s in series {
        let period = 1e9 / s.freq;
        let k0 = (((start - s.start_ns) as f64 / period) - 0.5).ceil().max(0.0) as usize;
        let k1 = ((((end - s.start_ns) as f64 / period) + 0.5).floor() as usize).min(s.len() - 1);
        if k1 < k0 {
            return Err(Error::EmptyOverlap);
        }
        bounds.push((k0, k1 - k0 + 1));
    }
    let n = bounds.iter().map(|b| b.1).min().expect("non-empty");
    Ok(series
        .iter()
        .zip(bounds)
        .map(|(s, (k0, _))| s.slice(k0..k0 + n))
        .collect())
}

/// Loads each CSV and synchronises them (see [`synchronize`]).
pub fn ingest_csv<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<ImuSeries>> {
    let series = paths
        .iter()
        .map(|p| ImuSeries::load_csv(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    synchronize(&series)
}
