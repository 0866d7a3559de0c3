//! Extrinsic calibration of rigidly mounted IMUs, virtual-IMU fusion and
//! on-manifold preintegration, with a simulator and Monte-Carlo harness.

pub mod calib;
pub mod config;
pub mod error;
pub mod preint;
pub mod extrinsic;
pub mod harness;
pub mod series;
pub mod sim;
pub mod so3;
pub mod vimu;

pub use error::{Error, Result};
pub use extrinsic::Extrinsic;
pub use series::ImuSeries;
pub use sim::{NoiseSpec, SimConfig};
