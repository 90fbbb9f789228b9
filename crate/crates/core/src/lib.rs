//! Capacitive servoing simulator.
//!
//! A six-electrode capacitive array mounted on a free-floating end effector
//! senses a nearby limb. A windowed MLP regresses the limb-relative pose from
//! the capacitance history, and a PD loop uses those estimates to keep the
//! sensor a fixed distance above the limb while it traverses along it.
//!
//! Modules, bottom-up: [`geometry`] (limb models and ground-truth pose),
//! [`sensor`] (synthetic capacitance), [`estimator`] (windowing, MLP, Adam),
//! [`datagen`] (trajectory collection and sweeps), [`control`] (the servo
//! loop), [`evaluation`] (error tables, heatmaps, task suites) and [`cli`].

pub mod cli;
pub mod config;
pub mod control;
pub mod datagen;
pub mod estimator;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod rng;
pub mod sensor;

pub use geometry::{EePose, LimbModel, LimbSegment, RelativePose, Vec3};
pub use sensor::{CapFrame, CapModelParams, SensorArraySpec, SensorRig};
