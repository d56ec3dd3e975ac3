//! Scenario-driven simulation of distributed truss control.
//!
//! A [`Scenario`] describes a robot, its true shape, its sensors, its
//! controller and a timed command script. [`Simulation`] runs the loop of
//! measuring, estimating, coordinating and acting one step at a time, always
//! applying the actuator commands to the true robot. [`suites`] reproduces the
//! reference experiments and [`export`] writes plot-ready files.

pub mod error;
pub mod export;
pub mod measure;
pub mod perturb;
pub mod robot;
pub mod run;
pub mod scenario;
pub mod suites;

pub use error::{Result, SimError};
pub use robot::Robot;
pub use run::{run_algorithm1, run_control, run_estimation, RunRecord, SimOptions, Simulation, StepRecord};
pub use scenario::{Command, Scenario};
