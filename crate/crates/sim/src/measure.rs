//! Synthetic sensor readings.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use truss_core::estimation::{
    exact_distance_measurements, exact_position_measurements, DistanceMeasurement, RelativePositionMeasurement,
};
use truss_core::Configuration;

use crate::error::{invalid, Result};
use crate::robot::Robot;
use crate::scenario::MeasurementMode;

/// One step's readings from every sensor on the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "kebab-case")]
pub enum MeasurementSet {
    RelativePosition(Vec<RelativePositionMeasurement>),
    RelativeDistance(Vec<DistanceMeasurement>),
    /// Tube distance of every roller from the start of the tube.
    Encoder(Vec<f64>),
}

/// Exact readings of `truth` plus i.i.d. zero-mean Gaussian noise.
///
/// Relative-position vectors get independent noise per component and per
/// direction, since each endpoint carries its own sensor. Lengths are
/// clamped at zero and encoder readings to the tube.
pub fn synthesize_measurements<R: Rng + ?Sized>(
    robot: &Robot,
    mode: MeasurementMode,
    truth: &Configuration,
    noise_std: f64,
    rng: &mut R,
) -> Result<MeasurementSet> {
    let mut noise = || if noise_std > 0.0 { noise_std * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
    Ok(match mode {
        MeasurementMode::RelativePosition => {
            let mut m = exact_position_measurements(robot.graph(), truth);
            for mm in &mut m {
                for c in &mut mm.v {
                    *c += noise();
                }
            }
            MeasurementSet::RelativePosition(m)
        }
        MeasurementMode::RelativeDistance => {
            let mut m = exact_distance_measurements(robot.graph(), truth)?;
            for mm in &mut m {
                mm.length = (mm.length + noise()).max(0.0);
            }
            MeasurementSet::RelativeDistance(m)
        }
        MeasurementMode::Encoder => {
            let iso = robot.as_isoperimetric().ok_or_else(|| invalid("encoders need an isoperimetric robot"))?;
            let l_tot = iso.layout().l_tot();
            let r: DVector<f64> = iso.roller_positions(truth)?;
            MeasurementSet::Encoder(r.iter().map(|&v| (v + noise()).clamp(0.0, l_tot)).collect())
        }
    })
}
