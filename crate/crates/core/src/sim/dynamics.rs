//! Kinematic bicycle integrated with classic RK4 under piecewise-constant
//! commands.

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::geometry::Vec2;
use crate::model::{AgentState, Command};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicModel {
    pub wheelbase: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_rate_min: f64,
    pub steer_rate_max: f64,
    pub steer_max: f64,
    pub speed_max: f64,
}

impl Default for KinematicModel {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            accel_min: -8.0,
            accel_max: 4.0,
            steer_rate_min: -1.0,
            steer_rate_max: 1.0,
            steer_max: 0.6,
            speed_max: 40.0,
        }
    }
}

impl KinematicModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.wheelbase.is_nan() || self.wheelbase <= 0.0 {
            return Err("wheelbase must be > 0".into());
        }
        if !(self.accel_min < 0.0 && self.accel_max > 0.0) {
            return Err("acceleration bounds must satisfy a_min < 0 < a_max".into());
        }
        if self.steer_rate_min.is_nan() || self.steer_rate_max.is_nan() || self.steer_rate_min >= self.steer_rate_max {
            return Err("steering-rate bounds are inverted".into());
        }
        if !(self.steer_max > 0.0 && self.speed_max > 0.0) {
            return Err("steering and speed limits must be > 0".into());
        }
        Ok(())
    }
}

const MAX_TURN_PER_SUBSTEP: f64 = 0.02;
const MAX_SUBSTEPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: AgentState,
    /// The requested command was outside the model bounds and got clipped.
    pub command_clamped: bool,
    /// The command actually integrated, after bound and saturation handling.
    pub applied: Command,
}

/// Advances one agent by `dt` seconds.
///
/// Acceleration that would drive the speed below zero (or above `speed_max`)
/// within the step is reduced so the limit is reached exactly at the end of
/// the step; steering rate is handled the same way against `steer_max`.
pub fn step_dynamics(
    s: &AgentState,
    u: &Command,
    dt: f64,
    m: &KinematicModel,
) -> Result<StepOutcome, SimError> {
    if !s.is_finite() {
        return Err(SimError::NonFinite("state"));
    }
    if !(u.accel.is_finite() && u.steering_rate.is_finite()) {
        return Err(SimError::NonFinite("command"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SimError::NonFinite("timestep"));
    }
    let accel = u.accel.clamp(m.accel_min, m.accel_max);
    let rate = u.steering_rate.clamp(m.steer_rate_min, m.steer_rate_max);
    let command_clamped = accel != u.accel || rate != u.steering_rate;

    let speed0 = s.speed.clamp(0.0, m.speed_max);
    let steer0 = s.steering.clamp(-m.steer_max, m.steer_max);
    let mut a = accel;
    let mut speed_target = None;
    if speed0 + a * dt < 0.0 {
        a = -speed0 / dt;
        speed_target = Some(0.0);
    } else if speed0 + a * dt > m.speed_max {
        a = (m.speed_max - speed0) / dt;
        speed_target = Some(m.speed_max);
    }
    let mut w = rate;
    let mut steer_target = None;
    if steer0 + w * dt > m.steer_max {
        w = (m.steer_max - steer0) / dt;
        steer_target = Some(m.steer_max);
    } else if steer0 + w * dt < -m.steer_max {
        w = (-m.steer_max - steer0) / dt;
        steer_target = Some(-m.steer_max);
    }

    // Sub-steps keep the heading change per RK4 stage small on tight turns.
    let v_hi = speed0.max(speed0 + a * dt);
    let d_hi = steer0.abs().max((steer0 + w * dt).abs());
    let turn = v_hi * d_hi.tan() / m.wheelbase * dt;
    let n = ((turn / MAX_TURN_PER_SUBSTEP).ceil() as usize).clamp(1, MAX_SUBSTEPS);
    let h = dt / n as f64;

    let inv_l = 1.0 / m.wheelbase;
    let deriv = |x: &[f64; 5]| -> [f64; 5] {
        let (sin, cos) = x[2].sin_cos();
        [x[3] * cos, x[3] * sin, x[3] * x[4].tan() * inv_l, a, w]
    };
    let add = |x: &[f64; 5], k: &[f64; 5], h: f64| -> [f64; 5] {
        std::array::from_fn(|i| x[i] + h * k[i])
    };
    let mut x1 = [s.position.x, s.position.y, s.heading, speed0, steer0];
    for _ in 0..n {
        let k1 = deriv(&x1);
        let k2 = deriv(&add(&x1, &k1, 0.5 * h));
        let k3 = deriv(&add(&x1, &k2, 0.5 * h));
        let k4 = deriv(&add(&x1, &k3, h));
        x1 = std::array::from_fn(|i| x1[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }

    let state = AgentState {
        position: Vec2::new(x1[0], x1[1]),
        heading: x1[2],
        speed: speed_target.unwrap_or(x1[3]).clamp(0.0, m.speed_max),
        steering: steer_target.unwrap_or(x1[4]).clamp(-m.steer_max, m.steer_max),
        footprint: s.footprint,
    };
    if !state.is_finite() {
        return Err(SimError::NonFinite("integrated state"));
    }
    Ok(StepOutcome {
        state,
        command_clamped,
        applied: Command {
            accel: a,
            steering_rate: w,
        },
    })
}
