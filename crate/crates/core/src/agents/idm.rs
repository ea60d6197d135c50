//! Intelligent Driver Model and its aggressiveness knob.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Hard deceleration floor for every IDM output, m/s^2.
pub const EMERGENCY_DECEL: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired speed v0, m/s.
    pub desired_speed: f64,
    /// Desired time headway, s.
    pub time_headway: f64,
    /// Jam distance s0, m.
    pub min_spacing: f64,
    /// Maximum acceleration a, m/s^2.
    pub max_accel: f64,
    /// Comfortable deceleration b, m/s^2.
    pub comfort_decel: f64,
    /// Free-road exponent.
    pub exponent: f64,
    /// Aggressiveness in [0, 1]. Besides the interpolated IDM parameters it
    /// shortens the gap an agent accepts before leaving a stop sign.
    pub aggressiveness: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 15.0,
            time_headway: 1.5,
            min_spacing: 2.0,
            max_accel: 1.5,
            comfort_decel: 2.0,
            exponent: 4.0,
            aggressiveness: 0.0,
        }
    }
}

// Headway, jam distance, acceleration and deceleration at aggressiveness 1.
const AGGRESSIVE_HEADWAY: f64 = 0.5;
const AGGRESSIVE_SPACING: f64 = 0.5;
const AGGRESSIVE_ACCEL: f64 = 3.0;
const AGGRESSIVE_DECEL: f64 = 4.0;

const AGGRESSIVE_SPEED_GAIN: f64 = 0.3;

/// Clearance an agent needs around a stop line before proceeding: a fixed
/// radius plus the distance conflicting traffic covers in a time gap, both
/// shrinking with aggressiveness.
const STOP_CLEAR_RADIUS: f64 = 15.0;
const STOP_CLEAR_TIME: f64 = 3.0;
const STOP_CLEAR_SHRINK: f64 = 0.8;

impl IdmParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("desired_speed", self.desired_speed),
            ("time_headway", self.time_headway),
            ("min_spacing", self.min_spacing),
            ("max_accel", self.max_accel),
            ("comfort_decel", self.comfort_decel),
            ("exponent", self.exponent),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::Invalid(format!("IDM {name} must be > 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.aggressiveness) {
            return Err(ModelError::Invalid(format!(
                "IDM aggressiveness must lie in [0, 1], got {}",
                self.aggressiveness
            )));
        }
        Ok(())
    }

    pub fn stop_clear_radius(&self) -> f64 {
        STOP_CLEAR_RADIUS * (1.0 - STOP_CLEAR_SHRINK * self.aggressiveness)
    }

    pub fn stop_clear_time(&self) -> f64 {
        STOP_CLEAR_TIME * (1.0 - STOP_CLEAR_SHRINK * self.aggressiveness)
    }
}

/// The vehicle (real or virtual) directly ahead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    /// Bumper-to-bumper gap, m.
    pub gap: f64,
    /// Own speed minus leader speed, m/s.
    pub approach_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmAccel {
    pub accel: f64,
    /// Gap was non-positive and the emergency floor was applied.
    pub emergency: bool,
}

pub fn idm_accel(p: &IdmParams, speed: f64, leader: Option<Leader>) -> IdmAccel {
    let free = 1.0 - (speed / p.desired_speed).powf(p.exponent);
    let raw = match leader {
        None => p.max_accel * free,
        Some(l) if l.gap <= 0.0 => {
            return IdmAccel {
                accel: -EMERGENCY_DECEL,
                emergency: true,
            }
        }
        Some(l) => {
            let dyn_term = speed * p.time_headway
                + speed * l.approach_rate / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
            let desired_gap = p.min_spacing + dyn_term.max(0.0);
            p.max_accel * (free - (desired_gap / l.gap).powi(2))
        }
    };
    IdmAccel {
        accel: raw.clamp(-EMERGENCY_DECEL, p.max_accel),
        emergency: false,
    }
}

/// Moves the headway, jam distance, acceleration and deceleration linearly
/// toward the aggressive preset and scales the desired speed by `1 + 0.3 λ`.
pub fn apply_aggressiveness(p: &IdmParams, lambda: f64) -> Result<IdmParams, ModelError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ModelError::Invalid(format!(
            "aggressiveness must lie in [0, 1], got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(*p);
    }
    let lerp = |from: f64, to: f64| from + lambda * (to - from);
    Ok(IdmParams {
        desired_speed: p.desired_speed * (1.0 + AGGRESSIVE_SPEED_GAIN * lambda),
        time_headway: lerp(p.time_headway, AGGRESSIVE_HEADWAY),
        min_spacing: lerp(p.min_spacing, AGGRESSIVE_SPACING),
        max_accel: lerp(p.max_accel, AGGRESSIVE_ACCEL),
        comfort_decel: lerp(p.comfort_decel, AGGRESSIVE_DECEL),
        exponent: p.exponent,
        aggressiveness: lambda,
    })
}
