//! Injury severity of a contact: nested logistic curves in closing speed.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::sim::{ContactEvent, ImpactClass};

/// Per-component tolerance of [`lex_compare`].
pub const LEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SeverityProfile {
    pub p_fatal: f64,
    pub p_mais3plus: f64,
    pub p_mais2plus: f64,
}

impl SeverityProfile {
    pub const ZERO: SeverityProfile = SeverityProfile {
        p_fatal: 0.0,
        p_mais3plus: 0.0,
        p_mais2plus: 0.0,
    };

    pub fn as_array(&self) -> [f64; 3] {
        [self.p_fatal, self.p_mais3plus, self.p_mais2plus]
    }

    pub fn is_nested(&self) -> bool {
        self.p_fatal <= self.p_mais3plus && self.p_mais3plus <= self.p_mais2plus
    }

    /// Component-wise mean; the zero profile for an empty input.
    pub fn mean<'a>(profiles: impl IntoIterator<Item = &'a SeverityProfile>) -> SeverityProfile {
        let (mut sum, mut n) = ([0.0; 3], 0usize);
        for p in profiles {
            for (s, v) in sum.iter_mut().zip(p.as_array()) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return SeverityProfile::ZERO;
        }
        let d = n as f64;
        SeverityProfile {
            p_fatal: sum[0] / d,
            p_mais3plus: sum[1] / d,
            p_mais2plus: sum[2] / d,
        }
    }
}

/// Lexicographic order on (fatal, MAIS3+, MAIS2+); `Less` means safer.
/// Components within [`LEX_TOLERANCE`] count as equal.
pub fn lex_compare(a: &SeverityProfile, b: &SeverityProfile) -> Ordering {
    for (x, y) in a.as_array().into_iter().zip(b.as_array()) {
        if (x - y).abs() > LEX_TOLERANCE {
            return x.partial_cmp(&y).unwrap_or(Ordering::Equal);
        }
    }
    Ordering::Equal
}

/// `logistic(α_level + β Δv + modifier(class))` for each level. A shared
/// slope and ordered intercepts keep the levels nested for every input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeverityModel {
    pub alpha_fatal: f64,
    pub alpha_mais3: f64,
    pub alpha_mais2: f64,
    /// Logit slope per m/s of closing speed.
    pub beta: f64,
    pub front: f64,
    pub side: f64,
    pub rear: f64,
}

impl Default for SeverityModel {
    /// p < 1% at Δv = 0 for every class and MAIS2+ ≈ 0.5 at 17 m/s frontal.
    fn default() -> Self {
        Self {
            alpha_fatal: -7.6,
            alpha_mais3: -6.4,
            alpha_mais2: -5.4,
            beta: 0.32,
            front: 0.0,
            side: 0.6,
            rear: -0.4,
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SeverityModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [
            self.alpha_fatal,
            self.alpha_mais3,
            self.alpha_mais2,
            self.beta,
            self.front,
            self.side,
            self.rear,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Invalid("severity coefficients must be finite".into()));
        }
        if !(self.alpha_fatal <= self.alpha_mais3 && self.alpha_mais3 <= self.alpha_mais2) {
            return Err(ModelError::Invalid(
                "severity intercepts must satisfy fatal <= mais3 <= mais2".into(),
            ));
        }
        if self.beta < 0.0 {
            return Err(ModelError::Invalid("severity slope must be >= 0".into()));
        }
        Ok(())
    }

    /// Parses a JSON object with the field names of this struct.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let m: SeverityModel =
            serde_json::from_str(text).map_err(|e| ModelError::Invalid(format!("severity config: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn modifier(&self, class: ImpactClass) -> f64 {
        match class {
            ImpactClass::Front => self.front,
            ImpactClass::Side => self.side,
            ImpactClass::Rear => self.rear,
        }
    }

    /// Logits of (fatal, MAIS3+, MAIS2+).
    pub fn logits(&self, delta_v: f64, class: ImpactClass) -> [f64; 3] {
        let shift = self.beta * delta_v + self.modifier(class);
        [self.alpha_fatal + shift, self.alpha_mais3 + shift, self.alpha_mais2 + shift]
    }

    pub fn profile(&self, delta_v: f64, class: ImpactClass) -> Result<SeverityProfile, ModelError> {
        if !delta_v.is_finite() || delta_v < 0.0 {
            return Err(ModelError::Invalid(format!("closing speed must be finite and >= 0, got {delta_v}")));
        }
        let [f, m3, m2] = self.logits(delta_v, class).map(logistic);
        Ok(SeverityProfile {
            p_fatal: f,
            p_mais3plus: m3,
            p_mais2plus: m2,
        })
    }

    /// Severity for `agent`'s side of the contact, the zero profile if the
    /// agent is not involved.
    pub fn severity_of(&self, c: &ContactEvent, agent: usize) -> Result<SeverityProfile, ModelError> {
        match c.class_for(agent) {
            Some(class) => self.profile(c.closing_speed, class),
            None => Ok(SeverityProfile::ZERO),
        }
    }
}

/// [`SeverityModel::severity_of`] with the default coefficients.
pub fn severity_of(c: &ContactEvent, agent: usize) -> Result<SeverityProfile, ModelError> {
    SeverityModel::default().severity_of(c, agent)
}
