//! Scenario inputs and episode logs.
//!
//! Native scenario (`cfmargin_scenario_v1`), one record per line:
//!
//! ```text
//! version=cfmargin_scenario_v1
//! scenario name=N duration=S timestep=S seed=U ego=AGENT_ID
//! lanelet id=U width=M successors=U,U centerline=X:Y;X:Y
//! signal id=U kind=stop_sign|traffic_light lanelet=U s=M [offset=S phases=green:S;amber:S;red:S]
//! agent id=ID x= y= heading= speed= steering= length= width= route=U,U policy=NAME [policy fields] [model fields]
//! ```
//!
//! IDM policy fields: `v0 headway s0 accel decel exponent aggressiveness`.
//! Replay: `commands=A:W;...`. BestResponse: `segment_steps=N segments=A:W;...`.
//! Model fields: `wheelbase a_min a_max w_min w_max delta_max v_max`.
//! Omitted policy and model fields take their defaults.
//!
//! Episode log (`cfmargin_episode_v1`): the header records
//!
//! ```text
//! version=cfmargin_episode_v1
//! episode id=ID dt=S horizon=K ego=AGENT_ID [truncation=REASON requested_horizon=K]
//! ```
//!
//! then `lanelet`/`signal` records, one `agent` record per agent (no state
//! fields), and for every step `k` a `step k= signals=S,S` record followed by
//! one `state k= agent=ID x= y= heading= speed= steering=` record per agent.
//!
//! Floats are written with 9 significant digits.

mod commonroad;
mod episode;
mod native;
pub mod text;

use serde::{Deserialize, Serialize};

pub use commonroad::parse_commonroad;
pub use episode::{canonicalize_episode, parse_episode, write_episode};
pub use native::{parse_native, write_scenario};

use crate::agents::PolicySpec;
use crate::error::{ModelError, ParseError};
use crate::model::{AgentState, LaneNetwork, LaneletId};
use crate::sim::KinematicModel;

pub const SCENARIO_VERSION: &str = "cfmargin_scenario_v1";
pub const EPISODE_VERSION: &str = "cfmargin_episode_v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAgent {
    pub id: String,
    pub initial: AgentState,
    pub route: Vec<LaneletId>,
    pub model: KinematicModel,
    pub policy: PolicySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    pub map: LaneNetwork,
    pub agents: Vec<ScenarioAgent>,
    pub ego: usize,
    /// Seconds.
    pub duration: f64,
    pub timestep: f64,
    pub seed: u64,
}

impl ScenarioFile {
    pub fn horizon_steps(&self) -> usize {
        (self.duration / self.timestep).round() as usize
    }

    pub fn validate(&self) -> Result<(), ParseError> {
        let sem = |element: String, source: ModelError| ParseError::Semantic { element, source };
        let invalid = |m: &str| ModelError::Invalid(m.to_string());
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(sem("scenario".into(), invalid("duration must be > 0")));
        }
        if !(self.timestep > 0.0 && self.timestep.is_finite()) {
            return Err(sem("scenario".into(), invalid("timestep must be > 0")));
        }
        self.map.validate().map_err(|e| sem("map".into(), e))?;
        if self.agents.is_empty() {
            return Err(sem("scenario".into(), invalid("at least one agent required")));
        }
        if self.ego >= self.agents.len() {
            return Err(sem("scenario".into(), invalid("ego does not name an agent")));
        }
        for (i, a) in self.agents.iter().enumerate() {
            let element = format!("agent {}", a.id);
            if self.agents[..i].iter().any(|b| b.id == a.id) {
                return Err(sem(element, invalid("duplicate agent id")));
            }
            if a.id.is_empty() {
                return Err(sem(element, invalid("empty agent id")));
            }
            self.map.route(&a.route).map_err(|e| sem(element.clone(), e))?;
            a.model.validate().map_err(|m| sem(element.clone(), ModelError::Invalid(m)))?;
            a.policy.validate().map_err(|e| sem(element.clone(), e))?;
            let s = &a.initial;
            if !s.is_finite() || s.speed < 0.0 {
                return Err(sem(element, invalid("initial state must be finite with speed >= 0")));
            }
            if !(s.footprint.length > 0.0 && s.footprint.width > 0.0) {
                return Err(sem(element, invalid("footprint dimensions must be > 0")));
            }
            if s.steering.abs() > a.model.steer_max {
                return Err(sem(element, invalid("|steering| exceeds the model limit")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioFormat {
    Native,
    CommonRoadXml,
}

impl std::str::FromStr for ScenarioFormat {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "native" => Ok(ScenarioFormat::Native),
            "commonroad" | "commonroad-xml" | "commonroad-xml-subset" | "xml" => Ok(ScenarioFormat::CommonRoadXml),
            _ => Err(ModelError::UnknownName {
                what: "scenario format",
                name: s.to_string(),
            }),
        }
    }
}

/// Parsed scenario plus notes about input that was skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub scenario: ScenarioFile,
    pub warnings: Vec<String>,
}

pub fn parse_scenario_with_warnings(bytes: &[u8], format: ScenarioFormat) -> Result<Parsed, ParseError> {
    match format {
        ScenarioFormat::Native => parse_native(bytes).map(|scenario| Parsed {
            scenario,
            warnings: vec![],
        }),
        ScenarioFormat::CommonRoadXml => parse_commonroad(bytes),
    }
}

pub fn parse_scenario(bytes: &[u8], format: ScenarioFormat) -> Result<ScenarioFile, ParseError> {
    parse_scenario_with_warnings(bytes, format).map(|p| p.scenario)
}
