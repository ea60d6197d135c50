use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::idm::{idm_accel, IdmParams, Leader};
use crate::counterfactual::{DelayFilter, FilterChain, RangeFilter};
use crate::error::ModelError;
use crate::geometry::{wrap_angle, Vec2};
use crate::model::{AgentState, Command, Footprint, Route, SignalId, SignalKind, SignalState};
use crate::sim::{KinematicModel, Observation};

/// Observation delay of the `IDMLatency2` variant, s.
pub const LATENCY2_DELAY: f64 = 0.2;
/// Perception range of the `IDMShortsighted10` variant, m.
pub const SHORTSIGHTED_RANGE: f64 = 10.0;

const PURSUIT_MIN_LOOKAHEAD: f64 = 5.0;
const PURSUIT_LOOKAHEAD_TIME: f64 = 1.0;
/// Extra lateral slack when deciding whether another agent is in our lane.
const CORRIDOR_MARGIN: f64 = 0.2;
/// Minimum time spent at standstill in front of a stop sign, s.
const STOP_SIGN_DWELL: f64 = 0.5;
const STOPPED_SPEED: f64 = 0.3;
/// Agents slower than this are ignored by the stop-sign clearance check.
const CLEARANCE_MIN_SPEED: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyError(pub String);

impl fmt::Display for PolicyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Maps observations to commands. Implementations keep whatever memory they
/// need; one instance drives one agent for one run.
pub trait Policy: Send {
    fn act(&mut self, obs: &Observation) -> Result<Command, PolicyError>;
}

/// Static information a policy may use about the agent it drives.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub index: usize,
    pub route: Arc<Route>,
    pub footprint: Footprint,
    pub model: KinematicModel,
    pub dt: f64,
}

/// Piecewise-constant command plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitivePlan {
    pub segments: Vec<Command>,
    pub segment_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicySpec {
    IdmAgent(IdmParams),
    IdmLatency2(IdmParams),
    IdmShortsighted10(IdmParams),
    /// Plays back a command sequence, idling once it runs out.
    Replay(Vec<Command>),
    BestResponse(PrimitivePlan),
}

impl PolicySpec {
    pub fn name(&self) -> PolicyName {
        match self {
            PolicySpec::IdmAgent(_) => PolicyName::IdmAgent,
            PolicySpec::IdmLatency2(_) => PolicyName::IdmLatency2,
            PolicySpec::IdmShortsighted10(_) => PolicyName::IdmShortsighted10,
            PolicySpec::Replay(_) => PolicyName::Replay,
            PolicySpec::BestResponse(_) => PolicyName::BestResponse,
        }
    }

    pub fn idm_params(&self) -> Option<&IdmParams> {
        match self {
            PolicySpec::IdmAgent(p) | PolicySpec::IdmLatency2(p) | PolicySpec::IdmShortsighted10(p) => Some(p),
            _ => None,
        }
    }

    /// Same policy family with different IDM parameters; non-IDM policies are
    /// returned unchanged.
    pub fn with_idm_params(&self, p: IdmParams) -> PolicySpec {
        match self {
            PolicySpec::IdmAgent(_) => PolicySpec::IdmAgent(p),
            PolicySpec::IdmLatency2(_) => PolicySpec::IdmLatency2(p),
            PolicySpec::IdmShortsighted10(_) => PolicySpec::IdmShortsighted10(p),
            other => other.clone(),
        }
    }

    /// The IDM family member `name` with these parameters.
    pub fn idm_variant(name: PolicyName, p: IdmParams) -> Result<PolicySpec, ModelError> {
        match name {
            PolicyName::IdmAgent => Ok(PolicySpec::IdmAgent(p)),
            PolicyName::IdmLatency2 => Ok(PolicySpec::IdmLatency2(p)),
            PolicyName::IdmShortsighted10 => Ok(PolicySpec::IdmShortsighted10(p)),
            other => Err(ModelError::Invalid(format!("{other} is not an IDM policy"))),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            PolicySpec::BestResponse(plan) if plan.segment_steps == 0 || plan.segments.is_empty() => {
                Err(ModelError::Invalid("best-response plan needs segments".into()))
            }
            _ => self.idm_params().map_or(Ok(()), IdmParams::validate),
        }
    }

    pub fn instantiate(&self, ctx: &AgentContext) -> Box<dyn Policy> {
        match self {
            PolicySpec::IdmAgent(p) => Box::new(IdmPolicy::new(*p, ctx.clone())),
            PolicySpec::IdmLatency2(p) => Box::new(FilterChain::new(
                Box::new(IdmPolicy::new(*p, ctx.clone())),
                vec![Box::new(DelayFilter::from_seconds(LATENCY2_DELAY, ctx.dt))],
            )),
            PolicySpec::IdmShortsighted10(p) => Box::new(FilterChain::new(
                Box::new(IdmPolicy::new(*p, ctx.clone())),
                vec![Box::new(RangeFilter::new(SHORTSIGHTED_RANGE))],
            )),
            PolicySpec::Replay(cmds) => Box::new(ReplayPolicy::new(cmds.clone())),
            PolicySpec::BestResponse(plan) => Box::new(PrimitivePolicy::new(plan.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyName {
    IdmAgent,
    IdmLatency2,
    IdmShortsighted10,
    Replay,
    BestResponse,
}

impl PolicyName {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::IdmAgent => "IDMAgent",
            PolicyName::IdmLatency2 => "IDMLatency2",
            PolicyName::IdmShortsighted10 => "IDMShortsighted10",
            PolicyName::Replay => "Replay",
            PolicyName::BestResponse => "BestResponse",
        }
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyName {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "idmagent" => Ok(PolicyName::IdmAgent),
            "idmlatency2" => Ok(PolicyName::IdmLatency2),
            "idmshortsighted10" => Ok(PolicyName::IdmShortsighted10),
            "replay" => Ok(PolicyName::Replay),
            "bestresponse" => Ok(PolicyName::BestResponse),
            _ => Err(ModelError::UnknownName {
                what: "policy",
                name: s.to_string(),
            }),
        }
    }
}

/// Commands that reproduce a recorded trajectory under the same dynamics.
pub fn replay_commands(trajectory: &[AgentState], dt: f64) -> Vec<Command> {
    trajectory
        .windows(2)
        .map(|w| Command {
            accel: (w[1].speed - w[0].speed) / dt,
            steering_rate: (w[1].steering - w[0].steering) / dt,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ReplayPolicy {
    commands: Vec<Command>,
    step: usize,
}

impl ReplayPolicy {
    pub fn new(commands: Vec<Command>) -> Self {
        Self { commands, step: 0 }
    }
}

impl Policy for ReplayPolicy {
    fn act(&mut self, _obs: &Observation) -> Result<Command, PolicyError> {
        let cmd = self.commands.get(self.step).copied().unwrap_or(Command::IDLE);
        self.step += 1;
        Ok(cmd)
    }
}

#[derive(Debug, Clone)]
pub struct PrimitivePolicy {
    plan: PrimitivePlan,
    step: usize,
}

impl PrimitivePolicy {
    pub fn new(plan: PrimitivePlan) -> Self {
        Self { plan, step: 0 }
    }
}

impl Policy for PrimitivePolicy {
    fn act(&mut self, _obs: &Observation) -> Result<Command, PolicyError> {
        let seg = (self.step / self.plan.segment_steps.max(1)).min(self.plan.segments.len() - 1);
        self.step += 1;
        Ok(self.plan.segments[seg])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SignalMemory {
    /// Waiting at a stop sign; accumulated standstill time.
    Stopping(f64),
    /// Free to go through this stop line.
    Cleared,
    /// Decided to run an amber light.
    Committed,
}

/// Route-following IDM: longitudinal IDM against the closest in-lane agent
/// or active stop line, lateral pure pursuit of the route centerline.
#[derive(Debug, Clone)]
pub struct IdmPolicy {
    params: IdmParams,
    ctx: AgentContext,
    progress_hint: Option<f64>,
    signal_memory: Vec<(SignalId, SignalMemory)>,
    /// Wheel angle integrated from our own commands. Tracking our own
    /// actuator keeps the steering loop stable when observations are stale.
    steering: Option<f64>,
}

impl IdmPolicy {
    pub fn new(params: IdmParams, ctx: AgentContext) -> Self {
        Self {
            params,
            ctx,
            progress_hint: None,
            signal_memory: Vec::new(),
            steering: None,
        }
    }

    fn memory(&mut self, id: SignalId) -> Option<&mut SignalMemory> {
        self.signal_memory.iter_mut().find(|(s, _)| *s == id).map(|(_, m)| m)
    }

    fn set_memory(&mut self, id: SignalId, m: SignalMemory) {
        match self.memory(id) {
            Some(slot) => *slot = m,
            None => self.signal_memory.push((id, m)),
        }
    }

    fn own_progress(&mut self, own: &AgentState) -> f64 {
        let path = &self.ctx.route.path;
        let proj = match self.progress_hint {
            Some(s) => {
                let reach = 10.0 + own.speed;
                path.project_near(own.position, s - reach, s + reach)
            }
            None => path.project(own.position),
        };
        self.progress_hint = Some(proj.s);
        proj.s
    }

    /// Closest agent inside our lane corridor ahead, as an IDM leader.
    fn lane_leader(&self, obs: &Observation, s_own: f64) -> Option<Leader> {
        let path = &self.ctx.route.path;
        let own = &obs.own;
        let half_len = 0.5 * self.ctx.footprint.length;
        let half_wid = 0.5 * self.ctx.footprint.width;
        let fwd = Vec2::from_angle(own.heading);
        let mut best: Option<Leader> = None;
        for other in &obs.nearby {
            let st = &other.state;
            if (st.position - own.position).dot(fwd) < -half_len {
                continue;
            }
            let proj = path.project_near(st.position, s_own, s_own + other.distance + 10.0);
            if proj.s <= s_own {
                continue;
            }
            let rel = wrap_angle(st.heading - path.heading_at(proj.s));
            let (sin, cos) = rel.sin_cos();
            let (ol, ow) = (0.5 * st.footprint.length, 0.5 * st.footprint.width);
            let half_along = ol * cos.abs() + ow * sin.abs();
            let half_perp = ol * sin.abs() + ow * cos.abs();
            if proj.lateral.abs() >= half_wid + half_perp + CORRIDOR_MARGIN {
                continue;
            }
            let gap = proj.s - s_own - half_len - half_along;
            let lead_speed = st.speed * cos;
            let cand = Leader {
                gap,
                approach_rate: own.speed - lead_speed,
            };
            if best.is_none_or(|b| cand.gap < b.gap) {
                best = Some(cand);
            }
        }
        best
    }

    fn in_corridor(&self, p: Vec2, s_own: f64, reach: f64) -> bool {
        let proj = self.ctx.route.path.project_near(p, s_own - reach, s_own + reach);
        (proj.s - s_own).abs() < reach && proj.lateral.abs() < 0.5 * self.ctx.footprint.width + 1.5
    }

    fn intersection_clear(&self, obs: &Observation, stop_point: Vec2, s_own: f64) -> bool {
        let radius = self.params.stop_clear_radius();
        let gap_time = self.params.stop_clear_time();
        obs.nearby.iter().all(|o| {
            let st = &o.state;
            if st.speed < CLEARANCE_MIN_SPEED {
                return true;
            }
            if self.in_corridor(st.position, s_own, o.distance + 5.0) {
                return true;
            }
            let to_line = stop_point - st.position;
            let approaching = st.velocity().dot(to_line) > 0.0;
            !(approaching && to_line.norm() < radius + st.speed * gap_time)
        })
    }

    /// Virtual stationary leaders from stop lines that currently bind.
    fn signal_leaders(&mut self, obs: &Observation, s_own: f64) -> Vec<Leader> {
        let half_len = 0.5 * self.ctx.footprint.length;
        let v = obs.own.speed;
        let mut leaders = Vec::new();
        for sig in &obs.signals {
            let gap = sig.distance - half_len;
            if gap < 0.0 {
                continue;
            }
            let stop = Leader {
                gap,
                approach_rate: v,
            };
            let mem = self.memory(sig.id).copied();
            match sig.kind {
                SignalKind::TrafficLight => match (sig.state, mem) {
                    (_, Some(SignalMemory::Committed)) | (SignalState::Green, _) => {}
                    (SignalState::Amber, _) => {
                        let stopping = v * v / (2.0 * self.params.comfort_decel);
                        if stopping + 0.5 * self.params.min_spacing < gap {
                            leaders.push(stop);
                        } else {
                            self.set_memory(sig.id, SignalMemory::Committed);
                        }
                    }
                    _ => leaders.push(stop),
                },
                SignalKind::StopSign => {
                    let waited = match mem {
                        Some(SignalMemory::Cleared) | Some(SignalMemory::Committed) => continue,
                        Some(SignalMemory::Stopping(t)) => t,
                        None => 0.0,
                    };
                    let at_line = v < STOPPED_SPEED && gap < self.params.min_spacing + 2.5;
                    let waited = if at_line { waited + self.ctx.dt } else { 0.0 };
                    if waited >= STOP_SIGN_DWELL - 1e-9 && self.intersection_clear(obs, sig.position, s_own) {
                        self.set_memory(sig.id, SignalMemory::Cleared);
                    } else {
                        self.set_memory(sig.id, SignalMemory::Stopping(waited));
                        leaders.push(stop);
                    }
                }
            }
        }
        leaders
    }

    fn pursuit_steering_rate(&mut self, own: &AgentState, s_own: f64) -> f64 {
        let m = &self.ctx.model;
        let lookahead = PURSUIT_MIN_LOOKAHEAD.max(PURSUIT_LOOKAHEAD_TIME * own.speed);
        let target = self.ctx.route.path.point_at(s_own + lookahead);
        let d = target - own.position;
        let dist = d.norm().max(1e-6);
        let alpha = wrap_angle(d.angle() - own.heading);
        let desired = (2.0 * m.wheelbase * alpha.sin() / dist)
            .atan()
            .clamp(-m.steer_max, m.steer_max);
        let current = *self.steering.get_or_insert(own.steering);
        let rate = ((desired - current) / self.ctx.dt).clamp(m.steer_rate_min, m.steer_rate_max);
        self.steering = Some((current + rate * self.ctx.dt).clamp(-m.steer_max, m.steer_max));
        rate
    }
}

impl Policy for IdmPolicy {
    fn act(&mut self, obs: &Observation) -> Result<Command, PolicyError> {
        if self.ctx.route.lanelets.is_empty() {
            return Err(PolicyError("empty route".into()));
        }
        let own = obs.own;
        let s_own = self.own_progress(&own);
        let mut accel = idm_accel(&self.params, own.speed, None).accel;
        let leaders = self
            .lane_leader(obs, s_own)
            .into_iter()
            .chain(self.signal_leaders(obs, s_own));
        for l in leaders {
            accel = accel.min(idm_accel(&self.params, own.speed, Some(l)).accel);
        }
        if !accel.is_finite() {
            return Err(PolicyError(format!("non-finite acceleration at step {}", obs.step)));
        }
        Ok(Command {
            accel,
            steering_rate: self.pursuit_steering_rate(&own, s_own),
        })
    }
}

/// One decision of a live policy instance. The instance is the memory.
pub fn policy_step(policy: &mut dyn Policy, obs: &Observation) -> Result<Command, PolicyError> {
    policy.act(obs)
}
