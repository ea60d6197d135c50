//! Domain types shared across the simulator and the risk engine: the lane
//! network, agent states and commands, recorded episodes, ODD datasets and
//! the counterfactual kinds.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::PolicySpec;
use crate::error::ModelError;
use crate::geometry::{Obb, Polyline, Vec2};
use crate::sim::KinematicModel;

pub const DEFAULT_TIMESTEP: f64 = 0.1;

pub type LaneletId = u64;
pub type SignalId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lanelet {
    pub id: LaneletId,
    pub centerline: Vec<Vec2>,
    pub width: f64,
    pub successors: Vec<LaneletId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    StopSign,
    TrafficLight,
}

impl SignalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::StopSign => "stop_sign",
            SignalKind::TrafficLight => "traffic_light",
        }
    }
}

impl FromStr for SignalKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stop_sign" => Ok(SignalKind::StopSign),
            "traffic_light" => Ok(SignalKind::TrafficLight),
            other => Err(ModelError::UnknownName {
                what: "signal kind",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightPhase {
    Green,
    Amber,
    Red,
}

/// What an agent perceives about a signal at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalState {
    Stop,
    Green,
    Amber,
    Red,
}

impl SignalState {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalState::Stop => "stop",
            SignalState::Green => "green",
            SignalState::Amber => "amber",
            SignalState::Red => "red",
        }
    }
}

impl FromStr for SignalState {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stop" => Ok(SignalState::Stop),
            "green" => Ok(SignalState::Green),
            "amber" => Ok(SignalState::Amber),
            "red" => Ok(SignalState::Red),
            other => Err(ModelError::UnknownName {
                what: "signal state",
                name: other.to_string(),
            }),
        }
    }
}

impl From<LightPhase> for SignalState {
    fn from(p: LightPhase) -> Self {
        match p {
            LightPhase::Green => SignalState::Green,
            LightPhase::Amber => SignalState::Amber,
            LightPhase::Red => SignalState::Red,
        }
    }
}

/// Fixed periodic light program: `phases` repeat forever, shifted by `offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub offset: f64,
    pub phases: Vec<(LightPhase, f64)>,
}

impl PhaseSchedule {
    pub fn cycle(&self) -> f64 {
        self.phases.iter().map(|(_, d)| d).sum()
    }

    pub fn phase_at(&self, t: f64) -> LightPhase {
        let cycle = self.cycle();
        let mut tau = (t + self.offset).rem_euclid(cycle);
        for (phase, dur) in &self.phases {
            if tau < *dur {
                return *phase;
            }
            tau -= dur;
        }
        self.phases.last().map(|(p, _)| *p).unwrap_or(LightPhase::Green)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub id: SignalId,
    pub kind: SignalKind,
    pub lanelet: LaneletId,
    /// Stop-line arclength along the lanelet centerline.
    pub position: f64,
    pub schedule: Option<PhaseSchedule>,
}

impl Signal {
    pub fn state_at(&self, t: f64) -> SignalState {
        match (&self.kind, &self.schedule) {
            (SignalKind::StopSign, _) => SignalState::Stop,
            (SignalKind::TrafficLight, Some(s)) => s.phase_at(t).into(),
            (SignalKind::TrafficLight, None) => SignalState::Green,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LaneNetwork {
    pub lanelets: Vec<Lanelet>,
    pub signals: Vec<Signal>,
}

impl LaneNetwork {
    pub fn lanelet(&self, id: LaneletId) -> Option<&Lanelet> {
        self.lanelets.iter().find(|l| l.id == id)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ids: HashSet<LaneletId> = self.lanelets.iter().map(|l| l.id).collect();
        if ids.len() != self.lanelets.len() {
            return Err(ModelError::Invalid("duplicate lanelet id".into()));
        }
        for l in &self.lanelets {
            if l.centerline.len() < 2 || Polyline::new(l.centerline.clone()).is_none() {
                return Err(ModelError::Invalid(format!(
                    "lanelet {}: centerline needs at least 2 distinct points",
                    l.id
                )));
            }
            if l.width.is_nan() || l.width <= 0.0 {
                return Err(ModelError::Invalid(format!("lanelet {}: width must be > 0", l.id)));
            }
            if let Some(s) = l.successors.iter().find(|s| !ids.contains(s)) {
                return Err(ModelError::UnresolvedLanelet(*s));
            }
        }
        let mut sig_ids = HashSet::new();
        for s in &self.signals {
            if !sig_ids.insert(s.id) {
                return Err(ModelError::Invalid(format!("duplicate signal id {}", s.id)));
            }
            let lane = self.lanelet(s.lanelet).ok_or(ModelError::UnresolvedLanelet(s.lanelet))?;
            let len = Polyline::new(lane.centerline.clone()).map(|p| p.length()).unwrap_or(0.0);
            if !(0.0..=len).contains(&s.position) {
                return Err(ModelError::Invalid(format!(
                    "signal {}: stop line at {} outside lanelet {} (length {len:.3})",
                    s.id, s.position, s.lanelet
                )));
            }
            if s.kind == SignalKind::TrafficLight {
                match &s.schedule {
                    Some(sch) if !sch.phases.is_empty() && sch.phases.iter().all(|(_, d)| *d > 0.0) => {}
                    _ => {
                        return Err(ModelError::Invalid(format!(
                            "signal {}: traffic light needs a schedule with positive durations",
                            s.id
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Concatenates the centerlines of a connected lanelet chain and locates
    /// the stop lines that lie on it.
    pub fn route(&self, lanelets: &[LaneletId]) -> Result<Route, ModelError> {
        if lanelets.is_empty() {
            return Err(ModelError::EmptyRoute);
        }
        let mut pts = Vec::new();
        let mut offsets = HashMap::new();
        let mut offset = 0.0;
        for (k, id) in lanelets.iter().enumerate() {
            let lane = self.lanelet(*id).ok_or(ModelError::UnresolvedLanelet(*id))?;
            if k > 0 {
                let prev = self.lanelet(lanelets[k - 1]).expect("checked above");
                if !prev.successors.contains(id) {
                    return Err(ModelError::DisconnectedRoute {
                        from: prev.id,
                        to: *id,
                    });
                }
            }
            let line = Polyline::new(lane.centerline.clone())
                .ok_or_else(|| ModelError::Invalid(format!("lanelet {id}: degenerate centerline")))?;
            offsets.entry(*id).or_insert(offset);
            offset += line.length();
            pts.extend_from_slice(&lane.centerline);
        }
        let path = Polyline::new(pts).ok_or(ModelError::EmptyRoute)?;
        let mut signals: Vec<RouteSignal> = self
            .signals
            .iter()
            .enumerate()
            .filter_map(|(i, sig)| {
                offsets.get(&sig.lanelet).map(|off| RouteSignal {
                    signal: i,
                    s: off + sig.position,
                })
            })
            .collect();
        signals.sort_by(|a, b| a.s.total_cmp(&b.s));
        Ok(Route {
            lanelets: lanelets.to_vec(),
            path,
            signals,
        })
    }
}

/// A stop line located on a route, by index into `LaneNetwork::signals`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteSignal {
    pub signal: usize,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub lanelets: Vec<LaneletId>,
    pub path: Polyline,
    pub signals: Vec<RouteSignal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

impl Footprint {
    pub const CAR: Footprint = Footprint {
        length: 4.5,
        width: 1.8,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub steering: f64,
    pub footprint: Footprint,
}

impl AgentState {
    pub fn obb(&self) -> Obb {
        Obb::new(
            self.position,
            self.heading,
            self.footprint.length,
            self.footprint.width,
        )
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_angle(self.heading) * self.speed
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.heading.is_finite()
            && self.speed.is_finite()
            && self.steering.is_finite()
    }

    /// Largest per-component absolute difference between two states.
    pub fn max_abs_diff(&self, o: &AgentState) -> f64 {
        [
            self.position.x - o.position.x,
            self.position.y - o.position.y,
            self.heading - o.heading,
            self.speed - o.speed,
            self.steering - o.steering,
        ]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub accel: f64,
    pub steering_rate: f64,
}

impl Command {
    pub const IDLE: Command = Command {
        accel: 0.0,
        steering_rate: 0.0,
    };
}

/// Everything needed to re-simulate one agent of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: String,
    pub model: KinematicModel,
    pub route: Vec<LaneletId>,
    pub policy: PolicySpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationReason {
    AllInContact,
    AllOffMap,
    AllInContactOrOffMap,
}

impl TruncationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TruncationReason::AllInContact => "all_in_contact",
            TruncationReason::AllOffMap => "all_off_map",
            TruncationReason::AllInContactOrOffMap => "all_in_contact_or_off_map",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub reason: TruncationReason,
    pub requested_horizon: usize,
}

/// A recorded multi-agent interaction: for every agent, `horizon + 1`
/// states sampled every `dt` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub dt: f64,
    pub horizon: usize,
    pub map: LaneNetwork,
    pub agents: Vec<AgentRecord>,
    /// Index of the vehicle under scrutiny.
    pub ego: usize,
    pub trajectories: Vec<Vec<AgentState>>,
    /// `signal_states[k][j]` is the state of `map.signals[j]` at step `k`.
    pub signal_states: Vec<Vec<SignalState>>,
    pub truncation: Option<Truncation>,
}

impl Episode {
    pub fn initial_states(&self) -> Vec<AgentState> {
        self.trajectories.iter().map(|t| t[0]).collect()
    }

    pub fn agent_index(&self, id: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    /// Mean over agents of the speed at step 0.
    pub fn mean_initial_speed(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().map(|t| t[0].speed).sum::<f64>() / self.trajectories.len() as f64
    }
}

/// One broken episode invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub agent: Option<String>,
    pub step: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.field)?;
        if let Some(a) = &self.agent {
            write!(f, " [agent {a}]")?;
        }
        if let Some(k) = self.step {
            write!(f, " [step {k}]")?;
        }
        write!(f, ": {}", self.message)
    }
}

pub fn validate_episode(e: &Episode) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |agent: Option<&str>, step, field, message: String| {
        out.push(Violation {
            agent: agent.map(str::to_string),
            step,
            field,
            message,
        })
    };
    if e.agents.is_empty() {
        push(None, None, "agents", "episode has no agents".into());
    }
    if !e.dt.is_finite() || e.dt <= 0.0 {
        push(None, None, "dt", format!("timestep must be > 0, got {}", e.dt));
    }
    let mut seen = HashSet::new();
    for a in &e.agents {
        if !seen.insert(a.id.as_str()) {
            push(Some(&a.id), None, "ids unique", format!("duplicate agent id {:?}", a.id));
        }
    }
    if e.ego >= e.agents.len() && !e.agents.is_empty() {
        push(None, None, "ego", format!("ego index {} out of range", e.ego));
    }
    if e.trajectories.len() != e.agents.len() {
        push(
            None,
            None,
            "trajectory count",
            format!("{} trajectories for {} agents", e.trajectories.len(), e.agents.len()),
        );
    }
    for (a, traj) in e.agents.iter().zip(&e.trajectories) {
        if traj.len() != e.horizon + 1 {
            push(
                Some(&a.id),
                None,
                "trajectory length",
                format!("expected {} states, found {}", e.horizon + 1, traj.len()),
            );
        }
        for (k, s) in traj.iter().enumerate() {
            if !s.is_finite() {
                push(Some(&a.id), Some(k), "state", "non-finite state".into());
            }
            if !(s.footprint.length > 0.0 && s.footprint.width > 0.0) {
                push(Some(&a.id), Some(k), "footprint", "dimensions must be > 0".into());
            }
            if s.steering.abs() > a.model.steer_max + 1e-9 {
                push(
                    Some(&a.id),
                    Some(k),
                    "steering",
                    format!("|{}| exceeds limit {}", s.steering, a.model.steer_max),
                );
            }
            if s.speed < 0.0 {
                push(Some(&a.id), Some(k), "speed", format!("negative speed {}", s.speed));
            }
        }
    }
    if e.signal_states.len() != e.horizon + 1 && !e.map.signals.is_empty() {
        push(
            None,
            None,
            "signal states",
            format!("expected {} steps, found {}", e.horizon + 1, e.signal_states.len()),
        );
    }
    out
}

/// A finite set of episodes standing in for an operational design domain.
#[derive(Debug, Clone)]
pub struct OddDataset {
    episodes: Vec<Episode>,
    pub label: Option<String>,
}

impl OddDataset {
    pub fn new(episodes: Vec<Episode>, label: Option<String>) -> Result<Self, ModelError> {
        if episodes.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        Ok(Self { episodes, label })
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn into_episodes(self) -> Vec<Episode> {
        self.episodes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CounterfactualKind {
    Aggressiveness,
    Distraction,
    IllegalPrecedence,
    ImpairedReflexes,
    Unseen,
}

impl CounterfactualKind {
    pub const ALL: [CounterfactualKind; 5] = [
        CounterfactualKind::Aggressiveness,
        CounterfactualKind::Distraction,
        CounterfactualKind::IllegalPrecedence,
        CounterfactualKind::ImpairedReflexes,
        CounterfactualKind::Unseen,
    ];

    /// Upper end of the intensity range. Units: none, s, probability, s, 1/m.
    pub fn max_intensity(self) -> f64 {
        match self {
            CounterfactualKind::Aggressiveness => 1.0,
            CounterfactualKind::Distraction => 5.0,
            CounterfactualKind::IllegalPrecedence => 1.0,
            CounterfactualKind::ImpairedReflexes => 1.0,
            CounterfactualKind::Unseen => 20.0,
        }
    }

    /// Whether realizations consume randomness (and thus need repetitions).
    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            CounterfactualKind::Distraction | CounterfactualKind::IllegalPrecedence
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CounterfactualKind::Aggressiveness => "aggressiveness",
            CounterfactualKind::Distraction => "distraction",
            CounterfactualKind::IllegalPrecedence => "illegal_precedence",
            CounterfactualKind::ImpairedReflexes => "impaired_reflexes",
            CounterfactualKind::Unseen => "unseen",
        }
    }
}

impl fmt::Display for CounterfactualKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CounterfactualKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match norm.as_str() {
            "aggressiveness" => Ok(CounterfactualKind::Aggressiveness),
            "distraction" => Ok(CounterfactualKind::Distraction),
            "illegalprecedence" => Ok(CounterfactualKind::IllegalPrecedence),
            "impairedreflexes" => Ok(CounterfactualKind::ImpairedReflexes),
            "unseen" => Ok(CounterfactualKind::Unseen),
            _ => Err(ModelError::UnknownName {
                what: "counterfactual kind",
                name: s.to_string(),
            }),
        }
    }
}

/// Result of clipping an intensity into its kind's range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampedIntensity {
    pub value: f64,
    pub clipped: bool,
}

pub fn clamp_intensity(kind: CounterfactualKind, gamma: f64) -> Result<ClampedIntensity, ModelError> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(ModelError::NegativeIntensity(gamma));
    }
    let max = kind.max_intensity();
    Ok(if gamma > max {
        ClampedIntensity {
            value: max,
            clipped: true,
        }
    } else {
        ClampedIntensity {
            value: gamma,
            clipped: false,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::IdmParams;
    use proptest::prelude::*;

    fn straight_episode(n_agents: usize, horizon: usize) -> Episode {
        let map = LaneNetwork {
            lanelets: vec![Lanelet {
                id: 1,
                centerline: vec![Vec2::new(0.0, 0.0), Vec2::new(200.0, 0.0)],
                width: 3.5,
                successors: vec![],
            }],
            signals: vec![],
        };
        let agents = (0..n_agents)
            .map(|i| AgentRecord {
                id: format!("a{i}"),
                model: KinematicModel::default(),
                route: vec![1],
                policy: PolicySpec::IdmAgent(IdmParams::default()),
            })
            .collect();
        let trajectories = (0..n_agents)
            .map(|i| {
                (0..=horizon)
                    .map(|k| AgentState {
                        position: Vec2::new(10.0 * i as f64 + k as f64, 0.0),
                        heading: 0.0,
                        speed: 10.0,
                        steering: 0.0,
                        footprint: Footprint::CAR,
                    })
                    .collect()
            })
            .collect();
        Episode {
            id: "e".into(),
            dt: 0.1,
            horizon,
            map,
            agents,
            ego: 0,
            trajectories,
            signal_states: vec![vec![]; horizon + 1],
            truncation: None,
        }
    }

    #[test]
    fn well_formed_episode_has_no_violations() {
        assert!(validate_episode(&straight_episode(2, 10)).is_empty());
    }

    #[test]
    fn short_trajectory_is_reported() {
        let mut e = straight_episode(2, 10);
        e.trajectories[1].pop();
        let v = validate_episode(&e);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "trajectory length");
        assert_eq!(v[0].agent.as_deref(), Some("a1"));
    }

    #[test]
    fn duplicate_id_is_reported() {
        let mut e = straight_episode(2, 10);
        e.agents[1].id = "a0".into();
        let v = validate_episode(&e);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "ids unique");
    }

    #[test]
    fn empty_episode_is_reported() {
        let mut e = straight_episode(0, 3);
        e.trajectories.clear();
        assert!(validate_episode(&e).iter().any(|v| v.field == "agents"));
    }

    #[test]
    fn clamp_examples() {
        let d = clamp_intensity(CounterfactualKind::Distraction, 7.0).unwrap();
        assert_eq!(d.value, 5.0);
        assert!(d.clipped);
        let u = clamp_intensity(CounterfactualKind::Unseen, 20.0).unwrap();
        assert_eq!(u.value, 20.0);
        assert!(!u.clipped);
        assert_eq!(
            clamp_intensity(CounterfactualKind::Aggressiveness, 0.0).unwrap().value,
            0.0
        );
        assert!(clamp_intensity(CounterfactualKind::Unseen, -0.1).is_err());
    }

    #[test]
    fn intensity_ranges() {
        let ranges: Vec<f64> = CounterfactualKind::ALL.iter().map(|k| k.max_intensity()).collect();
        assert_eq!(ranges, vec![1.0, 5.0, 1.0, 1.0, 20.0]);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in CounterfactualKind::ALL {
            assert_eq!(k.as_str().parse::<CounterfactualKind>().unwrap(), k);
        }
        assert_eq!(
            "IllegalPrecedence".parse::<CounterfactualKind>().unwrap(),
            CounterfactualKind::IllegalPrecedence
        );
    }

    #[test]
    fn light_schedule_cycles() {
        let s = PhaseSchedule {
            offset: 1.0,
            phases: vec![(LightPhase::Green, 5.0), (LightPhase::Amber, 2.0), (LightPhase::Red, 3.0)],
        };
        assert_eq!(s.phase_at(0.0), LightPhase::Green);
        assert_eq!(s.phase_at(4.5), LightPhase::Amber);
        assert_eq!(s.phase_at(6.5), LightPhase::Red);
        assert_eq!(s.phase_at(9.5), LightPhase::Green);
    }

    #[test]
    fn route_locates_signals_and_rejects_gaps() {
        let map = LaneNetwork {
            lanelets: vec![
                Lanelet {
                    id: 1,
                    centerline: vec![Vec2::new(0.0, 0.0), Vec2::new(50.0, 0.0)],
                    width: 3.5,
                    successors: vec![2],
                },
                Lanelet {
                    id: 2,
                    centerline: vec![Vec2::new(50.0, 0.0), Vec2::new(100.0, 0.0)],
                    width: 3.5,
                    successors: vec![],
                },
            ],
            signals: vec![Signal {
                id: 9,
                kind: SignalKind::StopSign,
                lanelet: 2,
                position: 10.0,
                schedule: None,
            }],
        };
        map.validate().unwrap();
        let r = map.route(&[1, 2]).unwrap();
        assert_eq!(r.path.length(), 100.0);
        assert_eq!(r.signals, vec![RouteSignal { signal: 0, s: 60.0 }]);
        assert!(matches!(
            map.route(&[2, 1]),
            Err(ModelError::DisconnectedRoute { .. })
        ));
        assert!(matches!(map.route(&[3]), Err(ModelError::UnresolvedLanelet(3))));
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent(k in 0usize..5, g in 0.0f64..100.0) {
            let kind = CounterfactualKind::ALL[k];
            let once = clamp_intensity(kind, g).unwrap().value;
            let twice = clamp_intensity(kind, once).unwrap();
            prop_assert_eq!(once, twice.value);
            prop_assert!(!twice.clipped);
        }
    }
}
