use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::geometry::Vec2;
use crate::model::{AgentState, Route, Signal, SignalId, SignalKind, SignalState};

pub const DEFAULT_VISIBILITY_RADIUS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedAgent {
    pub index: usize,
    pub state: AgentState,
    /// Center-to-center distance from the observer.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedSignal {
    pub id: SignalId,
    pub kind: SignalKind,
    pub state: SignalState,
    /// Arclength along the observer's route from its center to the stop line.
    pub distance: f64,
    /// Stop-line point in world coordinates.
    pub position: Vec2,
}

/// What one agent perceives at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: usize,
    pub time: f64,
    pub agent: usize,
    pub own: AgentState,
    pub nearby: Vec<ObservedAgent>,
    pub signals: Vec<ObservedSignal>,
}

/// Read-only snapshot of the simulated world at one step.
#[derive(Debug, Clone, Copy)]
pub struct WorldView<'a> {
    pub step: usize,
    pub time: f64,
    pub states: &'a [AgentState],
    pub routes: &'a [&'a Route],
    /// Route arclength of each agent's center.
    pub progress: &'a [f64],
    pub signals: &'a [Signal],
    pub signal_states: &'a [SignalState],
}

/// Radial-visibility observation: every other agent whose center lies within
/// `radius`, and every stop line ahead on the agent's route within `radius`.
pub fn make_observation(world: &WorldView<'_>, agent: usize, radius: f64) -> Result<Observation, SimError> {
    let own = *world.states.get(agent).ok_or(SimError::UnknownAgent(agent))?;
    let r2 = radius * radius;
    let nearby = world
        .states
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != agent)
        .filter_map(|(j, s)| {
            let d2 = (s.position - own.position).norm_sq();
            (d2 <= r2).then(|| ObservedAgent {
                index: j,
                state: *s,
                distance: d2.sqrt(),
            })
        })
        .collect();
    let route = world.routes[agent];
    let s_own = world.progress[agent];
    let signals = route
        .signals
        .iter()
        .filter_map(|rs| {
            let distance = rs.s - s_own;
            if !(0.0..=radius).contains(&distance) {
                return None;
            }
            let sig = &world.signals[rs.signal];
            Some(ObservedSignal {
                id: sig.id,
                kind: sig.kind,
                state: world.signal_states[rs.signal],
                distance,
                position: route.path.point_at(rs.s),
            })
        })
        .collect();
    Ok(Observation {
        step: world.step,
        time: world.time,
        agent,
        own,
        nearby,
        signals,
    })
}
