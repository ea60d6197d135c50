//! Closed-loop stepping: observe, act, integrate, check contacts.

use std::sync::Arc;

use crate::agents::{AgentContext, Policy};
use crate::error::{SimError, SimFailure};
use crate::io::ScenarioFile;
use crate::model::{AgentRecord, AgentState, Episode, LaneNetwork, Route, SignalState, Truncation, TruncationReason};
use crate::sim::contact::{ContactEvent, ContactTracker};
use crate::sim::dynamics::step_dynamics;
use crate::sim::observe::{make_observation, WorldView, DEFAULT_VISIBILITY_RADIUS};

/// When a run may end before its horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// Only when every agent is in contact or off its route.
    Horizon,
    /// Also as soon as the given agent is in contact. Used by estimators that
    /// only need the first contact of one agent.
    FirstContactOf(usize),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub episode: Episode,
    pub contacts: Vec<ContactEvent>,
}

/// Immutable description of a world ready to be simulated with any policy set.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub id: String,
    pub map: Arc<LaneNetwork>,
    pub dt: f64,
    pub ego: usize,
    pub agents: Vec<AgentRecord>,
    pub initial: Vec<AgentState>,
    pub routes: Vec<Arc<Route>>,
    pub visibility_radius: f64,
}

impl SimSetup {
    pub fn new(
        id: impl Into<String>,
        map: Arc<LaneNetwork>,
        dt: f64,
        ego: usize,
        agents: Vec<AgentRecord>,
        initial: Vec<AgentState>,
    ) -> Result<Self, SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::Setup(format!("timestep must be > 0, got {dt}")));
        }
        if agents.len() != initial.len() {
            return Err(SimError::Setup("one initial state per agent required".into()));
        }
        if ego >= agents.len() {
            return Err(SimError::Setup(format!("ego index {ego} out of range")));
        }
        let routes = agents
            .iter()
            .map(|a| {
                map.route(&a.route).map(Arc::new).map_err(|source| SimError::Model {
                    agent: a.id.clone(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        for a in &agents {
            a.model.validate().map_err(|m| SimError::Setup(format!("agent {}: {m}", a.id)))?;
        }
        Ok(Self {
            id: id.into(),
            map,
            dt,
            ego,
            agents,
            initial,
            routes,
            visibility_radius: DEFAULT_VISIBILITY_RADIUS,
        })
    }

    pub fn from_episode(e: &Episode) -> Result<Self, SimError> {
        Self::new(
            e.id.clone(),
            Arc::new(e.map.clone()),
            e.dt,
            e.ego,
            e.agents.clone(),
            e.initial_states(),
        )
    }

    pub fn context(&self, i: usize) -> AgentContext {
        AgentContext {
            index: i,
            route: Arc::clone(&self.routes[i]),
            footprint: self.initial[i].footprint,
            model: self.agents[i].model,
            dt: self.dt,
        }
    }

    /// Instantiates every agent's recorded policy.
    pub fn nominal_policies(&self) -> Vec<Box<dyn Policy>> {
        (0..self.agents.len())
            .map(|i| self.agents[i].policy.instantiate(&self.context(i)))
            .collect()
    }

    pub fn run(
        &self,
        mut policies: Vec<Box<dyn Policy>>,
        horizon: usize,
        stop: StopRule,
    ) -> Result<RunOutput, SimFailure> {
        let n = self.agents.len();
        assert_eq!(policies.len(), n, "one policy per agent");
        let route_refs: Vec<&Route> = self.routes.iter().map(|r| r.as_ref()).collect();
        let signals = &self.map.signals;

        let mut states = self.initial.clone();
        let mut progress: Vec<f64> = states
            .iter()
            .zip(&route_refs)
            .map(|(s, r)| r.path.project(s.position).s)
            .collect();
        let mut trajectories: Vec<Vec<AgentState>> = states
            .iter()
            .map(|s| {
                let mut v = Vec::with_capacity(horizon + 1);
                v.push(*s);
                v
            })
            .collect();
        let signal_at = |t: f64| -> Vec<SignalState> { signals.iter().map(|s| s.state_at(t)).collect() };
        let mut signal_states = vec![signal_at(0.0)];
        let mut tracker = ContactTracker::new(n);
        tracker.observe(0, &states);

        let mut truncation = None;
        let mut commands = Vec::with_capacity(n);
        let mut steps_done = 0;
        for k in 0..horizon {
            if let StopRule::FirstContactOf(i) = stop {
                if tracker.in_contact(i) {
                    break;
                }
            }
            let off_map: Vec<bool> = (0..n).map(|i| progress[i] > route_refs[i].path.length()).collect();
            let contact: Vec<bool> = (0..n).map(|i| tracker.in_contact(i)).collect();
            if n > 0 && (0..n).all(|i| off_map[i] || contact[i]) {
                let reason = if contact.iter().all(|c| *c) {
                    TruncationReason::AllInContact
                } else if off_map.iter().all(|o| *o) {
                    TruncationReason::AllOffMap
                } else {
                    TruncationReason::AllInContactOrOffMap
                };
                truncation = Some(Truncation {
                    reason,
                    requested_horizon: horizon,
                });
                break;
            }

            let time = k as f64 * self.dt;
            let view = WorldView {
                step: k,
                time,
                states: &states,
                routes: &route_refs,
                progress: &progress,
                signals,
                signal_states: &signal_states[k],
            };
            commands.clear();
            for (i, policy) in policies.iter_mut().enumerate() {
                let failure = |error: SimError| SimFailure {
                    error,
                    partial: Box::new(self.assemble(&trajectories, &signal_states, k, None)),
                };
                let obs = make_observation(&view, i, self.visibility_radius).map_err(failure)?;
                let cmd = policy.act(&obs).map_err(|e| {
                    failure(SimError::Policy {
                        agent: self.agents[i].id.clone(),
                        step: k,
                        message: e.0,
                    })
                })?;
                commands.push(cmd);
            }
            for i in 0..n {
                let out = step_dynamics(&states[i], &commands[i], self.dt, &self.agents[i].model).map_err(|error| {
                    SimFailure {
                        error,
                        partial: Box::new(self.assemble(&trajectories, &signal_states, k, None)),
                    }
                })?;
                states[i] = out.state;
                let s_prev = progress[i];
                let reach = out.state.speed * self.dt + 2.0;
                progress[i] = route_refs[i]
                    .path
                    .project_near(out.state.position, s_prev - reach, s_prev + reach)
                    .s;
                trajectories[i].push(out.state);
            }
            signal_states.push(signal_at((k + 1) as f64 * self.dt));
            tracker.observe(k + 1, &states);
            steps_done = k + 1;
        }
        let episode = self.assemble(&trajectories, &signal_states, steps_done, truncation);
        Ok(RunOutput {
            episode,
            contacts: tracker.into_events(),
        })
    }

    fn assemble(
        &self,
        trajectories: &[Vec<AgentState>],
        signal_states: &[Vec<SignalState>],
        steps: usize,
        truncation: Option<Truncation>,
    ) -> Episode {
        Episode {
            id: self.id.clone(),
            dt: self.dt,
            horizon: steps,
            map: (*self.map).clone(),
            agents: self.agents.clone(),
            ego: self.ego,
            trajectories: trajectories.iter().map(|t| t[..=steps].to_vec()).collect(),
            signal_states: signal_states[..=steps].to_vec(),
            truncation,
        }
    }
}

/// Per-agent policy choice for a scenario run.
#[derive(Debug, Clone)]
pub struct PolicyAssignment(pub Vec<crate::agents::PolicySpec>);

impl PolicyAssignment {
    pub fn from_scenario(s: &ScenarioFile) -> Self {
        Self(s.agents.iter().map(|a| a.policy.clone()).collect())
    }

    pub fn with(mut self, agent: usize, spec: crate::agents::PolicySpec) -> Self {
        self.0[agent] = spec;
        self
    }
}

/// Runs a scenario closed loop for `horizon` steps (or its own duration when
/// `None`). All built-in policies are deterministic; `seed` only names the
/// run and is recorded for reproducibility.
pub fn simulate(
    scenario: &ScenarioFile,
    policies: &PolicyAssignment,
    seed: u64,
    horizon: Option<usize>,
) -> Result<Episode, SimFailure> {
    let _ = seed;
    let fail = |error: SimError| SimFailure {
        error,
        partial: Box::new(Episode {
            id: scenario.name.clone(),
            dt: scenario.timestep,
            horizon: 0,
            map: scenario.map.clone(),
            agents: vec![],
            ego: scenario.ego,
            trajectories: vec![],
            signal_states: vec![],
            truncation: None,
        }),
    };
    if policies.0.len() != scenario.agents.len() {
        return Err(fail(SimError::Setup("one policy per agent required".into())));
    }
    let records: Vec<AgentRecord> = scenario
        .agents
        .iter()
        .zip(&policies.0)
        .map(|(a, p)| AgentRecord {
            id: a.id.clone(),
            model: a.model,
            route: a.route.clone(),
            policy: p.clone(),
        })
        .collect();
    let initial = scenario.agents.iter().map(|a| a.initial).collect();
    let setup = SimSetup::new(
        scenario.name.clone(),
        Arc::new(scenario.map.clone()),
        scenario.timestep,
        scenario.ego,
        records,
        initial,
    )
    .map_err(fail)?;
    let horizon = horizon.unwrap_or_else(|| scenario.horizon_steps());
    let policies = setup.nominal_policies();
    setup.run(policies, horizon, StopRule::Horizon).map(|o| o.episode)
}
