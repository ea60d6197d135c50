//! Scalar counterfactuals: policy-agnostic observation filters wrapped
//! around the other agents' policies, or edits of their IDM parameters.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{apply_aggressiveness, replay_commands, IdmParams, Policy, PolicyError, PolicySpec};
use crate::error::{ModelError, SimFailure};
use crate::model::{clamp_intensity, Command, CounterfactualKind, Episode, SignalId};
use crate::sim::{Observation, RunOutput, SimSetup, StopRule};

/// Attentive window between two distraction holds, s.
pub const ATTENTIVE_WINDOW: f64 = 0.5;

pub trait ObservationFilter: Send {
    fn filter(&mut self, obs: Observation) -> Observation;
}

pub trait CommandFilter: Send {
    fn filter(&mut self, obs: &Observation, cmd: Command) -> Command;
}

impl<F: FnMut(&Observation, Command) -> Command + Send> CommandFilter for F {
    fn filter(&mut self, obs: &Observation, cmd: Command) -> Command {
        self(obs, cmd)
    }
}

/// A base policy seen only through its inputs and outputs.
pub struct FilterChain {
    base: Box<dyn Policy>,
    observation: Vec<Box<dyn ObservationFilter>>,
    command: Vec<Box<dyn CommandFilter>>,
}

impl FilterChain {
    pub fn new(base: Box<dyn Policy>, observation: Vec<Box<dyn ObservationFilter>>) -> Self {
        Self {
            base,
            observation,
            command: Vec::new(),
        }
    }

    pub fn with_command_filter(mut self, f: Box<dyn CommandFilter>) -> Self {
        self.command.push(f);
        self
    }
}

impl Policy for FilterChain {
    fn act(&mut self, obs: &Observation) -> Result<Command, PolicyError> {
        let mut seen = obs.clone();
        for f in &mut self.observation {
            seen = f.filter(seen);
        }
        let mut cmd = self.base.act(&seen)?;
        for f in &mut self.command {
            cmd = f.filter(obs, cmd);
        }
        Ok(cmd)
    }
}

fn steps_for(seconds: f64, dt: f64) -> usize {
    (seconds / dt).round() as usize
}

/// Hands the policy the observation from `delay` steps ago; before that
/// much history exists, the first observation.
#[derive(Debug, Clone)]
pub struct DelayFilter {
    delay: usize,
    buffer: VecDeque<Observation>,
}

impl DelayFilter {
    pub fn new(delay_steps: usize) -> Self {
        Self {
            delay: delay_steps,
            buffer: VecDeque::with_capacity(delay_steps + 1),
        }
    }

    /// The delay is rounded to whole steps.
    pub fn from_seconds(delay: f64, dt: f64) -> Self {
        Self::new(steps_for(delay, dt))
    }
}

impl ObservationFilter for DelayFilter {
    fn filter(&mut self, obs: Observation) -> Observation {
        if self.delay == 0 {
            return obs;
        }
        if self.buffer.is_empty() {
            for _ in 0..self.delay {
                self.buffer.push_back(obs.clone());
            }
        }
        self.buffer.push_back(obs);
        self.buffer.pop_front().expect("buffer holds delay + 1 entries")
    }
}

/// Distraction: the observation is frozen for `hold` steps, then refreshed
/// every step for `attentive` steps, repeating from a per-agent phase.
#[derive(Debug, Clone)]
pub struct HoldFilter {
    hold: usize,
    attentive: usize,
    phase: usize,
    step: usize,
    held: Option<Observation>,
}

impl HoldFilter {
    pub fn new(hold_steps: usize, attentive_steps: usize, phase: usize) -> Self {
        let cycle = hold_steps + attentive_steps;
        Self {
            hold: hold_steps,
            attentive: attentive_steps,
            phase: if cycle == 0 { 0 } else { phase % cycle },
            step: 0,
            held: None,
        }
    }

    /// `u` in [0, 1) picks the phase within the cycle.
    pub fn from_seconds(hold: f64, dt: f64, u: f64) -> Self {
        let hold = steps_for(hold, dt);
        let attentive = steps_for(ATTENTIVE_WINDOW, dt).max(1);
        let phase = (u * (hold + attentive) as f64).floor() as usize;
        Self::new(hold, attentive, phase)
    }

    fn attentive_now(&self) -> bool {
        (self.step + self.phase) % (self.hold + self.attentive) < self.attentive
    }
}

impl ObservationFilter for HoldFilter {
    fn filter(&mut self, obs: Observation) -> Observation {
        if self.hold == 0 {
            return obs;
        }
        let refresh = self.held.is_none() || self.attentive_now();
        self.step += 1;
        if refresh {
            self.held = Some(obs);
        }
        self.held.clone().expect("set on first call")
    }
}

/// Removes one agent from observations unless its footprint is closer than
/// `range`.
#[derive(Debug, Clone)]
pub struct UnseenFilter {
    target: usize,
    range: f64,
}

impl UnseenFilter {
    pub fn new(target: usize, range: f64) -> Self {
        Self { target, range }
    }

    /// Visibility range `1/γ`; `γ = 0` means always visible.
    pub fn from_intensity(target: usize, gamma: f64) -> Self {
        Self::new(target, if gamma > 0.0 { 1.0 / gamma } else { f64::INFINITY })
    }

    pub fn range(&self) -> f64 {
        self.range
    }
}

impl ObservationFilter for UnseenFilter {
    fn filter(&mut self, mut obs: Observation) -> Observation {
        if self.range.is_infinite() {
            return obs;
        }
        let own = obs.own.obb();
        obs.nearby
            .retain(|o| o.index != self.target || own.distance(&o.state.obb()) < self.range);
        obs
    }
}

/// Drops every agent whose center lies farther than `range`.
#[derive(Debug, Clone)]
pub struct RangeFilter {
    range: f64,
}

impl RangeFilter {
    pub fn new(range: f64) -> Self {
        Self { range }
    }
}

impl ObservationFilter for RangeFilter {
    fn filter(&mut self, mut obs: Observation) -> Observation {
        obs.nearby.retain(|o| o.distance <= self.range);
        obs
    }
}

/// Illegal precedence: the first time a signal is observed the agent
/// decides, once, whether to ignore it for the rest of the run.
#[derive(Debug, Clone)]
pub struct SignalViolationFilter {
    probability: f64,
    stream: u64,
    decisions: Vec<(SignalId, bool)>,
}

impl SignalViolationFilter {
    pub fn new(probability: f64, stream: u64) -> Self {
        Self {
            probability,
            stream,
            decisions: Vec::new(),
        }
    }

    /// Signals this agent decided to ignore so far.
    pub fn violated(&self) -> impl Iterator<Item = SignalId> + '_ {
        self.decisions.iter().filter(|(_, v)| *v).map(|(id, _)| *id)
    }

    fn violates(&mut self, id: SignalId) -> bool {
        if let Some((_, v)) = self.decisions.iter().find(|(s, _)| *s == id) {
            return *v;
        }
        // The draw depends only on (stream, signal), so the set of violated
        // signals grows monotonically with the probability across runs.
        let v = seed::uniform(seed::mix(self.stream, id)) < self.probability;
        self.decisions.push((id, v));
        v
    }
}

impl ObservationFilter for SignalViolationFilter {
    fn filter(&mut self, mut obs: Observation) -> Observation {
        if self.probability <= 0.0 {
            return obs;
        }
        let mut signals = std::mem::take(&mut obs.signals);
        signals.retain(|s| !self.violates(s.id));
        obs.signals = signals;
        obs
    }
}

/// Counter-based seed derivation: every random number is a pure function of
/// the base seed, the episode, the kind, the repetition and the agent.
pub mod seed {
    use super::*;

    pub fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn mix(a: u64, b: u64) -> u64 {
        splitmix(a ^ splitmix(b))
    }

    pub fn fnv1a(bytes: &[u8]) -> u64 {
        bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    /// Seed of repetition `rep`. The intensity is deliberately not an input:
    /// all intensities share random numbers, which makes estimated curves
    /// far smoother than independent draws would.
    pub fn rep_seed(base: u64, episode: &str, kind: CounterfactualKind, rep: usize) -> u64 {
        let kind_ix = CounterfactualKind::ALL.iter().position(|k| *k == kind).unwrap_or(0) as u64;
        mix(mix(mix(base, fnv1a(episode.as_bytes())), kind_ix), rep as u64)
    }

    pub fn agent_stream(rep_seed: u64, agent: usize) -> u64 {
        mix(rep_seed, agent as u64 + 1)
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(seed: u64) -> f64 {
        ChaCha8Rng::seed_from_u64(seed).random::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterfactualAssignment {
    pub kind: CounterfactualKind,
    pub intensity: f64,
    /// Every agent but this one is perturbed.
    pub ego: usize,
}

/// A counterfactual world ready for repeated realization.
#[derive(Debug, Clone)]
pub struct CounterfactualSetup {
    /// Initial conditions and policies (ego policy and edited parameters
    /// already applied).
    pub sim: SimSetup,
    pub kind: CounterfactualKind,
    pub intensity: f64,
    pub horizon: usize,
    pub base_seed: u64,
}

/// The ego policy that replays the recorded trajectory open loop.
pub fn non_reactive_ego(e: &Episode) -> PolicySpec {
    PolicySpec::Replay(replay_commands(&e.trajectories[e.ego], e.dt))
}

/// Parameters an IDM-family ego would drive with in this episode.
pub fn ego_idm_params(e: &Episode) -> IdmParams {
    let a = &e.agents[e.ego];
    match a.policy.idm_params() {
        Some(p) => *p,
        None => IdmParams {
            desired_speed: e.trajectories[e.ego].first().map_or(IdmParams::default().desired_speed, |s| s.speed.max(1.0)),
            ..IdmParams::default()
        },
    }
}

pub fn build_counterfactual(
    e: &Episode,
    assign: &CounterfactualAssignment,
    ego_policy: &PolicySpec,
    seed: u64,
) -> Result<CounterfactualSetup, ModelError> {
    if assign.ego >= e.agents.len() {
        return Err(ModelError::Invalid(format!("ego index {} out of range", assign.ego)));
    }
    let gamma = clamp_intensity(assign.kind, assign.intensity)?.value;
    let mut sim = SimSetup::from_episode(e).map_err(|err| ModelError::Invalid(err.to_string()))?;
    sim.ego = assign.ego;
    for (i, rec) in sim.agents.iter_mut().enumerate() {
        if i == assign.ego {
            rec.policy = ego_policy.clone();
        } else if assign.kind == CounterfactualKind::Aggressiveness {
            if let Some(p) = rec.policy.idm_params() {
                rec.policy = rec.policy.with_idm_params(apply_aggressiveness(p, gamma)?);
            }
        }
    }
    Ok(CounterfactualSetup {
        sim,
        kind: assign.kind,
        intensity: gamma,
        horizon: e.horizon,
        base_seed: seed,
    })
}

impl CounterfactualSetup {
    pub fn ego(&self) -> usize {
        self.sim.ego
    }

    pub fn rep_seed(&self, rep: usize) -> u64 {
        seed::rep_seed(self.base_seed, &self.sim.id, self.kind, rep)
    }

    fn filters(&self, agent: usize, rep: usize) -> Vec<Box<dyn ObservationFilter>> {
        let gamma = self.intensity;
        let dt = self.sim.dt;
        let stream = seed::agent_stream(self.rep_seed(rep), agent);
        match self.kind {
            CounterfactualKind::Aggressiveness => vec![],
            CounterfactualKind::Distraction => {
                vec![Box::new(HoldFilter::from_seconds(gamma, dt, seed::uniform(stream)))]
            }
            CounterfactualKind::IllegalPrecedence => vec![Box::new(SignalViolationFilter::new(gamma, stream))],
            CounterfactualKind::ImpairedReflexes => vec![Box::new(DelayFilter::from_seconds(gamma, dt))],
            CounterfactualKind::Unseen => vec![Box::new(UnseenFilter::from_intensity(self.sim.ego, gamma))],
        }
    }

    /// Policies for repetition `rep`, with `ego` overriding the stored ego
    /// policy when given.
    pub fn policies(&self, rep: usize, ego: Option<&PolicySpec>) -> Vec<Box<dyn Policy>> {
        (0..self.sim.agents.len())
            .map(|i| {
                let ctx = self.sim.context(i);
                if i == self.sim.ego {
                    return ego.unwrap_or(&self.sim.agents[i].policy).instantiate(&ctx);
                }
                let base = self.sim.agents[i].policy.instantiate(&ctx);
                let filters = self.filters(i, rep);
                if filters.is_empty() {
                    base
                } else {
                    Box::new(FilterChain::new(base, filters)) as Box<dyn Policy>
                }
            })
            .collect()
    }

    pub fn run(&self, rep: usize, ego: Option<&PolicySpec>, stop: StopRule) -> Result<RunOutput, SimFailure> {
        let rep = if self.kind.is_stochastic() { rep } else { 0 };
        let mut out = self.sim.run(self.policies(rep, ego), self.horizon, stop)?;
        if let Some(p) = ego {
            out.episode.agents[self.sim.ego].policy = p.clone();
        }
        Ok(out)
    }
}

/// One counterfactual episode. Deterministic kinds ignore `rep`.
pub fn realize(setup: &CounterfactualSetup, rep: usize) -> Result<Episode, SimFailure> {
    setup.run(rep, None, StopRule::Horizon).map(|o| o.episode)
}
