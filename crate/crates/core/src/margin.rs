//! Collision-probability estimation and the counterfactual safety margin,
//! with its non-reactive lower bound and best-response upper bound.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{PolicySpec, PrimitivePlan};
use crate::counterfactual::{build_counterfactual, non_reactive_ego, CounterfactualAssignment, CounterfactualSetup};
use crate::error::{MarginError, ModelError, SimFailure};
use crate::model::{AgentState, Command, CounterfactualKind, Episode};
use crate::severity::{lex_compare, SeverityModel, SeverityProfile};
use crate::sim::{first_contact, StopRule};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
/// A probability point with more failed reps than this fraction is unusable.
pub const MAX_FAILURE_RATE: f64 = 0.05;

pub const PRIMITIVE_ACCELS: [f64; 4] = [-8.0, -4.0, 0.0, 2.0];
pub const PRIMITIVE_STEER_RATES: [f64; 3] = [0.0, -0.4, 0.4];
pub const PRIMITIVE_SEGMENTS: usize = 3;

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z95 / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityPoint {
    pub intensity: f64,
    /// Successful repetitions.
    pub reps: usize,
    pub collisions: usize,
    pub failures: usize,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Part of the common base grid (false for bisection midpoints).
    pub on_grid: bool,
}

impl ProbabilityPoint {
    pub fn new(intensity: f64, reps: usize, collisions: usize, failures: usize, on_grid: bool) -> Self {
        let (ci_low, ci_high) = wilson_interval(collisions, reps);
        Self {
            intensity,
            reps,
            collisions,
            failures,
            p_hat: if reps == 0 { 0.0 } else { collisions as f64 / reps as f64 },
            ci_low,
            ci_high,
            on_grid,
        }
    }
}

/// How the ego behaves in counterfactual runs.
#[derive(Debug, Clone, PartialEq)]
pub enum EgoMode {
    /// Replays the recorded trajectory open loop.
    NonReactive,
    /// Runs this policy closed loop.
    Reactive(PolicySpec),
    /// Best motion-primitive response wherever the non-reactive ego collides.
    BestResponse,
}

impl EgoMode {
    pub fn mode(&self) -> MarginMode {
        match self {
            EgoMode::NonReactive => MarginMode::NonReactive,
            EgoMode::Reactive(_) => MarginMode::Reactive,
            EgoMode::BestResponse => MarginMode::BestResponse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginMode {
    Reactive,
    NonReactive,
    BestResponse,
}

impl MarginMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MarginMode::Reactive => "reactive",
            MarginMode::NonReactive => "non_reactive",
            MarginMode::BestResponse => "best_response",
        }
    }
}

impl fmt::Display for MarginMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MarginMode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reactive" => Ok(MarginMode::Reactive),
            "non_reactive" => Ok(MarginMode::NonReactive),
            "best_response" => Ok(MarginMode::BestResponse),
            _ => Err(ModelError::UnknownName {
                what: "margin mode",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginConfig {
    pub eps: f64,
    /// Number of equally spaced base-grid intensities, endpoints included.
    pub grid: usize,
    /// Bisection rounds after the first crossing.
    pub refine: usize,
    /// Repetitions for stochastic kinds; deterministic kinds always use 1.
    pub reps: usize,
    pub seed: u64,
    pub severity: SeverityModel,
}

impl Default for MarginConfig {
    fn default() -> Self {
        Self {
            eps: 0.05,
            grid: 11,
            refine: 4,
            reps: 50,
            seed: 0,
            severity: SeverityModel::default(),
        }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<(), MarginError> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(MarginError::Config(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if self.grid < 2 {
            return Err(MarginError::Config("grid needs at least 2 points".into()));
        }
        if self.reps == 0 {
            return Err(MarginError::Config("reps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn reps_for(&self, kind: CounterfactualKind) -> usize {
        if kind.is_stochastic() {
            self.reps
        } else {
            1
        }
    }

    pub fn grid_points(&self, kind: CounterfactualKind) -> Vec<f64> {
        let max = kind.max_intensity();
        let last = self.grid - 1;
        (0..self.grid)
            .map(|j| if j == last { max } else { max * j as f64 / last as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginResult {
    pub episode_id: String,
    pub kind: CounterfactualKind,
    pub mode: MarginMode,
    /// `None` when censored: no tested intensity crossed, i.e. "> γ_max".
    pub margin: Option<f64>,
    /// Width of the final bracket around the margin.
    pub grid_resolution: f64,
    /// Every evaluated point, ascending in intensity.
    pub curve: Vec<ProbabilityPoint>,
    /// Mean over colliding reps at the margin; zero when censored.
    pub severity_at_margin: SeverityProfile,
}

impl MarginResult {
    pub fn censored(&self) -> bool {
        self.margin.is_none()
    }

    /// Margin with censoring mapped to +∞.
    pub fn margin_or_inf(&self) -> f64 {
        self.margin.unwrap_or(f64::INFINITY)
    }

    pub fn grid_curve(&self) -> impl Iterator<Item = &ProbabilityPoint> {
        self.curve.iter().filter(|p| p.on_grid)
    }
}

/// Outcome of one repetition: the ego's severity if it collided.
type RepOutcome = Result<Option<SeverityProfile>, String>;

fn collect_point(intensity: f64, on_grid: bool, outcomes: Vec<RepOutcome>) -> Result<(ProbabilityPoint, Vec<SeverityProfile>), MarginError> {
    let attempted = outcomes.len();
    let mut severities = Vec::new();
    let mut failures = 0;
    let mut last_error = String::new();
    for o in outcomes {
        match o {
            Ok(Some(s)) => severities.push(s),
            Ok(None) => {}
            Err(e) => {
                failures += 1;
                last_error = e;
            }
        }
    }
    if failures as f64 > MAX_FAILURE_RATE * attempted as f64 {
        return Err(MarginError::Unusable {
            intensity,
            failures,
            reps: attempted,
            last_error,
        });
    }
    let point = ProbabilityPoint::new(intensity, attempted - failures, severities.len(), failures, on_grid);
    Ok((point, severities))
}

fn ego_severity(model: &SeverityModel, setup: &CounterfactualSetup, out: &crate::sim::RunOutput) -> RepOutcome {
    let ego = setup.ego();
    match first_contact(&out.contacts, ego) {
        Some(c) => model.severity_of(c, ego).map(Some).map_err(|e| e.to_string()),
        None => Ok(None),
    }
}

/// θ̂ at the setup's intensity. Deterministic kinds run exactly one rep.
pub fn estimate_collision_prob(
    setup: &CounterfactualSetup,
    n_reps: usize,
    severity: &SeverityModel,
) -> Result<ProbabilityPoint, MarginError> {
    let reps = if setup.kind.is_stochastic() { n_reps.max(1) } else { 1 };
    let outcomes: Vec<RepOutcome> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let out = setup.run(r, None, StopRule::FirstContactOf(setup.ego())).map_err(|f| f.to_string())?;
            ego_severity(severity, setup, &out)
        })
        .collect();
    collect_point(setup.intensity, true, outcomes).map(|(p, _)| p)
}

struct MarginProblem<'a> {
    episode: &'a Episode,
    kind: CounterfactualKind,
    ego: EgoMode,
    cfg: &'a MarginConfig,
}

impl MarginProblem<'_> {
    fn setup(&self, gamma: f64) -> Result<CounterfactualSetup, MarginError> {
        let spec = match &self.ego {
            EgoMode::Reactive(p) => p.clone(),
            EgoMode::NonReactive | EgoMode::BestResponse => non_reactive_ego(self.episode),
        };
        let assign = CounterfactualAssignment {
            kind: self.kind,
            intensity: gamma,
            ego: self.episode.ego,
        };
        Ok(build_counterfactual(self.episode, &assign, &spec, self.cfg.seed)?)
    }

    fn rep(&self, setup: &CounterfactualSetup, rep: usize) -> RepOutcome {
        let out = setup
            .run(rep, None, StopRule::FirstContactOf(setup.ego()))
            .map_err(|f| f.to_string())?;
        let anchored = ego_severity(&self.cfg.severity, setup, &out)?;
        if self.ego != EgoMode::BestResponse || anchored.is_none() {
            return Ok(anchored);
        }
        let br = search_best_response(setup, self.episode, rep, &self.cfg.severity, true).map_err(|e| e.to_string())?;
        Ok(br.collided.then_some(br.severity))
    }

    fn point(&self, gamma: f64, on_grid: bool) -> Result<(ProbabilityPoint, Vec<SeverityProfile>), MarginError> {
        let setup = self.setup(gamma)?;
        let reps = self.cfg.reps_for(self.kind);
        let outcomes: Vec<RepOutcome> = (0..reps).into_par_iter().map(|r| self.rep(&setup, r)).collect();
        collect_point(setup.intensity, on_grid, outcomes)
    }
}

/// Smallest tested intensity whose collision probability exceeds `eps`.
///
/// Every base-grid point is evaluated. From the first crossing, the bracket
/// to the previous grid point is bisected `refine` times.
pub fn safety_margin(
    e: &Episode,
    kind: CounterfactualKind,
    ego: EgoMode,
    cfg: &MarginConfig,
) -> Result<MarginResult, MarginError> {
    cfg.validate()?;
    let problem = MarginProblem {
        episode: e,
        kind,
        ego: ego.clone(),
        cfg,
    };
    let grid = cfg.grid_points(kind);
    let evaluated: Vec<(ProbabilityPoint, Vec<SeverityProfile>)> = grid
        .par_iter()
        .map(|g| problem.point(*g, true))
        .collect::<Result<_, _>>()?;
    let crosses = |p: &ProbabilityPoint| p.p_hat > cfg.eps;
    let cell = grid[1] - grid[0];
    let mut curve: Vec<ProbabilityPoint> = evaluated.iter().map(|(p, _)| *p).collect();

    let first = evaluated.iter().position(|(p, _)| crosses(p));
    let (margin, resolution, severity) = match first {
        None => (None, cell, SeverityProfile::ZERO),
        Some(0) => (Some(grid[0]), 0.0, SeverityProfile::mean(&evaluated[0].1)),
        Some(j) => {
            let (mut lo, mut hi) = (grid[j - 1], grid[j]);
            let mut hi_sev = evaluated[j].1.clone();
            for _ in 0..cfg.refine {
                let mid = 0.5 * (lo + hi);
                let (p, sev) = problem.point(mid, false)?;
                curve.push(p);
                if crosses(&p) {
                    hi = mid;
                    hi_sev = sev;
                } else {
                    lo = mid;
                }
            }
            (Some(hi), hi - lo, SeverityProfile::mean(&hi_sev))
        }
    };
    curve.sort_by(|a, b| a.intensity.total_cmp(&b.intensity));
    Ok(MarginResult {
        episode_id: e.id.clone(),
        kind,
        mode: ego.mode(),
        margin,
        grid_resolution: resolution,
        curve,
        severity_at_margin: severity,
    })
}

/// Margin with the ego replaying its recorded trajectory.
pub fn lower_bound_margin(e: &Episode, kind: CounterfactualKind, cfg: &MarginConfig) -> Result<MarginResult, MarginError> {
    safety_margin(e, kind, EgoMode::NonReactive, cfg)
}

/// Margin where a rep only counts as a collision if the non-reactive ego
/// collides and no searched response avoids it.
pub fn upper_bound_margin(e: &Episode, kind: CounterfactualKind, cfg: &MarginConfig) -> Result<MarginResult, MarginError> {
    safety_margin(e, kind, EgoMode::BestResponse, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub trajectory: Vec<AgentState>,
    pub severity: SeverityProfile,
    pub collided: bool,
    /// The winning primitive plan; `None` when replaying the recording won.
    pub plan: Option<PrimitivePlan>,
    /// Rollouts run, failed ones included.
    pub evaluated: usize,
    pub failed: usize,
}

/// All piecewise-constant plans over `horizon` steps, hardest braking first.
pub fn primitive_plans(horizon: usize) -> Vec<PrimitivePlan> {
    let seg = horizon.div_ceil(PRIMITIVE_SEGMENTS).max(1);
    let prims: Vec<Command> = PRIMITIVE_ACCELS
        .iter()
        .flat_map(|a| {
            PRIMITIVE_STEER_RATES.iter().map(move |w| Command {
                accel: *a,
                steering_rate: *w,
            })
        })
        .collect();
    let mut plans = vec![Vec::new()];
    for _ in 0..PRIMITIVE_SEGMENTS {
        plans = plans
            .into_iter()
            .flat_map(|p: Vec<Command>| {
                prims.iter().map(move |c| {
                    let mut q = p.clone();
                    q.push(*c);
                    q
                })
            })
            .collect();
    }
    plans
        .into_iter()
        .map(|segments| PrimitivePlan {
            segments,
            segment_steps: seg,
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Candidate {
    plan: Option<PrimitivePlan>,
    trajectory: Vec<AgentState>,
    severity: SeverityProfile,
    collided: bool,
    deviation: f64,
}

fn cost_cmp(a: &Candidate, b: &Candidate) -> Ordering {
    lex_compare(&a.severity, &b.severity)
        .then(a.collided.cmp(&b.collided))
        .then(a.deviation.total_cmp(&b.deviation))
}

fn mean_sq_deviation(traj: &[AgentState], reference: &[AgentState]) -> f64 {
    let n = traj.len().min(reference.len());
    if n == 0 {
        return 0.0;
    }
    traj[..n]
        .iter()
        .zip(&reference[..n])
        .map(|(a, b)| (a.position - b.position).norm_sq())
        .sum::<f64>()
        / n as f64
}

fn rollout(
    setup: &CounterfactualSetup,
    reference: &[AgentState],
    rep: usize,
    plan: Option<PrimitivePlan>,
    replay: &PolicySpec,
    severity: &SeverityModel,
) -> Result<Candidate, String> {
    let spec = match &plan {
        Some(p) => PolicySpec::BestResponse(p.clone()),
        None => replay.clone(),
    };
    let ego = setup.ego();
    let out = setup
        .run(rep, Some(&spec), StopRule::FirstContactOf(ego))
        .map_err(|f: SimFailure| f.to_string())?;
    let sev = ego_severity(severity, setup, &out)?;
    let trajectory = out.episode.trajectories[ego].clone();
    Ok(Candidate {
        deviation: mean_sq_deviation(&trajectory, reference),
        plan,
        trajectory,
        severity: sev.unwrap_or(SeverityProfile::ZERO),
        collided: sev.is_some(),
    })
}

/// Parallel batch size of the short-circuit search. Results never depend on
/// it, only the amount of wasted work after the first escape does.
const SEARCH_BATCH: usize = 32;

fn search_best_response(
    setup: &CounterfactualSetup,
    e: &Episode,
    rep: usize,
    severity: &SeverityModel,
    short_circuit: bool,
) -> Result<BestResponse, MarginError> {
    let reference = &e.trajectories[e.ego];
    let replay = non_reactive_ego(e);
    let mut candidates: Vec<Option<PrimitivePlan>> = primitive_plans(setup.horizon).into_iter().map(Some).collect();
    candidates.push(None);

    let mut best: Option<Candidate> = None;
    let (mut evaluated, mut failed) = (0, 0);
    let mut last_error = String::new();
    let batch = if short_circuit { SEARCH_BATCH } else { candidates.len() };
    for chunk in candidates.chunks(batch) {
        let results: Vec<Result<Candidate, String>> = chunk
            .par_iter()
            .map(|plan| rollout(setup, reference, rep, plan.clone(), &replay, severity))
            .collect();
        let mut escaped = false;
        for r in results {
            evaluated += 1;
            match r {
                Ok(c) => {
                    escaped |= !c.collided;
                    if best.as_ref().is_none_or(|b| cost_cmp(&c, b) == Ordering::Less) {
                        best = Some(c);
                    }
                }
                Err(err) => {
                    failed += 1;
                    last_error = err;
                }
            }
            if short_circuit && escaped {
                break;
            }
        }
        if short_circuit && escaped {
            break;
        }
    }
    let best = best.ok_or(MarginError::AllRolloutsFailed(last_error))?;
    Ok(BestResponse {
        trajectory: best.trajectory,
        severity: best.severity,
        collided: best.collided,
        plan: best.plan,
        evaluated,
        failed,
    })
}

/// Best ego response at intensity `gamma`, repetition `rep`, over the
/// primitive tree plus the recorded trajectory. Requires the non-reactive
/// ego to collide there. `short_circuit` stops at the first candidate that
/// avoids contact; otherwise every candidate is ranked.
pub fn best_response(
    e: &Episode,
    kind: CounterfactualKind,
    gamma: f64,
    rep: usize,
    cfg: &MarginConfig,
    short_circuit: bool,
) -> Result<BestResponse, MarginError> {
    let problem = MarginProblem {
        episode: e,
        kind,
        ego: EgoMode::NonReactive,
        cfg,
    };
    let setup = problem.setup(gamma)?;
    if problem.rep(&setup, rep).map_err(MarginError::AllRolloutsFailed)?.is_none() {
        return Err(MarginError::NoAnchor);
    }
    search_best_response(&setup, e, rep, &cfg.severity, short_circuit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_matches_closed_form() {
        // k = 5, n = 10: centre 0.5, half-width z/(1+z²/n)·sqrt(0.025 + z²/400).
        let (lo, hi) = wilson_interval(5, 10);
        let z2 = Z95 * Z95;
        let half = Z95 / (1.0 + z2 / 10.0) * (0.025 + z2 / 400.0f64).sqrt();
        assert!((lo - (0.5 - half)).abs() < 1e-12 && (hi - (0.5 + half)).abs() < 1e-12);
        assert!((lo - 0.236_593).abs() < 1e-5);
        let (lo0, hi0) = wilson_interval(0, 50);
        assert_eq!(lo0, 0.0);
        assert!((hi0 - 0.071_35).abs() < 1e-4);
        assert_eq!(wilson_interval(0, 0), (0.0, 1.0));
    }

    #[test]
    fn grid_is_equally_spaced_with_exact_end() {
        let cfg = MarginConfig::default();
        let g = cfg.grid_points(CounterfactualKind::Distraction);
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[10], 5.0);
        assert!((g[3] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn primitive_tree_size_and_order() {
        let plans = primitive_plans(90);
        assert_eq!(plans.len(), 1728);
        assert_eq!(plans[0].segment_steps, 30);
        assert!(plans[0].segments.iter().all(|c| c.accel == -8.0 && c.steering_rate == 0.0));
        assert_eq!(primitive_plans(100)[0].segment_steps, 34);
    }

    #[test]
    fn config_validation() {
        let mut cfg = MarginConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.eps = 1.0;
        assert!(cfg.validate().is_err());
        cfg = MarginConfig {
            grid: 1,
            ..MarginConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
