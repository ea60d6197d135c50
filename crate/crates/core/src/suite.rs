//! Synthetic ODD: generated episodes on a four-way intersection, plus the
//! small fixtures used by tests and examples.
//!
//! Families: car-following chains behind a braking lead, faster followers
//! at tight gaps, stop-sign and traffic-light intersections, and
//! unsignalized crossings. The ego always drives east on the main road.
//! Candidates whose nominal run has any contact are rejected, so every
//! episode starts collision free.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{IdmParams, PolicySpec};
use crate::analytics::SPEED_SPLIT;
use crate::io::{parse_native, write_scenario, ScenarioAgent, ScenarioFile};
use crate::model::{
    AgentState, Command, Episode, Footprint, LaneNetwork, Lanelet, LaneletId, LightPhase, PhaseSchedule, Signal,
    SignalKind, DEFAULT_TIMESTEP,
};
use crate::sim::{check_contacts, simulate, KinematicModel, PolicyAssignment};

pub const LANE_WIDTH: f64 = 3.5;
/// Half size of the box where the two roads overlap, m.
pub const JUNCTION: f64 = 5.0;
/// Approach length on every arm, m.
pub const ARM: f64 = 300.0;

pub const EAST: [LaneletId; 3] = [1, 2, 3];
pub const NORTH: [LaneletId; 3] = [11, 12, 13];
pub const SOUTH: [LaneletId; 3] = [21, 22, 23];

const NORTH_SIGNAL: u64 = 1;
const SOUTH_SIGNAL: u64 = 2;
const EAST_SIGNAL: u64 = 3;

/// Route arclength where the east lane crosses the northbound lane.
const EAST_MEETS_NORTH: f64 = ARM + 0.5 * LANE_WIDTH;
/// Route arclength where the east lane crosses the southbound lane.
const EAST_MEETS_SOUTH: f64 = ARM - 0.5 * LANE_WIDTH;
/// Arclength of a minor-road stop line.
const STOP_LINE: f64 = ARM - JUNCTION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Following,
    TightFollower,
    StopSign,
    TrafficLight,
    Unsignalized,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Following => "following",
            Family::TightFollower => "tight_follower",
            Family::StopSign => "stop_sign",
            Family::TrafficLight => "traffic_light",
            Family::Unsignalized => "unsignalized",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeedBand {
    High,
    Low,
}

#[derive(Debug, Clone)]
pub struct SuiteEpisode {
    pub family: Family,
    pub scenario: ScenarioFile,
    pub episode: Episode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Episodes per speed band.
    pub per_band: usize,
    pub duration: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            per_band: 50,
            duration: 8.0,
        }
    }
}

fn straight(id: LaneletId, a: (f64, f64), b: (f64, f64), next: Option<LaneletId>) -> Lanelet {
    Lanelet {
        id,
        centerline: vec![crate::geometry::Vec2::new(a.0, a.1), crate::geometry::Vec2::new(b.0, b.1)],
        width: LANE_WIDTH,
        successors: next.into_iter().collect(),
    }
}

fn arm(ids: [LaneletId; 3], from: (f64, f64), dir: (f64, f64)) -> Vec<Lanelet> {
    let at = |d: f64| (from.0 + dir.0 * d, from.1 + dir.1 * d);
    vec![
        straight(ids[0], at(0.0), at(ARM - JUNCTION), Some(ids[1])),
        straight(ids[1], at(ARM - JUNCTION), at(ARM + JUNCTION), Some(ids[2])),
        straight(ids[2], at(ARM + JUNCTION), at(2.0 * ARM), None),
    ]
}

/// Eastbound main road crossed by a northbound and a southbound lane.
pub fn junction_map() -> LaneNetwork {
    let h = 0.5 * LANE_WIDTH;
    let mut lanelets = arm(EAST, (-ARM, -h), (1.0, 0.0));
    lanelets.extend(arm(NORTH, (h, -ARM), (0.0, 1.0)));
    lanelets.extend(arm(SOUTH, (-h, ARM), (0.0, -1.0)));
    LaneNetwork {
        lanelets,
        signals: vec![],
    }
}

fn stop_sign(id: u64, lanelet: LaneletId) -> Signal {
    Signal {
        id,
        kind: SignalKind::StopSign,
        lanelet,
        position: STOP_LINE,
        schedule: None,
    }
}

/// Light that turns amber at `amber_at` seconds and stays red afterwards
/// for far longer than any episode.
fn light(id: u64, lanelet: LaneletId, amber_at: f64) -> Signal {
    Signal {
        id,
        kind: SignalKind::TrafficLight,
        lanelet,
        position: STOP_LINE,
        schedule: Some(PhaseSchedule {
            offset: 1000.0 - amber_at,
            phases: vec![(LightPhase::Green, 1000.0), (LightPhase::Amber, 3.0), (LightPhase::Red, 997.0)],
        }),
    }
}

fn always_green(id: u64, lanelet: LaneletId) -> Signal {
    Signal {
        id,
        kind: SignalKind::TrafficLight,
        lanelet,
        position: STOP_LINE,
        schedule: Some(PhaseSchedule {
            offset: 0.0,
            phases: vec![(LightPhase::Green, 1e6)],
        }),
    }
}

struct Builder {
    map: LaneNetwork,
    agents: Vec<ScenarioAgent>,
}

impl Builder {
    fn new() -> Self {
        Self {
            map: junction_map(),
            agents: vec![],
        }
    }

    fn add(&mut self, id: &str, route: [LaneletId; 3], s: f64, speed: f64, policy: PolicySpec) {
        let path = self.map.route(&route).expect("junction routes are connected").path;
        self.agents.push(ScenarioAgent {
            id: id.to_string(),
            initial: AgentState {
                position: path.point_at(s),
                heading: path.heading_at(s),
                speed,
                steering: 0.0,
                footprint: Footprint::CAR,
            },
            route: route.to_vec(),
            model: KinematicModel::default(),
            policy,
        });
    }

    fn finish(self, name: String, duration: f64, seed: u64) -> ScenarioFile {
        ScenarioFile {
            name,
            map: self.map,
            agents: self.agents,
            ego: 0,
            duration,
            timestep: DEFAULT_TIMESTEP,
            seed,
        }
    }
}

fn idm(v0: f64) -> PolicySpec {
    PolicySpec::IdmAgent(IdmParams {
        desired_speed: v0,
        ..IdmParams::default()
    })
}

/// Cruise, then brake at `decel` from `brake_at` seconds until `v_end`.
fn braking_script(v: f64, brake_at: f64, decel: f64, v_end: f64, duration: f64) -> PolicySpec {
    let dt = DEFAULT_TIMESTEP;
    let steps = (duration / dt).round() as usize;
    let mut speed = v;
    let cmds = (0..steps)
        .map(|k| {
            let t = k as f64 * dt;
            let accel = if t + 1e-9 >= brake_at && speed > v_end {
                -decel.min((speed - v_end) / dt)
            } else {
                0.0
            };
            speed += accel * dt;
            Command {
                accel,
                steering_rate: 0.0,
            }
        })
        .collect();
    PolicySpec::Replay(cmds)
}

fn band_speed(rng: &mut ChaCha8Rng, band: SpeedBand) -> f64 {
    match band {
        SpeedBand::High => rng.random_range(15.0..21.0),
        SpeedBand::Low => rng.random_range(5.0..9.5),
    }
}

const CAR_LENGTH: f64 = 4.5;

fn following(rng: &mut ChaCha8Rng, band: SpeedBand, duration: f64) -> Builder {
    let v = band_speed(rng, band);
    let mut b = Builder::new();
    let s_ego = rng.random_range(150.0..200.0);
    let ego = IdmParams {
        desired_speed: v,
        time_headway: rng.random_range(0.5..1.0),
        ..IdmParams::default()
    };
    b.add("ego", EAST, s_ego, v, PolicySpec::IdmAgent(ego));
    let lead_gap = (ego.min_spacing + v * ego.time_headway) * rng.random_range(0.9..1.1);
    let brake_at = rng.random_range(1.0..3.0);
    let decel = rng.random_range(6.0..8.0);
    let v_end = if rng.random_bool(0.6) { 0.0 } else { v * rng.random_range(0.2..0.5) };
    b.add(
        "lead",
        EAST,
        s_ego + CAR_LENGTH + lead_gap,
        v,
        braking_script(v, brake_at, decel, v_end, duration),
    );
    let mut s = s_ego;
    for k in 0..rng.random_range(1..=2) {
        // Tailgaters: they keep their own short headway.
        let p = IdmParams {
            desired_speed: v * rng.random_range(1.0..1.1),
            time_headway: rng.random_range(0.3..1.0),
            ..IdmParams::default()
        };
        s -= CAR_LENGTH + p.min_spacing + v * p.time_headway;
        b.add(&format!("follower{}", k + 1), EAST, s, v, PolicySpec::IdmAgent(p));
    }
    b
}

fn tight_follower(rng: &mut ChaCha8Rng, band: SpeedBand) -> Builder {
    let v = band_speed(rng, band);
    let mut b = Builder::new();
    let s_ego = rng.random_range(150.0..200.0);
    b.add("ego", EAST, s_ego, v, idm(v));
    // Creeps up on the ego slowly enough that it only has to notice it in
    // the last few decimeters, and early enough to touch within the horizon.
    let faster: f64 = rng.random_range(0.2..1.5);
    let gap = rng.random_range(0.5..(5.0 * faster).min(3.0));
    b.add("follower1", EAST, s_ego - CAR_LENGTH - gap, v + faster, idm(v + faster));
    b
}

fn stop_sign_crossing(rng: &mut ChaCha8Rng, band: SpeedBand) -> Builder {
    let v = band_speed(rng, band);
    let mut b = Builder::new();
    b.map.signals = vec![stop_sign(NORTH_SIGNAL, NORTH[0]), stop_sign(SOUTH_SIGNAL, SOUTH[0])];
    let waiting = rng.random_bool(if band == SpeedBand::High { 0.8 } else { 0.7 });
    // The ego reaches the crossing lanes after about t_conflict seconds:
    // soon when a car already waits at the line, so that accepting a short
    // gap is dangerous, later when one still has to arrive. A fast ego
    // clears the crossing quickly, so it comes a little later, still well
    // inside the waiting car's clearance time.
    let t_conflict = if waiting {
        match band {
            SpeedBand::High => rng.random_range(2.3..3.3),
            SpeedBand::Low => rng.random_range(1.5..2.6),
        }
    } else {
        rng.random_range(2.5..4.0)
    };
    let s_ego = EAST_MEETS_SOUTH - v * t_conflict;
    b.add("ego", EAST, s_ego, v, idm(v));
    if waiting {
        // No follower: the waiting car would yield to it and so, by
        // accident, to the ego. A lead already past the junction instead.
        // The car at rest pulls the mean initial speed down; fast bands get
        // moving company so they stay fast. A trailing car far enough back
        // that the waiting car would not yield to it.
        let high = band == SpeedBand::High;
        if high || rng.random_bool(0.8) {
            b.add("lead", EAST, EAST_MEETS_NORTH + rng.random_range(8.0..40.0), v, idm(v));
        }
        if high {
            b.add("trailing", EAST, s_ego - v * rng.random_range(5.0..7.0), v, idm(v));
        }
        b.add("waiting_north", NORTH, WAITING_AT_LINE, 0.0, idm(rng.random_range(8.0..12.0)));
    } else {
        if rng.random_bool(0.7) {
            let headway = rng.random_range(0.8..1.6);
            b.add("follower1", EAST, s_ego - CAR_LENGTH - 2.0 - v * headway, v, idm(v));
        }
        // Would meet the ego if it ran the stop sign.
        let va = v * rng.random_range(0.75..0.95);
        let t_a = t_conflict + rng.random_range(-0.3..0.3);
        b.add("crossing_south", SOUTH, EAST_MEETS_EAST_LANE_SOUTHBOUND - va * t_a, va, idm(va));
    }
    b
}

/// Center of a car standing right at a minor-road stop line.
const WAITING_AT_LINE: f64 = STOP_LINE - 0.5 * CAR_LENGTH - 0.5;

/// Arclength on the southbound route where it crosses the east lane.
const EAST_MEETS_EAST_LANE_SOUTHBOUND: f64 = ARM + 0.5 * LANE_WIDTH;

fn light_crossing(rng: &mut ChaCha8Rng, band: SpeedBand) -> Builder {
    let v = band_speed(rng, band);
    let mut b = Builder::new();
    let t_conflict = rng.random_range(3.0..5.5);
    let vo = v * rng.random_range(0.8..1.0);
    // Slightly ahead of the ego, so a late decision still meets it.
    let t_o = t_conflict + rng.random_range(-4.5..0.8) / vo;
    let s_other = EAST_MEETS_NORTH_LANE - vo * t_o;
    // Amber comes while the crossing car can still stop comfortably, but
    // only by a margin it loses if it notices the amber late.
    let p = IdmParams::default();
    let stop_dist = vo * vo / (2.0 * p.comfort_decel) + 0.5 * p.min_spacing;
    let dist_at_amber = stop_dist + 0.5 * CAR_LENGTH + vo * rng.random_range(0.1..0.9);
    let amber_at = ((STOP_LINE - s_other - dist_at_amber) / vo).max(0.2);
    b.map.signals = vec![light(NORTH_SIGNAL, NORTH[0], amber_at), always_green(EAST_SIGNAL, EAST[0])];
    let s_ego = EAST_MEETS_NORTH - v * t_conflict;
    b.add("ego", EAST, s_ego, v, idm(v));
    b.add("crossing_north", NORTH, s_other, vo, idm(vo));
    if rng.random_bool(0.6) {
        let headway = rng.random_range(0.8..1.6);
        b.add("follower1", EAST, s_ego - CAR_LENGTH - 2.0 - v * headway, v, idm(v));
    }
    b
}

/// Arclength on the northbound route where it crosses the east lane.
const EAST_MEETS_NORTH_LANE: f64 = ARM - 0.5 * LANE_WIDTH;

fn unsignalized(rng: &mut ChaCha8Rng, band: SpeedBand) -> Builder {
    let v = band_speed(rng, band);
    let mut b = Builder::new();
    let t_conflict = rng.random_range(3.5..6.0);
    b.add("ego", EAST, EAST_MEETS_NORTH - v * t_conflict, v, idm(v));
    let vo = v * rng.random_range(0.8..1.1);
    // Usually passes behind the ego, by less than an aggressive driver would
    // make up on the approach; sometimes just ahead of it, so the ego has to
    // brake for it in the nominal run.
    let behind = |rng: &mut ChaCha8Rng, t: f64, vo: f64| {
        let catch_up = 0.3 * t - 0.035 * (vo - 6.0) + 0.1;
        t + catch_up - rng.random_range(0.1..0.5)
    };
    if rng.random_bool(0.55) {
        // At low speed the window a prompt driver escapes and a slow one
        // does not is about a sixth of a second wide.
        let ahead = match band {
            SpeedBand::High => rng.random_range(0.35..0.65),
            SpeedBand::Low => rng.random_range(0.45..0.62),
        };
        let t_o = t_conflict - ahead;
        b.add("crossing_north", NORTH, EAST_MEETS_NORTH_LANE - vo * t_o, vo, idm(vo));
        if rng.random_bool(if band == SpeedBand::High { 0.7 } else { 0.4 }) {
            let t_south = t_conflict - LANE_WIDTH / v;
            let vs = v * rng.random_range(0.8..1.1);
            let t_s = behind(rng, t_south, vs);
            b.add("crossing_south", SOUTH, EAST_MEETS_EAST_LANE_SOUTHBOUND - vs * t_s, vs, idm(vs));
        }
    } else {
        let t_o = behind(rng, t_conflict, vo);
        b.add("crossing_north", NORTH, EAST_MEETS_NORTH_LANE - vo * t_o, vo, idm(vo));
    }
    b
}

fn candidate(rng: &mut ChaCha8Rng, family: Family, band: SpeedBand, duration: f64) -> Builder {
    match family {
        Family::Following => following(rng, band, duration),
        Family::TightFollower => tight_follower(rng, band),
        Family::StopSign => stop_sign_crossing(rng, band),
        Family::TrafficLight => light_crossing(rng, band),
        Family::Unsignalized => unsignalized(rng, band),
    }
}

/// Family mix of one speed band, in generation order.
pub fn family_plan(per_band: usize) -> Vec<Family> {
    let shares = [
        (Family::Following, 8),
        (Family::TightFollower, 7),
        (Family::StopSign, 12),
        (Family::TrafficLight, 12),
        (Family::Unsignalized, 11),
    ];
    let total: usize = shares.iter().map(|(_, n)| n).sum();
    let mut plan = Vec::with_capacity(per_band);
    for (f, n) in shares {
        let k = (n * per_band + total / 2) / total;
        plan.extend(std::iter::repeat_n(f, k));
    }
    plan.truncate(per_band);
    while plan.len() < per_band {
        plan.push(Family::Following);
    }
    plan
}

const MAX_ATTEMPTS: usize = 200;

/// Deterministic in `cfg`. High-speed episodes come first.
pub fn generate_suite(cfg: &SuiteConfig) -> Vec<SuiteEpisode> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(2 * cfg.per_band);
    for band in [SpeedBand::High, SpeedBand::Low] {
        let tag = match band {
            SpeedBand::High => "hs",
            SpeedBand::Low => "ls",
        };
        for (i, family) in family_plan(cfg.per_band).into_iter().enumerate() {
            for _ in 0..MAX_ATTEMPTS {
                let name = format!("{tag}-{:02}-{family}", i + 1);
                let drawn = candidate(&mut rng, family, band, cfg.duration).finish(name, cfg.duration, cfg.seed);
                // Simulate what the written file holds, so it replays exactly.
                let scenario = parse_native(write_scenario(&drawn).as_bytes()).expect("written scenarios parse");
                let Ok(episode) = simulate(&scenario, &PolicyAssignment::from_scenario(&scenario), scenario.seed, None)
                else {
                    continue;
                };
                let high = episode.mean_initial_speed() > SPEED_SPLIT;
                if high != (band == SpeedBand::High) || !check_contacts(&episode).is_empty() {
                    continue;
                }
                out.push(SuiteEpisode {
                    family,
                    scenario,
                    episode,
                });
                break;
            }
        }
    }
    out
}

/// Two cars in one lane: the ego leads at `speed` and brakes at 6 m/s² from
/// t = 2 s to a stop; an IDM follower keeps `headway` seconds behind.
pub fn two_car_fixture(speed: f64, headway: f64) -> ScenarioFile {
    let duration = 8.0;
    let mut b = Builder::new();
    b.add("ego", EAST, 200.0, speed, braking_script(speed, 2.0, 6.0, 0.0, duration));
    b.add(
        "follower",
        EAST,
        200.0 - CAR_LENGTH - 2.0 - speed * headway,
        speed,
        idm(speed),
    );
    b.finish("two_car".into(), duration, 7)
}

/// The ego crosses a stop-sign approach where a northbound car waits at
/// its line; the ego arrives after `ego_arrival` seconds.
pub fn stop_sign_fixture(ego_speed: f64, ego_arrival: f64) -> ScenarioFile {
    let mut b = Builder::new();
    b.map.signals = vec![stop_sign(NORTH_SIGNAL, NORTH[0])];
    b.add("ego", EAST, EAST_MEETS_NORTH - ego_speed * ego_arrival, ego_speed, idm(ego_speed));
    b.add("waiting_north", NORTH, WAITING_AT_LINE, 0.0, idm(10.0));
    b.finish("stop_sign".into(), 8.0, 11)
}

/// Episode obtained by simulating `scenario` nominally.
pub fn nominal_episode(scenario: &ScenarioFile) -> Episode {
    simulate(scenario, &PolicyAssignment::from_scenario(scenario), scenario.seed, None)
        .expect("fixture scenarios simulate")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_sizes() {
        assert_eq!(family_plan(50).len(), 50);
        assert_eq!(family_plan(3).len(), 3);
        assert_eq!(family_plan(50).iter().filter(|f| **f == Family::Following).count(), 8);
    }

    #[test]
    fn map_is_valid_and_routes_cross() {
        let m = junction_map();
        m.validate().unwrap();
        let east = m.route(&EAST).unwrap().path;
        let north = m.route(&NORTH).unwrap().path;
        let south = m.route(&SOUTH).unwrap().path;
        let p = east.point_at(EAST_MEETS_NORTH);
        assert!((north.point_at(EAST_MEETS_NORTH_LANE) - p).norm() < 1e-9);
        let q = east.point_at(EAST_MEETS_SOUTH);
        assert!((south.point_at(EAST_MEETS_EAST_LANE_SOUTHBOUND) - q).norm() < 1e-9);
    }

    #[test]
    fn braking_script_stops() {
        let PolicySpec::Replay(c) = braking_script(10.0, 1.0, 5.0, 0.0, 5.0) else {
            unreachable!()
        };
        let v_end: f64 = 10.0 + c.iter().map(|c| c.accel * DEFAULT_TIMESTEP).sum::<f64>();
        assert!(v_end.abs() < 1e-9);
        assert!(c[..10].iter().all(|c| c.accel == 0.0));
    }

    #[test]
    fn small_suite_is_split_and_collision_free() {
        let s = generate_suite(&SuiteConfig {
            per_band: 5,
            ..SuiteConfig::default()
        });
        assert_eq!(s.len(), 10);
        for (i, e) in s.iter().enumerate() {
            assert_eq!(e.episode.mean_initial_speed() > SPEED_SPLIT, i < 5);
            assert!(check_contacts(&e.episode).is_empty());
        }
    }
}
