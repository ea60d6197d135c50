use cfmargin::agents::{IdmParams, PolicySpec};
use cfmargin::error::MarginError;
use cfmargin::geometry::Vec2;
use cfmargin::io::{ScenarioAgent, ScenarioFile};
use cfmargin::margin::{best_response, lower_bound_margin, safety_margin, upper_bound_margin, EgoMode, MarginConfig};
use cfmargin::model::{AgentState, CounterfactualKind, Episode, Footprint, LaneNetwork, Lanelet};
use cfmargin::sim::KinematicModel;
use cfmargin::suite::{nominal_episode, stop_sign_fixture, two_car_fixture};

use CounterfactualKind::*;

fn cfg() -> MarginConfig {
    MarginConfig {
        reps: 10,
        ..MarginConfig::default()
    }
}

fn car(id: &str, x: f64, speed: f64, policy: PolicySpec) -> ScenarioAgent {
    ScenarioAgent {
        id: id.into(),
        initial: AgentState {
            position: Vec2::new(x, 0.0),
            heading: 0.0,
            speed,
            steering: 0.0,
            footprint: Footprint::CAR,
        },
        route: vec![1],
        model: KinematicModel::default(),
        policy,
    }
}

/// A stationary ego boxed in by a parked car 2 m ahead and a follower
/// approaching at 15 m/s.
fn trap() -> Episode {
    let map = LaneNetwork {
        lanelets: vec![Lanelet {
            id: 1,
            centerline: vec![Vec2::new(0.0, 0.0), Vec2::new(400.0, 0.0)],
            width: 3.5,
            successors: vec![],
        }],
        signals: vec![],
    };
    let idm = |v0: f64| {
        PolicySpec::IdmAgent(IdmParams {
            desired_speed: v0,
            ..IdmParams::default()
        })
    };
    nominal_episode(&ScenarioFile {
        name: "trap".into(),
        map,
        agents: vec![
            car("ego", 100.0, 0.0, idm(10.0)),
            car("parked", 106.5, 0.0, PolicySpec::Replay(vec![])),
            car("follower", 70.0, 15.0, idm(15.0)),
        ],
        ego: 0,
        duration: 6.0,
        timestep: 0.1,
        seed: 3,
    })
}

#[test]
fn hard_brake_lead_escapes_a_distracted_follower() {
    let e = nominal_episode(&two_car_fixture(15.0, 1.0));
    let cfg = cfg();
    let lo = lower_bound_margin(&e, Distraction, &cfg).unwrap();
    let hi = upper_bound_margin(&e, Distraction, &cfg).unwrap();
    let m = lo.margin.expect("replayed braking is eventually rear-ended");
    assert!(m > 0.0 && m < 5.0);
    assert!(hi.censored(), "an evasive plan exists: {:?}", hi.margin);

    let mut anchored = 0;
    for rep in 0..cfg.reps {
        match best_response(&e, Distraction, 5.0, rep, &cfg, false) {
            Ok(b) => {
                anchored += 1;
                assert!(!b.collided);
                assert!(b.plan.is_some(), "replay collides, so a primitive must win");
                assert_eq!(b.failed, 0);
                assert_eq!(b.evaluated, 1729);
                assert_eq!(b.severity.p_mais2plus, 0.0);
                assert_eq!(b.trajectory.len(), e.horizon + 1);

                let quick = best_response(&e, Distraction, 5.0, rep, &cfg, true).unwrap();
                assert!(!quick.collided);
                assert!(quick.evaluated <= b.evaluated);
            }
            Err(MarginError::NoAnchor) => {}
            Err(other) => panic!("{other}"),
        }
    }
    assert!(anchored > 0);
}

#[test]
fn boxed_in_ego_cannot_escape() {
    let e = trap();
    let cfg = cfg();
    for kind in [Distraction, Unseen] {
        let lo = lower_bound_margin(&e, kind, &cfg).unwrap();
        let hi = upper_bound_margin(&e, kind, &cfg).unwrap();
        assert!(lo.margin.is_some(), "{kind:?}");
        assert_eq!(lo.margin, hi.margin, "{kind:?}");
    }
    let b = best_response(&e, Unseen, Unseen.max_intensity(), 0, &cfg, false).unwrap();
    assert!(b.collided);
    assert!(b.severity.p_mais2plus > 0.0);
    assert!(b.severity.p_fatal <= b.severity.p_mais3plus && b.severity.p_mais3plus <= b.severity.p_mais2plus);
}

#[test]
fn best_response_needs_a_colliding_anchor() {
    let e = trap();
    assert!(matches!(best_response(&e, Unseen, 0.0, 0, &cfg(), true), Err(MarginError::NoAnchor)));
}

#[test]
fn illegal_precedence_at_a_stop_sign() {
    let e = nominal_episode(&stop_sign_fixture(10.0, 3.0));
    let cfg = cfg();
    let lo = lower_bound_margin(&e, IllegalPrecedence, &cfg).unwrap();
    let m = lo.margin.unwrap();
    // One violating rep in ten already crosses eps.
    assert!(m <= IllegalPrecedence.max_intensity() / 10.0, "{m}");
    let zero = lo.grid_curve().next().unwrap();
    assert_eq!((zero.intensity, zero.collisions), (0.0, 0));
    let full = lo.grid_curve().last().unwrap();
    assert_eq!(full.intensity, 1.0);
    assert_eq!(full.collisions, full.reps, "a certain violation always collides here");

    // Ego arriving after the waiting car has cleared finds no conflict.
    let late = nominal_episode(&stop_sign_fixture(10.0, 7.5));
    assert!(lower_bound_margin(&late, IllegalPrecedence, &cfg).unwrap().censored());
}

#[test]
fn lower_bound_never_exceeds_upper_bound() {
    let cfg = cfg();
    for e in [
        nominal_episode(&two_car_fixture(15.0, 1.0)),
        nominal_episode(&stop_sign_fixture(10.0, 3.0)),
        trap(),
    ] {
        for kind in CounterfactualKind::ALL {
            let lo = lower_bound_margin(&e, kind, &cfg).unwrap().margin_or_inf();
            let hi = upper_bound_margin(&e, kind, &cfg).unwrap().margin_or_inf();
            assert!(lo <= hi, "{} {kind:?}: {lo} > {hi}", e.id);
        }
    }
}

#[test]
fn margins_are_reproducible() {
    let e = nominal_episode(&stop_sign_fixture(10.0, 3.0));
    let cfg = cfg();
    let a = safety_margin(&e, Aggressiveness, EgoMode::NonReactive, &cfg).unwrap();
    let b = safety_margin(&e, Aggressiveness, EgoMode::NonReactive, &cfg).unwrap();
    assert_eq!(a, b);
    let other = MarginConfig { seed: 99, ..cfg };
    let c = safety_margin(&e, IllegalPrecedence, EgoMode::NonReactive, &other).unwrap();
    assert!(c.curve.iter().all(|p| p.failures == 0));
}

#[test]
fn invalid_configs_are_rejected() {
    let e = nominal_episode(&two_car_fixture(15.0, 1.0));
    for bad in [
        MarginConfig { eps: 0.0, ..cfg() },
        MarginConfig { grid: 1, ..cfg() },
        MarginConfig { reps: 0, ..cfg() },
    ] {
        assert!(matches!(lower_bound_margin(&e, Unseen, &bad), Err(MarginError::Config(_))));
    }
}
