use super::native::check_version;
use super::text::{canon_f64, decode_utf8, read_map_record, read_model, read_policy, records, write_map, write_model, write_policy, Line};
use super::EPISODE_VERSION;
use crate::agents::PolicySpec;
use crate::error::{ModelError, ParseError};
use crate::geometry::Vec2;
use crate::model::{AgentRecord, AgentState, Command, Episode, Footprint, LaneNetwork, SignalState, Truncation, TruncationReason};
use crate::sim::KinematicModel;

/// Serializes a valid episode (constant footprint per agent).
pub fn write_episode(e: &Episode) -> Vec<u8> {
    let mut out = format!("version={EPISODE_VERSION}\n");
    let mut head = Line::new("episode")
        .text("id", &e.id)
        .f("dt", e.dt)
        .raw("horizon", e.horizon)
        .text("ego", e.agents.get(e.ego).map(|a| a.id.as_str()).unwrap_or(""));
    if let Some(t) = &e.truncation {
        head = head
            .raw("truncation", t.reason.as_str())
            .raw("requested_horizon", t.requested_horizon);
    }
    head.push_to(&mut out);
    write_map(&mut out, &e.map);
    for (a, traj) in e.agents.iter().zip(&e.trajectories) {
        let fp = traj.first().map(|s| s.footprint).unwrap_or(Footprint::CAR);
        let line = Line::new("agent")
            .text("id", &a.id)
            .f("length", fp.length)
            .f("width", fp.width)
            .ids("route", &a.route);
        write_model(write_policy(line, &a.policy), &a.model).push_to(&mut out);
    }
    for k in 0..=e.horizon {
        let sig: Vec<&str> = e
            .signal_states
            .get(k)
            .map(|v| v.iter().map(|s| s.as_str()).collect())
            .unwrap_or_default();
        Line::new("step").raw("k", k).raw("signals", sig.join(",")).push_to(&mut out);
        for (a, traj) in e.agents.iter().zip(&e.trajectories) {
            if let Some(s) = traj.get(k) {
                Line::new("state")
                    .raw("k", k)
                    .text("agent", &a.id)
                    .f("x", s.position.x)
                    .f("y", s.position.y)
                    .f("heading", s.heading)
                    .f("speed", s.speed)
                    .f("steering", s.steering)
                    .push_to(&mut out);
            }
        }
    }
    out.into_bytes()
}

fn parse_reason(s: &str) -> Option<TruncationReason> {
    [
        TruncationReason::AllInContact,
        TruncationReason::AllOffMap,
        TruncationReason::AllInContactOrOffMap,
    ]
    .into_iter()
    .find(|r| r.as_str() == s)
}

pub fn parse_episode(bytes: &[u8]) -> Result<Episode, ParseError> {
    let text = decode_utf8(bytes)?;
    let mut recs = records(text)?.into_iter();
    let first = recs.next();
    check_version(first.as_ref(), EPISODE_VERSION)?;

    let mut e = Episode {
        id: String::new(),
        dt: 0.0,
        horizon: 0,
        map: LaneNetwork::default(),
        agents: vec![],
        ego: 0,
        trajectories: vec![],
        signal_states: vec![],
        truncation: None,
    };
    let mut ego_id = None;
    let mut footprints = Vec::new();
    for mut r in recs {
        if read_map_record(&mut r, &mut e.map)? {
            r.finish()?;
            continue;
        }
        match r.name {
            "episode" => {
                if ego_id.is_some() {
                    return Err(r.err("duplicate episode record"));
                }
                e.id = r.text("id")?;
                e.dt = r.f64("dt")?;
                e.horizon = r.usize("horizon")?;
                ego_id = Some(r.text("ego")?);
                if let Some(reason) = r.opt("truncation") {
                    let reason = parse_reason(reason).ok_or_else(|| r.err(format!("unknown truncation {reason:?}")))?;
                    e.truncation = Some(Truncation {
                        reason,
                        requested_horizon: r.usize("requested_horizon")?,
                    });
                }
            }
            "agent" => {
                let id = r.text("id")?;
                footprints.push(Footprint {
                    length: r.f64("length")?,
                    width: r.f64("width")?,
                });
                let route = r.ids("route")?;
                let policy = read_policy(&mut r)?;
                let model = read_model(&mut r)?;
                e.agents.push(AgentRecord { id, model, route, policy });
                e.trajectories.push(Vec::new());
            }
            "step" => {
                let k = r.usize("k")?;
                if k != e.signal_states.len() {
                    return Err(r.err(format!("step {k} out of order")));
                }
                let v = r.req("signals")?;
                let states = v
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<SignalState>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|err| r.err(err.to_string()))?;
                e.signal_states.push(states);
            }
            "state" => {
                let k = r.usize("k")?;
                let id = r.text("agent")?;
                let i = e
                    .agents
                    .iter()
                    .position(|a| a.id == id)
                    .ok_or_else(|| r.err(format!("state for unknown agent {id:?}")))?;
                if k + 1 != e.signal_states.len() || e.trajectories[i].len() != k {
                    return Err(r.err(format!("state k={k} for {id:?} out of order")));
                }
                e.trajectories[i].push(AgentState {
                    position: Vec2::new(r.f64("x")?, r.f64("y")?),
                    heading: r.f64("heading")?,
                    speed: r.f64("speed")?,
                    steering: r.f64("steering")?,
                    footprint: footprints[i],
                });
            }
            other => return Err(r.err(format!("unknown record {other:?}"))),
        }
        r.finish()?;
    }
    let ego_id = ego_id.ok_or(ParseError::Syntax {
        line: 1,
        message: "missing episode record".into(),
    })?;
    e.ego = e.agents.iter().position(|a| a.id == ego_id).ok_or_else(|| ParseError::Semantic {
        element: "episode".into(),
        source: ModelError::Invalid(format!("ego {ego_id:?} is not an agent")),
    })?;
    let violations = crate::model::validate_episode(&e);
    if let Some(v) = violations.first() {
        return Err(ParseError::Semantic {
            element: format!("episode {}", e.id),
            source: ModelError::Invalid(format!("{}: {}", v.field, v.message)),
        });
    }
    e.map.validate().map_err(|source| ParseError::Semantic {
        element: "map".into(),
        source,
    })?;
    Ok(e)
}

fn canon_cmd(c: &Command) -> Command {
    Command {
        accel: canon_f64(c.accel),
        steering_rate: canon_f64(c.steering_rate),
    }
}

fn canon_model(m: &KinematicModel) -> KinematicModel {
    KinematicModel {
        wheelbase: canon_f64(m.wheelbase),
        accel_min: canon_f64(m.accel_min),
        accel_max: canon_f64(m.accel_max),
        steer_rate_min: canon_f64(m.steer_rate_min),
        steer_rate_max: canon_f64(m.steer_rate_max),
        steer_max: canon_f64(m.steer_max),
        speed_max: canon_f64(m.speed_max),
    }
}

fn canon_policy(p: &PolicySpec) -> PolicySpec {
    match p {
        PolicySpec::Replay(c) => PolicySpec::Replay(c.iter().map(canon_cmd).collect()),
        PolicySpec::BestResponse(plan) => {
            let mut plan = plan.clone();
            plan.segments = plan.segments.iter().map(canon_cmd).collect();
            PolicySpec::BestResponse(plan)
        }
        other => {
            let mut q = *other.idm_params().expect("IDM family");
            for v in [
                &mut q.desired_speed,
                &mut q.time_headway,
                &mut q.min_spacing,
                &mut q.max_accel,
                &mut q.comfort_decel,
                &mut q.exponent,
                &mut q.aggressiveness,
            ] {
                *v = canon_f64(*v);
            }
            other.with_idm_params(q)
        }
    }
}

/// The episode a log denotes: every float rounded as `write_episode` writes
/// it. `parse_episode(write_episode(e)) == canonicalize_episode(e)`.
pub fn canonicalize_episode(e: &Episode) -> Episode {
    let mut c = e.clone();
    c.dt = canon_f64(c.dt);
    for l in &mut c.map.lanelets {
        l.width = canon_f64(l.width);
        for p in &mut l.centerline {
            *p = Vec2::new(canon_f64(p.x), canon_f64(p.y));
        }
    }
    for s in &mut c.map.signals {
        s.position = canon_f64(s.position);
        if let Some(sch) = &mut s.schedule {
            sch.offset = canon_f64(sch.offset);
            for (_, d) in &mut sch.phases {
                *d = canon_f64(*d);
            }
        }
    }
    for a in &mut c.agents {
        a.model = canon_model(&a.model);
        a.policy = canon_policy(&a.policy);
    }
    for t in &mut c.trajectories {
        for s in t.iter_mut() {
            s.position = Vec2::new(canon_f64(s.position.x), canon_f64(s.position.y));
            s.heading = canon_f64(s.heading);
            s.speed = canon_f64(s.speed);
            s.steering = canon_f64(s.steering);
            s.footprint = Footprint {
                length: canon_f64(s.footprint.length),
                width: canon_f64(s.footprint.width),
            };
        }
    }
    c
}
