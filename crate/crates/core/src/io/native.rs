use super::text::{decode_utf8, read_map_record, read_model, read_policy, records, write_map, write_model, write_policy, Line};
use super::{ScenarioAgent, ScenarioFile, SCENARIO_VERSION};
use crate::error::ParseError;
use crate::geometry::Vec2;
use crate::model::{AgentState, Footprint, LaneNetwork};

pub fn write_scenario(s: &ScenarioFile) -> String {
    let mut out = format!("version={SCENARIO_VERSION}\n");
    Line::new("scenario")
        .text("name", &s.name)
        .f("duration", s.duration)
        .f("timestep", s.timestep)
        .raw("seed", s.seed)
        .text("ego", s.agents.get(s.ego).map(|a| a.id.as_str()).unwrap_or(""))
        .push_to(&mut out);
    write_map(&mut out, &s.map);
    for a in &s.agents {
        let st = &a.initial;
        let line = Line::new("agent")
            .text("id", &a.id)
            .f("x", st.position.x)
            .f("y", st.position.y)
            .f("heading", st.heading)
            .f("speed", st.speed)
            .f("steering", st.steering)
            .f("length", st.footprint.length)
            .f("width", st.footprint.width)
            .ids("route", &a.route);
        write_model(write_policy(line, &a.policy), &a.model).push_to(&mut out);
    }
    out
}

pub(super) fn check_version(first: Option<&super::text::Record<'_>>, expected: &str) -> Result<(), ParseError> {
    match first {
        Some(r) if r.name == format!("version={expected}") => Ok(()),
        Some(r) => Err(r.err(format!("expected version={expected}"))),
        None => Err(ParseError::Syntax {
            line: 1,
            message: "empty input".into(),
        }),
    }
}

pub fn parse_native(bytes: &[u8]) -> Result<ScenarioFile, ParseError> {
    let text = decode_utf8(bytes)?;
    let mut recs = records(text)?.into_iter();
    let first = recs.next();
    check_version(first.as_ref(), SCENARIO_VERSION)?;

    let mut header = None;
    let mut map = LaneNetwork::default();
    let mut agents = Vec::new();
    for mut r in recs {
        if read_map_record(&mut r, &mut map)? {
            r.finish()?;
            continue;
        }
        match r.name {
            "scenario" => {
                if header.is_some() {
                    return Err(r.err("duplicate scenario record"));
                }
                header = Some((r.text("name")?, r.f64("duration")?, r.f64("timestep")?, r.u64("seed")?, r.text("ego")?));
            }
            "agent" => {
                let id = r.text("id")?;
                let initial = AgentState {
                    position: Vec2::new(r.f64("x")?, r.f64("y")?),
                    heading: r.f64("heading")?,
                    speed: r.f64("speed")?,
                    steering: r.f64_or("steering", 0.0)?,
                    footprint: Footprint {
                        length: r.f64_or("length", Footprint::CAR.length)?,
                        width: r.f64_or("width", Footprint::CAR.width)?,
                    },
                };
                let route = r.ids("route")?;
                let policy = read_policy(&mut r)?;
                let model = read_model(&mut r)?;
                agents.push(ScenarioAgent {
                    id,
                    initial,
                    route,
                    model,
                    policy,
                });
            }
            other => return Err(r.err(format!("unknown record {other:?}"))),
        }
        r.finish()?;
    }
    let (name, duration, timestep, seed, ego_id) = header.ok_or(ParseError::Syntax {
        line: 1,
        message: "missing scenario record".into(),
    })?;
    let ego = agents.iter().position(|a: &ScenarioAgent| a.id == ego_id).unwrap_or(usize::MAX);
    let s = ScenarioFile {
        name,
        map,
        agents,
        ego,
        duration,
        timestep,
        seed,
    };
    s.validate()?;
    Ok(s)
}
