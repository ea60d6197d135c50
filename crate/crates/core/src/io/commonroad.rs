//! Read-only subset of CommonRoad XML: lanelets, obstacles and their
//! initial states. Element names are matched without namespaces.

use roxmltree::{Document, Node};

use super::text::decode_utf8;
use super::{Parsed, ScenarioAgent, ScenarioFile};
use crate::agents::{IdmParams, PolicySpec};
use crate::error::{ModelError, ParseError};
use crate::geometry::{Polyline, Vec2};
use crate::model::{AgentState, Footprint, LaneNetwork, Lanelet, LaneletId, DEFAULT_TIMESTEP};
use crate::sim::KinematicModel;

const DEFAULT_DURATION: f64 = 10.0;
const MAX_ROUTE_LANELETS: usize = 32;
/// Floor on the desired speed given to imported dynamic obstacles, m/s.
const MIN_DESIRED_SPEED: f64 = 5.0;

fn child<'a, 'i>(n: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    n.children().find(|c| c.is_element() && c.tag_name().name() == name)
}

fn children<'a, 'i: 'a>(n: Node<'a, 'i>, name: &'a str) -> impl Iterator<Item = Node<'a, 'i>> + 'a {
    n.children().filter(move |c| c.is_element() && c.tag_name().name() == name)
}

fn semantic(element: impl Into<String>, message: impl Into<String>) -> ParseError {
    ParseError::Semantic {
        element: element.into(),
        source: ModelError::Invalid(message.into()),
    }
}

fn number(n: Node<'_, '_>, what: &str) -> Result<f64, ParseError> {
    n.text()
        .and_then(|t| t.trim().parse().ok())
        .ok_or_else(|| semantic(what, format!("expected a number in <{}>", n.tag_name().name())))
}

/// `<exact>` or the midpoint of `<intervalStart>`/`<intervalEnd>`.
fn value(n: Node<'_, '_>, what: &str) -> Result<f64, ParseError> {
    if let Some(e) = child(n, "exact") {
        return number(e, what);
    }
    match (child(n, "intervalStart"), child(n, "intervalEnd")) {
        (Some(a), Some(b)) => Ok(0.5 * (number(a, what)? + number(b, what)?)),
        _ => number(n, what),
    }
}

fn point(n: Node<'_, '_>, what: &str) -> Result<Vec2, ParseError> {
    let x = child(n, "x").ok_or_else(|| semantic(what, "point without <x>"))?;
    let y = child(n, "y").ok_or_else(|| semantic(what, "point without <y>"))?;
    Ok(Vec2::new(number(x, what)?, number(y, what)?))
}

fn bound(lane: Node<'_, '_>, name: &str, what: &str) -> Result<Vec<Vec2>, ParseError> {
    let b = child(lane, name).ok_or_else(|| semantic(what, format!("missing <{name}>")))?;
    children(b, "point").map(|p| point(p, what)).collect()
}

fn parse_lanelet(n: Node<'_, '_>) -> Result<Lanelet, ParseError> {
    let id_s = n.attribute("id").unwrap_or("");
    let what = format!("lanelet {id_s}");
    let id: LaneletId = id_s.parse().map_err(|_| semantic(&what, "id must be an unsigned integer"))?;
    let left = bound(n, "leftBound", &what)?;
    let right = bound(n, "rightBound", &what)?;
    if left.len() != right.len() || left.len() < 2 {
        return Err(semantic(&what, "bounds need the same number (>= 2) of points"));
    }
    let centerline: Vec<Vec2> = left.iter().zip(&right).map(|(l, r)| (*l + *r) * 0.5).collect();
    let width = left.iter().zip(&right).map(|(l, r)| (*l - *r).norm()).sum::<f64>() / left.len() as f64;
    let successors = children(n, "successor")
        .map(|s| {
            s.attribute("ref")
                .and_then(|r| r.parse().ok())
                .ok_or_else(|| semantic(&what, "successor needs a numeric ref"))
        })
        .collect::<Result<_, _>>()?;
    Ok(Lanelet {
        id,
        centerline,
        width,
        successors,
    })
}

fn is_obstacle(name: &str) -> bool {
    matches!(name, "obstacle" | "dynamicObstacle" | "staticObstacle")
}

/// Whether the obstacle moves: CommonRoad 2020 element names, or the older
/// `<role>` child.
fn is_dynamic(n: Node<'_, '_>) -> bool {
    match n.tag_name().name() {
        "dynamicObstacle" => true,
        "staticObstacle" => false,
        _ => child(n, "role").and_then(|r| r.text()).map(|t| t.trim() == "dynamic").unwrap_or(true),
    }
}

/// Lanelet whose centerline passes closest to `p`, then first successors.
fn infer_route(map: &LaneNetwork, p: Vec2) -> Option<Vec<LaneletId>> {
    let start = map
        .lanelets
        .iter()
        .filter_map(|l| {
            let line = Polyline::new(l.centerline.clone())?;
            let proj = line.project(p);
            let outside = (-proj.s).max(proj.s - line.length()).max(0.0);
            Some((proj.lateral.abs() + outside, l.id))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))?
        .1;
    let mut route = vec![start];
    while route.len() < MAX_ROUTE_LANELETS {
        let last = map.lanelet(*route.last()?)?;
        match last.successors.iter().find(|s| !route.contains(s)) {
            Some(next) => route.push(*next),
            None => break,
        }
    }
    Some(route)
}

fn parse_obstacle(n: Node<'_, '_>, map: &LaneNetwork) -> Result<ScenarioAgent, ParseError> {
    let id = n.attribute("id").unwrap_or("").to_string();
    let what = format!("obstacle {id}");
    if id.is_empty() {
        return Err(semantic(&what, "missing id"));
    }
    let init = child(n, "initialState").ok_or_else(|| semantic(&what, "missing <initialState>"))?;
    let pos_node = child(init, "position").ok_or_else(|| semantic(&what, "initialState without <position>"))?;
    let position = match child(pos_node, "point") {
        Some(p) => point(p, &what)?,
        None => return Err(semantic(&what, "only point positions are supported")),
    };
    let heading = child(init, "orientation").map(|o| value(o, &what)).transpose()?.unwrap_or(0.0);
    let dynamic = is_dynamic(n);
    let speed = if dynamic {
        child(init, "velocity").map(|v| value(v, &what)).transpose()?.unwrap_or(0.0).max(0.0)
    } else {
        0.0
    };
    let footprint = match child(n, "shape").and_then(|s| child(s, "rectangle")) {
        Some(r) => Footprint {
            length: child(r, "length").map(|l| number(l, &what)).transpose()?.unwrap_or(Footprint::CAR.length),
            width: child(r, "width").map(|w| number(w, &what)).transpose()?.unwrap_or(Footprint::CAR.width),
        },
        None => Footprint::CAR,
    };
    let route = infer_route(map, position).ok_or_else(|| semantic(&what, "no lanelet to follow"))?;
    let policy = if dynamic {
        PolicySpec::IdmAgent(IdmParams {
            desired_speed: speed.max(MIN_DESIRED_SPEED),
            ..IdmParams::default()
        })
    } else {
        PolicySpec::Replay(vec![])
    };
    Ok(ScenarioAgent {
        id,
        initial: AgentState {
            position,
            heading,
            speed,
            steering: 0.0,
            footprint,
        },
        route,
        model: KinematicModel::default(),
        policy,
    })
}

/// Lanelets become the map, obstacles the agents (dynamic ones driven by
/// IDM), and the first dynamic obstacle the ego.
pub fn parse_commonroad(bytes: &[u8]) -> Result<Parsed, ParseError> {
    let text = decode_utf8(bytes)?;
    let doc = Document::parse(text).map_err(|e| {
        let pos = e.pos();
        ParseError::Xml {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    let mut warnings = Vec::new();
    let mut map = LaneNetwork::default();
    let mut obstacles = Vec::new();
    for c in root.children().filter(|c| c.is_element()) {
        let name = c.tag_name().name();
        if name == "lanelet" {
            map.lanelets.push(parse_lanelet(c)?);
        } else if is_obstacle(name) {
            obstacles.push(c);
        } else {
            warnings.push(format!("skipped <{name}> at byte {}", c.range().start));
        }
    }
    map.validate().map_err(|source| ParseError::Semantic {
        element: "map".into(),
        source,
    })?;
    let agents = obstacles
        .iter()
        .map(|o| parse_obstacle(*o, &map))
        .collect::<Result<Vec<_>, _>>()?;
    let ego = obstacles.iter().position(|o| is_dynamic(*o)).unwrap_or(0);
    let timestep = root
        .attribute("timeStepSize")
        .map(|t| t.parse().map_err(|_| semantic("commonRoad", "timeStepSize must be a number")))
        .transpose()?
        .unwrap_or(DEFAULT_TIMESTEP);
    let scenario = ScenarioFile {
        name: root.attribute("benchmarkID").unwrap_or("commonroad").to_string(),
        map,
        agents,
        ego,
        duration: DEFAULT_DURATION,
        timestep,
        seed: 0,
    };
    scenario.validate()?;
    Ok(Parsed { scenario, warnings })
}
