//! Line-record codec shared by the native scenario format and episode logs.
//!
//! A record is one line: a record name followed by space-separated
//! `key=value` fields. `#` starts a comment. Values never contain spaces;
//! free text is percent-encoded.

use std::fmt::Write as _;

use crate::agents::{IdmParams, PolicyName, PolicySpec, PrimitivePlan};
use crate::error::ParseError;
use crate::geometry::Vec2;
use crate::model::{
    Command, LaneNetwork, Lanelet, LaneletId, LightPhase, PhaseSchedule, Signal, SignalKind,
};
use crate::sim::KinematicModel;

/// Canonical float text: rounded to 9 significant digits, then the shortest
/// representation that reads back to that rounded value.
pub fn fmt_f64(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    format!("{}", canon_f64(x))
}

/// The value `fmt_f64` denotes.
pub fn canon_f64(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

const RESERVED: &[char] = &[' ', '=', '%', ',', ';', ':', '#'];

pub fn encode_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if RESERVED.contains(&c) || c.is_control() || c.is_whitespace() {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                let _ = write!(out, "%{b:02X}");
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub fn decode_text(s: &str) -> Option<String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

/// One parsed line.
#[derive(Debug, Clone)]
pub struct Record<'a> {
    pub line: usize,
    pub name: &'a str,
    fields: Vec<(&'a str, &'a str)>,
    used: Vec<bool>,
}

impl<'a> Record<'a> {
    fn parse(line: usize, text: &'a str) -> Result<Option<Self>, ParseError> {
        let text = text.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            return Ok(None);
        }
        let mut tokens = text.split_ascii_whitespace();
        let name = tokens.next().unwrap_or_default();
        let mut fields = Vec::new();
        for t in tokens {
            let (k, v) = t.split_once('=').ok_or_else(|| ParseError::Syntax {
                line,
                message: format!("expected key=value, got {t:?}"),
            })?;
            if fields.iter().any(|(fk, _)| *fk == k) {
                return Err(ParseError::Syntax {
                    line,
                    message: format!("duplicate field {k:?}"),
                });
            }
            fields.push((k, v));
        }
        let used = vec![false; fields.len()];
        Ok(Some(Self {
            line,
            name,
            fields,
            used,
        }))
    }

    pub fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            message: message.into(),
        }
    }

    pub fn opt(&mut self, key: &str) -> Option<&'a str> {
        let i = self.fields.iter().position(|(k, _)| *k == key)?;
        self.used[i] = true;
        Some(self.fields[i].1)
    }

    pub fn req(&mut self, key: &str) -> Result<&'a str, ParseError> {
        self.opt(key)
            .ok_or_else(|| self.err(format!("{} record needs field {key:?}", self.name)))
    }

    pub fn f64(&mut self, key: &str) -> Result<f64, ParseError> {
        let v = self.req(key)?;
        parse_f64(v).ok_or_else(|| self.err(format!("field {key:?}: not a number: {v:?}")))
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, ParseError> {
        match self.opt(key) {
            None => Ok(default),
            Some(v) => parse_f64(v).ok_or_else(|| self.err(format!("field {key:?}: not a number: {v:?}"))),
        }
    }

    pub fn u64(&mut self, key: &str) -> Result<u64, ParseError> {
        let v = self.req(key)?;
        v.parse().map_err(|_| self.err(format!("field {key:?}: not an unsigned integer: {v:?}")))
    }

    pub fn usize(&mut self, key: &str) -> Result<usize, ParseError> {
        let v = self.req(key)?;
        v.parse().map_err(|_| self.err(format!("field {key:?}: not an unsigned integer: {v:?}")))
    }

    pub fn text(&mut self, key: &str) -> Result<String, ParseError> {
        let v = self.req(key)?;
        decode_text(v).ok_or_else(|| self.err(format!("field {key:?}: bad escape in {v:?}")))
    }

    pub fn ids(&mut self, key: &str) -> Result<Vec<LaneletId>, ParseError> {
        let v = self.req(key)?;
        if v.is_empty() {
            return Ok(vec![]);
        }
        v.split(',')
            .map(|s| s.parse().map_err(|_| self.err(format!("field {key:?}: bad id {s:?}"))))
            .collect()
    }

    /// `a:b;c:d` pairs.
    pub fn pairs(&mut self, key: &str) -> Result<Vec<(f64, f64)>, ParseError> {
        let v = self.req(key)?;
        if v.is_empty() {
            return Ok(vec![]);
        }
        v.split(';')
            .map(|p| {
                p.split_once(':')
                    .and_then(|(a, b)| Some((parse_f64(a)?, parse_f64(b)?)))
                    .ok_or_else(|| self.err(format!("field {key:?}: bad pair {p:?}")))
            })
            .collect()
    }

    /// Fails on any field no accessor asked for.
    pub fn finish(self) -> Result<(), ParseError> {
        match self.used.iter().position(|u| !u) {
            Some(i) => Err(self.err(format!("unknown field {:?} in {} record", self.fields[i].0, self.name))),
            None => Ok(()),
        }
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok()
}

pub fn records(text: &str) -> Result<Vec<Record<'_>>, ParseError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(r) = Record::parse(i + 1, line)? {
            out.push(r);
        }
    }
    Ok(out)
}

pub fn decode_utf8(bytes: &[u8]) -> Result<&str, ParseError> {
    std::str::from_utf8(bytes).map_err(|e| ParseError::Encoding(e.valid_up_to()))
}

/// Builds record lines field by field.
pub struct Line(String);

impl Line {
    pub fn new(name: &str) -> Self {
        Self(name.to_string())
    }

    pub fn raw(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        let _ = write!(self.0, " {key}={value}");
        self
    }

    pub fn f(self, key: &str, x: f64) -> Self {
        self.raw(key, fmt_f64(x))
    }

    pub fn text(self, key: &str, s: &str) -> Self {
        let e = encode_text(s);
        self.raw(key, e)
    }

    pub fn ids(self, key: &str, ids: &[LaneletId]) -> Self {
        let v: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
        self.raw(key, v.join(","))
    }

    pub fn pairs(self, key: &str, pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let v: Vec<String> = pairs
            .into_iter()
            .map(|(a, b)| format!("{}:{}", fmt_f64(a), fmt_f64(b)))
            .collect();
        self.raw(key, v.join(";"))
    }

    pub fn push_to(self, out: &mut String) {
        out.push_str(&self.0);
        out.push('\n');
    }
}

pub fn write_map(out: &mut String, map: &LaneNetwork) {
    for l in &map.lanelets {
        Line::new("lanelet")
            .raw("id", l.id)
            .f("width", l.width)
            .ids("successors", &l.successors)
            .pairs("centerline", l.centerline.iter().map(|p| (p.x, p.y)))
            .push_to(out);
    }
    for s in &map.signals {
        let mut line = Line::new("signal")
            .raw("id", s.id)
            .raw("kind", s.kind.as_str())
            .raw("lanelet", s.lanelet)
            .f("s", s.position);
        if let Some(sch) = &s.schedule {
            let phases: Vec<String> = sch
                .phases
                .iter()
                .map(|(p, d)| format!("{}:{}", phase_name(*p), fmt_f64(*d)))
                .collect();
            line = line.f("offset", sch.offset).raw("phases", phases.join(";"));
        }
        line.push_to(out);
    }
}

fn phase_name(p: LightPhase) -> &'static str {
    match p {
        LightPhase::Green => "green",
        LightPhase::Amber => "amber",
        LightPhase::Red => "red",
    }
}

/// Consumes a `lanelet` or `signal` record into `map`. Returns false for
/// other record names.
pub fn read_map_record(r: &mut Record<'_>, map: &mut LaneNetwork) -> Result<bool, ParseError> {
    match r.name {
        "lanelet" => {
            let id = r.u64("id")?;
            let width = r.f64("width")?;
            let successors = r.ids("successors")?;
            let centerline = r.pairs("centerline")?.into_iter().map(|(x, y)| Vec2::new(x, y)).collect();
            map.lanelets.push(Lanelet {
                id,
                centerline,
                width,
                successors,
            });
            Ok(true)
        }
        "signal" => {
            let id = r.u64("id")?;
            let kind_s = r.req("kind")?;
            let kind: SignalKind = kind_s.parse().map_err(|_| r.err(format!("unknown signal kind {kind_s:?}")))?;
            let lanelet = r.u64("lanelet")?;
            let position = r.f64("s")?;
            let schedule = match r.opt("phases") {
                None => None,
                Some(p) => {
                    let offset = r.f64_or("offset", 0.0)?;
                    let phases = p
                        .split(';')
                        .filter(|x| !x.is_empty())
                        .map(|x| {
                            let (n, d) = x.split_once(':')?;
                            let phase = match n {
                                "green" => LightPhase::Green,
                                "amber" => LightPhase::Amber,
                                "red" => LightPhase::Red,
                                _ => return None,
                            };
                            Some((phase, parse_f64(d)?))
                        })
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| r.err(format!("bad phase list {p:?}")))?;
                    Some(PhaseSchedule { offset, phases })
                }
            };
            map.signals.push(Signal {
                id,
                kind,
                lanelet,
                position,
                schedule,
            });
            Ok(true)
        }
        _ => Ok(false),
    }
}

pub fn write_model(line: Line, m: &KinematicModel) -> Line {
    line.f("wheelbase", m.wheelbase)
        .f("a_min", m.accel_min)
        .f("a_max", m.accel_max)
        .f("w_min", m.steer_rate_min)
        .f("w_max", m.steer_rate_max)
        .f("delta_max", m.steer_max)
        .f("v_max", m.speed_max)
}

/// Missing fields take the default model's values.
pub fn read_model(r: &mut Record<'_>) -> Result<KinematicModel, ParseError> {
    let d = KinematicModel::default();
    Ok(KinematicModel {
        wheelbase: r.f64_or("wheelbase", d.wheelbase)?,
        accel_min: r.f64_or("a_min", d.accel_min)?,
        accel_max: r.f64_or("a_max", d.accel_max)?,
        steer_rate_min: r.f64_or("w_min", d.steer_rate_min)?,
        steer_rate_max: r.f64_or("w_max", d.steer_rate_max)?,
        steer_max: r.f64_or("delta_max", d.steer_max)?,
        speed_max: r.f64_or("v_max", d.speed_max)?,
    })
}

fn commands(cmds: &[Command]) -> impl Iterator<Item = (f64, f64)> + '_ {
    cmds.iter().map(|c| (c.accel, c.steering_rate))
}

pub fn write_policy(line: Line, p: &PolicySpec) -> Line {
    let line = line.raw("policy", p.name());
    match p {
        PolicySpec::IdmAgent(q) | PolicySpec::IdmLatency2(q) | PolicySpec::IdmShortsighted10(q) => line
            .f("v0", q.desired_speed)
            .f("headway", q.time_headway)
            .f("s0", q.min_spacing)
            .f("accel", q.max_accel)
            .f("decel", q.comfort_decel)
            .f("exponent", q.exponent)
            .f("aggressiveness", q.aggressiveness),
        PolicySpec::Replay(c) => line.pairs("commands", commands(c)),
        PolicySpec::BestResponse(plan) => line
            .raw("segment_steps", plan.segment_steps)
            .pairs("segments", commands(&plan.segments)),
    }
}

fn to_commands(pairs: Vec<(f64, f64)>) -> Vec<Command> {
    pairs
        .into_iter()
        .map(|(accel, steering_rate)| Command { accel, steering_rate })
        .collect()
}

/// Missing IDM fields take the defaults.
pub fn read_policy(r: &mut Record<'_>) -> Result<PolicySpec, ParseError> {
    let name_s = r.req("policy")?;
    let name: PolicyName = name_s.parse().map_err(|_| r.err(format!("unknown policy {name_s:?}")))?;
    match name {
        PolicyName::Replay => Ok(PolicySpec::Replay(to_commands(r.pairs("commands")?))),
        PolicyName::BestResponse => {
            let segment_steps = r.usize("segment_steps")?;
            let segments = to_commands(r.pairs("segments")?);
            Ok(PolicySpec::BestResponse(PrimitivePlan { segments, segment_steps }))
        }
        idm => {
            let d = IdmParams::default();
            let p = IdmParams {
                desired_speed: r.f64_or("v0", d.desired_speed)?,
                time_headway: r.f64_or("headway", d.time_headway)?,
                min_spacing: r.f64_or("s0", d.min_spacing)?,
                max_accel: r.f64_or("accel", d.max_accel)?,
                comfort_decel: r.f64_or("decel", d.comfort_decel)?,
                exponent: r.f64_or("exponent", d.exponent)?,
                aggressiveness: r.f64_or("aggressiveness", d.aggressiveness)?,
            };
            PolicySpec::idm_variant(idm, p).map_err(|e| r.err(e.to_string()))
        }
    }
}
