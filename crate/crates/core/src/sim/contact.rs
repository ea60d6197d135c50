//! Collision checking between agent footprints.

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Vec2};
use crate::model::{AgentState, Episode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactClass {
    Front,
    Side,
    Rear,
}

impl ImpactClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ImpactClass::Front => "front",
            ImpactClass::Side => "side",
            ImpactClass::Rear => "rear",
        }
    }

    /// Classifies a body-frame point by which face of the rectangle it is
    /// closest to, in normalized coordinates.
    pub fn from_local(local: Vec2, half_length: f64, half_width: f64) -> Self {
        let nx = local.x / half_length;
        let ny = (local.y / half_width).abs();
        if nx >= ny {
            ImpactClass::Front
        } else if -nx >= ny {
            ImpactClass::Rear
        } else {
            ImpactClass::Side
        }
    }
}

/// First contact between two agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub step: usize,
    pub agents: (usize, usize),
    /// Magnitude of the relative velocity vector, m/s.
    pub closing_speed: f64,
    /// Angle between the two headings, in `[0, pi]`.
    pub impact_angle: f64,
    pub impact_classes: (ImpactClass, ImpactClass),
}

impl ContactEvent {
    pub fn involves(&self, i: usize) -> bool {
        self.agents.0 == i || self.agents.1 == i
    }

    /// Impact class seen from agent `i`, if it is part of the event.
    pub fn class_for(&self, i: usize) -> Option<ImpactClass> {
        if self.agents.0 == i {
            Some(self.impact_classes.0)
        } else if self.agents.1 == i {
            Some(self.impact_classes.1)
        } else {
            None
        }
    }
}

/// Contact between two states, if their footprints overlap.
pub fn contact_between(step: usize, i: usize, j: usize, a: &AgentState, b: &AgentState) -> Option<ContactEvent> {
    let reach = 0.5
        * (a.footprint.length.hypot(a.footprint.width) + b.footprint.length.hypot(b.footprint.width));
    if (a.position - b.position).norm_sq() > reach * reach {
        return None;
    }
    let (oa, ob) = (a.obb(), b.obb());
    let point = oa.overlap_centroid(&ob)?;
    let class = |s: &AgentState| {
        let o = s.obb();
        ImpactClass::from_local((point - s.position).to_local(s.heading), o.half_length, o.half_width)
    };
    Some(ContactEvent {
        step,
        agents: (i, j),
        closing_speed: (a.velocity() - b.velocity()).norm(),
        impact_angle: wrap_angle(a.heading - b.heading).abs(),
        impact_classes: (class(a), class(b)),
    })
}

/// Tracks which pairs already touched so only first contacts are reported.
#[derive(Debug, Clone)]
pub struct ContactTracker {
    n: usize,
    seen: Vec<bool>,
    events: Vec<ContactEvent>,
}

impl ContactTracker {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            seen: vec![false; n * n],
            events: Vec::new(),
        }
    }

    /// Checks all unseen pairs at one step; returns the number of new events.
    pub fn observe(&mut self, step: usize, states: &[AgentState]) -> usize {
        let before = self.events.len();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.seen[i * self.n + j] {
                    continue;
                }
                if let Some(ev) = contact_between(step, i, j, &states[i], &states[j]) {
                    self.seen[i * self.n + j] = true;
                    self.events.push(ev);
                }
            }
        }
        self.events.len() - before
    }

    pub fn in_contact(&self, i: usize) -> bool {
        self.events.iter().any(|e| e.involves(i))
    }

    pub fn events(&self) -> &[ContactEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<ContactEvent> {
        self.events
    }
}

/// Every first contact in a recorded episode, ordered by step then pair.
pub fn check_contacts(e: &Episode) -> Vec<ContactEvent> {
    let n = e.trajectories.len();
    let steps = e.trajectories.iter().map(Vec::len).min().unwrap_or(0);
    let mut tracker = ContactTracker::new(n);
    let mut frame = Vec::with_capacity(n);
    for k in 0..steps {
        frame.clear();
        frame.extend(e.trajectories.iter().map(|t| t[k]));
        tracker.observe(k, &frame);
    }
    tracker.into_events()
}

/// Whether agent `i` appears in any contact event.
pub fn coll(events: &[ContactEvent], i: usize) -> bool {
    events.iter().any(|e| e.involves(i))
}

/// The first contact involving agent `i`.
pub fn first_contact(events: &[ContactEvent], i: usize) -> Option<&ContactEvent> {
    events.iter().filter(|e| e.involves(i)).min_by_key(|e| e.step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Footprint;
    use std::f64::consts::PI;

    fn car(x: f64, y: f64, heading: f64, speed: f64, width: f64) -> AgentState {
        AgentState {
            position: Vec2::new(x, y),
            heading,
            speed,
            steering: 0.0,
            footprint: Footprint { length: 4.5, width },
        }
    }

    #[test]
    fn parallel_lanes_gap_rule() {
        let a = car(0.0, 0.0, 0.0, 10.0, 1.8);
        assert!(contact_between(0, 0, 1, &a, &car(0.0, 1.0, 0.0, 10.0, 1.8)).is_some());
        assert!(contact_between(0, 0, 1, &a, &car(0.0, 4.0, 0.0, 10.0, 1.8)).is_none());
    }

    #[test]
    fn coincident_stationary_rectangles() {
        let a = car(1.0, 2.0, 0.3, 0.0, 1.8);
        let ev = contact_between(3, 0, 1, &a, &a).unwrap();
        assert_eq!(ev.closing_speed, 0.0);
        assert_eq!(ev.step, 3);
    }

    #[test]
    fn head_on_collision() {
        let a = car(0.0, 0.0, 0.0, 10.0, 1.8);
        let b = car(4.3, 0.0, PI, 10.0, 1.8);
        let ev = contact_between(0, 0, 1, &a, &b).unwrap();
        assert!((ev.closing_speed - 20.0).abs() < 1e-9);
        assert!((ev.impact_angle - PI).abs() < 1e-9);
        assert_eq!(ev.impact_classes, (ImpactClass::Front, ImpactClass::Front));
    }

    #[test]
    fn rear_end_and_t_bone_classes() {
        let leader = car(0.0, 0.0, 0.0, 0.0, 1.8);
        let follower = car(-4.4, 0.0, 0.0, 5.0, 1.8);
        let ev = contact_between(0, 0, 1, &leader, &follower).unwrap();
        assert_eq!(ev.impact_classes, (ImpactClass::Rear, ImpactClass::Front));
        let crossing = car(0.0, -3.0, PI / 2.0, 8.0, 1.8);
        let ev = contact_between(0, 0, 1, &leader, &crossing).unwrap();
        assert_eq!(ev.impact_classes, (ImpactClass::Side, ImpactClass::Front));
    }

    #[test]
    fn tracker_reports_first_contact_once() {
        let mut t = ContactTracker::new(2);
        let a = car(0.0, 0.0, 0.0, 0.0, 1.8);
        let b = car(3.0, 0.0, 0.0, 0.0, 1.8);
        assert_eq!(t.observe(0, &[a, b]), 1);
        assert_eq!(t.observe(1, &[a, b]), 0);
        assert!(t.in_contact(0) && t.in_contact(1));
    }
}
