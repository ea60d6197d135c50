//! Closed-loop multi-agent simulation and collision checking.

pub mod contact;
pub mod dynamics;
pub mod engine;
pub mod observe;

pub use contact::{check_contacts, coll, first_contact, ContactEvent, ImpactClass};
pub use dynamics::{step_dynamics, KinematicModel, StepOutcome};
pub use engine::{simulate, PolicyAssignment, RunOutput, SimSetup, StopRule};
pub use observe::{make_observation, Observation, ObservedAgent, ObservedSignal, WorldView};
