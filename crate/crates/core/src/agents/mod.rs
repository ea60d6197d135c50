//! Driving policies.

pub mod idm;
pub mod policy;

pub use idm::{apply_aggressiveness, idm_accel, IdmAccel, IdmParams, Leader, EMERGENCY_DECEL};
pub use policy::{
    policy_step, replay_commands, AgentContext, IdmPolicy, Policy, PolicyError, PolicyName, PolicySpec,
    PrimitivePlan, PrimitivePolicy, ReplayPolicy, LATENCY2_DELAY, SHORTSIGHTED_RANGE,
};
