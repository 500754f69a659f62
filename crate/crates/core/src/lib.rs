//! Two-phase exploit-generation pipeline for black-box web applications.
//!
//! Phase A turns heterogeneous vulnerability information into a validated
//! trigger function (a declarative request-template DSL); Phase B instantiates
//! it per attack objective and refines failed exploits from runtime feedback.
//! The crate also ships the raw HTTP executor, deterministic target fixtures,
//! a scripted mock backend, and the benchmark/reporting layer.

pub mod agents;
pub mod assets;
pub mod bench;
pub mod executor;
pub mod fixtures;
pub mod textenc;
pub mod trigger;
pub mod validation;
pub mod vuln;

pub use trigger::{
    instantiate, parse_trigger, render_trigger, RequestPlan, TriggerFunction,
};
pub use validation::{parse_testcase, render_testcase, run_testcase, TriggerTestCase, ValidationResult};
pub use vuln::{load_manifest, serialize_manifest, TaskSet};
