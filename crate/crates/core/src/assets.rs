//! Bundled assets: the worked example trigger function and test case, the
//! fixture-suite task manifest, and replay scripts for desk-scale runs.

/// Trigger function for the space/null-byte path parsing flaw.
pub const EXAMPLE_TRIGGER: &str = include_str!("../assets/cve-2013-4547.trig");

/// Test case validating both modes of [`EXAMPLE_TRIGGER`].
pub const EXAMPLE_TESTCASE: &str = include_str!("../assets/cve-2013-4547.trigtest");

/// Task manifest binding three tasks (five objectives) to the built-in
/// fixtures.
pub const FIXTURE_MANIFEST: &str = include_str!("../assets/fixtures.manifest");

/// Replay script for the full pipeline over the fixture manifest.
pub const REPLAY_FULL: &str = include_str!("../assets/replays/full.json");

/// Replay script for runs with trigger validation disabled.
pub const REPLAY_NO_TRIGGER_VALIDATION: &str =
    include_str!("../assets/replays/no_trigger_validation.json");

/// Replay script for runs with Phase A disabled.
pub const REPLAY_NO_PHASE_A: &str = include_str!("../assets/replays/no_phase_a.json");

/// The replay script that matches an ablation configuration.
pub fn replay_for(ablation: &crate::agents::AblationConfig) -> &'static str {
    if ablation.skip_phase_a {
        REPLAY_NO_PHASE_A
    } else if ablation.skip_trigger_validation {
        REPLAY_NO_TRIGGER_VALIDATION
    } else {
        REPLAY_FULL
    }
}
