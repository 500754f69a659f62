//! Bundled prompt templates, one per agent role, with `{{name}}` slots.

use super::AgentRole;

pub const A1_EXTRACTOR: &str = include_str!("../../assets/prompts/a1_trigger_extractor.txt");
pub const A2_TESTCASE: &str = include_str!("../../assets/prompts/a2_testcase_generator.txt");
pub const A3_REFINER: &str = include_str!("../../assets/prompts/a3_trigger_refiner.txt");
pub const A4_GENERATOR: &str = include_str!("../../assets/prompts/a4_exploit_generator.txt");
pub const A5_JUDGE: &str = include_str!("../../assets/prompts/a5_judge.txt");
pub const A6_REFINER: &str = include_str!("../../assets/prompts/a6_exploit_refiner.txt");

pub fn template_for(role: AgentRole) -> &'static str {
    match role {
        AgentRole::A1Extract => A1_EXTRACTOR,
        AgentRole::A2Testcase => A2_TESTCASE,
        AgentRole::A3TriggerRefine => A3_REFINER,
        AgentRole::A4ExploitGen => A4_GENERATOR,
        AgentRole::A5Judge => A5_JUDGE,
        AgentRole::A6ExploitRefine => A6_REFINER,
    }
}

/// Fill `{{name}}` slots. Unknown slots are left in place so a missing
/// binding is visible in recorded prompts rather than silently dropped.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{{{name}}}}}"), value);
    }
    out
}
