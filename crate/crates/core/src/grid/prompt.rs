/// Routing system prompt; `"TASK"` is replaced with the task instruction.
pub const ROUTING_PROMPT_TEMPLATE: &str = include_str!("../../assets/routing_prompt.txt");

/// Appended when a reply could not be parsed and the query is repeated.
pub const STRICT_JSON_SUFFIX: &str = "STRICTLY output the JSON only.";

pub fn build_routing_prompt(task: &str) -> String {
    ROUTING_PROMPT_TEMPLATE.replacen("\"TASK\"", &format!("\"{task}\""), 1)
}
