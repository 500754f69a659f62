//! Vulnerability records, attack objectives, and benchmark task sets.
//!
//! Task manifests are UTF-8 JSON. Reference content may be inlined or pulled
//! from a sibling file (`content_file`); inline wins on conflict and the
//! serializer always inlines, so load → serialize → load is a fixpoint.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VulnError {
    #[error("missing field '{field}' in task {task_index}")]
    MissingField { field: String, task_index: usize },
    #[error("unknown fixture '{0}'")]
    UnknownFixture(String),
    #[error("duplicate id '{0}'")]
    DuplicateId(String),
    #[error("empty references")]
    EmptyReferences,
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error("invalid regex '{pattern}': {error}")]
    BadRegex { pattern: String, error: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InfoCategory {
    #[serde(rename = "NL")]
    Nl,
    #[serde(rename = "HTTP")]
    Http,
    Payload,
    Code,
    #[serde(rename = "NL+HTTP")]
    NlHttp,
    #[serde(rename = "NL+Payload")]
    NlPayload,
    #[serde(rename = "NL+Code")]
    NlCode,
}

impl InfoCategory {
    pub fn label(self) -> &'static str {
        match self {
            InfoCategory::Nl => "NL",
            InfoCategory::Http => "HTTP",
            InfoCategory::Payload => "Payload",
            InfoCategory::Code => "Code",
            InfoCategory::NlHttp => "NL+HTTP",
            InfoCategory::NlPayload => "NL+Payload",
            InfoCategory::NlCode => "NL+Code",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclaredForm {
    Prose,
    HttpExample,
    PayloadFragment,
    CodeSnippet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub source_label: String,
    pub content: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub declared_form: Option<DeclaredForm>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnRecord {
    pub id: String,
    pub description: String,
    pub references: Vec<Reference>,
    pub info_category: InfoCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ObjectiveCategory {
    Si,
    Rce,
    Afw,
    Pe,
    Ws,
    #[serde(rename = "SQLi")]
    SqlI,
    Misc,
}

impl ObjectiveCategory {
    pub const ALL: [ObjectiveCategory; 7] = [
        ObjectiveCategory::Si,
        ObjectiveCategory::Rce,
        ObjectiveCategory::Afw,
        ObjectiveCategory::Pe,
        ObjectiveCategory::Ws,
        ObjectiveCategory::SqlI,
        ObjectiveCategory::Misc,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ObjectiveCategory::Si => "SI",
            ObjectiveCategory::Rce => "RCE",
            ObjectiveCategory::Afw => "AFW",
            ObjectiveCategory::Pe => "PE",
            ObjectiveCategory::Ws => "WS",
            ObjectiveCategory::SqlI => "SQLi",
            ObjectiveCategory::Misc => "MISC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.label() == s)
    }
}

/// Machine-checkable success oracle evaluated by the executor/judge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuccessPredicate {
    StatusEquals { status: u16 },
    BodyContains { needle: String },
    BodyMatchesRegex { pattern: String },
    ProbeThenContains { probe_method: String, probe_path: String, needle: String },
    LlmJudge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackObjective {
    pub objective_id: String,
    pub category: ObjectiveCategory,
    pub text: String,
    pub success: SuccessPredicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetBinding {
    Fixture { fixture: String },
    Url { url: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub vuln: VulnRecord,
    pub target: TargetBinding,
    pub objectives: Vec<AttackObjective>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSet {
    pub tasks: Vec<Task>,
}

const REQUEST_LINE: &str = r"^[A-Z]{3,7} \S+ HTTP/";

fn request_line_re() -> &'static regex::Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(REQUEST_LINE).unwrap())
}

fn payload_token_re() -> &'static regex::Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    // percent-encoded byte, or a quoted token without spaces
    RE.get_or_init(|| regex::Regex::new(r#"%[0-9A-Fa-f]{2}|'[^' ]+'|"[^" ]+""#).unwrap())
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
struct Forms {
    prose: bool,
    http: bool,
    payload: bool,
    code: bool,
}

fn detect_forms(reference: &Reference) -> Forms {
    if let Some(declared) = reference.declared_form {
        return match declared {
            DeclaredForm::Prose => Forms { prose: true, ..Forms::default() },
            DeclaredForm::HttpExample => Forms { http: true, ..Forms::default() },
            DeclaredForm::PayloadFragment => Forms { payload: true, ..Forms::default() },
            DeclaredForm::CodeSnippet => Forms { code: true, ..Forms::default() },
        };
    }
    let content = &reference.content;
    let fenced = content.contains("```");
    let mut in_fence = false;
    let mut http = false;
    let mut code_lines = 0usize;
    let mut prose = false;
    for line in content.lines() {
        let t = line.trim();
        if t.starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if in_fence {
            continue;
        }
        if request_line_re().is_match(t) {
            http = true;
            continue;
        }
        if t.ends_with(';') || t.ends_with('{') {
            code_lines += 1;
            continue;
        }
        let words = t.split_whitespace().count();
        if words >= 5 {
            let alpha = t.chars().filter(|c| c.is_alphabetic() || *c == ' ').count();
            if alpha * 10 >= t.chars().count() * 6 {
                prose = true;
            }
        }
    }
    let code = fenced || code_lines >= 3;
    let payload = !http && payload_token_re().is_match(content);
    Forms { prose, http, payload, code }
}

/// Classify a reference list into one of the seven information categories.
/// Pure and deterministic: same bytes in, same category out.
pub fn classify_references(refs: &[Reference]) -> Result<InfoCategory, VulnError> {
    if refs.is_empty() {
        return Err(VulnError::EmptyReferences);
    }
    let mut all = Forms::default();
    for r in refs {
        let f = detect_forms(r);
        all.prose |= f.prose;
        all.http |= f.http;
        all.payload |= f.payload;
        all.code |= f.code;
    }
    // priority among non-prose forms: HTTP > Payload > Code
    let dominant = if all.http {
        Some(InfoCategory::Http)
    } else if all.payload {
        Some(InfoCategory::Payload)
    } else if all.code {
        Some(InfoCategory::Code)
    } else {
        None
    };
    Ok(match (all.prose, dominant) {
        (_, None) => InfoCategory::Nl,
        (false, Some(cat)) => cat,
        (true, Some(InfoCategory::Http)) => InfoCategory::NlHttp,
        (true, Some(InfoCategory::Payload)) => InfoCategory::NlPayload,
        (true, Some(InfoCategory::Code)) => InfoCategory::NlCode,
        _ => unreachable!(),
    })
}

pub const FIXTURE_NAMES: [&str; 3] = ["bypass_upload", "file_read", "echo"];

fn get_str(obj: &Map<String, Value>, field: &str, task_index: usize) -> Result<String, VulnError> {
    obj.get(field)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| VulnError::MissingField { field: field.to_string(), task_index })
}

fn parse_predicate(obj: &Map<String, Value>, task_index: usize) -> Result<SuccessPredicate, VulnError> {
    let value = obj
        .get("success")
        .cloned()
        .ok_or_else(|| VulnError::MissingField { field: "success".to_string(), task_index })?;
    let pred: SuccessPredicate = serde_json::from_value(value)
        .map_err(|e| VulnError::Invalid(format!("task {task_index}: bad success predicate: {e}")))?;
    if let SuccessPredicate::BodyMatchesRegex { pattern } = &pred {
        regex::Regex::new(pattern).map_err(|e| VulnError::BadRegex {
            pattern: pattern.clone(),
            error: e.to_string(),
        })?;
    }
    Ok(pred)
}

/// Load a task manifest. Task order equals file order; all type invariants
/// are checked here so downstream modules can trust the data.
pub fn load_manifest(path: &Path) -> Result<TaskSet, VulnError> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path.parent())
}

pub fn parse_manifest(text: &str, base_dir: Option<&Path>) -> Result<TaskSet, VulnError> {
    let root: Value = serde_json::from_str(text)?;
    let tasks_json = root
        .get("tasks")
        .and_then(Value::as_array)
        .ok_or_else(|| VulnError::Invalid("top-level 'tasks' array required".to_string()))?;

    let mut seen_ids = BTreeSet::new();
    let mut tasks = Vec::with_capacity(tasks_json.len());
    for (idx, tjson) in tasks_json.iter().enumerate() {
        let obj = tjson
            .as_object()
            .ok_or_else(|| VulnError::Invalid(format!("task {idx} is not an object")))?;
        let id = get_str(obj, "id", idx)?;
        if !seen_ids.insert(id.clone()) {
            return Err(VulnError::DuplicateId(id));
        }
        let description = get_str(obj, "description", idx)?;

        let refs_json = obj
            .get("references")
            .and_then(Value::as_array)
            .ok_or_else(|| VulnError::MissingField { field: "references".to_string(), task_index: idx })?;
        let mut references = Vec::with_capacity(refs_json.len());
        for r in refs_json {
            let robj = r
                .as_object()
                .ok_or_else(|| VulnError::Invalid(format!("task {idx}: reference is not an object")))?;
            let source_label = get_str(robj, "source_label", idx)?;
            let content = match robj.get("content").and_then(Value::as_str) {
                Some(c) => c.to_string(),
                None => {
                    let file = robj.get("content_file").and_then(Value::as_str).ok_or_else(|| {
                        VulnError::MissingField { field: "content".to_string(), task_index: idx }
                    })?;
                    let full = match base_dir {
                        Some(d) => d.join(file),
                        None => Path::new(file).to_path_buf(),
                    };
                    std::fs::read_to_string(full)?
                }
            };
            if content.is_empty() {
                return Err(VulnError::Invalid(format!("task {idx}: empty reference content")));
            }
            let declared_form = match robj.get("declared_form") {
                Some(v) => Some(
                    serde_json::from_value(v.clone())
                        .map_err(|e| VulnError::Invalid(format!("task {idx}: declared_form: {e}")))?,
                ),
                None => None,
            };
            references.push(Reference { source_label, content, declared_form });
        }
        let info_category = classify_references(&references)?;

        let target_json = obj
            .get("target")
            .ok_or_else(|| VulnError::MissingField { field: "target".to_string(), task_index: idx })?;
        let target: TargetBinding = serde_json::from_value(target_json.clone())
            .map_err(|e| VulnError::Invalid(format!("task {idx}: bad target: {e}")))?;
        if let TargetBinding::Fixture { fixture } = &target {
            if !FIXTURE_NAMES.contains(&fixture.as_str()) {
                return Err(VulnError::UnknownFixture(fixture.clone()));
            }
        }

        let objs_json = obj
            .get("objectives")
            .and_then(Value::as_array)
            .ok_or_else(|| VulnError::MissingField { field: "objectives".to_string(), task_index: idx })?;
        let mut objectives = Vec::with_capacity(objs_json.len());
        let mut seen_obj = BTreeSet::new();
        for o in objs_json {
            let oobj = o
                .as_object()
                .ok_or_else(|| VulnError::Invalid(format!("task {idx}: objective is not an object")))?;
            let objective_id = get_str(oobj, "objective_id", idx)?;
            if !seen_obj.insert(objective_id.clone()) {
                return Err(VulnError::DuplicateId(objective_id));
            }
            let cat_s = get_str(oobj, "category", idx)?;
            let category = ObjectiveCategory::parse(&cat_s)
                .ok_or_else(|| VulnError::Invalid(format!("task {idx}: unknown category '{cat_s}'")))?;
            let text = get_str(oobj, "text", idx)?;
            let success = parse_predicate(oobj, idx)?;
            objectives.push(AttackObjective { objective_id, category, text, success });
        }

        tasks.push(Task {
            vuln: VulnRecord { id, description, references, info_category },
            target,
            objectives,
        });
    }
    Ok(TaskSet { tasks })
}

/// Serialize a task set to manifest JSON, keys in schema order, content
/// always inlined.
pub fn serialize_manifest(ts: &TaskSet) -> String {
    let tasks: Vec<Value> = ts
        .tasks
        .iter()
        .map(|t| {
            let references: Vec<Value> = t
                .vuln
                .references
                .iter()
                .map(|r| {
                    let mut m = Map::new();
                    m.insert("source_label".into(), json!(r.source_label));
                    m.insert("content".into(), json!(r.content));
                    if let Some(f) = r.declared_form {
                        m.insert("declared_form".into(), serde_json::to_value(f).unwrap());
                    }
                    Value::Object(m)
                })
                .collect();
            let objectives: Vec<Value> = t
                .objectives
                .iter()
                .map(|o| {
                    let mut m = Map::new();
                    m.insert("objective_id".into(), json!(o.objective_id));
                    m.insert("category".into(), json!(o.category.label()));
                    m.insert("text".into(), json!(o.text));
                    m.insert("success".into(), serde_json::to_value(&o.success).unwrap());
                    Value::Object(m)
                })
                .collect();
            let mut m = Map::new();
            m.insert("id".into(), json!(t.vuln.id));
            m.insert("description".into(), json!(t.vuln.description));
            m.insert("references".into(), Value::Array(references));
            m.insert("target".into(), serde_json::to_value(&t.target).unwrap());
            m.insert("objectives".into(), Value::Array(objectives));
            Value::Object(m)
        })
        .collect();
    let root = json!({ "tasks": tasks });
    serde_json::to_string_pretty(&root).expect("manifest serialization")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prose_ref(text: &str) -> Reference {
        Reference { source_label: "advisory".into(), content: text.into(), declared_form: None }
    }

    #[test]
    fn http_example_detected() {
        let r = prose_ref("POST /upload HTTP/1.1\nHost: target\n\nfilename=x");
        assert_eq!(classify_references(&[r]).unwrap(), InfoCategory::Http);
    }

    #[test]
    fn prose_only_is_nl() {
        let r = prose_ref(
            "The server fails to escape a space character in the request path. \
             An attacker can append a null byte after the space to bypass the suffix check \
             and reach files that should be protected.",
        );
        assert_eq!(classify_references(&[r]).unwrap(), InfoCategory::Nl);
    }

    #[test]
    fn prose_plus_fenced_code_is_nl_code() {
        let r = prose_ref(
            "The handler deserializes untrusted input before checking the session token.\n\n```\nobj = pickle.loads(data)\n```",
        );
        assert_eq!(classify_references(&[r]).unwrap(), InfoCategory::NlCode);
    }

    #[test]
    fn payload_tokens_without_request_lines() {
        let r = prose_ref("%2e%2e%2fetc%2fpasswd");
        assert_eq!(classify_references(&[r]).unwrap(), InfoCategory::Payload);
    }

    #[test]
    fn classification_is_pure() {
        let r = prose_ref("GET /a HTTP/1.1");
        let a = classify_references(std::slice::from_ref(&r)).unwrap();
        for _ in 0..100 {
            assert_eq!(classify_references(std::slice::from_ref(&r)).unwrap(), a);
        }
    }

    #[test]
    fn empty_references_rejected() {
        assert!(matches!(classify_references(&[]), Err(VulnError::EmptyReferences)));
    }

    #[test]
    fn duplicate_task_id_rejected() {
        let manifest = r#"{"tasks":[
            {"id":"CVE-X","description":"d","references":[{"source_label":"s","content":"c"}],
             "target":{"fixture":"echo"},"objectives":[]},
            {"id":"CVE-X","description":"d","references":[{"source_label":"s","content":"c"}],
             "target":{"fixture":"echo"},"objectives":[]}
        ]}"#;
        match parse_manifest(manifest, None) {
            Err(VulnError::DuplicateId(id)) => assert_eq!(id, "CVE-X"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fixture_rejected() {
        let manifest = r#"{"tasks":[
            {"id":"CVE-X","description":"d","references":[{"source_label":"s","content":"c"}],
             "target":{"fixture":"nope"},"objectives":[]}
        ]}"#;
        match parse_manifest(manifest, None) {
            Err(VulnError::UnknownFixture(name)) => assert_eq!(name, "nope"),
            other => panic!("expected UnknownFixture, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_named() {
        let manifest = r#"{"tasks":[{"id":"CVE-X"}]}"#;
        match parse_manifest(manifest, None) {
            Err(VulnError::MissingField { field, task_index }) => {
                assert_eq!(field, "description");
                assert_eq!(task_index, 0);
            }
            other => panic!("expected MissingField, got {other:?}"),
        }
    }

    #[test]
    fn bad_regex_rejected() {
        let manifest = r#"{"tasks":[
            {"id":"CVE-X","description":"d","references":[{"source_label":"s","content":"c"}],
             "target":{"fixture":"echo"},
             "objectives":[{"objective_id":"o1","category":"SI","text":"t",
                            "success":{"kind":"body_matches_regex","pattern":"("}}]}
        ]}"#;
        assert!(matches!(parse_manifest(manifest, None), Err(VulnError::BadRegex { .. })));
    }

    #[test]
    fn manifest_round_trip() {
        let manifest = r#"{"tasks":[
            {"id":"CVE-X","description":"d",
             "references":[{"source_label":"s","content":"GET /a HTTP/1.1","declared_form":"http_example"}],
             "target":{"fixture":"echo"},
             "objectives":[{"objective_id":"o1","category":"RCE","text":"t",
                            "success":{"kind":"body_contains","needle":"uid="}}]}
        ]}"#;
        let ts = parse_manifest(manifest, None).unwrap();
        let out = serialize_manifest(&ts);
        let ts2 = parse_manifest(&out, None).unwrap();
        assert_eq!(ts, ts2);
    }
}
