//! Property tests for the trigger DSL, the validator, and ASR aggregation:
//! fixed byte sequences survive templating untouched, substitution is total,
//! parse/render are mutual fixpoints, a single mutated request component is
//! named by the validator, and ASR decomposes exactly over partitions.

use std::collections::BTreeMap;

use num_rational::Ratio;
use proptest::prelude::*;

use exploitpipe_core::bench::{asr, format_asr, ObjectiveRecord};
use exploitpipe_core::trigger::{instantiate, parse_trigger, render_trigger, InstantiateError};
use exploitpipe_core::validation::{
    parse_testcase, render_testcase, run_testcase, CaseStep, Component, ExpectedRequest,
    TriggerTestCase,
};
use exploitpipe_core::vuln::{InfoCategory, ObjectiveCategory};

/// A path-template fragment: either a literal run (biased toward the encoded
/// motifs the pipeline cares about) or one of four placeholders.
#[derive(Clone, Debug)]
enum Piece {
    Lit(String),
    Param(usize),
}

fn lit_piece() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("%20".to_string()),
        Just("%00".to_string()),
        Just("%2e%2e%2f".to_string()),
        Just("../".to_string()),
        Just("%20%00.php".to_string()),
        "[a-z0-9][a-z0-9._~-]{0,6}",
    ]
}

fn piece() -> impl Strategy<Value = Piece> {
    prop_oneof![
        lit_piece().prop_map(Piece::Lit),
        (0usize..4).prop_map(Piece::Param),
    ]
}

/// Binding values: printable ASCII without braces or backslash, so the value
/// text is inert with respect to template syntax.
fn binding_value() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ._%/:-]{0,8}"
}

proptest! {
    /// Literal runs — including the percent-encoded motifs — reach the
    /// instantiated plan byte-for-byte and in order, and every placeholder is
    /// replaced by exactly its binding. Together this is substitution
    /// totality: the output equals the concatenation predicted from the
    /// template alone.
    #[test]
    fn literals_survive_and_substitution_is_total(
        pieces in prop::collection::vec(piece(), 1..8),
        values in prop::collection::vec(binding_value(), 4),
    ) {
        let mut src = String::from("trigger t\n");
        for i in 0..4 {
            src.push_str(&format!("param p{i}\n"));
        }
        src.push_str("mode m:\n  request:\n    method GET\n    path /");
        let mut expected: Vec<u8> = b"/".to_vec();
        for p in &pieces {
            match p {
                Piece::Lit(s) => {
                    src.push_str(s);
                    expected.extend_from_slice(s.as_bytes());
                }
                Piece::Param(i) => {
                    src.push_str(&format!("{{p{i}}}"));
                    expected.extend_from_slice(values[*i].as_bytes());
                }
            }
        }
        src.push('\n');

        let tf = parse_trigger(&src).unwrap();
        let mut bindings = BTreeMap::new();
        for (i, v) in values.iter().enumerate() {
            bindings.insert(format!("p{i}"), v.clone());
        }
        let plan = instantiate(&tf, "m", &bindings).unwrap();
        prop_assert_eq!(plan.requests[0].path.as_slice(), expected.as_slice());
    }

    /// A used parameter with neither a binding nor a default is a hard
    /// instantiation error naming that parameter — never silently emitted as
    /// a leftover `{name}`.
    #[test]
    fn missing_binding_is_an_error(
        missing in 0usize..3,
        values in prop::collection::vec(binding_value(), 3),
    ) {
        let src = "trigger t\nparam p0\nparam p1\nparam p2\nmode m:\n  request:\n    method GET\n    path /{p0}/{p1}/{p2}\n";
        let tf = parse_trigger(src).unwrap();
        let mut bindings = BTreeMap::new();
        for (i, v) in values.iter().enumerate() {
            if i != missing {
                bindings.insert(format!("p{i}"), v.clone());
            }
        }
        match instantiate(&tf, "m", &bindings) {
            Err(InstantiateError::MissingBinding(name)) => {
                prop_assert_eq!(name, format!("p{missing}"));
            }
            other => prop_assert!(false, "expected MissingBinding, got {other:?}"),
        }
    }
}

fn dsl_ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_-]{0,6}"
}

fn param_name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,6}"
}

fn default_value() -> impl Strategy<Value = String> {
    // no leading/trailing whitespace: `param` lines are trimmed on re-parse
    "[A-Za-z0-9._%/-]{1,8}"
}

fn method() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("GET".to_string()),
        Just("POST".to_string()),
        Just("PUT".to_string()),
        Just("DELETE".to_string()),
        Just("PATCH".to_string()),
    ]
}

/// A whole trigger-function source. Parameters are declared up front and the
/// path of each request references only declared names.
fn trigger_source() -> impl Strategy<Value = String> {
    (
        dsl_ident(),
        prop::collection::vec((param_name(), prop::option::of(default_value())), 0..4),
        prop::collection::vec(
            (
                dsl_ident(),
                prop::collection::vec(
                    (method(), prop::collection::vec(piece(), 1..5), prop::option::of("[a-z0-9 ._%-]{0,12}")),
                    1..3,
                ),
            ),
            1..3,
        ),
    )
        .prop_map(|(name, params, modes)| {
            // de-duplicate names positionally so the source is always valid
            let params: Vec<(String, Option<String>)> = params
                .into_iter()
                .enumerate()
                .map(|(i, (n, d))| (format!("{n}{i}"), d))
                .collect();
            let mut src = format!("trigger {name}\n");
            for (n, d) in &params {
                match d {
                    Some(d) => src.push_str(&format!("param {n} default={d}\n")),
                    None => src.push_str(&format!("param {n}\n")),
                }
            }
            for (mi, (mname, requests)) in modes.into_iter().enumerate() {
                src.push_str(&format!("mode {mname}{mi}:\n"));
                for (method, pieces, body) in requests {
                    src.push_str("  request:\n");
                    src.push_str(&format!("    method {method}\n"));
                    src.push_str("    path /");
                    for p in pieces {
                        match p {
                            Piece::Lit(s) => src.push_str(&s),
                            Piece::Param(i) if !params.is_empty() => {
                                src.push_str(&format!("{{{}}}", params[i % params.len()].0));
                            }
                            Piece::Param(_) => src.push_str("x"),
                        }
                    }
                    src.push('\n');
                    if let Some(b) = body {
                        src.push_str("    body <<XBODYX\n");
                        if !b.is_empty() {
                            src.push_str(&b);
                            src.push('\n');
                        }
                        src.push_str("XBODYX\n");
                    }
                }
            }
            src
        })
}

proptest! {
    /// `render_trigger` is a canonical form: re-parsing it reproduces the
    /// same structure, and rendering again is byte-identical (a fixpoint).
    #[test]
    fn trigger_parse_render_round_trip(src in trigger_source()) {
        let tf1 = parse_trigger(&src).unwrap();
        let r1 = render_trigger(&tf1);
        let tf2 = parse_trigger(&r1).unwrap();
        prop_assert_eq!(&tf1, &tf2);
        prop_assert_eq!(render_trigger(&tf2), r1);
    }
}

/// Arbitrary expectation bytes with non-space bytes at both ends, so the
/// escaped text survives the line trimming done by the test-case parser.
fn expect_bytes() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(any::<u8>(), 1..20).prop_map(|mut v| {
        if v[0] == b' ' {
            v[0] = b'/';
        }
        let last = v.len() - 1;
        if v[last] == b' ' {
            v[last] = b'/';
        }
        v
    })
}

fn testcase() -> impl Strategy<Value = TriggerTestCase> {
    prop::collection::vec(
        (
            dsl_ident(),
            prop::collection::vec((param_name(), "[a-z0-9._%-]{1,8}"), 0..3),
            method(),
            prop::option::of(expect_bytes()),
            prop::collection::vec(("[A-Za-z][A-Za-z0-9-]{0,7}", expect_bytes()), 0..2),
            // body may be any bytes at all: heredoc lines are never trimmed
            prop::option::of(prop::collection::vec(any::<u8>(), 0..24)),
        ),
        1..4,
    )
    .prop_map(|steps| TriggerTestCase {
        steps: steps
            .into_iter()
            .map(|(mode, bindings, method, path, headers, body)| {
                let headers = headers
                    .into_iter()
                    .enumerate()
                    .map(|(i, (n, v))| (format!("{n}{i}"), v))
                    .collect();
                CaseStep {
                    mode,
                    bindings: bindings.into_iter().collect(),
                    expected: ExpectedRequest { method: Some(method), path, headers, body },
                }
            })
            .collect(),
    })
}

proptest! {
    /// Same canonical-form property for test cases, including arbitrary
    /// (non-UTF-8) expectation bytes, which round-trip through `\xNN`
    /// escaping.
    #[test]
    fn testcase_parse_render_round_trip(tc1 in testcase()) {
        let r1 = render_testcase(&tc1);
        let tc2 = parse_testcase(&r1).unwrap();
        prop_assert_eq!(&tc1, &tc2);
        prop_assert_eq!(render_testcase(&tc2), r1);
    }
}

#[derive(Clone, Copy, Debug)]
enum Mutation {
    Method,
    Path,
    Header,
    Body,
}

proptest! {
    /// Build a test case that provably passes (its expectations are read off
    /// the instantiated plan), then corrupt exactly one component. The
    /// validator must fail, name that component, and point at step 0.
    #[test]
    fn validator_localizes_a_single_mutation(
        pieces in prop::collection::vec(piece(), 1..5),
        values in prop::collection::vec(binding_value(), 4),
        m in method(),
        header_val in "[a-zA-Z0-9._-]{1,10}",
        body_text in "[a-z0-9 ._-]{1,16}",
        which in prop::sample::select(&[Mutation::Method, Mutation::Path, Mutation::Header, Mutation::Body][..]),
    ) {
        let mut src = String::from("trigger t\n");
        for i in 0..4 {
            src.push_str(&format!("param p{i}\n"));
        }
        src.push_str(&format!("mode m:\n  request:\n    method {m}\n    path /"));
        for p in &pieces {
            match p {
                Piece::Lit(s) => src.push_str(s),
                Piece::Param(i) => src.push_str(&format!("{{p{i}}}")),
            }
        }
        src.push('\n');
        src.push_str(&format!("    header X-Check: {header_val}\n"));
        src.push_str(&format!("    body <<B\n{body_text}\nB\n"));

        let tf = parse_trigger(&src).unwrap();
        let bindings: BTreeMap<String, String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("p{i}"), v.clone()))
            .collect();
        let plan = instantiate(&tf, "m", &bindings).unwrap();
        let req = &plan.requests[0];

        let mut expected = ExpectedRequest {
            method: Some(req.method.clone()),
            path: Some(req.path.clone()),
            headers: req.headers.clone(),
            body: req.body.clone(),
        };
        let passing = TriggerTestCase {
            steps: vec![CaseStep { mode: "m".into(), bindings: bindings.clone(), expected: expected.clone() }],
        };
        prop_assert!(run_testcase(&tf, &passing).passed);

        let want = match which {
            Mutation::Method => {
                expected.method = Some(if req.method == "GET" { "POST".into() } else { "GET".into() });
                Component::Method
            }
            Mutation::Path => {
                expected.path.as_mut().unwrap().push(b'Z');
                Component::UrlPath
            }
            Mutation::Header => {
                expected.headers[0].1.push(b'Z');
                Component::Header("X-Check".into())
            }
            Mutation::Body => {
                expected.body.as_mut().unwrap().push(b'Z');
                Component::Body
            }
        };
        let failing = TriggerTestCase {
            steps: vec![CaseStep { mode: "m".into(), bindings, expected }],
        };
        let result = run_testcase(&tf, &failing);
        prop_assert!(!result.passed);
        prop_assert_eq!(result.failing_step, Some(0));
        prop_assert_eq!(result.component, Some(want));
        prop_assert!(result.message.contains("Mismatch: Expected '"), "message: {}", result.message);
    }
}

fn record() -> impl Strategy<Value = ObjectiveRecord> {
    (
        0usize..ObjectiveCategory::ALL.len(),
        prop::sample::select(&[InfoCategory::Nl, InfoCategory::Http, InfoCategory::Payload][..]),
        any::<bool>(),
        0u32..5,
    )
        .prop_map(|(c, info, ok, refinements)| ObjectiveRecord {
            task_id: "t".into(),
            objective_id: "o".into(),
            category: ObjectiveCategory::ALL[c],
            info_category: info,
            attack_result: ok,
            refinements_used: refinements,
        })
}

proptest! {
    /// ASR equals the exact success ratio, and any partition of the records
    /// (here: by objective category) decomposes it: per-cell successes and
    /// totals sum back to the overall counts, with no rounding anywhere.
    #[test]
    fn asr_decomposes_over_partitions(records in prop::collection::vec(record(), 1..40)) {
        let successes = records.iter().filter(|r| r.attack_result).count() as u64;
        let total = records.len() as u64;
        let overall = asr(&records).unwrap();
        prop_assert_eq!(overall, Ratio::new(successes, total));

        let mut sum_s = 0u64;
        let mut sum_t = 0u64;
        for cat in ObjectiveCategory::ALL {
            let cell: Vec<&ObjectiveRecord> =
                records.iter().filter(|r| r.category == cat).collect();
            sum_s += cell.iter().filter(|r| r.attack_result).count() as u64;
            sum_t += cell.len() as u64;
            if !cell.is_empty() {
                let cell_asr = asr(cell.iter().copied()).unwrap();
                // the cell ratio reproduces the cell counts exactly
                let cnt = cell.iter().filter(|r| r.attack_result).count() as u64;
                prop_assert_eq!(cell_asr, Ratio::new(cnt, cell.len() as u64));
            }
        }
        prop_assert_eq!((sum_s, sum_t), (successes, total));

        // the 4-decimal rendering is within half an ulp of the exact ratio
        let shown: f64 = format_asr(&overall).parse().unwrap();
        let exact = successes as f64 / total as f64;
        prop_assert!((shown - exact).abs() <= 0.00005 + 1e-12);
    }
}
