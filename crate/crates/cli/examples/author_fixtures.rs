//! Regenerates the bundled LLM replies and the golden manifest.
//!
//! The replies are scripted here, keyed on the passage or the recommendation
//! a prompt carries, and recorded under `fixtures/llm/<sha256>.txt` by
//! running the fixture pipeline through a recording backend.
//!
//! ```text
//! cargo run -p guidex-cli --example author_fixtures
//! ```

use std::fs;

use guidex_cli::pipeline::{bundled_fixtures, fixture_run_config, run_pipeline};
use guidex_core::extraction::{BackendError, CompletionRequest, RecordingBackend, ScriptedBackend};

const META: &str = r#""source":{"guideline_id":"x","chunk_id":"x#0"},"metadata":{"disease_or_drug":"x","age_group":"adult","race":"any","gender":"any","publication_date":"2020-01-01"}"#;

fn tree(body: &str) -> String {
    format!(r#"{{"schema_version":1,"id":"draft",{META},{body}}}"#)
}

const EXTRACTIONS: &[(&str, &str)] = &[
    (
        "lipids-2018#0",
        r#"[{"population":"adults","condition":"LDL cholesterol of 190 mg/dL or higher, or diabetes","action":"start statin therapy of the indicated intensity","exceptions":null,"evidence_grade":"I-A","actionable":true},
 {"population":"adults meeting neither criterion","condition":"none","action":"","exceptions":null,"evidence_grade":null,"actionable":false}]"#,
    ),
    (
        "asthma-2020#0",
        r#"Here is the list you asked for:
[{"population":"patients with asthma","condition":"symptoms two or more days per week or night waking","action":"start daily low-dose inhaled corticosteroid","exceptions":null,"evidence_grade":"A","actionable":true}]"#,
    ),
    (
        "asthma-2020#1",
        r#"[{"population":"patients aged 12 and older","condition":"uncontrolled on low-dose inhaled corticosteroid","action":"add a long-acting beta agonist","exceptions":null,"evidence_grade":"A","actionable":true},
 {"population":"Patients aged 12 and older","condition":"uncontrolled on  low-dose inhaled corticosteroid","action":"Add a long-acting beta agonist","exceptions":null,"evidence_grade":null,"actionable":true},
 {"population":"children younger than 12","condition":"any","action":"","exceptions":null,"evidence_grade":null,"actionable":false}]"#,
    ),
    (
        "hypertension-2017#0",
        r#"```json
[{"population":"adults","condition":"systolic blood pressure of 140 mm Hg or higher","action":"initiate a thiazide-type diuretic or an ACE inhibitor","exceptions":null,"evidence_grade":"B","actionable":true},
 {"population":"adults with resistant hypertension","condition":"serum potassium and kidney function permit","action":"add an aldosterone antagonist","exceptions":"hyperkalemia","evidence_grade":"B","actionable":true}]
```"#,
    ),
    ("influenza-burden-2019#0", "[]"),
];

fn statin_tree() -> String {
    tree(
        r#""variables":[{"name":"age","kind":"numeric","unit":"years","min":18,"max":100,"grid":[40,55,70]},{"name":"diabetes","kind":"boolean"},{"name":"ldl","kind":"numeric","unit":"mg/dL","min":0,"max":400,"grid":[80,130,200]}],"outputs":["high-intensity statin","moderate-intensity statin","no-action"],"no_action_index":2,"root":{"if":{"var":"age","op":"ge","value":50},"then":{"if":{"var":"ldl","op":"ge","value":190},"then":{"leaf":0},"else":{"if":{"var":"diabetes","op":"is","value":true},"then":{"leaf":1},"else":{"leaf":2}}},"else":{"if":{"var":"diabetes","op":"is","value":true},"then":{"leaf":1},"else":{"leaf":2}}}"#,
    )
}

const ICS_VARS: &str = r#""variables":[{"name":"night_waking","kind":"boolean"},{"name":"symptom_days","kind":"numeric","unit":"days/week","min":0,"max":7,"grid":[0,1,3,5,7]}],"outputs":["low-dose inhaled corticosteroid","no-action"],"no_action_index":1"#;

/// First draft: the inner test contradicts its parent and leaves a dead branch.
fn ics_tree_dead() -> String {
    tree(&format!(
        r#"{ICS_VARS},"root":{{"if":{{"var":"symptom_days","op":"ge","value":2}},"then":{{"if":{{"var":"symptom_days","op":"lt","value":1}},"then":{{"leaf":1}},"else":{{"leaf":0}}}},"else":{{"if":{{"var":"night_waking","op":"is","value":true}},"then":{{"leaf":0}},"else":{{"leaf":1}}}}}}"#
    ))
}

fn ics_tree() -> String {
    tree(&format!(
        r#"{ICS_VARS},"root":{{"if":{{"var":"symptom_days","op":"ge","value":2}},"then":{{"leaf":0}},"else":{{"if":{{"var":"night_waking","op":"is","value":true}},"then":{{"leaf":0}},"else":{{"leaf":1}}}}}}"#
    ))
}

fn laba_tree() -> String {
    tree(
        r#""variables":[{"name":"age","kind":"numeric","unit":"years","min":5,"max":100,"grid":[8,12,40]},{"name":"controlled_on_ics","kind":"boolean"}],"outputs":["add long-acting beta agonist","continue current therapy","no-action"],"no_action_index":2,"root":{"if":{"var":"age","op":"ge","value":12},"then":{"if":{"var":"controlled_on_ics","op":"is","value":true},"then":{"leaf":1},"else":{"leaf":0}},"else":{"leaf":2}}"#,
    )
}

fn antihypertensive_tree() -> String {
    tree(
        r#""variables":[{"name":"ckd","kind":"boolean"},{"name":"race","kind":"categorical","values":["asian","black","other","white"]},{"name":"systolic_bp","kind":"numeric","unit":"mm Hg","min":80,"max":220,"grid":[120,135,150,170]}],"outputs":["thiazide-type diuretic","ACE inhibitor","no-action"],"no_action_index":2,"root":{"if":{"var":"systolic_bp","op":"ge","value":140},"then":{"if":{"var":"ckd","op":"is","value":true},"then":{"leaf":1},"else":{"if":{"var":"race","op":"eq","value":"black"},"then":{"leaf":0},"else":{"leaf":1}}},"else":{"leaf":2}}"#,
    )
}

/// Declares a potassium variable it never tests, so it fails validation.
fn aldosterone_tree_unused() -> String {
    tree(
        r#""variables":[{"name":"potassium","kind":"numeric","unit":"mmol/L","min":2,"max":7,"grid":[3.5,4.5,5.5]},{"name":"resistant","kind":"boolean"}],"outputs":["aldosterone antagonist","no-action"],"no_action_index":1,"root":{"if":{"var":"resistant","op":"is","value":true},"then":{"leaf":0},"else":{"leaf":1}}"#,
    )
}

type Reply = fn() -> String;

fn first_reply(prompt: &str) -> Option<String> {
    if prompt.starts_with("You extract") {
        return EXTRACTIONS
            .iter()
            .find(|(chunk, _)| prompt.contains(&format!("Passage ({chunk})")))
            .map(|(_, reply)| reply.to_string());
    }
    let drafts: [(&str, Reply); 5] = [
        ("start statin therapy", statin_tree),
        ("start daily low-dose inhaled corticosteroid", ics_tree_dead),
        ("long-acting beta agonist", laba_tree),
        ("thiazide-type diuretic", antihypertensive_tree),
        ("aldosterone antagonist", || "I am unable to express this recommendation as a tree.".into()),
    ];
    drafts.iter().find(|(key, _)| prompt.contains(key)).map(|(_, f)| f())
}

fn repair_reply(prompt: &str) -> Option<String> {
    if prompt.contains("start daily low-dose inhaled corticosteroid") {
        Some(ics_tree())
    } else if prompt.contains("aldosterone antagonist") {
        Some(aldosterone_tree_unused())
    } else {
        None
    }
}

fn respond(request: &CompletionRequest) -> Result<String, BackendError> {
    let prompt = &request.messages[0].content;
    let reply = match request.messages.len() {
        1 => first_reply(prompt),
        _ => repair_reply(prompt),
    };
    reply.ok_or_else(|| BackendError::Config(format!("unscripted request: {}", request.hash())))
}

fn main() {
    let root = bundled_fixtures();
    let llm = root.join("llm");
    if llm.exists() {
        fs::remove_dir_all(&llm).expect("clear recorded replies");
    }
    let backend = RecordingBackend::new(ScriptedBackend::new(respond), &llm).expect("recording backend");
    let out = std::env::temp_dir().join(format!("guidex-author-{}", std::process::id()));
    let manifest =
        run_pipeline(&root.join("corpus"), &out, &backend, &fixture_run_config()).expect("fixture pipeline run");
    fs::create_dir_all(root.join("golden")).expect("golden dir");
    fs::write(root.join("golden/manifest.json"), manifest.stable_text() + "\n").expect("write golden manifest");
    fs::remove_dir_all(&out).ok();
    println!("{}", manifest.stable_text());
}
