//! LLM-backed pipeline stages behind a pluggable completion backend.
//!
//! Two backends ship with the crate: [`FixtureBackend`] replays canned replies
//! stored under `fixtures/<sha256-of-request>.txt`, and [`HttpChatBackend`]
//! talks to a chat-completions endpoint. [`RecordingBackend`] wraps any
//! backend and writes its replies in the fixture layout.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde_json::Value as Json;
use thiserror::Error;

use crate::canon::{self, Obj};
use crate::corpus::Chunk;
use crate::model::DecisionTree;
use crate::qa_counterfactual::CounterfactualInstance;
use crate::qa_factual::FactualInstance;
use crate::records::{assignment_to_json, path_to_json, value_to_json};
use crate::tree_format::{parse_tree, serialize_tree, tree_to_json, validate_tree};

pub const ENV_BASE_URL: &str = "GUIDEX_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "GUIDEX_LLM_API_KEY";
pub const ENV_MODEL: &str = "GUIDEX_LLM_MODEL";

pub mod prompts {
    pub const EXTRACT: &str = include_str!("../prompts/extract_recommendations.v1.txt");
    pub const DRAFT: &str = include_str!("../prompts/draft_tree.v1.txt");
    pub const REPAIR: &str = include_str!("../prompts/repair.v1.txt");
    pub const VERBALIZE_FACTUAL: &str = include_str!("../prompts/verbalize_factual.v1.txt");
    pub const VERBALIZE_COUNTERFACTUAL: &str = include_str!("../prompts/verbalize_counterfactual.v1.txt");
    pub const SEMANTIC_VERDICT: &str = include_str!("../prompts/semantic_verdict.v1.txt");
    pub const VERSION: &str = "v1";
}

/// Fills `{{name}}` placeholders in one pass; substituted text is not rescanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\{\{([a-z_]+)\}\}").expect("static regex"));
    re.replace_all(template, |c: &regex::Captures| {
        let key = &c[1];
        vars.iter()
            .find(|(k, _)| *k == key)
            .map_or_else(|| c[0].to_string(), |(_, v)| v.to_string())
    })
    .into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            temperature: 0.0,
            max_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub messages: Vec<Message>,
    pub params: DecodeParams,
}

impl CompletionRequest {
    pub fn single(prompt: String) -> Self {
        CompletionRequest {
            messages: vec![Message::user(prompt)],
            params: DecodeParams::default(),
        }
    }

    pub fn to_json(&self) -> Json {
        let messages: Vec<Json> = self
            .messages
            .iter()
            .map(|m| {
                Obj::new()
                    .field("role", m.role.as_str())
                    .field("content", m.content.clone())
                    .build()
            })
            .collect();
        Obj::new()
            .field("messages", messages)
            .field("temperature", canon::number(self.params.temperature))
            .field("max_tokens", self.params.max_tokens)
            .build()
    }

    /// Stable key: sha256 of the canonical request bytes.
    pub fn hash(&self) -> String {
        canon::sha256_hex(canon::to_string(&self.to_json()).as_bytes())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no fixture {hash}.txt in {dir}")]
    MissingFixture { dir: String, hash: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion reply: {0}")]
    Malformed(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

impl BackendError {
    fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ExtractionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

impl<B: ExtractionBackend + ?Sized> ExtractionBackend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: ExtractionBackend + ?Sized> ExtractionBackend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone)]
pub struct FixtureBackend {
    dir: PathBuf,
}

impl FixtureBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureBackend { dir: dir.into() }
    }

    pub fn path_for(&self, request: &CompletionRequest) -> PathBuf {
        self.dir.join(format!("{}.txt", request.hash()))
    }
}

impl ExtractionBackend for FixtureBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let path = self.path_for(request);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(BackendError::MissingFixture {
                dir: self.dir.display().to_string(),
                hash: request.hash(),
            }),
            Err(e) => Err(BackendError::Io(path.display().to_string(), e)),
        }
    }
}

type Responder = dyn Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync;

/// Answers requests with a closure; used for tests and fixture authoring.
pub struct ScriptedBackend(Box<Responder>);

impl ScriptedBackend {
    pub fn new(f: impl Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync + 'static) -> Self {
        ScriptedBackend(Box::new(f))
    }
}

impl ExtractionBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (self.0)(request)
    }
}

/// Forwards to `inner` and stores each reply as `<dir>/<hash>.txt`.
pub struct RecordingBackend<B> {
    inner: B,
    dir: PathBuf,
}

impl<B: ExtractionBackend> RecordingBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| BackendError::Io(dir.display().to_string(), e))?;
        Ok(RecordingBackend { inner, dir })
    }
}

impl<B: ExtractionBackend> ExtractionBackend for RecordingBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let reply = self.inner.complete(request)?;
        let path = self.dir.join(format!("{}.txt", request.hash()));
        fs::write(&path, &reply).map_err(|e| BackendError::Io(path.display().to_string(), e))?;
        Ok(reply)
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
            max_in_flight: 4,
            timeout: Duration::from_secs(300),
        }
    }

    /// Reads the endpoint, key and model from the environment.
    pub fn from_env() -> Result<Self, BackendError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let base = var(ENV_BASE_URL).ok_or_else(|| BackendError::Config(format!("{ENV_BASE_URL} is not set")))?;
        let model = var(ENV_MODEL).ok_or_else(|| BackendError::Config(format!("{ENV_MODEL} is not set")))?;
        let mut cfg = HttpConfig::new(base, model);
        cfg.api_key = var(ENV_API_KEY);
        Ok(cfg)
    }
}

/// Chat-completions client with bounded concurrency and retry on transient
/// failures (transport errors, 429 and 5xx).
#[derive(Debug)]
pub struct HttpChatBackend {
    cfg: HttpConfig,
    agent: ureq::Agent,
    slots: Slots,
}

impl HttpChatBackend {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(cfg.timeout))
            .build()
            .into();
        let slots = Slots::new(cfg.max_in_flight);
        HttpChatBackend { cfg, agent, slots }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &Json) -> Result<String, BackendError> {
        let mut req = self.agent.post(&self.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(canon::to_string(body).as_bytes())
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        let json: Json = serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        json.pointer("/choices/0/message/content")
            .and_then(Json::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))
    }
}

impl ExtractionBackend for HttpChatBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut body = request.to_json();
        body.as_object_mut()
            .expect("request object")
            .insert("model".into(), Json::String(self.cfg.model.clone()));
        let _slot = self.slots.acquire();
        let mut delay = self.cfg.backoff_base;
        let mut retries = 0;
        loop {
            match self.attempt(&body) {
                Err(e) if e.is_transient() && retries < self.cfg.max_retries => {
                    log::warn!("completion attempt {} failed: {e}; retrying in {delay:?}", retries + 1);
                    std::thread::sleep(delay);
                    delay *= 2;
                    retries += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecommendationCandidate {
    pub population: String,
    pub condition: String,
    pub action: String,
    pub exceptions: Option<String>,
    pub evidence_grade: Option<String>,
    pub chunk_id: String,
}

impl RecommendationCandidate {
    pub fn to_json(&self) -> Json {
        let opt = |s: &Option<String>| s.clone().map_or(Json::Null, Json::String);
        Obj::new()
            .field("population", self.population.clone())
            .field("condition", self.condition.clone())
            .field("action", self.action.clone())
            .field("exceptions", opt(&self.exceptions))
            .field("evidence_grade", opt(&self.evidence_grade))
            .field("chunk_id", self.chunk_id.clone())
            .build()
    }

    fn dedup_key(&self) -> (String, String, String) {
        let n = crate::verifier::normalize_label;
        (n(&self.population), n(&self.condition), n(&self.action))
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("unparseable reply after repair: {0}")]
    Unparseable(String),
    #[error("empty reply")]
    EmptyReply,
}

/// Pulls the JSON payload out of a reply, tolerating code fences and prose.
fn json_payload(reply: &str, open: char, close: char) -> Option<&str> {
    let start = reply.find(open)?;
    let end = reply.rfind(close)?;
    (end > start).then(|| &reply[start..=end])
}

/// Sends `prompt`; if `parse` rejects the reply, re-prompts once with the
/// problem and the previous reply.
fn with_repair<T>(
    backend: &dyn ExtractionBackend,
    prompt: String,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Result<T, String>, BackendError> {
    let first = CompletionRequest::single(prompt.clone());
    let reply = backend.complete(&first)?;
    let problem = match parse(&reply) {
        Ok(v) => return Ok(Ok(v)),
        Err(p) => p,
    };
    log::info!("repairing reply: {problem}");
    let repair = CompletionRequest {
        messages: vec![
            Message::user(prompt),
            Message::assistant(reply.clone()),
            Message::user(render(prompts::REPAIR, &[("problem", &problem), ("reply", &reply)])),
        ],
        params: first.params,
    };
    let second = backend.complete(&repair)?;
    Ok(parse(&second))
}

fn parse_candidates(reply: &str, chunk_id: &str) -> Result<(usize, Vec<RecommendationCandidate>), String> {
    let payload = json_payload(reply, '[', ']').ok_or("no JSON array in reply")?;
    let items: Vec<Json> = serde_json::from_str(payload).map_err(|e| format!("invalid JSON array: {e}"))?;
    let raw = items.len();
    let mut out = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let obj = item.as_object().ok_or(format!("element {i} is not an object"))?;
        let text = |k: &str| -> Result<Option<String>, String> {
            match obj.get(k) {
                None | Some(Json::Null) => Ok(None),
                Some(Json::String(s)) => Ok(Some(s.trim().to_string()).filter(|s| !s.is_empty())),
                Some(_) => Err(format!("element {i}: {k} must be a string or null")),
            }
        };
        let actionable = match obj.get("actionable") {
            None => true,
            Some(Json::Bool(b)) => *b,
            Some(_) => return Err(format!("element {i}: actionable must be a boolean")),
        };
        let Some(action) = text("action")? else { continue };
        if !actionable {
            continue;
        }
        out.push(RecommendationCandidate {
            population: text("population")?.unwrap_or_default(),
            condition: text("condition")?.unwrap_or_default(),
            action,
            exceptions: text("exceptions")?,
            evidence_grade: text("evidence_grade")?,
            chunk_id: chunk_id.to_string(),
        });
    }
    Ok((raw, out))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Extraction {
    /// Elements in the accepted reply, before filtering.
    pub raw_count: usize,
    /// Actionable, within-chunk unique candidates in reply order.
    pub candidates: Vec<RecommendationCandidate>,
}

pub fn extract_recommendations(chunk: &Chunk, backend: &dyn ExtractionBackend) -> Result<Extraction, StageError> {
    let prompt = render(prompts::EXTRACT, &[("chunk_id", &chunk.chunk_id), ("text", &chunk.text)]);
    let (raw_count, parsed) =
        with_repair(backend, prompt, |r| parse_candidates(r, &chunk.chunk_id))?.map_err(StageError::Unparseable)?;
    let mut seen = HashSet::new();
    let candidates = parsed.into_iter().filter(|c| seen.insert(c.dedup_key())).collect();
    Ok(Extraction { raw_count, candidates })
}

#[derive(Debug, Error)]
pub enum DraftError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("candidate discarded: {reason}")]
    Discarded { reason: String },
}

/// Provenance stamped onto every drafted tree, overriding the model's copy.
#[derive(Debug, Clone)]
pub struct DraftTarget {
    pub tree_id: String,
    pub source: crate::model::Source,
    pub metadata: crate::model::TreeMetadata,
}

fn metadata_json(m: &crate::model::TreeMetadata) -> Json {
    Obj::new()
        .field("disease_or_drug", m.disease_or_drug.clone())
        .field("age_group", m.age_group.clone())
        .field("race", m.race.clone())
        .field("gender", m.gender.clone())
        .field("publication_date", crate::tree_format::format_date(m.publication_date))
        .build()
}

fn accept_tree(reply: &str, target: &DraftTarget) -> Result<DecisionTree, String> {
    let payload = json_payload(reply, '{', '}').ok_or("no JSON object in reply")?;
    let tree = parse_tree(payload).map_err(|e| format!("parse error: {e}"))?;
    let tree = tree
        .with_provenance(target.tree_id.clone(), target.source.clone(), target.metadata.clone())
        .map_err(|e| format!("invalid tree: {e}"))?;
    let report = validate_tree(&tree);
    if report.ok {
        Ok(tree)
    } else {
        Err(format!("validation report: {}", canon::to_string(&report.to_json())))
    }
}

/// Drafts a tree; the result always passes validation.
pub fn draft_tree(
    candidate: &RecommendationCandidate,
    target: &DraftTarget,
    backend: &dyn ExtractionBackend,
) -> Result<DecisionTree, DraftError> {
    let prompt = render(
        prompts::DRAFT,
        &[
            ("candidate", &canon::to_string(&candidate.to_json())),
            ("guideline_id", &target.source.guideline_id),
            ("chunk_id", &target.source.chunk_id),
            ("metadata", &canon::to_string(&metadata_json(&target.metadata))),
        ],
    );
    with_repair(backend, prompt, |r| accept_tree(r, target))?.map_err(|reason| DraftError::Discarded { reason })
}

pub enum RationaleSubject<'a> {
    Factual(&'a FactualInstance),
    Counterfactual(&'a CounterfactualInstance),
}

pub fn verbalize_rationale(
    subject: RationaleSubject<'_>,
    tree: &DecisionTree,
    backend: &dyn ExtractionBackend,
) -> Result<String, StageError> {
    let tree_text = serialize_tree(tree);
    let prompt = match subject {
        RationaleSubject::Factual(f) => render(
            prompts::VERBALIZE_FACTUAL,
            &[
                ("tree", &tree_text),
                ("assignment", &canon::to_string(&assignment_to_json(&f.assignment))),
                ("path", &canon::to_string(&path_to_json(&f.path))),
                ("label", &f.label),
            ],
        ),
        RationaleSubject::Counterfactual(c) => {
            let names: Vec<&str> = c.hidden_names.iter().map(String::as_str).collect();
            let intervention = format!(
                "{}: {} -> {}",
                c.intervention.var,
                canon::to_string(&value_to_json(&c.intervention.original)),
                canon::to_string(&value_to_json(&c.intervention.new))
            );
            render(
                prompts::VERBALIZE_COUNTERFACTUAL,
                &[
                    ("tree", &tree_text),
                    ("observed", &canon::to_string(&assignment_to_json(&c.observed))),
                    ("hidden_names", &names.join(", ")),
                    ("hidden_values", &canon::to_string(&assignment_to_json(&c.hidden_values))),
                    ("intervention", &intervention),
                    ("y_obs", &c.y_obs),
                    ("y_cf", &c.y_cf),
                ],
            )
        }
    };
    let reply = backend.complete(&CompletionRequest::single(prompt))?;
    let text = reply.trim();
    if text.is_empty() {
        return Err(StageError::EmptyReply);
    }
    Ok(text.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticVerdict {
    /// `Some(true)` for PASS, `Some(false)` for FAIL, `None` if unrecognised.
    pub pass: Option<bool>,
    pub text: String,
}

/// Asks the backend for a faithfulness verdict. The verdict is advisory and
/// never gates acceptance.
pub fn semantic_verdict(
    tree: &DecisionTree,
    chunk: &Chunk,
    backend: &dyn ExtractionBackend,
) -> Result<SemanticVerdict, StageError> {
    let prompt = render(
        prompts::SEMANTIC_VERDICT,
        &[
            ("chunk_id", &chunk.chunk_id),
            ("text", &chunk.text),
            ("tree", &canon::to_string(&tree_to_json(tree))),
        ],
    );
    let reply = backend.complete(&CompletionRequest::single(prompt))?;
    let text = reply.trim().to_string();
    if text.is_empty() {
        return Err(StageError::EmptyReply);
    }
    let first = text.lines().next().unwrap_or("").trim().to_ascii_uppercase();
    let pass = if first.starts_with("PASS") {
        Some(true)
    } else if first.starts_with("FAIL") {
        Some(false)
    } else {
        None
    };
    Ok(SemanticVerdict { pass, text })
}

/// Fixture file path for a request under `dir`.
pub fn fixture_path(dir: &Path, request: &CompletionRequest) -> PathBuf {
    dir.join(format!("{}.txt", request.hash()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{metadata, t1};
    use crate::model::Source;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn chunk(text: &str) -> Chunk {
        Chunk {
            chunk_id: "statin-01#0".into(),
            text: text.into(),
            word_count: crate::corpus::word_count(text),
            overflow: false,
            span: (0, text.len()),
        }
    }

    fn target() -> DraftTarget {
        DraftTarget {
            tree_id: "statin-01-c0-r0".into(),
            source: Source {
                guideline_id: "statin-01".into(),
                chunk_id: "statin-01#0".into(),
            },
            metadata: metadata(),
        }
    }

    fn candidate() -> RecommendationCandidate {
        RecommendationCandidate {
            population: "adults".into(),
            condition: "LDL >= 190".into(),
            action: "high-intensity statin".into(),
            exceptions: None,
            evidence_grade: Some("I".into()),
            chunk_id: "statin-01#0".into(),
        }
    }

    #[test]
    fn render_is_single_pass() {
        assert_eq!(render("a {{x}} {{y}} {{z}}", &[("x", "{{y}}"), ("y", "2")]), "a {{y}} 2 {{z}}");
    }

    #[test]
    fn request_hash_is_stable() {
        let r = CompletionRequest::single("hello".into());
        assert_eq!(
            canon::to_string(&r.to_json()),
            r#"{"messages":[{"role":"user","content":"hello"}],"temperature":0,"max_tokens":4096}"#
        );
        assert_eq!(r.hash(), CompletionRequest::single("hello".into()).hash());
        assert_ne!(r.hash(), CompletionRequest::single("hello ".into()).hash());
    }

    #[test]
    fn fixture_replay_and_recording() {
        let dir = tempfile::tempdir().unwrap();
        let req = CompletionRequest::single("p".into());
        let fixture = FixtureBackend::new(dir.path());
        assert!(matches!(fixture.complete(&req), Err(BackendError::MissingFixture { .. })));
        let rec = RecordingBackend::new(ScriptedBackend::new(|_| Ok("canned".into())), dir.path()).unwrap();
        assert_eq!(rec.complete(&req).unwrap(), "canned");
        assert_eq!(fixture.complete(&req).unwrap(), "canned");
        assert!(fixture_path(dir.path(), &req).exists());
    }

    #[test]
    fn extraction_filters_and_dedups() {
        let reply = r#"Here you go:
```json
[{"population":"adults","condition":"LDL >= 190","action":"high-intensity statin","exceptions":null,"evidence_grade":"I","actionable":true},
 {"population":"Adults","condition":"LDL  >= 190","action":"High-intensity statin","exceptions":null,"evidence_grade":null,"actionable":true},
 {"population":"adults","condition":"background","action":"","actionable":false},
 {"population":"adults","condition":"history","action":"read more","actionable":false}]
```"#;
        let backend = ScriptedBackend::new(move |_| Ok(reply.to_string()));
        let out = extract_recommendations(&chunk("text"), &backend).unwrap();
        assert_eq!(out.raw_count, 4);
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(out.candidates[0].evidence_grade.as_deref(), Some("I"));

        let empty = ScriptedBackend::new(|_| Ok("[]".into()));
        assert!(extract_recommendations(&chunk("narrative"), &empty).unwrap().candidates.is_empty());
    }

    #[test]
    fn extraction_repairs_once() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let backend = ScriptedBackend::new(move |req| {
            c.fetch_add(1, Ordering::SeqCst);
            Ok(if req.messages.len() == 1 { "sorry".into() } else { "[]".into() })
        });
        assert!(extract_recommendations(&chunk("t"), &backend).is_ok());
        assert_eq!(calls.load(Ordering::SeqCst), 2);

        let broken = ScriptedBackend::new(|_| Ok("nope".into()));
        assert!(matches!(
            extract_recommendations(&chunk("t"), &broken),
            Err(StageError::Unparseable(_))
        ));
    }

    fn dead_branch_document() -> String {
        crate::fixtures::T1_DOCUMENT.replace(
            r#""then":{"leaf":0}"#,
            r#""then":{"if":{"var":"age","op":"lt","value":40},"then":{"leaf":0},"else":{"leaf":0}}"#,
        )
    }

    #[test]
    fn draft_accepts_and_stamps_provenance() {
        let backend = ScriptedBackend::new(|_| Ok(crate::fixtures::T1_DOCUMENT.to_string()));
        let tree = draft_tree(&candidate(), &target(), &backend).unwrap();
        assert_eq!(tree.id(), "statin-01-c0-r0");
        assert_eq!(tree.root(), t1().root());
    }

    #[test]
    fn draft_repairs_dead_branch() {
        let bad = dead_branch_document();
        assert!(!validate_tree(&parse_tree(&bad).unwrap()).ok);
        let backend = ScriptedBackend::new(move |req| {
            Ok(if req.messages.len() == 1 {
                bad.clone()
            } else {
                assert!(req.messages[2].content.contains("dead_branch"));
                crate::fixtures::T1_DOCUMENT.to_string()
            })
        });
        assert!(draft_tree(&candidate(), &target(), &backend).is_ok());
    }

    #[test]
    fn draft_discards_after_second_failure() {
        let bad = dead_branch_document();
        let backend = ScriptedBackend::new(move |_| Ok(bad.clone()));
        match draft_tree(&candidate(), &target(), &backend) {
            Err(DraftError::Discarded { reason }) => assert!(reason.contains("dead_branch")),
            other => panic!("expected discard, got {other:?}"),
        }
    }

    #[test]
    fn rationale_contract() {
        let t = t1();
        let x = crate::model::Assignment::new()
            .with("age", 70.0)
            .with("ldl", 200.0)
            .with("diabetes", false);
        let r = crate::executor::execute(&t, &x).unwrap();
        let inst = FactualInstance {
            instance_id: "t1:f:0:0".into(),
            tree_id: "t1".into(),
            assignment: x,
            label: r.output_label,
            path_id: 0,
            path: r.path,
            question_text: None,
            rationale_text: None,
        };
        let echo = ScriptedBackend::new(|req| Ok(format!("  {}  ", req.messages[0].content.len())));
        assert!(!verbalize_rationale(RationaleSubject::Factual(&inst), &t, &echo).unwrap().is_empty());
        let empty = ScriptedBackend::new(|_| Ok(" \n".into()));
        assert!(matches!(
            verbalize_rationale(RationaleSubject::Factual(&inst), &t, &empty),
            Err(StageError::EmptyReply)
        ));
    }

    #[test]
    fn verdict_parsing() {
        let t = t1();
        let pass = ScriptedBackend::new(|_| Ok("PASS\nall conditions clear".into()));
        assert_eq!(semantic_verdict(&t, &chunk("x"), &pass).unwrap().pass, Some(true));
        let odd = ScriptedBackend::new(|_| Ok("maybe".into()));
        assert_eq!(semantic_verdict(&t, &chunk("x"), &odd).unwrap().pass, None);
    }

    /// Serves canned HTTP responses, one per connection, and records bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line.trim().is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn http_cfg(url: String) -> HttpConfig {
        let mut cfg = HttpConfig::new(url, "test-model");
        cfg.backoff_base = Duration::from_millis(1);
        cfg.timeout = Duration::from_secs(10);
        cfg
    }

    #[test]
    fn http_retries_transient_failures() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"done"}}]}"#.to_string();
        let (url, handle) = serve(vec![(500, "{}".into()), (429, "{}".into()), (200, ok)]);
        let backend = HttpChatBackend::new(http_cfg(url));
        assert_eq!(backend.complete(&CompletionRequest::single("p".into())).unwrap(), "done");
        let bodies = handle.join().unwrap();
        assert_eq!(bodies.len(), 3);
        assert!(bodies[0].contains(r#""model":"test-model""#));
    }

    #[test]
    fn http_gives_up_after_three_retries() {
        let (url, handle) = serve(vec![(503, "busy".into()); 4]);
        let backend = HttpChatBackend::new(http_cfg(url));
        let err = backend.complete(&CompletionRequest::single("p".into())).unwrap_err();
        assert!(matches!(err, BackendError::Status { status: 503, .. }));
        assert_eq!(handle.join().unwrap().len(), 4);
    }

    #[test]
    fn http_does_not_retry_client_errors() {
        let (url, handle) = serve(vec![(400, "bad".into())]);
        let backend = HttpChatBackend::new(http_cfg(url));
        assert!(matches!(
            backend.complete(&CompletionRequest::single("p".into())),
            Err(BackendError::Status { status: 400, .. })
        ));
        handle.join().unwrap();
    }

    #[test]
    fn slots_bound_concurrency() {
        let slots = Arc::new(Slots::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let workers: Vec<_> = (0..8)
            .map(|_| {
                let (slots, live, peak) = (slots.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _g = slots.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for w in workers {
            w.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
