//! Client for an external chat-completion service.
//!
//! Used for free-text answer parsing, prose consolidation and the
//! prompt-only question baselines. Every request goes through a
//! [`Transport`]; the mock transport answers from a script keyed by request
//! hash and never opens a socket, so everything built on the gateway stays
//! deterministic under test.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::belief::{Evidence, Provenance};
use crate::dialogue::{Question, QuestionOrigin};
use crate::error::{Error, Result};
use crate::schema::Schema;

pub const DEFAULT_API_KEY_ENV: &str = "NOUS_API_KEY";

pub mod prompts {
    pub const PARSER_V1: &str = include_str!("../assets/prompts/parser_v1.txt");
    pub const SOCRATIC_ZERO_SHOT_V1: &str =
        include_str!("../assets/prompts/socratic_zero_shot_v1.txt");
    pub const SOCRATIC_FEW_SHOT_V1: &str =
        include_str!("../assets/prompts/socratic_few_shot_v1.txt");
    pub const CONSOLIDATE_V1: &str = include_str!("../assets/prompts/consolidate_v1.txt");

    /// Substitutes `{key}` placeholders.
    pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
        vars.iter().fold(template.to_string(), |acc, (k, v)| {
            acc.replace(&format!("{{{k}}}"), v)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key_env_var: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// First retry delay; doubles on every further retry.
    pub backoff_ms: u64,
    pub mock_mode: bool,
    /// Unscripted requests fail instead of returning an empty completion.
    pub strict_mock: bool,
    /// Request hash -> canned completion.
    pub mock_script: BTreeMap<String, String>,
    pub log_path: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://localhost:8000/v1/chat/completions".into(),
            model_name: "default".into(),
            api_key_env_var: DEFAULT_API_KEY_ENV.into(),
            timeout_ms: 60_000,
            max_retries: 3,
            backoff_ms: 500,
            mock_mode: false,
            strict_mock: true,
            mock_script: BTreeMap::new(),
            log_path: None,
        }
    }
}

impl GatewayConfig {
    pub fn mock(script: BTreeMap<String, String>) -> Self {
        Self {
            mock_mode: true,
            mock_script: script,
            backoff_ms: 0,
            ..Self::default()
        }
    }

    /// Adds a scripted completion for `prompt`.
    pub fn script(mut self, prompt: &str, response: &str) -> Self {
        self.mock_script.insert(request_hash(prompt), response.to_string());
        self
    }
}

/// Hex SHA-256 of the prompt text; the key for mock scripts and logs.
pub fn request_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
}

impl ChatRequest {
    pub fn body(&self) -> Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": self.prompt}],
            "temperature": 0,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportError {
    pub transient: bool,
    pub message: String,
}

impl TransportError {
    pub fn transient(message: impl Into<String>) -> Self {
        Self {
            transient: true,
            message: message.into(),
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            transient: false,
            message: message.into(),
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(
        &self,
        request: &ChatRequest,
        api_key: Option<&str>,
    ) -> std::result::Result<String, TransportError>;

    fn touches_network(&self) -> bool;
}

pub struct MockTransport {
    script: BTreeMap<String, String>,
    strict: bool,
}

impl Transport for MockTransport {
    fn send(
        &self,
        request: &ChatRequest,
        _api_key: Option<&str>,
    ) -> std::result::Result<String, TransportError> {
        match self.script.get(&request_hash(&request.prompt)) {
            Some(text) => Ok(text.clone()),
            None if self.strict => Err(TransportError::fatal(format!(
                "unscripted mock request {}",
                request_hash(&request.prompt)
            ))),
            None => Ok(String::new()),
        }
    }

    fn touches_network(&self) -> bool {
        false
    }
}

pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            url: url.to_string(),
            agent: config.into(),
        }
    }
}

impl Transport for HttpTransport {
    fn send(
        &self,
        request: &ChatRequest,
        api_key: Option<&str>,
    ) -> std::result::Result<String, TransportError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request.body())
            .map_err(|e| TransportError::transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(TransportError::transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(TransportError::fatal(format!("HTTP {status}")));
        }
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| TransportError::fatal(format!("bad response body: {e}")))?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TransportError::fatal("response has no choices[0].message.content"))
    }

    fn touches_network(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub attempt: u32,
    pub request_hash: String,
    pub response_hash: Option<String>,
    pub error: Option<String>,
}

pub struct Gateway {
    config: GatewayConfig,
    transport: Box<dyn Transport>,
    log: Mutex<Vec<LogEntry>>,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Self {
        let transport: Box<dyn Transport> = if config.mock_mode {
            Box::new(MockTransport {
                script: config.mock_script.clone(),
                strict: config.strict_mock,
            })
        } else {
            Box::new(HttpTransport::new(
                &config.endpoint_url,
                Duration::from_millis(config.timeout_ms),
            ))
        };
        Self::with_transport(config, transport)
    }

    pub fn with_transport(config: GatewayConfig, transport: Box<dyn Transport>) -> Self {
        Self {
            config,
            transport,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn touches_network(&self) -> bool {
        self.transport.touches_network()
    }

    pub fn log(&self) -> Vec<LogEntry> {
        self.log.lock().expect("log lock").clone()
    }

    fn record(&self, entry: LogEntry) {
        if let Some(path) = &self.config.log_path {
            let line = serde_json::to_string(&entry).expect("log entry serializes");
            let written = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| writeln!(f, "{line}"));
            if let Err(e) = written {
                log::warn!("cannot append gateway log {}: {e}", path.display());
            }
        }
        self.log.lock().expect("log lock").push(entry);
    }

    /// Sends `prompt` and returns the completion text, retrying transient
    /// failures with exponential backoff.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let api_key = if self.transport.touches_network() {
            let var = &self.config.api_key_env_var;
            Some(std::env::var(var).map_err(|_| {
                Error::Config(format!("environment variable {var} is not set"))
            })?)
        } else {
            None
        };
        let request = ChatRequest {
            model: self.config.model_name.clone(),
            prompt: prompt.to_string(),
        };
        let hash = request_hash(prompt);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.transport.send(&request, api_key.as_deref()) {
                Ok(text) => {
                    log::debug!("gateway {hash} ok after {attempt} attempt(s)");
                    self.record(LogEntry {
                        attempt,
                        request_hash: hash,
                        response_hash: Some(request_hash(&text)),
                        error: None,
                    });
                    return Ok(text);
                }
                Err(err) => {
                    self.record(LogEntry {
                        attempt,
                        request_hash: hash.clone(),
                        response_hash: None,
                        error: Some(err.message.clone()),
                    });
                    if !err.transient || attempt > self.config.max_retries {
                        return Err(Error::Gateway(format!(
                            "{} (after {attempt} attempt(s))",
                            err.message
                        )));
                    }
                    let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
            }
        }
    }

    /// Asks the model to extract attribute values from a free-text answer.
    /// Pairs outside the schema are dropped with a warning.
    pub fn parse_freetext_answer(
        &self,
        question: &Question,
        answer_text: &str,
        schema: &Schema,
    ) -> Result<Evidence> {
        let prompt = parser_prompt(question, answer_text, schema);
        let output = self.complete(&prompt)?;
        let object = extract_json_object(&output).ok_or_else(|| {
            Error::Gateway(format!("parser output is not a JSON object: {output:?}"))
        })?;

        let mut evidence = Evidence::new(Provenance::Parser);
        for (id, value) in object {
            let Some(attr) = schema.attribute(&id) else {
                log::warn!("parser returned unknown attribute `{id}`; dropped");
                continue;
            };
            let values: Vec<String> = match value {
                Value::String(s) => vec![s],
                Value::Array(items) => items
                    .into_iter()
                    .filter_map(|v| v.as_str().map(str::to_string))
                    .collect(),
                other => {
                    log::warn!("parser returned non-string value {other} for `{id}`; dropped");
                    continue;
                }
            };
            let valid: BTreeSet<String> = values
                .into_iter()
                .filter(|v| {
                    let ok = attr.index_of(v).is_some();
                    if !ok {
                        log::warn!("parser returned `{v}` outside the domain of `{id}`; dropped");
                    }
                    ok
                })
                .collect();
            if !valid.is_empty() {
                evidence.constraints.insert(id, valid);
            }
        }
        if evidence.is_empty() {
            log::warn!("parser extracted no valid attribute values");
        }
        Ok(evidence)
    }

    /// Question proposal for prompt-only baselines.
    /// Returns `None` when the model says it is done.
    pub fn propose_question(
        &self,
        template: &str,
        history: &str,
        schema: &Schema,
    ) -> Result<Option<Question>> {
        let prompt = prompts::render(
            template,
            &[("attributes", &attribute_listing(schema)), ("history", history)],
        );
        let output = self.complete(&prompt)?;
        let object = extract_json_object(&output)
            .ok_or_else(|| Error::Gateway(format!("proposal is not a JSON object: {output:?}")))?;
        if object.get("done").and_then(Value::as_bool) == Some(true) {
            return Ok(None);
        }
        let text = object
            .get("question")
            .and_then(Value::as_str)
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| Error::Gateway("proposal has no question text".into()))?;
        let targets: Vec<String> = object
            .get("targets")
            .and_then(Value::as_array)
            .map(|a| {
                a.iter()
                    .filter_map(Value::as_str)
                    .filter(|id| schema.attribute(id).is_some())
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default();
        Ok(Some(Question {
            targets,
            text: text.to_string(),
            origin: QuestionOrigin::Llm,
        }))
    }
}

pub fn attribute_listing(schema: &Schema) -> String {
    schema
        .attributes
        .iter()
        .map(|a| format!("- {}: {}", a.id, a.domain.join(", ")))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn parser_prompt(question: &Question, answer_text: &str, schema: &Schema) -> String {
    prompts::render(
        prompts::PARSER_V1,
        &[
            ("attributes", &attribute_listing(schema)),
            ("question", &question.text),
            ("answer", answer_text),
        ],
    )
}

/// First balanced `{...}` in `text`, parsed as a JSON object.
fn extract_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str(&text[start..=end]) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    struct Flaky {
        failures: u32,
        calls: Arc<AtomicU32>,
    }

    impl Transport for Flaky {
        fn send(
            &self,
            _request: &ChatRequest,
            _api_key: Option<&str>,
        ) -> std::result::Result<String, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(TransportError::transient("connection reset"))
            } else {
                Ok("fine".into())
            }
        }

        fn touches_network(&self) -> bool {
            false
        }
    }

    fn layout_question() -> Question {
        Question {
            targets: vec!["layout".into()],
            text: "Which layout?".into(),
            origin: QuestionOrigin::Template,
        }
    }

    #[test]
    fn mock_returns_scripted_text() {
        let gw = Gateway::new(GatewayConfig::mock(BTreeMap::new()).script("hi", "hello"));
        assert!(!gw.touches_network());
        assert_eq!(gw.complete("hi").unwrap(), "hello");
        assert!(gw.complete("unscripted").is_err());

        let mut cfg = GatewayConfig::mock(BTreeMap::new());
        cfg.strict_mock = false;
        assert_eq!(Gateway::new(cfg).complete("anything").unwrap(), "");
    }

    #[test]
    fn missing_key_fails_before_any_request() {
        let cfg = GatewayConfig {
            api_key_env_var: "INQUIRY_TEST_KEY_THAT_IS_NEVER_SET".into(),
            endpoint_url: "http://127.0.0.1:9/unreachable".into(),
            ..GatewayConfig::default()
        };
        let gw = Gateway::new(cfg);
        assert!(matches!(gw.complete("x"), Err(Error::Config(_))));
        assert!(gw.log().is_empty());
    }

    #[test]
    fn retries_transient_failures() {
        let calls = Arc::new(AtomicU32::new(0));
        let cfg = GatewayConfig {
            max_retries: 3,
            backoff_ms: 0,
            ..GatewayConfig::default()
        };
        let gw = Gateway::with_transport(
            cfg.clone(),
            Box::new(Flaky { failures: 2, calls: calls.clone() }),
        );
        assert_eq!(gw.complete("p").unwrap(), "fine");
        let log = gw.log();
        assert_eq!(log.len(), 3);
        assert_eq!(log.iter().filter(|e| e.error.is_some()).count(), 2);
        assert_eq!(log[2].attempt, 3);

        let gw = Gateway::with_transport(
            GatewayConfig { max_retries: 1, ..cfg },
            Box::new(Flaky { failures: 5, calls: Arc::new(AtomicU32::new(0)) }),
        );
        assert!(matches!(gw.complete("p"), Err(Error::Gateway(_))));
        assert_eq!(gw.log().len(), 2);
    }

    #[test]
    fn freetext_parsing_validates_against_schema() {
        let schema = Schema::demo();
        let q = layout_question();
        let cases = [
            (r#"{"layout":"grid"}"#, vec![("layout", vec!["grid"])]),
            (r#"{"layout":"hexagonal"}"#, vec![]),
            (
                r#"Sure: {"layout":"grid","palette":"neon"}"#,
                vec![("layout", vec!["grid"])],
            ),
            (
                r#"{"palette":["pastel","vibrant"],"nonsense":"x"}"#,
                vec![("palette", vec!["pastel", "vibrant"])],
            ),
        ];
        for (i, (reply, expected)) in cases.into_iter().enumerate() {
            let answer = format!("answer {i}");
            let prompt = parser_prompt(&q, &answer, &schema);
            let gw = Gateway::new(GatewayConfig::mock(BTreeMap::new()).script(&prompt, reply));
            let ev = gw.parse_freetext_answer(&q, &answer, &schema).unwrap();
            let got: Vec<(String, Vec<String>)> = ev
                .constraints
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect();
            let want: Vec<(String, Vec<String>)> = expected
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.into_iter().map(String::from).collect()))
                .collect();
            assert_eq!(got, want, "reply {reply}");
        }
    }

    #[test]
    fn non_json_output_is_an_error() {
        let schema = Schema::demo();
        let q = layout_question();
        let prompt = parser_prompt(&q, "a grid", &schema);
        let gw = Gateway::new(GatewayConfig::mock(BTreeMap::new()).script(&prompt, "no idea"));
        assert!(gw.parse_freetext_answer(&q, "a grid", &schema).is_err());
    }

    #[test]
    fn proposals() {
        let schema = Schema::demo();
        let prompt = prompts::render(
            prompts::SOCRATIC_ZERO_SHOT_V1,
            &[("attributes", &attribute_listing(&schema)), ("history", "User: hi")],
        );
        let gw = Gateway::new(GatewayConfig::mock(BTreeMap::new()).script(
            &prompt,
            r#"{"question":"Which palette?","targets":["palette","bogus"]}"#,
        ));
        let q = gw
            .propose_question(prompts::SOCRATIC_ZERO_SHOT_V1, "User: hi", &schema)
            .unwrap()
            .unwrap();
        assert_eq!(q.targets, vec!["palette".to_string()]);
        assert_eq!(q.origin, QuestionOrigin::Llm);
    }
}
