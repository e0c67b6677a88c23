//! Generation backends and the parsers that turn model text into decisions.
//!
//! A [`Backend`] maps a [`GenerationRequest`] to raw text. Three variants are
//! provided: [`RemoteChat`] (chat-completion wire client, behind the `remote`
//! feature), [`Scripted`] (replays recorded responses keyed by stage tag and
//! prompt hash) and [`GoldOracle`] (answers from gold annotations). The
//! `parse_*` functions are pure and total.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("server returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("no scripted response for stage `{stage_tag}`")]
    ScriptMiss { stage_tag: String },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("empty prompt for stage `{0}`")]
    EmptyPrompt(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_output_chars: usize,
    pub temperature: f64,
    pub stage_tag: String,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, stage_tag: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_output_chars: 2048,
            temperature: 0.0,
            stage_tag: stage_tag.into(),
        }
    }
}

pub trait Backend: Send + Sync {
    /// Short description recorded alongside traces.
    fn identity(&self) -> String;

    /// Raw model text for the request, untrimmed.
    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError>;
}

/// Key used by script files: `"{stage_tag}:{sha256(prompt) as hex}"`.
pub fn script_key(stage_tag: &str, prompt: &str) -> String {
    format!(
        "{stage_tag}:{}",
        hex::encode(Sha256::digest(prompt.as_bytes()))
    )
}

/// Replays a recorded map from [`script_key`] to response text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scripted {
    entries: BTreeMap<String, String>,
}

impl Scripted {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, stage_tag: &str, prompt: &str, response: impl Into<String>) {
        self.entries
            .insert(script_key(stage_tag, prompt), response.into());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        serde_json::from_str(text).map_err(|e| BackendError::Config(format!("script file: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("script file {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("string map serializes")
    }
}

impl Backend for Scripted {
    fn identity(&self) -> String {
        format!("scripted({} entries)", self.entries.len())
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        self.entries
            .get(&script_key(&request.stage_tag, &request.prompt))
            .cloned()
            .ok_or_else(|| BackendError::ScriptMiss {
                stage_tag: request.stage_tag.clone(),
            })
    }
}

/// Returns the same text for every request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constant(pub String);

impl Backend for Constant {
    fn identity(&self) -> String {
        format!("constant({:?})", self.0)
    }

    fn complete(&self, _request: &GenerationRequest) -> Result<String, BackendError> {
        Ok(self.0.clone())
    }
}

/// Stage tag without chunk/merge suffixes: `relation-select@2/chunk1` -> `relation-select@2`.
pub fn base_stage_tag(tag: &str) -> &str {
    tag.split('/').next().unwrap_or(tag)
}

fn stage_and_hop(tag: &str) -> (&str, Option<u32>) {
    let base = base_stage_tag(tag);
    match base.split_once('@') {
        Some((stage, hop)) => (stage, hop.parse().ok()),
        None => (base, None),
    }
}

/// Emits the gold decision for each stage of one example.
///
/// Selection stages answer with the gold items for that stage, one per line;
/// stages without gold intermediates get an empty reply. Sufficiency stages
/// without an explicit entry answer "Yes" exactly when no relation selection
/// is annotated for the next hop. Generation stages fall back to the gold
/// answers, or to the gold SQL for `sql-generate`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldOracle {
    intermediates: BTreeMap<String, Vec<String>>,
    answers: Vec<String>,
    sql: Option<String>,
}

impl GoldOracle {
    pub fn new(
        intermediates: BTreeMap<String, Vec<String>>,
        answers: Vec<String>,
        sql: Option<String>,
    ) -> Self {
        Self {
            intermediates,
            answers,
            sql,
        }
    }
}

impl Backend for GoldOracle {
    fn identity(&self) -> String {
        "gold-oracle".to_string()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let base = base_stage_tag(&request.stage_tag);
        if let Some(items) = self.intermediates.get(base) {
            return Ok(items.join("\n"));
        }
        let (stage, hop) = stage_and_hop(&request.stage_tag);
        if let Some(items) = self.intermediates.get(stage) {
            return Ok(items.join("\n"));
        }
        let reply = match stage {
            "sufficiency" => {
                let next = hop.map(|h| format!("relation-select@{}", h + 1));
                match next {
                    Some(next) if self.intermediates.contains_key(&next) => "No".to_string(),
                    _ => "Yes".to_string(),
                }
            }
            "sql-generate" => self.sql.clone().unwrap_or_default(),
            "answer-generate" | "verify-generate" => self.answers.join("\n"),
            _ => String::new(),
        };
        Ok(reply)
    }
}

#[cfg(feature = "remote")]
pub use remote::{RemoteChat, RemoteConfig, API_KEY_ENV};

#[cfg(feature = "remote")]
mod remote {
    use std::sync::{Condvar, Mutex};
    use std::time::Duration;

    use serde::{Deserialize, Serialize};
    use serde_json::json;

    use super::{Backend, BackendError, GenerationRequest};

    pub const API_KEY_ENV: &str = "STRUCTREASON_API_KEY";

    fn default_timeout_ms() -> u64 {
        60_000
    }
    fn default_max_in_flight() -> usize {
        4
    }
    fn default_max_retries() -> u32 {
        3
    }
    fn default_base_delay_ms() -> u64 {
        500
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct RemoteConfig {
        pub endpoint: String,
        pub model: String,
        #[serde(default = "default_timeout_ms")]
        pub timeout_ms: u64,
        #[serde(default = "default_max_in_flight")]
        pub max_in_flight: usize,
        #[serde(default = "default_max_retries")]
        pub max_retries: u32,
        #[serde(default = "default_base_delay_ms")]
        pub base_delay_ms: u64,
    }

    impl RemoteConfig {
        pub fn from_json(text: &str) -> Result<Self, BackendError> {
            let cfg: Self = serde_json::from_str(text)
                .map_err(|e| BackendError::Config(format!("backend config: {e}")))?;
            if cfg.max_in_flight == 0 {
                return Err(BackendError::Config(
                    "max_in_flight must be at least 1".into(),
                ));
            }
            Ok(cfg)
        }

        pub fn from_file(path: &std::path::Path) -> Result<Self, BackendError> {
            let text = std::fs::read_to_string(path).map_err(|e| {
                BackendError::Config(format!("backend config {}: {e}", path.display()))
            })?;
            Self::from_json(&text)
        }
    }

    struct Limiter {
        free: Mutex<usize>,
        cond: Condvar,
    }

    struct Permit<'a>(&'a Limiter);

    impl Limiter {
        fn acquire(&self) -> Permit<'_> {
            let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
            while *free == 0 {
                free = self.cond.wait(free).unwrap_or_else(|p| p.into_inner());
            }
            *free -= 1;
            Permit(self)
        }
    }

    impl Drop for Permit<'_> {
        fn drop(&mut self) {
            let mut free = self.0.free.lock().unwrap_or_else(|p| p.into_inner());
            *free += 1;
            self.0.cond.notify_one();
        }
    }

    enum Attempt {
        Retry(String),
        Fatal(BackendError),
    }

    /// Chat-completion client with bounded retries and a max-in-flight limit.
    pub struct RemoteChat {
        config: RemoteConfig,
        api_key: String,
        agent: ureq::Agent,
        limiter: Limiter,
    }

    impl RemoteChat {
        /// Reads the API key from `STRUCTREASON_API_KEY`.
        pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
            let key = std::env::var(API_KEY_ENV).map_err(|_| {
                BackendError::Config(format!("environment variable {API_KEY_ENV} is not set"))
            })?;
            Ok(Self::with_api_key(config, key))
        }

        pub fn with_api_key(config: RemoteConfig, api_key: impl Into<String>) -> Self {
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
                .http_status_as_error(false)
                .build()
                .into();
            let limiter = Limiter {
                free: Mutex::new(config.max_in_flight.max(1)),
                cond: Condvar::new(),
            };
            Self {
                config,
                api_key: api_key.into(),
                agent,
                limiter,
            }
        }

        fn body(&self, request: &GenerationRequest) -> String {
            json!({
                "model": self.config.model,
                "messages": [{"role": "user", "content": request.prompt}],
                "temperature": request.temperature,
                "max_tokens": request.max_output_chars.div_ceil(4).max(1),
            })
            .to_string()
        }

        fn attempt(&self, body: &str) -> Result<String, Attempt> {
            let _permit = self.limiter.acquire();
            let mut response = self
                .agent
                .post(&self.config.endpoint)
                .header("Content-Type", "application/json")
                .header("Authorization", &format!("Bearer {}", self.api_key))
                .send(body)
                .map_err(|e| Attempt::Retry(e.to_string()))?;
            let status = response.status().as_u16();
            let text = response
                .body_mut()
                .read_to_string()
                .map_err(|e| Attempt::Retry(e.to_string()))?;
            if status == 429 || status >= 500 {
                return Err(Attempt::Retry(format!("status {status}")));
            }
            if !(200..300).contains(&status) {
                return Err(Attempt::Fatal(BackendError::Status { status, body: text }));
            }
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Attempt::Fatal(BackendError::BadResponse(e.to_string())))?;
            value["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| {
                    Attempt::Fatal(BackendError::BadResponse(
                        "missing choices[0].message.content".into(),
                    ))
                })
        }
    }

    impl Backend for RemoteChat {
        fn identity(&self) -> String {
            format!("remote({} @ {})", self.config.model, self.config.endpoint)
        }

        fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
            if request.prompt.is_empty() {
                return Err(BackendError::EmptyPrompt(request.stage_tag.clone()));
            }
            let body = self.body(request);
            let mut attempts = 0;
            loop {
                attempts += 1;
                match self.attempt(&body) {
                    Ok(text) => return Ok(text),
                    Err(Attempt::Fatal(e)) => return Err(e),
                    Err(Attempt::Retry(message)) => {
                        if attempts > self.config.max_retries {
                            return Err(BackendError::Transport { attempts, message });
                        }
                        let delay = self
                            .config
                            .base_delay_ms
                            .saturating_mul(1 << (attempts - 1).min(16));
                        log::warn!(
                            "stage {}: attempt {attempts} failed ({message}); retrying in {delay} ms",
                            request.stage_tag
                        );
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
            }
        }
    }
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn strip_decoration(token: &str) -> &str {
    let mut t = token.trim();
    t = enumeration_re().find(t).map_or(t, |m| &t[m.end()..]);
    t = t.trim_end_matches('.').trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('`', '`'), ('[', ']')] {
        if t.len() >= 2 && t.starts_with(open) && t.ends_with(close) {
            t = t[1..t.len() - 1].trim();
        }
    }
    t
}

fn enumeration_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+[.)]\s+|[-*\u{2022}]\s*)").unwrap())
}

/// Start offsets of `needle` in `hay` that sit on word boundaries.
fn boundary_matches(hay: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    if needle.is_empty() {
        return out;
    }
    let first_word = needle.chars().next().is_some_and(is_word_char);
    let last_word = needle.chars().next_back().is_some_and(is_word_char);
    for (start, _) in hay.match_indices(needle) {
        let end = start + needle.len();
        let before_ok = !first_word || !hay[..start].chars().next_back().is_some_and(is_word_char);
        let after_ok = !last_word || !hay[end..].chars().next().is_some_and(is_word_char);
        if before_ok && after_ok {
            out.push(start);
        }
    }
    out
}

fn index_label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^(?:item|row)\s+(\d+)$").unwrap())
}

fn index_mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(?:item|row)s?\s*#?\s*(\d+)((?:\s*(?:,|and|&)\s*#?\d+)*)").unwrap()
    })
}

fn digits_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").unwrap())
}

/// Selects candidates mentioned in `response`, in candidate order.
///
/// Tries, in order, stopping at the first step with a non-empty result:
/// exact match of whole lines or comma-separated tokens (case-folded);
/// word-boundary containment, where a candidate only counts if some match
/// is not inside a longer candidate's match; and, when every candidate is
/// labelled `item N`/`row N`, extraction of the mentioned numbers.
pub fn parse_selection<S: AsRef<str>>(response: &str, candidates: &[S]) -> Vec<String> {
    let folded: Vec<String> = candidates.iter().map(|c| fold(c.as_ref())).collect();
    let pick = |keep: &dyn Fn(usize) -> bool| -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        (0..candidates.len())
            .filter(|&i| keep(i) && seen.insert(folded[i].clone()))
            .map(|i| candidates[i].as_ref().to_string())
            .collect()
    };

    let mut tokens = std::collections::HashSet::new();
    for line in response.lines() {
        tokens.insert(fold(strip_decoration(line)));
        for piece in line.split(',') {
            tokens.insert(fold(strip_decoration(piece)));
        }
    }
    tokens.remove("");
    let exact = pick(&|i| tokens.contains(&folded[i]));
    if !exact.is_empty() {
        return exact;
    }

    let hay = response.to_lowercase();
    let spans: Vec<Vec<(usize, usize)>> = folded
        .iter()
        .map(|c| {
            boundary_matches(&hay, c)
                .into_iter()
                .map(|s| (s, s + c.len()))
                .collect()
        })
        .collect();
    let covered = |i: usize, (s, e): (usize, usize)| {
        spans.iter().enumerate().any(|(j, other)| {
            j != i
                && folded[j].len() > folded[i].len()
                && other.iter().any(|&(os, oe)| os <= s && e <= oe)
        })
    };
    let contained = pick(&|i| spans[i].iter().any(|&span| !covered(i, span)));
    if !contained.is_empty() {
        return contained;
    }

    let labels: Option<Vec<u64>> = candidates
        .iter()
        .map(|c| {
            index_label_re()
                .captures(c.as_ref().trim())
                .and_then(|m| m[1].parse().ok())
        })
        .collect();
    let Some(labels) = labels else {
        return Vec::new();
    };
    let mut mentioned = std::collections::HashSet::new();
    for m in index_mention_re().captures_iter(response) {
        mentioned.extend(m[1].parse::<u64>().ok());
        for extra in digits_re().find_iter(&m[2]) {
            mentioned.extend(extra.as_str().parse::<u64>().ok());
        }
    }
    pick(&|i| mentioned.contains(&labels[i]))
}

/// Splits a free-text answer into answer strings.
///
/// Separators are newlines, semicolons and commas, except a comma between
/// two digits (`1,000`). Enumeration prefixes, surrounding quotes and
/// trailing periods are removed; empty pieces are dropped.
pub fn parse_answer(response: &str) -> Vec<String> {
    let chars: Vec<char> = response.chars().collect();
    let mut pieces = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let digit_comma = c == ','
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        if matches!(c, '\n' | ';') || (c == ',' && !digit_comma) {
            pieces.push(std::mem::take(&mut current));
        } else {
            current.push(c);
        }
    }
    pieces.push(current);
    pieces
        .iter()
        .map(|p| {
            let mut t = strip_decoration(p);
            t = t.trim_matches(|c| c == '"' || c == '\'').trim();
            t.trim_end_matches('.').trim().to_string()
        })
        .filter(|p| !p.is_empty())
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no SELECT statement found in response")]
pub struct SqlExtractionError;

/// Extracts SQL from a model response: the first fenced block if there is
/// one, otherwise everything from the first `SELECT` to the end (or to a
/// closing fence).
pub fn parse_sql(response: &str) -> Result<String, SqlExtractionError> {
    static FENCE: OnceLock<Regex> = OnceLock::new();
    let fence = FENCE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z]*[ \t]*\n?(.*?)```").unwrap());
    if let Some(m) = fence.captures(response) {
        let body = m[1].trim();
        if !body.is_empty() {
            return Ok(body.to_string());
        }
    }
    static SELECT: OnceLock<Regex> = OnceLock::new();
    let select = SELECT.get_or_init(|| Regex::new(r"(?i)\bselect\b").unwrap());
    let start = select.find(response).ok_or(SqlExtractionError)?.start();
    let rest = &response[start..];
    let end = rest.find("```").unwrap_or(rest.len());
    Ok(rest[..end].trim().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sufficiency {
    Sufficient,
    Insufficient,
}

/// Affirmative markers only means sufficient; anything else is insufficient.
pub fn parse_sufficiency(response: &str) -> Sufficiency {
    let hay = response.to_lowercase();
    let has = |m: &str| !boundary_matches(&hay, m).is_empty();
    let positive = has("yes") || has("sufficient");
    let negative = has("no") || has("not sufficient") || has("need more") || has("insufficient");
    if positive && !negative {
        Sufficiency::Sufficient
    } else {
        Sufficiency::Insufficient
    }
}
