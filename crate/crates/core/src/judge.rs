//! LLM-as-a-judge answer reward.
//!
//! A [`JudgeClient`] renders the fixed consistency prompt, sends it to a
//! chat-completion endpoint through a [`ChatTransport`], and reads a Yes/No
//! verdict. Candidates equal to the gold answer after normalization are
//! accepted locally without a request. Concurrency is capped by
//! `max_in_flight`; transport failures are retried with exponential backoff.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::metrics::{normalize_answer, NormalizationPolicy};
use crate::response::ParsedResponse;
use crate::rewards::AnswerJudge;
use crate::sample::Sample;

pub const ENV_URL: &str = "TABREWARD_JUDGE_URL";
pub const ENV_KEY: &str = "TABREWARD_JUDGE_KEY";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum JudgeError {
    #[error("unparseable verdict: {0:?}")]
    UnparseableVerdict(String),
    #[error("judge endpoint unavailable after {attempts} attempts: {last}")]
    EndpointUnavailable { attempts: u32, last: String },
    #[error("invalid judge request: {0}")]
    InvalidRequest(String),
    #[error("invalid judge config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgeRequest {
    pub question: String,
    pub candidate: String,
    pub gold: String,
}

impl JudgeRequest {
    pub fn new(question: &str, candidate: &str, gold: &str) -> Result<Self, JudgeError> {
        for (name, v) in [("question", question), ("candidate", candidate), ("gold", gold)] {
            if v.trim().is_empty() {
                return Err(JudgeError::InvalidRequest(format!("{name} is empty")));
            }
        }
        Ok(Self {
            question: question.to_string(),
            candidate: candidate.to_string(),
            gold: gold.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub max_in_flight: usize,
    pub timeout_s: f64,
    pub retries: u32,
    pub temperature: f64,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
    /// Bearer credential. Never written to config files.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_name: "Qwen2.5-32B-Instruct".into(),
            max_in_flight: 8,
            timeout_s: 60.0,
            retries: 3,
            temperature: 0.0,
            backoff_ms: 500,
            api_key: None,
        }
    }
}

impl JudgeConfig {
    /// Applies `TABREWARD_JUDGE_URL` / `TABREWARD_JUDGE_KEY` when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_URL) {
            if !url.trim().is_empty() {
                self.endpoint_url = url;
            }
        }
        if let Ok(key) = std::env::var(ENV_KEY) {
            if !key.trim().is_empty() {
                self.api_key = Some(key);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), JudgeError> {
        if self.max_in_flight == 0 {
            return Err(JudgeError::Config("max_in_flight must be >= 1".into()));
        }
        if !(self.timeout_s > 0.0) {
            return Err(JudgeError::Config("timeout_s must be positive".into()));
        }
        Ok(())
    }
}

const PROMPT_HEAD: &str = "Here is the original question, the correct answer, and the candidate answer. Please evaluate whether the correct answer and the candidate answer are consistent.

# Examples:
-
Question: What is the distance from Paris to London?
Candidate Answer: 5 km
Correct Answer: 5000 m
Consistent: Yes
-
Question: How many people live in the city?
Candidate Answer: 1 million
Correct Answer: 1000000
Consistent: Yes
-
Question: What is the date today?
Candidate Answer: 2023-10-01
Correct Answer: October 1, 2023
Consistent: Yes
-
Question: What is the temperature in Paris?
Candidate Answer: 25°C
Correct Answer: 77°F
Consistent: No
-
Question: What is the distance from Paris to London?
Candidate Answer: 5 km
Correct Answer: 10 km
Consistent: No
-
# YOUR TASK
Respond with only Yes or No. Do not include a rationale.
";

/// The five in-context examples as `(question, candidate, gold, verdict)`.
pub const PROMPT_EXAMPLES: [(&str, &str, &str, u8); 5] = [
    ("What is the distance from Paris to London?", "5 km", "5000 m", 1),
    ("How many people live in the city?", "1 million", "1000000", 1),
    ("What is the date today?", "2023-10-01", "October 1, 2023", 1),
    ("What is the temperature in Paris?", "25°C", "77°F", 0),
    ("What is the distance from Paris to London?", "5 km", "10 km", 0),
];

pub fn render_judge_prompt(req: &JudgeRequest) -> String {
    format!(
        "{PROMPT_HEAD}Question: {}\nCandidate Answer: {}\nCorrect Answer: {}\nConsistent:",
        req.question, req.candidate, req.gold
    )
}

/// Reads the first whitespace-delimited token of a reply, ignoring case
/// and surrounding punctuation.
pub fn parse_judge_reply(reply: &str) -> Result<u8, JudgeError> {
    let first = reply
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    match first.as_str() {
        "yes" => Ok(1),
        "no" => Ok(0),
        _ => Err(JudgeError::UnparseableVerdict(reply.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    /// Correlation id; sent as `X-Request-Id` and in the `user` field.
    #[serde(rename = "user", serialize_with = "id_as_string")]
    pub correlation_id: u64,
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

fn id_as_string<S: serde::Serializer>(id: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("tabreward-{id}"))
}

/// Sends one chat request and returns the assistant text.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, String>;
}

/// JSON chat-completion over HTTP(S).
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(cfg: &JudgeConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .build();
        Self {
            agent,
            url: cfg.endpoint_url.clone(),
            api_key: cfg.api_key.clone(),
        }
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, req: &ChatRequest) -> Result<String, String> {
        let mut call = self
            .agent
            .post(&self.url)
            .set("X-Request-Id", &format!("tabreward-{}", req.correlation_id));
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_value(req).map_err(|e| e.to_string())?;
        let resp: serde_json::Value = call
            .send_json(body)
            .map_err(|e| e.to_string())?
            .into_json()
            .map_err(|e| e.to_string())?;
        resp.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| format!("malformed completion: {resp}"))
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub value: u8,
    pub diagnostics: Vec<String>,
    pub requests: u32,
}

pub struct JudgeClient {
    cfg: JudgeConfig,
    policy: NormalizationPolicy,
    transport: Box<dyn ChatTransport>,
    gate: Gate,
    next_id: AtomicU64,
}

impl JudgeClient {
    pub fn new(cfg: JudgeConfig, transport: Box<dyn ChatTransport>) -> Result<Self, JudgeError> {
        cfg.validate()?;
        Ok(Self {
            gate: Gate::new(cfg.max_in_flight),
            cfg,
            policy: NormalizationPolicy::default(),
            transport,
            next_id: AtomicU64::new(0),
        })
    }

    pub fn http(cfg: JudgeConfig) -> Result<Self, JudgeError> {
        let transport = Box::new(HttpTransport::new(&cfg));
        Self::new(cfg, transport)
    }

    pub fn with_policy(mut self, policy: NormalizationPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn config(&self) -> &JudgeConfig {
        &self.cfg
    }

    fn send(&self, prompt: &str) -> Result<(String, u32), JudgeError> {
        let mut last = String::new();
        let attempts = self.cfg.retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            let req = ChatRequest {
                correlation_id: self.next_id.fetch_add(1, Ordering::Relaxed),
                model: self.cfg.model_name.clone(),
                messages: vec![ChatMessage {
                    role: "user".into(),
                    content: prompt.to_string(),
                }],
                temperature: self.cfg.temperature,
                max_tokens: 4,
            };
            let result = {
                let _permit = self.gate.acquire();
                self.transport.complete(&req)
            };
            match result {
                Ok(text) => return Ok((text, attempt + 1)),
                Err(e) => last = e,
            }
        }
        Err(JudgeError::EndpointUnavailable { attempts, last })
    }

    /// Verdict for one request. An unparseable reply is retried once, then
    /// scored 0 with a diagnostic.
    pub fn judge_request(&self, req: &JudgeRequest) -> Result<Verdict, JudgeError> {
        if normalize_answer(&req.candidate, &self.policy) == normalize_answer(&req.gold, &self.policy) {
            return Ok(Verdict {
                value: 1,
                diagnostics: vec!["judge_short_circuit".into()],
                requests: 0,
            });
        }
        let prompt = render_judge_prompt(req);
        let mut requests = 0;
        let mut diagnostics = Vec::new();
        for _ in 0..2 {
            let (reply, used) = self.send(&prompt)?;
            requests += used;
            match parse_judge_reply(&reply) {
                Ok(v) => {
                    return Ok(Verdict {
                        value: v,
                        diagnostics,
                        requests,
                    })
                }
                Err(_) => diagnostics.push(format!("judge_unparseable: {}", reply.trim())),
            }
        }
        Ok(Verdict {
            value: 0,
            diagnostics,
            requests,
        })
    }

    /// Judge-backed answer reward. No answer scores 0 without a request;
    /// several gold variants pass if any is judged consistent.
    pub fn judge_reward(&self, sample: &Sample, resp: &ParsedResponse) -> Result<Verdict, JudgeError> {
        let Some(answer) = resp.answer.as_deref().filter(|a| !a.trim().is_empty()) else {
            return Ok(Verdict {
                value: 0,
                diagnostics: vec!["no_answer".into()],
                requests: 0,
            });
        };
        self.judge_any(&sample.question, answer, sample.gold_answer.variants())
    }

    fn judge_any(&self, question: &str, answer: &str, golds: &[String]) -> Result<Verdict, JudgeError> {
        let question = if question.trim().is_empty() { "(none)" } else { question };
        let golds: Vec<&String> = golds.iter().filter(|g| !g.trim().is_empty()).collect();
        // local equality first across all variants
        for g in &golds {
            if normalize_answer(answer, &self.policy) == normalize_answer(g, &self.policy) {
                return self.judge_request(&JudgeRequest::new(question, answer, g)?);
            }
        }
        let mut total = Verdict {
            value: 0,
            diagnostics: Vec::new(),
            requests: 0,
        };
        for g in golds {
            let v = self.judge_request(&JudgeRequest::new(question, answer, g)?)?;
            total.requests += v.requests;
            total.diagnostics.extend(v.diagnostics);
            if v.value == 1 {
                total.value = 1;
                break;
            }
        }
        Ok(total)
    }
}

impl AnswerJudge for JudgeClient {
    fn judge(&self, question: &str, candidate: &str, gold: &[String]) -> Result<(u8, Vec<String>), String> {
        self.judge_any(question, candidate, gold)
            .map(|v| (v.value, v.diagnostics))
            .map_err(|e| e.to_string())
    }
}
