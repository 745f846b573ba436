//! Chat-completion HTTP client.
//!
//! Request body: `{"model", "messages": [{"role", "content"}], "temperature"}`.
//! The completion is read from `choices[0].message.content`.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompts::fill;
use super::{Backend, BackendKind, PromptSet};
use crate::domain::{PolicyText, Scene, UserProfile};
use crate::error::{Error, Result};

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: String,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Debug, Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

/// Counting semaphore bounding in-flight requests.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            free: Mutex::new(n.max(1)),
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

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteBackend {
    endpoint: String,
    model: String,
    temperature: f64,
    token: Option<String>,
    retries: u32,
    backoff: Duration,
    prompts: PromptSet,
    limiter: Limiter,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, temperature: f64, token: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .unwrap_or_else(|_| reqwest::blocking::Client::new());
        RemoteBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature,
            token,
            retries: 2,
            backoff: Duration::from_millis(200),
            prompts: PromptSet::default(),
            limiter: Limiter::new(4),
            client,
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_max_concurrency(mut self, n: usize) -> Self {
        self.limiter = Limiter::new(n);
        self
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    fn complete(&self, system: String, user: String) -> Result<String> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: system,
                },
                ChatMessage {
                    role: "user",
                    content: user,
                },
            ],
            temperature: self.temperature,
        };
        let _permit = self.limiter.acquire();
        let attempts = self.retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            let mut req = self.client.post(&self.endpoint).json(&body);
            if let Some(token) = &self.token {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    let parsed: ChatResponse = resp
                        .json()
                        .map_err(|e| Error::ParseFailure(format!("malformed completion response: {e}")))?;
                    let content = parsed
                        .choices
                        .into_iter()
                        .next()
                        .and_then(|c| c.message.content)
                        .unwrap_or_default();
                    if content.trim().is_empty() {
                        return Err(Error::EmptyCompletion);
                    }
                    return Ok(content);
                }
                Ok(resp) => last_error = format!("HTTP {}", resp.status()),
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(Error::RemoteUnreachable {
            attempts,
            message: last_error,
        })
    }
}

fn field_after<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    text.lines().find_map(|line| {
        let line = line.trim().trim_start_matches(['-', '*', ' ']);
        let (head, rest) = line.split_once(':')?;
        head.trim().eq_ignore_ascii_case(label).then(|| rest.trim())
    })
}

pub(crate) fn parse_policy_text(text: &str) -> Result<PolicyText> {
    let missing = |name: &str| Error::ParseFailure(format!("summary lacks `{name}`"));
    let characteristics = field_after(text, "user characteristics").ok_or_else(|| missing("user characteristics"))?;
    let factors = field_after(text, "key decision factors").ok_or_else(|| missing("key decision factors"))?;
    let guide = field_after(text, "decision guide").ok_or_else(|| missing("decision guide"))?;
    let policy = PolicyText {
        user_characteristics: characteristics.to_owned(),
        key_decision_factors: factors
            .split([';', ','])
            .map(str::trim)
            .filter(|f| !f.is_empty())
            .map(str::to_owned)
            .collect(),
        decision_guide: guide.to_owned(),
    };
    policy
        .validate()
        .map_err(|_| Error::ParseFailure("summary has an empty field".into()))?;
    Ok(policy)
}

pub(crate) fn parse_decision(text: &str) -> Result<u8> {
    let word: String = text
        .trim()
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" | "1" | "purchase" | "buy" => Ok(1),
        "no" | "0" | "decline" | "skip" => Ok(0),
        _ => Err(Error::UnparseableDecision(text.to_owned())),
    }
}

impl Backend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn explain_text(&self, user: &UserProfile, scene: &Scene, outcome: u8) -> Result<String> {
        let outcome = if outcome == 1 { "purchased" } else { "declined" };
        let scene_text = scene.serialized_text();
        let vars = [
            ("profile", user.serialized_text()),
            ("scene", scene_text.as_str()),
            ("outcome", outcome),
        ];
        self.complete(
            fill(&self.prompts.explain.system, &vars),
            fill(&self.prompts.explain.user, &vars),
        )
        .map(|s| s.trim().to_owned())
    }

    fn summarize_texts(&self, rationales: &[&str]) -> Result<PolicyText> {
        let joined = rationales
            .iter()
            .map(|r| format!("- {r}"))
            .collect::<Vec<_>>()
            .join("\n");
        let vars = [("rationales", joined.as_str())];
        let reply = self.complete(
            fill(&self.prompts.summarize.system, &vars),
            fill(&self.prompts.summarize.user, &vars),
        )?;
        parse_policy_text(&reply)
    }

    fn decide(&self, scene: &Scene, instruction: &PolicyText, _seed: u64) -> Result<u8> {
        let rendered = instruction.render();
        let scene_text = scene.serialized_text();
        let vars = [("instruction", rendered.as_str()), ("scene", scene_text.as_str())];
        let reply = self.complete(
            fill(&self.prompts.decide.system, &vars),
            fill(&self.prompts.decide.user, &vars),
        )?;
        parse_decision(&reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_structured_summary() {
        let reply = "User characteristics: students on a budget\nKey decision factors: price; promotion\nDecision guide: purchase only if price_tier <= 22";
        let p = parse_policy_text(reply).unwrap();
        assert_eq!(p.key_decision_factors, vec!["price", "promotion"]);
        assert!(matches!(
            parse_policy_text("User characteristics: x\nDecision guide: y"),
            Err(Error::ParseFailure(_))
        ));
    }

    #[test]
    fn parses_decisions() {
        assert_eq!(parse_decision("Yes.").unwrap(), 1);
        assert_eq!(parse_decision(" no, too expensive").unwrap(), 0);
        assert!(parse_decision("maybe").is_err());
    }
}
