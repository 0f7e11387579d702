//! Scripted backend for fixtures and offline runs.
//!
//! A script is a JSON object:
//!
//! ```json
//! {
//!   "backend_id": "mock",
//!   "delay_ms": 0,
//!   "rules": [
//!     {"role": "NarrativeGen", "replies": [{"text": "..."}]},
//!     {"role": "Solver", "seq": 3, "replies": [{"error": {"status": 500, "body": "boom"}}]},
//!     {"prompt_contains": "two_sum", "replies": [{"text": "A"}, {"text": "B"}]}
//!   ],
//!   "default": {"text": "fallback"}
//! }
//! ```
//!
//! The first rule whose conditions all hold answers the call. `seq` is the
//! 0-based count of earlier calls with the same role. A rule hands out its
//! replies in order and keeps repeating the last one once exhausted.
//! Sequence numbers follow arrival order, so scripts that key on `seq` are
//! only reproducible with one request in flight; content conditions are
//! reproducible at any concurrency.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{whitespace_tokens, Backend, BackendError, GenerationRequest, GenerationResponse, RoleTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockReply {
    Text(String),
    Error { status: u16, body: String },
    Transport(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<RoleTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<usize>,
    /// Hex SHA-256 of the full prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    pub replies: Vec<MockReply>,
}

impl MockRule {
    pub fn reply(replies: Vec<MockReply>) -> Self {
        Self {
            replies,
            ..Self::default()
        }
    }

    pub fn for_role(mut self, role: RoleTag) -> Self {
        self.role = Some(role);
        self
    }

    pub fn at_seq(mut self, seq: usize) -> Self {
        self.seq = Some(seq);
        self
    }

    pub fn for_prompt(mut self, prompt: &str) -> Self {
        self.prompt_sha256 = Some(prompt_sha256(prompt));
        self
    }

    pub fn containing(mut self, needle: impl Into<String>) -> Self {
        self.prompt_contains = Some(needle.into());
        self
    }

    fn matches(&self, role: RoleTag, seq: usize, prompt: &str, digest: &str) -> bool {
        self.role.is_none_or(|r| r == role)
            && self.seq.is_none_or(|s| s == seq)
            && self.prompt_sha256.as_deref().is_none_or(|h| h.eq_ignore_ascii_case(digest))
            && self.prompt_contains.as_deref().is_none_or(|n| prompt.contains(n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default = "default_id")]
    pub backend_id: String,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default: Option<MockReply>,
}

fn default_id() -> String {
    "mock".to_string()
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            backend_id: default_id(),
            delay_ms: 0,
            rules: Vec::new(),
            default: None,
        }
    }
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        serde_json::from_str(text).map_err(|e| BackendError::Script(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_default(mut self, reply: MockReply) -> Self {
        self.default = Some(reply);
        self
    }
}

/// One served call, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub role: RoleTag,
    pub seq: usize,
    pub prompt: String,
    /// Index of the rule that answered, `None` for the default reply.
    pub rule: Option<usize>,
    pub started: Instant,
    pub finished: Instant,
}

#[derive(Debug, Default)]
struct MockState {
    role_seq: HashMap<RoleTag, usize>,
    rule_cursor: Vec<usize>,
    log: Vec<MockCall>,
}

#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    state: Mutex<MockState>,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        let rules = script.rules.len();
        Self {
            script,
            state: Mutex::new(MockState {
                rule_cursor: vec![0; rules],
                ..MockState::default()
            }),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.state.lock().unwrap().log.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().unwrap().log.len()
    }

    /// Largest number of calls observed in progress at the same time.
    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    fn pick(&self, request: &GenerationRequest) -> Result<(usize, Option<usize>, MockReply), BackendError> {
        let digest = prompt_sha256(&request.prompt);
        let mut state = self.state.lock().unwrap();
        let seq_slot = state.role_seq.entry(request.role_tag).or_insert(0);
        let seq = *seq_slot;
        *seq_slot += 1;
        for (i, rule) in self.script.rules.iter().enumerate() {
            if !rule.matches(request.role_tag, seq, &request.prompt, &digest) {
                continue;
            }
            let Some(last) = rule.replies.len().checked_sub(1) else {
                return Err(BackendError::Script(format!("rule {i} has no replies")));
            };
            let cursor = state.rule_cursor[i];
            state.rule_cursor[i] += 1;
            return Ok((seq, Some(i), rule.replies[cursor.min(last)].clone()));
        }
        match &self.script.default {
            Some(reply) => Ok((seq, None, reply.clone())),
            None => Err(BackendError::Script(format!(
                "no rule for {:?} call #{seq} (prompt sha256 {digest})",
                request.role_tag
            ))),
        }
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.script.backend_id
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let started = Instant::now();
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        let picked = self.pick(request);
        if self.script.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.script.delay_ms));
        }
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        let (seq, rule, reply) = picked?;
        let finished = Instant::now();
        self.state.lock().unwrap().log.push(MockCall {
            role: request.role_tag,
            seq,
            prompt: request.prompt.clone(),
            rule,
            started,
            finished,
        });
        match reply {
            MockReply::Text(text) => {
                let token_count = whitespace_tokens(&text);
                Ok(GenerationResponse {
                    token_count,
                    truncated: token_count >= request.max_tokens,
                    backend_id: self.script.backend_id.clone(),
                    latency_ms: u64::try_from(finished.duration_since(started).as_millis()).unwrap_or(u64::MAX),
                    text,
                    wire_request: None,
                    wire_response: None,
                })
            }
            MockReply::Error { status, body } => Err(BackendError::ProviderError { status, body }),
            MockReply::Transport(msg) => Err(BackendError::Transport(msg)),
        }
    }
}

pub fn prompt_sha256(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Client, RetryPolicy};
    use std::sync::Arc;

    fn text(s: &str) -> MockReply {
        MockReply::Text(s.to_string())
    }

    fn req(role: RoleTag, prompt: &str) -> GenerationRequest {
        GenerationRequest::new(role, prompt)
    }

    #[test]
    fn answers_by_prompt_hash() {
        let mock = MockBackend::new(MockScript::default().rule(MockRule::reply(vec![text("X")]).for_prompt("hello")));
        let r = mock.complete(&req(RoleTag::Solver, "hello")).unwrap();
        assert_eq!(r.text, "X");
        assert_eq!(r.backend_id, "mock");
        assert!(matches!(mock.complete(&req(RoleTag::Solver, "other")), Err(BackendError::Script(_))));
    }

    #[test]
    fn replies_in_sequence() {
        let mock = MockBackend::new(MockScript::default().rule(MockRule::reply(vec![text("A"), text("B"), text("A")])));
        let got: Vec<_> = (0..3)
            .map(|_| mock.complete(&req(RoleTag::Solver, "p")).unwrap().text)
            .collect();
        assert_eq!(got, ["A", "B", "A"]);
        // exhausted: last reply repeats
        assert_eq!(mock.complete(&req(RoleTag::Solver, "p")).unwrap().text, "A");
    }

    #[test]
    fn role_sequence_numbers_are_independent() {
        let script = MockScript::default()
            .rule(MockRule::reply(vec![text("second solve")]).for_role(RoleTag::Solver).at_seq(1))
            .rule(MockRule::reply(vec![text("narr")]).for_role(RoleTag::NarrativeGen))
            .with_default(text("solve"));
        let mock = MockBackend::new(script);
        assert_eq!(mock.complete(&req(RoleTag::NarrativeGen, "n")).unwrap().text, "narr");
        assert_eq!(mock.complete(&req(RoleTag::Solver, "s")).unwrap().text, "solve");
        assert_eq!(mock.complete(&req(RoleTag::NarrativeGen, "n")).unwrap().text, "narr");
        assert_eq!(mock.complete(&req(RoleTag::Solver, "s")).unwrap().text, "second solve");
        let seqs: Vec<_> = mock.calls().iter().map(|c| (c.role, c.seq)).collect();
        assert_eq!(
            seqs,
            [
                (RoleTag::NarrativeGen, 0),
                (RoleTag::Solver, 0),
                (RoleTag::NarrativeGen, 1),
                (RoleTag::Solver, 1)
            ]
        );
    }

    #[test]
    fn script_parses_from_json() {
        let script = MockScript::from_json(
            r#"{"rules":[{"role":"Solver","seq":0,"replies":[{"error":{"status":429,"body":"slow"}},{"text":"ok"}]}],
                "default":{"transport":"down"}}"#,
        )
        .unwrap();
        assert_eq!(script.backend_id, "mock");
        assert_eq!(script.rules[0].replies[1], text("ok"));
        assert!(MockScript::from_json(r#"{"rules":[{"bogus":1,"replies":[]}]}"#).is_err());
    }

    #[test]
    fn token_count_and_truncation() {
        let mock = MockBackend::new(MockScript::default().with_default(text("a b c d")));
        let r = mock.complete(&req(RoleTag::Solver, "p").with_max_tokens(4)).unwrap();
        assert_eq!(r.token_count, 4);
        assert!(r.truncated);
        let r = mock.complete(&req(RoleTag::Solver, "p")).unwrap();
        assert!(!r.truncated);
    }

    #[test]
    fn batch_empty() {
        let client = Client::new(Arc::new(MockBackend::new(MockScript::default())));
        assert!(client.generate_batch(&[], 4).is_empty());
    }

    #[test]
    fn batch_single_in_flight_is_sequential() {
        let mock = Arc::new(MockBackend::new(
            MockScript {
                delay_ms: 5,
                ..MockScript::default()
            }
            .with_default(text("ok")),
        ));
        let client = Client::new(mock.clone());
        let reqs: Vec<_> = (0..10).map(|i| req(RoleTag::Solver, &format!("p{i}"))).collect();
        let out = client.generate_batch(&reqs, 1);
        assert_eq!(out.len(), 10);
        assert_eq!(mock.peak_in_flight(), 1);
        let calls = mock.calls();
        for pair in calls.windows(2) {
            assert!(pair[0].finished <= pair[1].started);
        }
        let prompts: Vec<_> = calls.iter().map(|c| c.prompt.clone()).collect();
        assert_eq!(prompts, reqs.iter().map(|r| r.prompt.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn batch_respects_bound_and_alignment() {
        let mock = Arc::new(MockBackend::new(MockScript {
            delay_ms: 10,
            rules: (0..12)
                .map(|i| MockRule::reply(vec![text(&format!("r{i}"))]).containing(format!("<{i}>")))
                .collect(),
            ..MockScript::default()
        }));
        let client = Client::new(mock.clone());
        let reqs: Vec<_> = (0..12).map(|i| req(RoleTag::Solver, &format!("<{i}>"))).collect();
        let out = client.generate_batch(&reqs, 3);
        assert!(mock.peak_in_flight() <= 3);
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.as_ref().unwrap().text, format!("r{i}"));
        }
    }

    #[test]
    fn batch_isolates_failures() {
        let mock = Arc::new(MockBackend::new(
            MockScript::default()
                .rule(MockRule::reply(vec![MockReply::Error {
                    status: 400,
                    body: "bad".into(),
                }])
                .containing("#7"))
                .with_default(text("ok")),
        ));
        let client = Client::new(mock).with_retry(RetryPolicy {
            max_retries: 0,
            base_delay_ms: 1,
            max_delay_ms: 1,
        });
        let reqs: Vec<_> = (0..10).map(|i| req(RoleTag::Solver, &format!("#{i}"))).collect();
        let out = client.generate_batch(&reqs, 4);
        assert_eq!(out.iter().filter(|r| r.is_ok()).count(), 9);
        assert!(out[7].is_err());
    }
}
