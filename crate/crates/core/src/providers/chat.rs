//! Model-client boundary: the chat contract, bounded retries with
//! exponential backoff, and a scripted client for tests.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

/// A frame on the sampled grid of a video.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameRef {
    pub video: String,
    pub index: usize,
}

/// Opaque image handle passed to the analyzer. Live clients need `path`;
/// synthetic clients only look at `frame`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRef {
    pub frame: FrameRef,
    pub path: Option<PathBuf>,
}

impl ImageRef {
    pub fn frame(video: impl Into<String>, index: usize) -> Self {
        Self {
            frame: FrameRef {
                video: video.into(),
                index,
            },
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChatError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    InvalidResponse(String),
    #[error("image unavailable: {0}")]
    Image(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<ChatError> },
    #[error("scripted client ran out of responses")]
    ScriptExhausted,
}

impl ChatError {
    /// Timeouts, transport failures, 408, 429 and 5xx are worth another try.
    pub fn is_retryable(&self) -> bool {
        match self {
            ChatError::Timeout(_) | ChatError::Transport(_) => true,
            ChatError::Status { status, .. } => matches!(status, 408 | 429 | 500..=599),
            _ => false,
        }
    }
}

/// A text-in, text-out model endpoint, optionally with one image.
pub trait ChatClient: Send + Sync {
    fn chat(&self, instruction: &str, image: Option<&ImageRef>) -> Result<String, ChatError>;
}

impl<T: ChatClient + ?Sized> ChatClient for &T {
    fn chat(&self, instruction: &str, image: Option<&ImageRef>) -> Result<String, ChatError> {
        (**self).chat(instruction, image)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff_ms: 500,
            max_backoff_ms: 10_000,
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts; for tests and synthetic runs.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_backoff_ms: 0,
            max_backoff_ms: 0,
        }
    }

    /// `min(base * 2^(attempt-1), max)` for the 1-based attempt that failed.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let shift = attempt.saturating_sub(1).min(20);
        let ms = self.base_backoff_ms.saturating_mul(1u64 << shift);
        Duration::from_millis(ms.min(self.max_backoff_ms))
    }
}

/// Calls `client` until it answers, a non-retryable error occurs, or the
/// attempt budget is spent.
pub fn chat_with_retry(
    client: &dyn ChatClient,
    policy: &RetryPolicy,
    instruction: &str,
    image: Option<&ImageRef>,
) -> Result<String, ChatError> {
    let budget = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match client.chat(instruction, image) {
            Ok(text) => return Ok(text),
            Err(err) if !err.is_retryable() => return Err(err),
            Err(err) if attempt >= budget => {
                warn!(attempt, error = %err, "model call failed, retry budget spent");
                return Err(ChatError::Exhausted {
                    attempts: attempt,
                    last: Box::new(err),
                });
            }
            Err(err) => {
                let delay = policy.backoff(attempt);
                debug!(attempt, delay_ms = delay.as_millis() as u64, error = %err, "retrying model call");
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

/// Replays a fixed queue of responses and records every instruction it saw.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    responses: Mutex<VecDeque<Result<String, ChatError>>>,
    calls: Mutex<Vec<(String, Option<FrameRef>)>>,
}

impl ScriptedClient {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_results(responses.into_iter().map(|s| Ok(s.into())))
    }

    pub fn with_results(responses: impl IntoIterator<Item = Result<String, ChatError>>) -> Self {
        Self {
            responses: Mutex::new(responses.into_iter().collect()),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn push(&self, response: Result<String, ChatError>) {
        self.responses.lock().unwrap().push_back(response);
    }

    pub fn calls(&self) -> Vec<(String, Option<FrameRef>)> {
        self.calls.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().unwrap().len()
    }
}

impl ChatClient for ScriptedClient {
    fn chat(&self, instruction: &str, image: Option<&ImageRef>) -> Result<String, ChatError> {
        self.calls
            .lock()
            .unwrap()
            .push((instruction.to_string(), image.map(|i| i.frame.clone())));
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or(Err(ChatError::ScriptExhausted))
    }
}

/// Adapts a closure into a client.
pub struct FnClient<F>(pub F);

impl<F> ChatClient for FnClient<F>
where
    F: Fn(&str, Option<&ImageRef>) -> Result<String, ChatError> + Send + Sync,
{
    fn chat(&self, instruction: &str, image: Option<&ImageRef>) -> Result<String, ChatError> {
        (self.0)(instruction, image)
    }
}
