//! HTTP plumbing shared by the live provider clients: a blocking client with
//! a minimum request interval and bounded exponential-backoff retries.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn no_wait(max_attempts: u32) -> Self {
        RetryPolicy { max_attempts, base_delay: Duration::ZERO, max_delay: Duration::ZERO }
    }

    pub fn delay_for(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Runs `op` until it succeeds, fails with a non-retriable error, or the
    /// attempt budget is spent. The last error is returned.
    pub fn run<T, E>(&self, mut op: impl FnMut() -> Result<T, E>, retriable: impl Fn(&E) -> bool) -> Result<T, E> {
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if retriable(&e) && attempt + 1 < self.max_attempts.max(1) => {
                    let wait = self.delay_for(attempt);
                    log::warn!("retriable failure (attempt {}), backing off {:?}", attempt + 1, wait);
                    thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Enforces a minimum interval between consecutive requests across threads.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(interval: Duration) -> Self {
        RateLimiter { interval, last: Mutex::new(None) }
    }

    pub fn wait(&self) {
        let mut last = self.last.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.interval {
                thread::sleep(self.interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("decode: {0}")]
    Decode(String),
}

impl HttpError {
    /// Connection failures, throttling and server errors are worth retrying.
    pub fn is_retriable(&self) -> bool {
        match self {
            HttpError::Transport(_) => true,
            HttpError::Status { status, .. } => *status == 429 || *status >= 500,
            HttpError::Decode(_) => false,
        }
    }
}

/// Rate-limited JSON GET client.
pub struct JsonClient {
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
    retry: RetryPolicy,
}

impl JsonClient {
    pub fn new(min_interval: Duration, timeout: Duration, retry: RetryPolicy) -> Result<Self, HttpError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("fcattention/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| HttpError::Transport(e.to_string()))?;
        Ok(JsonClient { client, limiter: RateLimiter::new(min_interval), retry })
    }

    pub fn get_json(&self, url: &str, query: &[(&str, String)]) -> Result<serde_json::Value, HttpError> {
        self.retry.run(
            || {
                self.limiter.wait();
                let resp = self
                    .client
                    .get(url)
                    .query(query)
                    .send()
                    .map_err(|e| HttpError::Transport(e.to_string()))?;
                let status = resp.status();
                let body = resp.text().map_err(|e| HttpError::Transport(e.to_string()))?;
                if !status.is_success() {
                    return Err(HttpError::Status { status: status.as_u16(), body });
                }
                serde_json::from_str(&body).map_err(|e| HttpError::Decode(e.to_string()))
            },
            HttpError::is_retriable,
        )
    }
}
