//! Retrying, caching client wrapper around any [`Backend`].

use super::{
    cache_key, Backend, BackendConfig, BackendError, ChatRequest, Completion, ResponseCache,
};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

/// Injectable clock so tests can assert the backoff schedule without sleeping.
pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

/// Wall-clock sleeper used outside tests.
pub struct SystemSleeper;

impl Sleeper for SystemSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Result of one logical call, with enough metadata for the trace.
#[derive(Debug, Clone)]
pub struct CallOutcome {
    pub completion: Completion,
    /// Backend attempts made for this call; 0 when served from cache.
    pub attempts: u32,
    pub from_cache: bool,
    /// Error text of each failed attempt that preceded the success.
    pub attempt_errors: Vec<String>,
}

/// Client combining a backend, a retry policy, and an optional cache.
///
/// Safe for concurrent use from many workers; the only shared mutable
/// state is the cache, which supports concurrent readers and writers.
pub struct Client {
    backend: Arc<dyn Backend>,
    config: BackendConfig,
    cache: Option<ResponseCache>,
    sleeper: Arc<dyn Sleeper>,
    network_calls: AtomicU64,
}

impl Client {
    pub fn new(backend: Arc<dyn Backend>, config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let cache = match &config.cache_path {
            Some(path) => Some(ResponseCache::open(path).map_err(|e| {
                BackendError::InvalidRequest(format!(
                    "cannot open cache at {}: {e}",
                    path.display()
                ))
            })?),
            None => None,
        };
        Ok(Self {
            backend,
            config,
            cache,
            sleeper: Arc::new(SystemSleeper),
            network_calls: AtomicU64::new(0),
        })
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// Total backend invocations (each retry counts). Cache hits add nothing.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    /// Call the backend with retries per the configured policy.
    ///
    /// Transient failures (network, timeout) are retried up to
    /// `max_attempts` total tries, honoring the backoff schedule.
    /// Non-retryable failures abort immediately.
    pub fn complete(&self, request: &ChatRequest) -> Result<CallOutcome, BackendError> {
        request.validate()?;
        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut attempts = 0;
        let mut attempt_errors = Vec::new();
        loop {
            attempts += 1;
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.complete(request) {
                Ok(completion) => {
                    return Ok(CallOutcome {
                        completion,
                        attempts,
                        from_cache: false,
                        attempt_errors,
                    });
                }
                Err(err) if err.is_retryable() && attempts < max_attempts => {
                    tracing::warn!(stage = %request.stage_tag, attempt = attempts, %err, "retrying");
                    attempt_errors.push(err.to_string());
                    if let Some(delay) = self.config.retry.delay_before_retry(attempts) {
                        self.sleeper.sleep(delay);
                    }
                }
                Err(err) => {
                    // Re-tag transient errors with the final attempt count.
                    return Err(match err {
                        BackendError::Network { last, .. } => {
                            BackendError::Network { attempts, last }
                        }
                        BackendError::Timeout { last, .. } => {
                            BackendError::Timeout { attempts, last }
                        }
                        other => other,
                    });
                }
            }
        }
    }

    /// Cache-first call: a hit returns the stored completion with zero
    /// network operations; a miss calls [`Client::complete`], stores the
    /// result atomically, and returns it. Without a configured cache this
    /// is a plain `complete`.
    pub fn complete_cached(&self, request: &ChatRequest) -> Result<CallOutcome, BackendError> {
        let Some(cache) = &self.cache else {
            return self.complete(request);
        };
        let key = cache_key(request);
        if let Some(completion) = cache.get(&key) {
            return Ok(CallOutcome {
                completion,
                attempts: 0,
                from_cache: true,
                attempt_errors: Vec::new(),
            });
        }
        let outcome = self.complete(request)?;
        if let Err(err) = cache.put(&key, &outcome.completion) {
            tracing::warn!(%key, %err, "failed to store cache entry");
        }
        Ok(outcome)
    }

    /// Bypass the cache read but still store the fresh result. Used for the
    /// single retry after a blank completion, where re-reading the cache
    /// would just reproduce the blank.
    pub fn complete_fresh(&self, request: &ChatRequest) -> Result<CallOutcome, BackendError> {
        let outcome = self.complete(request)?;
        if let Some(cache) = &self.cache {
            let key = cache_key(request);
            if let Err(err) = cache.put(&key, &outcome.completion) {
                tracing::warn!(%key, %err, "failed to store cache entry");
            }
        }
        Ok(outcome)
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }
}
