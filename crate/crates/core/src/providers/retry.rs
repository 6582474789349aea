use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;

use super::{
    ChatModel, ChatPrompt, CrossScorer, CrossStreams, Embedder, EmbeddingVector, GenerationParams,
    ProviderError, TokenScore, TokenScorer,
};

/// Exponential backoff with jitter. At most `1 + max_retries` attempts.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(30) }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        Self { max_retries, base_delay: Duration::ZERO, max_delay: Duration::ZERO }
    }

    /// Delay before retry number `retry` (0-based): uniform in [½, 1] of
    /// `base · 2^retry`, capped at `max_delay`.
    pub fn delay(&self, retry: u32) -> Duration {
        if self.base_delay.is_zero() {
            return Duration::ZERO;
        }
        let full = self.base_delay.saturating_mul(1u32 << retry.min(20)).min(self.max_delay);
        full.mul_f64(rand::thread_rng().gen_range(0.5..=1.0))
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent. `op` receives the 0-based attempt number.
    pub fn run<T>(&self, mut op: impl FnMut(u32) -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let attempts = self.max_retries + 1;
        let mut attempt = 0;
        loop {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if !e.is_retryable() => return Err(e),
                Err(e) if attempt + 1 >= attempts => {
                    return Err(ProviderError::RetriesExhausted { attempts, last: Box::new(e) })
                }
                Err(e) => {
                    log::debug!("attempt {} failed ({e}), retrying", attempt + 1);
                    std::thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

pub struct SemaphorePermit<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        assert!(permits >= 1, "semaphore needs at least one permit");
        Self { permits: Mutex::new(permits), cv: Condvar::new() }
    }

    pub fn acquire(&self) -> SemaphorePermit<'_> {
        let mut n = self.permits.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.cv.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        SemaphorePermit { sem: self }
    }

    pub fn available(&self) -> usize {
        *self.permits.lock().expect("semaphore poisoned")
    }
}

impl Drop for SemaphorePermit<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().expect("semaphore poisoned") += 1;
        self.sem.cv.notify_one();
    }
}

/// Applies a concurrency limit and a [`RetryPolicy`] to a provider. The
/// semaphore is held for each attempt, not across backoff sleeps.
pub struct Resilient<P> {
    inner: P,
    retry: RetryPolicy,
    limit: Arc<Semaphore>,
}

impl<P> Resilient<P> {
    pub fn new(inner: P, retry: RetryPolicy, concurrency: usize) -> Self {
        Self { inner, retry, limit: Arc::new(Semaphore::new(concurrency)) }
    }

    /// Shares an existing semaphore, so several wrappers draw on one budget.
    pub fn with_semaphore(inner: P, retry: RetryPolicy, limit: Arc<Semaphore>) -> Self {
        Self { inner, retry, limit }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    fn call<T>(&self, mut f: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        self.retry.run(|_| {
            let _permit = self.limit.acquire();
            f()
        })
    }
}

impl<P: Embedder> Embedder for Resilient<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.call(|| self.inner.embed(text))
    }
}

impl<P: ChatModel> ChatModel for Resilient<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
    fn generate(&self, prompt: &ChatPrompt, params: &GenerationParams) -> Result<String, ProviderError> {
        self.call(|| self.inner.generate(prompt, params))
    }
}

impl<P: TokenScorer> TokenScorer for Resilient<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
    fn score_tokens(&self, text: &str) -> Result<Vec<TokenScore>, ProviderError> {
        self.call(|| self.inner.score_tokens(text))
    }
}

impl<P: CrossScorer> CrossScorer for Resilient<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
    fn cross_streams(&self, text: &str) -> Result<CrossStreams, ProviderError> {
        self.call(|| self.inner.cross_streams(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::MockChat;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn attempts_are_bounded() {
        let calls = AtomicUsize::new(0);
        let res: Result<(), _> = RetryPolicy::no_delay(3).run(|_| {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(ProviderError::Http { status: 503, body: String::new() })
        });
        assert_eq!(calls.load(Ordering::SeqCst), 4);
        assert!(matches!(res, Err(ProviderError::RetriesExhausted { attempts: 4, .. })));
    }

    #[test]
    fn non_retryable_fails_immediately() {
        let calls = AtomicUsize::new(0);
        let res: Result<(), _> = RetryPolicy::no_delay(5).run(|_| {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(ProviderError::SafetyFiltered)
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(res, Err(ProviderError::SafetyFiltered));
    }

    #[test]
    fn recovers_after_transient_failure() {
        let chat = Resilient::new(
            MockChat::scripted(
                "m",
                vec![Err(ProviderError::Transport("reset".into())), Ok("done".into())],
            ),
            RetryPolicy::no_delay(2),
            1,
        );
        let out = chat.generate(&ChatPrompt::new("s", "u"), &GenerationParams::default()).unwrap();
        assert_eq!(out, "done");
        assert_eq!(chat.inner().calls(), 2);
    }

    #[test]
    fn malformed_stream_reports_retry_count() {
        let chat = Resilient::new(
            MockChat::scripted("m", vec![Err(ProviderError::Malformed("truncated stream".into()))]),
            RetryPolicy::no_delay(2),
            1,
        );
        let err = chat.generate(&ChatPrompt::new("s", "u"), &GenerationParams::default()).unwrap_err();
        match err {
            ProviderError::RetriesExhausted { attempts, last } => {
                assert_eq!(attempts, 3);
                assert!(matches!(*last, ProviderError::Malformed(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(chat.inner().calls(), 3);
    }

    #[test]
    fn backoff_grows_and_is_capped() {
        let p = RetryPolicy { max_retries: 5, base_delay: Duration::from_millis(100), max_delay: Duration::from_millis(250) };
        for _ in 0..20 {
            let d0 = p.delay(0);
            assert!(d0 >= Duration::from_millis(50) && d0 <= Duration::from_millis(100));
            assert!(p.delay(4) <= Duration::from_millis(250));
        }
    }

    #[test]
    fn semaphore_limits_concurrency() {
        let sem = Arc::new(Semaphore::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let (sem, active, peak) = (sem.clone(), active.clone(), peak.clone());
                s.spawn(move || {
                    let _p = sem.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(sem.available(), 2);
    }
}
