//! Blocking HTTP plumbing shared by the VLM client and remote detectors.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use crate::error::{Error, Result, TransportError};

/// POSTs a JSON body and returns the raw response body.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &[u8],
    ) -> std::result::Result<Vec<u8>, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &[u8],
    ) -> std::result::Result<Vec<u8>, TransportError> {
        let mut req = self
            .client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                TransportError::transient(e.to_string())
            } else {
                TransportError::permanent(e.to_string())
            }
        })?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .map_err(|e| TransportError::transient(e.to_string()))?;
        if status.is_success() {
            return Ok(bytes.to_vec());
        }
        let snippet: String = String::from_utf8_lossy(&bytes).chars().take(200).collect();
        let message = format!("HTTP {status}: {snippet}");
        if status.as_u16() == 429 || status.is_server_error() {
            Err(TransportError::transient(message))
        } else {
            Err(TransportError::permanent(message))
        }
    }
}

/// Wraps a transport and counts every call that reaches it.
pub struct CountingTransport {
    inner: Arc<dyn HttpTransport>,
    calls: AtomicUsize,
}

impl CountingTransport {
    pub fn new(inner: Arc<dyn HttpTransport>) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl HttpTransport for CountingTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &[u8],
    ) -> std::result::Result<Vec<u8>, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.post_json(url, bearer, body)
    }
}

/// Transport that refuses every request; used where no network is allowed.
pub struct OfflineTransport;

impl HttpTransport for OfflineTransport {
    fn post_json(
        &self,
        url: &str,
        _bearer: Option<&str>,
        _body: &[u8],
    ) -> std::result::Result<Vec<u8>, TransportError> {
        Err(TransportError::permanent(format!("network disabled: refused POST {url}")))
    }
}

/// Retry schedule for transient transport failures: `max_attempts` tries in
/// total, sleeping `initial_backoff`, then twice that, and so on in between.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn run<T>(
        &self,
        mut attempt: impl FnMut() -> std::result::Result<T, TransportError>,
    ) -> std::result::Result<T, TransportError> {
        let mut backoff = self.initial_backoff;
        let mut tries = 0;
        loop {
            tries += 1;
            match attempt() {
                Ok(v) => return Ok(v),
                Err(e) if e.transient && tries < self.max_attempts.max(1) => {
                    log::warn!("transient transport error (attempt {tries}): {e}; retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Counting semaphore bounding the number of in-flight requests.
pub struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> LimiterGuard<'_> {
        let mut free = self.permits.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.freed.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        LimiterGuard { limiter: self }
    }
}

pub struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.limiter.permits.lock().unwrap_or_else(|p| p.into_inner());
        *free += 1;
        self.limiter.freed.notify_one();
    }
}
