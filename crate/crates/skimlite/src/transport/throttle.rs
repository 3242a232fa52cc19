//! Token-bucket bandwidth throttle, applied on the server's write path.

use std::io::Read;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Default bucket burst, in bytes.
pub const DEFAULT_BURST: u64 = 64 * 1024;

/// A token bucket: `rate` bytes/second with at most `burst` bytes of credit.
///
/// One bucket models one link; share it across every connection that rides
/// that link.
pub struct Throttle {
    rate: u64,
    burst: u64,
    state: Mutex<BucketState>,
}

struct BucketState {
    tokens: f64,
    last_refill: Instant,
}

impl Throttle {
    pub fn new(rate: u64) -> Throttle {
        Throttle::with_burst(rate, DEFAULT_BURST)
    }

    pub fn with_burst(rate: u64, burst: u64) -> Throttle {
        assert!(rate > 0, "throttle rate must be positive");
        Throttle {
            rate,
            burst: burst.max(1),
            state: Mutex::new(BucketState {
                tokens: burst.max(1) as f64,
                last_refill: Instant::now(),
            }),
        }
    }

    pub fn rate(&self) -> u64 {
        self.rate
    }

    /// Blocks until `n` bytes of credit have been consumed.
    pub fn acquire(&self, n: u64) {
        let mut remaining = n;
        while remaining > 0 {
            let chunk = remaining.min(self.burst);
            let wait = {
                let mut state = self.state.lock().unwrap();
                let now = Instant::now();
                let elapsed = now.duration_since(state.last_refill).as_secs_f64();
                state.tokens = (state.tokens + elapsed * self.rate as f64).min(self.burst as f64);
                state.last_refill = now;
                if state.tokens >= chunk as f64 {
                    state.tokens -= chunk as f64;
                    remaining -= chunk;
                    None
                } else {
                    Some(Duration::from_secs_f64(
                        (chunk as f64 - state.tokens) / self.rate as f64,
                    ))
                }
            };
            if let Some(wait) = wait {
                std::thread::sleep(wait);
            }
        }
    }
}

/// A reader that pays throttle credit for every byte it yields.
pub struct ThrottledReader<R: Read> {
    inner: R,
    throttle: Arc<Throttle>,
}

impl<R: Read> ThrottledReader<R> {
    pub fn new(inner: R, throttle: Arc<Throttle>) -> ThrottledReader<R> {
        ThrottledReader { inner, throttle }
    }
}

impl<R: Read> Read for ThrottledReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        // Cap each read at the burst so credit is paid in small steps.
        let cap = (self.throttle.burst as usize).min(buf.len()).max(1);
        let n = self.inner.read(&mut buf[..cap])?;
        if n > 0 {
            self.throttle.acquire(n as u64);
        }
        Ok(n)
    }
}
