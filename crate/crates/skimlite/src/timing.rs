//! Per-phase wall-clock accumulators shared by the engine and the benchmark
//! harness. Phases are accumulated at call sites and never overlap, so their
//! sum is bounded by the total wall time.

use serde::{Deserialize, Serialize};

/// Seconds spent in each phase of a skim job.
#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    /// Range reads against the storage source (including prefetch fills).
    pub basket_fetch: f64,
    /// Codec work turning compressed baskets into raw payloads.
    pub decompress: f64,
    /// Decoding payloads into typed columns and extracting event values.
    pub deserialize: f64,
    /// Selection evaluation (all three stages plus derived variables).
    pub select: f64,
    /// Re-basketing and writing the output file.
    pub write: f64,
    /// Moving the finished output over the client link (filled by the
    /// harness; zero for jobs that write locally).
    pub result_transfer: f64,
    /// End-to-end wall time of the job.
    pub total_wall: f64,
    /// CPU time consumed by the job's thread.
    pub cpu_time: f64,
}

impl TimingBreakdown {
    /// Sum of the disjoint phases (excludes `total_wall` and `cpu_time`).
    pub fn phase_sum(&self) -> f64 {
        self.basket_fetch
            + self.decompress
            + self.deserialize
            + self.select
            + self.write
            + self.result_transfer
    }
}

/// CPU time of the calling thread, in seconds.
pub fn thread_cpu_time() -> f64 {
    rusage(libc::RUSAGE_THREAD)
}

/// CPU time of the whole process, in seconds.
pub fn process_cpu_time() -> f64 {
    rusage(libc::RUSAGE_SELF)
}

fn rusage(who: i32) -> f64 {
    // SAFETY: getrusage writes into the zeroed struct we hand it.
    unsafe {
        let mut usage: libc::rusage = std::mem::zeroed();
        if libc::getrusage(who, &mut usage) != 0 {
            return 0.0;
        }
        let tv = |t: libc::timeval| t.tv_sec as f64 + t.tv_usec as f64 * 1e-6;
        tv(usage.ru_utime) + tv(usage.ru_stime)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_sum_adds_phases() {
        let t = TimingBreakdown {
            basket_fetch: 1.0,
            decompress: 2.0,
            deserialize: 3.0,
            select: 0.5,
            write: 0.25,
            result_transfer: 0.25,
            total_wall: 10.0,
            cpu_time: 4.0,
        };
        assert_eq!(t.phase_sum(), 7.0);
    }

    #[test]
    fn cpu_clocks_are_monotonic() {
        let a = process_cpu_time();
        let mut x = 0u64;
        for i in 0..200_000u64 {
            x = x.wrapping_add(i * i);
        }
        std::hint::black_box(x);
        let b = process_cpu_time();
        assert!(b >= a);
    }
}
