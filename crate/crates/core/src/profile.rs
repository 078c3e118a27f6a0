//! Wall-clock phase accounting.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

/// Where time goes during emulated inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Accumulating lookup-table products inside the GEMM or direct loops.
    LutLookup,
    /// Filter quantization, min/max reductions and the dequantizing epilogue.
    QuantDequantMinMax,
    /// Image-to-columns, float layers and everything else.
    Im2ColsGemmOther,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub lut_lookup: Duration,
    pub quant_dequant_minmax: Duration,
    pub im2cols_gemm_other: Duration,
}

impl PhaseTimes {
    pub fn add(&mut self, phase: Phase, d: Duration) {
        match phase {
            Phase::LutLookup => self.lut_lookup += d,
            Phase::QuantDequantMinMax => self.quant_dequant_minmax += d,
            Phase::Im2ColsGemmOther => self.im2cols_gemm_other += d,
        }
    }

    pub fn merge(&mut self, other: &PhaseTimes) {
        self.lut_lookup += other.lut_lookup;
        self.quant_dequant_minmax += other.quant_dequant_minmax;
        self.im2cols_gemm_other += other.im2cols_gemm_other;
    }

    pub fn total(&self) -> Duration {
        self.lut_lookup + self.quant_dequant_minmax + self.im2cols_gemm_other
    }
}

static PHASE_TIMING: AtomicBool = AtomicBool::new(true);

/// Turns the phase and per-node timers on or off process-wide. Off, they
/// read zero and never touch the clock.
pub fn set_phase_timing(on: bool) {
    PHASE_TIMING.store(on, Ordering::Relaxed);
}

pub fn phase_timing() -> bool {
    PHASE_TIMING.load(Ordering::Relaxed)
}

/// `Instant` where the platform has a clock; a stopped clock elsewhere.
#[derive(Debug, Clone, Copy)]
pub struct Stopwatch {
    #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
    start: Option<std::time::Instant>,
}

impl Stopwatch {
    pub fn start() -> Self {
        Self {
            #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
            start: Some(std::time::Instant::now()),
        }
    }

    /// Instrumentation timer, stopped when phase timing is off.
    pub fn phase() -> Self {
        if phase_timing() {
            Self::start()
        } else {
            Self {
                #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
                start: None,
            }
        }
    }

    pub fn elapsed(&self) -> Duration {
        #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
        {
            self.start.map_or(Duration::ZERO, |s| s.elapsed())
        }
        #[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
        {
            Duration::ZERO
        }
    }
}

/// Times `f` and charges it to `phase`.
pub fn timed<R>(times: &mut PhaseTimes, phase: Phase, f: impl FnOnce() -> R) -> R {
    let sw = Stopwatch::phase();
    let r = f();
    times.add(phase, sw.elapsed());
    r
}
