//! Global accounting of matrix payload allocations.
//!
//! Every `Matrix` registers its payload size on construction and deregisters
//! it on drop, so tests and the execution planner can compare the observed
//! high-water mark against a memory estimate. Only matrix payloads are
//! counted; transient scalar buffers are not.

use std::sync::atomic::{AtomicU64, Ordering};

static LIVE_BYTES: AtomicU64 = AtomicU64::new(0);
static PEAK_BYTES: AtomicU64 = AtomicU64::new(0);

pub(crate) fn on_alloc(bytes: u64) {
    let live = LIVE_BYTES.fetch_add(bytes, Ordering::SeqCst) + bytes;
    PEAK_BYTES.fetch_max(live, Ordering::SeqCst);
}

pub(crate) fn on_free(bytes: u64) {
    LIVE_BYTES.fetch_sub(bytes, Ordering::SeqCst);
}

/// Bytes currently held by live matrices.
pub fn live_bytes() -> u64 {
    LIVE_BYTES.load(Ordering::SeqCst)
}

/// Highest value `live_bytes` has reached since the last reset.
pub fn peak_bytes() -> u64 {
    PEAK_BYTES.load(Ordering::SeqCst)
}

/// Resets the peak to the current live volume. Returns the live volume so a
/// caller can later compute the growth observed during a region of interest.
pub fn reset_peak() -> u64 {
    let live = LIVE_BYTES.load(Ordering::SeqCst);
    PEAK_BYTES.store(live, Ordering::SeqCst);
    live
}
