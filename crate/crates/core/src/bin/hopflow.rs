use hopflow::alloc::CountingAlloc;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

/// glibc raises its mmap threshold after large frees, so whether per-step
/// buffers come from mmap (and fault in fresh pages every step) would depend
/// on what ran before. Fixed thresholds keep step timings comparable.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn pin_malloc_thresholds() {
    // SAFETY: mallopt only adjusts allocator tuning parameters.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 256 << 20);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn pin_malloc_thresholds() {}

fn main() {
    pin_malloc_thresholds();
    std::process::exit(hopflow::cli::run(std::env::args_os()));
}
