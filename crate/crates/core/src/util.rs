//! Process-level helpers.

/// Hands free heap pages back to the system. The assembly frees many
/// condensed blocks whose sizes do not match the blocks it allocates, which
/// leaves the glibc heap fragmented; elsewhere this is a no-op.
pub fn trim_heap() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: malloc_trim only releases unused memory of the allocator.
    unsafe {
        libc::malloc_trim(0);
    }
}
