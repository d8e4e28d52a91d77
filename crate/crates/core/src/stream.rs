//! Bulk stores for output tensors that are written once and not read back
//! soon. On x86_64 these bypass the cache (no read-for-ownership), which
//! roughly halves the memory traffic of large voxel writes. Elsewhere, or for
//! unaligned slices, they fall back to plain copies.
//!
//! Call [`fence`] after a batch of stores before the data is handed out.

#[cfg(target_arch = "x86_64")]
use std::arch::x86_64::{_mm_loadu_ps, _mm_prefetch, _MM_HINT_T0, _mm_setzero_ps, _mm_sfence, _mm_stream_ps};

#[cfg(target_arch = "x86_64")]
#[inline]
fn streamable(dst: &[f32]) -> bool {
    dst.as_ptr() as usize % 16 == 0 && dst.len() % 4 == 0
}

#[inline]
pub(crate) fn copy(dst: &mut [f32], src: &[f32]) {
    debug_assert_eq!(dst.len(), src.len());
    #[cfg(target_arch = "x86_64")]
    if streamable(dst) {
        // SAFETY: sse is part of the x86_64 baseline; dst is 16-byte aligned
        // and both slices hold dst.len() (a multiple of 4) elements.
        unsafe {
            let (d, s) = (dst.as_mut_ptr(), src.as_ptr());
            for i in (0..dst.len()).step_by(4) {
                _mm_stream_ps(d.add(i), _mm_loadu_ps(s.add(i)));
            }
        }
        return;
    }
    dst.copy_from_slice(src);
}

#[inline]
pub(crate) fn zero(dst: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if streamable(dst) {
        // SAFETY: as in `copy`.
        unsafe {
            let d = dst.as_mut_ptr();
            let z = _mm_setzero_ps();
            for i in (0..dst.len()).step_by(4) {
                _mm_stream_ps(d.add(i), z);
            }
        }
        return;
    }
    dst.fill(0.0);
}

/// Hints that `src` will be read soon.
#[inline]
pub(crate) fn prefetch(src: &[f32]) {
    #[cfg(target_arch = "x86_64")]
    for line in src.chunks(16) {
        // SAFETY: prefetch never faults; the pointer is in bounds anyway.
        unsafe { _mm_prefetch::<_MM_HINT_T0>(line.as_ptr() as *const i8) }
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = src;
}

/// Orders preceding streaming stores before any later store.
#[inline]
pub(crate) fn fence() {
    #[cfg(target_arch = "x86_64")]
    // SAFETY: sse is part of the x86_64 baseline.
    unsafe {
        _mm_sfence()
    }
}
