//! Scoring kernels. Every path produces bit-identical results whether or
//! not SIMD is available: `f32 * f32` products are exact in `f64`, and the
//! scalar fallbacks mirror the vector lane layout and reduction order.

const LANES: usize = 8;

/// Dot product of two `f32` vectors accumulated in `f64`.
pub fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the avx2 feature was detected at runtime.
            return unsafe { dot_f32_avx2(a, b) };
        }
    }
    dot_f32_scalar(a, b)
}

fn reduce(acc: [f64; LANES], a: &[f32], b: &[f32], from: usize) -> f64 {
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for i in from..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

pub(crate) fn dot_f32_scalar(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let full = a.len() / LANES * LANES;
    for (ca, cb) in a[..full].chunks_exact(LANES).zip(b[..full].chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += ca[l] as f64 * cb[l] as f64;
        }
    }
    reduce(acc, a, b, full)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_f32_avx2(a: &[f32], b: &[f32]) -> f64 {
    use std::arch::x86_64::*;
    let full = a.len() / LANES * LANES;
    let mut lo = _mm256_setzero_pd();
    let mut hi = _mm256_setzero_pd();
    let mut i = 0;
    while i < full {
        let va = _mm256_loadu_ps(a.as_ptr().add(i));
        let vb = _mm256_loadu_ps(b.as_ptr().add(i));
        let a_lo = _mm256_cvtps_pd(_mm256_castps256_ps128(va));
        let a_hi = _mm256_cvtps_pd(_mm256_extractf128_ps(va, 1));
        let b_lo = _mm256_cvtps_pd(_mm256_castps256_ps128(vb));
        let b_hi = _mm256_cvtps_pd(_mm256_extractf128_ps(vb, 1));
        lo = _mm256_add_pd(lo, _mm256_mul_pd(a_lo, b_lo));
        hi = _mm256_add_pd(hi, _mm256_mul_pd(a_hi, b_hi));
        i += LANES;
    }
    let mut acc = [0.0f64; LANES];
    _mm256_storeu_pd(acc.as_mut_ptr(), lo);
    _mm256_storeu_pd(acc.as_mut_ptr().add(4), hi);
    reduce(acc, a, b, full)
}

/// `Σ codes[i] * weights[i]` in wrapping `i32`. Callers keep
/// `len * 255 * max|weight| < 2^31` so nothing actually wraps.
pub fn dot_u8_i16(codes: &[u8], weights: &[i16]) -> i32 {
    assert_eq!(codes.len(), weights.len());
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the avx2 feature was detected at runtime.
            return unsafe { dot_u8_i16_avx2(codes, weights) };
        }
    }
    dot_u8_i16_scalar(codes, weights)
}

pub(crate) fn dot_u8_i16_scalar(codes: &[u8], weights: &[i16]) -> i32 {
    codes
        .iter()
        .zip(weights)
        .fold(0i32, |s, (&c, &w)| s.wrapping_add(c as i32 * w as i32))
}

/// Appends `dot_u8_i16(row, weights)` for each `weights.len()`-byte row of
/// `codes`.
pub fn scan_u8_i16(codes: &[u8], weights: &[i16], out: &mut Vec<i32>) {
    let dim = weights.len();
    assert!(dim > 0 && codes.len() % dim == 0);
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the avx2 feature was detected at runtime.
            unsafe { scan_u8_i16_avx2(codes, weights, out) };
            return;
        }
    }
    out.extend(codes.chunks_exact(dim).map(|row| dot_u8_i16_scalar(row, weights)));
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn scan_u8_i16_avx2(codes: &[u8], weights: &[i16], out: &mut Vec<i32>) {
    out.extend(codes.chunks_exact(weights.len()).map(|row| dot_u8_i16_avx2(row, weights)));
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[inline]
unsafe fn dot_u8_i16_avx2(codes: &[u8], weights: &[i16]) -> i32 {
    use std::arch::x86_64::*;
    let full = codes.len() / 16 * 16;
    let mut acc = _mm256_setzero_si256();
    let mut i = 0;
    while i < full {
        let c = _mm256_cvtepu8_epi16(_mm_loadu_si128(codes.as_ptr().add(i) as *const __m128i));
        let w = _mm256_loadu_si256(weights.as_ptr().add(i) as *const __m256i);
        acc = _mm256_add_epi32(acc, _mm256_madd_epi16(c, w));
        i += 16;
    }
    let mut lanes = [0i32; 8];
    _mm256_storeu_si256(lanes.as_mut_ptr() as *mut __m256i, acc);
    let mut s = lanes.iter().fold(0i32, |s, x| s.wrapping_add(*x));
    for j in full..codes.len() {
        s = s.wrapping_add(codes[j] as i32 * weights[j] as i32);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn simd_and_scalar_agree_bitwise() {
        let mut rng = SeededRng::new(1);
        for len in [0usize, 1, 7, 8, 9, 16, 31, 128, 130] {
            let a: Vec<f32> = (0..len).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
            let b: Vec<f32> = (0..len).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
            assert_eq!(dot_f32(&a, &b).to_bits(), dot_f32_scalar(&a, &b).to_bits(), "len {len}");
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
            assert!((dot_f32(&a, &b) - naive).abs() < 1e-12);

            let c: Vec<u8> = (0..len).map(|_| rng.below(256) as u8).collect();
            let w: Vec<i16> = (0..len).map(|_| (rng.below(65535) as i32 - 32767) as i16).collect();
            let naive: i64 = c.iter().zip(&w).map(|(x, y)| *x as i64 * *y as i64).sum();
            assert_eq!(dot_u8_i16(&c, &w) as i64, naive);
            assert_eq!(dot_u8_i16(&c, &w), dot_u8_i16_scalar(&c, &w));
            if len > 0 {
                let rows: Vec<u8> = (0..len * 5).map(|_| rng.below(256) as u8).collect();
                let mut out = Vec::new();
                scan_u8_i16(&rows, &w, &mut out);
                let want: Vec<i32> = rows.chunks(len).map(|r| dot_u8_i16_scalar(r, &w)).collect();
                assert_eq!(out, want);
            }
        }
    }

    #[test]
    fn extreme_integer_range_fits() {
        let c = vec![255u8; 128];
        let w = vec![32767i16; 128];
        assert_eq!(dot_u8_i16(&c, &w) as i64, 255 * 32767 * 128);
        let w = vec![-32767i16; 128];
        assert_eq!(dot_u8_i16(&c, &w) as i64, -255 * 32767 * 128);
    }
}
