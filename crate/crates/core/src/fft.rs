//! In-place radix-2 complex FFT, used for circular cross-correlation along
//! the angle axis of polar images.

use alloc::vec::Vec;
use core::f64::consts::PI;

pub use num_complex::Complex64;

/// Forward transform `X[k] = sum_n x[n] exp(-2 pi i k n / N)`. `N` must be a
/// power of two.
pub fn fft(buf: &mut [Complex64]) {
    transform(buf, false);
}

/// Inverse transform including the `1/N` normalization.
pub fn ifft(buf: &mut [Complex64]) {
    transform(buf, true);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

fn transform(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "fft length {} is not a power of two", n);
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Circular cross-correlation `c[k] = sum_j a[j + k] * conj(b[j])` from the
/// spectra of `a` and `b`: the inverse transform of `A * conj(B)`.
pub fn correlate_spectra(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut prod: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x * y.conj()).collect();
    ifft(&mut prod);
    prod
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k * j) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let x: Vec<Complex64> = (0..16)
            .map(|i| Complex64::new(libm::sin(i as f64 * 0.7), libm::cos(i as f64 * 1.3) - 0.2))
            .collect();
        let mut y = x.clone();
        fft(&mut y);
        for (a, b) in y.iter().zip(dft(&x)) {
            assert!((a - b).norm() < 1e-12);
        }
        ifft(&mut y);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn correlation_against_direct_sum() {
        let n = 8;
        let a: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0 - i as f64 * 0.5)).collect();
        let b: Vec<Complex64> = (0..n).map(|i| Complex64::new((i * i % 5) as f64, 0.3)).collect();
        let (mut fa, mut fb) = (a.clone(), b.clone());
        fft(&mut fa);
        fft(&mut fb);
        let c = correlate_spectra(&fa, &fb);
        for k in 0..n {
            let direct: Complex64 = (0..n).map(|j| a[(j + k) % n] * b[j].conj()).sum();
            assert!((c[k] - direct).norm() < 1e-10);
        }
    }

    #[test]
    fn length_one_is_identity() {
        let mut v = vec![Complex64::new(2.0, -1.0)];
        fft(&mut v);
        assert_eq!(v[0], Complex64::new(2.0, -1.0));
    }
}
