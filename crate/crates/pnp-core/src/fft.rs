//! Small 2-D FFT helper over rustfft (rows then columns, unnormalized
//! forward, 1/(w*h)-normalized inverse).

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Forward 2-D FFT of a real row-major plane.
pub fn fft2(width: usize, height: usize, real: &[f64]) -> Vec<Complex<f64>> {
    debug_assert_eq!(real.len(), width * height);
    let mut buf: Vec<Complex<f64>> = real.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2_in_place(width, height, &mut buf, false);
    buf
}

/// Inverse 2-D FFT, returning the real part scaled by 1/(w*h).
pub fn ifft2_real(width: usize, height: usize, spec: &[Complex<f64>]) -> Vec<f64> {
    let mut buf = spec.to_vec();
    fft2_in_place(width, height, &mut buf, true);
    let norm = 1.0 / (width * height) as f64;
    buf.iter().map(|c| c.re * norm).collect()
}

fn fft2_in_place(width: usize, height: usize, buf: &mut [Complex<f64>], inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse { planner.plan_fft_inverse(width) } else { planner.plan_fft_forward(width) };
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = if inverse { planner.plan_fft_inverse(height) } else { planner.plan_fft_forward(height) };
    let mut col = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = buf[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            buf[y * width + x] = col[y];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let (w, h) = (5, 4);
        let data: Vec<f64> = (0..w * h).map(|i| (i as f64 * 0.37).sin()).collect();
        let back = ifft2_real(w, h, &fft2(w, h, &data));
        for (a, b) in data.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dc_component_is_sum() {
        let (w, h) = (3, 3);
        let data = vec![2.0; 9];
        let spec = fft2(w, h, &data);
        assert!((spec[0].re - 18.0).abs() < 1e-12);
        assert!(spec[0].im.abs() < 1e-12);
    }
}
