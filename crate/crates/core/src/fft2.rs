//! Unnormalized 2-D DFT on row-major complex buffers.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Reusable forward/inverse plans for one `width x height` size.
pub struct Fft2 {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            col_fwd: planner.plan_fft_forward(height),
            row_inv: planner.plan_fft_inverse(width),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    /// In-place forward transform, `X(u,v) = sum x(a,b) e^{-2 pi i (ua/W + vb/H)}`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_fwd, &self.col_fwd);
    }

    /// In-place inverse transform without the `1/(WH)` factor.
    pub fn inverse_unnormalized(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_inv, &self.col_inv);
    }

    fn run(&self, buf: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        let (w, h) = (self.width, self.height);
        assert_eq!(buf.len(), w * h);
        row.process(buf);
        let mut t = vec![Complex64::new(0.0, 0.0); w * h];
        transpose(buf, &mut t, w, h);
        col.process(&mut t);
        transpose(&t, buf, h, w);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], w: usize, h: usize) {
    for y in 0..h {
        for x in 0..w {
            dst[x * h + y] = src[y * w + x];
        }
    }
}

pub fn to_complex(values: &[f64]) -> Vec<Complex64> {
    values.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn matches_naive_dft() {
        let (w, h) = (5, 4);
        let x: Vec<f64> = (0..w * h)
            .map(|i| ((i * 7919) % 23) as f64 / 23.0)
            .collect();
        let mut buf = to_complex(&x);
        Fft2::new(w, h).forward(&mut buf);
        for v in 0..h {
            for u in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for b in 0..h {
                    for a in 0..w {
                        let th = -2.0
                            * PI
                            * (u as f64 * a as f64 / w as f64 + v as f64 * b as f64 / h as f64);
                        acc += Complex64::new(th.cos(), th.sin()) * x[b * w + a];
                    }
                }
                assert!((acc - buf[v * w + u]).norm() < 1e-12);
            }
        }
        Fft2::new(w, h).inverse_unnormalized(&mut buf);
        for (a, b) in buf.iter().zip(&x) {
            assert!((a.re / (w * h) as f64 - b).abs() < 1e-12);
        }
    }
}
