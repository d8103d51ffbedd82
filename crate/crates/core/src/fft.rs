//! Multi-dimensional complex FFT on row-major buffers, built on `rustfft`.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans for a fixed 2D or 3D shape.
pub struct FftNd {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl FftNd {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        FftNd {
            shape: shape.to_vec(),
            forward: shape.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inverse: shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized forward transform, `X_k = Σ x_n e^{-2πi kn/N}`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// Inverse transform including the `1/N` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
        let scale = 1.0 / self.len() as f64;
        data.par_iter_mut().for_each(|z| *z *= scale);
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(data.len(), self.len(), "buffer does not match the FFT shape");
        let dim = self.shape.len();
        for axis in 0..dim {
            let n = self.shape[axis];
            let inner: usize = self.shape[axis + 1..].iter().product();
            let plan = &plans[axis];
            if inner == 1 {
                data.par_chunks_mut(n).for_each(|line| plan.process(line));
                continue;
            }
            // gather strided lines block by block, transform, scatter back
            data.par_chunks_mut(n * inner).for_each(|block| {
                let mut line = vec![Complex64::default(); n];
                for j in 0..inner {
                    for (i, z) in line.iter_mut().enumerate() {
                        *z = block[i * inner + j];
                    }
                    plan.process(&mut line);
                    for (i, z) in line.iter().enumerate() {
                        block[i * inner + j] = *z;
                    }
                }
            });
        }
    }
}

/// Smallest `n' >= n` whose prime factors are 2, 3 and 5.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(shape: &[usize], x: &[Complex64]) -> Vec<Complex64> {
        let total: usize = shape.iter().product();
        let index = |mut f: usize| {
            let mut idx = vec![0; shape.len()];
            for a in (0..shape.len()).rev() {
                idx[a] = f % shape[a];
                f /= shape[a];
            }
            idx
        };
        (0..total)
            .map(|k| {
                let ki = index(k);
                (0..total)
                    .map(|n| {
                        let ni = index(n);
                        let phase: f64 = (0..shape.len())
                            .map(|a| -2.0 * PI * (ki[a] * ni[a]) as f64 / shape[a] as f64)
                            .sum();
                        x[n] * Complex64::from_polar(1.0, phase)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        for shape in [vec![6, 4], vec![3, 5, 4]] {
            let total: usize = shape.iter().product();
            let x: Vec<Complex64> = (0..total)
                .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()))
                .collect();
            let mut y = x.clone();
            let plan = FftNd::new(&shape);
            plan.forward(&mut y);
            let want = naive_dft(&shape, &x);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).norm() < 1e-10);
            }
            plan.inverse(&mut y);
            for (a, b) in y.iter().zip(&x) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn fast_lengths() {
        assert_eq!(fast_len(7), 8);
        assert_eq!(fast_len(511), 512);
        assert_eq!(fast_len(97), 100);
        assert_eq!(fast_len(1), 1);
    }
}
