//! Real-to-complex 2D transforms on square power-of-two grids.
//!
//! Spectra are stored transposed: index `j2 * n + i1`, where `j2 ∈ 0..=n/2`
//! is the (halved) frequency along the second axis and `i1 ∈ 0..n` the full
//! frequency along the first axis. Row work is spread over rayon; every row
//! is transformed independently, so results do not depend on the pool size.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Fft2 {
    n: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

pub(crate) fn plan(n: usize) -> Arc<Fft2> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Fft2>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut rp = RealFftPlanner::<f64>::new();
            let mut cp = FftPlanner::<f64>::new();
            Arc::new(Fft2 {
                n,
                r2c: rp.plan_fft_forward(n),
                c2r: rp.plan_fft_inverse(n),
                fwd: cp.plan_fft_forward(n),
                inv: cp.plan_fft_inverse(n),
            })
        })
        .clone()
}

impl Fft2 {
    pub(crate) fn half(&self) -> usize {
        self.n / 2 + 1
    }

    /// Unnormalized forward transform of a row-major `n × n` real array.
    pub(crate) fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let n = self.n;
        let nh = self.half();
        debug_assert_eq!(values.len(), n * n);
        let mut rows = vec![Complex64::new(0.0, 0.0); n * nh];
        rows.par_chunks_mut(nh).enumerate().for_each_init(
            || (vec![0.0; n], self.r2c.make_scratch_vec()),
            |(input, scratch), (i, out)| {
                input.copy_from_slice(&values[i * n..(i + 1) * n]);
                self.r2c
                    .process_with_scratch(input, out, scratch)
                    .expect("r2c lengths match");
            },
        );
        let mut spec = transpose(&rows, n, nh);
        spec.par_chunks_mut(n).for_each_init(
            || vec![Complex64::new(0.0, 0.0); self.fwd.get_inplace_scratch_len()],
            |scratch, col| self.fwd.process_with_scratch(col, scratch),
        );
        spec
    }

    /// Normalized inverse of [`Fft2::forward`]. Consumes the spectrum.
    pub(crate) fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        let n = self.n;
        let nh = self.half();
        debug_assert_eq!(spec.len(), n * nh);
        spec.par_chunks_mut(n).for_each_init(
            || vec![Complex64::new(0.0, 0.0); self.inv.get_inplace_scratch_len()],
            |scratch, col| self.inv.process_with_scratch(col, scratch),
        );
        let mut rows = transpose(&spec, nh, n);
        let scale = 1.0 / (n * n) as f64;
        let mut out = vec![0.0; n * n];
        out.par_chunks_mut(n)
            .zip(rows.par_chunks_mut(nh))
            .for_each_init(
                || self.c2r.make_scratch_vec(),
                |scratch, (dst, row)| {
                    // Real signals have purely real DC and Nyquist bins.
                    row[0].im = 0.0;
                    row[nh - 1].im = 0.0;
                    self.c2r
                        .process_with_scratch(row, dst, scratch)
                        .expect("c2r lengths match");
                    for v in dst.iter_mut() {
                        *v *= scale;
                    }
                },
            );
        out
    }
}

// `src` is `rows × cols` row-major; returns `cols × rows`.
fn transpose(src: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut dst = vec![Complex64::new(0.0, 0.0); rows * cols];
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    dst
}
