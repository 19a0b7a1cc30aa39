//! Complex 3-D FFT on the cubic lattice, built from 1-D rustfft plans.
//!
//! Forward transforms are unnormalised, `F_k = Σ_n f_n e^{-iξ_k·x_n}`;
//! inverse transforms carry the `1/N^3`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

pub type C64 = Complex64;

#[derive(Clone)]
pub struct Fft3 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    plane: Vec<C64>,
    scratch: Vec<C64>,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("n", &self.n).finish()
    }
}

impl Fft3 {
    pub fn new(grid: &Grid) -> Self {
        let n = grid.n;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Self {
            n,
            fwd,
            inv,
            plane: vec![C64::default(); n * n],
            scratch: vec![C64::default(); scratch_len],
        }
    }

    pub fn forward(&mut self, data: &mut [C64]) {
        self.transform(data, true);
    }

    pub fn inverse(&mut self, data: &mut [C64]) {
        self.transform(data, false);
        let s = 1.0 / (self.n * self.n * self.n) as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn forward_real(&mut self, values: &[f64]) -> Vec<C64> {
        let mut out: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.forward(&mut out);
        out
    }

    /// Inverse transform keeping the real part.
    pub fn inverse_real(&mut self, spectrum: &[C64]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Inverse transform into `out`, reusing `buf` as workspace.
    pub fn inverse_real_into(&mut self, spectrum: &[C64], buf: &mut Vec<C64>, out: &mut [f64]) {
        buf.clear();
        buf.extend_from_slice(spectrum);
        self.inverse(buf);
        for (o, c) in out.iter_mut().zip(buf.iter()) {
            *o = c.re;
        }
    }

    pub fn forward_real_into(&mut self, values: &[f64], out: &mut Vec<C64>) {
        out.clear();
        out.extend(values.iter().map(|&v| C64::new(v, 0.0)));
        self.forward(out);
    }

    fn transform(&mut self, data: &mut [C64], forward: bool) {
        let n = self.n;
        assert_eq!(data.len(), n * n * n, "spectrum length does not match grid");
        let plan = if forward { self.fwd.clone() } else { self.inv.clone() };
        // x lines are contiguous
        plan.process_with_scratch(data, &mut self.scratch);
        // y lines: transpose each z-plane
        for z in 0..n {
            let base = z * n * n;
            for y in 0..n {
                for x in 0..n {
                    self.plane[x * n + y] = data[base + x + n * y];
                }
            }
            plan.process_with_scratch(&mut self.plane, &mut self.scratch);
            for y in 0..n {
                for x in 0..n {
                    data[base + x + n * y] = self.plane[x * n + y];
                }
            }
        }
        // z lines: gather each y-slab
        for y in 0..n {
            for z in 0..n {
                let row = n * (y + n * z);
                for x in 0..n {
                    self.plane[x * n + z] = data[row + x];
                }
            }
            plan.process_with_scratch(&mut self.plane, &mut self.scratch);
            for z in 0..n {
                let row = n * (y + n * z);
                for x in 0..n {
                    data[row + x] = self.plane[x * n + z];
                }
            }
        }
    }
}
