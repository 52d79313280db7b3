//! FFT evaluation of the density part of a linear (`s = 2`) Wolff potential
//! on a lattice of evaluation points.
//!
//! For `s = 2` the potential is linear in the measure:
//! `W[rho](x) = sum_cells rho_c * K(x - cell)`, where `K` sums the radial
//! kernel `int_r^T t^{-beta-1} dt` over the cell's sub-atoms. With equal
//! spacing between the evaluation lattice and the density grid the kernel
//! depends only on the index difference, so the sum is one linear
//! convolution.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::radial_integral;
use crate::measure::{for_each_index, subsample_offsets, Density, Grid};

/// Smallest `2^a 3^b 5^c >= n`.
fn fast_len(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p5 = 1;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            let mut v = p35;
            while v < n {
                v *= 2;
            }
            best = best.min(v);
            p35 *= 3;
        }
        p5 *= 5;
    }
    best
}

/// Spacing-compatible evaluation lattice?
pub(super) fn compatible(density: &Density, eval: &Grid) -> bool {
    density.grid().dim() == eval.dim() && density.grid().spacing().iter().zip(eval.spacing()).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs())
}

/// In-place N-d FFT over a row-major buffer.
fn fft_nd(buf: &mut [Complex64], shape: &[usize], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let total: usize = shape.iter().product();
    for axis in 0..shape.len() {
        let len = shape[axis];
        let fft = if inverse { planner.plan_fft_inverse(len) } else { planner.plan_fft_forward(len) };
        let stride: usize = shape[axis + 1..].iter().product();
        if stride == 1 {
            buf.par_chunks_mut(len).for_each(|line| fft.process(line));
            continue;
        }
        let block = len * stride;
        let lines: Vec<(usize, usize)> = (0..total / block).flat_map(|b| (0..stride).map(move |j| (b, j))).collect();
        let done: Vec<Vec<Complex64>> = lines
            .par_iter()
            .map(|&(b, j)| {
                let base = b * block + j;
                let mut line: Vec<Complex64> = (0..len).map(|k| buf[base + k * stride]).collect();
                fft.process(&mut line);
                line
            })
            .collect();
        for (&(b, j), line) in lines.iter().zip(done) {
            let base = b * block + j;
            for (k, v) in line.into_iter().enumerate() {
                buf[base + k * stride] = v;
            }
        }
    }
}

/// Density part of the `s = 2` potential at every node of `eval`. Returns
/// `None` when a sub-atom coincides with an evaluation node (the kernel is
/// infinite there and the caller must fall back to pointwise evaluation).
pub(super) fn linear_density_potential(density: &Density, subsample: usize, eval: &Grid, beta: f64, truncation: f64) -> Option<Vec<f64>> {
    let dg = density.grid();
    let n = dg.dim();
    let h = dg.spacing();
    let shift: Vec<f64> = (0..n).map(|a| eval.cuboid().lo().coords()[a] - dg.cuboid().lo().coords()[a]).collect();
    let ne = eval.node_shape();
    let nc = dg.cells().to_vec();
    let shape: Vec<usize> = (0..n).map(|a| fast_len(ne[a] + nc[a] - 1)).collect();
    let total: usize = shape.iter().product();
    let offs = subsample_offsets(subsample);
    let sub_weight = dg.cell_volume() / subsample.pow(n as u32) as f64;
    let t2 = truncation * truncation;

    let mut strides = vec![1usize; n];
    for a in (0..n - 1).rev() {
        strides[a] = strides[a + 1] * shape[a + 1];
    }

    // Kernel indexed by (i - j) mod L.
    let kernel: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut diff = vec![0i64; n];
            let mut rem = flat;
            for a in 0..n {
                let k = (rem / strides[a]) as i64;
                rem %= strides[a];
                let d = if k < ne[a] as i64 { k } else { k - shape[a] as i64 };
                if d < -(nc[a] as i64 - 1) || d > ne[a] as i64 - 1 {
                    return 0.0;
                }
                diff[a] = d;
            }
            let mut acc = 0.0;
            let mut y = vec![0.0; n];
            let dims = vec![subsample; n];
            for_each_index(&vec![0; n], &dims, |k| {
                for a in 0..n {
                    y[a] = shift[a] + (diff[a] as f64 - offs[k[a]]) * h[a];
                }
                let r2: f64 = y.iter().map(|v| v * v).sum();
                if r2 <= t2 {
                    acc += radial_integral(r2.sqrt(), truncation, beta);
                }
            });
            acc * sub_weight
        })
        .collect();
    if kernel.iter().any(|k| !k.is_finite()) {
        return None;
    }

    let mut kbuf: Vec<Complex64> = kernel.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
    let mut rbuf = vec![Complex64::new(0.0, 0.0); total];
    let mut idx = vec![0usize; n];
    for (c, &v) in density.values().iter().enumerate() {
        dg.cell_multi(c, &mut idx);
        let flat: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        rbuf[flat] = Complex64::new(v, 0.0);
    }
    fft_nd(&mut kbuf, &shape, false);
    fft_nd(&mut rbuf, &shape, false);
    rbuf.par_iter_mut().zip(kbuf.par_iter()).for_each(|(a, b)| *a *= *b);
    fft_nd(&mut rbuf, &shape, true);

    let scale = 1.0 / total as f64;
    let mut out = vec![0.0; eval.node_count()];
    for_each_index(&vec![0; n], &ne, |i| {
        let flat: usize = i.iter().zip(&strides).map(|(v, s)| v * s).sum();
        // rounding can leave tiny negative values where the true sum is 0
        out[eval.node_flat(i)] = (rbuf[flat].re * scale).max(0.0);
    });
    Some(out)
}
