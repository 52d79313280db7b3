//! Direct solve of the `(2N+1)`-point Dirichlet Poisson system by
//! type-I discrete sine transforms along every axis.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::measure::Grid;

/// In-place unnormalized DST-I along `axis` of a row-major array of
/// `shape`. `X_k = sum_{j=1}^{M} x_j sin(pi j k / (M+1))`, computed from the
/// FFT of the odd extension of length `2(M+1)`.
fn dst1_axis(buf: &mut [f64], shape: &[usize], axis: usize) {
    let m = shape[axis];
    let len = 2 * (m + 1);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    let stride: usize = shape[axis + 1..].iter().product();
    let block = m * stride;
    let total: usize = shape.iter().product();
    let lines: Vec<usize> = (0..total / block).flat_map(|b| (0..stride).map(move |j| b * block + j)).collect();
    let done: Vec<Vec<f64>> = lines
        .par_iter()
        .map(|&base| {
            let mut ext = vec![Complex64::new(0.0, 0.0); len];
            for k in 0..m {
                let v = buf[base + k * stride];
                ext[k + 1] = Complex64::new(v, 0.0);
                ext[len - 1 - k] = Complex64::new(-v, 0.0);
            }
            fft.process(&mut ext);
            (1..=m).map(|k| -0.5 * ext[k].im).collect()
        })
        .collect();
    for (&base, line) in lines.iter().zip(done) {
        for (k, v) in line.into_iter().enumerate() {
            buf[base + k * stride] = v;
        }
    }
}

/// Solves `-Delta_h u = b` with `u = 0` on boundary nodes. `b` holds one
/// value per grid node; boundary entries are ignored.
pub(super) fn solve(grid: &Grid, b: &[f64]) -> Vec<f64> {
    let n = grid.dim();
    let cells = grid.cells();
    let inner: Vec<usize> = cells.iter().map(|c| c - 1).collect();
    let mut out = vec![0.0; grid.node_count()];
    if inner.contains(&0) {
        return out;
    }
    let total: usize = inner.iter().product();
    let mut inner_strides = vec![1usize; n];
    for a in (0..n - 1).rev() {
        inner_strides[a] = inner_strides[a + 1] * inner[a + 1];
    }
    let node_of = |flat: usize| -> usize {
        let mut rem = flat;
        let mut node = 0;
        for a in 0..n {
            let k = rem / inner_strides[a];
            rem %= inner_strides[a];
            node += (k + 1) * grid.node_strides()[a];
        }
        node
    };
    let mut buf: Vec<f64> = (0..total).map(|f| b[node_of(f)]).collect();
    for a in 0..n {
        dst1_axis(&mut buf, &inner, a);
    }
    let eig: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            let h = grid.spacing()[a];
            let m1 = (inner[a] + 1) as f64;
            (1..=inner[a])
                .map(|k| {
                    let s = (std::f64::consts::PI * k as f64 / (2.0 * m1)).sin();
                    4.0 * s * s / (h * h)
                })
                .collect()
        })
        .collect();
    let norm: f64 = inner.iter().map(|&m| 2.0 / (m + 1) as f64).product();
    buf.par_iter_mut().enumerate().for_each(|(flat, v)| {
        let mut rem = flat;
        let mut lambda = 0.0;
        for a in 0..n {
            let k = rem / inner_strides[a];
            rem %= inner_strides[a];
            lambda += eig[a][k];
        }
        *v *= norm / lambda;
    });
    for a in 0..n {
        dst1_axis(&mut buf, &inner, a);
    }
    for (f, v) in buf.into_iter().enumerate() {
        out[node_of(f)] = v;
    }
    out
}

/// `-Delta_h u` at every node (zero on boundary nodes).
pub(super) fn apply_laplacian(grid: &Grid, u: &[f64]) -> Vec<f64> {
    let n = grid.dim();
    let strides = grid.node_strides();
    let h2: Vec<f64> = grid.spacing().iter().map(|h| h * h).collect();
    (0..grid.node_count())
        .into_par_iter()
        .map(|i| {
            if grid.is_boundary_node(i) {
                return 0.0;
            }
            (0..n).map(|a| (2.0 * u[i] - u[i - strides[a]] - u[i + strides[a]]) / h2[a]).sum()
        })
        .collect()
}
