//! Damped Newton minimization of the regularized discrete `p`-Dirichlet
//! energy
//!
//! `J(u) = sum_cells |c| (g_c(u) + eps^2)^{p/2} / p - sum_nodes |dual_i| b_i u_i`
//!
//! where `g_c` averages squared edge differences over the `2^{N-1}` edges of
//! the cell along each axis. At `p = 2` the gradient of `J` is the usual
//! `(2N+1)`-point Laplacian. Newton directions come from matrix-free
//! Jacobi-preconditioned conjugate gradients; steps are backtracked until
//! the Armijo condition holds.

use rayon::prelude::*;

use super::det_sum;
use crate::measure::Grid;

pub(super) struct Energy<'a> {
    grid: &'a Grid,
    p: f64,
    eps2: f64,
    vol: f64,
    /// `1 / (2^{N-1} h_a^2)` per axis.
    weight: Vec<f64>,
    /// Flat offsets of the `2^N` corners relative to the lowest one.
    corner: Vec<usize>,
    /// Flat index of the lowest corner of every cell.
    base: Vec<usize>,
    b: &'a [f64],
    dual: Vec<f64>,
    interior: Vec<bool>,
}

/// Per-cell derivatives of `f(g) = (g + eps^2)^{p/2} / p`.
pub(super) struct CellTerms {
    first: Vec<f64>,
    second: Vec<f64>,
}

impl<'a> Energy<'a> {
    pub(super) fn new(grid: &'a Grid, p: f64, eps: f64, b: &'a [f64]) -> Self {
        let n = grid.dim();
        let strides = grid.node_strides();
        let corner = (0..1usize << n).map(|bits| (0..n).filter(|a| bits >> a & 1 == 1).map(|a| strides[a]).sum()).collect();
        let mut idx = vec![0; n];
        let base = (0..grid.cell_count())
            .map(|c| {
                grid.cell_multi(c, &mut idx);
                grid.node_flat(&idx)
            })
            .collect();
        let half_edges = (1usize << (n - 1)) as f64;
        Energy {
            grid,
            p,
            eps2: eps * eps,
            vol: grid.cell_volume(),
            weight: grid.spacing().iter().map(|h| 1.0 / (half_edges * h * h)).collect(),
            corner,
            base,
            b,
            dual: (0..grid.node_count()).map(|i| grid.dual_volume(i)).collect(),
            interior: (0..grid.node_count()).map(|i| !grid.is_boundary_node(i)).collect(),
        }
    }

    pub(super) fn interior(&self) -> &[bool] {
        &self.interior
    }

    fn cell_g(&self, u: &[f64], c: usize) -> f64 {
        let n = self.grid.dim();
        let b0 = self.base[c];
        let mut g = 0.0;
        for a in 0..n {
            let mut s = 0.0;
            for bits in 0..self.corner.len() {
                if bits >> a & 1 == 0 {
                    let d = u[b0 + self.corner[bits | 1 << a]] - u[b0 + self.corner[bits]];
                    s += d * d;
                }
            }
            g += self.weight[a] * s;
        }
        g
    }

    pub(super) fn energy(&self, u: &[f64]) -> f64 {
        let cells: Vec<f64> =
            (0..self.base.len()).into_par_iter().map(|c| (self.cell_g(u, c) + self.eps2).powf(0.5 * self.p) / self.p).collect();
        let linear: Vec<f64> = (0..u.len()).map(|i| if self.interior[i] { self.dual[i] * self.b[i] * u[i] } else { 0.0 }).collect();
        self.vol * det_sum(&cells) - det_sum(&linear)
    }

    /// `J(u + s d) - J(u)` from per-cell increments, without the
    /// cancellation of subtracting two nearly equal energies.
    pub(super) fn energy_change(&self, u: &[f64], d: &[f64], s: f64) -> f64 {
        let n = self.grid.dim();
        let q = 0.5 * self.p;
        let cells: Vec<f64> = (0..self.base.len())
            .into_par_iter()
            .map(|c| {
                let b0 = self.base[c];
                let (mut g, mut dg) = (0.0, 0.0);
                for a in 0..n {
                    let (mut sg, mut sdg) = (0.0, 0.0);
                    for bits in 0..self.corner.len() {
                        if bits >> a & 1 == 0 {
                            let (hi, lo) = (b0 + self.corner[bits | 1 << a], b0 + self.corner[bits]);
                            let du = u[hi] - u[lo];
                            let dd = s * (d[hi] - d[lo]);
                            sg += du * du;
                            sdg += dd * (2.0 * du + dd);
                        }
                    }
                    g += self.weight[a] * sg;
                    dg += self.weight[a] * sdg;
                }
                let t = g + self.eps2;
                if t == 0.0 {
                    return (t + dg).max(0.0).powf(q) / self.p;
                }
                // t^q ((1 + dg/t)^q - 1)
                t.powf(q) * (q * (dg / t).ln_1p()).exp_m1() / self.p
            })
            .collect();
        let linear: Vec<f64> = (0..u.len()).map(|i| if self.interior[i] { self.dual[i] * self.b[i] * s * d[i] } else { 0.0 }).collect();
        self.vol * det_sum(&cells) - det_sum(&linear)
    }

    pub(super) fn cell_terms(&self, u: &[f64]) -> CellTerms {
        let half_p = 0.5 * self.p;
        let (first, second) = (0..self.base.len())
            .into_par_iter()
            .map(|c| {
                let t = self.cell_g(u, c) + self.eps2;
                (0.5 * t.powf(half_p - 1.0), 0.5 * (half_p - 1.0) * t.powf(half_p - 2.0))
            })
            .unzip();
        CellTerms { first, second }
    }

    /// Calls `f(cell, partner_offsets)` for every cell around node `i`,
    /// where `partner_offsets[a]` is the signed flat step to the node's edge
    /// partner along axis `a` inside that cell.
    fn for_adjacent(&self, i: usize, idx: &mut [usize], mut f: impl FnMut(usize, &[isize])) {
        let n = self.grid.dim();
        let cells = self.grid.cells();
        let strides = self.grid.node_strides();
        let cstrides = self.grid.cell_strides();
        self.grid.node_multi(i, idx);
        let mut step = vec![0isize; n];
        'outer: for bits in 0..1usize << n {
            let mut c = 0;
            for a in 0..n {
                let up = bits >> a & 1 == 1;
                if (up && idx[a] == 0) || (!up && idx[a] == cells[a]) {
                    continue 'outer;
                }
                let ci = if up { idx[a] - 1 } else { idx[a] };
                c += ci * cstrides[a];
                step[a] = if up { -(strides[a] as isize) } else { strides[a] as isize };
            }
            f(c, &step);
        }
    }

    /// `dJ/du` at interior nodes (zero on the boundary).
    pub(super) fn gradient(&self, u: &[f64], t: &CellTerms) -> Vec<f64> {
        let n = self.grid.dim();
        (0..u.len())
            .into_par_iter()
            .map_init(
                || vec![0; n],
                |idx, i| {
                    if !self.interior[i] {
                        return 0.0;
                    }
                    let mut acc = 0.0;
                    self.for_adjacent(i, idx, |c, step| {
                        let mut dg = 0.0;
                        for a in 0..n {
                            dg += 2.0 * self.weight[a] * (u[i] - u[(i as isize + step[a]) as usize]);
                        }
                        acc += t.first[c] * dg;
                    });
                    self.vol * acc - self.dual[i] * self.b[i]
                },
            )
            .collect()
    }

    /// Hessian diagonal at interior nodes (1 on the boundary).
    pub(super) fn diagonal(&self, u: &[f64], t: &CellTerms) -> Vec<f64> {
        let n = self.grid.dim();
        let wsum: f64 = self.weight.iter().map(|w| 2.0 * w).sum();
        (0..u.len())
            .into_par_iter()
            .map_init(
                || vec![0; n],
                |idx, i| {
                    if !self.interior[i] {
                        return 1.0;
                    }
                    let mut acc = 0.0;
                    self.for_adjacent(i, idx, |c, step| {
                        let mut dg = 0.0;
                        for a in 0..n {
                            dg += 2.0 * self.weight[a] * (u[i] - u[(i as isize + step[a]) as usize]);
                        }
                        acc += t.first[c] * wsum + t.second[c] * dg * dg;
                    });
                    self.vol * acc
                },
            )
            .collect()
    }

    /// Hessian-vector product restricted to interior nodes.
    pub(super) fn hess_vec(&self, u: &[f64], t: &CellTerms, v: &[f64]) -> Vec<f64> {
        let n = self.grid.dim();
        // directional derivative of g_c along v
        let dir: Vec<f64> = (0..self.base.len())
            .into_par_iter()
            .map(|c| {
                let b0 = self.base[c];
                let mut s = 0.0;
                for a in 0..n {
                    let mut e = 0.0;
                    for bits in 0..self.corner.len() {
                        if bits >> a & 1 == 0 {
                            let (hi, lo) = (b0 + self.corner[bits | 1 << a], b0 + self.corner[bits]);
                            e += (u[hi] - u[lo]) * (v[hi] - v[lo]);
                        }
                    }
                    s += 2.0 * self.weight[a] * e;
                }
                s
            })
            .collect();
        (0..u.len())
            .into_par_iter()
            .map_init(
                || vec![0; n],
                |idx, i| {
                    if !self.interior[i] {
                        return 0.0;
                    }
                    let mut acc = 0.0;
                    self.for_adjacent(i, idx, |c, step| {
                        let (mut dgu, mut dgv) = (0.0, 0.0);
                        for a in 0..n {
                            let j = (i as isize + step[a]) as usize;
                            dgu += 2.0 * self.weight[a] * (u[i] - u[j]);
                            dgv += 2.0 * self.weight[a] * (v[i] - v[j]);
                        }
                        acc += t.first[c] * dgv + t.second[c] * dir[c] * dgu;
                    });
                    self.vol * acc
                },
            )
            .collect()
    }

    /// `|| grad_i / dual_i ||_2` over interior nodes, the discrete residual
    /// of `-Delta_p u = b`.
    pub(super) fn residual_norm(&self, grad: &[f64]) -> f64 {
        let sq: Vec<f64> =
            grad.iter().zip(&self.dual).zip(&self.interior).map(|((g, d), &int)| if int { (g / d) * (g / d) } else { 0.0 }).collect();
        det_sum(&sq).sqrt()
    }

    pub(super) fn rhs_norm(&self) -> f64 {
        let sq: Vec<f64> = self.b.iter().zip(&self.interior).map(|(b, &int)| if int { b * b } else { 0.0 }).collect();
        det_sum(&sq).sqrt()
    }

    /// `sum_c |c| g_c(u)^{p/2} / p` and `sum_i |dual_i| b_i u_i`, used to scale
    /// an initial guess along its ray.
    pub(super) fn ray_terms(&self, u: &[f64]) -> (f64, f64) {
        let cells: Vec<f64> = (0..self.base.len()).into_par_iter().map(|c| self.cell_g(u, c).powf(0.5 * self.p) / self.p).collect();
        let linear: Vec<f64> = (0..u.len()).map(|i| if self.interior[i] { self.dual[i] * self.b[i] * u[i] } else { 0.0 }).collect();
        (self.vol * det_sum(&cells), det_sum(&linear))
    }
}

pub(super) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    det_sum(&prod)
}

/// Preconditioned CG for `H d = -g`; returns the direction and the number
/// of CG iterations used.
pub(super) fn newton_direction(e: &Energy, u: &[f64], t: &CellTerms, grad: &[f64], rel_tol: f64, max_iter: usize) -> (Vec<f64>, usize) {
    let diag = e.diagonal(u, t);
    let mut x = vec![0.0; u.len()];
    let mut r: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let r0 = dot(&r, &r).sqrt();
    if r0 == 0.0 {
        return (x, 0);
    }
    for it in 1..=max_iter {
        let hp = e.hess_vec(u, t, &p);
        let php = dot(&p, &hp);
        if !(php > 0.0) {
            if it == 1 {
                return (z, it);
            }
            return (x, it);
        }
        let alpha = rz / php;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        if dot(&r, &r).sqrt() <= rel_tol * r0 {
            return (x, it);
        }
        for i in 0..z.len() {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    (x, max_iter)
}
