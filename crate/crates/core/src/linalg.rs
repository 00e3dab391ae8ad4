//! Linear solves for `(M − Δₕ) x = b` on the free nodes of a grid, with a
//! constant or a per-node shift `M`.
//!
//! d = 1 is tridiagonal. Above that the operator is separable and the
//! constant-shift solve is exact by fast diagonalization: the 1-D second
//! difference has a cosine basis under ghost reflection and a sine basis
//! with Dirichlet ends.

use std::f64::consts::PI;

use crate::grid::{laplacian_at, GridSpec};

/// One axis of the tensor basis.
#[derive(Debug)]
struct AxisBasis {
    /// unknowns per axis
    k: usize,
    lambda: Vec<f64>,
    /// `fwd[q*k + j]`: node values to mode coefficients
    fwd: Vec<f64>,
    /// `inv[j*k + q]`: back to node values
    inv: Vec<f64>,
}

impl AxisBasis {
    fn new(grid: &GridSpec, dirichlet: bool) -> Self {
        let big_n = grid.nodes_per_axis() - 1;
        let nf = big_n as f64;
        let inv_h2 = (grid.p * grid.p) as f64;
        let (k, offset) = if dirichlet { (big_n - 1, 1) } else { (big_n + 1, 0) };
        let mut lambda = vec![0.0; k];
        let mut fwd = vec![0.0; k * k];
        let mut inv = vec![0.0; k * k];
        for qi in 0..k {
            let q = (qi + offset) as f64;
            let s = (0.5 * PI * q / nf).sin();
            lambda[qi] = 4.0 * s * s * inv_h2;
            for ji in 0..k {
                let j = (ji + offset) as f64;
                let (phi, norm) = if dirichlet {
                    ((PI * q * j / nf).sin(), 2.0 / nf)
                } else {
                    let end = |t: usize| t == 0 || t == big_n;
                    let w = if end(ji) { 0.5 } else { 1.0 };
                    let c = if end(qi) { nf } else { 0.5 * nf };
                    ((PI * q * j / nf).cos(), w / c)
                };
                inv[ji * k + qi] = phi;
                fwd[qi * k + ji] = norm * phi;
            }
        }
        Self { k, lambda, fwd, inv }
    }
}

/// `M − Δₕ` restricted to the free nodes of one grid.
#[derive(Debug)]
pub(crate) struct Operator {
    grid: GridSpec,
    fixed: Vec<bool>,
    basis: Option<AxisBasis>,
    /// grid index of every unknown, in compact order
    nodes: Vec<usize>,
}

impl Operator {
    pub(crate) fn new(grid: &GridSpec) -> Self {
        let dirichlet = grid.bc.is_dirichlet();
        let fixed: Vec<bool> = (0..grid.node_count())
            .map(|i| dirichlet && grid.is_boundary(i))
            .collect();
        let (basis, nodes) = if grid.dim == 1 {
            (None, Vec::new())
        } else {
            let b = AxisBasis::new(grid, dirichlet);
            let nodes = (0..grid.node_count()).filter(|&i| !fixed[i]).collect();
            (Some(b), nodes)
        };
        Self { grid: *grid, fixed, basis, nodes }
    }

    #[cfg(test)]
    fn fixed(&self) -> &[bool] {
        &self.fixed
    }

    /// Solves in place; `x` carries the warm start and, on fixed nodes, the
    /// boundary values. Only free entries of `rhs` are read.
    pub(crate) fn solve_shifted(&self, shift: f64, rhs: &[f64], x: &mut [f64]) {
        match &self.basis {
            None => {
                thomas(&self.grid, |_| shift, &self.fixed, rhs, x);
            }
            Some(b) => {
                let mut res: Vec<f64> = self
                    .nodes
                    .iter()
                    .map(|&g| rhs[g] - (shift * x[g] - laplacian_at(&self.grid, x, g)))
                    .collect();
                self.diagonal_solve(b, shift, &mut res);
                for (c, &g) in self.nodes.iter().enumerate() {
                    x[g] += res[c];
                }
            }
        }
    }

    /// `(diag(shifts) − Δₕ) x = b` from `x`. Returns `false` when the operator
    /// is not positive definite or CG does not converge.
    pub(crate) fn solve_variable(&self, shifts: &[f64], rhs: &[f64], x: &mut [f64]) -> bool {
        match &self.basis {
            None => thomas(&self.grid, |i| shifts[i], &self.fixed, rhs, x),
            Some(b) => {
                let c = shifts.iter().copied().fold(0.05, f64::max);
                pcg(&self.grid, |i| shifts[i], &self.fixed, rhs, x, |r, z| {
                    let mut v: Vec<f64> = self
                        .nodes
                        .iter()
                        .map(|&g| r[g] / self.grid.node_weight(g))
                        .collect();
                    self.diagonal_solve(b, c, &mut v);
                    z.iter_mut().for_each(|e| *e = 0.0);
                    for (ci, &g) in self.nodes.iter().enumerate() {
                        z[g] = v[ci];
                    }
                })
            }
        }
    }

    /// Exact `(shift − Δₕ)⁻¹` on compact unknowns with zero boundary data.
    fn diagonal_solve(&self, b: &AxisBasis, shift: f64, v: &mut [f64]) {
        let dim = self.grid.dim;
        let k = b.k;
        if k == 0 {
            return;
        }
        for axis in 0..dim {
            transform(v, k, dim, axis, &b.fwd);
        }
        for (c, e) in v.iter_mut().enumerate() {
            let mut rest = c;
            let mut denom = shift;
            for _ in 0..dim {
                denom += b.lambda[rest % k];
                rest /= k;
            }
            *e /= denom;
        }
        for axis in 0..dim {
            transform(v, k, dim, axis, &b.inv);
        }
    }
}

/// Multiplies every line along `axis` by the `k × k` matrix `mat`.
fn transform(v: &mut [f64], k: usize, dim: usize, axis: usize, mat: &[f64]) {
    let stride = k.pow((dim - 1 - axis) as u32);
    let outer = k.pow(axis as u32);
    let mut line = vec![0.0; k];
    for o in 0..outer {
        for i in 0..stride {
            let base = o * k * stride + i;
            for (j, l) in line.iter_mut().enumerate() {
                *l = v[base + j * stride];
            }
            for r in 0..k {
                let row = &mat[r * k..(r + 1) * k];
                let mut acc = 0.0;
                for j in 0..k {
                    acc += row[j] * line[j];
                }
                v[base + r * stride] = acc;
            }
        }
    }
}

/// Tridiagonal solve with diagonal `diag(i) + 2/h²`; `false` on a
/// nonpositive pivot, i.e. an indefinite operator.
fn thomas(
    grid: &GridSpec,
    shift: impl Fn(usize) -> f64,
    fixed: &[bool],
    rhs: &[f64],
    x: &mut [f64],
) -> bool {
    let m = x.len();
    let inv_h2 = (grid.p * grid.p) as f64;
    let dirichlet = fixed[0];
    // rows first..=last are unknown
    let (first, last) = if dirichlet { (1, m - 2) } else { (0, m - 1) };
    if first > last {
        return true;
    }
    let len = last - first + 1;
    let diag = |k: usize| shift(first + k) + 2.0 * inv_h2;
    let mut sub = vec![-inv_h2; len];
    let mut sup = vec![-inv_h2; len];
    let mut d: Vec<f64> = rhs[first..=last].to_vec();
    if dirichlet {
        d[0] += inv_h2 * x[0];
        d[len - 1] += inv_h2 * x[m - 1];
    } else if len > 1 {
        // ghost reflection doubles the inward coupling on the end rows
        sup[0] = -2.0 * inv_h2;
        sub[len - 1] = -2.0 * inv_h2;
    }
    let mut c = vec![0.0; len];
    let d0 = diag(0);
    if !(d0 > 0.0) {
        return false;
    }
    c[0] = sup[0] / d0;
    d[0] /= d0;
    for k in 1..len {
        let denom = diag(k) - sub[k] * c[k - 1];
        if !(denom > 0.0) {
            return false;
        }
        c[k] = sup[k] / denom;
        d[k] = (d[k] - sub[k] * d[k - 1]) / denom;
    }
    for k in (0..len - 1).rev() {
        d[k] -= c[k] * d[k + 1];
    }
    x[first..=last].copy_from_slice(&d);
    true
}

/// Applies `ωᵢ (Mᵢ xᵢ − (Δₕ x)ᵢ)` on free nodes, zero on fixed ones. The
/// trapezoid weights make the operator symmetric under ghost reflection.
fn apply(
    grid: &GridSpec,
    shift: &impl Fn(usize) -> f64,
    fixed: &[bool],
    weights: &[f64],
    x: &[f64],
    out: &mut [f64],
) {
    for i in 0..x.len() {
        out[i] = if fixed[i] {
            0.0
        } else {
            weights[i] * (shift(i) * x[i] - laplacian_at(grid, x, i))
        };
    }
}

const PCG_TOL: f64 = 1e-12;

fn pcg(
    grid: &GridSpec,
    shift: impl Fn(usize) -> f64,
    fixed: &[bool],
    rhs: &[f64],
    x: &mut [f64],
    precondition: impl Fn(&[f64], &mut [f64]),
) -> bool {
    let m = x.len();
    let weights: Vec<f64> = (0..m).map(|i| grid.node_weight(i)).collect();

    let mut ax = vec![0.0; m];
    apply(grid, &shift, fixed, &weights, x, &mut ax);
    let mut r: Vec<f64> = (0..m)
        .map(|i| {
            if fixed[i] {
                0.0
            } else {
                weights[i] * rhs[i] - ax[i]
            }
        })
        .collect();
    let unweighted_sup =
        |r: &[f64]| (0..m).fold(0.0f64, |acc, i| acc.max((r[i] / weights[i]).abs()));
    if unweighted_sup(&r) <= PCG_TOL {
        return true;
    }
    let mut z = vec![0.0; m];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; m];
    for _ in 0..m.min(500) {
        apply(grid, &shift, fixed, &weights, &p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return false;
        }
        let alpha = rz / pap;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if unweighted_sup(&r) <= PCG_TOL {
            return true;
        }
        precondition(&r, &mut z);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BcKind;

    fn check(grid: GridSpec) {
        let m = grid.node_count();
        let op = Operator::new(&grid);
        let fixed = op.fixed();
        let shift = 0.7;
        // manufactured solution
        let exact: Vec<f64> = (0..m)
            .map(|i| {
                let x = grid.node_coord(i);
                (0.3 * x[0]).sin() + 0.2 * x[1] * x[1] - 0.1 * x[2]
            })
            .collect();
        let rhs: Vec<f64> = (0..m)
            .map(|i| shift * exact[i] - laplacian_at(&grid, &exact, i))
            .collect();
        let mut x: Vec<f64> = (0..m)
            .map(|i| if fixed[i] { exact[i] } else { 0.0 })
            .collect();
        op.solve_shifted(shift, &rhs, &mut x);
        let err = x
            .iter()
            .zip(&exact)
            .fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        assert!(err < 1e-10, "{grid:?}: {err}");
    }

    #[test]
    fn solves_manufactured_problems() {
        for dim in 1..=3 {
            for bc in [BcKind::Neumann, BcKind::DirichletTrace] {
                check(GridSpec::new(dim, 4, 2, bc, 0.0).unwrap());
                check(GridSpec::new(dim, 3, 3, bc, 0.0).unwrap());
            }
        }
        check(GridSpec::new(1, 1, 2, BcKind::DirichletTrace, 0.0).unwrap());
    }

    #[test]
    fn negated_rhs_gives_negated_solution_bitwise() {
        for dim in 1..=3 {
            let grid = GridSpec::new(dim, 4, 2, BcKind::Neumann, 0.0).unwrap();
            let m = grid.node_count();
            let op = Operator::new(&grid);
            let rhs: Vec<f64> = (0..m)
                .map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4)
                .collect();
            let neg: Vec<f64> = rhs.iter().map(|v| -v).collect();
            let mut a = vec![0.1; m];
            let mut b = vec![-0.1; m];
            op.solve_shifted(0.5, &rhs, &mut a);
            op.solve_shifted(0.5, &neg, &mut b);
            for (u, v) in a.iter().zip(&b) {
                assert_eq!(u.to_bits(), (-v).to_bits());
            }
        }
    }

    #[test]
    fn variable_shift_solves_and_detects_indefiniteness() {
        for dim in 1..=3 {
            let grid = GridSpec::new(dim, 4, 2, BcKind::Neumann, 0.0).unwrap();
            let m = grid.node_count();
            let op = Operator::new(&grid);
            // negative on a few nodes but still definite overall
            let shifts: Vec<f64> = (0..m).map(|i| if i % 5 == 0 { -0.2 } else { 0.8 }).collect();
            let exact: Vec<f64> = (0..m).map(|i| (0.37 * i as f64).cos()).collect();
            let rhs: Vec<f64> = (0..m)
                .map(|i| shifts[i] * exact[i] - laplacian_at(&grid, &exact, i))
                .collect();
            let mut x = vec![0.0; m];
            assert!(op.solve_variable(&shifts, &rhs, &mut x));
            let err = x.iter().zip(&exact).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
            assert!(err < 1e-9, "d={dim}: {err}");

            // constant mode with negative shift: the Neumann operator is indefinite
            let mut y = vec![0.0; m];
            assert!(!op.solve_variable(&vec![-1.0; m], &vec![1.0; m], &mut y));
        }
    }
}
