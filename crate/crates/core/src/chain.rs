//! Exact minimization of the one-dimensional discrete energy over a uniform
//! set of levels.
//!
//! In d = 1 the discrete energy is a chain: nodal terms
//! `h ωₖ (W(vₖ) − θ ḡₖ vₖ)` plus pairwise terms `(vₖ₊₁ − vₖ)² / h`. Dynamic
//! programming over the nodes, with a squared-distance transform for the
//! pairwise minimization, returns a global minimizer among profiles whose
//! free values lie on the level set.

use crate::grid::GridSpec;
use crate::potential::PotentialSpec;

/// Candidate values at one node: either the full level set or one fixed value.
enum Choices<'a> {
    Levels(&'a [f64]),
    Fixed(f64),
}

impl Choices<'_> {
    fn len(&self) -> usize {
        match self {
            Choices::Levels(l) => l.len(),
            Choices::Fixed(_) => 1,
        }
    }

    fn value(&self, j: usize) -> f64 {
        match self {
            Choices::Levels(l) => l[j],
            Choices::Fixed(v) => *v,
        }
    }
}

/// `count` levels evenly spaced on `[−range, range]`, exactly symmetric.
pub(crate) fn levels(range: f64, count: usize) -> Vec<f64> {
    let q = count.max(3) | 1;
    let half = (q - 1) as f64;
    (0..q)
        .map(|j| range * (2.0 * j as f64 - half) / half)
        .collect()
}

/// Lower envelope `out[j] = min_i f[i] + c (j − i)²` with argmins.
fn distance_transform(f: &[f64], c: f64, out: &mut [f64], arg: &mut [u32]) {
    let q = f.len();
    let mut hull: Vec<usize> = Vec::with_capacity(q);
    let mut bounds: Vec<f64> = Vec::with_capacity(q + 1);
    let key = |i: usize| f[i] + c * (i * i) as f64;
    for i in (0..q).filter(|&i| f[i].is_finite()) {
        loop {
            match hull.last() {
                None => {
                    hull.push(i);
                    bounds.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&k) => {
                    let s = (key(i) - key(k)) / (2.0 * c * (i - k) as f64);
                    if s <= *bounds.last().unwrap() {
                        hull.pop();
                        bounds.pop();
                    } else {
                        hull.push(i);
                        bounds.push(s);
                        break;
                    }
                }
            }
        }
    }
    let mut k = 0;
    for j in 0..q {
        while k + 1 < hull.len() && bounds[k + 1] < j as f64 {
            k += 1;
        }
        let i = hull[k];
        let d = j as f64 - i as f64;
        out[j] = f[i] + c * d * d;
        arg[j] = i as u32;
    }
}

/// Global minimizer over the level set. Dirichlet grids pin both end nodes
/// to `grid.bc_value`; Neumann grids leave them free. `gbar` is the nodal
/// field average.
pub(crate) fn chain_minimize(
    grid: &GridSpec,
    potential: &PotentialSpec,
    theta: f64,
    gbar: &[f64],
    lv: &[f64],
) -> Vec<f64> {
    debug_assert_eq!(grid.dim, 1);
    let m = grid.nodes_per_axis();
    let h = grid.h();
    let q = lv.len();
    let spacing = lv[1] - lv[0];
    let c = spacing * spacing / h;

    let choices = |k: usize| match grid.boundary_value() {
        Some(b) if k == 0 || k == m - 1 => Choices::Fixed(b),
        _ => Choices::Levels(lv),
    };
    let nodal = |k: usize, x: f64| h * grid.node_weight(k) * (potential.w(x) - theta * gbar[k] * x);

    let first = choices(0);
    let mut cost: Vec<f64> = (0..first.len()).map(|j| nodal(0, first.value(j))).collect();
    let mut prev = first;
    let mut back: Vec<Vec<u32>> = Vec::with_capacity(m);
    back.push(Vec::new());
    let mut env = vec![0.0; q];
    let mut env_arg = vec![0u32; q];

    for k in 1..m {
        let cur = choices(k);
        let mut next = vec![0.0; cur.len()];
        let mut arg = vec![0u32; cur.len()];
        match (&prev, &cur) {
            (Choices::Levels(_), Choices::Levels(_)) => {
                distance_transform(&cost, c, &mut env, &mut env_arg);
                for j in 0..q {
                    next[j] = env[j] + nodal(k, lv[j]);
                    arg[j] = env_arg[j];
                }
            }
            _ => {
                for j in 0..cur.len() {
                    let x = cur.value(j);
                    let (bi, best) = (0..prev.len())
                        .map(|i| {
                            let d = x - prev.value(i);
                            (i, cost[i] + d * d / h)
                        })
                        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                    next[j] = best + nodal(k, x);
                    arg[j] = bi as u32;
                }
            }
        }
        cost = next;
        back.push(arg);
        prev = cur;
    }

    let mut j = (0..cost.len()).fold(0, |a, b| if cost[b] < cost[a] { b } else { a });
    let mut out = vec![0.0; m];
    for k in (0..m).rev() {
        out[k] = choices(k).value(j);
        if k > 0 {
            j = back[k][j] as usize;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BcKind;

    #[test]
    fn distance_transform_matches_brute_force() {
        let f: Vec<f64> = (0..40)
            .map(|i| {
                if i % 7 == 3 {
                    f64::INFINITY
                } else {
                    ((i * 37) % 11) as f64 * 0.3
                }
            })
            .collect();
        let mut out = vec![0.0; 40];
        let mut arg = vec![0; 40];
        distance_transform(&f, 0.05, &mut out, &mut arg);
        for j in 0..40 {
            let brute = (0..40)
                .map(|i| f[i] + 0.05 * ((j as f64) - i as f64).powi(2))
                .fold(f64::INFINITY, f64::min);
            assert!((out[j] - brute).abs() < 1e-12);
            let i = arg[j] as usize;
            assert!((f[i] + 0.05 * ((j as f64) - i as f64).powi(2) - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn levels_are_symmetric() {
        let l = levels(1.5, 100);
        assert_eq!(l.len() % 2, 1);
        assert_eq!(l[0], -1.5);
        assert_eq!(*l.last().unwrap(), 1.5);
        for j in 0..l.len() {
            assert_eq!(l[j], -l[l.len() - 1 - j]);
        }
    }

    #[test]
    fn brute_force_on_three_nodes() {
        let grid = GridSpec::new(1, 1, 2, BcKind::Neumann, 0.0).unwrap();
        let w = PotentialSpec::default();
        let gbar = [0.7, 0.7, 0.7];
        let lv = levels(1.5, 31);
        let v = chain_minimize(&grid, &w, 0.5, &gbar, &lv);
        let h = grid.h();
        let energy = |v: &[f64]| {
            let mut e = 0.0;
            for k in 0..3 {
                e += h * grid.node_weight(k) * (w.w(v[k]) - 0.5 * gbar[k] * v[k]);
            }
            e + (v[1] - v[0]).powi(2) / h + (v[2] - v[1]).powi(2) / h
        };
        let mut best = f64::INFINITY;
        for &a in &lv {
            for &b in &lv {
                for &c in &lv {
                    best = best.min(energy(&[a, b, c]));
                }
            }
        }
        assert!((energy(&v) - best).abs() < 1e-14);
    }
}
