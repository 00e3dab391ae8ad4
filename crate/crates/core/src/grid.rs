//! Nodal discretization of the box and of the energy
//!
//! ```text
//! G₁(v, ω, Λ) = ∫_Λ |∇v|² + W(v) − θ g₁ v  dx
//! ```
//!
//! The box of `n^d` unit cells carries `(np + 1)^d` nodes with spacing
//! `h = 1/p`; every unit cell holds exactly `p^d` quadrature cells. The
//! energy is a sum over quadrature cells: squared forward differences along
//! each cell edge (each edge shared by `2^{d-1}` cells) and corner-averaged
//! `W(v)` and `g v`. Since `g₁` is constant on a quadrature cell and the
//! corner average is the midpoint value of the multilinear interpolant, the
//! field term is exact for that interpolant.
//!
//! The first variation of this sum at node `i` is `-2 ωᵢ hᵈ rᵢ` with
//!
//! ```text
//! rᵢ = (Δₕ v)ᵢ − ½ [W'(vᵢ) − θ ḡᵢ]
//! ```
//!
//! where `Δₕ` is the standard `2d + 1` point Laplacian (ghost reflection on
//! the boundary), `ωᵢ` the product of `½` per boundary axis, and `ḡᵢ` the
//! average of `g` over the quadrature cells touching node `i`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{window_low, FieldRealization, Site};
use crate::potential::PotentialSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcKind {
    /// Boundary nodes fixed at `+bc_value`.
    DirichletPlus,
    /// Boundary nodes fixed at `-bc_value`.
    DirichletMinus,
    /// Boundary nodes fixed at whatever the profile carries there.
    DirichletTrace,
    Neumann,
}

impl BcKind {
    pub fn is_dirichlet(self) -> bool {
        !matches!(self, BcKind::Neumann)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    /// Side of the box in unit cells.
    pub n: usize,
    /// Nodes per unit length.
    pub p: usize,
    pub bc: BcKind,
    /// Magnitude of the Dirichlet value for the plus/minus kinds.
    pub bc_value: f64,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, p: usize, bc: BcKind, bc_value: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!("dim must be 1, 2 or 3, got {dim}")));
        }
        if n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if p < 2 {
            return Err(Error::Config(format!(
                "grid density p must be at least 2, got {p}"
            )));
        }
        if !bc_value.is_finite() {
            return Err(Error::Config("bc_value must be finite".into()));
        }
        Ok(Self {
            dim,
            n,
            p,
            bc,
            bc_value,
        })
    }

    pub fn neumann(dim: usize, n: usize, p: usize) -> Result<Self> {
        Self::new(dim, n, p, BcKind::Neumann, 0.0)
    }

    /// Dirichlet grid with constant boundary value `value`.
    pub fn dirichlet(dim: usize, n: usize, p: usize, value: f64) -> Result<Self> {
        let kind = if value >= 0.0 {
            BcKind::DirichletPlus
        } else {
            BcKind::DirichletMinus
        };
        Self::new(dim, n, p, kind, value.abs())
    }

    pub fn with_bc(&self, bc: BcKind, bc_value: f64) -> Self {
        Self {
            bc,
            bc_value,
            ..*self
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..*self }
    }

    /// Signed Dirichlet value for the constant kinds.
    pub fn boundary_value(&self) -> Option<f64> {
        match self.bc {
            BcKind::DirichletPlus => Some(self.bc_value),
            BcKind::DirichletMinus => Some(-self.bc_value),
            _ => None,
        }
    }

    pub fn h(&self) -> f64 {
        1.0 / self.p as f64
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n * self.p + 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis().pow(self.dim as u32)
    }

    /// Lower corner of the box along every axis.
    pub fn low(&self) -> f64 {
        window_low(self.n) as f64 - 0.5
    }

    /// Box volume `n^d`.
    pub fn volume(&self) -> f64 {
        (self.n as f64).powi(self.dim as i32)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.nodes_per_axis().pow((self.dim - 1 - axis) as u32)
    }

    pub fn multi_index(&self, mut index: usize) -> [usize; 3] {
        let m = self.nodes_per_axis();
        let mut k = [0; 3];
        for j in (0..self.dim).rev() {
            k[j] = index % m;
            index /= m;
        }
        k
    }

    pub fn flat_index(&self, k: &[usize; 3]) -> usize {
        let m = self.nodes_per_axis();
        (0..self.dim).fold(0, |acc, j| acc * m + k[j])
    }

    pub fn node_coord(&self, index: usize) -> [f64; 3] {
        let k = self.multi_index(index);
        let mut x = [0.0; 3];
        for j in 0..self.dim {
            x[j] = self.low() + k[j] as f64 * self.h();
        }
        x
    }

    pub fn is_boundary(&self, index: usize) -> bool {
        let last = self.nodes_per_axis() - 1;
        let k = self.multi_index(index);
        k[..self.dim].iter().any(|&c| c == 0 || c == last)
    }

    /// Trapezoid weight `ωᵢ`: `½` per axis on which the node is extremal.
    pub fn node_weight(&self, index: usize) -> f64 {
        let last = self.nodes_per_axis() - 1;
        let k = self.multi_index(index);
        k[..self.dim]
            .iter()
            .map(|&c| if c == 0 || c == last { 0.5 } else { 1.0 })
            .product()
    }

    /// Node indices whose values the solver may change.
    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&i| !self.bc.is_dirichlet() || !self.is_boundary(i))
            .collect()
    }

    /// Local lattice site owning quadrature cell `q` (per-axis indices).
    fn site_of_qcell(&self, q: &[usize; 3]) -> Site {
        let lo = window_low(self.n);
        let mut s = [0; 3];
        for j in 0..self.dim {
            s[j] = lo + (q[j] / self.p) as i64;
        }
        s
    }

    pub(crate) fn check_field(&self, field: &FieldRealization) -> Result<()> {
        if field.dim() != self.dim || field.n() != self.n {
            return Err(Error::Config(format!(
                "grid is d={} n={} but field is d={} n={}",
                self.dim,
                self.n,
                field.dim(),
                field.n()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    SolverOutput,
    Truncated,
    Blended,
}

/// Grid function sampled at the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteProfile {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl DiscreteProfile {
    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.node_count()],
            provenance: Provenance::Initial,
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count())
            .map(|i| f(&grid.node_coord(i)[..grid.dim]))
            .collect();
        Self {
            grid,
            values,
            provenance: Provenance::Initial,
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Config(format!(
                "profile has {} values, grid has {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("profile values must be finite".into()));
        }
        Ok(Self {
            grid,
            values,
            provenance: Provenance::Initial,
        })
    }

    /// Overwrites boundary nodes with the grid's constant Dirichlet value.
    pub fn with_boundary_value(mut self) -> Self {
        if let Some(b) = self.grid.boundary_value() {
            for i in 0..self.values.len() {
                if self.grid.is_boundary(i) {
                    self.values[i] = b;
                }
            }
        }
        self
    }

    /// Checks the constant Dirichlet value holds exactly on the boundary.
    pub fn respects_boundary(&self) -> bool {
        match self.grid.boundary_value() {
            Some(b) => (0..self.values.len())
                .filter(|&i| self.grid.is_boundary(i))
                .all(|i| self.values[i] == b),
            None => true,
        }
    }

    pub fn linfty(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |Δv|/h` over all grid edges.
    pub fn lipschitz_seminorm(&self) -> f64 {
        let g = &self.grid;
        let m = g.nodes_per_axis();
        let mut best: f64 = 0.0;
        for i in 0..self.values.len() {
            let k = g.multi_index(i);
            for a in 0..g.dim {
                if k[a] + 1 < m {
                    let d = (self.values[i + g.stride(a)] - self.values[i]).abs();
                    best = best.max(d);
                }
            }
        }
        best / g.h()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
            provenance: self.provenance,
        }
    }

    /// Node-wise maximum of `self - other`.
    pub fn max_excess_over(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.grid.dim).map(|j| format!("x{j}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let x = self.grid.node_coord(i);
            let mut row: Vec<String> = x[..self.grid.dim].iter().map(|c| format!("{c}")).collect();
            row.push(format!("{v:e}"));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Box of quadrature cells `[lo, hi)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    lo: [usize; 3],
    hi: [usize; 3],
}

impl Region {
    pub fn whole(grid: &GridSpec) -> Self {
        let m = grid.n * grid.p;
        let mut hi = [1; 3];
        hi[..grid.dim].iter_mut().for_each(|c| *c = m);
        Self { lo: [0; 3], hi }
    }

    /// The concentric sub-box of side `inner` unit cells.
    pub fn cube(grid: &GridSpec, inner: usize) -> Result<Self> {
        if inner == 0 || inner > grid.n || (grid.n - inner) % 2 != 0 {
            return Err(Error::Domain(format!(
                "no concentric box of side {inner} inside side {}",
                grid.n
            )));
        }
        let off = (grid.n - inner) / 2 * grid.p;
        let mut r = Self::whole(grid);
        for j in 0..grid.dim {
            r.lo[j] = off;
            r.hi[j] = off + inner * grid.p;
        }
        Ok(r)
    }

    /// The unit cell `Q₁(site)`.
    pub fn cell(grid: &GridSpec, site: &Site) -> Result<Self> {
        let lo_site = window_low(grid.n);
        let mut r = Self::whole(grid);
        for j in 0..grid.dim {
            let c = site[j] - lo_site;
            if c < 0 || c >= grid.n as i64 {
                return Err(Error::Domain(format!(
                    "cell {:?} not inside a box of side {}",
                    &site[..grid.dim],
                    grid.n
                )));
            }
            r.lo[j] = c as usize * grid.p;
            r.hi[j] = r.lo[j] + grid.p;
        }
        Ok(r)
    }

    fn fits(&self, grid: &GridSpec) -> bool {
        let m = grid.n * grid.p;
        (0..grid.dim).all(|j| self.lo[j] < self.hi[j] && self.hi[j] <= m)
    }

    fn qcells(&self, dim: usize) -> impl Iterator<Item = [usize; 3]> + '_ {
        let counts: Vec<usize> = (0..3)
            .map(|j| if j < dim { self.hi[j] - self.lo[j] } else { 1 })
            .collect();
        let total: usize = counts.iter().product();
        (0..total).map(move |mut t| {
            let mut q = [0; 3];
            for j in (0..3).rev() {
                q[j] = self.lo[j] + t % counts[j];
                t /= counts[j];
            }
            q
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub gradient: f64,
    pub potential: f64,
    pub field: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn new(gradient: f64, potential: f64, field: f64) -> Self {
        Self {
            gradient,
            potential,
            field,
            total: gradient + potential + field,
        }
    }
}

/// Outcome of clamping a profile to `[-t, t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationGap {
    /// `G₁(clamp v) − G₁(v)`.
    pub gap: f64,
    /// `∫_{|v|>t} (C₀⁻¹(t−1) − θ‖g‖∞)(|v| − t)`, nonnegative above the threshold.
    pub bound: f64,
}

/// The random energy for one realization, potential and coupling strength.
#[derive(Debug, Clone, Copy)]
pub struct Functional<'a> {
    pub field: &'a FieldRealization,
    pub potential: &'a PotentialSpec,
    pub theta: f64,
}

impl<'a> Functional<'a> {
    pub fn new(field: &'a FieldRealization, potential: &'a PotentialSpec, theta: f64) -> Self {
        Self {
            field,
            potential,
            theta,
        }
    }

    /// Clamp threshold below which truncation may raise the energy.
    pub fn truncation_threshold(&self) -> f64 {
        self.potential.linfty_bound(self.theta, self.field.gmax())
    }

    fn corners(grid: &GridSpec, q: &[usize; 3]) -> impl Iterator<Item = usize> {
        let grid = *grid;
        let base = grid.flat_index(q);
        let dim = grid.dim;
        (0..1usize << dim).map(move |mask| {
            (0..dim)
                .filter(|j| mask >> j & 1 == 1)
                .fold(base, |acc, j| acc + grid.stride(j))
        })
    }

    pub fn energy(&self, v: &DiscreteProfile, region: Option<&Region>) -> Result<EnergyBreakdown> {
        let grid = &v.grid;
        grid.check_field(self.field)?;
        let whole = Region::whole(grid);
        let region = region.unwrap_or(&whole);
        if !region.fits(grid) {
            return Err(Error::Domain("region does not fit the grid".into()));
        }
        let d = grid.dim;
        let h = grid.h();
        let corner_w = h.powi(d as i32) / (1 << d) as f64;
        let edge_w = h.powi(d as i32 - 2) / (1 << (d - 1)) as f64;
        let wv: Vec<f64> = v.values.iter().map(|&s| self.potential.w(s)).collect();

        let (mut grad, mut pot, mut fld) = (0.0, 0.0, 0.0);
        let mut corner = [0usize; 8];
        for q in region.qcells(d) {
            let g = self.field.value(&grid.site_of_qcell(&q))?;
            for (mask, c) in Self::corners(grid, &q).enumerate() {
                corner[mask] = c;
            }
            let corners = &corner[..1 << d];
            let wsum: f64 = corners.iter().map(|&c| wv[c]).sum();
            let vsum: f64 = corners.iter().map(|&c| v.values[c]).sum();
            pot += corner_w * wsum;
            fld -= self.theta * g * corner_w * vsum;
            for a in 0..d {
                for mask in (0..1usize << d).filter(|m| m >> a & 1 == 0) {
                    let diff = v.values[corners[mask | 1 << a]] - v.values[corners[mask]];
                    grad += edge_w * diff * diff;
                }
            }
        }
        Ok(EnergyBreakdown::new(grad, pot, fld))
    }

    /// `ḡᵢ`: mean of `g` over the quadrature cells touching each node.
    pub fn nodal_field(&self, grid: &GridSpec) -> Result<Vec<f64>> {
        grid.check_field(self.field)?;
        let d = grid.dim;
        let m = grid.nodes_per_axis();
        let mut out = Vec::with_capacity(grid.node_count());
        for i in 0..grid.node_count() {
            let k = grid.multi_index(i);
            let mut sum = 0.0;
            let mut count = 0usize;
            for mask in 0..1usize << d {
                let mut q = [0usize; 3];
                let mut ok = true;
                for j in 0..d {
                    let back = mask >> j & 1 == 1;
                    if back {
                        if k[j] == 0 {
                            ok = false;
                            break;
                        }
                        q[j] = k[j] - 1;
                    } else {
                        if k[j] == m - 1 {
                            ok = false;
                            break;
                        }
                        q[j] = k[j];
                    }
                }
                if ok {
                    sum += self.field.value(&grid.site_of_qcell(&q))?;
                    count += 1;
                }
            }
            out.push(sum / count as f64);
        }
        Ok(out)
    }

    /// Nodal residual `Δₕv − ½[W'(v) − θḡ]`; zero on fixed boundary nodes.
    pub fn residual(&self, v: &DiscreteProfile) -> Result<Vec<f64>> {
        let gbar = self.nodal_field(&v.grid)?;
        Ok(residual_with(
            &v.grid,
            self.potential,
            self.theta,
            &gbar,
            &v.values,
        ))
    }

    /// Sup norm of the residual over the free nodes.
    pub fn el_residual(&self, v: &DiscreteProfile) -> Result<f64> {
        Ok(sup_norm(&self.residual(v)?))
    }

    /// `∂G₁/∂ω(i) = −θ ∫_{Q₁(i)} v` at fixed `v`.
    pub fn field_derivative(&self, v: &DiscreteProfile, site: &Site) -> Result<f64> {
        v.grid.check_field(self.field)?;
        Ok(-self.theta * cell_integral(v, site)?)
    }

    pub fn truncation_gap(&self, v: &DiscreteProfile, t: f64) -> Result<TruncationGap> {
        let threshold = self.truncation_threshold();
        if !(t > threshold) {
            return Err(Error::Precondition(format!(
                "truncation level {t} must exceed 1 + C0 θ ‖g‖∞ = {threshold}"
            )));
        }
        let clamped = truncate(v, t);
        let gap = self.energy(&clamped, None)?.total - self.energy(v, None)?.total;
        let grid = &v.grid;
        let rate = (t - 1.0) / self.potential.c0() - self.theta * self.field.gmax();
        let hd = grid.h().powi(grid.dim as i32);
        let bound = v
            .values
            .iter()
            .enumerate()
            .filter(|(_, x)| x.abs() > t)
            .map(|(i, x)| grid.node_weight(i) * hd * rate * (x.abs() - t))
            .sum();
        Ok(TruncationGap { gap, bound })
    }
}

pub(crate) fn sup_norm(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Discrete Laplacian with ghost reflection at the box faces.
pub(crate) fn laplacian_at(grid: &GridSpec, values: &[f64], i: usize) -> f64 {
    let m = grid.nodes_per_axis();
    let k = grid.multi_index(i);
    let inv_h2 = (grid.p * grid.p) as f64;
    let mut acc = 0.0;
    for a in 0..grid.dim {
        let s = grid.stride(a);
        let lo = if k[a] > 0 {
            values[i - s]
        } else {
            values[i + s]
        };
        let hi = if k[a] + 1 < m {
            values[i + s]
        } else {
            values[i - s]
        };
        acc += lo - 2.0 * values[i] + hi;
    }
    acc * inv_h2
}

pub(crate) fn residual_with(
    grid: &GridSpec,
    potential: &PotentialSpec,
    theta: f64,
    gbar: &[f64],
    values: &[f64],
) -> Vec<f64> {
    let dirichlet = grid.bc.is_dirichlet();
    (0..values.len())
        .map(|i| {
            if dirichlet && grid.is_boundary(i) {
                0.0
            } else {
                laplacian_at(grid, values, i)
                    - 0.5 * (potential.w_prime(values[i]) - theta * gbar[i])
            }
        })
        .collect()
}

/// Trapezoid integral of `v` over a region.
pub fn integral(v: &DiscreteProfile, region: &Region) -> Result<f64> {
    let grid = &v.grid;
    if !region.fits(grid) {
        return Err(Error::Domain("region does not fit the grid".into()));
    }
    let d = grid.dim;
    let corner_w = grid.h().powi(d as i32) / (1 << d) as f64;
    let mut total = 0.0;
    for q in region.qcells(d) {
        let s: f64 = Functional::corners(grid, &q).map(|c| v.values[c]).sum();
        total += corner_w * s;
    }
    Ok(total)
}

/// `∫_{Q₁(site)} v`.
pub fn cell_integral(v: &DiscreteProfile, site: &Site) -> Result<f64> {
    integral(v, &Region::cell(&v.grid, site)?)
}

/// `t ∧ (v ∨ −t)` node-wise.
pub fn truncate(v: &DiscreteProfile, t: f64) -> DiscreteProfile {
    let mut out = v.map(|x| x.clamp(-t, t));
    out.provenance = Provenance::Truncated;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::DistributionSpec;

    fn field(dim: usize, n: usize, seed: u64) -> FieldRealization {
        FieldRealization::sample(dim, n, DistributionSpec::default(), seed).unwrap()
    }

    #[test]
    fn grid_invariants() {
        assert!(matches!(GridSpec::neumann(1, 4, 1), Err(Error::Config(_))));
        let g = GridSpec::neumann(2, 4, 3).unwrap();
        assert_eq!(g.node_count(), 13 * 13);
        assert_eq!(g.low(), -2.5);
        assert_eq!(g.node_coord(g.node_count() - 1)[..2], [1.5, 1.5]);
        let total: f64 = (0..g.node_count()).map(|i| g.node_weight(i)).sum();
        assert!((total * g.h() * g.h() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn well_profile_has_zero_energy() {
        let f = field(1, 4, 1);
        let w = PotentialSpec::default();
        let g = GridSpec::neumann(1, 4, 8).unwrap();
        let e = Functional::new(&f, &w, 0.0)
            .energy(&DiscreteProfile::constant(g, 1.0), None)
            .unwrap();
        assert_eq!(e.total, 0.0);
    }

    #[test]
    fn constant_profile_constant_field() {
        let f = field(1, 4, 1);
        let ones: Vec<Site> = f.sites().collect();
        let mut f1 = f.clone();
        for s in &ones {
            f1 = f1.with_value(s, 1.0).unwrap();
        }
        let w = PotentialSpec::default();
        let g = GridSpec::neumann(1, 4, 8).unwrap();
        let e = Functional::new(&f1, &w, 0.5)
            .energy(&DiscreteProfile::constant(g, 1.0), None)
            .unwrap();
        assert_eq!(e.gradient, 0.0);
        assert_eq!(e.potential, 0.0);
        assert!((e.field + 2.0).abs() < 1e-14);
        assert!((e.total + 2.0).abs() < 1e-14);
    }

    #[test]
    fn breakdown_sums_to_total() {
        let f = field(2, 4, 2);
        let w = PotentialSpec::default();
        let g = GridSpec::neumann(2, 4, 4).unwrap();
        let v = DiscreteProfile::from_fn(g, |x| (x[0] * 0.7).sin() + 0.3 * x[1]);
        let e = Functional::new(&f, &w, 0.3).energy(&v, None).unwrap();
        assert!((e.gradient + e.potential + e.field - e.total).abs() < 1e-13);
    }

    #[test]
    fn regions_partition_the_energy() {
        let f = field(1, 6, 3);
        let w = PotentialSpec::default();
        let g = GridSpec::neumann(1, 6, 4).unwrap();
        let v = DiscreteProfile::from_fn(g, |x| (x[0]).cos());
        let func = Functional::new(&f, &w, 0.4);
        let whole = func.energy(&v, None).unwrap().total;
        let by_cells: f64 = f
            .sites()
            .map(|s| {
                func.energy(&v, Some(&Region::cell(&g, &s).unwrap()))
                    .unwrap()
                    .total
            })
            .sum();
        assert!((whole - by_cells).abs() < 1e-12);
        assert!(Region::cube(&g, 3).is_err());
        assert!(Region::cube(&g, 4).is_ok());
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let f = field(2, 4, 1);
        let w = PotentialSpec::default();
        let g = GridSpec::neumann(1, 4, 4).unwrap();
        let r = Functional::new(&f, &w, 0.1).energy(&DiscreteProfile::constant(g, 0.0), None);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn residual_vanishes_at_wells_and_shifted_constant() {
        let w = PotentialSpec::default();
        let g = GridSpec::neumann(1, 4, 8).unwrap();
        let f = field(1, 4, 1);
        let r = Functional::new(&f, &w, 0.0)
            .el_residual(&DiscreteProfile::constant(g, 1.0))
            .unwrap();
        assert_eq!(r, 0.0);

        let mut plus = f.clone();
        for s in f.sites().collect::<Vec<_>>() {
            plus = plus.with_value(&s, 1.0).unwrap();
        }
        let theta = 0.2;
        let v = DiscreteProfile::constant(g, 1.0 + w.c0() * theta);
        let r = Functional::new(&plus, &w, theta).el_residual(&v).unwrap();
        assert!(r < 1e-15, "{r}");
    }

    #[test]
    fn field_derivative_constant_profile() {
        let f = field(2, 4, 1);
        let w = PotentialSpec::default();
        let g = GridSpec::neumann(2, 4, 2).unwrap();
        let func = Functional::new(&f, &w, 0.7);
        let v = DiscreteProfile::constant(g, 1.0);
        let d = func.field_derivative(&v, &[0, 0, 0]).unwrap();
        assert!((d + 0.7).abs() < 1e-14);
        assert!(matches!(
            func.field_derivative(&v, &[2, 0, 0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn truncation_noop_and_threshold() {
        let f = field(1, 4, 1);
        let w = PotentialSpec::default();
        let g = GridSpec::neumann(1, 4, 4).unwrap();
        let func = Functional::new(&f, &w, 0.5);
        let v = DiscreteProfile::from_fn(g, |x| x[0].sin());
        let t = func.truncation_threshold() + 0.5;
        assert_eq!(truncate(&v, t).values, v.values);
        let gap = func.truncation_gap(&v, t).unwrap();
        assert_eq!(gap.gap, 0.0);
        assert_eq!(gap.bound, 0.0);
        assert!(matches!(
            func.truncation_gap(&v, 1.2),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn spike_truncation_lowers_energy_by_the_bound() {
        let f = field(1, 4, 9);
        let w = PotentialSpec::default();
        let g = GridSpec::neumann(1, 4, 8).unwrap();
        let func = Functional::new(&f, &w, 0.5);
        let t = func.truncation_threshold() + 0.5;
        let v = DiscreteProfile::from_fn(g, |x| 1.0 + 2.0 * t * (-4.0 * x[0] * x[0]).exp());
        let gap = func.truncation_gap(&v, t).unwrap();
        assert!(gap.bound > 0.0);
        assert!(gap.gap < 0.0);
        assert!(gap.gap <= -gap.bound + 1e-12, "{gap:?}");
    }

    #[test]
    fn lipschitz_and_linfty() {
        let g = GridSpec::neumann(1, 2, 4).unwrap();
        let v = DiscreteProfile::from_fn(g, |x| 3.0 * x[0]);
        assert!((v.lipschitz_seminorm() - 3.0).abs() < 1e-12);
        assert!((v.linfty() - 4.5).abs() < 1e-12);
    }
}
