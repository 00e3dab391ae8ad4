//! Monte Carlo estimators built on the extremal pair: the raw gap `Dₙ`, the
//! conditional gap `F̂ₙ`, the martingale increments `Ŷₙᵢ` (with `Ŵ₀` at the
//! origin), the variance estimators and the finite-n trend checks.
//!
//! Realizations are indexed `0..reps`. With antithetic pairing, indices `2k`
//! and `2k + 1` share the seed `derive_seed(master, [dim, k])` and the odd one
//! is the negated field. Fields for different `n` and `θ` reuse the same seeds,
//! so windows are nested and comparisons across cells use common random
//! numbers. Every per-realization computation is sequential and pure; the
//! drivers parallelize over realizations with rayon and collect in index
//! order, so results do not depend on the worker count.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::field::{derive_seed, DistributionSpec, FieldRealization, Site};
use crate::grid::{cell_integral, integral, DiscreteProfile, GridSpec, Region};
use crate::potential::PotentialSpec;
use crate::solver::{ExtremalPair, Solver, SolverOptions};

const ORIGIN: Site = [0; 3];
const TAG_CONDITION: u64 = 0x636f_6e64;
const TAG_ORIGIN: u64 = 0x6f72_6967;

// ---------------------------------------------------------------- summaries

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    /// Standard error of the mean.
    pub se: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let count = xs.len();
        if count == 0 {
            return Self {
                count,
                mean: f64::NAN,
                sd: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = compensated_sum(xs.iter().copied()) / count as f64;
        let sd = if count > 1 {
            (compensated_sum(xs.iter().map(|x| (x - mean) * (x - mean))) / (count - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        Self {
            count,
            mean,
            sd,
            se: sd / (count as f64).sqrt(),
        }
    }

    /// `|mean| ≤ k·se`, treating a zero SE as requiring an exact zero.
    pub fn within_se_of_zero(&self, k: f64) -> bool {
        self.mean.abs() <= k * self.se
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Precondition(
            "slope fit needs at least two points".into(),
        ));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Verdict of a decreasing-trend test over an ordered list of estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trend {
    /// Every consecutive pair decreases.
    pub strict: bool,
    /// Indices `k` with `mean[k+1] ≥ mean[k]`.
    pub inversions: Vec<usize>,
    /// Strict, or one inversion smaller than its combined SE and an overall
    /// decrease.
    pub pass: bool,
    /// Some consecutive pair is closer than its combined SE.
    pub overlapping: bool,
}

pub fn decreasing_trend(means: &[f64], ses: &[f64]) -> Trend {
    let pairs = means.len().saturating_sub(1);
    let combined = |k: usize| (ses[k] * ses[k] + ses[k + 1] * ses[k + 1]).sqrt();
    let inversions: Vec<usize> = (0..pairs).filter(|&k| means[k + 1] >= means[k]).collect();
    let strict = inversions.is_empty();
    let overall = pairs > 0 && means[pairs] < means[0];
    let pass = strict
        || (inversions.len() == 1
            && overall
            && means[inversions[0] + 1] - means[inversions[0]] < combined(inversions[0]));
    let overlapping = (0..pairs).any(|k| (means[k] - means[k + 1]).abs() < combined(k));
    Trend {
        strict,
        inversions,
        pass,
        overlapping,
    }
}

/// Kolmogorov distance between the empirical law of `xs` and `N(mean, sd²)`.
pub fn ks_normal(xs: &[f64], mean: f64, sd: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Precondition("empty sample".into()));
    }
    if !(sd > 0.0) {
        return Ok(if xs.iter().all(|x| *x == mean) {
            0.0
        } else {
            1.0
        });
    }
    let normal = Normal::new(mean, sd).map_err(|e| Error::Domain(e.to_string()))?;
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let c = normal.cdf(x);
            (c - k as f64 / m).abs().max(((k + 1) as f64 / m - c).abs())
        })
        .fold(0.0, f64::max))
}

// ---------------------------------------------------------------- records

/// Per-realization scalars. The first thirteen columns are the per-cell CSV
/// schema; `gap_integral` and `negated` trail it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatRecord {
    pub seed: u64,
    pub n: usize,
    pub dim: usize,
    pub theta: f64,
    #[serde(rename = "D_n")]
    pub d_n: f64,
    #[serde(rename = "F_hat")]
    pub f_hat: Option<f64>,
    pub m_plus_hat: f64,
    pub m_minus_hat: f64,
    pub e_hat_plus: f64,
    pub e_hat_minus: f64,
    #[serde(rename = "W0_hat")]
    pub w0_hat: Option<f64>,
    pub linfty_max: f64,
    pub lipschitz_seminorm: f64,
    /// `n^{-d} ∫ (v⁺ − v⁻)`.
    pub gap_integral: f64,
    pub negated: bool,
}

pub fn write_records<W: Write>(records: &[StatRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Budgets of the nested estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Nested {
    /// Unit cells added on every side of `Λₙ` before conditioning.
    pub m_extra: usize,
    pub replicas: usize,
}

impl Nested {
    /// `ceil(10 √(2C₀))`.
    pub fn default_margin(potential: &PotentialSpec) -> usize {
        (10.0 * (2.0 * potential.c0()).sqrt()).ceil() as usize
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    fn of(terms: &[f64]) -> Self {
        let s = Summary::of(terms);
        Self {
            mean: s.mean,
            se: s.se,
        }
    }
}

/// Martingale increments of one realization along the lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    /// `Ŷᵢ` in lexicographic site order.
    pub y: Vec<f64>,
    pub sites: Vec<Site>,
    /// `F̂ₙ` from the same replica streams.
    pub f_hat: f64,
    /// Mean gap with every site of `Λₙ` redrawn as well; `Σ Ŷᵢ = F̂ₙ − this`.
    pub fully_redrawn: f64,
}

/// One (site, h) row of the Lemma A2 / Remark R1 check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityRow {
    pub h: f64,
    /// `G₁(v⁺(ω − h e_i)) − G₁(v⁺(ω))`.
    pub delta_energy: f64,
    /// `θ h ∫_{Q₁(i)} v⁺(ω)`.
    pub upper: f64,
    /// `θ h ∫_{Q₁(i)} v⁺(ω − h e_i)`.
    pub lower: f64,
    pub cell_mass: f64,
    pub cell_mass_lowered: f64,
    pub sandwich_holds: bool,
    pub nondecreasing: bool,
}

/// Closed-form field derivative against the re-minimized finite difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub closed_plus: f64,
    pub fd_plus: f64,
    pub closed_minus: f64,
    pub fd_minus: f64,
}

impl DerivativeCheck {
    pub fn max_error(&self) -> f64 {
        (self.closed_plus - self.fd_plus)
            .abs()
            .max((self.closed_minus - self.fd_minus).abs())
    }
}

// ---------------------------------------------------------------- lab

/// Shared setting of an experiment: dimension, grid density, potential,
/// field law and solver options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lab {
    pub dim: usize,
    pub p: usize,
    pub potential: PotentialSpec,
    pub dist: DistributionSpec,
    pub solver: SolverOptions,
}

impl Lab {
    pub fn new(
        dim: usize,
        p: usize,
        potential: PotentialSpec,
        dist: DistributionSpec,
        solver: SolverOptions,
    ) -> Result<Self> {
        GridSpec::neumann(dim, 1, p)?;
        dist.validate()?;
        solver.validate()?;
        Ok(Self {
            dim,
            p,
            potential,
            dist,
            solver,
        })
    }

    /// Defaults: uniform field on `[−1, 1]`, default potential, `p = 8` in
    /// d = 1 and `p = 4` above.
    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(
            dim,
            if dim == 1 { 8 } else { 4 },
            PotentialSpec::default(),
            DistributionSpec::default(),
            SolverOptions::for_dim(dim),
        )
    }

    /// `1 + C₀θ‖g‖∞`.
    pub fn bound(&self, theta: f64) -> f64 {
        self.potential.linfty_bound(theta, self.dist.gmax)
    }

    pub fn grid(&self, n: usize) -> Result<GridSpec> {
        GridSpec::neumann(self.dim, n, self.p)
    }

    pub fn solver<'a>(&'a self, field: &'a FieldRealization, theta: f64) -> Result<Solver<'a>> {
        Solver::new(field, &self.potential, theta, self.solver)
    }

    pub fn seed(&self, master: u64, pair: u64) -> u64 {
        derive_seed(master, &[self.dim as u64, pair])
    }

    /// Field of realization `index`; see the module docs for the pairing.
    pub fn realization(
        &self,
        master: u64,
        n: usize,
        index: usize,
        antithetic: bool,
    ) -> Result<(u64, FieldRealization)> {
        let (pair, negate) = if antithetic {
            (index / 2, index % 2 == 1)
        } else {
            (index, false)
        };
        let seed = self.seed(master, pair as u64);
        let f = FieldRealization::sample(self.dim, n, self.dist, seed)?;
        Ok((seed, if negate { f.negate() } else { f }))
    }

    pub fn pair(&self, field: &FieldRealization, theta: f64) -> Result<ExtremalPair> {
        self.solver(field, theta)?
            .extremal_pair(&self.grid(field.n())?)
    }

    /// `G₁(v⁺) − G₁(v⁻)` on the concentric sub-box of side `inner`, with the
    /// pair solved on the whole window of `field`.
    pub fn gap_on(&self, field: &FieldRealization, theta: f64, inner: usize) -> Result<f64> {
        let s = self.solver(field, theta)?;
        let pair = s.extremal_pair(&self.grid(field.n())?)?;
        let region = Region::cube(&pair.plus.profile.grid, inner)?;
        let plus = s.functional.energy(&pair.plus.profile, Some(&region))?;
        let minus = s.functional.energy(&pair.minus.profile, Some(&region))?;
        Ok(plus.total - minus.total)
    }

    /// Energy added by bending `v⁻` onto the data of `v⁺` across the unit
    /// collar: `G₁(v⁻ + λ(v⁺ − v⁻)) − G₁(v⁻)` with `λ = (1 − dist(x, ∂Λₙ))₊`.
    pub fn blend_cost(&self, field: &FieldRealization, theta: f64) -> Result<f64> {
        let pair = self.pair(field, theta)?;
        self.blend_cost_of(field, theta, &pair)
    }

    /// [`blend_cost`](Self::blend_cost) for an already solved pair.
    pub fn blend_cost_of(
        &self,
        field: &FieldRealization,
        theta: f64,
        pair: &ExtremalPair,
    ) -> Result<f64> {
        let s = self.solver(field, theta)?;
        let (plus, minus) = (&pair.plus.profile, &pair.minus.profile);
        let grid = minus.grid;
        let (lo, hi) = (grid.low(), grid.low() + grid.n as f64);
        let values = (0..grid.node_count())
            .map(|i| {
                let x = grid.node_coord(i);
                let depth = x[..grid.dim]
                    .iter()
                    .map(|&c| (c - lo).min(hi - c))
                    .fold(f64::INFINITY, f64::min);
                let lambda = (1.0 - depth).max(0.0);
                minus.values[i] + lambda * (plus.values[i] - minus.values[i])
            })
            .collect();
        let blended = DiscreteProfile::from_values(grid, values)?;
        Ok(s.functional.energy(&blended, None)?.total - pair.minus.energy.total)
    }

    /// `Dₙ = G₁(v⁺ₙ) − G₁(v⁻ₙ)`.
    pub fn raw_gap(&self, field: &FieldRealization, theta: f64) -> Result<f64> {
        self.gap_on(field, theta, field.n())
    }

    fn annulus(inner: &FieldRealization, outer: &FieldRealization) -> Vec<Site> {
        outer.sites().filter(|s| !inner.contains(s)).collect()
    }

    fn widen(&self, field: &FieldRealization, m_extra: usize) -> Result<FieldRealization> {
        field.with_window(field.n() + 2 * m_extra)
    }

    /// `F̂ₙ`: the field inside `Λₙ` is held fixed, the annulus of width
    /// `m_extra` is redrawn `replicas` times, and the gap on `Λₙ` of the
    /// larger solve is averaged. Each replica uses one field for both
    /// extremals.
    pub fn conditional_gap(
        &self,
        field: &FieldRealization,
        theta: f64,
        nested: Nested,
        aux_seed: u64,
    ) -> Result<Estimate> {
        check_replicas(nested)?;
        let n = field.n();
        if nested.m_extra == 0 {
            let d = self.raw_gap(field, theta)?;
            return Ok(Estimate { mean: d, se: 0.0 });
        }
        let outer = self.widen(field, nested.m_extra)?;
        let ring = Self::annulus(field, &outer);
        let terms = (0..nested.replicas)
            .map(|r| {
                let f = outer.resample_sites(&ring, replica_seed(aux_seed, TAG_CONDITION, r))?;
                self.gap_on(&f, theta, n)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Estimate::of(&terms))
    }

    /// Gap on `Λₙ` with the annulus and every site of `Λₙ` after position
    /// `last` (lexicographic; `None` = all of them) redrawn from replica `r`.
    fn redrawn_gap(
        &self,
        outer: &FieldRealization,
        ring: &[Site],
        order: &[Site],
        keep: Option<usize>,
        theta: f64,
        n: usize,
        aux: u64,
    ) -> Result<f64> {
        let from = keep.map_or(0, |k| k + 1);
        let mut sites: Vec<Site> = ring.to_vec();
        sites.extend_from_slice(&order[from..]);
        self.gap_on(&outer.resample_sites(&sites, aux)?, theta, n)
    }

    /// `Ŵ₀`: the increment at the origin, averaged over replicas of
    /// `D(ω with sites > 0 redrawn) − D(ω with sites ≥ 0 redrawn)`.
    pub fn w0_increment(
        &self,
        field: &FieldRealization,
        theta: f64,
        nested: Nested,
        aux_seed: u64,
    ) -> Result<Estimate> {
        self.increment_at(field, theta, &ORIGIN, nested, aux_seed)
    }

    /// The increment `Ŷᵢ` at one site, with its replica SE.
    pub fn increment_at(
        &self,
        field: &FieldRealization,
        theta: f64,
        site: &Site,
        nested: Nested,
        aux_seed: u64,
    ) -> Result<Estimate> {
        check_replicas(nested)?;
        let n = field.n();
        let i = field.index_of(site)?;
        let outer = self.widen(field, nested.m_extra)?;
        let ring = Self::annulus(field, &outer);
        let order: Vec<Site> = field.sites().collect();
        let terms = (0..nested.replicas)
            .map(|r| {
                let aux = replica_seed(aux_seed, TAG_CONDITION, r);
                let kept = self.redrawn_gap(&outer, &ring, &order, Some(i), theta, n, aux)?;
                let dropped =
                    self.redrawn_gap(&outer, &ring, &order, i.checked_sub(1), theta, n, aux)?;
                Ok(kept - dropped)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Estimate::of(&terms))
    }

    /// All increments `Ŷᵢ` with shared replica streams, so that they
    /// telescope: `Σᵢ Ŷᵢ = F̂ₙ − (mean gap with Λₙ fully redrawn)`.
    pub fn martingale_increments(
        &self,
        field: &FieldRealization,
        theta: f64,
        nested: Nested,
        aux_seed: u64,
    ) -> Result<Increments> {
        check_replicas(nested)?;
        let n = field.n();
        let outer = self.widen(field, nested.m_extra)?;
        let ring = Self::annulus(field, &outer);
        let order: Vec<Site> = field.sites().collect();
        let count = order.len();
        // chain[j] = gap with sites after position j - 1 redrawn; chain[0] is the full redraw
        let mut sums = vec![Vec::with_capacity(nested.replicas); count + 1];
        for r in 0..nested.replicas {
            let aux = replica_seed(aux_seed, TAG_CONDITION, r);
            for (j, slot) in sums.iter_mut().enumerate() {
                let keep = j.checked_sub(1);
                slot.push(self.redrawn_gap(&outer, &ring, &order, keep, theta, n, aux)?);
            }
        }
        let k = nested.replicas as f64;
        let means: Vec<f64> = sums
            .iter()
            .map(|s| compensated_sum(s.iter().copied()) / k)
            .collect();
        let y = (0..count)
            .map(|i| compensated_sum(sums[i + 1].iter().zip(&sums[i]).map(|(a, b)| a - b)) / k)
            .collect();
        Ok(Increments {
            y,
            sites: order,
            f_hat: means[count],
            fully_redrawn: means[0],
        })
    }

    /// Two independent half-sample estimates of `E[Dₙ | ω(0)]`: every site
    /// other than the origin (annulus included) is redrawn. Their product is
    /// unbiased for the square.
    pub fn origin_conditional_halves(
        &self,
        field: &FieldRealization,
        theta: f64,
        nested: Nested,
        aux_seed: u64,
    ) -> Result<(f64, f64)> {
        if nested.replicas < 2 {
            return Err(Error::Precondition(
                "origin conditioning needs at least two replicas".into(),
            ));
        }
        let n = field.n();
        let outer = self.widen(field, nested.m_extra)?;
        let others: Vec<Site> = outer.sites().filter(|s| *s != ORIGIN).collect();
        let terms = (0..nested.replicas)
            .map(|r| {
                let f = outer.resample_sites(&others, replica_seed(aux_seed, TAG_ORIGIN, r))?;
                self.gap_on(&f, theta, n)
            })
            .collect::<Result<Vec<_>>>()?;
        let half = terms.len() / 2;
        let a = compensated_sum(terms[..half].iter().copied()) / half as f64;
        let b = compensated_sum(terms[half..2 * half].iter().copied()) / half as f64;
        Ok((a, b))
    }

    /// Per-realization scalars; `nested` adds `F̂ₙ` and `Ŵ₀`.
    pub fn record(
        &self,
        seed: u64,
        field: &FieldRealization,
        theta: f64,
        nested: Option<Nested>,
    ) -> Result<StatRecord> {
        let pair = self.pair(field, theta)?;
        self.record_from_pair(seed, field, theta, &pair, nested)
    }

    /// [`record`](Self::record) for an already solved pair.
    pub fn record_from_pair(
        &self,
        seed: u64,
        field: &FieldRealization,
        theta: f64,
        pair: &ExtremalPair,
        nested: Option<Nested>,
    ) -> Result<StatRecord> {
        let (plus, minus) = (&pair.plus.profile, &pair.minus.profile);
        let volume = plus.grid.volume();
        let whole = Region::whole(&plus.grid);
        let (f_hat, w0_hat) = match nested {
            Some(nested) => (
                Some(self.conditional_gap(field, theta, nested, seed)?.mean),
                Some(self.w0_increment(field, theta, nested, seed)?.mean),
            ),
            None => (None, None),
        };
        Ok(StatRecord {
            seed,
            n: field.n(),
            dim: field.dim(),
            theta,
            d_n: pair.gap(),
            f_hat,
            m_plus_hat: cell_integral(plus, &ORIGIN)?,
            m_minus_hat: cell_integral(minus, &ORIGIN)?,
            e_hat_plus: pair.plus.energy.total / volume,
            e_hat_minus: pair.minus.energy.total / volume,
            w0_hat,
            linfty_max: plus.linfty().max(minus.linfty()),
            lipschitz_seminorm: plus.lipschitz_seminorm().max(minus.lipschitz_seminorm()),
            gap_integral: (integral(plus, &whole)? - integral(minus, &whole)?) / volume,
            negated: field.is_negated(),
        })
    }

    /// Records for realizations `0..reps` of one `(n, θ)` cell, in index
    /// order.
    pub fn records(
        &self,
        master: u64,
        n: usize,
        theta: f64,
        reps: usize,
        antithetic: bool,
        nested: Option<Nested>,
    ) -> Vec<Result<StatRecord>> {
        (0..reps)
            .into_par_iter()
            .map(|k| {
                let (seed, field) = self.realization(master, n, k, antithetic)?;
                self.record(seed, &field, theta, nested)
            })
            .collect()
    }

    /// Lemma A2 sandwich and cell-mass monotonicity for lowering `ω(i)` by
    /// each `h`.
    pub fn field_monotonicity_check(
        &self,
        field: &FieldRealization,
        theta: f64,
        site: &Site,
        h_list: &[f64],
        tol: f64,
    ) -> Result<Vec<MonotonicityRow>> {
        let grid = self.grid(field.n())?;
        let base = self.solver(field, theta)?.extremal_max(&grid)?;
        let mass = cell_integral(&base.profile, site)?;
        let value = field.value(site)?;
        h_list
            .iter()
            .map(|&h| {
                if !(h >= 0.0) {
                    return Err(Error::Precondition(format!(
                        "h must be nonnegative, got {h}"
                    )));
                }
                let lowered = field.with_value(site, value - h)?;
                let sol = self.solver(&lowered, theta)?.extremal_max(&grid)?;
                let lowered_mass = cell_integral(&sol.profile, site)?;
                let delta = sol.energy.total - base.energy.total;
                let upper = theta * h * mass;
                let lower = theta * h * lowered_mass;
                Ok(MonotonicityRow {
                    h,
                    delta_energy: delta,
                    upper,
                    lower,
                    cell_mass: mass,
                    cell_mass_lowered: lowered_mass,
                    sandwich_holds: delta <= upper + tol && delta >= lower - tol,
                    nondecreasing: lowered_mass <= mass + tol,
                })
            })
            .collect()
    }

    /// `−θ ∫_{Q₁(i)} v±` against the central difference of the re-minimized
    /// extremal energies in `ω(i)`.
    pub fn envelope_derivative(
        &self,
        field: &FieldRealization,
        theta: f64,
        site: &Site,
        step: f64,
    ) -> Result<DerivativeCheck> {
        let grid = self.grid(field.n())?;
        let s = self.solver(field, theta)?;
        let pair = s.extremal_pair(&grid)?;
        let value = field.value(site)?;
        let up = field.with_value(site, value + step)?;
        let down = field.with_value(site, value - step)?;
        let pu = self.solver(&up, theta)?.extremal_pair(&grid)?;
        let pd = self.solver(&down, theta)?.extremal_pair(&grid)?;
        Ok(DerivativeCheck {
            closed_plus: s.functional.field_derivative(&pair.plus.profile, site)?,
            fd_plus: (pu.plus.energy.total - pd.plus.energy.total) / (2.0 * step),
            closed_minus: s.functional.field_derivative(&pair.minus.profile, site)?,
            fd_minus: (pu.minus.energy.total - pd.minus.energy.total) / (2.0 * step),
        })
    }
}

fn replica_seed(aux: u64, tag: u64, r: usize) -> u64 {
    derive_seed(aux, &[tag, r as u64])
}

fn check_replicas(nested: Nested) -> Result<()> {
    if nested.replicas == 0 {
        return Err(Error::Precondition(
            "nested estimators need at least one replica".into(),
        ));
    }
    Ok(())
}

fn unwrap_all<T>(rs: Vec<Result<T>>) -> Result<Vec<T>> {
    rs.into_iter().collect()
}

// ---------------------------------------------------------------- suites

/// Aggregates of one `(dim, n, θ)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellAggregate {
    pub dim: usize,
    pub n: usize,
    pub theta: f64,
    pub d_n: Summary,
    pub abs_d_n: Summary,
    pub f_hat: Option<Summary>,
    pub w0_hat: Option<Summary>,
    pub m_plus: Summary,
    pub m_minus: Summary,
    /// `m̂⁺ + m̂⁻` per realization.
    pub m_sum: Summary,
    pub e_plus: Summary,
    pub e_minus: Summary,
    /// `ê⁺ − ê⁻` per realization.
    pub e_diff: Summary,
    pub gap_integral: Summary,
    pub linfty_max: f64,
    pub lipschitz_max: f64,
    /// `Var(F̂ₙ or Dₙ) / |Λₙ|`.
    pub variance_ratio: f64,
}

impl CellAggregate {
    pub fn from_records(records: &[StatRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Precondition("no records to aggregate".into()))?;
        let col = |f: fn(&StatRecord) -> f64| -> Vec<f64> { records.iter().map(f).collect() };
        let opt = |f: fn(&StatRecord) -> Option<f64>| -> Option<Summary> {
            records
                .iter()
                .map(f)
                .collect::<Option<Vec<f64>>>()
                .map(|v| Summary::of(&v))
        };
        let f_hat = opt(|r| r.f_hat);
        let d_n = Summary::of(&col(|r| r.d_n));
        let volume = (first.n as f64).powi(first.dim as i32);
        let spread = f_hat.map_or(d_n.sd, |s| s.sd);
        Ok(Self {
            dim: first.dim,
            n: first.n,
            theta: first.theta,
            d_n,
            abs_d_n: Summary::of(&col(|r| r.d_n.abs())),
            f_hat,
            w0_hat: opt(|r| r.w0_hat),
            m_plus: Summary::of(&col(|r| r.m_plus_hat)),
            m_minus: Summary::of(&col(|r| r.m_minus_hat)),
            m_sum: Summary::of(&col(|r| r.m_plus_hat + r.m_minus_hat)),
            e_plus: Summary::of(&col(|r| r.e_hat_plus)),
            e_minus: Summary::of(&col(|r| r.e_hat_minus)),
            e_diff: Summary::of(&col(|r| r.e_hat_plus - r.e_hat_minus)),
            gap_integral: Summary::of(&col(|r| r.gap_integral)),
            linfty_max: col(|r| r.linfty_max).into_iter().fold(0.0, f64::max),
            lipschitz_max: col(|r| r.lipschitz_seminorm)
                .into_iter()
                .fold(0.0, f64::max),
            variance_ratio: spread * spread / volume,
        })
    }
}

/// Variance estimators of one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceCell {
    pub n: usize,
    pub theta: f64,
    pub reps: usize,
    /// Mean of `Ŵ₀²`.
    pub b_sq_hat: Summary,
    /// Mean of the unbiased `(E[Dₙ | ω(0)])²` estimates.
    pub b_sq_lower: Summary,
    /// `4θ²(1 + C₀θ‖g‖∞)²`.
    pub b_sq_upper: f64,
    /// `V̂ₙ`; present when all increments were computed.
    pub v_hat: Option<Summary>,
    /// `(a, Ûₙ(a))`; present when all increments were computed.
    pub u_hat: Vec<(f64, Summary)>,
    /// `|Ŵ₀| ≤ 2θ(1 + C₀θ‖g‖∞) + 3·SE` for every realization.
    pub w0_bound_holds: bool,
    pub w0_bound_worst: f64,
}

impl VarianceCell {
    /// `b_sq_upper ≥ b̂² ≥ b_sq_lower − 3·(combined SE)`.
    pub fn sandwich_holds(&self) -> bool {
        let se = (self.b_sq_hat.se.powi(2) + self.b_sq_lower.se.powi(2)).sqrt();
        self.b_sq_hat.mean <= self.b_sq_upper
            && self.b_sq_hat.mean >= self.b_sq_lower.mean - 3.0 * se
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncrementMode {
    /// Only `Ŵ₀`.
    OriginOnly,
    /// Every `Ŷᵢ`, which also gives `V̂ₙ` and `Ûₙ(a)`.
    All,
}

/// Per-realization inputs of a [`VarianceCell`].
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub w0: Estimate,
    /// Product of the two origin-conditioned half means.
    pub lower: f64,
    /// Every `Ŷᵢ`, with [`IncrementMode::All`].
    pub y: Option<Vec<f64>>,
}

impl VarianceCell {
    /// Aggregates rows of one `(n, θ)` cell of a `dim`-dimensional lab.
    pub fn from_rows(
        lab: &Lab,
        n: usize,
        theta: f64,
        rows: &[VarianceRow],
        a_list: &[f64],
    ) -> Self {
        let bound = lab.bound(theta);
        let volume = (n as f64).powi(lab.dim as i32);
        let w0_sq: Vec<f64> = rows.iter().map(|r| r.w0.mean * r.w0.mean).collect();
        let lower: Vec<f64> = rows.iter().map(|r| r.lower).collect();
        let slack = rows
            .iter()
            .map(|r| r.w0.mean.abs() - 2.0 * theta * bound - 3.0 * r.w0.se)
            .fold(f64::NEG_INFINITY, f64::max);
        let all: Option<Vec<&Vec<f64>>> = rows.iter().map(|r| r.y.as_ref()).collect();
        let (v_hat, u_hat) = match all {
            Some(ys) if !ys.is_empty() => {
                let v: Vec<f64> = ys
                    .iter()
                    .map(|y| compensated_sum(y.iter().map(|t| t * t)) / volume)
                    .collect();
                let u = a_list
                    .iter()
                    .map(|&a| {
                        let cut = a * volume.sqrt();
                        let per: Vec<f64> = ys
                            .iter()
                            .map(|y| {
                                compensated_sum(
                                    y.iter().filter(|t| t.abs() >= cut).map(|t| t * t),
                                ) / volume
                            })
                            .collect();
                        (a, Summary::of(&per))
                    })
                    .collect();
                (Some(Summary::of(&v)), u)
            }
            _ => (None, Vec::new()),
        };
        Self {
            n,
            theta,
            reps: rows.len(),
            b_sq_hat: Summary::of(&w0_sq),
            b_sq_lower: Summary::of(&lower),
            b_sq_upper: 4.0 * theta * theta * bound * bound,
            v_hat,
            u_hat,
            w0_bound_holds: slack <= 0.0,
            w0_bound_worst: slack,
        }
    }
}

impl Lab {
    /// `Ŵ₀`, the origin-conditioned product and optionally every increment,
    /// for one realization.
    pub fn variance_row(
        &self,
        field: &FieldRealization,
        theta: f64,
        nested: Nested,
        aux_seed: u64,
        mode: IncrementMode,
    ) -> Result<VarianceRow> {
        let w0 = self.w0_increment(field, theta, nested, aux_seed)?;
        let (a, b) = self.origin_conditional_halves(field, theta, nested, aux_seed)?;
        let y = match mode {
            IncrementMode::All => {
                Some(self.martingale_increments(field, theta, nested, aux_seed)?.y)
            }
            IncrementMode::OriginOnly => None,
        };
        Ok(VarianceRow {
            w0,
            lower: a * b,
            y,
        })
    }

    /// Fills a [`VarianceCell`] per `n`. Realizations are independent (no
    /// antithetic pairing; the squares would not change).
    #[allow(clippy::too_many_arguments)]
    pub fn variance_suite(
        &self,
        master: u64,
        theta: f64,
        n_list: &[usize],
        reps: usize,
        nested: Nested,
        a_list: &[f64],
        mode: IncrementMode,
    ) -> Result<Vec<VarianceCell>> {
        n_list
            .iter()
            .map(|&n| {
                let rows = unwrap_all(
                    (0..reps)
                        .into_par_iter()
                        .map(|k| {
                            let (seed, field) = self.realization(master, n, k, false)?;
                            self.variance_row(&field, theta, nested, seed, mode)
                        })
                        .collect(),
                )?;
                Ok(VarianceCell::from_rows(self, n, theta, &rows, a_list))
            })
            .collect()
    }
}

/// Per-n rows of the uniqueness and energy-density diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub dim: usize,
    pub theta: f64,
    pub cells: Vec<CellAggregate>,
    /// Decreasing trend of the mean gap integral.
    pub gap_trend: Trend,
    /// Decreasing trend of `SD(n^{-d} G₁(v⁺))`.
    pub density_spread_trend: Trend,
    /// `θ = 0`: the gap integral is exactly 2 and carries no information.
    pub degenerate: bool,
}

impl UniquenessReport {
    pub fn magnetization_symmetric(&self) -> bool {
        self.cells
            .iter()
            .all(|c| c.m_sum.mean.abs() <= 3.0 * c.m_sum.se && c.m_plus.mean >= -3.0 * c.m_plus.se)
    }

    pub fn densities_agree(&self) -> bool {
        self.cells.iter().all(|c| c.e_diff.within_se_of_zero(3.0))
    }
}

/// Gap integral trend, magnetizations and energy density per `n`.
pub fn uniqueness_diagnostic(
    lab: &Lab,
    master: u64,
    theta: f64,
    n_list: &[usize],
    reps: usize,
) -> Result<UniquenessReport> {
    let cells = n_list
        .iter()
        .map(|&n| {
            CellAggregate::from_records(&unwrap_all(
                lab.records(master, n, theta, reps, true, None),
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UniquenessReport::from_cells(lab.dim, theta, cells))
}

impl UniquenessReport {
    /// Trend verdicts over cells ordered by increasing `n`.
    pub fn from_cells(dim: usize, theta: f64, cells: Vec<CellAggregate>) -> Self {
        let gm: Vec<f64> = cells.iter().map(|c| c.gap_integral.mean).collect();
        let gs: Vec<f64> = cells.iter().map(|c| c.gap_integral.se).collect();
        let sd: Vec<f64> = cells.iter().map(|c| c.e_plus.sd).collect();
        let zeros = vec![0.0; sd.len()];
        Self {
            dim,
            theta,
            gap_trend: decreasing_trend(&gm, &gs),
            density_spread_trend: decreasing_trend(&sd, &zeros),
            degenerate: theta == 0.0,
            cells,
        }
    }
}

/// Slope of `ln mean|Dₙ|` on `ln n`, with the cells it was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub dim: usize,
    pub theta: f64,
    pub cells: Vec<CellAggregate>,
    pub slope: f64,
    /// `max |Dₙ| / n^{d−1}` per cell.
    pub constant: Vec<f64>,
}

pub fn gap_scaling(
    lab: &Lab,
    master: u64,
    theta: f64,
    n_list: &[usize],
    reps: usize,
) -> Result<ScalingReport> {
    let cells = n_list
        .iter()
        .map(|&n| unwrap_all(lab.records(master, n, theta, reps, true, None)))
        .collect::<Result<Vec<_>>>()?;
    ScalingReport::from_records(lab.dim, theta, &cells)
}

impl ScalingReport {
    /// One record set per `n`, ordered by increasing `n`.
    pub fn from_records(dim: usize, theta: f64, per_n: &[Vec<StatRecord>]) -> Result<Self> {
        let mut cells = Vec::new();
        let mut constant = Vec::new();
        for recs in per_n {
            let cell = CellAggregate::from_records(recs)?;
            let worst = recs.iter().map(|r| r.d_n.abs()).fold(0.0, f64::max);
            constant.push(worst / (cell.n as f64).powi(dim as i32 - 1));
            cells.push(cell);
        }
        let xs: Vec<f64> = cells.iter().map(|c| c.n as f64).collect();
        let ys: Vec<f64> = cells.iter().map(|c| c.abs_d_n.mean).collect();
        Ok(Self {
            dim,
            theta,
            slope: loglog_slope(&xs, &ys)?,
            cells,
            constant,
        })
    }
}

/// Normality and decay diagnostics for `F̂ₙ / √|Λₙ|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltCell {
    pub n: usize,
    pub standardized: Summary,
    pub ks_distance: f64,
    /// `Var(F̂ₙ) / |Λₙ|`.
    pub variance_ratio: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltReport {
    pub theta: f64,
    pub cells: Vec<CltCell>,
    pub variance_trend: Trend,
}

/// Independent realizations (no antithetic pairing, which would force the
/// sample mean to zero).
pub fn clt_check(
    lab: &Lab,
    master: u64,
    theta: f64,
    n_list: &[usize],
    reps: usize,
    nested: Nested,
) -> Result<CltReport> {
    let cells = n_list
        .iter()
        .map(|&n| {
            let fs = unwrap_all(
                (0..reps)
                    .into_par_iter()
                    .map(|k| {
                        let (seed, field) = lab.realization(master, n, k, false)?;
                        lab.conditional_gap(&field, theta, nested, seed)
                            .map(|e| e.mean)
                    })
                    .collect(),
            )?;
            CltCell::from_f_hat(lab.dim, n, &fs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CltReport::from_cells(theta, cells))
}

impl CltCell {
    /// Standardizes `F̂ₙ` samples by `√|Λₙ|`.
    pub fn from_f_hat(dim: usize, n: usize, f_hat: &[f64]) -> Result<Self> {
        let volume = (n as f64).powi(dim as i32);
        let z: Vec<f64> = f_hat.iter().map(|f| f / volume.sqrt()).collect();
        let s = Summary::of(&z);
        Ok(Self {
            n,
            ks_distance: ks_normal(&z, 0.0, s.sd)?,
            variance_ratio: s.sd * s.sd,
            standardized: s,
            samples: z,
        })
    }
}

impl CltReport {
    /// Cells ordered by increasing `n`.
    pub fn from_cells(theta: f64, cells: Vec<CltCell>) -> Self {
        let v: Vec<f64> = cells.iter().map(|c| c.variance_ratio).collect();
        // SE of a sample variance under normality: σ² √(2/(m−1))
        let se: Vec<f64> = cells
            .iter()
            .map(|c| c.variance_ratio * (2.0 / (c.standardized.count.max(2) - 1) as f64).sqrt())
            .collect();
        Self {
            theta,
            variance_trend: decreasing_trend(&v, &se),
            cells,
        }
    }
}
