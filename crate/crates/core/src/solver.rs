//! Minimizers of the discrete energy and the extremal pair `v⁺ₙ, v⁻ₙ`.
//!
//! Every scheme here is the shifted linear-implicit step
//!
//! ```text
//! (M − Δₕ) v_{k+1} = M v_k − ½ [W'(v_k) − θ ḡ]
//! ```
//!
//! which is the semi-implicit gradient flow with time step `τ = 1/(2M)`.
//! When `M ≥ ½ sup W''` on the working range the right-hand side is
//! nondecreasing in `v_k` and `(M − Δₕ)⁻¹` is positive, so the step preserves
//! node-wise order; the same bound keeps the energy non-increasing. Starting
//! from the constant `±(1 + C₀θ‖g‖∞)` with matching Dirichlet data, the
//! iterates are monotone and converge to the largest (smallest) critical point
//! below (above) that constant.
//!
//! Free (non-extremal) flows also try safeguarded Newton steps once the
//! residual is small; a wall sliding through a weakly pinned region is a
//! near-zero Hessian mode that the flow alone resolves very slowly.

use serde::{Deserialize, Serialize};

use crate::chain::{chain_minimize, levels};
use crate::error::{Error, Result};
use crate::field::FieldRealization;
use crate::grid::{
    residual_with, sup_norm, BcKind, DiscreteProfile, EnergyBreakdown, Functional, GridSpec,
    Provenance,
};
use crate::linalg::Operator;
use crate::potential::PotentialSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Step size given as a time step `τ`.
    SemiImplicitFlow,
    /// Step size given as the shift `M`.
    MonotoneIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub scheme: Scheme,
    /// `τ`; `None` picks the largest order-preserving step, `1 / sup W''`.
    pub time_step: Option<f64>,
    /// `M`; `None` picks `½ sup W''` over the working range.
    pub monotone_shift: Option<f64>,
    /// Sup-norm target for the Euler–Lagrange residual.
    pub residual_tol: f64,
    /// Relative energy stagnation `|ΔG| ≤ tol (1 + |G|)`.
    pub energy_tol: f64,
    pub max_iters: usize,
    /// Level count for the exact chain search in d = 1; `0` disables it and
    /// leaves the extremals as pure flow limits.
    pub chain_levels: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            scheme: Scheme::SemiImplicitFlow,
            time_step: None,
            monotone_shift: None,
            residual_tol: 1e-8,
            energy_tol: 1e-15,
            max_iters: 200_000,
            chain_levels: 1201,
        }
    }
}

/// Slack on the energy-decrease and monotonicity assertions (rounding).
const ENERGY_SLACK: f64 = 1e-11;
const MONOTONE_SLACK: f64 = 1e-10;
/// Relative energy margin by which a chain-search result must beat the flow
/// limit to replace it.
const CHOICE_TOL: f64 = 1e-10;
/// Free flows try Newton steps once the residual is below this, and retry
/// after this many flow steps when a Newton step is refused.
const NEWTON_GATE: f64 = 1e-2;
const NEWTON_RETRY: usize = 25;

impl SolverOptions {
    /// Defaults per dimension: `1e-8` residual in d = 1, `1e-6` above.
    pub fn for_dim(dim: usize) -> Self {
        Self {
            residual_tol: if dim == 1 { 1e-8 } else { 1e-6 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.time_step {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!(
                    "solver.time_step must be positive, got {t}"
                )));
            }
        }
        if let Some(m) = self.monotone_shift {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!(
                    "solver.monotone_shift must be positive, got {m}"
                )));
            }
        }
        if !(self.residual_tol > 0.0) || !(self.energy_tol > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if self.chain_levels == 1 || self.chain_levels == 2 {
            return Err(Error::Config(
                "solver.chain_levels must be 0 or at least 3".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("solver.max_iters must be positive".into()));
        }
        Ok(())
    }

    /// `S = 1 + C₀θ‖g‖∞ + ½`, the range on which the shift must dominate.
    pub fn working_range(potential: &PotentialSpec, theta: f64, gmax: f64) -> f64 {
        potential.linfty_bound(theta, gmax) + 0.5
    }

    /// The shift `M` actually used, checked against `½ sup W''`.
    pub fn effective_shift(&self, potential: &PotentialSpec, theta: f64, gmax: f64) -> Result<f64> {
        self.validate()?;
        let range = Self::working_range(potential, theta, gmax);
        let needed = 0.5 * potential.sup_curvature(range);
        let shift = match self.scheme {
            Scheme::SemiImplicitFlow => self.time_step.map(|t| 1.0 / (2.0 * t)),
            Scheme::MonotoneIteration => self.monotone_shift,
        }
        .unwrap_or(needed);
        if shift < needed * (1.0 - 1e-12) {
            return Err(Error::Config(format!(
                "shift M = {shift} is below ½ sup W'' = {needed} on |s| ≤ {range}; the step would not preserve order"
            )));
        }
        Ok(shift)
    }
}

/// A converged profile with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub profile: DiscreteProfile,
    pub energy: EnergyBreakdown,
    pub residual: f64,
    pub iterations: usize,
}

/// Direction in which every step of an extremal flow must move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Monotone {
    Free,
    Decreasing,
    Increasing,
}

/// One record of the per-iteration diagnostic stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub energy: f64,
    pub residual: f64,
}

struct Flow<'a> {
    functional: Functional<'a>,
    grid: GridSpec,
    gbar: Vec<f64>,
    op: Operator,
    shift: f64,
    values: Vec<f64>,
    energy: EnergyBreakdown,
    residual: f64,
    iterations: usize,
}

impl<'a> Flow<'a> {
    fn new(functional: Functional<'a>, init: &DiscreteProfile, shift: f64) -> Result<Self> {
        let grid = init.grid;
        let gbar = functional.nodal_field(&grid)?;
        let energy = functional.energy(init, None)?;
        let residual = sup_norm(&residual_with(
            &grid,
            functional.potential,
            functional.theta,
            &gbar,
            &init.values,
        ));
        Ok(Self {
            functional,
            grid,
            gbar,
            op: Operator::new(&grid),
            shift,
            values: init.values.clone(),
            energy,
            residual,
            iterations: 0,
        })
    }

    fn profile(&self) -> DiscreteProfile {
        DiscreteProfile {
            grid: self.grid,
            values: self.values.clone(),
            provenance: Provenance::SolverOutput,
        }
    }

    /// One step; returns the energy change.
    fn step(&mut self, monotone: Monotone) -> Result<f64> {
        let w = self.functional.potential;
        let theta = self.functional.theta;
        let rhs: Vec<f64> = self
            .values
            .iter()
            .zip(&self.gbar)
            .map(|(&v, &g)| self.shift * v - 0.5 * (w.w_prime(v) - theta * g))
            .collect();
        let mut next = self.values.clone();
        self.op.solve_shifted(self.shift, &rhs, &mut next);
        self.iterations += 1;

        let worst = match monotone {
            Monotone::Free => 0.0,
            Monotone::Decreasing => next
                .iter()
                .zip(&self.values)
                .map(|(a, b)| a - b)
                .fold(0.0, f64::max),
            Monotone::Increasing => next
                .iter()
                .zip(&self.values)
                .map(|(a, b)| b - a)
                .fold(0.0, f64::max),
        };
        if worst > MONOTONE_SLACK {
            return Err(Error::SchemeIntegrity {
                iteration: self.iterations,
                what: format!("extremal flow moved the wrong way by {worst:.3e}"),
            });
        }

        self.values = next;
        let profile = self.profile();
        let energy = self.functional.energy(&profile, None)?;
        let delta = energy.total - self.energy.total;
        if delta > ENERGY_SLACK * (1.0 + self.energy.total.abs()) {
            return Err(Error::SchemeIntegrity {
                iteration: self.iterations,
                what: format!("energy increased by {delta:.3e}"),
            });
        }
        self.energy = energy;
        self.residual = sup_norm(&residual_with(
            &self.grid,
            w,
            theta,
            &self.gbar,
            &self.values,
        ));
        Ok(delta)
    }

    /// Safeguarded Newton step `(½W''(v) − Δₕ) δ = r`. Taken only when CG
    /// sees a positive definite operator and a backtracking search finds
    /// an Armijo decrease (or, at rounding level, a halved residual).
    /// Returns whether the step was taken.
    fn newton(&mut self) -> Result<bool> {
        let w = self.functional.potential;
        let theta = self.functional.theta;
        let r = residual_with(&self.grid, w, theta, &self.gbar, &self.values);
        let shifts: Vec<f64> = self.values.iter().map(|&v| 0.5 * w.w_second(v)).collect();
        let mut dir = vec![0.0; self.values.len()];
        if !self.op.solve_variable(&shifts, &r, &mut dir) {
            return Ok(false);
        }
        let hd = self.grid.h().powi(self.grid.dim as i32);
        let slope = -2.0
            * hd
            * (0..dir.len())
                .map(|i| self.grid.node_weight(i) * r[i] * dir[i])
                .sum::<f64>();
        if !(slope < 0.0) {
            return Ok(false);
        }
        let e0 = self.energy.total;
        let mut alpha = 1.0;
        for _ in 0..4 {
            let values: Vec<f64> = self
                .values
                .iter()
                .zip(&dir)
                .map(|(v, d)| v + alpha * d)
                .collect();
            let profile = DiscreteProfile {
                grid: self.grid,
                values,
                provenance: Provenance::SolverOutput,
            };
            let energy = self.functional.energy(&profile, None)?;
            let residual = sup_norm(&residual_with(
                &self.grid,
                w,
                theta,
                &self.gbar,
                &profile.values,
            ));
            let armijo = energy.total <= e0 + 1e-4 * alpha * slope;
            let rounding = energy.total <= e0 + 1e-14 * (1.0 + e0.abs())
                && residual < 0.5 * self.residual;
            if armijo || rounding {
                self.values = profile.values;
                self.energy = energy;
                self.residual = residual;
                self.iterations += 1;
                return Ok(true);
            }
            alpha *= 0.5;
        }
        Ok(false)
    }

    fn converged(&self, opts: &SolverOptions, delta: f64) -> bool {
        self.residual < opts.residual_tol
            || delta.abs() <= opts.energy_tol * (1.0 + self.energy.total.abs())
    }

    fn run(
        mut self,
        opts: &SolverOptions,
        monotone: Monotone,
        mut log: Option<&mut Vec<IterationLog>>,
    ) -> Result<Solution> {
        let mut newton_at = 0;
        while self.residual >= opts.residual_tol {
            if self.iterations >= opts.max_iters {
                return Err(Error::NonConvergence {
                    iterations: self.iterations,
                    residual: self.residual,
                    last: Box::new(self.profile()),
                });
            }
            if monotone == Monotone::Free
                && self.residual < NEWTON_GATE
                && self.iterations >= newton_at
            {
                if self.newton()? {
                    if let Some(log) = log.as_deref_mut() {
                        log.push(IterationLog {
                            iteration: self.iterations,
                            energy: self.energy.total,
                            residual: self.residual,
                        });
                    }
                    continue;
                }
                newton_at = self.iterations + NEWTON_RETRY;
            }
            let delta = self.step(monotone)?;
            if let Some(log) = log.as_deref_mut() {
                log.push(IterationLog {
                    iteration: self.iterations,
                    energy: self.energy.total,
                    residual: self.residual,
                });
            }
            if self.converged(opts, delta) {
                break;
            }
        }
        Ok(Solution {
            profile: self.profile(),
            energy: self.energy,
            residual: self.residual,
            iterations: self.iterations,
        })
    }
}

/// The extremal pair with its solver metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalPair {
    pub plus: Solution,
    pub minus: Solution,
    pub theta: f64,
    pub field_fingerprint: u64,
}

impl ExtremalPair {
    /// `G₁(v⁺) − G₁(v⁻)` on the whole box.
    pub fn gap(&self) -> f64 {
        self.plus.energy.total - self.minus.energy.total
    }
}

/// Flow-limit energy of an extremal profile against the best of several
/// other starts under the same Dirichlet data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtremalAudit {
    pub flow_energy: f64,
    pub best_energy: f64,
    /// `flow_energy − best_energy`; positive means the flow limit is not the
    /// lowest critical point found.
    pub excess: f64,
}

pub struct Solver<'a> {
    pub functional: Functional<'a>,
    pub opts: SolverOptions,
    shift: f64,
}

impl<'a> Solver<'a> {
    pub fn new(
        field: &'a FieldRealization,
        potential: &'a PotentialSpec,
        theta: f64,
        opts: SolverOptions,
    ) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::Config(format!(
                "theta must be nonnegative, got {theta}"
            )));
        }
        let shift = opts.effective_shift(potential, theta, field.gmax())?;
        Ok(Self {
            functional: Functional::new(field, potential, theta),
            opts,
            shift,
        })
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// `1 + C₀θ‖g‖∞`.
    pub fn bound(&self) -> f64 {
        self.functional.truncation_threshold()
    }

    fn check_init(&self, init: &DiscreteProfile) -> Result<()> {
        init.grid.check_field(self.functional.field)?;
        if !init.respects_boundary() {
            return Err(Error::Precondition(
                "initial profile does not carry the Dirichlet value on the boundary".into(),
            ));
        }
        Ok(())
    }

    /// Runs the flow from `init` until the residual or energy criterion fires.
    pub fn minimize(&self, init: &DiscreteProfile) -> Result<Solution> {
        self.check_init(init)?;
        Flow::new(self.functional, init, self.shift)?.run(&self.opts, Monotone::Free, None)
    }

    /// As [`minimize`](Self::minimize), also returning the iteration log.
    pub fn minimize_logged(&self, init: &DiscreteProfile) -> Result<(Solution, Vec<IterationLog>)> {
        self.check_init(init)?;
        let mut log = Vec::new();
        let sol = Flow::new(self.functional, init, self.shift)?.run(
            &self.opts,
            Monotone::Free,
            Some(&mut log),
        )?;
        Ok((sol, log))
    }

    fn extremal(&self, grid: &GridSpec, sign: f64) -> Result<Solution> {
        let bound = sign * self.bound();
        let g = GridSpec::dirichlet(grid.dim, grid.n, grid.p, bound)?;
        g.check_field(self.functional.field)?;
        let init = DiscreteProfile::constant(g, bound);
        let monotone = if sign > 0.0 {
            Monotone::Decreasing
        } else {
            Monotone::Increasing
        };
        let limit =
            Flow::new(self.functional, &init, self.shift)?.run(&self.opts, monotone, None)?;
        match self.chain_search(&g, sign)? {
            Some(exact)
                if exact.energy.total
                    < limit.energy.total - CHOICE_TOL * (1.0 + limit.energy.total.abs()) =>
            {
                Ok(exact)
            }
            _ => Ok(limit),
        }
    }

    /// Chain search in d = 1 followed by a polishing flow; `None` above
    /// d = 1 or when disabled. `sign = −1` runs the search on the mirrored
    /// problem so that the two extremals are exact mirror images.
    fn chain_search(&self, grid: &GridSpec, sign: f64) -> Result<Option<Solution>> {
        if grid.dim != 1 || self.opts.chain_levels == 0 {
            return Ok(None);
        }
        let gbar: Vec<f64> = self
            .functional
            .nodal_field(grid)?
            .into_iter()
            .map(|g| sign * g)
            .collect();
        let mirrored = match grid.boundary_value() {
            Some(b) => GridSpec::dirichlet(1, grid.n, grid.p, sign * b)?,
            None => *grid,
        };
        let range = self
            .bound()
            .max(grid.boundary_value().map_or(0.0, f64::abs));
        let lv = levels(range, self.opts.chain_levels);
        let u = chain_minimize(
            &mirrored,
            self.functional.potential,
            self.functional.theta,
            &gbar,
            &lv,
        );
        let start = DiscreteProfile::from_values(*grid, u.into_iter().map(|x| sign * x).collect())?;
        Flow::new(self.functional, &start, self.shift)?
            .run(&self.opts, Monotone::Free, None)
            .map(Some)
    }

    /// `v⁺ₙ`: monotone descent from the supersolution `1 + C₀θ‖g‖∞` with that
    /// Dirichlet value. In d = 1 the exact chain search also runs, and its
    /// polished result replaces the flow limit when its energy is strictly
    /// lower, so the returned profile is the maximal minimizer rather than
    /// the maximal critical point.
    pub fn extremal_max(&self, grid: &GridSpec) -> Result<Solution> {
        self.extremal(grid, 1.0)
    }

    /// `v⁻ₙ`, the mirror image of [`extremal_max`](Self::extremal_max).
    pub fn extremal_min(&self, grid: &GridSpec) -> Result<Solution> {
        self.extremal(grid, -1.0)
    }

    pub fn extremal_pair(&self, grid: &GridSpec) -> Result<ExtremalPair> {
        Ok(ExtremalPair {
            plus: self.extremal_max(grid)?,
            minus: self.extremal_min(grid)?,
            theta: self.functional.theta,
            field_fingerprint: self.functional.field.fingerprint(),
        })
    }

    /// Smoothed `sign(ḡ)`: two passes of nearest-neighbour averaging.
    fn smoothed_sign(&self, grid: &GridSpec) -> Result<Vec<f64>> {
        let gbar = self.functional.nodal_field(grid)?;
        let mut s: Vec<f64> = gbar
            .iter()
            .map(|g| if *g >= 0.0 { 1.0 } else { -1.0 })
            .collect();
        let m = grid.nodes_per_axis();
        for _ in 0..2 {
            let prev = s.clone();
            for (i, si) in s.iter_mut().enumerate() {
                let k = grid.multi_index(i);
                let mut sum = prev[i];
                let mut count = 1.0;
                for a in 0..grid.dim {
                    let st = grid.stride(a);
                    if k[a] > 0 {
                        sum += prev[i - st];
                        count += 1.0;
                    }
                    if k[a] + 1 < m {
                        sum += prev[i + st];
                        count += 1.0;
                    }
                }
                *si = sum / count;
            }
        }
        Ok(s)
    }

    /// Start profiles for multi-start searches: `+1, −1, 0, ±sign(ḡ)`
    /// smoothed, with the grid's Dirichlet data imposed.
    pub fn starts(&self, grid: &GridSpec) -> Result<Vec<DiscreteProfile>> {
        let sign = self.smoothed_sign(grid)?;
        let neg: Vec<f64> = sign.iter().map(|v| -v).collect();
        Ok(vec![
            DiscreteProfile::constant(*grid, 1.0),
            DiscreteProfile::constant(*grid, -1.0),
            DiscreteProfile::constant(*grid, 0.0),
            DiscreteProfile::from_values(*grid, sign)?,
            DiscreteProfile::from_values(*grid, neg)?,
        ]
        .into_iter()
        .map(DiscreteProfile::with_boundary_value)
        .collect())
    }

    /// Runs every start to convergence.
    pub fn minimize_each(&self, grid: &GridSpec) -> Result<Vec<Solution>> {
        self.starts(grid)?
            .iter()
            .map(|s| self.minimize(s))
            .collect()
    }

    /// [`minimize_each`](Self::minimize_each) followed by the chain search
    /// result in d = 1.
    pub fn minimize_all(&self, grid: &GridSpec) -> Result<Vec<Solution>> {
        let mut candidates = self.minimize_each(grid)?;
        if grid.bc == BcKind::Neumann || grid.boundary_value().is_some() {
            candidates.extend(self.chain_search(grid, 1.0)?);
        }
        Ok(candidates)
    }

    /// Lowest-energy result of [`minimize_all`](Self::minimize_all).
    pub fn minimize_multistart(&self, grid: &GridSpec) -> Result<Solution> {
        self.best_of(self.minimize_all(grid)?)
    }

    /// Lowest energy; ties within `energy_tol` go to the smaller weighted L²
    /// residual, then to the earlier candidate.
    pub fn best_of(&self, candidates: Vec<Solution>) -> Result<Solution> {
        let mut best: Option<(Solution, f64)> = None;
        for c in candidates {
            let l2 = self.residual_l2(&c.profile)?;
            best = match best {
                None => Some((c, l2)),
                Some((b, bl2)) => {
                    let tol = self.opts.energy_tol * (1.0 + b.energy.total.abs());
                    let better = c.energy.total < b.energy.total - tol
                        || ((c.energy.total - b.energy.total).abs() <= tol && l2 < bl2);
                    if better {
                        Some((c, l2))
                    } else {
                        Some((b, bl2))
                    }
                }
            };
        }
        best.map(|(s, _)| s)
            .ok_or_else(|| Error::Precondition("no candidates".into()))
    }

    fn residual_l2(&self, v: &DiscreteProfile) -> Result<f64> {
        let r = self.functional.residual(v)?;
        let hd = v.grid.h().powi(v.grid.dim as i32);
        Ok(r.iter()
            .enumerate()
            .map(|(i, x)| v.grid.node_weight(i) * hd * x * x)
            .sum::<f64>()
            .sqrt())
    }

    /// Compares the flow limit against minimizers reached from the other
    /// starts with the same Dirichlet value.
    pub fn audit_extremal(&self, limit: &Solution) -> Result<ExtremalAudit> {
        let grid = limit.profile.grid;
        let mut best = limit.energy.total;
        for s in self.starts(&grid)? {
            best = best.min(self.minimize(&s)?.energy.total);
        }
        Ok(ExtremalAudit {
            flow_energy: limit.energy.total,
            best_energy: best,
            excess: limit.energy.total - best,
        })
    }

    /// Minimizers for two ordered boundary traces. Both flows start from the
    /// common supersolution `max(1 + C₀θ‖g‖∞, max trace)` and advance in
    /// lockstep; debug builds assert the order at every step.
    pub fn ordered_bc_solve(
        &self,
        grid: &GridSpec,
        low: &DiscreteProfile,
        high: &DiscreteProfile,
    ) -> Result<(Solution, Solution)> {
        let g = grid.with_bc(BcKind::DirichletTrace, 0.0);
        g.check_field(self.functional.field)?;
        if low.values.len() != g.node_count() || high.values.len() != g.node_count() {
            return Err(Error::Config("trace profiles do not match the grid".into()));
        }
        let boundary: Vec<usize> = (0..g.node_count()).filter(|&i| g.is_boundary(i)).collect();
        if let Some(&i) = boundary.iter().find(|&&i| low.values[i] > high.values[i]) {
            return Err(Error::Precondition(format!(
                "traces not ordered at boundary node {i}: {} > {}",
                low.values[i], high.values[i]
            )));
        }
        let top = boundary
            .iter()
            .map(|&i| high.values[i])
            .fold(self.bound(), f64::max);
        let start = |trace: &DiscreteProfile| {
            let mut v = DiscreteProfile::constant(g, top);
            for &i in &boundary {
                v.values[i] = trace.values[i];
            }
            v
        };
        let mut a = Flow::new(self.functional, &start(low), self.shift)?;
        let mut b = Flow::new(self.functional, &start(high), self.shift)?;
        let mut a_done = a.residual < self.opts.residual_tol;
        let mut b_done = b.residual < self.opts.residual_tol;
        while !(a_done && b_done) {
            if a.iterations.max(b.iterations) >= self.opts.max_iters {
                let worse = if a_done { &b } else { &a };
                return Err(Error::NonConvergence {
                    iterations: worse.iterations,
                    residual: worse.residual,
                    last: Box::new(worse.profile()),
                });
            }
            if !a_done {
                let delta = a.step(Monotone::Free)?;
                a_done = a.converged(&self.opts, delta);
            }
            if !b_done {
                let delta = b.step(Monotone::Free)?;
                b_done = b.converged(&self.opts, delta);
            }
            debug_assert!(
                a.values
                    .iter()
                    .zip(&b.values)
                    .all(|(x, y)| x <= &(y + MONOTONE_SLACK)),
                "ordered flows crossed at iteration {}",
                a.iterations.max(b.iterations)
            );
        }
        let finish = |f: Flow| Solution {
            profile: f.profile(),
            energy: f.energy,
            residual: f.residual,
            iterations: f.iterations,
        };
        Ok((finish(a), finish(b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::DistributionSpec;

    fn setup(dim: usize, n: usize, seed: u64) -> (FieldRealization, PotentialSpec) {
        (
            FieldRealization::sample(dim, n, DistributionSpec::default(), seed).unwrap(),
            PotentialSpec::default(),
        )
    }

    #[test]
    fn options_validation() {
        let w = PotentialSpec::default();
        let bad = SolverOptions {
            time_step: Some(5.0),
            ..Default::default()
        };
        assert!(matches!(
            bad.effective_shift(&w, 0.5, 1.0),
            Err(Error::Config(_))
        ));
        let ok = SolverOptions::default()
            .effective_shift(&w, 0.5, 1.0)
            .unwrap();
        assert!((ok - 0.5).abs() < 1e-12);
        let neg = SolverOptions {
            residual_tol: 0.0,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn basins_at_zero_coupling() {
        let (f, w) = setup(1, 8, 1);
        let s = Solver::new(&f, &w, 0.0, SolverOptions::default()).unwrap();
        let g = GridSpec::neumann(1, 8, 8).unwrap();
        let up = s.minimize(&DiscreteProfile::constant(g, 0.9)).unwrap();
        assert!(up.profile.values.iter().all(|v| (v - 1.0).abs() < 1e-7));
        let down = s.minimize(&DiscreteProfile::constant(g, -0.9)).unwrap();
        assert!(down.profile.values.iter().all(|v| (v + 1.0).abs() < 1e-7));
    }

    #[test]
    fn extremals_at_zero_coupling_are_the_wells() {
        let (f, w) = setup(2, 4, 1);
        let s = Solver::new(&f, &w, 0.0, SolverOptions::for_dim(2)).unwrap();
        let g = GridSpec::neumann(2, 4, 4).unwrap();
        let pair = s.extremal_pair(&g).unwrap();
        assert!(pair
            .plus
            .profile
            .values
            .iter()
            .all(|v| (v - 1.0).abs() < 1e-9));
        assert!(pair
            .minus
            .profile
            .values
            .iter()
            .all(|v| (v + 1.0).abs() < 1e-9));
        assert!(pair.gap().abs() < 1e-12);
    }

    #[test]
    fn uniform_positive_field_gives_shifted_constant() {
        let (f, w) = setup(1, 6, 2);
        let mut plus = f.clone();
        for site in f.sites().collect::<Vec<_>>() {
            plus = plus.with_value(&site, 1.0).unwrap();
        }
        let s = Solver::new(&plus, &w, 0.2, SolverOptions::default()).unwrap();
        let v = s
            .extremal_max(&GridSpec::neumann(1, 6, 8).unwrap())
            .unwrap();
        assert!(v.profile.values.iter().all(|x| (x - 1.2).abs() < 1e-12));
        assert_eq!(v.iterations, 0);
    }

    #[test]
    fn dirichlet_init_must_carry_boundary_value() {
        let (f, w) = setup(1, 4, 1);
        let s = Solver::new(&f, &w, 0.5, SolverOptions::default()).unwrap();
        let g = GridSpec::dirichlet(1, 4, 4, 1.5).unwrap();
        let r = s.minimize(&DiscreteProfile::constant(g, 0.0));
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn non_convergence_carries_last_iterate() {
        let (f, w) = setup(1, 8, 3);
        let opts = SolverOptions {
            max_iters: 2,
            residual_tol: 1e-14,
            energy_tol: 1e-300,
            ..Default::default()
        };
        let s = Solver::new(&f, &w, 0.5, opts).unwrap();
        let g = GridSpec::neumann(1, 8, 8).unwrap();
        match s.minimize(&DiscreteProfile::constant(g, 0.3)) {
            Err(Error::NonConvergence {
                iterations, last, ..
            }) => {
                assert_eq!(iterations, 2);
                assert_eq!(last.values.len(), g.node_count());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn energy_log_is_non_increasing() {
        let (f, w) = setup(2, 4, 5);
        let s = Solver::new(&f, &w, 0.5, SolverOptions::for_dim(2)).unwrap();
        let g = GridSpec::neumann(2, 4, 4).unwrap();
        let init = DiscreteProfile::from_fn(g, |x| (1.3 * x[0]).sin() * (0.7 * x[1]).cos());
        let (sol, log) = s.minimize_logged(&init).unwrap();
        assert!(!log.is_empty());
        for w in log.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-12);
        }
        assert!(sol.residual < 1e-6);
    }

    #[test]
    fn monotone_iteration_matches_flow() {
        let (f, w) = setup(1, 8, 6);
        let g = GridSpec::neumann(1, 8, 8).unwrap();
        let flow = Solver::new(&f, &w, 0.5, SolverOptions::default()).unwrap();
        let mono = Solver::new(
            &f,
            &w,
            0.5,
            SolverOptions {
                scheme: Scheme::MonotoneIteration,
                monotone_shift: Some(2.0),
                ..Default::default()
            },
        )
        .unwrap();
        let a = flow.extremal_max(&g).unwrap();
        let b = mono.extremal_max(&g).unwrap();
        let diff = a
            .profile
            .max_excess_over(&b.profile)
            .max(b.profile.max_excess_over(&a.profile));
        assert!(diff < 1e-7, "{diff}");
    }

    #[test]
    fn unordered_traces_rejected() {
        let (f, w) = setup(1, 4, 1);
        let s = Solver::new(&f, &w, 0.5, SolverOptions::default()).unwrap();
        let g = GridSpec::neumann(1, 4, 4).unwrap();
        let r = s.ordered_bc_solve(
            &g,
            &DiscreteProfile::constant(g, 1.0),
            &DiscreteProfile::constant(g, 0.9),
        );
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn identical_traces_identical_outputs() {
        let (f, w) = setup(1, 6, 4);
        let s = Solver::new(&f, &w, 0.5, SolverOptions::default()).unwrap();
        let g = GridSpec::neumann(1, 6, 4).unwrap();
        let t = DiscreteProfile::constant(g, 0.95);
        let (a, b) = s.ordered_bc_solve(&g, &t, &t).unwrap();
        assert_eq!(a.profile.values, b.profile.values);
    }
}
