//! Experiment suites behind `rfac run`.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use rfac_core::{
    decreasing_trend, derive_seed, loglog_slope, verify_h1, write_records, CellAggregate, CltCell,
    CltReport, DiscreteProfile, Functional, IncrementMode, Lab, ScalingReport, Site, Solver,
    SolverOptions, StatRecord, Summary, UniquenessReport, VarianceCell, VarianceRow,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, Kind};
use crate::error::{CliError, CliResult};
use crate::manifest::{
    render_report, CellEntry, RunManifest, Severity, Verdict, VerdictSummary, AGGREGATE_FILE,
    MANIFEST_FILE, REPORT_FILE,
};

const TAG_ROUGH: u64 = 0x726f_7567;
const TAG_SITE: u64 = 0x7369_7465;
const ORIGIN: Site = [0; 3];
/// Node-wise slack of the ordering checks.
const ORDER_TOL: f64 = 1e-6;
/// Quadrature tolerance of the truncation checks.
const QUADRATURE_TOL: f64 = 1e-8;

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Runs one suite and writes its artifacts under `<output dir>/<kind>/`.
/// The manifest is written last and atomically; an existing one is removed
/// before anything else happens.
pub fn run(config: &ExperimentConfig, kind: Kind, workers: Option<usize>) -> CliResult<RunManifest> {
    config.validate()?;
    let started = now_ms();
    let dir = config.resolved_output_dir().join(kind.name());
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let stale = dir.join(MANIFEST_FILE);
    if stale.exists() {
        std::fs::remove_file(&stale).map_err(|e| CliError::io(&stale, e))?;
    }

    let exec = || -> CliResult<(Run<'_>, usize)> {
        let mut run = Run::new(config, &dir)?;
        run.execute(kind)?;
        Ok((run, rayon::current_num_threads()))
    };
    let (mut run, used) = match workers {
        Some(0) => return Err(CliError::Config("--workers must be at least 1".into())),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| CliError::Runtime(format!("cannot build worker pool: {e}")))?
            .install(exec)?,
        None => exec()?,
    };
    if config.dim >= 3 {
        for v in &mut run.verdicts {
            v.severity = Severity::Advisory;
        }
    }

    let aggregate = if run.aggregates.is_empty() {
        None
    } else {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &run.aggregates {
            w.serialize(row)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        write_file(&dir.join(AGGREGATE_FILE), &bytes)?;
        Some(AGGREGATE_FILE.to_string())
    };
    let report = render_report(kind, config.master_seed, &run.verdicts);
    write_file(&dir.join(REPORT_FILE), report.as_bytes())?;

    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        kind,
        master_seed: config.master_seed,
        workers: used,
        config: config.clone(),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        summary: VerdictSummary::of(&run.verdicts),
        cells: run.cells,
        aggregate_csv: aggregate,
        tables: run.tables,
        report: REPORT_FILE.to_string(),
        verdicts: run.verdicts,
    };
    manifest.write_atomic(&dir)?;
    Ok(manifest)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// A row of `aggregate.csv`.
#[derive(Debug, Clone, Serialize)]
struct AggregateRow {
    label: String,
    dim: usize,
    n: usize,
    theta: f64,
    reps: usize,
    failures: usize,
    #[serde(rename = "mean_D_n")]
    mean_d_n: f64,
    #[serde(rename = "se_D_n")]
    se_d_n: f64,
    #[serde(rename = "mean_abs_D_n")]
    mean_abs_d_n: f64,
    #[serde(rename = "se_abs_D_n")]
    se_abs_d_n: f64,
    #[serde(rename = "mean_F_hat")]
    mean_f_hat: Option<f64>,
    #[serde(rename = "se_F_hat")]
    se_f_hat: Option<f64>,
    #[serde(rename = "mean_W0_hat")]
    mean_w0_hat: Option<f64>,
    #[serde(rename = "se_W0_hat")]
    se_w0_hat: Option<f64>,
    mean_m_plus: f64,
    se_m_plus: f64,
    mean_m_minus: f64,
    se_m_minus: f64,
    mean_m_sum: f64,
    se_m_sum: f64,
    mean_e_plus: f64,
    se_e_plus: f64,
    sd_e_plus: f64,
    mean_e_minus: f64,
    se_e_minus: f64,
    mean_e_diff: f64,
    se_e_diff: f64,
    mean_gap_integral: f64,
    se_gap_integral: f64,
    linfty_max: f64,
    lipschitz_max: f64,
    variance_ratio: f64,
}

impl AggregateRow {
    fn new(label: &str, failures: usize, c: &CellAggregate) -> Self {
        Self {
            label: label.to_string(),
            dim: c.dim,
            n: c.n,
            theta: c.theta,
            reps: c.d_n.count,
            failures,
            mean_d_n: c.d_n.mean,
            se_d_n: c.d_n.se,
            mean_abs_d_n: c.abs_d_n.mean,
            se_abs_d_n: c.abs_d_n.se,
            mean_f_hat: c.f_hat.map(|s| s.mean),
            se_f_hat: c.f_hat.map(|s| s.se),
            mean_w0_hat: c.w0_hat.map(|s| s.mean),
            se_w0_hat: c.w0_hat.map(|s| s.se),
            mean_m_plus: c.m_plus.mean,
            se_m_plus: c.m_plus.se,
            mean_m_minus: c.m_minus.mean,
            se_m_minus: c.m_minus.se,
            mean_m_sum: c.m_sum.mean,
            se_m_sum: c.m_sum.se,
            mean_e_plus: c.e_plus.mean,
            se_e_plus: c.e_plus.se,
            sd_e_plus: c.e_plus.sd,
            mean_e_minus: c.e_minus.mean,
            se_e_minus: c.e_minus.se,
            mean_e_diff: c.e_diff.mean,
            se_e_diff: c.e_diff.se,
            mean_gap_integral: c.gap_integral.mean,
            se_gap_integral: c.gap_integral.se,
            linfty_max: c.linfty_max,
            lipschitz_max: c.lipschitz_max,
            variance_ratio: c.variance_ratio,
        }
    }
}

#[derive(Serialize)]
struct TruncationRow {
    n: usize,
    theta: f64,
    profile: usize,
    t: f64,
    gap: f64,
    bound: f64,
}

#[derive(Serialize)]
struct OrderingRow {
    n: usize,
    theta: f64,
    index: usize,
    seed: u64,
    candidates: usize,
    /// Excess of the multi-start winner outside `[v⁻, v⁺]`.
    winner_violation: f64,
    /// Excess of any candidate outside the flow limits.
    candidate_violation: f64,
    /// Smallest interior gap for the traces 0.9 < 1.0.
    strict_gap_min: f64,
}

#[derive(Serialize)]
struct MonotonicityCsv {
    n: usize,
    theta: f64,
    index: usize,
    h: f64,
    delta_energy: f64,
    upper: f64,
    lower: f64,
    cell_mass: f64,
    cell_mass_lowered: f64,
    sandwich_holds: bool,
    nondecreasing: bool,
}

#[derive(Serialize)]
struct DerivativeRow {
    n: usize,
    theta: f64,
    index: usize,
    site_x: i64,
    site_y: i64,
    site_z: i64,
    closed_plus: f64,
    fd_plus: f64,
    closed_minus: f64,
    fd_minus: f64,
    error: f64,
}

#[derive(Serialize)]
struct ScalingRow {
    theta: f64,
    n: usize,
    mean_abs_d_n: f64,
    se_abs_d_n: f64,
    constant: f64,
    mean_blend: f64,
    se_blend: f64,
}

#[derive(Serialize)]
struct BlendRow {
    theta: f64,
    n: usize,
    index: usize,
    seed: u64,
    blend_cost: f64,
}

#[derive(Serialize)]
struct VarianceCsv {
    theta: f64,
    n: usize,
    reps: usize,
    b_sq_hat: f64,
    b_sq_hat_se: f64,
    b_sq_lower: f64,
    b_sq_lower_se: f64,
    b_sq_upper: f64,
    v_hat: Option<f64>,
    v_hat_se: Option<f64>,
    w0_bound_worst: f64,
}

#[derive(Serialize)]
struct UHatRow {
    theta: f64,
    n: usize,
    a: f64,
    mean: f64,
    se: f64,
}

#[derive(Serialize)]
struct CltSampleRow {
    theta: f64,
    n: usize,
    index: usize,
    z: f64,
}

#[derive(Serialize)]
struct CltSummaryRow {
    theta: f64,
    n: usize,
    samples: usize,
    mean: f64,
    se: f64,
    sd: f64,
    ks_distance: f64,
    variance_ratio: f64,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    lab: Lab,
    dir: PathBuf,
    cells: Vec<CellEntry>,
    aggregates: Vec<AggregateRow>,
    tables: Vec<String>,
    verdicts: Vec<Verdict>,
}

fn cell_tag(dim: usize, n: usize, theta: f64) -> String {
    format!("d={dim} n={n} θ={theta}")
}

fn is_solver_failure(e: &rfac_core::Error) -> bool {
    matches!(
        e,
        rfac_core::Error::NonConvergence { .. } | rfac_core::Error::SchemeIntegrity { .. }
    )
}

fn worst(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ExperimentConfig, dir: &Path) -> CliResult<Self> {
        Ok(Self {
            cfg,
            lab: cfg.lab()?,
            dir: dir.to_path_buf(),
            cells: Vec::new(),
            aggregates: Vec::new(),
            tables: Vec::new(),
            verdicts: Vec::new(),
        })
    }

    fn execute(&mut self, kind: Kind) -> CliResult<()> {
        match kind {
            Kind::Sanity => self.sanity(),
            Kind::Lemmas => self.lemmas(),
            Kind::Scaling => self.scaling(),
            Kind::Fluctuation => self.fluctuation(),
            Kind::Uniqueness => self.uniqueness(),
            Kind::Clt => self.clt(),
        }
    }

    fn push(&mut self, v: Verdict) {
        self.verdicts.push(v);
    }

    /// Splits per-realization results. Solver failures count against the
    /// budget; past it the cell is aborted and `None` returned. Any other
    /// error ends the run.
    fn tally<T>(
        &mut self,
        label: &str,
        n: usize,
        theta: f64,
        results: Vec<rfac_core::Result<T>>,
    ) -> CliResult<Option<(Vec<T>, usize)>> {
        let requested = results.len();
        let mut ok = Vec::with_capacity(requested);
        let mut failures = 0;
        for r in results {
            match r {
                Ok(t) => ok.push(t),
                Err(e) if is_solver_failure(&e) => failures += 1,
                Err(e) => return Err(e.into()),
            }
        }
        if failures > self.cfg.failure_budget || ok.is_empty() {
            self.cells.push(CellEntry {
                label: label.to_string(),
                dim: self.cfg.dim,
                n,
                theta,
                csv: None,
                requested,
                failures,
                aborted: true,
            });
            self.push(Verdict::hard(
                format!("{label} cell {} completed", cell_tag(self.cfg.dim, n, theta)),
                false,
                Some(failures as f64),
                format!(
                    "{failures} of {requested} realizations failed to converge (budget {}); cell aborted",
                    self.cfg.failure_budget
                ),
            ));
            return Ok(None);
        }
        Ok(Some((ok, failures)))
    }

    fn write_cell(
        &mut self,
        label: &str,
        n: usize,
        theta: f64,
        records: &[StatRecord],
        failures: usize,
    ) -> CliResult<CellAggregate> {
        let rel = format!("cells/{label}_d{}_n{n}_theta{theta}.csv", self.cfg.dim);
        let mut bytes = Vec::new();
        write_records(records, &mut bytes)?;
        write_file(&self.dir.join(&rel), &bytes)?;
        self.cells.push(CellEntry {
            label: label.to_string(),
            dim: self.cfg.dim,
            n,
            theta,
            csv: Some(rel),
            requested: records.len() + failures,
            failures,
            aborted: false,
        });
        let agg = CellAggregate::from_records(records)?;
        self.aggregates.push(AggregateRow::new(label, failures, &agg));
        Ok(agg)
    }

    fn table<S: Serialize>(&mut self, name: &str, rows: &[S]) -> CliResult<()> {
        let rel = format!("tables/{name}.csv");
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        write_file(&self.dir.join(&rel), &bytes)?;
        self.tables.push(rel);
        Ok(())
    }

    /// Antithetic records of one cell, written and aggregated.
    fn antithetic_cell(
        &mut self,
        label: &str,
        n: usize,
        theta: f64,
    ) -> CliResult<Option<(Vec<StatRecord>, CellAggregate)>> {
        let (lab, master, reps) = (self.lab, self.cfg.master_seed, self.cfg.reps);
        let results: Vec<_> = (0..reps)
            .into_par_iter()
            .map(|k| {
                let (seed, field) = lab.realization(master, n, k, true)?;
                lab.record(seed, &field, theta, None)
            })
            .collect();
        let Some((records, failures)) = self.tally(label, n, theta, results)? else {
            return Ok(None);
        };
        let agg = self.write_cell(label, n, theta, &records, failures)?;
        Ok(Some((records, agg)))
    }

    fn antithetic_zero(&mut self, label: &str, n: usize, theta: f64, records: &[StatRecord]) {
        let tag = cell_tag(self.cfg.dim, n, theta);
        if records.len() % 2 == 1 {
            self.push(Verdict::advisory(
                format!("{label} antithetic mean of D_n is exactly 0, {tag}"),
                true,
                None,
                format!("skipped: {} records do not form whole pairs", records.len()),
            ));
            return;
        }
        let d: Vec<f64> = records.iter().map(|r| r.d_n).collect();
        let mean = Summary::of(&d).mean;
        let paired = records.chunks(2).all(|p| p[0].seed == p[1].seed);
        self.push(Verdict::hard(
            format!("{label} antithetic mean of D_n is exactly 0, {tag}"),
            mean == 0.0 && paired,
            Some(mean),
            format!("mean D_n = {mean:e} over {} paired realizations", d.len()),
        ));
    }

    // ------------------------------------------------------------ sanity

    fn sanity(&mut self) -> CliResult<()> {
        let h1 = verify_h1(&self.cfg.potential);
        self.push(Verdict::hard(
            "potential satisfies H1",
            h1.passed(),
            None,
            format!(
                "{} clauses checked, failing: [{}]",
                h1.clauses.len(),
                h1.failures().join(", ")
            ),
        ));
        let (lab, master, reps) = (self.lab, self.cfg.master_seed, self.cfg.reps);
        for &theta in &self.cfg.thetas.clone() {
            let bound = lab.bound(theta);
            for &n in &self.cfg.ns.clone() {
                let tag = cell_tag(lab.dim, n, theta);
                let results: Vec<_> = (0..reps)
                    .into_par_iter()
                    .map(|k| {
                        let (seed, field) = lab.realization(master, n, k, true)?;
                        let pair = lab.pair(&field, theta)?;
                        let rec = lab.record_from_pair(seed, &field, theta, &pair, None)?;
                        let (p, m) = (&pair.plus.profile, &pair.minus.profile);
                        let order = m.max_excess_over(p);
                        let wells = worst(
                            p.values
                                .iter()
                                .map(|v| (v - 1.0).abs())
                                .chain(m.values.iter().map(|v| (v + 1.0).abs())),
                        );
                        let energy = pair
                            .plus
                            .energy
                            .total
                            .abs()
                            .max(pair.minus.energy.total.abs());
                        Ok((rec, order, wells, energy))
                    })
                    .collect();
                let Some((rows, failures)) = self.tally("sanity", n, theta, results)? else {
                    continue;
                };
                let records: Vec<StatRecord> = rows.iter().map(|r| r.0.clone()).collect();
                self.write_cell("sanity", n, theta, &records, failures)?;
                let order = worst(rows.iter().map(|r| r.1));
                self.push(Verdict::hard(
                    format!("extremals ordered v⁻ ≤ v⁺, {tag}"),
                    order <= 1e-8,
                    Some(order),
                    format!("largest excess of v⁻ over v⁺: {order:.3e}"),
                ));
                let linf = worst(records.iter().map(|r| r.linfty_max));
                self.push(Verdict::hard(
                    format!("extremals within 1 + C0 θ ‖g‖∞, {tag}"),
                    linf <= bound + 1e-6,
                    Some(linf),
                    format!("max |v±| = {linf:.6} against bound {bound:.6}"),
                ));
                if theta == 0.0 {
                    let wells = worst(rows.iter().map(|r| r.2));
                    let energy = worst(rows.iter().map(|r| r.3));
                    self.push(Verdict::hard(
                        format!("θ=0 extremals are the wells ±1, {tag}"),
                        wells < 1e-6 && energy < 1e-8,
                        Some(wells),
                        format!("max |v± ∓ 1| = {wells:.3e}, max |G₁(v±)| = {energy:.3e}"),
                    ));
                }
                self.antithetic_zero("sanity", n, theta, &records);
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------ lemmas

    fn lemmas(&mut self) -> CliResult<()> {
        let cfg = self.cfg;
        let lab = self.lab;
        let master = cfg.master_seed;
        let l = &cfg.lemmas;
        let residual_tol = lab.solver.residual_tol;
        let mut truncation = Vec::new();
        let mut ordering = Vec::new();
        let mut monotone = Vec::new();
        let mut derivative = Vec::new();
        for &theta in &cfg.thetas {
            for &n in &cfg.ns {
                let tag = cell_tag(lab.dim, n, theta);
                let grid = lab.grid(n)?;

                // truncation
                let threshold = lab.bound(theta);
                let t = l.truncation_t.unwrap_or(threshold + 0.5);
                let amp = l.rough_amplitude;
                let results: Vec<_> = (0..l.rough_profiles)
                    .into_par_iter()
                    .map(|k| {
                        let (_, field) = lab.realization(master, n, k, false)?;
                        let values = (0..grid.node_count())
                            .map(|i| {
                                let u = derive_seed(master, &[TAG_ROUGH, n as u64, k as u64, i as u64])
                                    >> 11;
                                amp * ((u as f64) / (1u64 << 53) as f64 * 2.0 - 1.0)
                            })
                            .collect();
                        let v = DiscreteProfile::from_values(grid, values)?;
                        let gap = Functional::new(&field, &lab.potential, theta)
                            .truncation_gap(&v, t)?;
                        Ok(TruncationRow {
                            n,
                            theta,
                            profile: k,
                            t,
                            gap: gap.gap,
                            bound: gap.bound,
                        })
                    })
                    .collect();
                if let Some((rows, _)) = self.tally("lemma-a", n, theta, results)? {
                    let rise = worst(rows.iter().map(|r| r.gap));
                    let excess = worst(rows.iter().map(|r| r.gap + r.bound));
                    self.push(Verdict::hard(
                        format!("Lemma A: truncation never raises energy, {tag}"),
                        rise <= QUADRATURE_TOL,
                        Some(rise),
                        format!("t = {t}, {} profiles, largest energy change {rise:.3e}", rows.len()),
                    ));
                    self.push(Verdict::hard(
                        format!("Lemma A: quantitative truncation gap, {tag}"),
                        excess <= QUADRATURE_TOL,
                        Some(excess),
                        format!("largest G(clamp v) − G(v) + bound: {excess:.3e}"),
                    ));
                    truncation.extend(rows);
                }

                // ordering between extremals
                let opts = lab.solver;
                let flow_opts = SolverOptions {
                    chain_levels: 0,
                    ..opts
                };
                let chained = lab.dim == 1 && opts.chain_levels > 0;
                let results: Vec<_> = (0..cfg.reps)
                    .into_par_iter()
                    .map(|k| {
                        let (seed, field) = lab.realization(master, n, k, false)?;
                        let s = lab.solver(&field, theta)?;
                        let pair = s.extremal_pair(&grid)?;
                        let limits = if chained {
                            Solver::new(&field, &lab.potential, theta, flow_opts)?
                                .extremal_pair(&grid)?
                        } else {
                            pair.clone()
                        };
                        let candidates = s.minimize_all(&grid)?;
                        let candidate_violation = worst(candidates.iter().map(|c| {
                            limits
                                .minus
                                .profile
                                .max_excess_over(&c.profile)
                                .max(c.profile.max_excess_over(&limits.plus.profile))
                        }));
                        let count = candidates.len();
                        let best = s.best_of(candidates)?;
                        let winner_violation = pair
                            .minus
                            .profile
                            .max_excess_over(&best.profile)
                            .max(best.profile.max_excess_over(&pair.plus.profile));
                        let (lo, hi) = s.ordered_bc_solve(
                            &grid,
                            &DiscreteProfile::constant(grid, 0.9),
                            &DiscreteProfile::constant(grid, 1.0),
                        )?;
                        let g = lo.profile.grid;
                        let strict_gap_min = (0..g.node_count())
                            .filter(|&i| !g.is_boundary(i))
                            .map(|i| hi.profile.values[i] - lo.profile.values[i])
                            .fold(f64::INFINITY, f64::min);
                        Ok(OrderingRow {
                            n,
                            theta,
                            index: k,
                            seed,
                            candidates: count,
                            winner_violation,
                            candidate_violation,
                            strict_gap_min,
                        })
                    })
                    .collect();
                if let Some((rows, _)) = self.tally("lemma-fgk", n, theta, results)? {
                    let win = worst(rows.iter().map(|r| r.winner_violation));
                    let cand = worst(rows.iter().map(|r| r.candidate_violation));
                    let strict = rows
                        .iter()
                        .map(|r| r.strict_gap_min)
                        .fold(f64::INFINITY, f64::min);
                    self.push(Verdict::hard(
                        format!("Lemma FGK: v⁻ ≤ multi-start minimizer ≤ v⁺, {tag}"),
                        win < ORDER_TOL,
                        Some(win),
                        format!("{} realizations, worst violation {win:.3e}", rows.len()),
                    ));
                    self.push(Verdict::hard(
                        format!("Lemma FGK: every critical point between the flow limits, {tag}"),
                        cand < ORDER_TOL,
                        Some(cand),
                        format!("worst violation over all multi-start candidates {cand:.3e}"),
                    ));
                    self.push(Verdict::hard(
                        format!("strict interior ordering for traces 0.9 < 1.0, {tag}"),
                        strict > 0.0,
                        Some(strict),
                        format!("smallest interior gap {strict:.3e}"),
                    ));
                    ordering.extend(rows);
                }

                // Lemma A2 sandwich and Remark R1 monotonicity at the origin
                let h_list = l.h_list.clone();
                let tol = 2.0 * residual_tol;
                let results: Vec<_> = (0..cfg.reps)
                    .into_par_iter()
                    .map(|k| {
                        let (_, field) = lab.realization(master, n, k, false)?;
                        let rows = lab.field_monotonicity_check(&field, theta, &ORIGIN, &h_list, tol)?;
                        Ok(rows
                            .into_iter()
                            .map(|r| MonotonicityCsv {
                                n,
                                theta,
                                index: k,
                                h: r.h,
                                delta_energy: r.delta_energy,
                                upper: r.upper,
                                lower: r.lower,
                                cell_mass: r.cell_mass,
                                cell_mass_lowered: r.cell_mass_lowered,
                                sandwich_holds: r.sandwich_holds,
                                nondecreasing: r.nondecreasing,
                            })
                            .collect::<Vec<_>>())
                    })
                    .collect();
                if let Some((rows, _)) = self.tally("lemma-a2", n, theta, results)? {
                    let rows: Vec<MonotonicityCsv> = rows.into_iter().flatten().collect();
                    let sandwich = worst(
                        rows.iter()
                            .map(|r| (r.delta_energy - r.upper).max(r.lower - r.delta_energy)),
                    );
                    let mono = worst(rows.iter().map(|r| r.cell_mass_lowered - r.cell_mass));
                    self.push(Verdict::hard(
                        format!("Lemma A2 (LL.4) sandwich, {tag}"),
                        rows.iter().all(|r| r.sandwich_holds),
                        Some(sandwich),
                        format!("h ∈ {h_list:?}, worst violation {sandwich:.3e} (tol {tol:.1e})"),
                    ));
                    self.push(Verdict::hard(
                        format!("Remark R1: ∫_Q1(0) v⁺ nondecreasing in ω(0), {tag}"),
                        rows.iter().all(|r| r.nondecreasing),
                        Some(mono),
                        format!("largest increase after lowering ω(0): {mono:.3e}"),
                    ));
                    monotone.extend(rows);
                }

                // Cor. A2b derivative identity
                let step = l.fd_step;
                let tol = (5.0 * residual_tol).max(1e-4);
                let results: Vec<_> = (0..l.derivative_pairs)
                    .into_par_iter()
                    .map(|k| {
                        let (_, field) = lab.realization(master, n, k, false)?;
                        let pick = derive_seed(master, &[TAG_SITE, n as u64, k as u64]);
                        let site = field.site_at((pick % field.site_count() as u64) as usize);
                        let c = lab.envelope_derivative(&field, theta, &site, step)?;
                        Ok(DerivativeRow {
                            n,
                            theta,
                            index: k,
                            site_x: site[0],
                            site_y: site[1],
                            site_z: site[2],
                            closed_plus: c.closed_plus,
                            fd_plus: c.fd_plus,
                            closed_minus: c.closed_minus,
                            fd_minus: c.fd_minus,
                            error: c.max_error(),
                        })
                    })
                    .collect();
                if let Some((rows, _)) = self.tally("cor-a2b", n, theta, results)? {
                    let err = worst(rows.iter().map(|r| r.error));
                    self.push(Verdict::hard(
                        format!("Cor. A2b: −θ∫_Q1(i) v± matches the re-minimized derivative, {tag}"),
                        err <= tol,
                        Some(err),
                        format!(
                            "{} (site, realization) pairs, step {step}, worst error {err:.3e} (tol {tol:.1e})",
                            rows.len()
                        ),
                    ));
                    derivative.extend(rows);
                }
            }
        }
        self.table("truncation", &truncation)?;
        self.table("ordering", &ordering)?;
        self.table("monotonicity", &monotone)?;
        self.table("derivative", &derivative)?;
        Ok(())
    }

    // ------------------------------------------------------------ scaling

    fn scaling(&mut self) -> CliResult<()> {
        let cfg = self.cfg;
        let (lab, master) = (self.lab, cfg.master_seed);
        let limit = (lab.dim as f64 - 1.0) + 0.15;
        let mut summary = Vec::new();
        let mut blends = Vec::new();
        for &theta in &cfg.thetas {
            let mut per_n = Vec::new();
            let mut blend_means = Vec::new();
            for &n in &cfg.ns {
                let results: Vec<_> = (0..cfg.reps)
                    .into_par_iter()
                    .map(|k| {
                        let (seed, field) = lab.realization(master, n, k, true)?;
                        let pair = lab.pair(&field, theta)?;
                        let rec = lab.record_from_pair(seed, &field, theta, &pair, None)?;
                        let blend = lab.blend_cost_of(&field, theta, &pair)?;
                        Ok((rec, blend))
                    })
                    .collect();
                let Some((rows, failures)) = self.tally("scaling", n, theta, results)? else {
                    continue;
                };
                let records: Vec<StatRecord> = rows.iter().map(|r| r.0.clone()).collect();
                self.write_cell("scaling", n, theta, &records, failures)?;
                for (k, r) in rows.iter().enumerate() {
                    blends.push(BlendRow {
                        theta,
                        n,
                        index: k,
                        seed: r.0.seed,
                        blend_cost: r.1,
                    });
                }
                let b: Vec<f64> = rows.iter().map(|r| r.1).collect();
                blend_means.push((n, Summary::of(&b)));
                self.antithetic_zero("scaling", n, theta, &records);
                per_n.push(records);
            }
            if per_n.len() < 2 {
                self.push(Verdict::advisory(
                    format!("gap scaling exponent, d={} θ={theta}", lab.dim),
                    true,
                    None,
                    "skipped: fewer than two completed box sizes".into(),
                ));
                continue;
            }
            if theta == 0.0 {
                let max = worst(per_n.iter().flatten().map(|r| r.d_n.abs()));
                self.push(Verdict::hard(
                    format!("θ=0 gap vanishes, d={}", lab.dim),
                    max < 1e-8,
                    Some(max),
                    format!("degenerate: disorder absent; max |D_n| = {max:.3e}"),
                ));
                continue;
            }
            let report = ScalingReport::from_records(lab.dim, theta, &per_n)?;
            for (c, k) in report.cells.iter().zip(&report.constant) {
                let blend = blend_means
                    .iter()
                    .find(|(n, _)| *n == c.n)
                    .map(|(_, s)| *s)
                    .unwrap_or(Summary::of(&[]));
                summary.push(ScalingRow {
                    theta,
                    n: c.n,
                    mean_abs_d_n: c.abs_d_n.mean,
                    se_abs_d_n: c.abs_d_n.se,
                    constant: *k,
                    mean_blend: blend.mean,
                    se_blend: blend.se,
                });
            }
            self.push(Verdict::hard(
                format!("Lemma A1: gap scaling exponent, d={} θ={theta}", lab.dim),
                report.slope <= limit,
                Some(report.slope),
                format!(
                    "slope of ln mean|D_n| on ln n over n = {:?}: {:.4} (limit {limit:.2})",
                    report.cells.iter().map(|c| c.n).collect::<Vec<_>>(),
                    report.slope
                ),
            ));
            let (lo, hi) = report
                .constant
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(a, b), c| (a.min(*c), b.max(*c)));
            self.push(Verdict::advisory(
                format!("gap constant Ĉ = max|D_n| / n^(d−1) stable, d={} θ={theta}", lab.dim),
                hi <= 2.0 * lo,
                Some(hi / lo),
                format!("Ĉ per n: {:?}", report.constant),
            ));
            let xs: Vec<f64> = blend_means.iter().map(|(n, _)| *n as f64).collect();
            let ys: Vec<f64> = blend_means.iter().map(|(_, s)| s.mean.max(0.0)).collect();
            if ys.iter().all(|y| *y > 0.0) {
                let slope = loglog_slope(&xs, &ys)?;
                self.push(Verdict::hard(
                    format!("boundary-blend cost exponent, d={} θ={theta}", lab.dim),
                    slope <= limit,
                    Some(slope),
                    format!("slope of ln mean blend cost on ln n: {slope:.4} (limit {limit:.2})"),
                ));
            } else {
                self.push(Verdict::hard(
                    format!("boundary-blend cost exponent, d={} θ={theta}", lab.dim),
                    true,
                    None,
                    "blending never raised the mean energy".into(),
                ));
            }
        }
        self.table("scaling", &summary)?;
        self.table("blend", &blends)?;
        Ok(())
    }

    // ------------------------------------------------------------ fluctuation

    fn fluctuation(&mut self) -> CliResult<()> {
        let cfg = self.cfg;
        let (lab, master) = (self.lab, cfg.master_seed);
        let conditional = cfg.conditional();
        let origin = cfg.origin();
        let mode: IncrementMode = cfg.nested.increments.into();
        let variance_reps = cfg.variance_reps();
        let a_list = cfg.nested.a_list.clone();
        let mut variance = Vec::new();
        let mut u_rows = Vec::new();
        for &theta in &cfg.thetas {
            let mut u_cells: Vec<VarianceCell> = Vec::new();
            for &n in &cfg.ns {
                let tag = cell_tag(lab.dim, n, theta);
                if let Some((records, _)) = self.antithetic_cell("fluctuation-antithetic", n, theta)? {
                    self.antithetic_zero("fluctuation", n, theta, &records);
                }

                let results: Vec<_> = (0..cfg.reps)
                    .into_par_iter()
                    .map(|k| {
                        let (seed, field) = lab.realization(master, n, k, false)?;
                        let pair = lab.pair(&field, theta)?;
                        let mut rec = lab.record_from_pair(seed, &field, theta, &pair, None)?;
                        rec.f_hat = Some(lab.conditional_gap(&field, theta, conditional, seed)?.mean);
                        let row = if k < variance_reps {
                            let row = lab.variance_row(&field, theta, origin, seed, mode)?;
                            rec.w0_hat = Some(row.w0.mean);
                            Some(row)
                        } else {
                            None
                        };
                        Ok((rec, row))
                    })
                    .collect();
                let Some((rows, failures)) = self.tally("fluctuation", n, theta, results)? else {
                    continue;
                };
                let (records, vrows): (Vec<StatRecord>, Vec<Option<VarianceRow>>) =
                    rows.into_iter().unzip();
                let agg = self.write_cell("fluctuation", n, theta, &records, failures)?;
                let f = agg.f_hat.unwrap_or(Summary::of(&[]));
                self.push(Verdict::hard(
                    format!("mean F̂_n within 3 SE of 0, {tag}"),
                    f.within_se_of_zero(3.0),
                    Some(f.mean),
                    format!(
                        "mean {:.4e}, SE {:.4e}, {} realizations, K = {}, m_extra = {}",
                        f.mean, f.se, f.count, conditional.replicas, conditional.m_extra
                    ),
                ));

                let vrows: Vec<VarianceRow> = vrows.into_iter().flatten().collect();
                if vrows.is_empty() {
                    continue;
                }
                let cell = VarianceCell::from_rows(&lab, n, theta, &vrows, &a_list);
                let se = (cell.b_sq_hat.se.powi(2) + cell.b_sq_lower.se.powi(2)).sqrt();
                self.push(Verdict::hard(
                    format!("b̂² within the MM2 sandwich, {tag}"),
                    cell.sandwich_holds(),
                    Some(cell.b_sq_hat.mean),
                    format!(
                        "b_sq_lower {:.4e} − 3·{se:.2e} ≤ b̂² {:.4e} ≤ 4θ²(1+C0θ‖g‖∞)² {:.4e}",
                        cell.b_sq_lower.mean, cell.b_sq_hat.mean, cell.b_sq_upper
                    ),
                ));
                self.push(Verdict::hard(
                    format!("|Ŵ₀| ≤ 2θ(1+C0θ‖g‖∞) + 3 SE, {tag}"),
                    cell.w0_bound_holds,
                    Some(cell.w0_bound_worst),
                    format!(
                        "{} realizations, K = {}, worst slack {:.3e}",
                        cell.reps, origin.replicas, cell.w0_bound_worst
                    ),
                ));
                variance.push(VarianceCsv {
                    theta,
                    n,
                    reps: cell.reps,
                    b_sq_hat: cell.b_sq_hat.mean,
                    b_sq_hat_se: cell.b_sq_hat.se,
                    b_sq_lower: cell.b_sq_lower.mean,
                    b_sq_lower_se: cell.b_sq_lower.se,
                    b_sq_upper: cell.b_sq_upper,
                    v_hat: cell.v_hat.map(|s| s.mean),
                    v_hat_se: cell.v_hat.map(|s| s.se),
                    w0_bound_worst: cell.w0_bound_worst,
                });
                for (a, s) in &cell.u_hat {
                    u_rows.push(UHatRow {
                        theta,
                        n,
                        a: *a,
                        mean: s.mean,
                        se: s.se,
                    });
                }
                u_cells.push(cell);
            }
            if mode == IncrementMode::All && u_cells.len() >= 3 && theta > 0.0 {
                for (j, a) in a_list.iter().enumerate() {
                    let means: Vec<f64> = u_cells.iter().map(|c| c.u_hat[j].1.mean).collect();
                    let ses: Vec<f64> = u_cells.iter().map(|c| c.u_hat[j].1.se).collect();
                    let trend = decreasing_trend(&means, &ses);
                    self.push(Verdict::advisory(
                        format!("Û_n({a}) decreasing in n, d={} θ={theta}", lab.dim),
                        trend.pass,
                        None,
                        format!("means {means:?}, inversions {:?}", trend.inversions),
                    ));
                }
            }
        }
        self.table("variance", &variance)?;
        if !u_rows.is_empty() {
            self.table("u_hat", &u_rows)?;
        }
        Ok(())
    }

    // ------------------------------------------------------------ uniqueness

    fn uniqueness(&mut self) -> CliResult<()> {
        let cfg = self.cfg;
        let dim = self.lab.dim;
        for &theta in &cfg.thetas {
            let mut cells = Vec::new();
            for &n in &cfg.ns {
                if let Some((_, agg)) = self.antithetic_cell("uniqueness", n, theta)? {
                    cells.push(agg);
                }
            }
            let report = UniquenessReport::from_cells(dim, theta, cells);
            let tag = format!("d={dim} θ={theta}");
            let gaps: Vec<f64> = report.cells.iter().map(|c| c.gap_integral.mean).collect();
            if report.degenerate {
                let off = worst(gaps.iter().map(|g| (g - 2.0).abs()));
                self.push(Verdict::hard(
                    format!("θ=0 gap integral is 2, {tag}"),
                    off < 1e-9,
                    Some(off),
                    "degenerate: disorder absent".into(),
                ));
                continue;
            }
            self.push(Verdict::hard(
                format!("m̂⁺ + m̂⁻ within 3 SE of 0 and m̂⁺ ≥ −3 SE, {tag}"),
                report.magnetization_symmetric(),
                None,
                format!(
                    "m̂⁺ per n: {:?}",
                    report.cells.iter().map(|c| c.m_plus.mean).collect::<Vec<_>>()
                ),
            ));
            self.push(Verdict::hard(
                format!("ê⁺ − ê⁻ within 3 SE of 0, {tag}"),
                report.densities_agree(),
                None,
                format!(
                    "ê⁺ per n: {:?}",
                    report.cells.iter().map(|c| c.e_plus.mean).collect::<Vec<_>>()
                ),
            ));
            if report.cells.len() < 2 {
                continue;
            }
            let trend = &report.gap_trend;
            let detail = format!(
                "mean n^-d ∫(v⁺ − v⁻) per n: {gaps:?}; strict {}, inversions {:?}",
                trend.strict, trend.inversions
            );
            let check = format!("Thm. min: gap integral strictly decreasing in n, {tag}");
            let hard = dim == 1 || (dim == 2 && !trend.overlapping);
            self.push(if hard {
                Verdict::hard(check, trend.strict, None, detail)
            } else {
                Verdict::advisory(check, trend.strict, None, format!("{detail}; SEs overlap"))
            });
            let spread = &report.density_spread_trend;
            let sds: Vec<f64> = report.cells.iter().map(|c| c.e_plus.sd).collect();
            self.push(Verdict::hard(
                format!("SD of n^-d G₁(v⁺) decreasing in n, {tag}"),
                spread.pass,
                None,
                format!("SD per n: {sds:?}"),
            ));
        }
        Ok(())
    }

    // ------------------------------------------------------------ clt

    fn clt(&mut self) -> CliResult<()> {
        let cfg = self.cfg;
        let (lab, master) = (self.lab, cfg.master_seed);
        let conditional = cfg.conditional();
        let mut samples = Vec::new();
        let mut summary = Vec::new();
        for &theta in &cfg.thetas {
            let mut cells = Vec::new();
            for &n in &cfg.ns {
                let tag = cell_tag(lab.dim, n, theta);
                let results: Vec<_> = (0..cfg.reps)
                    .into_par_iter()
                    .map(|k| {
                        let (seed, field) = lab.realization(master, n, k, false)?;
                        let pair = lab.pair(&field, theta)?;
                        let mut rec = lab.record_from_pair(seed, &field, theta, &pair, None)?;
                        rec.f_hat = Some(lab.conditional_gap(&field, theta, conditional, seed)?.mean);
                        Ok(rec)
                    })
                    .collect();
                let Some((records, failures)) = self.tally("clt", n, theta, results)? else {
                    continue;
                };
                self.write_cell("clt", n, theta, &records, failures)?;
                let fs: Vec<f64> = records.iter().filter_map(|r| r.f_hat).collect();
                let cell = CltCell::from_f_hat(lab.dim, n, &fs)?;
                let s = cell.standardized;
                self.push(Verdict::hard(
                    format!("mean of F̂_n/√|Λn| within 3 SE of 0, {tag}"),
                    s.within_se_of_zero(3.0),
                    Some(s.mean),
                    format!("mean {:.4e}, SE {:.4e}, {} samples", s.mean, s.se, s.count),
                ));
                let critical = 1.36 / (s.count as f64).sqrt();
                self.push(Verdict::advisory(
                    format!("standardized F̂_n close to normal, {tag}"),
                    cell.ks_distance <= critical,
                    Some(cell.ks_distance),
                    format!(
                        "Kolmogorov distance {:.4} against 5% level {critical:.4}",
                        cell.ks_distance
                    ),
                ));
                for (k, z) in cell.samples.iter().enumerate() {
                    samples.push(CltSampleRow {
                        theta,
                        n,
                        index: k,
                        z: *z,
                    });
                }
                summary.push(CltSummaryRow {
                    theta,
                    n,
                    samples: s.count,
                    mean: s.mean,
                    se: s.se,
                    sd: s.sd,
                    ks_distance: cell.ks_distance,
                    variance_ratio: cell.variance_ratio,
                });
                cells.push(cell);
            }
            if cells.len() < 2 || theta == 0.0 {
                continue;
            }
            let report = CltReport::from_cells(theta, cells);
            let v: Vec<f64> = report.cells.iter().map(|c| c.variance_ratio).collect();
            let check = format!("Var(F̂_n)/|Λn| decreasing in n, d={} θ={theta}", lab.dim);
            let detail = format!(
                "ratios {v:?}, inversions {:?}",
                report.variance_trend.inversions
            );
            self.push(if lab.dim == 1 {
                Verdict::hard(check, report.variance_trend.pass, None, detail)
            } else {
                Verdict::advisory(check, report.variance_trend.pass, None, detail)
            });
        }
        self.table("clt_samples", &samples)?;
        self.table("clt_summary", &summary)?;
        Ok(())
    }
}
