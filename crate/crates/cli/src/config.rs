//! Experiment configuration: TOML restricted to flat `key = value` lines with
//! dotted section prefixes (`solver.residual_tol = 1e-8`).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rfac_core::{
    verify_h1, DistributionSpec, IncrementMode, Lab, Nested, PotentialSpec, SolverOptions,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable that replaces `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "RFAC_OUTPUT_DIR";

/// The configuration shipped with the crate.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Sanity,
    Lemmas,
    Scaling,
    Fluctuation,
    Uniqueness,
    Clt,
}

impl Kind {
    pub const ALL: [Kind; 6] = [
        Kind::Sanity,
        Kind::Lemmas,
        Kind::Scaling,
        Kind::Fluctuation,
        Kind::Uniqueness,
        Kind::Clt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Sanity => "sanity",
            Kind::Lemmas => "lemmas",
            Kind::Scaling => "scaling",
            Kind::Fluctuation => "fluctuation",
            Kind::Uniqueness => "uniqueness",
            Kind::Clt => "clt",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Kind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown kind `{s}`, expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Increments {
    OriginOnly,
    All,
}

impl From<Increments> for IncrementMode {
    fn from(i: Increments) -> Self {
        match i {
            Increments::OriginOnly => IncrementMode::OriginOnly,
            Increments::All => IncrementMode::All,
        }
    }
}

/// Budgets of the nested Monte Carlo estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NestedConfig {
    /// `K` for `F̂ₙ`.
    pub replicas: usize,
    /// `K` for `Ŵ₀` and the origin-conditioned lower bound.
    pub w0_replicas: usize,
    /// Conditioning margin; absent means `ceil(10 √(2C₀))`.
    pub m_extra: Option<usize>,
    /// Realizations per cell for the variance estimators; absent means `reps`.
    pub variance_reps: Option<usize>,
    pub increments: Increments,
    /// Truncation levels of `Ûₙ(a)`.
    pub a_list: Vec<f64>,
}

impl Default for NestedConfig {
    fn default() -> Self {
        Self {
            replicas: 8,
            w0_replicas: 16,
            m_extra: None,
            variance_reps: None,
            increments: Increments::OriginOnly,
            a_list: vec![0.05, 0.1, 0.2],
        }
    }
}

/// Parameters of the lemma checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmasConfig {
    /// Absolute truncation level; absent means threshold + 0.5 per `θ`.
    pub truncation_t: Option<f64>,
    pub rough_profiles: usize,
    pub rough_amplitude: f64,
    pub h_list: Vec<f64>,
    pub fd_step: f64,
    pub derivative_pairs: usize,
}

impl Default for LemmasConfig {
    fn default() -> Self {
        Self {
            truncation_t: None,
            rough_profiles: 50,
            rough_amplitude: 4.0,
            h_list: vec![0.05, 0.1, 0.2],
            fd_step: 1e-3,
            derivative_pairs: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: Option<Kind>,
    pub master_seed: u64,
    pub dim: usize,
    pub thetas: Vec<f64>,
    pub ns: Vec<usize>,
    pub reps: usize,
    /// Grid nodes per unit length; absent means 8 in d = 1 and 4 above.
    #[serde(default)]
    pub p: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Failed realizations tolerated per cell before the cell is aborted.
    #[serde(default)]
    pub failure_budget: usize,
    #[serde(default)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub dist: DistributionSpec,
    /// Absent keys take the per-dimension defaults.
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub nested: NestedConfig,
    #[serde(default)]
    pub lemmas: LemmasConfig,
}

/// Overrides on top of [`SolverOptions::for_dim`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<rfac_core::Scheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotone_shift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_levels: Option<usize>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("rfac-out")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn p(&self) -> usize {
        self.p.unwrap_or(if self.dim == 1 { 8 } else { 4 })
    }

    pub fn solver_options(&self) -> SolverOptions {
        let base = SolverOptions::for_dim(self.dim);
        let s = &self.solver;
        SolverOptions {
            scheme: s.scheme.unwrap_or(base.scheme),
            time_step: s.time_step.or(base.time_step),
            monotone_shift: s.monotone_shift.or(base.monotone_shift),
            residual_tol: s.residual_tol.unwrap_or(base.residual_tol),
            energy_tol: s.energy_tol.unwrap_or(base.energy_tol),
            max_iters: s.max_iters.unwrap_or(base.max_iters),
            chain_levels: s.chain_levels.unwrap_or(base.chain_levels),
        }
    }

    pub fn lab(&self) -> CliResult<Lab> {
        Ok(Lab::new(
            self.dim,
            self.p(),
            self.potential,
            self.dist,
            self.solver_options(),
        )?)
    }

    pub fn m_extra(&self) -> usize {
        self.nested
            .m_extra
            .unwrap_or_else(|| Nested::default_margin(&self.potential))
    }

    /// Budget of `F̂ₙ`.
    pub fn conditional(&self) -> Nested {
        Nested {
            m_extra: self.m_extra(),
            replicas: self.nested.replicas,
        }
    }

    /// Budget of `Ŵ₀` and the lower-bound halves.
    pub fn origin(&self) -> Nested {
        Nested {
            m_extra: self.m_extra(),
            replicas: self.nested.w0_replicas,
        }
    }

    pub fn variance_reps(&self) -> usize {
        self.nested.variance_reps.unwrap_or(self.reps)
    }

    pub fn theta_max(&self) -> f64 {
        self.thetas.iter().copied().fold(0.0, f64::max)
    }

    /// `output_dir`, or the directory named by [`OUTPUT_DIR_ENV`].
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Cross-checks every sub-spec; errors name the failing invariant.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let lab = self.lab()?;
        if self.ns.is_empty() {
            return bad("ns must list at least one box size".into());
        }
        if self.ns.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "ns must be sorted strictly ascending, got {:?}",
                self.ns
            ));
        }
        if self.ns[0] == 0 {
            return bad("box sizes in ns must be positive".into());
        }
        if self.thetas.is_empty() {
            return bad("thetas must list at least one coupling".into());
        }
        if let Some(t) = self.thetas.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return bad(format!("thetas must be finite and nonnegative, got {t}"));
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        let h1 = verify_h1(&self.potential);
        if !h1.passed() {
            return bad(format!(
                "potential fails H1 clauses: {}",
                h1.failures().join(", ")
            ));
        }
        for &theta in &self.thetas {
            lab.solver
                .effective_shift(&self.potential, theta, self.dist.gmax)?;
        }
        let n = &self.nested;
        if n.replicas == 0 {
            return bad("nested.replicas must be at least 1".into());
        }
        if n.w0_replicas < 2 {
            return bad("nested.w0_replicas must be at least 2".into());
        }
        if self.variance_reps() == 0 {
            return bad("nested.variance_reps must be at least 1".into());
        }
        if let Some(a) = n.a_list.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return bad(format!("nested.a_list entries must be positive, got {a}"));
        }
        let l = &self.lemmas;
        if let Some(t) = l.truncation_t {
            let threshold = self.potential.linfty_bound(self.theta_max(), self.dist.gmax);
            if !(t > threshold) {
                return bad(format!(
                    "lemmas.truncation_t = {t} must exceed the truncation threshold 1 + C0 θ ‖g‖∞ = {threshold}"
                ));
            }
        }
        if !(l.rough_amplitude.is_finite() && l.rough_amplitude > 0.0) {
            return bad("lemmas.rough_amplitude must be positive".into());
        }
        if let Some(h) = l.h_list.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
            return bad(format!("lemmas.h_list entries must be positive, got {h}"));
        }
        if !(l.fd_step.is_finite() && l.fd_step > 0.0) {
            return bad("lemmas.fd_step must be positive".into());
        }
        Ok(())
    }
}

/// Reads, parses and cross-validates a config file.
pub fn validate_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text)
        .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.detail())))
}
