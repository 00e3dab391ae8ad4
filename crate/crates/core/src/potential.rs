//! Double-well potential with exact quadratic wells.
//!
//! Outside `[-(1-δ₀), 1-δ₀]` the potential is `(|s|-1)²/(2C₀)`, so the
//! Euler–Lagrange equation is linear while a profile stays inside one well.
//! Between the wells a quartic polynomial is glued on with matching value,
//! slope and curvature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PotentialParams", into = "PotentialParams")]
pub struct PotentialSpec {
    c0: f64,
    delta0: f64,
    /// Coefficients `a₀ … a₄` of the glue polynomial on `[-s₀, s₀]`.
    glue: [f64; 5],
}

/// Serialized form: the two shape parameters, glue recomputed on load.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
struct PotentialParams {
    c0: f64,
    delta0: f64,
}

impl Default for PotentialParams {
    fn default() -> Self {
        Self {
            c0: 1.0,
            delta0: 0.5,
        }
    }
}

impl TryFrom<PotentialParams> for PotentialSpec {
    type Error = Error;
    fn try_from(p: PotentialParams) -> Result<Self> {
        PotentialSpec::new(p.c0, p.delta0)
    }
}

impl From<PotentialSpec> for PotentialParams {
    fn from(s: PotentialSpec) -> Self {
        Self {
            c0: s.c0,
            delta0: s.delta0,
        }
    }
}

impl Default for PotentialSpec {
    fn default() -> Self {
        Self::new(1.0, 0.5).expect("default potential parameters are valid")
    }
}

impl PotentialSpec {
    /// Builds the C² even quartic glue for the given well curvature `1/C₀`
    /// and glue half-width `1 - δ₀`.
    pub fn new(c0: f64, delta0: f64) -> Result<Self> {
        if !(c0.is_finite() && c0 > 0.0) {
            return Err(Error::Config(format!(
                "potential.c0 must be positive, got {c0}"
            )));
        }
        if !(delta0 > 0.0 && delta0 < 1.0) {
            return Err(Error::Config(format!(
                "potential.delta0 must lie in (0, 1), got {delta0}"
            )));
        }
        let s0 = 1.0 - delta0;
        // a + b s² + c s⁴ matched to (s-1)²/(2C₀) in value, slope, curvature at s0
        let c = 1.0 / (8.0 * c0 * s0.powi(3));
        let b = (1.0 / c0 - 12.0 * c * s0 * s0) / 2.0;
        let a = delta0 * delta0 / (2.0 * c0) - b * s0 * s0 - c * s0.powi(4);
        Ok(Self {
            c0,
            delta0,
            glue: [a, 0.0, b, 0.0, c],
        })
    }

    /// Replaces the glue polynomial; used to build deliberately broken
    /// potentials for the validator.
    pub fn with_glue(mut self, glue: [f64; 5]) -> Self {
        self.glue = glue;
        self
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn glue(&self) -> [f64; 5] {
        self.glue
    }

    /// Right gluing point `1 - δ₀`.
    pub fn glue_point(&self) -> f64 {
        1.0 - self.delta0
    }

    /// Lemma-A bound `1 + C₀ θ ‖g‖∞` on minimizers.
    pub fn linfty_bound(&self, theta: f64, gmax: f64) -> f64 {
        1.0 + self.c0 * theta * gmax
    }

    // Even and odd parts are evaluated separately so that an even glue gives
    // w(-s) == w(s) and w'(-s) == -w'(s) bit for bit.
    fn glue_value(&self, s: f64) -> f64 {
        let [a0, a1, a2, a3, a4] = self.glue;
        let s2 = s * s;
        (a0 + s2 * (a2 + s2 * a4)) + s * (a1 + s2 * a3)
    }

    fn glue_slope(&self, s: f64) -> f64 {
        let [_, a1, a2, a3, a4] = self.glue;
        let s2 = s * s;
        s * (2.0 * a2 + 4.0 * a4 * s2) + (a1 + 3.0 * a3 * s2)
    }

    fn glue_curvature(&self, s: f64) -> f64 {
        let [_, _, a2, a3, a4] = self.glue;
        (2.0 * a2 + 12.0 * a4 * s * s) + 6.0 * a3 * s
    }

    pub fn w(&self, s: f64) -> f64 {
        let s0 = self.glue_point();
        if s > s0 {
            let d = s - 1.0;
            d * d / (2.0 * self.c0)
        } else if s < -s0 {
            let d = s + 1.0;
            d * d / (2.0 * self.c0)
        } else {
            self.glue_value(s)
        }
    }

    pub fn w_prime(&self, s: f64) -> f64 {
        let s0 = self.glue_point();
        if s > s0 {
            (s - 1.0) / self.c0
        } else if s < -s0 {
            (s + 1.0) / self.c0
        } else {
            self.glue_slope(s)
        }
    }

    pub fn w_second(&self, s: f64) -> f64 {
        if s.abs() > self.glue_point() {
            1.0 / self.c0
        } else {
            self.glue_curvature(s)
        }
    }

    /// `sup_{|s| ≤ bound} w''(s)`, scanned densely on the glue and exact on
    /// the quadratic branches.
    pub fn sup_curvature(&self, bound: f64) -> f64 {
        let s0 = self.glue_point();
        let mut sup = if bound > s0 {
            1.0 / self.c0
        } else {
            f64::NEG_INFINITY
        };
        let reach = bound.min(s0);
        let m = 4000;
        for k in 0..=m {
            let s = -reach + 2.0 * reach * k as f64 / m as f64;
            sup = sup.max(self.glue_curvature(s));
        }
        sup
    }

    /// `sup_{|s| ≤ bound} |w'(s)|`.
    pub fn sup_slope(&self, bound: f64) -> f64 {
        let m = 4000;
        (0..=m)
            .map(|k| {
                self.w_prime(-bound + 2.0 * bound * k as f64 / m as f64)
                    .abs()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClauseCheck {
    pub clause: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H1Report {
    pub clauses: Vec<ClauseCheck>,
}

impl H1Report {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn clause(&self, name: &str) -> Option<&ClauseCheck> {
        self.clauses.iter().find(|c| c.clause == name)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.clauses
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.clause)
            .collect()
    }
}

const SCAN_POINTS: usize = 10_000;
const SCAN_RANGE: f64 = 3.0;
const MATCH_TOL: f64 = 1e-12;

/// Checks the double-well assumptions on a dense grid over `[-3, 3]` plus
/// one-sided matching at the gluing points.
pub fn verify_h1(spec: &PotentialSpec) -> H1Report {
    let grid: Vec<f64> = (0..=SCAN_POINTS)
        .map(|k| -SCAN_RANGE + 2.0 * SCAN_RANGE * k as f64 / SCAN_POINTS as f64)
        .collect();
    let mut clauses = Vec::new();

    let s0 = spec.glue_point();
    let mut mismatch: f64 = 0.0;
    for &p in &[s0, -s0] {
        let tail_sign = p.signum();
        let d = p - tail_sign;
        let tail = [d * d / (2.0 * spec.c0), d / spec.c0, 1.0 / spec.c0];
        let glue = [
            spec.glue_value(p),
            spec.glue_slope(p),
            spec.glue_curvature(p),
        ];
        for (t, g) in tail.iter().zip(&glue) {
            mismatch = mismatch.max((t - g).abs());
        }
    }
    clauses.push(ClauseCheck {
        clause: "c2_matching",
        passed: mismatch < MATCH_TOL,
        detail: format!("max one-sided jump in w, w', w'' at ±{s0}: {mismatch:.3e}"),
    });

    let min_w = grid
        .iter()
        .map(|&s| spec.w(s))
        .fold(f64::INFINITY, f64::min);
    clauses.push(ClauseCheck {
        clause: "nonnegative",
        passed: min_w >= 0.0,
        detail: format!("min w on grid: {min_w:.6e}"),
    });

    let wells_zero = spec.w(1.0) == 0.0 && spec.w(-1.0) == 0.0;
    let off_well_min = grid
        .iter()
        .filter(|s| (s.abs() - 1.0).abs() > 1e-3)
        .map(|&s| spec.w(s))
        .fold(f64::INFINITY, f64::min);
    clauses.push(ClauseCheck {
        clause: "zeros_exactly_at_wells",
        passed: wells_zero && off_well_min > 0.0,
        detail: format!(
            "w(±1) = ({}, {}); min away from ±1: {off_well_min:.3e}",
            spec.w(1.0),
            spec.w(-1.0)
        ),
    });

    let asym = grid
        .iter()
        .map(|&s| (spec.w(s) - spec.w(-s)).abs())
        .fold(0.0, f64::max);
    clauses.push(ClauseCheck {
        clause: "even",
        passed: asym <= MATCH_TOL,
        detail: format!("max |w(s) - w(-s)|: {asym:.3e}"),
    });

    let unit: Vec<f64> = (1..SCAN_POINTS)
        .map(|k| k as f64 / SCAN_POINTS as f64)
        .collect();
    let slope_ok = unit.iter().all(|&s| spec.w_prime(s) < 0.0);
    let values_ok = std::iter::once(0.0)
        .chain(unit.iter().copied())
        .chain(std::iter::once(1.0))
        .map(|s| spec.w(s))
        .collect::<Vec<_>>()
        .windows(2)
        .all(|w| w[1] < w[0]);
    clauses.push(ClauseCheck {
        clause: "strictly_decreasing_on_0_1",
        passed: slope_ok && values_ok,
        detail: format!("w' < 0 on (0,1): {slope_ok}; values strictly decreasing: {values_ok}"),
    });

    let tail_dev = grid
        .iter()
        .filter(|&&s| s > s0)
        .map(|&s| (spec.w(s) - (s - 1.0).powi(2) / (2.0 * spec.c0)).abs())
        .fold(0.0, f64::max);
    clauses.push(ClauseCheck {
        clause: "quadratic_tail",
        passed: tail_dev == 0.0,
        detail: format!("max deviation from (s-1)^2/(2 C0) for s > {s0}: {tail_dev:.3e}"),
    });

    H1Report { clauses }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wells_and_tail_values() {
        let w = PotentialSpec::default();
        assert_eq!(w.w(1.0), 0.0);
        assert_eq!(w.w(-1.0), 0.0);
        assert_eq!(w.w(2.0), 0.5);
        assert_eq!(w.w(-2.0), 0.5);
    }

    #[test]
    fn default_glue_is_the_matched_quartic() {
        // Matching at s = 1/2 with C0 = 1:
        //   a + b/4 + c/16 = 1/8,  b + c/2 = -1/2,  2b + 3c = 1
        // so c = 1, b = -1, a = 5/16.
        let w = PotentialSpec::default();
        let [a0, a1, a2, a3, a4] = w.glue();
        assert_eq!((a1, a3), (0.0, 0.0));
        assert!((a0 - 5.0 / 16.0).abs() < 1e-15);
        assert!((a2 + 1.0).abs() < 1e-15);
        assert!((a4 - 1.0).abs() < 1e-15);
        assert!((w.w(0.0) - 5.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn c2_continuity_at_glue_points() {
        for (c0, d0) in [(1.0, 0.5), (0.5, 0.3), (2.0, 0.7)] {
            let w = PotentialSpec::new(c0, d0).unwrap();
            let s0 = w.glue_point();
            let eps = 1e-9;
            for p in [s0, -s0] {
                let d = p - p.signum();
                assert!((w.glue_value(p) - d * d / (2.0 * c0)).abs() < 1e-12);
                assert!((w.glue_slope(p) - d / c0).abs() < 1e-12);
                assert!((w.glue_curvature(p) - 1.0 / c0).abs() < 1e-12);
                // and through the public piecewise evaluation
                assert!((w.w(p + eps) - w.w(p - eps)).abs() < 1e-8);
                assert!((w.w_prime(p + eps) - w.w_prime(p - eps)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let w = PotentialSpec::default();
        let h = 1e-5;
        for k in 0..200 {
            let s = -2.5 + 5.0 * k as f64 / 199.0;
            let fd1 = (w.w(s + h) - w.w(s - h)) / (2.0 * h);
            let fd2 = (w.w_prime(s + h) - w.w_prime(s - h)) / (2.0 * h);
            assert!((fd1 - w.w_prime(s)).abs() < 1e-8, "w' at {s}");
            assert!((fd2 - w.w_second(s)).abs() < 1e-6, "w'' at {s}");
        }
    }

    #[test]
    fn bitwise_symmetry() {
        let w = PotentialSpec::default();
        for k in 0..1000 {
            let s = 3.0 * k as f64 / 999.0;
            // == so that +0 and -0 at the origin compare equal
            assert!(w.w(s) == w.w(-s));
            assert!(w.w_prime(s) == -w.w_prime(-s));
        }
    }

    #[test]
    fn quadratic_tail_is_exact() {
        let w = PotentialSpec::default();
        let start = w.glue_point() + 1e-6;
        for k in 0..1000 {
            let s = start + 3.0 * k as f64 / 999.0;
            assert_eq!(w.w(s) - (s - 1.0) * (s - 1.0) / 2.0, 0.0);
        }
    }

    #[test]
    fn curvature_supremum() {
        let w = PotentialSpec::default();
        // 12 s^2 - 2 reaches 1 at s = 1/2, the tail curvature is 1
        assert!((w.sup_curvature(2.0) - 1.0).abs() < 1e-12);
        assert!((w.sup_curvature(0.25) - (12.0 * 0.0625 - 2.0)).abs() < 1e-12);
        let soft = PotentialSpec::new(2.0, 0.5).unwrap();
        assert!(soft.sup_curvature(3.0) >= 0.5);
    }

    #[test]
    fn default_passes_every_clause() {
        let report = verify_h1(&PotentialSpec::default());
        assert!(report.passed(), "{report:#?}");
        assert_eq!(report.clauses.len(), 6);
    }

    #[test]
    fn lowered_glue_constant_fails_nonnegativity() {
        let mut g = PotentialSpec::default().glue();
        g[0] -= 0.5;
        let report = verify_h1(&PotentialSpec::default().with_glue(g));
        assert!(!report.clause("nonnegative").unwrap().passed);
        assert!(!report.passed());
    }

    #[test]
    fn asymmetric_glue_fails_symmetry() {
        let mut g = PotentialSpec::default().glue();
        g[3] = 0.05;
        let report = verify_h1(&PotentialSpec::default().with_glue(g));
        assert!(!report.clause("even").unwrap().passed);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(PotentialSpec::new(0.0, 0.5).is_err());
        assert!(PotentialSpec::new(1.0, 1.0).is_err());
        assert!(PotentialSpec::new(1.0, 0.0).is_err());
    }
}
