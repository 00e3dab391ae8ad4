//! Quenched random field on the integer lattice.
//!
//! A realization is a deterministic function of the absolute lattice
//! coordinate: every site owns its own seed stream, derived from the master
//! seed, the coordinate and (after a resample) an auxiliary seed. A window of
//! `n^d` unit cells is materialized for computation. Translating the window,
//! enlarging it, or redrawing a subset of sites never disturbs the value at
//! any other site.
//!
//! Unit cells are half-open, `Q₁(z) = z + [-1/2, 1/2)^d`. The window of side
//! `n` holds the cells with local coordinates `z_j ∈ {-⌊n/2⌋, …, n-1-⌊n/2⌋}`,
//! so the origin cell is always present and windows of side `n` and `n + 2m`
//! are concentric.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lattice coordinate; components past the dimension are zero.
pub type Site = [i64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    UniformSymmetric,
}

/// Single-site law of the field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    /// Half-width of the support, i.e. `‖g‖∞`.
    pub gmax: f64,
}

impl Default for DistributionSpec {
    fn default() -> Self {
        Self {
            kind: DistributionKind::UniformSymmetric,
            gmax: 1.0,
        }
    }
}

impl DistributionSpec {
    pub fn uniform(gmax: f64) -> Self {
        Self {
            kind: DistributionKind::UniformSymmetric,
            gmax,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gmax.is_finite() && self.gmax > 0.0) {
            return Err(Error::Config(format!(
                "dist.gmax must be positive, got {}",
                self.gmax
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        0.0
    }

    pub fn variance(&self) -> f64 {
        match self.kind {
            DistributionKind::UniformSymmetric => self.gmax * self.gmax / 3.0,
        }
    }

    /// Maps a uniform variate on `[0, 1)` to the law.
    fn quantile(&self, u: f64) -> f64 {
        match self.kind {
            DistributionKind::UniformSymmetric => self.gmax * (2.0 * u - 1.0),
        }
    }
}

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed derivation shared by every consumer that needs a sub-stream:
/// `derive_seed(parent, &[a, b, …])` is a hash chain over the words.
pub fn derive_seed(parent: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(mix64(parent), |h, &w| mix64(h ^ mix64(w)))
}

fn site_seed(master: u64, abs: &Site, dim: usize, aux: Option<u64>) -> u64 {
    let mut h = mix64(master);
    for &c in &abs[..dim] {
        h = mix64(h ^ (c as u64));
    }
    if let Some(a) = aux {
        h = mix64(h ^ mix64(a ^ 0x5eed_5eed_5eed_5eed));
    }
    h
}

/// First local coordinate of a window of side `n` along each axis.
pub fn window_low(n: usize) -> i64 {
    -((n / 2) as i64)
}

/// One realization of the field viewed through a window of `n^d` cells.
#[derive(Debug, Clone)]
pub struct FieldRealization {
    dim: usize,
    n: usize,
    dist: DistributionSpec,
    seed: u64,
    /// Absolute coordinate of local site 0.
    origin: Site,
    negated: bool,
    /// Redrawn sites: absolute coordinate → auxiliary seed.
    aux: BTreeMap<Site, u64>,
    /// Explicitly assigned sites, stored before the sign flip.
    pinned: BTreeMap<Site, f64>,
    values: Vec<f64>,
}

impl PartialEq for FieldRealization {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.n == other.n
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl FieldRealization {
    /// Draws one i.i.d. value per site of the window centered at the origin.
    pub fn sample(dim: usize, n: usize, dist: DistributionSpec, seed: u64) -> Result<Self> {
        Self::sample_at(dim, n, dist, seed, [0; 3])
    }

    /// Same as [`sample`](Self::sample) for the window whose local site 0 sits
    /// at absolute coordinate `origin`.
    pub fn sample_at(
        dim: usize,
        n: usize,
        dist: DistributionSpec,
        seed: u64,
        origin: Site,
    ) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!("dim must be 1, 2 or 3, got {dim}")));
        }
        if n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        dist.validate()?;
        let mut origin = origin;
        origin[dim..].iter_mut().for_each(|c| *c = 0);
        let mut field = Self {
            dim,
            n,
            dist,
            seed,
            origin,
            negated: false,
            aux: BTreeMap::new(),
            pinned: BTreeMap::new(),
            values: Vec::new(),
        };
        field.materialize();
        Ok(field)
    }

    fn raw_value(&self, abs: &Site) -> f64 {
        if let Some(&v) = self.pinned.get(abs) {
            return v;
        }
        let seed = site_seed(self.seed, abs, self.dim, self.aux.get(abs).copied());
        let u: f64 = ChaCha8Rng::seed_from_u64(seed).random();
        self.dist.quantile(u)
    }

    fn materialize(&mut self) {
        let count = self.site_count();
        let mut values = Vec::with_capacity(count);
        for idx in 0..count {
            let abs = self.absolute(&self.site_at(idx));
            let v = self.raw_value(&abs);
            values.push(if self.negated { -v } else { v });
        }
        self.values = values;
    }

    fn absolute(&self, local: &Site) -> Site {
        let mut abs = [0; 3];
        for j in 0..self.dim {
            abs[j] = local[j] + self.origin[j];
        }
        abs
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dist(&self) -> &DistributionSpec {
        &self.dist
    }

    pub fn gmax(&self) -> f64 {
        self.dist.gmax
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn origin(&self) -> Site {
        self.origin
    }

    pub fn is_negated(&self) -> bool {
        self.negated
    }

    /// Site values in lexicographic order of local coordinates.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn site_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Human-readable description of how site values are derived.
    pub fn site_seed_rule(&self) -> &'static str {
        "splitmix64 chain over (master_seed, absolute coordinate, aux seed if redrawn) seeding ChaCha8"
    }

    pub fn contains(&self, site: &Site) -> bool {
        let lo = window_low(self.n);
        let hi = lo + self.n as i64 - 1;
        (0..3).all(|j| {
            if j < self.dim {
                (lo..=hi).contains(&site[j])
            } else {
                site[j] == 0
            }
        })
    }

    /// Position of a local site in [`values`](Self::values).
    pub fn index_of(&self, site: &Site) -> Result<usize> {
        if !self.contains(site) {
            return Err(Error::Domain(format!(
                "site {:?} outside window of side {}",
                &site[..self.dim],
                self.n
            )));
        }
        let lo = window_low(self.n);
        Ok((0..self.dim).fold(0usize, |acc, j| acc * self.n + (site[j] - lo) as usize))
    }

    pub fn site_at(&self, mut index: usize) -> Site {
        let lo = window_low(self.n);
        let mut site = [0; 3];
        for j in (0..self.dim).rev() {
            site[j] = lo + (index % self.n) as i64;
            index /= self.n;
        }
        site
    }

    /// Local sites in lexicographic order.
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.site_count()).map(move |i| self.site_at(i))
    }

    pub fn value(&self, site: &Site) -> Result<f64> {
        Ok(self.values[self.index_of(site)?])
    }

    /// `g(z, T_y ω) = g(z + y, ω)`.
    pub fn translate(&self, y: &Site) -> Self {
        let mut out = self.clone();
        for j in 0..self.dim {
            out.origin[j] += y[j];
        }
        out.materialize();
        out
    }

    pub fn negate(&self) -> Self {
        let mut out = self.clone();
        out.negated = !out.negated;
        out.values.iter_mut().for_each(|v| *v = -*v);
        out
    }

    /// Redraws the listed local sites from fresh streams keyed by
    /// `aux_seed`; every other site is left bit-identical.
    pub fn resample_sites(&self, sites: &[Site], aux_seed: u64) -> Result<Self> {
        let mut out = self.clone();
        for site in sites {
            let idx = self.index_of(site)?;
            let abs = self.absolute(site);
            out.pinned.remove(&abs);
            out.aux.insert(abs, aux_seed);
            let v = out.raw_value(&abs);
            out.values[idx] = if out.negated { -v } else { v };
        }
        Ok(out)
    }

    /// Sets one site to an explicit value.
    pub fn with_value(&self, site: &Site, value: f64) -> Result<Self> {
        let idx = self.index_of(site)?;
        let mut out = self.clone();
        let abs = self.absolute(site);
        out.pinned
            .insert(abs, if out.negated { -value } else { value });
        out.values[idx] = value;
        Ok(out)
    }

    /// The same realization seen through the concentric window of side `n`.
    pub fn with_window(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if (self.n + n) % 2 != 0 {
            return Err(Error::Config(format!(
                "windows {} and {n} are not concentric (parity differs)",
                self.n
            )));
        }
        let mut out = self.clone();
        out.n = n;
        out.materialize();
        Ok(out)
    }

    /// Lower corner of the closed box covered by the window.
    pub fn box_low(&self) -> f64 {
        window_low(self.n) as f64 - 0.5
    }

    /// Piecewise-constant extension `g₁(x)`; faces belong to the upper cell,
    /// except the top face of the box which closes the last cell.
    pub fn eval_g1(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Config(format!(
                "point has {} coordinates, field has dimension {}",
                x.len(),
                self.dim
            )));
        }
        let lo = self.box_low();
        let hi = lo + self.n as f64;
        let mut site = [0; 3];
        for (j, &xj) in x.iter().enumerate() {
            if !(lo..=hi).contains(&xj) {
                return Err(Error::Domain(format!("point {x:?} outside [{lo}, {hi}]^d")));
            }
            let cell = ((xj - lo).floor() as i64).min(self.n as i64 - 1);
            site[j] = window_low(self.n) + cell;
        }
        self.value(&site)
    }

    /// Order-sensitive hash of the materialized values.
    pub fn fingerprint(&self) -> u64 {
        let words: Vec<u64> = self.values.iter().map(|v| v.to_bits()).collect();
        derive_seed(self.n as u64 ^ ((self.dim as u64) << 32), &words)
    }

    /// Audit dump: one row per site with local coordinates and value.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("z{j}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (site, v) in self.sites().zip(&self.values) {
            let mut row: Vec<String> = site[..self.dim].iter().map(|c| c.to_string()).collect();
            row.push(format!("{v:e}"));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform() -> DistributionSpec {
        DistributionSpec::default()
    }

    #[test]
    fn sample_is_bounded_and_deterministic() {
        let a = FieldRealization::sample(1, 4, uniform(), 42).unwrap();
        let b = FieldRealization::sample(1, 4, uniform(), 42).unwrap();
        assert_eq!(a.values().len(), 4);
        assert!(a.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a, b);
        let c = FieldRealization::sample(1, 4, uniform(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_shapes_are_config_errors() {
        assert!(matches!(
            FieldRealization::sample(0, 4, uniform(), 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            FieldRealization::sample(4, 4, uniform(), 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            FieldRealization::sample(2, 0, uniform(), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empirical_mean_vanishes() {
        let mut sum = 0.0;
        let mut count = 0;
        for seed in 0..4000 {
            let f = FieldRealization::sample(2, 2, uniform(), seed).unwrap();
            sum += f.values().iter().sum::<f64>();
            count += f.values().len();
        }
        let mean = sum / count as f64;
        // SE of the mean is sqrt(1/3 / 16000) ≈ 4.6e-3
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn resample_is_local() {
        let f = FieldRealization::sample(1, 4, uniform(), 42).unwrap();
        let g = f.resample_sites(&[[0, 0, 0]], 7).unwrap();
        for site in f.sites() {
            let same = f.value(&site).unwrap().to_bits() == g.value(&site).unwrap().to_bits();
            assert_eq!(same, site != [0, 0, 0], "site {site:?}");
        }
        assert!(f.resample_sites(&[[5, 0, 0]], 7).is_err());
        assert_eq!(f.resample_sites(&[], 7).unwrap(), f);
    }

    #[test]
    fn resample_everything_matches_derived_streams() {
        let f = FieldRealization::sample(2, 3, uniform(), 9).unwrap();
        let all: Vec<Site> = f.sites().collect();
        let g = f.resample_sites(&all, 11).unwrap();
        let h = f.resample_sites(&all, 11).unwrap();
        assert_eq!(g, h);
        for site in f.sites() {
            let v = g.value(&site).unwrap();
            assert!(v.abs() <= 1.0);
            assert_ne!(v, f.value(&site).unwrap());
        }
    }

    #[test]
    fn translation_shifts_values() {
        let f = FieldRealization::sample(2, 6, uniform(), 3).unwrap();
        let y = [1, 0, 0];
        let t = f.translate(&y);
        for z in t.sites() {
            let shifted = [z[0] + 1, z[1], 0];
            if f.contains(&shifted) {
                assert_eq!(t.value(&z).unwrap(), f.value(&shifted).unwrap());
            }
        }
        assert_eq!(f.translate(&[0, 0, 0]), f);
        assert_eq!(t.translate(&[-1, 0, 0]), f);
        let direct = FieldRealization::sample_at(2, 6, uniform(), 3, y).unwrap();
        assert_eq!(direct, t);
    }

    #[test]
    fn negation_is_an_involution() {
        let f = FieldRealization::sample(2, 4, uniform(), 5).unwrap();
        let g = f.negate();
        assert!(g.is_negated());
        for (a, b) in f.values().iter().zip(g.values()) {
            assert_eq!(*a, -*b);
            assert!(b.abs() <= 1.0);
        }
        assert_eq!(g.negate(), f);
        // negation survives later re-windowing
        let big = g.with_window(8).unwrap();
        assert_eq!(big.value(&[0, 0, 0]).unwrap(), g.value(&[0, 0, 0]).unwrap());
    }

    #[test]
    fn pinned_values_follow_translation() {
        let f = FieldRealization::sample(1, 5, uniform(), 1).unwrap();
        let g = f.with_value(&[1, 0, 0], 0.25).unwrap();
        assert_eq!(g.translate(&[1, 0, 0]).value(&[0, 0, 0]).unwrap(), 0.25);
        assert_eq!(g.negate().value(&[1, 0, 0]).unwrap(), -0.25);
    }

    #[test]
    fn concentric_windows_agree() {
        let f = FieldRealization::sample(2, 4, uniform(), 8).unwrap();
        let big = f.with_window(10).unwrap();
        for z in f.sites() {
            assert_eq!(f.value(&z).unwrap(), big.value(&z).unwrap());
        }
        assert!(f.with_window(5).is_err());
    }

    #[test]
    fn g1_is_piecewise_constant_on_half_open_cells() {
        let f = FieldRealization::sample(1, 4, uniform(), 42).unwrap();
        // cells are centered at -2, -1, 0, 1; box is [-2.5, 1.5]
        for z in f.sites() {
            let c = z[0] as f64;
            assert_eq!(f.eval_g1(&[c]).unwrap(), f.value(&z).unwrap());
        }
        // lower-closed faces
        assert_eq!(f.eval_g1(&[-0.5]).unwrap(), f.value(&[0, 0, 0]).unwrap());
        assert_eq!(f.eval_g1(&[1.5]).unwrap(), f.value(&[1, 0, 0]).unwrap());
        assert!(matches!(f.eval_g1(&[1.6]), Err(Error::Domain(_))));
        assert!(matches!(f.eval_g1(&[0.0, 0.0]), Err(Error::Config(_))));
    }

    #[test]
    fn midpoint_quadrature_of_g1_over_a_cell() {
        let f = FieldRealization::sample(2, 3, uniform(), 4).unwrap();
        let m = 10;
        for z in f.sites() {
            let mut integral = 0.0;
            for a in 0..m {
                for b in 0..m {
                    let x = z[0] as f64 - 0.5 + (a as f64 + 0.5) / m as f64;
                    let y = z[1] as f64 - 0.5 + (b as f64 + 0.5) / m as f64;
                    integral += f.eval_g1(&[x, y]).unwrap() / (m * m) as f64;
                }
            }
            assert!((integral - f.value(&z).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_dump_has_one_row_per_site() {
        let f = FieldRealization::sample(2, 2, uniform(), 1).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("z0,z1,value"));
    }
}
