//! Fixtures shared by the benches.

use rfac_core::{FieldRealization, GridSpec, Lab};

pub const SEED: u64 = 0x5eed;
pub const THETA: f64 = 0.5;

pub struct Fixture {
    pub lab: Lab,
    pub field: FieldRealization,
    pub grid: GridSpec,
}

/// Standard lab and the first realization on a box of side `n`.
pub fn fixture(dim: usize, n: usize) -> Fixture {
    let lab = Lab::standard(dim).expect("standard lab");
    let (_, field) = lab.realization(SEED, n, 0, false).expect("field");
    let grid = lab.grid(n).expect("grid");
    Fixture { lab, field, grid }
}
