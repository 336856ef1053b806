//! Shared fixtures for the criterion benchmarks.

use fcascade_core::beam::{assemble, Beam, BeamParams};
use fcascade_core::probe::Prng;
use fcascade_core::wlinalg::Matrix;

pub fn beam_fixture(n: usize) -> Beam {
    assemble(&BeamParams { n, ..Default::default() }).expect("valid beam params")
}

/// Random Sylvester instance (Hurwitz A, skew S) of the given sizes.
pub fn sylvester_fixture(n: usize, m: usize, seed: u64) -> (Matrix, Matrix, Matrix) {
    let mut rng = Prng::new(seed);
    (rng.hurwitz(n, 0.5), rng.skew(m), rng.matrix(m, n))
}
