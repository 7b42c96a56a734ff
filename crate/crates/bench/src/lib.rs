//! Fixed inputs shared by the benchmarks, so timings are comparable across
//! runs and machines.

use saddlelab::dataset::generate_uncentred;
use saddlelab::trainer::init_balanced;
use saddlelab::{Dataset, InitConfig, NetworkParams};

/// Uncentred dataset with `n = d` and a balanced network of width `m` at
/// scale `λ = 4⁻⁸`.
pub fn training_fixture(d: usize, m: usize) -> (Dataset, InitConfig, NetworkParams) {
    let ds = generate_uncentred(d, d, 7).expect("fixture dataset");
    let init = InitConfig::gaussian(d, m, 4f64.powi(-8), 0.25, 11).expect("fixture init");
    let params = init_balanced(&init);
    (ds, init, params)
}
