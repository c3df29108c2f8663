//! Every differentiable primitive against central finite differences.

mod support;

use support::gradcheck::{run_all, TOLERANCE};

#[test]
fn primitives_match_finite_differences() {
    for (name, err) in run_all(0x6a09_e667) {
        assert!(err < TOLERANCE, "{name}: relative error {err:e}");
    }
}
