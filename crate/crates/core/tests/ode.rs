mod common;

use common::criteria::ode_check;

#[test]
fn euler_step_matches_closed_form_and_converges_quadratically() {
    let r = ode_check();
    assert!(r.closed_form_error < 1e-12, "{r:?}");
    assert!(r.graph_error < 1e-12, "{r:?}");
    for ratio in &r.ratios {
        assert!((3.5..=4.5).contains(ratio), "{r:?}");
    }
}
