mod common;

use common::{cls_grad_error, mlm_grad_error};
use crisis_hmc::heads::HeadKind;

#[test]
fn mlm_gradients_match_finite_differences() {
    let (err, at) = mlm_grad_error(11);
    assert!(err < 1e-4, "max relative error {err:e} at {at}");
}

#[test]
fn head_gradients_match_finite_differences() {
    for kind in HeadKind::ALL {
        let (err, at) = cls_grad_error(kind, 0.3, 12);
        assert!(err < 1e-4, "{kind}: max relative error {err:e} at {at}");
    }
}

#[test]
fn gated_lcpn_gradients_match_finite_differences() {
    let (err, at) = common::cls_grad_error_with(HeadKind::Lcpn, true, 0.5, 4);
    assert!(err < 1e-4, "max relative error {err:e} at {at}");
}

