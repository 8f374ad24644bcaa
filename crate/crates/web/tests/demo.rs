use fedcontrib::Protocol;
use fedcontrib_web::{compare, simulate, DemoParams};

fn final_shares(r: &fedcontrib_web::DemoResult) -> Vec<f64> {
    r.clients
        .iter()
        .map(|c| *c.shares.last().unwrap())
        .collect()
}

#[test]
fn curves_cover_every_round_and_sum_to_one() {
    let r = simulate(&DemoParams::default()).unwrap();
    assert_eq!(r.clients.len(), 3);
    assert_eq!(r.accuracy.len(), 5);
    for round in 0..5 {
        let s: f64 = r.clients.iter().map(|c| c.shares[round]).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    assert!(
        r.test_accuracy > 0.5,
        "synthetic task should be learnable: {}",
        r.test_accuracy
    );
}

#[test]
fn bigger_client_earns_more() {
    let r = simulate(&DemoParams {
        ratios: vec![3, 1, 1],
        ..DemoParams::default()
    })
    .unwrap();
    let s = final_shares(&r);
    assert!(s[0] > s[1] && s[0] > s[2], "{s:?}");
    assert_eq!(r.clients[0].size, 900);
}

#[test]
fn flipping_costs_share() {
    let r = simulate(&DemoParams {
        ratios: vec![1, 1],
        flips: vec![0.0, 0.9],
        ..DemoParams::default()
    })
    .unwrap();
    let s = final_shares(&r);
    assert!(s[0] > s[1], "{s:?}");
}

#[test]
fn protocols_agree_on_equal_splits() {
    let c = compare(&DemoParams::default()).unwrap();
    assert_eq!(c.consortium.protocol, Protocol::Consortium);
    assert!(c.max_difference < 0.1, "{}", c.max_difference);
}

#[test]
fn mismatched_flip_list_is_rejected() {
    let err = simulate(&DemoParams {
        flips: vec![0.1],
        ..DemoParams::default()
    })
    .unwrap_err();
    assert!(err.contains("flip"));
}
