use lem_core::commitment::{
    normalize_errors, raw_error, simulate_response, update_scores, CommitmentLedger, ResponseModel,
};
use lem_core::secondary::DcaClearing;
use proptest::prelude::*;

fn cl(id: usize, p: f64, dp: f64) -> DcaClearing {
    DcaClearing {
        dca_id: id,
        p_star: p,
        q_star: 0.0,
        dp,
        dq: 0.0,
        mu_p: 0.1,
        mu_q: 0.01,
    }
}

fn model(follow_prob: f64, seed: u64) -> ResponseModel {
    ResponseModel {
        follow_prob,
        overshoot_scale: 0.5,
        noise_scale: 0.5,
        min_violation_kw: 0.1,
        rng_seed: seed,
    }
}

#[test]
fn raw_error_cases() {
    assert_eq!(raw_error(13.0, 10.0, 2.0), 1.0);
    assert_eq!(raw_error(7.0, 10.0, 2.0), 1.0);
    assert_eq!(raw_error(10.0, 10.0, 2.0), -2.0);
    assert_eq!(raw_error(12.0, 10.0, 2.0), 0.0);
}

#[test]
fn exact_followers_keep_their_scores() {
    let mut l = CommitmentLedger::new(vec![0, 1], 1000.0);
    l.scores = vec![0.7, 0.4];
    let c = [cl(0, -10.0, 0.0), cl(1, 5.0, 0.0)];
    l.update(&c, &[(-10.0, 0.0), (5.0, 0.0)]).unwrap();
    assert_eq!(l.scores, vec![0.7, 0.4]);
    assert_eq!(l.history.len(), 1);
}

#[test]
fn violator_loses_complier_gains() {
    let mut l = CommitmentLedger::new(vec![0, 1], 1000.0);
    l.scores = vec![0.5, 0.5];
    let delta = 2.0;
    let c = [cl(0, 10.0, 0.0), cl(1, -10.0, delta)];
    // DCA 0 overshoots by 1 kW on a 10 kW setpoint; DCA 1 sits at its band centre
    let rec = l.update(&c, &[(11.0, 0.0), (-10.0, 0.0)]).unwrap().clone();
    let e: [f64; 2] = [0.1, -delta / 10.0];
    let n = (e[0] * e[0] + e[1] * e[1]).sqrt();
    assert!((rec.norm_p[0] - e[0] / n).abs() < 1e-12);
    assert!((rec.norm_p[1] - e[1] / n).abs() < 1e-12);
    assert!((l.scores[0] - (0.5 - e[0] / n / 2.0)).abs() < 1e-12);
    assert!((l.scores[1] - (0.5 - e[1] / n / 2.0)).abs() < 1e-12);
    assert!(l.scores[0] < 0.5 && l.scores[1] > 0.5);
}

#[test]
fn score_clamps_at_zero() {
    let mut l = CommitmentLedger::new(vec![0], 1000.0);
    l.scores = vec![0.01];
    l.update(&[cl(0, 10.0, 0.0)], &[(50.0, 0.0)]).unwrap();
    assert_eq!(l.scores, vec![0.0]);
}

#[test]
fn zero_setpoint_guard() {
    // 1 kW floor at a 1000 kW base
    let n = normalize_errors(&[0.5, 0.5], &[0.0, 10.0], 1000.0);
    let e: [f64; 2] = [0.5 / 1.0, 0.5 / 10.0];
    let norm = (e[0] * e[0] + e[1] * e[1]).sqrt();
    assert!((n[0] - e[0] / norm).abs() < 1e-12);
    assert!(n.iter().all(|v| v.is_finite()));
}

#[test]
fn length_mismatch_is_an_error() {
    let l = CommitmentLedger::new(vec![0, 1], 1000.0);
    assert!(update_scores(&l, &[cl(0, 1.0, 0.0)], &[(1.0, 0.0)]).is_err());
}

#[test]
fn response_construction() {
    let c = [cl(0, 10.0, 2.0)];
    let exact = ResponseModel {
        noise_scale: 0.0,
        ..model(1.0, 1)
    };
    assert_eq!(simulate_response(&[exact], &c, 3)[0].0, 10.0);
    for step in 0..50 {
        let p = simulate_response(&[model(0.0, 9)], &c, step)[0].0;
        let edge_dist = (p - 12.0).abs().min((p - 8.0).abs());
        assert!((edge_dist - 1.0).abs() < 1e-12);
        assert!(!(8.0..=12.0).contains(&p));
    }
    let a: Vec<_> = (0..20).map(|s| simulate_response(&[model(0.8, 42)], &c, s)).collect();
    let b: Vec<_> = (0..20).map(|s| simulate_response(&[model(0.8, 42)], &c, s)).collect();
    assert_eq!(a, b);
}

#[test]
fn follower_never_below_defector() {
    let mut l = CommitmentLedger::new(vec![0, 1], 1000.0);
    let models = [model(1.0, 5), model(0.0, 5)];
    for step in 0..100 {
        let c = [cl(0, -10.0 - (step % 7) as f64, 2.0), cl(1, -10.0 - (step % 7) as f64, 2.0)];
        let acts = simulate_response(&models, &c, step);
        l.update(&c, &acts).unwrap();
        assert!(l.scores[0] >= l.scores[1]);
    }
}

proptest! {
    #[test]
    fn normalization_is_scale_invariant(
        raw in prop::collection::vec(-5.0f64..5.0, 1..6),
        k in 0.01f64..100.0,
    ) {
        let sp: Vec<f64> = raw.iter().enumerate().map(|(i, _)| 3.0 + i as f64).collect();
        let a = normalize_errors(&raw, &sp, 1000.0);
        let scaled: Vec<f64> = raw.iter().map(|e| e * k).collect();
        let b = normalize_errors(&scaled, &sp, 1000.0);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn sign_of_contribution(
        sps in prop::collection::vec(1.0f64..20.0, 2..5),
        offsets in prop::collection::vec(-3.0f64..3.0, 5),
    ) {
        let dp = 1.0;
        let c: Vec<_> = sps.iter().enumerate().map(|(i, &p)| cl(i, p, dp)).collect();
        let acts: Vec<_> = c.iter().zip(&offsets).map(|(c, o)| (c.p_star + o, 0.0)).collect();
        let mut l = CommitmentLedger::new((0..c.len()).collect(), 1000.0);
        l.scores = vec![0.5; c.len()];
        l.update(&c, &acts).unwrap();
        for (j, o) in offsets.iter().take(c.len()).enumerate() {
            if o.abs() < dp {
                prop_assert!(l.scores[j] >= 0.5);
            } else if o.abs() > dp {
                prop_assert!(l.scores[j] < 0.5);
            }
        }
    }

    #[test]
    fn scores_stay_in_unit_interval(
        probs in prop::collection::vec(0.0f64..=1.0, 3),
        seed in any::<u64>(),
    ) {
        let models: Vec<_> = probs.iter().map(|&p| model(p, seed)).collect();
        let mut l = CommitmentLedger::new(vec![0, 1, 2], 1000.0);
        for step in 0..200 {
            let c = [cl(0, -8.0, 1.0), cl(1, 3.0, 0.5), cl(2, 0.0, 0.0)];
            let acts = simulate_response(&models, &c, step);
            l.update(&c, &acts).unwrap();
            prop_assert!(l.scores.iter().all(|s| (0.0..=1.0).contains(s)));
        }
    }
}
