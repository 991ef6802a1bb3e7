use lem_core::secondary::{
    budget_rhs, clear_sm, clear_sm_relaxed, feasibility_check, recover_prices, BudgetLedger,
    BudgetMode, DcaBid, Money, SmError, SmParams, SmRequest,
};
use proptest::prelude::*;

const DT: f64 = 1.0 / 60.0;

fn bid(id: usize, p0: f64, p_lo: f64, p_hi: f64) -> DcaBid {
    DcaBid {
        dca_id: id,
        p0,
        q0: 0.0,
        p_lo,
        p_hi,
        q_lo: 0.0,
        q_hi: 0.0,
        beta_p: 0.5,
        beta_q: 0.5,
    }
}

fn generous() -> Money {
    Money { p: 1e6, q: 1e6 }
}

fn clear(bids: &[DcaBid], scores: &[f64], setpoint: (f64, f64), budget: Money) -> lem_core::secondary::SmClearing {
    let fb = vec![(0.05, 0.005); bids.len()];
    clear_sm(
        &SmRequest {
            bids,
            scores,
            setpoint,
            budget,
            fallback_tariffs: &fb,
        },
        &SmParams::default(),
    )
    .unwrap()
}

#[test]
fn single_dca_gets_the_widest_band() {
    let bids = [bid(0, -10.0, -15.0, -5.0)];
    let c = clear(&bids, &[1.0], (-10.0, 0.0), generous());
    let d = c.dcas[0];
    assert!((d.p_star + 10.0).abs() < 1e-6);
    assert!((d.dp - 5.0).abs() < 1e-5);
}

#[test]
fn trusted_dca_takes_more_injection() {
    let bids = [bid(0, -10.0, -15.0, -5.0), bid(1, -10.0, -15.0, -5.0)];
    let scores = [1.0, 0.2];
    let c = clear(&bids, &scores, (-20.0, 0.0), generous());
    let (p1, p2) = (c.dcas[0].p_star, c.dcas[1].p_star);
    assert!(p1.abs() >= p2.abs() - 1e-6, "{p1} {p2}");

    // brute-force the stage-1 surrogate −Σ C·sgn(P0)·P on a grid along the balance line
    let best = (0..=1000)
        .map(|i| -15.0 + 10.0 * i as f64 / 1000.0)
        .filter(|&a| (-15.0..=-5.0).contains(&(-20.0 - a)))
        .map(|a| -(scores[0] * -a + scores[1] * -(-20.0 - a)))
        .fold(f64::INFINITY, f64::min);
    assert!(c.stage_optima[0] <= best + 1e-6);
}

#[test]
fn loads_with_no_budget_pay_the_ceiling() {
    let bids = [bid(0, -10.0, -12.0, -8.0)];
    let c = clear(&bids, &[1.0], (-10.0, 0.0), Money { p: 0.0, q: 0.0 });
    assert_eq!(c.dcas[0].mu_p, 0.2);
    assert!(!c.price_infeasible);
}

#[test]
fn out_of_range_setpoint_is_reported_then_relaxed() {
    let bids = [bid(0, -10.0, -15.0, -5.0)];
    let fb = [(0.05, 0.005)];
    let req = SmRequest {
        bids: &bids,
        scores: &[1.0],
        setpoint: (-20.0, 0.0),
        budget: generous(),
        fallback_tariffs: &fb,
    };
    let err = clear_sm(&req, &SmParams::default()).unwrap_err();
    assert!(matches!(err, SmError::InfeasibleSetpoint { gap_p, .. } if (gap_p + 5.0).abs() < 1e-12));
    let (c, gap) = clear_sm_relaxed(&req, &SmParams::default()).unwrap();
    assert!((c.dcas[0].p_star + 15.0).abs() < 1e-6);
    assert_eq!(gap.p, -5.0);
    assert_eq!(c.enforced_setpoint, (-15.0, 0.0));
}

#[test]
fn feasibility_check_cases() {
    let bids = [bid(0, -15.0, -20.0, -5.0), bid(1, -7.0, -10.0, -5.0)];
    assert!(feasibility_check(&bids, (-20.0, 0.0)).is_ok());
    let g = feasibility_check(&bids, (-35.0, 0.0));
    assert_eq!(g.p, -5.0);
    assert_eq!(g.magnitude(), 5.0);
    assert!(feasibility_check(&[], (0.0, 0.0)).is_ok());
    assert_eq!(feasibility_check(&[], (3.0, 0.0)).magnitude(), 3.0);
}

#[test]
fn budget_rhs_modes() {
    let mut l = BudgetLedger::new(BudgetMode::QuasiMultiperiod, 5);
    l.credit_period(Money { p: 10.0, q: 1.0 }, 3);
    l.debit(Money { p: 4.0, q: 0.0 });
    l.remaining_secondary_clearings = 3;
    assert!((budget_rhs(&l).unwrap().p - 2.0).abs() < 1e-12);

    let mut s = BudgetLedger::new(BudgetMode::Strict, 5);
    s.credit_period(Money { p: 1.5, q: 0.0 }, 5);
    assert_eq!(budget_rhs(&s).unwrap().p, 1.5);
    s.debit(Money { p: 0.5, q: 0.0 });
    assert_eq!(budget_rhs(&s).unwrap().p, 1.0);

    let mut r = BudgetLedger::new(BudgetMode::Relaxed, 5);
    for _ in 0..288 {
        r.credit_period(Money { p: 0.01, q: 0.0 }, 5);
    }
    assert!((budget_rhs(&r).unwrap().p - 2.88).abs() < 1e-9);

    let mut z = BudgetLedger::new(BudgetMode::QuasiMultiperiod, 5);
    z.credit_period(Money::default(), 1);
    z.debit(Money::default());
    assert_eq!(budget_rhs(&z), Err(SmError::ZeroRemainingClearings));
}

#[test]
fn budget_mode_parses() {
    assert_eq!("quasi".parse::<BudgetMode>().unwrap(), BudgetMode::QuasiMultiperiod);
    assert_eq!("strict".parse::<BudgetMode>().unwrap(), BudgetMode::Strict);
    assert!("loose".parse::<BudgetMode>().is_err());
}

#[test]
fn recover_prices_cases() {
    // net load: revenue-maximal ceiling
    assert_eq!(recover_prices(&[-10.0], 1.0, 0.2, DT, &[0.0]).unwrap(), vec![0.2]);
    // net generator: f₂ = μ·P is minimized at μ = 0, which meets a $0.10 budget
    assert_eq!(recover_prices(&[10.0], 0.10, 0.2, DT, &[0.0]).unwrap(), vec![0.0]);
    // zero injection keeps the previous tariff
    assert_eq!(recover_prices(&[0.0], 0.0, 0.2, DT, &[0.07]).unwrap(), vec![0.07]);
    // a budget that demands more revenue than the ceiling can raise
    let err = recover_prices(&[-10.0], -1.0, 0.2, DT, &[0.0]).unwrap_err();
    assert_eq!(err.tariffs, vec![0.2]);
    assert!((err.best + 10.0 * 0.2 * DT).abs() < 1e-12);
}

#[test]
fn invalid_inputs_rejected() {
    let bad = bid(3, -20.0, -15.0, -5.0);
    let fb = [(0.0, 0.0)];
    let req = SmRequest {
        bids: &[bad],
        scores: &[1.0],
        setpoint: (-10.0, 0.0),
        budget: generous(),
        fallback_tariffs: &fb,
    };
    assert_eq!(clear_sm(&req, &SmParams::default()).unwrap_err(), SmError::InvalidBid(3));
    let ok = bid(0, -10.0, -15.0, -5.0);
    let req = SmRequest {
        bids: &[ok],
        scores: &[1.5],
        ..req
    };
    assert!(matches!(clear_sm(&req, &SmParams::default()), Err(SmError::InvalidScore(_))));
}

fn arb_bid(id: usize) -> impl Strategy<Value = DcaBid> {
    (
        -40.0f64..40.0,
        0.0f64..0.5,
        0.0f64..0.5,
        0.0f64..0.5,
        0.0f64..0.5,
        0.1f64..1.0,
        0.1f64..1.0,
    )
        .prop_map(move |(p0, a, b, c, d, bp, bq)| {
            let q0 = 0.33 * p0;
            let (p_lo, p_hi) = ordered(p0 * (1.0 - a), p0 * (1.0 + b));
            let (q_lo, q_hi) = ordered(q0 * (1.0 - c), q0 * (1.0 + d));
            DcaBid {
                dca_id: id,
                p0,
                q0,
                p_lo,
                p_hi,
                q_lo,
                q_hi,
                beta_p: bp,
                beta_q: bq,
            }
        })
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    (a.min(b), a.max(b))
}

fn arb_instance() -> impl Strategy<Value = (Vec<DcaBid>, Vec<f64>, f64, f64, f64)> {
    (1usize..=5)
        .prop_flat_map(|n| {
            (
                (0..n).map(arb_bid).collect::<Vec<_>>(),
                prop::collection::vec(0.0f64..=1.0, n),
                0.0f64..=1.0,
                0.0f64..=1.0,
                -0.05f64..0.05,
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn clearing_invariants((bids, scores, tp, tq, budget) in arb_instance()) {
        let lo: f64 = bids.iter().map(|b| b.p_lo).sum();
        let hi: f64 = bids.iter().map(|b| b.p_hi).sum();
        let qlo: f64 = bids.iter().map(|b| b.q_lo).sum();
        let qhi: f64 = bids.iter().map(|b| b.q_hi).sum();
        let setpoint = (lo + tp * (hi - lo), qlo + tq * (qhi - qlo));
        let budget = Money { p: budget, q: budget / 10.0 };
        let c = clear(&bids, &scores, setpoint, budget);
        let tol = 1e-3; // 1e-6 pu in kW
        prop_assert!((c.total_p() - setpoint.0).abs() <= tol);
        prop_assert!((c.total_q() - setpoint.1).abs() <= tol);
        for (b, d) in bids.iter().zip(&c.dcas) {
            prop_assert!(d.p_star - d.dp >= b.p_lo - 1e-6);
            prop_assert!(d.p_star + d.dp <= b.p_hi + 1e-6);
            prop_assert!(d.q_star - d.dq >= b.q_lo - 1e-6);
            prop_assert!(d.q_star + d.dq <= b.q_hi + 1e-6);
            prop_assert!(d.dp >= 0.0 && d.dq >= 0.0);
            prop_assert!((0.0..=0.2).contains(&d.mu_p) && (0.0..=0.2).contains(&d.mu_q));
        }
        let (pay_p, pay_q) = c.payout(DT);
        if !c.price_infeasible {
            prop_assert!(pay_p <= budget.p + 1e-9);
            prop_assert!(pay_q <= budget.q + 1e-9);
        }
        for k in 0..3 {
            let slack = 1e-6 * (1.0 + c.stage_optima[k].abs());
            prop_assert!(c.stage_values[k] <= c.stage_caps[k] + slack,
                "stage {k}: {} > {}", c.stage_values[k], c.stage_caps[k]);
        }
    }

    #[test]
    fn higher_score_never_gets_less(
        b in arb_bid(0),
        other in arb_bid(2),
        s_hi in 0.5f64..=1.0,
        s_lo in 0.0f64..0.5,
        t in 0.0f64..=1.0,
    ) {
        let twin = DcaBid { dca_id: 1, ..b };
        let bids = [b, twin, other];
        let lo: f64 = bids.iter().map(|b| b.p_lo).sum();
        let hi: f64 = bids.iter().map(|b| b.p_hi).sum();
        let q: f64 = bids.iter().map(|b| b.q0).sum();
        let c = clear(&bids, &[s_hi, s_lo, 0.7], (lo + t * (hi - lo), q), generous());
        prop_assert!(c.dcas[0].p_star.abs() >= c.dcas[1].p_star.abs() - 1e-4,
            "{} vs {}", c.dcas[0].p_star, c.dcas[1].p_star);
    }
}

/// Each stage optimum must be at least as good as the best point of a 101-point
/// grid along the balance line that respects the engine's own earlier caps.
#[test]
fn stages_beat_grid_on_two_dca_instances() {
    let cases = [
        ([bid(0, -10.0, -14.0, -6.0), bid(1, 6.0, 3.0, 9.0)], [1.0, 0.4], -3.0),
        ([bid(0, -20.0, -25.0, -12.0), bid(1, -8.0, -11.0, -4.0)], [0.3, 0.9], -26.0),
        ([bid(0, 12.0, 8.0, 15.0), bid(1, -5.0, -7.0, -2.0)], [0.6, 0.6], 8.0),
    ];
    for (bids, scores, sp) in cases {
        let c = clear(&bids, &scores, (sp, 0.0), generous());
        let mut grid = Vec::new();
        for i in 0..=100 {
            let p1 = bids[0].p_lo + (bids[0].p_hi - bids[0].p_lo) * i as f64 / 100.0;
            let p2 = sp - p1;
            if p2 < bids[1].p_lo || p2 > bids[1].p_hi {
                continue;
            }
            let p = [p1, p2];
            let f1: f64 = (0..2).map(|j| -scores[j] * bids[j].p0.signum() * p[j]).sum();
            let f2: f64 = p.iter().map(|&x| if x < 0.0 { 0.2 * x * DT } else { 0.0 }).sum();
            let f3: f64 = (0..2).map(|j| -(p[j] - bids[j].p_lo).min(bids[j].p_hi - p[j])).sum();
            let f4: f64 = (0..2).map(|j| bids[j].beta_p * (p[j] - bids[j].p0).powi(2)).sum();
            grid.push([f1, f2, f3, f4]);
        }
        assert!(!grid.is_empty());
        let mut feasible = grid.clone();
        for k in 0..4 {
            let best = feasible.iter().map(|g| g[k]).fold(f64::INFINITY, f64::min);
            assert!(
                c.stage_optima[k] <= best + 1e-6 * (1.0 + best.abs()),
                "stage {k}: engine {} grid {best}",
                c.stage_optima[k]
            );
            if k < 3 {
                feasible.retain(|g| g[k] <= c.stage_caps[k]);
                if feasible.is_empty() {
                    break;
                }
            }
        }
    }
}
