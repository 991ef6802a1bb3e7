use lem_core::data::*;
use lem_core::grid::build_feeder;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TWO_NODE: &str = "node_id,timestamp_iso8601,P_kW,Q_kvar
1,2024-07-01T07:00:00,-10.5,-3.2
1,2024-07-01T07:01:00,-11,-3.3
1,2024-07-01T07:02:00,-12,-3.4
2,2024-07-01T07:00:00,4,0
2,2024-07-01T07:01:00,4.5,0
2,2024-07-01T07:02:00,5,0
";

#[test]
fn reads_well_formed_profiles() {
    let s = ProfileSeries::read(TWO_NODE.as_bytes()).unwrap();
    assert_eq!(s.nodes.len(), 2);
    assert!(s.nodes.values().all(|v| v.len() == 3));
    assert_eq!(s.at(1, 1), Some((-11.0, -3.3)));
    assert_eq!(s.cadence_minutes, 1);
}

#[test]
fn gap_is_reported_with_the_missing_minute() {
    let text = "node_id,timestamp_iso8601,P_kW,Q_kvar
1,2024-07-01T07:01:00,1,0
1,2024-07-01T07:02:00,1,0
1,2024-07-01T07:04:00,1,0
";
    match ProfileSeries::read(text.as_bytes()) {
        Err(DataError::GapInSeries(at)) => assert_eq!(at, "07:03"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_column_is_named() {
    let text = "node_id,timestamp_iso8601,P_kW\n1,2024-07-01T07:00:00,1\n";
    match ProfileSeries::read(text.as_bytes()) {
        Err(DataError::SchemaMismatch(m)) => assert!(m.contains("Q_kvar"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn backwards_timestamps_are_rejected() {
    let text = "node_id,timestamp_iso8601,P_kW,Q_kvar
1,2024-07-01T07:00:00,1,0
1,2024-07-01T07:01:00,1,0
1,2024-07-01T07:00:30,1,0
";
    assert!(matches!(
        ProfileSeries::read(text.as_bytes()),
        Err(DataError::NonMonotoneTimestamps(_))
    ));
    assert!(matches!(
        ProfileSeries::read("node_id,timestamp_iso8601,P_kW,Q_kvar\n".as_bytes()),
        Err(DataError::MissingProfiles)
    ));
}

#[test]
fn series_round_trip() {
    let s = ProfileSeries::read(TWO_NODE.as_bytes()).unwrap();
    let mut buf = Vec::new();
    s.write(&mut buf).unwrap();
    assert_eq!(ProfileSeries::read(buf.as_slice()).unwrap(), s);

    let lmp = gen_synthetic_lmp(&SyntheticParams::default(), 60, 3).unwrap();
    assert_eq!(lmp.values.len(), 12);
    let mut buf = Vec::new();
    lmp.write(&mut buf).unwrap();
    let back = LmpSeries::read(buf.as_slice()).unwrap();
    assert_eq!(back, lmp);
    assert_eq!(back.at_minute(7), Some(lmp.values[1]));
}

#[test]
fn disaggregation_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let parts = disaggregate_node(-30.0, -10.0, 3, &mut rng);
    assert_eq!(parts.len(), 3);
    assert!((parts.iter().map(|p| p.0).sum::<f64>() + 30.0).abs() < 1e-12);

    let parts = disaggregate_node(4.0, 0.0, 3, &mut rng);
    assert!(parts.iter().any(|p| p.0 > 0.0));

    let a = disaggregate_node(-17.0, -5.0, 5, &mut ChaCha8Rng::seed_from_u64(9));
    let b = disaggregate_node(-17.0, -5.0, 5, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);
}

#[test]
fn split_tags_generators_and_loads() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 2..=5 {
        let split = DcaSplit::draw(n, (0.1, 0.5), &mut rng);
        assert!(split.n_gen >= 1 && split.n_gen < n);
        let parts = split.apply(-50.0, -15.0);
        for (j, p) in parts.iter().enumerate().take(n - 1) {
            assert_eq!(p.0 > 0.0, split.is_generator(j));
        }
    }
}

#[test]
fn flexibility_examples() {
    let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12;
    assert!(close(flex_interval(10.0, 0.2, 0.4), (8.0, 14.0)));
    assert!(close(flex_interval(-10.0, 0.2, 0.4), (-14.0, -8.0)));
    assert_eq!(flex_interval(0.0, 0.3, 0.1), (0.0, 0.0));
}

#[test]
fn generated_bids_are_ordered() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..100_000 {
        let p0 = ((k * 7919) % 2001) as f64 / 10.0 - 100.0;
        let q0 = -p0 / 3.0;
        let (pl, ph, ql, qh) = gen_flexibility_bids(p0, q0, &mut rng, 0.5);
        assert!(pl <= p0 && p0 <= ph && ql <= q0 && q0 <= qh);
        assert!(ph - pl <= p0.abs() + 1e-12);
    }
}

proptest! {
    #[test]
    fn disaggregation_conserves(p in -500.0f64..500.0, q in -200.0f64..200.0, n in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = disaggregate_node(p, q, n, &mut rng);
        prop_assert_eq!(parts.len(), n);
        let sp: f64 = parts.iter().map(|x| x.0).sum();
        let sq: f64 = parts.iter().map(|x| x.1).sum();
        prop_assert!((sp - p).abs() <= 1e-12 * p.abs().max(1.0));
        prop_assert!((sq - q).abs() <= 1e-12 * q.abs().max(1.0));
    }
}

fn load_only_peak(s: &SyntheticFeeder, pf: f64) -> f64 {
    let tan_phi = (1.0 - pf * pf).sqrt() / pf;
    (0..s.profiles.len())
        .map(|m| s.profiles.nodes.values().map(|v| -v[m].1 / tan_phi).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn synthetic_defaults_meet_scale_targets() {
    let params = SyntheticParams::default();
    let s = gen_synthetic_feeder(&params, 1440, 42).unwrap();
    assert_eq!(s.feeder.nodes.len(), 80);
    assert_eq!(s.profiles.nodes.len(), 79);
    assert_eq!(s.profiles.len(), 1440);
    assert_eq!(s.lmp.values.len(), 288);
    let peak = load_only_peak(&s, params.power_factor);
    assert!((peak - 3600.0).abs() <= 36.0, "{peak}");
    let pv: f64 = s.pv_nameplate_kw.values().sum();
    assert!((pv - 510.3).abs() < 1e-9, "{pv}");
    assert_eq!(s.pv_nameplate_kw.keys().copied().collect::<Vec<_>>(), vec![5, 20, 50, 63, 94]);
    let net = build_feeder(&s.feeder).unwrap();
    assert_eq!(net.slack_id(), 149);
    assert!(s.lmp.values.iter().all(|v| (0.03..=0.08).contains(v)));
    // PV output never exceeds nameplate
    for (id, cap) in &s.pv_nameplate_kw {
        let max_net = s.profiles.nodes[id].iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
        assert!(max_net <= *cap);
    }
}

#[test]
fn small_synthetic_scenario_is_reproducible() {
    let params = SyntheticParams {
        n_smo: 3,
        ..SyntheticParams::default()
    };
    let a = gen_synthetic_feeder(&params, 30, 7).unwrap();
    let b = gen_synthetic_feeder(&params, 30, 7).unwrap();
    assert_eq!(a.feeder, b.feeder);
    assert_eq!(a.profiles, b.profiles);
    assert_eq!(a.lmp, b.lmp);
    assert_eq!(a.feeder.nodes.len(), 4);
    let c = gen_synthetic_feeder(&params, 30, 8).unwrap();
    assert_ne!(a.profiles, c.profiles);
}

#[test]
fn config_defaults_and_validation() {
    let cfg = ScenarioConfig::from_toml_str("").unwrap();
    assert_eq!(cfg, ScenarioConfig::default());
    assert_eq!(cfg.market.price_cap_p, 0.2);
    assert_eq!(cfg.dca.count, (3, 5));
    assert_eq!(cfg.n_s(), 5);
    let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(back, cfg);

    let cfg = ScenarioConfig::from_toml_str("seed = 7\n[market]\nbudget_mode = \"strict\"\n").unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.market.budget_mode, lem_core::secondary::BudgetMode::Strict);

    for bad in [
        "[dca]\nbeta = [1.0, 0.1]\n",
        "[dca]\ncount = [0, 3]\n",
        "horizon_minutes = 7\n",
        "dt_p_minutes = 7\n",
        "unknown = 1\n",
    ] {
        assert!(ScenarioConfig::from_toml_str(bad).is_err(), "{bad}");
    }
}

fn sample_results(n: usize, mode: RunMode) -> RunResults {
    let mut r = RunResults::new(mode, 5);
    for k in 0..n {
        let t = format!("2024-07-01T00:{:02}:00", k * 5);
        let x = k as f64 * 0.1 + 1.0 / 3.0;
        r.sm.push(SmRow {
            t: t.clone(),
            smo: 3,
            dca: k,
            p_star: -x,
            dp: x / 7.0,
            q_star: x * 1e-9,
            dq: 0.0,
            mu_p: 0.2,
            mu_q: 0.0,
            score: 1.0 - x / 10.0,
        });
        r.pm.push(PmRow {
            t: t.clone(),
            node: 3,
            p_net: -x * 100.0,
            q_net: -x * 33.3,
            v_sq: 0.98 + x * 1e-3,
            dlmp_p: 0.05 + x * 1e-3,
            dlmp_q: 0.005,
        });
        r.lines.push(LineRow {
            t: t.clone(),
            from: 0,
            to: 3,
            p: x,
            q: x / 3.0,
            l: x * x,
            socp_gap: 1e-9 * x,
        });
        r.bids.push(BidRow {
            t: t.clone(),
            node: 3,
            pg_lo: 0.0,
            pg_hi: x,
            pl_lo: x,
            pl_hi: 2.0 * x,
            p_lo: -2.0 * x,
            p_hi: 0.0,
        });
        r.totals.push(TotalsRow {
            t,
            p_pcc: x * 100.0,
            q_pcc: x * 30.0,
            losses_kw: x,
            lambda_p: 0.05,
            objective: x * 8.0,
            max_socp_gap: 1e-9 * x,
        });
    }
    r
}

#[test]
fn export_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let r = sample_results(7, RunMode::WithSmo);
    export_results(&r, dir.path()).unwrap();
    assert_eq!(load_results(dir.path(), RunMode::WithSmo, 5).unwrap(), r);

    let empty = RunResults::new(RunMode::PmOnly, 5);
    let dir = tempfile::tempdir().unwrap();
    export_results(&empty, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(SM_FILE)).unwrap();
    assert_eq!(text, "t,smo,dca,P_star,dP,Q_star,dQ,mu_P,mu_Q,score\n");
    let text = std::fs::read_to_string(dir.path().join(PM_FILE)).unwrap();
    assert_eq!(text, "t,node,P_net,Q_net,v_sq,dlmp_P,dlmp_Q\n");
    let text = std::fs::read_to_string(dir.path().join(LINES_FILE)).unwrap();
    assert_eq!(text, "t,from,to,P,Q,l,socp_gap\n");
    assert_eq!(load_results(dir.path(), RunMode::PmOnly, 5).unwrap(), empty);
}

#[test]
fn metrics_behave() {
    let r = sample_results(4, RunMode::WithSmo);
    let m = report_metrics(&r, 0);
    let c = compare_metrics(&m, &m, 0.129).unwrap();
    assert_eq!(
        (c.delta_dlmp_p, c.delta_retail, c.delta_losses_kwh, c.delta_slack_import_kwh),
        (0.0, 0.0, 0.0, 0.0)
    );
    // retail is the plain mean of DCA tariffs
    assert!((m.avg_retail - 0.2).abs() < 1e-15);
    assert_eq!(m.horizon_minutes, 20);
    assert_eq!(m.sm_clearings, 4);

    // equal |P| weights reduce to the arithmetic mean
    let mut u = sample_results(3, RunMode::PmOnly);
    for row in &mut u.pm {
        row.p_net = -50.0;
    }
    let mu = report_metrics(&u, 0);
    let plain = u.pm.iter().map(|r| r.dlmp_p).sum::<f64>() / 3.0;
    assert!((mu.avg_dlmp_p - plain).abs() < 1e-15);
    assert_eq!(mu.avg_retail, mu.avg_dlmp_p);

    assert!(matches!(
        compare_metrics(&m, &mu, 0.129),
        Err(DataError::IncompatibleHorizons(20, 15))
    ));
}
