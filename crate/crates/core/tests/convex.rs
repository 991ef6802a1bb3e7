use lem_core::convex::{
    lexicographic_solve, solve, ConvexProgram, LexiConfig, LexiError, LinExpr, Objective, Sense,
    SolverSettings, Stage, Status,
};
use proptest::prelude::*;

fn settings() -> SolverSettings {
    SolverSettings::default()
}

#[test]
fn quadratic_with_bound() {
    let mut p = ConvexProgram::new();
    let x = p.add_var("x", 1.0, f64::INFINITY);
    p.set_objective(Objective::zero().with_square(1.0, x));
    let s = solve(&p, &settings());
    assert!(s.is_optimal());
    assert!((s.value(x) - 1.0).abs() < 1e-6);
    assert!((s.objective - 1.0).abs() < 1e-6);
    assert!((s.bound_duals[0].0 - 2.0).abs() < 1e-5);
    assert!(s.bound_duals[0].1.abs() < 1e-9);

    // same thing written as a row
    let mut p = ConvexProgram::new();
    let x = p.add_free_var("x");
    let c = p.add_ge("x_ge_1", x, 1.0);
    p.set_objective(Objective::zero().with_square(1.0, x));
    let s = solve(&p, &settings());
    assert!((s.dual_of(c).unwrap() - 2.0).abs() < 1e-5);
}

#[test]
fn rotated_cone_is_tight() {
    let mut p = ConvexProgram::new();
    let c = p.add_var("c", 0.0, f64::INFINITY);
    p.add_rotated_cone(
        "cone",
        vec![LinExpr::constant(3.0), LinExpr::constant(4.0)],
        c,
        LinExpr::constant(1.0),
    );
    p.set_objective(Objective::linear(c));
    let s = solve(&p, &settings());
    assert!(s.is_optimal());
    assert!((s.value(c) - 25.0).abs() < 1e-5);
}

#[test]
fn lp_dual_matches_grid_search() {
    let build = |rhs: f64| {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 0.0, 1.0);
        let y = p.add_var("y", 0.0, 1.0);
        p.add_le("cap", x + y, rhs);
        p.set_objective(Objective::linear(-(x + y)));
        p
    };
    let p = build(1.0);
    let s = solve(&p, &settings());
    assert!((s.objective + 1.0).abs() < 1e-6);
    let dual = p.dual_of(&s, "cap").unwrap();

    // dense grid at 1e-3 resolution
    let grid = |rhs: f64| {
        let mut best = f64::INFINITY;
        for i in 0..=1000 {
            for j in 0..=1000 {
                let (x, y) = (i as f64 * 1e-3, j as f64 * 1e-3);
                if x + y <= rhs + 1e-12 {
                    best = best.min(-x - y);
                }
            }
        }
        best
    };
    assert!((grid(1.0) - s.objective).abs() < 1e-3);
    // relaxing the cap by 0.1 improves the objective by 0.1 per the grid
    let improvement = (grid(1.0) - grid(1.1)) / 0.1;
    assert!((improvement - dual).abs() < 1e-2, "grid {improvement} vs dual {dual}");
    assert!((dual - 1.0).abs() < 1e-6);
}

#[test]
fn equality_dual_is_rhs_sensitivity() {
    let mut p = ConvexProgram::new();
    let x = p.add_free_var("x");
    let c = p.add_eq("fix", x, 2.0);
    p.set_objective(Objective::zero().with_square(1.0, x));
    let s = solve(&p, &settings());
    assert!((s.dual_of(c).unwrap() - 4.0).abs() < 1e-5);
}

#[test]
fn inactive_inequality_has_zero_dual() {
    let mut p = ConvexProgram::new();
    let x = p.add_free_var("x");
    let c = p.add_le("loose", x, 10.0);
    p.set_objective(Objective::zero().with_square(1.0, x - 1.0));
    let s = solve(&p, &settings());
    assert!(s.dual_of(c).unwrap().abs() < 1e-6);
}

#[test]
fn unknown_constraint_is_reported() {
    let p = ConvexProgram::new();
    let s = solve(&p, &settings());
    assert!(p.dual_of(&s, "nope").is_err());
}

#[test]
fn infeasible_names_a_culprit() {
    let mut p = ConvexProgram::new();
    let x = p.add_var("x", 0.0, 1.0);
    p.add_ge("too_much", x, 2.0);
    p.set_objective(Objective::linear(x));
    let s = solve(&p, &settings());
    match s.status {
        Status::Infeasible { most_violated } => {
            let name = most_violated.unwrap();
            assert!(name == "too_much" || name == "x.upper", "{name}");
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn unbounded_is_reported() {
    let mut p = ConvexProgram::new();
    let x = p.add_free_var("x");
    p.set_objective(Objective::linear(x));
    assert_eq!(solve(&p, &settings()).status, Status::Unbounded);
}

#[test]
fn lp_dump_lists_everything() {
    let mut p = ConvexProgram::new();
    let x = p.add_var("x", 0.0, 1.0);
    let y = p.add_var("y", 0.0, 1.0);
    p.add_le("cap", x + y, 1.0);
    p.add_rotated_cone("cone", vec![x.into()], y, LinExpr::constant(1.0));
    p.set_objective(Objective::linear(-(x + y)).with_square(0.5, x));
    let mut buf = Vec::new();
    p.write_lp(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    for needle in ["minimize", "cap:", "cone:", "0 <= x <= 1", "end"] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
}

#[test]
fn dump_dir_writes_listing() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = ConvexProgram::new();
    let x = p.add_var("x", 0.0, 1.0);
    p.set_objective(Objective::linear(x));
    let s = SolverSettings {
        dump_dir: Some(dir.path().to_path_buf()),
        ..SolverSettings::default()
    };
    assert!(solve(&p, &s).is_optimal());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

fn two_var_base() -> (ConvexProgram, lem_core::convex::VarId, lem_core::convex::VarId) {
    let mut p = ConvexProgram::new();
    let x = p.add_var("x", 0.0, f64::INFINITY);
    let y = p.add_var("y", 0.0, f64::INFINITY);
    p.add_ge("cover", x + y, 1.0);
    (p, x, y)
}

#[test]
fn lexi_exact_priority() {
    let (p, x, y) = two_var_base();
    let stages = [
        Stage::new("x", Objective::linear(x)),
        Stage::new("y", Objective::linear(y)),
    ];
    let cfg = LexiConfig {
        epsilon: 0.0,
        ..LexiConfig::default()
    };
    let r = lexicographic_solve(&p, &stages, &cfg, &settings()).unwrap();
    let sol = r.solution();
    assert!(sol.value(x).abs() < 1e-6);
    assert!((sol.value(y) - 1.0).abs() < 1e-6);
}

#[test]
fn lexi_zero_optimum_uses_floor() {
    let (p, x, y) = two_var_base();
    let stages = [
        Stage::new("x", Objective::linear(x)),
        Stage::new("y", Objective::linear(y)),
    ];
    let r = lexicographic_solve(&p, &stages, &LexiConfig::default(), &settings()).unwrap();
    assert!((r.stages[0].cap - 1e-9).abs() < 1e-15);
    assert!(r.solution().value(x) <= 1e-6);
    assert!((r.solution().value(y) - 1.0).abs() < 1e-6);
}

#[test]
fn lexi_negative_optimum_is_sign_aware() {
    let mut p = ConvexProgram::new();
    let x = p.add_var("x", 0.0, 1.0);
    let stages = [
        Stage::new("max_x", Objective::linear(-1.0 * x)),
        Stage::new("centre", Objective::zero().with_square(1.0, x - 0.5)),
    ];
    let r = lexicographic_solve(&p, &stages, &LexiConfig::default(), &settings()).unwrap();
    assert!((r.stages[0].f_star + 1.0).abs() < 1e-6);
    // feasible set after stage 1 is −x ≤ −0.95
    let grid_best = (0..=100_000)
        .map(|i| i as f64 * 1e-5)
        .filter(|&v| -v <= -0.95 + 1e-12)
        .min_by(|a, b| (a - 0.5).abs().total_cmp(&(b - 0.5).abs()))
        .unwrap();
    assert!((r.solution().value(x) - grid_best).abs() < 1e-5);
}

#[test]
fn lexi_quadratic_stage_can_be_capped() {
    let mut p = ConvexProgram::new();
    let x = p.add_var("x", -2.0, 2.0);
    let stages = [
        Stage::new("near_one", Objective::zero().with_square(1.0, x - 1.0).with_square(1.0, x)),
        Stage::new("max_x", Objective::linear(-1.0 * x)),
    ];
    let r = lexicographic_solve(&p, &stages, &LexiConfig::default(), &settings()).unwrap();
    // F1 = (x−1)² + x², optimum 0.5 at x = 0.5; cap 0.525
    let f1 = r.objective_values()[0];
    assert!(f1 <= 0.525 + 1e-6);
    let expected = (1.0 + (2.0f64 * 0.525 - 1.0).sqrt()) / 2.0;
    assert!((r.solution().value(x) - expected).abs() < 1e-5);
}

#[test]
fn lexi_rejects_bad_config() {
    let (p, x, _) = two_var_base();
    let stages = [Stage::new("x", Objective::linear(x))];
    let cfg = LexiConfig {
        epsilon: -0.1,
        ..LexiConfig::default()
    };
    assert!(matches!(
        lexicographic_solve(&p, &stages, &cfg, &settings()),
        Err(LexiError::InvalidConfig(_))
    ));
    let cfg = LexiConfig {
        order: vec!["x".into(), "x".into()],
        ..LexiConfig::default()
    };
    assert!(matches!(
        lexicographic_solve(&p, &stages, &cfg, &settings()),
        Err(LexiError::InvalidConfig(_))
    ));
}

#[test]
fn lexi_stage_extras_apply_forward() {
    let (p, x, y) = two_var_base();
    let stages = [
        Stage::new("x", Objective::linear(x)),
        Stage::new("y", Objective::linear(y)).with_constraint("y_small", y, Sense::Le, 0.5),
    ];
    let cfg = LexiConfig {
        epsilon: 0.0,
        ..LexiConfig::default()
    };
    // stage 2 has x ≤ ~0 and y ≤ 0.5 against x + y ≥ 1
    assert!(matches!(
        lexicographic_solve(&p, &stages, &cfg, &settings()),
        Err(LexiError::StageInfeasible { stage: 1, .. })
    ));
}

/// Enumerates the vertices of the box [0,1]³ cut by one covering row and returns
/// the exact lexicographic minimum of three linear objectives.
fn enumerate_lexi(c: &[[f64; 3]; 3], a: [f64; 3], b: f64) -> [f64; 3] {
    // candidate points: box vertices plus points where the cover row meets an edge
    let mut pts = Vec::new();
    for mask in 0..8u32 {
        let v = [0, 1, 2].map(|i| ((mask >> i) & 1) as f64);
        pts.push(v);
        for free in 0..3 {
            if a[free] != 0.0 {
                let mut w = v;
                let rest: f64 = (0..3).filter(|&i| i != free).map(|i| a[i] * v[i]).sum();
                w[free] = (b - rest) / a[free];
                if (0.0..=1.0).contains(&w[free]) {
                    pts.push(w);
                }
            }
        }
    }
    pts.retain(|p| a.iter().zip(p).map(|(ai, pi)| ai * pi).sum::<f64>() >= b - 1e-12);
    let val = |k: usize, p: &[f64; 3]| c[k].iter().zip(p).map(|(ci, pi)| ci * pi).sum::<f64>();
    let mut best = [f64::INFINITY; 3];
    for k in 0..3 {
        let m = pts.iter().map(|p| val(k, p)).fold(f64::INFINITY, f64::min);
        best[k] = m;
        pts.retain(|p| val(k, p) <= m + 1e-9);
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn kkt_residual_small_on_random_programs(
        n in 2usize..8,
        seed in prop::collection::vec(-1.0f64..1.0, 60),
        quad in prop::bool::ANY,
        cone in prop::bool::ANY,
    ) {
        let mut p = ConvexProgram::new();
        let vars: Vec<_> = (0..n).map(|i| p.add_var(format!("x{i}"), -1.0, 1.0)).collect();
        // x = 0 is always feasible for the rows below
        let mut row = LinExpr::new();
        for (i, &v) in vars.iter().enumerate() {
            row.add_term(v, seed[i]);
        }
        p.add_le("r0", row, 0.5);
        let mut eq = LinExpr::new();
        for (i, &v) in vars.iter().enumerate() {
            eq.add_term(v, seed[10 + i]);
        }
        p.add_eq("e0", eq, 0.0);
        if cone {
            let t = p.add_var("t", 0.0, 2.0);
            p.add_soc("c0", t, vars.iter().take(2).map(|&v| LinExpr::from(v)).collect());
        }
        let mut obj = Objective::zero();
        for (i, &v) in vars.iter().enumerate() {
            obj.add_linear(v * seed[20 + i]);
            if quad {
                obj.add_square(seed[30 + i].abs() + 0.1, v - seed[40 + i]);
            }
        }
        p.set_objective(obj);
        let s = solve(&p, &settings());
        prop_assert!(s.is_optimal(), "{:?}", s.status);
        prop_assert!(s.kkt_residual <= 1e-6, "kkt {}", s.kkt_residual);
        prop_assert!(s.primal_violation <= 1e-7, "viol {}", s.primal_violation);
    }

    #[test]
    fn equality_duals_match_finite_differences(
        a in prop::collection::vec(0.2f64..2.0, 4),
        c in prop::collection::vec(-1.0f64..1.0, 4),
        w in prop::collection::vec(0.1f64..2.0, 4),
        rhs in 0.5f64..2.0,
    ) {
        let build = |r: f64| {
            let mut p = ConvexProgram::new();
            let vars: Vec<_> = (0..4).map(|i| p.add_var(format!("x{i}"), -5.0, 5.0)).collect();
            let mut e = LinExpr::new();
            for (i, &v) in vars.iter().enumerate() {
                e.add_term(v, a[i]);
            }
            let id = p.add_eq("bal", e, r);
            let mut obj = Objective::zero();
            for (i, &v) in vars.iter().enumerate() {
                obj.add_square(w[i], v - c[i]);
            }
            p.set_objective(obj);
            (p, id)
        };
        let h = 1e-5;
        let (p, id) = build(rhs);
        let s = solve(&p, &settings());
        let dual = s.dual_of(id).unwrap();
        let up = solve(&build(rhs + h).0, &settings()).objective;
        let dn = solve(&build(rhs - h).0, &settings()).objective;
        let fd = (up - dn) / (2.0 * h);
        prop_assert!((fd - dual).abs() <= 1e-4f64.max(0.01 * dual.abs()), "fd {fd} dual {dual}");
    }

    #[test]
    fn lexi_bound_holds_at_every_stage(
        c in prop::collection::vec(-1.0f64..1.0, 9),
        eps in 0.0f64..0.2,
    ) {
        let mut p = ConvexProgram::new();
        let v: Vec<_> = (0..3).map(|i| p.add_var(format!("x{i}"), 0.0, 1.0)).collect();
        p.add_ge("cover", v[0] + v[1] + v[2], 1.0);
        let stages: Vec<_> = (0..3)
            .map(|k| {
                let mut e = LinExpr::new();
                for i in 0..3 {
                    e.add_term(v[i], c[3 * k + i]);
                }
                Stage::new(format!("s{k}"), Objective::linear(e))
            })
            .collect();
        let cfg = LexiConfig { epsilon: eps, ..LexiConfig::default() };
        let r = lexicographic_solve(&p, &stages, &cfg, &settings()).unwrap();
        for k in 1..r.stages.len() {
            let x = &r.stages[k].solution.primal;
            for l in 0..k {
                let f = r.stages[l].objective.eval(x);
                prop_assert!(f <= r.stages[l].cap + 1e-6 * (1.0 + r.stages[l].f_star.abs()));
            }
        }
    }

    #[test]
    fn exact_lexi_matches_vertex_enumeration(
        c in prop::collection::vec(prop::sample::select(vec![-1.0, -0.5, 0.0, 0.5, 1.0]), 9),
    ) {
        let cm = [
            [c[0], c[1], c[2]],
            [c[3], c[4], c[5]],
            [c[6], c[7], c[8]],
        ];
        let mut p = ConvexProgram::new();
        let v: Vec<_> = (0..3).map(|i| p.add_var(format!("x{i}"), 0.0, 1.0)).collect();
        p.add_ge("cover", v[0] + v[1] + v[2], 1.0);
        let stages: Vec<_> = (0..3)
            .map(|k| Stage::new(format!("s{k}"), Objective::linear(
                v[0] * cm[k][0] + v[1] * cm[k][1] + v[2] * cm[k][2],
            )))
            .collect();
        let cfg = LexiConfig { epsilon: 0.0, ..LexiConfig::default() };
        let r = lexicographic_solve(&p, &stages, &cfg, &settings()).unwrap();
        let expected = enumerate_lexi(&cm, [1.0, 1.0, 1.0], 1.0);
        for k in 0..3 {
            prop_assert!((r.stages[k].f_star - expected[k]).abs() < 1e-5,
                "stage {k}: {} vs {}", r.stages[k].f_star, expected[k]);
        }
    }
}
