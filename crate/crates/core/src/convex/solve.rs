use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::expr::LinExpr;
use super::program::{ConeId, ConstraintId, ConvexProgram, Sense};
use super::ConvexError;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Maximum absolute primal violation accepted for an optimal point.
    pub feas_tol: f64,
    /// Relative duality gap target.
    pub gap_tol: f64,
    pub max_iter: u32,
    /// When set, every solved program is also written there as an LP-style listing.
    pub dump_dir: Option<PathBuf>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            gap_tol: 1e-7,
            max_iter: 200,
            dump_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub solver_status: String,
    pub iterations: u32,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub primal_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Optimal,
    /// `most_violated` names the row or cone carrying the largest weight in the
    /// infeasibility certificate.
    Infeasible { most_violated: Option<String> },
    Unbounded,
    NumericalFailure(Diagnostics),
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: Status,
    pub primal: Vec<f64>,
    /// One entry per linear constraint, in declaration order.
    pub duals: Vec<f64>,
    /// Per variable: (lower-bound multiplier, upper-bound multiplier), both ≥ 0.
    pub bound_duals: Vec<(f64, f64)>,
    /// Per cone, the dual vector in the `(t, u)` layout.
    pub cone_duals: Vec<Vec<f64>>,
    pub objective: f64,
    /// ‖∇f(x) + Aᵀy‖∞ at the returned point.
    pub kkt_residual: f64,
    pub primal_violation: f64,
    /// Relative duality gap reported by the backend.
    pub gap: f64,
    pub iterations: u32,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn value(&self, v: super::VarId) -> f64 {
        self.primal[v.0]
    }

    pub fn eval(&self, e: &LinExpr) -> f64 {
        e.eval(&self.primal)
    }

    /// Dual of a linear constraint (see the module docs for the sign convention).
    pub fn dual_of(&self, id: ConstraintId) -> Result<f64, ConvexError> {
        if !self.is_optimal() {
            return Err(ConvexError::NotOptimal(format!("{:?}", self.status)));
        }
        self.duals
            .get(id.0)
            .copied()
            .ok_or_else(|| ConvexError::UnknownConstraint(format!("#{}", id.0)))
    }

    pub fn cone_dual(&self, id: ConeId) -> &[f64] {
        &self.cone_duals[id.0]
    }
}

impl ConvexProgram {
    /// Dual of the constraint registered under `name`.
    pub fn dual_of(&self, sol: &Solution, name: &str) -> Result<f64, ConvexError> {
        sol.dual_of(self.constraint_id(name)?)
    }
}

/// Where each named item landed in the stacked `Ax + s = b` system.
enum RowOrigin {
    Row(usize),
    Lower(usize),
    Upper(usize),
    Fixed(usize),
    Cone(usize),
}

struct Assembled {
    a: CscMatrix<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
    origin: Vec<RowOrigin>,
    row_of: Vec<usize>,
    lower_row: Vec<Option<usize>>,
    upper_row: Vec<Option<usize>>,
    fixed_row: Vec<Option<usize>>,
    cone_rows: Vec<(usize, usize)>,
    p: CscMatrix<f64>,
    q: Vec<f64>,
}

fn assemble(prog: &ConvexProgram) -> Assembled {
    let n = prog.vars.len();
    let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::new();
    let mut origin = Vec::new();
    let mut row_of = vec![0; prog.rows.len()];
    let mut lower_row = vec![None; n];
    let mut upper_row = vec![None; n];
    let mut fixed_row = vec![None; n];
    let mut cone_rows = Vec::with_capacity(prog.cones.len());

    let push_expr = |row: usize, e: &LinExpr, scale: f64, ai: &mut Vec<usize>, aj: &mut Vec<usize>, av: &mut Vec<f64>| {
        for &(v, c) in &e.terms {
            ai.push(row);
            aj.push(v.0);
            av.push(c * scale);
        }
    };

    // zero cone: equalities and fixed variables
    for (k, r) in prog.rows.iter().enumerate() {
        if r.sense == Sense::Eq {
            let row = b.len();
            push_expr(row, &r.expr, 1.0, &mut ai, &mut aj, &mut av);
            b.push(r.rhs);
            row_of[k] = row;
            origin.push(RowOrigin::Row(k));
        }
    }
    for (j, d) in prog.vars.iter().enumerate() {
        if d.lo == d.hi {
            let row = b.len();
            ai.push(row);
            aj.push(j);
            av.push(1.0);
            b.push(d.lo);
            fixed_row[j] = Some(row);
            origin.push(RowOrigin::Fixed(j));
        }
    }
    let n_zero = b.len();

    // nonnegative cone: b − Ax ≥ 0
    for (k, r) in prog.rows.iter().enumerate() {
        let scale = match r.sense {
            Sense::Eq => continue,
            Sense::Le => 1.0,
            Sense::Ge => -1.0,
        };
        let row = b.len();
        push_expr(row, &r.expr, scale, &mut ai, &mut aj, &mut av);
        b.push(scale * r.rhs);
        row_of[k] = row;
        origin.push(RowOrigin::Row(k));
    }
    for (j, d) in prog.vars.iter().enumerate() {
        if d.lo == d.hi {
            continue;
        }
        if d.lo.is_finite() {
            let row = b.len();
            ai.push(row);
            aj.push(j);
            av.push(-1.0);
            b.push(-d.lo);
            lower_row[j] = Some(row);
            origin.push(RowOrigin::Lower(j));
        }
        if d.hi.is_finite() {
            let row = b.len();
            ai.push(row);
            aj.push(j);
            av.push(1.0);
            b.push(d.hi);
            upper_row[j] = Some(row);
            origin.push(RowOrigin::Upper(j));
        }
    }
    let n_nonneg = b.len() - n_zero;

    let mut cones = Vec::new();
    if n_zero > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_zero));
    }
    if n_nonneg > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_nonneg));
    }
    // second-order cones: s = b − Ax = affine component
    for (k, c) in prog.cones.iter().enumerate() {
        let start = b.len();
        for e in std::iter::once(&c.t).chain(c.u.iter()) {
            let row = b.len();
            push_expr(row, e, -1.0, &mut ai, &mut aj, &mut av);
            b.push(e.constant);
            origin.push(RowOrigin::Cone(k));
        }
        let dim = b.len() - start;
        cone_rows.push((start, dim));
        cones.push(SupportedConeT::SecondOrderConeT(dim));
    }

    let m = b.len();
    let a = CscMatrix::new_from_triplets(m, n, ai, aj, av);

    // objective: linear + Σ w (aᵀx + a0)²  →  ½xᵀPx + qᵀx + const
    let mut q = vec![0.0; n];
    for &(v, c) in &prog.objective.linear.terms {
        q[v.0] += c;
    }
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for (w, e) in &prog.objective.squares {
        let e = e.compacted();
        for &(v, c) in &e.terms {
            q[v.0] += 2.0 * w * e.constant * c;
        }
        for &(vi, ci) in &e.terms {
            for &(vj, cj) in &e.terms {
                if vi.0 <= vj.0 {
                    pi.push(vi.0);
                    pj.push(vj.0);
                    pv.push(2.0 * w * ci * cj);
                }
            }
        }
    }
    let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

    Assembled {
        a,
        b,
        cones,
        origin,
        row_of,
        lower_row,
        upper_row,
        fixed_row,
        cone_rows,
        p,
        q,
    }
}

/// y ← y + Aᵀz
fn add_at_z(a: &CscMatrix<f64>, z: &[f64], y: &mut [f64]) {
    for (j, yj) in y.iter_mut().enumerate() {
        for k in a.colptr[j]..a.colptr[j + 1] {
            *yj += a.nzval[k] * z[a.rowval[k]];
        }
    }
}

/// y ← y + Px for upper-triangular storage of symmetric P.
fn add_sym_px(p: &CscMatrix<f64>, x: &[f64], y: &mut [f64]) {
    for j in 0..p.n {
        for k in p.colptr[j]..p.colptr[j + 1] {
            let i = p.rowval[k];
            let v = p.nzval[k];
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
    }
}

fn most_violated(prog: &ConvexProgram, asm: &Assembled, z: &[f64]) -> Option<String> {
    let mut row_norm = vec![0.0f64; asm.b.len()];
    for k in 0..asm.a.nzval.len() {
        row_norm[asm.a.rowval[k]] += asm.a.nzval[k].powi(2);
    }
    let mut best: Option<(f64, String)> = None;
    let mut consider = |score: f64, name: String| {
        if score > 0.0 && best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, name));
        }
    };
    let mut cone_score = vec![0.0; prog.cones.len()];
    for (r, o) in asm.origin.iter().enumerate() {
        let score = z[r].abs() * row_norm[r].sqrt();
        match *o {
            RowOrigin::Row(k) => consider(score, prog.rows[k].name.clone()),
            RowOrigin::Lower(j) => consider(score, format!("{}.lower", prog.vars[j].name)),
            RowOrigin::Upper(j) => consider(score, format!("{}.upper", prog.vars[j].name)),
            RowOrigin::Fixed(j) => consider(score, format!("{}.fixed", prog.vars[j].name)),
            RowOrigin::Cone(k) => cone_score[k] += score,
        }
    }
    for (k, s) in cone_score.into_iter().enumerate() {
        consider(s, prog.cones[k].name.clone());
    }
    best.map(|(_, n)| n)
}

static DUMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

/// Solves `prog`. Never panics on solver trouble: failures come back as a
/// non-optimal [`Status`].
pub fn solve(prog: &ConvexProgram, settings: &SolverSettings) -> Solution {
    let n = prog.vars.len();
    if let Err(e) = prog.validate() {
        return failure(n, prog, format!("{e}"));
    }
    if let Some(dir) = &settings.dump_dir {
        let k = DUMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        if fs::create_dir_all(dir).is_ok() {
            if let Ok(mut f) = fs::File::create(dir.join(format!("program_{k:06}.lp"))) {
                let _ = prog.write_lp(&mut f);
            }
        }
    }

    if n == 0 {
        let objective = prog.objective.eval(&[]);
        let primal_violation = prog.primal_violation(&[]);
        let mut sol = failure(0, prog, String::new());
        sol.status = if primal_violation <= settings.feas_tol {
            Status::Optimal
        } else {
            Status::Infeasible { most_violated: None }
        };
        sol.objective = objective;
        sol.kkt_residual = 0.0;
        sol.primal_violation = primal_violation;
        sol.gap = 0.0;
        return sol;
    }

    let asm = assemble(prog);
    let tol_gap = (settings.gap_tol * 0.1).min(1e-8);
    let tol_feas = (settings.feas_tol * 0.1).min(1e-8);
    let cs = DefaultSettings {
        verbose: false,
        max_iter: settings.max_iter,
        tol_gap_abs: tol_gap,
        tol_gap_rel: tol_gap,
        tol_feas,
        ..DefaultSettings::default()
    };

    let mut solver = match DefaultSolver::new(&asm.p, &asm.q, &asm.a, &asm.b, &asm.cones, cs) {
        Ok(s) => s,
        Err(e) => return failure(n, prog, format!("{e:?}")),
    };
    solver.solve();
    let out = &solver.solution;
    let x = out.x.clone();
    let z = &out.z;

    let primal_violation = prog.primal_violation(&x);
    let diagnostics = || Diagnostics {
        solver_status: format!("{:?}", out.status),
        iterations: out.iterations,
        primal_residual: out.r_prim,
        dual_residual: out.r_dual,
        primal_violation,
    };

    let status = match out.status {
        SolverStatus::Solved => Status::Optimal,
        SolverStatus::AlmostSolved if primal_violation <= 10.0 * settings.feas_tol => Status::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Status::Infeasible {
            most_violated: most_violated(prog, &asm, z),
        },
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => Status::Unbounded,
        _ => Status::NumericalFailure(diagnostics()),
    };

    if status != Status::Optimal {
        return Solution {
            status,
            primal: x,
            duals: vec![0.0; prog.rows.len()],
            bound_duals: vec![(0.0, 0.0); n],
            cone_duals: prog.cones.iter().map(|c| vec![0.0; c.u.len() + 1]).collect(),
            objective: f64::NAN,
            kkt_residual: f64::INFINITY,
            primal_violation,
            gap: f64::INFINITY,
            iterations: out.iterations,
        };
    }

    // Clarabel stationarity: Px + q + Aᵀz = 0, so ∂obj/∂b = −z.
    let mut grad = asm.q.clone();
    add_sym_px(&asm.p, &x, &mut grad);
    add_at_z(&asm.a, z, &mut grad);
    let kkt_residual = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));

    let duals = prog
        .rows
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let zr = z[asm.row_of[k]];
            match r.sense {
                Sense::Eq => -zr,
                Sense::Le | Sense::Ge => zr,
            }
        })
        .collect();
    let bound_duals = (0..n)
        .map(|j| {
            if let Some(r) = asm.fixed_row[j] {
                let sens = -z[r];
                (sens.max(0.0), (-sens).max(0.0))
            } else {
                (
                    asm.lower_row[j].map_or(0.0, |r| z[r]),
                    asm.upper_row[j].map_or(0.0, |r| z[r]),
                )
            }
        })
        .collect();
    let cone_duals = asm
        .cone_rows
        .iter()
        .map(|&(s, d)| z[s..s + d].to_vec())
        .collect();

    let objective = prog.objective.eval(&x);
    let gap = (out.obj_val - out.obj_val_dual).abs() / (1.0 + out.obj_val.abs());
    Solution {
        status,
        primal: x,
        duals,
        bound_duals,
        cone_duals,
        objective,
        kkt_residual,
        primal_violation,
        gap,
        iterations: out.iterations,
    }
}

fn failure(n: usize, prog: &ConvexProgram, msg: String) -> Solution {
    Solution {
        status: Status::NumericalFailure(Diagnostics {
            solver_status: msg,
            iterations: 0,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            primal_violation: f64::NAN,
        }),
        primal: vec![0.0; n],
        duals: vec![0.0; prog.rows.len()],
        bound_duals: vec![(0.0, 0.0); n],
        cone_duals: prog.cones.iter().map(|c| vec![0.0; c.u.len() + 1]).collect(),
        objective: f64::NAN,
        kkt_residual: f64::INFINITY,
        primal_violation: f64::NAN,
        gap: f64::INFINITY,
        iterations: 0,
    }
}
