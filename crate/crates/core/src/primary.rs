//! Primary-market clearing: a second-order-cone relaxation of the DistFlow
//! branch-flow model with a social-welfare-plus-losses objective. d-LMPs are the
//! duals of the nodal real and reactive balance rows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::{
    solve, ConstraintId, ConvexProgram, LinExpr, Objective, Solution, SolverSettings, Status, VarId,
};
use crate::grid::{Interval, NodeKind, RadialNetwork};

/// Default flag threshold for the relaxation gap v·l − (P² + Q²), pu².
pub const SOCP_GAP_FLAG: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmError {
    #[error("no bid for node {0}")]
    MissingBid(usize),
    #[error("bid for node {0}, which is not an SMO node of the network")]
    UnexpectedBid(usize),
    #[error("inconsistent base: {0}")]
    InconsistentBase(String),
    #[error("infeasible; relaxing {family} restores feasibility, most violated: {constraint}")]
    Infeasible { family: String, constraint: String },
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("empty tariff window")]
    EmptyWindow,
}

/// Aggregated SMO bid at one node; powers in pu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoBid {
    pub node: usize,
    pub pg0: f64,
    pub qg0: f64,
    pub pl0: f64,
    pub ql0: f64,
    pub pg: Interval,
    pub qg: Interval,
    pub pl: Interval,
    pub ql: Interval,
    /// Load disutility, $/kWh per pu².
    pub beta_p: f64,
    pub beta_q: f64,
    /// Quadratic generation cost, $/kWh per pu².
    pub alpha_p: f64,
    pub alpha_q: f64,
}

impl SmoBid {
    /// Net range of the bid, `[ΣG_lo − ΣL_hi, ΣG_hi − ΣL_lo]`.
    pub fn net_p_range(&self) -> Interval {
        Interval::new(self.pg.lo - self.pl.hi, self.pg.hi - self.pl.lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmParams {
    /// Wholesale prices at the PCC, $/kWh and $/kvarh.
    pub lambda_p: f64,
    pub lambda_q: f64,
    /// Loss weight in $/MWh of I²R losses.
    pub xi: f64,
    /// PM period in hours.
    pub dt_p_h: f64,
    pub solver: SolverSettings,
}

impl Default for PmParams {
    fn default() -> Self {
        Self {
            lambda_p: 0.05,
            lambda_q: 0.005,
            xi: 100.0,
            dt_p_h: 5.0 / 60.0,
            solver: SolverSettings::default(),
        }
    }
}

/// Handles into an assembled OPF.
#[derive(Debug, Clone)]
pub struct OpfProgram {
    pub program: ConvexProgram,
    /// $ per (pu · interval) ↔ $/kWh factor: `s_base_kw · Δt_p`.
    pub price_scale: f64,
    pub v: BTreeMap<usize, VarId>,
    /// (PG, QG, PL, QL) per non-slack node.
    pub node_vars: BTreeMap<usize, [VarId; 4]>,
    /// Slack import (P, Q).
    pub pcc: (VarId, VarId),
    /// (P, Q, l) per line, keyed by receiving node.
    pub line_vars: BTreeMap<usize, [VarId; 3]>,
    pub balance_p: BTreeMap<usize, ConstraintId>,
    pub balance_q: BTreeMap<usize, ConstraintId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeClearing {
    pub node: usize,
    pub pg: f64,
    pub qg: f64,
    pub pl: f64,
    pub ql: f64,
    pub p_net: f64,
    pub q_net: f64,
    pub v_sq: f64,
    /// $/kWh and $/kvarh.
    pub dlmp_p: f64,
    pub dlmp_q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineClearing {
    pub from: usize,
    pub to: usize,
    pub p: f64,
    pub q: f64,
    pub l: f64,
    pub socp_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmClearing {
    /// All nodes in id order; the slack row carries the PCC import as its net
    /// injection.
    pub nodes: Vec<NodeClearing>,
    pub lines: Vec<LineClearing>,
    pub p_pcc: f64,
    pub q_pcc: f64,
    /// Σ R·l, pu.
    pub total_losses: f64,
    /// Objective in $ for the interval.
    pub objective: f64,
}

impl PmClearing {
    pub fn node(&self, id: usize) -> Option<&NodeClearing> {
        self.nodes.iter().find(|n| n.node == id)
    }
}

/// Builds the OPF. `extra_load` (pu, keyed by node) is added to the rhs of the
/// real-power balance rows; it is zero in normal operation and used to probe
/// prices by perturbation.
pub fn assemble_opf(net: &RadialNetwork, bids: &[SmoBid], params: &PmParams) -> Result<OpfProgram, PmError> {
    if !(net.s_base_mva > 0.0) {
        return Err(PmError::InconsistentBase(format!("s_base_mva = {}", net.s_base_mva)));
    }
    if !(params.dt_p_h > 0.0) {
        return Err(PmError::InconsistentBase(format!("dt_p = {} h", params.dt_p_h)));
    }
    let mut by_node: BTreeMap<usize, &SmoBid> = BTreeMap::new();
    for b in bids {
        match net.node(b.node) {
            Ok(n) if n.kind == NodeKind::Smo => {
                by_node.insert(b.node, b);
            }
            _ => return Err(PmError::UnexpectedBid(b.node)),
        }
    }
    let k = net.s_base_kw() * params.dt_p_h;
    let slack = net.slack_id();
    let mut prog = ConvexProgram::new();
    let mut obj = Objective::zero();

    let mut v = BTreeMap::new();
    for n in &net.nodes {
        let (lo, hi) = if n.kind == NodeKind::Slack {
            (1.0, 1.0)
        } else {
            (n.v_min_sq, n.v_max_sq)
        };
        v.insert(n.id, prog.add_var(format!("v[{}]", n.id), lo, hi));
    }

    let slack_node = net.node(slack).expect("slack exists");
    let pcc_p = prog.add_var("PG[pcc]", slack_node.p_gen.lo, slack_node.p_gen.hi);
    let pcc_q = prog.add_var("QG[pcc]", slack_node.q_gen.lo, slack_node.q_gen.hi);
    obj.add_linear(pcc_p * (k * params.lambda_p));
    obj.add_linear(pcc_q * (k * params.lambda_q));

    let mut node_vars = BTreeMap::new();
    for n in net.nodes.iter().filter(|n| n.kind == NodeKind::Smo) {
        let b = by_node.get(&n.id).ok_or(PmError::MissingBid(n.id))?;
        let i = n.id;
        let pg_b = b.pg.intersect(&n.p_gen);
        let qg_b = b.qg.intersect(&n.q_gen);
        let pl_b = b.pl.intersect(&n.p_load);
        let ql_b = b.ql.intersect(&n.q_load);
        let pg = prog.add_var(format!("PG[{i}]"), pg_b.lo, pg_b.hi);
        let qg = prog.add_var(format!("QG[{i}]"), qg_b.lo, qg_b.hi);
        let pl = prog.add_var(format!("PL[{i}]"), pl_b.lo, pl_b.hi);
        let ql = prog.add_var(format!("QL[{i}]"), ql_b.lo, ql_b.hi);
        obj.add_square(k * b.alpha_p, pg);
        obj.add_square(k * b.alpha_q, qg);
        obj.add_square(k * b.beta_p, pl - b.pl0);
        obj.add_square(k * b.beta_q, ql - b.ql0);
        node_vars.insert(i, [pg, qg, pl, ql]);
    }

    let mut line_vars = BTreeMap::new();
    let loss_weight = k * params.xi / 1000.0;
    for l in &net.lines {
        let i = l.to;
        let p = prog.add_free_var(format!("P[{}-{i}]", l.from));
        let q = prog.add_free_var(format!("Q[{}-{i}]", l.from));
        let cur = prog.add_var(format!("l[{}-{i}]", l.from), 0.0, f64::INFINITY);
        prog.add_eq(
            format!("vdrop[{i}]"),
            v[&i] - v[&l.from] - cur * (l.r * l.r + l.x * l.x) + p * (2.0 * l.r) + q * (2.0 * l.x),
            0.0,
        );
        prog.add_rotated_cone(format!("socp[{i}]"), vec![p.into(), q.into()], v[&i], cur);
        if l.s_max.is_finite() {
            prog.add_soc(format!("thermal[{i}]"), LinExpr::constant(l.s_max), vec![p.into(), q.into()]);
        }
        if l.r > 0.0 && params.xi > 0.0 {
            obj.add_linear(cur * (loss_weight * l.r));
        }
        line_vars.insert(i, [p, q, cur]);
    }

    let mut balance_p = BTreeMap::new();
    let mut balance_q = BTreeMap::new();
    for n in &net.nodes {
        let i = n.id;
        let (mut ep, mut eq) = if n.kind == NodeKind::Slack {
            (LinExpr::from(pcc_p), LinExpr::from(pcc_q))
        } else {
            let [pg, qg, pl, ql] = node_vars[&i];
            (pg - pl, qg - ql)
        };
        if let Some(pl) = net.parent_line(i) {
            let [p, q, cur] = line_vars[&i];
            ep += p - cur * pl.r;
            eq += q - cur * pl.x;
        }
        for &c in net.downstream_children(i).expect("node exists") {
            let [p, q, _] = line_vars[&c];
            ep -= p;
            eq -= q;
        }
        balance_p.insert(i, prog.add_eq(format!("balP[{i}]"), ep, 0.0));
        balance_q.insert(i, prog.add_eq(format!("balQ[{i}]"), eq, 0.0));
    }

    prog.set_objective(obj);
    Ok(OpfProgram {
        program: prog,
        price_scale: k,
        v,
        node_vars,
        pcc: (pcc_p, pcc_q),
        line_vars,
        balance_p,
        balance_q,
    })
}

impl OpfProgram {
    /// Adds `extra` pu of real-power demand at `node` (rhs of its balance row).
    pub fn set_extra_load(&mut self, node: usize, extra: f64) {
        if let Some(&c) = self.balance_p.get(&node) {
            self.program.set_rhs(c, extra);
        }
    }

    fn extract(&self, net: &RadialNetwork, sol: &Solution) -> PmClearing {
        let k = self.price_scale;
        let x = &sol.primal;
        let mut nodes = Vec::with_capacity(net.nodes.len());
        for n in &net.nodes {
            let i = n.id;
            let (pg, qg, pl, ql) = match self.node_vars.get(&i) {
                Some(&[pg, qg, pl, ql]) => (x[pg.index()], x[qg.index()], x[pl.index()], x[ql.index()]),
                None => (x[self.pcc.0.index()], x[self.pcc.1.index()], 0.0, 0.0),
            };
            nodes.push(NodeClearing {
                node: i,
                pg,
                qg,
                pl,
                ql,
                p_net: pg - pl,
                q_net: qg - ql,
                v_sq: x[self.v[&i].index()],
                dlmp_p: sol.duals[self.balance_p[&i].0] / k,
                dlmp_q: sol.duals[self.balance_q[&i].0] / k,
            });
        }
        let lines: Vec<LineClearing> = net
            .lines
            .iter()
            .map(|l| {
                let [p, q, cur] = self.line_vars[&l.to];
                let (p, q, cur) = (x[p.index()], x[q.index()], x[cur.index()]);
                let v_to = x[self.v[&l.to].index()];
                // lift l onto the cone when the interior-point iterate sits a
                // solver tolerance outside it
                let cur = cur.max((p * p + q * q) / v_to);
                LineClearing {
                    from: l.from,
                    to: l.to,
                    p,
                    q,
                    l: cur,
                    socp_gap: v_to * cur - (p * p + q * q),
                }
            })
            .collect();
        let total_losses = net.lines.iter().zip(&lines).map(|(l, c)| l.r * c.l).sum();
        PmClearing {
            nodes,
            lines,
            p_pcc: x[self.pcc.0.index()],
            q_pcc: x[self.pcc.1.index()],
            total_losses,
            objective: sol.objective,
        }
    }
}

/// Clears the primary market.
pub fn clear_pm(net: &RadialNetwork, bids: &[SmoBid], params: &PmParams) -> Result<PmClearing, PmError> {
    let opf = assemble_opf(net, bids, params)?;
    let mut settings = params.solver.clone();
    let mut sol = solve(&opf.program, &settings);
    // stalls near the optimum: loosen the tolerances, at most to 1e-6
    while matches!(sol.status, Status::NumericalFailure(_)) && settings.feas_tol < 1e-6 {
        settings.feas_tol *= 10.0;
        settings.gap_tol *= 10.0;
        log::debug!("PM retry at feas_tol {:.0e}", settings.feas_tol);
        sol = solve(&opf.program, &settings);
    }
    match &sol.status {
        Status::Optimal => Ok(opf.extract(net, &sol)),
        Status::Infeasible { most_violated } => Err(diagnose_infeasibility(net, bids, params, most_violated.clone())),
        other => Err(PmError::SolverFailure(format!("{other:?}"))),
    }
}

#[derive(Clone, Copy)]
enum Family {
    Thermal,
    Voltage,
    Injection,
}

fn relaxed_network(net: &RadialNetwork, family: Family) -> (RadialNetwork, bool) {
    let mut n = net.clone();
    match family {
        Family::Thermal => {
            for l in &mut n.lines {
                l.s_max = f64::INFINITY;
            }
        }
        Family::Voltage => {
            for node in &mut n.nodes {
                node.v_min_sq = 1e-6;
                node.v_max_sq = 1e6;
            }
        }
        Family::Injection => {
            for node in &mut n.nodes {
                node.p_gen = Interval::UNBOUNDED;
                node.q_gen = Interval::UNBOUNDED;
                node.p_load = Interval::UNBOUNDED;
                node.q_load = Interval::UNBOUNDED;
            }
        }
    }
    (n, matches!(family, Family::Injection))
}

/// Relaxes one constraint family at a time; the first one that restores
/// feasibility is reported together with its most violated member at the
/// relaxed optimum.
fn diagnose_infeasibility(net: &RadialNetwork, bids: &[SmoBid], params: &PmParams, fallback: Option<String>) -> PmError {
    for (family, name) in [
        (Family::Thermal, "thermal limits"),
        (Family::Voltage, "voltage limits"),
        (Family::Injection, "generation/load limits"),
    ] {
        let (relaxed, open_bids) = relaxed_network(net, family);
        let relaxed_bids: Vec<SmoBid> = if open_bids {
            bids.iter()
                .map(|b| SmoBid {
                    pg: Interval::UNBOUNDED,
                    qg: Interval::UNBOUNDED,
                    pl: Interval::UNBOUNDED,
                    ql: Interval::UNBOUNDED,
                    ..b.clone()
                })
                .collect()
        } else {
            bids.to_vec()
        };
        let Ok(opf) = assemble_opf(&relaxed, &relaxed_bids, params) else {
            continue;
        };
        let sol = solve(&opf.program, &params.solver);
        if !sol.is_optimal() {
            continue;
        }
        let c = opf.extract(&relaxed, &sol);
        let constraint = match family {
            Family::Thermal => worst(net.lines.iter().zip(&c.lines).map(|(l, r)| {
                ((r.p * r.p + r.q * r.q).sqrt() - l.s_max, format!("thermal[{}]", l.to))
            })),
            Family::Voltage => worst(net.nodes.iter().zip(&c.nodes).map(|(n, r)| {
                let (lo, hi) = if n.kind == NodeKind::Slack { (1.0, 1.0) } else { (n.v_min_sq, n.v_max_sq) };
                ((lo - r.v_sq).max(r.v_sq - hi), format!("v[{}]", n.id))
            })),
            Family::Injection => worst(bids.iter().filter_map(|b| {
                let r = c.node(b.node)?;
                let orig = net.node(b.node).ok()?;
                let viol = [
                    (r.pg, b.pg.intersect(&orig.p_gen), "PG"),
                    (r.qg, b.qg.intersect(&orig.q_gen), "QG"),
                    (r.pl, b.pl.intersect(&orig.p_load), "PL"),
                    (r.ql, b.ql.intersect(&orig.q_load), "QL"),
                ]
                .into_iter()
                .map(|(x, iv, tag)| ((iv.lo - x).max(x - iv.hi), format!("{tag}[{}]", b.node)))
                .max_by(|a, b| a.0.total_cmp(&b.0))?;
                Some(viol)
            })),
        };
        return PmError::Infeasible {
            family: name.to_string(),
            constraint,
        };
    }
    PmError::Infeasible {
        family: "unknown".into(),
        constraint: fallback.unwrap_or_else(|| "unknown".into()),
    }
}

fn worst(items: impl Iterator<Item = (f64, String)>) -> String {
    items
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, n)| n)
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocpGap {
    pub from: usize,
    pub to: usize,
    pub gap: f64,
    pub flagged: bool,
}

/// Per-line relaxation gap `v·l − (P² + Q²)`, flagged above [`SOCP_GAP_FLAG`].
pub fn check_socp_exactness(clearing: &PmClearing) -> Vec<SocpGap> {
    clearing
        .lines
        .iter()
        .map(|l| SocpGap {
            from: l.from,
            to: l.to,
            gap: l.socp_gap,
            flagged: l.socp_gap > SOCP_GAP_FLAG,
        })
        .collect()
}

/// Injection-weighted mean tariff `Σ μ|P| / Σ|P|` over (tariff, injection) pairs.
///
/// ```
/// use lem_core::primary::alpha_var;
/// let a = alpha_var([(0.1, 10.0), (0.2, 30.0)]).unwrap();
/// assert!((a - 0.175).abs() < 1e-12);
/// ```
pub fn alpha_var<I: IntoIterator<Item = (f64, f64)>>(window: I) -> Result<f64, PmError> {
    let (num, den) = window
        .into_iter()
        .fold((0.0, 0.0), |(n, d), (mu, p)| (n + mu * p.abs(), d + p.abs()));
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(PmError::EmptyWindow)
    }
}

/// Generation-cost coefficient of one SMO: a fixed part plus the mean retail
/// tariff of its recent SM clearings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaState {
    pub alpha_fixed: f64,
    pub alpha_var: f64,
}

impl AlphaState {
    pub fn new(alpha_fixed: f64) -> Self {
        Self {
            alpha_fixed,
            alpha_var: 0.0,
        }
    }

    /// Updates from the window of (μᴾ, P*) pairs and returns α^P. An empty or
    /// all-zero window keeps the previous variable part.
    pub fn update<I: IntoIterator<Item = (f64, f64)>>(&mut self, window: I) -> f64 {
        if let Ok(a) = alpha_var(window) {
            self.alpha_var = a;
        }
        self.alpha_p()
    }

    pub fn alpha_p(&self) -> f64 {
        self.alpha_fixed + self.alpha_var
    }
}
