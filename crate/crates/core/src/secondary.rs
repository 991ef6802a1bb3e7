//! Secondary-market clearing for one SMO: four lexicographic stages over DCA
//! setpoints, symmetric flexibility bands and retail tariffs, then an exact
//! pricing pass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::{
    lexicographic_solve, ConvexProgram, LexiConfig, LexiError, LinExpr, Objective,
    SolverSettings, Stage, VarId,
};

/// Quantities below this magnitude (kW or kvar) count as zero injection.
pub const ZERO_INJECTION_KW: f64 = 1e-6;

/// A DCA's baseline net injection and flexibility interval (kW, kvar;
/// generation positive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcaBid {
    pub dca_id: usize,
    pub p0: f64,
    pub q0: f64,
    pub p_lo: f64,
    pub p_hi: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    /// Disutility coefficients, $/kW².
    pub beta_p: f64,
    pub beta_q: f64,
}

impl DcaBid {
    pub fn validate(&self) -> Result<(), SmError> {
        let ok = self.p_lo <= self.p0
            && self.p0 <= self.p_hi
            && self.q_lo <= self.q0
            && self.q0 <= self.q_hi
            && self.beta_p > 0.0
            && self.beta_q > 0.0
            && [self.p0, self.q0, self.p_lo, self.p_hi, self.q_lo, self.q_hi]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SmError::InvalidBid(self.dca_id))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcaClearing {
    pub dca_id: usize,
    pub p_star: f64,
    pub q_star: f64,
    pub dp: f64,
    pub dq: f64,
    /// Retail tariffs, $/kWh and $/kvarh.
    pub mu_p: f64,
    pub mu_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmClearing {
    pub dcas: Vec<DcaClearing>,
    /// Stage objectives F₁..F₄ evaluated at the returned point (F₂ uses the relaxed
    /// bilinear terms).
    pub stage_values: [f64; 4],
    /// Optimal value of each stage when it was solved.
    pub stage_optima: [f64; 4],
    /// Degradation caps imposed on F₁..F₃ in later stages.
    pub stage_caps: [f64; 3],
    /// |f₂(exact tariffs) − f₂(McCormick relaxation)| in $.
    pub relaxation_gap: f64,
    /// Setpoint actually enforced (kW, kvar); differs from the request after
    /// nearest-feasible relaxation.
    pub enforced_setpoint: (f64, f64),
    /// True when the budget rows had to be dropped to obtain a feasible clearing.
    pub budget_dropped: bool,
    /// True when no tariff vector in [0, cap] meets the budget (P or Q).
    pub price_infeasible: bool,
}

impl SmClearing {
    pub fn total_p(&self) -> f64 {
        self.dcas.iter().map(|d| d.p_star).sum()
    }

    pub fn total_q(&self) -> f64 {
        self.dcas.iter().map(|d| d.q_star).sum()
    }

    /// Net payout to DCAs for this clearing, $ (P side, Q side).
    pub fn payout(&self, dt_s_h: f64) -> (f64, f64) {
        self.dcas.iter().fold((0.0, 0.0), |(a, b), d| {
            (a + d.mu_p * d.p_star * dt_s_h, b + d.mu_q * d.q_star * dt_s_h)
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmError {
    #[error("bid of DCA {0} violates lo ≤ baseline ≤ hi or has a nonpositive β")]
    InvalidBid(usize),
    #[error("{0} scores for {1} bids")]
    ScoreMismatch(usize, usize),
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("setpoint outside aggregate bid range (gap {gap_p} kW, {gap_q} kvar)")]
    InfeasibleSetpoint { gap_p: f64, gap_q: f64 },
    #[error("stage {stage} solver failure: {detail}")]
    SolverFailure { stage: usize, detail: String },
    #[error("no secondary clearings left in the budget period")]
    ZeroRemainingClearings,
}

/// Result of [`feasibility_check`]: how far the setpoint lies outside the
/// aggregate bid range on each axis (0 when inside).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetpointGap {
    /// Signed: negative when the setpoint is below ΣP_lo, positive above ΣP_hi.
    pub p: f64,
    pub q: f64,
}

impl SetpointGap {
    pub fn is_ok(&self) -> bool {
        self.p == 0.0 && self.q == 0.0
    }

    pub fn magnitude(&self) -> f64 {
        self.p.abs().max(self.q.abs())
    }
}

fn range_gap(value: f64, lo: f64, hi: f64) -> f64 {
    if value < lo {
        value - lo
    } else if value > hi {
        value - hi
    } else {
        0.0
    }
}

/// Compares a setpoint with the aggregate bid range `[ΣP_lo, ΣP_hi]` (and Q).
///
/// ```
/// use lem_core::secondary::{feasibility_check, DcaBid};
/// let bid = |lo: f64, hi: f64| DcaBid {
///     dca_id: 0, p0: (lo + hi) / 2.0, q0: 0.0, p_lo: lo, p_hi: hi,
///     q_lo: 0.0, q_hi: 0.0, beta_p: 0.5, beta_q: 0.5,
/// };
/// let bids = [bid(-20.0, -5.0), bid(-10.0, -5.0)];
/// assert!(feasibility_check(&bids, (-20.0, 0.0)).is_ok());
/// assert_eq!(feasibility_check(&bids, (-35.0, 0.0)).p, -5.0);
/// ```
pub fn feasibility_check(bids: &[DcaBid], setpoint: (f64, f64)) -> SetpointGap {
    let sum = |f: fn(&DcaBid) -> f64| bids.iter().map(f).sum::<f64>();
    SetpointGap {
        p: range_gap(setpoint.0, sum(|b| b.p_lo), sum(|b| b.p_hi)),
        q: range_gap(setpoint.1, sum(|b| b.q_lo), sum(|b| b.q_hi)),
    }
}

/// Nearest point of the aggregate bid range to `setpoint`, with the shortfall
/// (requested − enforced).
pub fn relax_to_nearest(bids: &[DcaBid], setpoint: (f64, f64)) -> ((f64, f64), SetpointGap) {
    let gap = feasibility_check(bids, setpoint);
    ((setpoint.0 - gap.p, setpoint.1 - gap.q), gap)
}

/// How the SMO's budget right-hand side is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Payouts within a primary period may not exceed that period's PM credit.
    Strict,
    /// Cumulative payouts may not exceed cumulative PM credit.
    Relaxed,
    /// The period's leftover credit is spread evenly over its remaining clearings.
    #[default]
    #[serde(alias = "quasi")]
    QuasiMultiperiod,
}

impl std::str::FromStr for BudgetMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "strict" => Ok(Self::Strict),
            "relaxed" => Ok(Self::Relaxed),
            "quasi" | "quasi_multiperiod" => Ok(Self::QuasiMultiperiod),
            other => Err(format!("unknown budget mode `{other}`")),
        }
    }
}

/// Signed $ amounts, P side and Q side.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Money {
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub mode: BudgetMode,
    /// Secondary clearings per primary period.
    pub n_s: usize,
    pub revenue_received: Money,
    pub paid_out: Money,
    pub period_revenue: Money,
    pub period_paid: Money,
    pub remaining_secondary_clearings: usize,
}

impl BudgetLedger {
    pub fn new(mode: BudgetMode, n_s: usize) -> Self {
        Self {
            mode,
            n_s,
            revenue_received: Money::default(),
            paid_out: Money::default(),
            period_revenue: Money::default(),
            period_paid: Money::default(),
            remaining_secondary_clearings: 0,
        }
    }

    /// Opens a new primary period funded by `credit`, covering `clearings` SM
    /// clearings.
    pub fn credit_period(&mut self, credit: Money, clearings: usize) {
        self.revenue_received.p += credit.p;
        self.revenue_received.q += credit.q;
        self.period_revenue = credit;
        self.period_paid = Money::default();
        self.remaining_secondary_clearings = clearings;
    }

    /// Records one SM clearing's payout.
    pub fn debit(&mut self, payout: Money) {
        self.paid_out.p += payout.p;
        self.paid_out.q += payout.q;
        self.period_paid.p += payout.p;
        self.period_paid.q += payout.q;
        self.remaining_secondary_clearings = self.remaining_secondary_clearings.saturating_sub(1);
    }
}

/// Budget right-hand side (maximum net payout, $) for the next SM clearing.
///
/// ```
/// use lem_core::secondary::{budget_rhs, BudgetLedger, BudgetMode, Money};
/// let mut l = BudgetLedger::new(BudgetMode::QuasiMultiperiod, 5);
/// l.credit_period(Money { p: 10.0, q: 0.0 }, 5);
/// l.debit(Money { p: 2.0, q: 0.0 });
/// l.debit(Money { p: 2.0, q: 0.0 });
/// assert_eq!(budget_rhs(&l).unwrap().p, 2.0); // (10 − 4) / 3
/// ```
pub fn budget_rhs(ledger: &BudgetLedger) -> Result<Money, SmError> {
    match ledger.mode {
        BudgetMode::Strict => Ok(Money {
            p: ledger.period_revenue.p - ledger.period_paid.p,
            q: ledger.period_revenue.q - ledger.period_paid.q,
        }),
        BudgetMode::Relaxed => Ok(Money {
            p: ledger.revenue_received.p - ledger.paid_out.p,
            q: ledger.revenue_received.q - ledger.paid_out.q,
        }),
        BudgetMode::QuasiMultiperiod => {
            let n = ledger.remaining_secondary_clearings;
            if n == 0 {
                return Err(SmError::ZeroRemainingClearings);
            }
            Ok(Money {
                p: (ledger.period_revenue.p - ledger.period_paid.p) / n as f64,
                q: (ledger.period_revenue.q - ledger.period_paid.q) / n as f64,
            })
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("budget {rhs} $ unreachable; best payout is {best} $")]
pub struct PriceInfeasible {
    pub rhs: f64,
    pub best: f64,
    /// The payout-minimizing tariffs, applied anyway.
    pub tariffs: Vec<f64>,
}

/// Exact tariffs for frozen quantities: minimizes `Σ μ_j x_j` over `μ ∈ [0, cap]`
/// subject to `Σ μ_j x_j Δt ≤ rhs`. Loads get the ceiling, generators zero, and
/// zero-injection DCAs keep their `fallback` tariff (clamped to the ceiling).
///
/// ```
/// use lem_core::secondary::recover_prices;
/// let mu = recover_prices(&[-10.0], 1.0, 0.2, 1.0 / 60.0, &[0.05]).unwrap();
/// assert_eq!(mu, vec![0.2]);
/// ```
pub fn recover_prices(
    quantities: &[f64],
    rhs: f64,
    cap: f64,
    dt_h: f64,
    fallback: &[f64],
) -> Result<Vec<f64>, PriceInfeasible> {
    let tariffs: Vec<f64> = quantities
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            if x.abs() <= ZERO_INJECTION_KW {
                fallback.get(j).copied().unwrap_or(0.0).clamp(0.0, cap)
            } else if x < 0.0 {
                cap
            } else {
                0.0
            }
        })
        .collect();
    let best: f64 = tariffs
        .iter()
        .zip(quantities)
        .map(|(m, x)| m * x * dt_h)
        .sum();
    if best <= rhs + 1e-9 {
        Ok(tariffs)
    } else {
        Err(PriceInfeasible { rhs, best, tariffs })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmParams {
    /// Tariff ceilings, $/kWh and $/kvarh.
    pub caps: (f64, f64),
    /// SM period in hours.
    pub dt_s_h: f64,
    pub lexi: LexiConfig,
    pub solver: SolverSettings,
}

impl Default for SmParams {
    fn default() -> Self {
        Self {
            caps: (0.2, 0.2),
            dt_s_h: 1.0 / 60.0,
            lexi: LexiConfig::default(),
            solver: SolverSettings::default(),
        }
    }
}

/// Everything one SM clearing consumes.
#[derive(Debug, Clone)]
pub struct SmRequest<'a> {
    pub bids: &'a [DcaBid],
    pub scores: &'a [f64],
    /// PM setpoint for this SMO (kW, kvar).
    pub setpoint: (f64, f64),
    /// Maximum net payout this clearing, $.
    pub budget: Money,
    /// Tariffs used for zero-injection DCAs (previous tariffs, or the d-LMP at
    /// bootstrap), one pair per bid.
    pub fallback_tariffs: &'a [(f64, f64)],
}

struct DcaVars {
    p: VarId,
    q: VarId,
    dp: VarId,
    dq: VarId,
    wp: VarId,
    wq: VarId,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// McCormick envelope of `w = μ·x` over `μ ∈ [0, cap]`, `x ∈ [lo, hi]`.
fn mccormick(prog: &mut ConvexProgram, tag: &str, w: VarId, mu: VarId, x: VarId, cap: f64, lo: f64, hi: f64) {
    prog.add_ge(format!("{tag}.mc1"), w - mu * lo, 0.0);
    prog.add_ge(format!("{tag}.mc2"), w - x * cap - mu * hi, -cap * hi);
    prog.add_le(format!("{tag}.mc3"), w - x * cap - mu * lo, -cap * lo);
    prog.add_le(format!("{tag}.mc4"), w - mu * hi, 0.0);
}

fn build(req: &SmRequest<'_>, params: &SmParams, setpoint: (f64, f64), with_budget: bool) -> (ConvexProgram, Vec<DcaVars>, [Objective; 4]) {
    let mut prog = ConvexProgram::new();
    let (cap_p, cap_q) = params.caps;
    let mut vars = Vec::with_capacity(req.bids.len());
    for b in req.bids {
        let j = b.dca_id;
        let p = prog.add_var(format!("P[{j}]"), b.p_lo, b.p_hi);
        let q = prog.add_var(format!("Q[{j}]"), b.q_lo, b.q_hi);
        let dp = prog.add_var(format!("dP[{j}]"), 0.0, (b.p_hi - b.p_lo) / 2.0);
        let dq = prog.add_var(format!("dQ[{j}]"), 0.0, (b.q_hi - b.q_lo) / 2.0);
        let mp = prog.add_var(format!("muP[{j}]"), 0.0, cap_p);
        let mq = prog.add_var(format!("muQ[{j}]"), 0.0, cap_q);
        let wp = prog.add_free_var(format!("wP[{j}]"));
        let wq = prog.add_free_var(format!("wQ[{j}]"));
        prog.add_ge(format!("band_lo.P[{j}]"), p - dp, b.p_lo);
        prog.add_le(format!("band_hi.P[{j}]"), p + dp, b.p_hi);
        prog.add_ge(format!("band_lo.Q[{j}]"), q - dq, b.q_lo);
        prog.add_le(format!("band_hi.Q[{j}]"), q + dq, b.q_hi);
        mccormick(&mut prog, &format!("wP[{j}]"), wp, mp, p, cap_p, b.p_lo, b.p_hi);
        mccormick(&mut prog, &format!("wQ[{j}]"), wq, mq, q, cap_q, b.q_lo, b.q_hi);
        vars.push(DcaVars { p, q, dp, dq, wp, wq });
    }
    prog.add_eq("balance.P", LinExpr::sum(vars.iter().map(|v| v.p)), setpoint.0);
    prog.add_eq("balance.Q", LinExpr::sum(vars.iter().map(|v| v.q)), setpoint.1);
    let dt = params.dt_s_h;
    if with_budget {
        prog.add_le("budget.P", LinExpr::sum(vars.iter().map(|v| v.wp)) * dt, req.budget.p);
        prog.add_le("budget.Q", LinExpr::sum(vars.iter().map(|v| v.wq)) * dt, req.budget.q);
    }

    let mut f1 = LinExpr::new();
    let mut f2 = LinExpr::new();
    let mut f3 = LinExpr::new();
    let mut f4 = Objective::zero();
    for ((b, v), &c) in req.bids.iter().zip(&vars).zip(req.scores) {
        f1.add_term(v.p, -c * sign(b.p0));
        f1.add_term(v.q, -c * sign(b.q0));
        f2.add_term(v.wp, dt);
        f2.add_term(v.wq, dt);
        f3.add_term(v.dp, -1.0);
        f3.add_term(v.dq, -1.0);
        f4.add_square(b.beta_p, v.p - b.p0);
        f4.add_square(b.beta_q, v.q - b.q0);
    }
    (
        prog,
        vars,
        [Objective::linear(f1), Objective::linear(f2), Objective::linear(f3), f4],
    )
}

/// Clears one SMO's secondary market.
///
/// Returns [`SmError::InfeasibleSetpoint`] when the setpoint lies outside the
/// aggregate bid range; use [`clear_sm_relaxed`] to fall back to the nearest
/// feasible setpoint. If the budget rows make the stages infeasible they are
/// dropped and `budget_dropped` is set.
pub fn clear_sm(req: &SmRequest<'_>, params: &SmParams) -> Result<SmClearing, SmError> {
    for b in req.bids {
        b.validate()?;
    }
    if req.scores.len() != req.bids.len() {
        return Err(SmError::ScoreMismatch(req.scores.len(), req.bids.len()));
    }
    if let Some(&s) = req.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(SmError::InvalidScore(s));
    }
    let gap = feasibility_check(req.bids, req.setpoint);
    if !gap.is_ok() {
        return Err(SmError::InfeasibleSetpoint {
            gap_p: gap.p,
            gap_q: gap.q,
        });
    }
    clear_at(req, params, req.setpoint)
}

/// [`clear_sm`] with nearest-feasible relaxation of an out-of-range setpoint.
/// The shortfall (requested − enforced) is returned alongside the clearing.
pub fn clear_sm_relaxed(req: &SmRequest<'_>, params: &SmParams) -> Result<(SmClearing, SetpointGap), SmError> {
    match clear_sm(req, params) {
        Err(SmError::InfeasibleSetpoint { .. }) => {
            let (enforced, gap) = relax_to_nearest(req.bids, req.setpoint);
            Ok((clear_at(req, params, enforced)?, gap))
        }
        other => other.map(|c| (c, SetpointGap { p: 0.0, q: 0.0 })),
    }
}

fn clear_at(req: &SmRequest<'_>, params: &SmParams, setpoint: (f64, f64)) -> Result<SmClearing, SmError> {
    if req.bids.is_empty() {
        return Ok(SmClearing {
            dcas: Vec::new(),
            stage_values: [0.0; 4],
            stage_optima: [0.0; 4],
            stage_caps: [0.0; 3],
            relaxation_gap: 0.0,
            enforced_setpoint: setpoint,
            budget_dropped: false,
            price_infeasible: false,
        });
    }
    let run = |with_budget: bool| {
        let (prog, vars, objs) = build(req, params, setpoint, with_budget);
        let stages: Vec<Stage> = ["f1", "f2", "f3", "f4"]
            .iter()
            .zip(objs)
            .map(|(id, o)| Stage::new(*id, o))
            .collect();
        lexicographic_solve(&prog, &stages, &params.lexi, &params.solver).map(|s| (s, vars))
    };
    let (staged, vars, budget_dropped) = match run(true) {
        Ok((s, v)) => (s, v, false),
        Err(LexiError::StageInfeasible { .. }) => match run(false) {
            Ok((s, v)) => (s, v, true),
            Err(e) => return Err(lexi_to_sm(e)),
        },
        Err(e) => return Err(lexi_to_sm(e)),
    };

    let x = staged.primal();
    let p: Vec<f64> = vars.iter().map(|v| x[v.p.index()]).collect();
    let q: Vec<f64> = vars.iter().map(|v| x[v.q.index()]).collect();
    let dt = params.dt_s_h;
    let fb_p: Vec<f64> = req.fallback_tariffs.iter().map(|t| t.0).collect();
    let fb_q: Vec<f64> = req.fallback_tariffs.iter().map(|t| t.1).collect();
    let mut price_infeasible = false;
    let mut take = |r: Result<Vec<f64>, PriceInfeasible>| match r {
        Ok(t) => t,
        Err(e) => {
            price_infeasible = true;
            e.tariffs
        }
    };
    let mu_p = take(recover_prices(&p, req.budget.p, params.caps.0, dt, &fb_p));
    let mu_q = take(recover_prices(&q, req.budget.q, params.caps.1, dt, &fb_q));

    let mut values = staged.objective_values();
    let relaxed_f2 = values[1];
    let exact_f2: f64 = (0..p.len()).map(|j| (mu_p[j] * p[j] + mu_q[j] * q[j]) * dt).sum();
    let dcas: Vec<DcaClearing> = req
        .bids
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let v = &vars[j];
            // δ enters only F₃ and the band rows, so widening it to the largest
            // symmetric band around the frozen setpoint improves F₃ and nothing else
            let dp = (p[j] - b.p_lo).min(b.p_hi - p[j]).max(x[v.dp.index()]).max(0.0);
            let dq = (q[j] - b.q_lo).min(b.q_hi - q[j]).max(x[v.dq.index()]).max(0.0);
            DcaClearing {
                dca_id: b.dca_id,
                p_star: p[j],
                q_star: q[j],
                dp,
                dq,
                mu_p: mu_p[j],
                mu_q: mu_q[j],
            }
        })
        .collect();
    values[2] = -dcas.iter().map(|d| d.dp + d.dq).sum::<f64>();
    let st = &staged.stages;
    Ok(SmClearing {
        dcas,
        stage_values: [values[0], values[1], values[2], values[3]],
        stage_optima: [st[0].f_star, st[1].f_star, st[2].f_star, st[3].f_star],
        stage_caps: [st[0].cap, st[1].cap, st[2].cap],
        relaxation_gap: (exact_f2 - relaxed_f2).abs(),
        enforced_setpoint: setpoint,
        budget_dropped,
        price_infeasible,
    })
}

fn lexi_to_sm(e: LexiError) -> SmError {
    match e {
        LexiError::StageInfeasible { stage, most_violated } => SmError::SolverFailure {
            stage,
            detail: format!("infeasible, most violated {most_violated:?}"),
        },
        LexiError::SolverFailure { stage, status } => SmError::SolverFailure {
            stage,
            detail: format!("{status:?}"),
        },
        LexiError::InvalidConfig(s) => SmError::SolverFailure { stage: 0, detail: s },
    }
}
