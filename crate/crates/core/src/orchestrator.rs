//! The interleaved market timeline: one SM clearing per SMO every Δt_s, and a PM
//! clearing every Δt_p right after the SM clearings of that minute. Also the
//! PM-only comparison run.

use std::collections::VecDeque;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::commitment::{simulate_response, CommitmentError, CommitmentLedger, ResponseModel};
use crate::convex::{LexiConfig, SolverSettings};
use crate::data::{
    flex_interval, format_timestamp, gen_synthetic_feeder, BidRow, DataError, DcaSplit, LineRow, LmpSeries, PmRow,
    ProfileSeries, RunMode, RunResults, RunStats, ScenarioConfig, SmRow, TotalsRow,
};
use crate::grid::{build_feeder, FeederSpec, GridError, Interval, RadialNetwork};
use crate::primary::{check_socp_exactness, clear_pm, AlphaState, PmClearing, PmError, PmParams, SmoBid};
use crate::secondary::{
    budget_rhs, clear_sm_relaxed, BudgetLedger, BudgetMode, DcaBid, Money, SetpointGap, SmClearing, SmError, SmParams,
    SmRequest,
};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("SM clearing at minute {t}, node {node}: {source}")]
    Sm {
        t: usize,
        node: usize,
        #[source]
        source: SmError,
    },
    #[error("PM clearing at minute {t}: {source}")]
    Pm {
        t: usize,
        #[source]
        source: PmError,
    },
    #[error("commitment update at minute {t}: {source}")]
    Commitment {
        t: usize,
        #[source]
        source: CommitmentError,
    },
    #[error("empty SM clearing at node {0}")]
    EmptyClearing(usize),
    #[error("no profile for node {0}")]
    MissingProfiles(usize),
}

/// Clearing periods of a run, in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timeline {
    pub dt_s_minutes: u32,
    pub dt_p_minutes: u32,
    pub horizon_minutes: usize,
}

impl Timeline {
    pub fn n_s(&self) -> usize {
        (self.dt_p_minutes / self.dt_s_minutes) as usize
    }

    pub fn n_p(&self) -> usize {
        self.horizon_minutes / self.dt_p_minutes as usize
    }

    pub fn sm_steps(&self) -> impl Iterator<Item = usize> {
        (0..self.horizon_minutes).step_by(self.dt_s_minutes as usize)
    }

    pub fn is_pm_boundary(&self, t: usize) -> bool {
        t % self.dt_p_minutes as usize == 0
    }

    pub fn dt_s_h(&self) -> f64 {
        self.dt_s_minutes as f64 / 60.0
    }

    pub fn dt_p_h(&self) -> f64 {
        self.dt_p_minutes as f64 / 60.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcaSetup {
    pub id: usize,
    /// Fractions (Δ̲ᴾ, Δ̄ᴾ, Δ̲Q, Δ̄Q) drawn once.
    pub flex: [f64; 4],
    pub beta_p: f64,
    pub beta_q: f64,
    pub response: ResponseModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoSetup {
    pub node: usize,
    pub split: DcaSplit,
    pub dcas: Vec<DcaSetup>,
    pub alpha_fixed: f64,
}

/// Everything both runs share: network, input series and the DCA population.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub feeder: FeederSpec,
    pub network: RadialNetwork,
    pub profiles: ProfileSeries,
    pub lmp: LmpSeries,
    pub smos: Vec<SmoSetup>,
}

impl Scenario {
    /// Loads the configured inputs, generating any that are not given.
    pub fn from_config(config: &ScenarioConfig) -> Result<Self, OrchestratorError> {
        config.validate()?;
        let needs_synth = config.feeder.is_none() || config.profiles.is_none() || config.lmp.is_none();
        let synth = if needs_synth {
            Some(gen_synthetic_feeder(&config.synthetic, config.horizon_minutes, config.seed)?)
        } else {
            None
        };
        let feeder = match &config.feeder {
            Some(p) => FeederSpec::load(p)?,
            None => synth.as_ref().expect("generated").feeder.clone(),
        };
        let profiles = match &config.profiles {
            Some(p) => ProfileSeries::load(p)?,
            None => synth.as_ref().expect("generated").profiles.clone(),
        };
        let lmp = match &config.lmp {
            Some(p) => LmpSeries::load(p)?,
            None => synth.as_ref().expect("generated").lmp.clone(),
        };
        Self::new(config.clone(), feeder, profiles, lmp)
    }

    pub fn new(config: ScenarioConfig, feeder: FeederSpec, profiles: ProfileSeries, lmp: LmpSeries) -> Result<Self, OrchestratorError> {
        config.validate()?;
        let network = build_feeder(&feeder)?;
        if profiles.cadence_minutes != 1 {
            return Err(DataError::SchemaMismatch(format!("profile cadence {} min, expected 1", profiles.cadence_minutes)).into());
        }
        if profiles.len() < config.horizon_minutes {
            return Err(DataError::ShortSeries(format!(
                "{} profile rows for a {} minute horizon",
                profiles.len(),
                config.horizon_minutes
            ))
            .into());
        }
        let needed = config.horizon_minutes.div_ceil(lmp.cadence_minutes as usize);
        if lmp.values.len() < needed {
            return Err(DataError::ShortSeries(format!("{} LMP rows, {needed} needed", lmp.values.len())).into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(4);
        let d = &config.dca;
        let r = &config.response;
        let mut next_id = 1;
        let mut smos = Vec::new();
        for node in network.smo_ids() {
            if !profiles.nodes.contains_key(&node) {
                return Err(OrchestratorError::MissingProfiles(node));
            }
            let n = rng.random_range(d.count.0..=d.count.1);
            let split = DcaSplit::draw(n, d.share, &mut rng);
            let dcas = (0..n)
                .map(|j| {
                    let mut frac = || rng.random_range(0.0..=d.flex_cap);
                    let flex = [frac(), frac(), frac(), frac()];
                    let dca = DcaSetup {
                        id: next_id,
                        flex,
                        beta_p: rng.random_range(d.beta.0..=d.beta.1),
                        beta_q: rng.random_range(d.beta.0..=d.beta.1),
                        response: ResponseModel {
                            follow_prob: r.follow_probs[j % r.follow_probs.len()],
                            overshoot_scale: r.overshoot_scale,
                            noise_scale: r.noise_scale,
                            min_violation_kw: r.min_violation_kw,
                            rng_seed: config.seed,
                        },
                    };
                    next_id += 1;
                    dca
                })
                .collect();
            let alpha_fixed = rng.random_range(d.alpha_fixed.0..=d.alpha_fixed.1);
            smos.push(SmoSetup {
                node,
                split,
                dcas,
                alpha_fixed,
            });
        }
        Ok(Self {
            config,
            feeder,
            network,
            profiles,
            lmp,
            smos,
        })
    }

    pub fn timeline(&self) -> Timeline {
        Timeline {
            dt_s_minutes: self.config.dt_s_minutes,
            dt_p_minutes: self.config.dt_p_minutes,
            horizon_minutes: self.config.horizon_minutes,
        }
    }

    pub fn timestamp(&self, minute: usize) -> NaiveDateTime {
        self.profiles.start + Duration::minutes(minute as i64)
    }

    /// Bids of one SMO's DCAs at `minute`.
    pub fn dca_bids(&self, smo: &SmoSetup, minute: usize) -> Vec<DcaBid> {
        let (p, q) = self.profiles.at(smo.node, minute).expect("profile length checked");
        smo.split
            .apply(p, q)
            .into_iter()
            .zip(&smo.dcas)
            .map(|((p0, q0), d)| {
                let (p_lo, p_hi) = flex_interval(p0, d.flex[0], d.flex[1]);
                let (q_lo, q_hi) = flex_interval(q0, d.flex[2], d.flex[3]);
                DcaBid {
                    dca_id: d.id,
                    p0,
                    q0,
                    p_lo: p_lo.min(p0),
                    p_hi: p_hi.max(p0),
                    q_lo: q_lo.min(q0),
                    q_hi: q_hi.max(q0),
                    beta_p: d.beta_p,
                    beta_q: d.beta_q,
                }
            })
            .collect()
    }

    pub fn sm_params(&self) -> SmParams {
        let m = &self.config.market;
        SmParams {
            caps: (m.price_cap_p, m.price_cap_q),
            dt_s_h: self.timeline().dt_s_h(),
            lexi: LexiConfig {
                epsilon: m.epsilon,
                ..LexiConfig::default()
            },
            solver: SolverSettings::default(),
        }
    }

    pub fn pm_params(&self, minute: usize) -> PmParams {
        let m = &self.config.market;
        let lambda_p = self.lmp.at_minute(minute).expect("LMP length checked");
        PmParams {
            lambda_p,
            lambda_q: m.q_lmp_ratio * lambda_p,
            xi: m.xi,
            dt_p_h: self.timeline().dt_p_h(),
            solver: SolverSettings {
                feas_tol: 1e-8,
                gap_tol: 1e-8,
                ..SolverSettings::default()
            },
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Builds an SMO's PM bid from its latest SM clearing. DCAs cleared at
/// P* ≥ 0 form the generation side, the others the load side (magnitudes);
/// each side's range is the sum of its members' bands. Inputs in kW, output
/// in pu.
///
/// ```
/// use lem_core::orchestrator::aggregate_smo_bid;
/// use lem_core::secondary::{DcaBid, DcaClearing};
/// let c = |id, p, dp| DcaClearing { dca_id: id, p_star: p, q_star: 0.0, dp, dq: 0.0, mu_p: 0.0, mu_q: 0.0 };
/// let dcas = [c(1, -10.0, 2.0), c(2, -5.0, 1.0), c(3, 4.0, 1.0)];
/// let b = aggregate_smo_bid(7, &dcas, &[0.5, 0.5, 0.5], (5.0, 0.5), 1.0).unwrap();
/// assert_eq!((b.pl0, b.pl.lo, b.pl.hi), (15.0, 12.0, 18.0));
/// assert_eq!(b.net_p_range().lo, -15.0);
/// ```
pub fn aggregate_smo_bid(
    node: usize,
    dcas: &[crate::secondary::DcaClearing],
    betas: &[f64],
    alpha: (f64, f64),
    s_base_kw: f64,
) -> Result<SmoBid, OrchestratorError> {
    if dcas.is_empty() {
        return Err(OrchestratorError::EmptyClearing(node));
    }
    let s = 1.0 / s_base_kw;
    let (mut pg, mut pg_lo, mut pg_hi) = (0.0, 0.0, 0.0);
    let (mut pl, mut pl_lo, mut pl_hi) = (0.0, 0.0, 0.0);
    let (mut qg, mut qg_lo, mut qg_hi) = (0.0, 0.0, 0.0);
    let (mut ql, mut ql_lo, mut ql_hi) = (0.0, 0.0, 0.0);
    for d in dcas {
        if d.p_star >= 0.0 {
            pg += d.p_star;
            pg_lo += d.p_star - d.dp;
            pg_hi += d.p_star + d.dp;
            qg += d.q_star;
            qg_lo += d.q_star - d.dq;
            qg_hi += d.q_star + d.dq;
        } else {
            pl -= d.p_star;
            pl_lo += -d.p_star - d.dp;
            pl_hi += -d.p_star + d.dp;
            ql -= d.q_star;
            ql_lo += -d.q_star - d.dq;
            ql_hi += -d.q_star + d.dq;
        }
    }
    let beta = mean(betas.iter().copied());
    Ok(SmoBid {
        node,
        pg0: pg * s,
        qg0: qg * s,
        pl0: pl * s,
        ql0: ql * s,
        pg: Interval::new(pg_lo * s, pg_hi * s),
        qg: Interval::new(qg_lo * s, qg_hi * s),
        pl: Interval::new(pl_lo * s, pl_hi * s),
        ql: Interval::new(ql_lo * s, ql_hi * s),
        beta_p: beta,
        beta_q: beta,
        alpha_p: alpha.0,
        alpha_q: alpha.1,
    })
}

fn scaled(x0: f64, frac: f64) -> Interval {
    let (a, b) = (x0 * (1.0 - frac), x0 * (1.0 + frac));
    Interval::new(a.min(b), a.max(b))
}

/// PM bid of a node when the PMO bypasses the SM: ±`frac` around the raw
/// generation-side and load-side baselines.
pub fn pm_only_bid(node: usize, bids: &[DcaBid], frac: f64, alpha: (f64, f64), s_base_kw: f64) -> SmoBid {
    let s = 1.0 / s_base_kw;
    let (mut g, mut l, mut qg, mut ql) = (0.0, 0.0, 0.0, 0.0);
    for b in bids {
        if b.p0 >= 0.0 {
            g += b.p0;
            qg += b.q0;
        } else {
            l -= b.p0;
            ql -= b.q0;
        }
    }
    let beta_p = mean(bids.iter().map(|b| b.beta_p));
    let beta_q = mean(bids.iter().map(|b| b.beta_q));
    SmoBid {
        node,
        pg0: g * s,
        qg0: qg * s,
        pl0: l * s,
        ql0: ql * s,
        pg: scaled(g * s, frac),
        qg: scaled(qg * s, frac),
        pl: scaled(l * s, frac),
        ql: scaled(ql * s, frac),
        beta_p,
        beta_q,
        alpha_p: alpha.0,
        alpha_q: alpha.1,
    }
}

/// Mutable per-SMO state of a with-SMO run.
#[derive(Debug, Clone)]
pub struct SmoState {
    pub node: usize,
    /// PM setpoint (kW, kvar) and the PM clearing minute it came from
    /// (`None` for the bootstrap setpoint).
    pub setpoint: (f64, f64),
    pub setpoint_from: Option<usize>,
    /// Nodal d-LMPs of the governing PM clearing, $/kWh.
    pub mu_star: (f64, f64),
    pub budget: BudgetLedger,
    pub commitment: CommitmentLedger,
    pub alpha: AlphaState,
    pub tariffs: Vec<(f64, f64)>,
    /// (μᴾ, P*) of each DCA over the last n_s clearings.
    pub window: VecDeque<Vec<(f64, f64)>>,
    pub last: Option<SmClearing>,
    pub last_bids: Vec<DcaBid>,
}

#[derive(Debug, Clone)]
pub struct ScenarioState {
    pub smos: Vec<SmoState>,
    pub clock: Option<usize>,
}

/// Initial setpoints (sum of DCA baselines), prices (first LMP) and ledgers
/// (one primary period credited, covering the single SM clearing at t = 0).
pub fn bootstrap(scn: &Scenario, mode: BudgetMode) -> Result<ScenarioState, OrchestratorError> {
    let tl = scn.timeline();
    let lambda = scn.lmp.values.first().copied().ok_or(DataError::ShortSeries("empty LMP series".into()))?;
    let mu_star = (lambda, scn.config.market.q_lmp_ratio * lambda);
    let initial = scn.config.market.initial_tariff.unwrap_or(lambda);
    let mut smos = Vec::new();
    for smo in &scn.smos {
        if scn.profiles.at(smo.node, 0).is_none() {
            return Err(OrchestratorError::MissingProfiles(smo.node));
        }
        let bids = scn.dca_bids(smo, 0);
        let setpoint = (bids.iter().map(|b| b.p0).sum(), bids.iter().map(|b| b.q0).sum());
        let mut budget = BudgetLedger::new(mode, tl.n_s());
        budget.credit_period(credit(mu_star, setpoint, tl.dt_p_h()), 1);
        smos.push(SmoState {
            node: smo.node,
            setpoint,
            setpoint_from: None,
            mu_star,
            budget,
            commitment: CommitmentLedger::new(smo.dcas.iter().map(|d| d.id).collect(), scn.network.s_base_kw()),
            alpha: AlphaState::new(smo.alpha_fixed),
            tariffs: vec![(initial, scn.config.market.q_lmp_ratio * initial); smo.dcas.len()],
            window: VecDeque::new(),
            last: None,
            last_bids: bids,
        });
    }
    Ok(ScenarioState { smos, clock: None })
}

fn credit(mu: (f64, f64), setpoint: (f64, f64), dt_h: f64) -> Money {
    Money {
        p: mu.0 * setpoint.0 * dt_h,
        q: mu.1 * setpoint.1 * dt_h,
    }
}

/// One SM clearing as seen by an [`Observer`].
pub struct SmEvent<'a> {
    pub t: usize,
    pub node: usize,
    pub request: &'a SmRequest<'a>,
    pub clearing: &'a SmClearing,
    pub gap: SetpointGap,
    pub budget_mode: BudgetMode,
    pub setpoint_from: Option<usize>,
    pub scores_before: &'a [f64],
    pub scores_after: &'a [f64],
    pub actuals: &'a [(f64, f64)],
    pub dt_s_h: f64,
    pub caps: (f64, f64),
}

/// One PM clearing as seen by an [`Observer`].
pub struct PmEvent<'a> {
    pub t: usize,
    pub bids: &'a [SmoBid],
    pub clearing: &'a PmClearing,
    pub ledgers: &'a [BudgetLedger],
}

/// Hooks for property checks on a running timeline.
pub trait Observer {
    fn on_sm(&mut self, _e: &SmEvent<'_>) {}
    fn on_pm(&mut self, _e: &PmEvent<'_>) {}
}

impl Observer for () {}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub results: RunResults,
    pub stats: RunStats,
    pub final_state: Option<ScenarioState>,
}

fn record_pm(
    scn: &Scenario,
    t: usize,
    bids: &[SmoBid],
    pm: &PmClearing,
    lambda_p: f64,
    results: &mut RunResults,
    stats: &mut RunStats,
) {
    let ts = format_timestamp(scn.timestamp(t));
    let kw = scn.network.s_base_kw();
    for b in bids {
        let r = b.net_p_range();
        results.bids.push(BidRow {
            t: ts.clone(),
            node: b.node,
            pg_lo: b.pg.lo * kw,
            pg_hi: b.pg.hi * kw,
            pl_lo: b.pl.lo * kw,
            pl_hi: b.pl.hi * kw,
            p_lo: r.lo * kw,
            p_hi: r.hi * kw,
        });
    }
    for n in &pm.nodes {
        results.pm.push(PmRow {
            t: ts.clone(),
            node: n.node,
            p_net: n.p_net * kw,
            q_net: n.q_net * kw,
            v_sq: n.v_sq,
            dlmp_p: n.dlmp_p,
            dlmp_q: n.dlmp_q,
        });
    }
    let gaps = check_socp_exactness(pm);
    let mut max_gap = f64::NEG_INFINITY;
    for (l, g) in pm.lines.iter().zip(&gaps) {
        results.lines.push(LineRow {
            t: ts.clone(),
            from: l.from,
            to: l.to,
            p: l.p,
            q: l.q,
            l: l.l,
            socp_gap: l.socp_gap,
        });
        max_gap = max_gap.max(g.gap);
        stats.min_socp_gap = stats.min_socp_gap.min(g.gap);
        stats.flagged_lines += g.flagged as usize;
    }
    stats.max_socp_gap = stats.max_socp_gap.max(max_gap);
    if max_gap > crate::primary::SOCP_GAP_FLAG {
        log::debug!("minute {t}: SOCP relaxation gap {max_gap:.3e}");
    }
    results.totals.push(TotalsRow {
        t: ts,
        p_pcc: pm.p_pcc * kw,
        q_pcc: pm.q_pcc * kw,
        losses_kw: pm.total_losses * kw,
        lambda_p,
        objective: pm.objective,
        max_socp_gap: max_gap,
    });
    stats.pm_clearings += 1;
}

fn fresh_stats() -> RunStats {
    RunStats {
        max_socp_gap: f64::NEG_INFINITY,
        min_socp_gap: f64::INFINITY,
        ..RunStats::default()
    }
}

/// Runs the with-SMO timeline.
pub fn run_timeline(scn: &Scenario, mode: BudgetMode) -> Result<RunOutcome, OrchestratorError> {
    run_timeline_observed(scn, mode, &mut ())
}

pub fn run_timeline_observed(scn: &Scenario, mode: BudgetMode, obs: &mut dyn Observer) -> Result<RunOutcome, OrchestratorError> {
    let tl = scn.timeline();
    let n_s = tl.n_s();
    let kw = scn.network.s_base_kw();
    let params = scn.sm_params();
    let mut state = bootstrap(scn, mode)?;
    let mut results = RunResults::new(RunMode::WithSmo, tl.dt_p_minutes);
    let mut stats = fresh_stats();

    for t in tl.sm_steps() {
        if let Some(prev) = state.clock {
            assert!(t > prev, "clock must advance");
        }
        state.clock = Some(t);
        let ts = format_timestamp(scn.timestamp(t));
        for (setup, st) in scn.smos.iter().zip(state.smos.iter_mut()) {
            // a setpoint is only ever consumed after the PM clearing that produced it
            if let Some(from) = st.setpoint_from {
                assert!(from < t, "setpoint from minute {from} used at minute {t}");
            }
            let bids = scn.dca_bids(setup, t);
            let budget = budget_rhs(&st.budget).map_err(|source| OrchestratorError::Sm { t, node: st.node, source })?;
            let scores_before = st.commitment.scores.clone();
            let req = SmRequest {
                bids: &bids,
                scores: &scores_before,
                setpoint: st.setpoint,
                budget,
                fallback_tariffs: &st.tariffs,
            };
            let (clr, gap) = clear_sm_relaxed(&req, &params).map_err(|source| OrchestratorError::Sm { t, node: st.node, source })?;
            if !gap.is_ok() {
                stats.relaxed_setpoints += 1;
                stats.max_setpoint_gap_kw = stats.max_setpoint_gap_kw.max(gap.magnitude());
                log::debug!("minute {t}, node {}: setpoint relaxed by ({:.3}, {:.3})", st.node, gap.p, gap.q);
            }
            stats.budget_dropped += clr.budget_dropped as usize;
            stats.price_infeasible += clr.price_infeasible as usize;
            stats.sm_clearings += 1;

            let (pay_p, pay_q) = clr.payout(params.dt_s_h);
            let models: Vec<ResponseModel> = setup.dcas.iter().map(|d| d.response).collect();
            let actuals = simulate_response(&models, &clr.dcas, t as u64);
            st.commitment
                .update(&clr.dcas, &actuals)
                .map_err(|source| OrchestratorError::Commitment { t, source })?;
            obs.on_sm(&SmEvent {
                t,
                node: st.node,
                request: &req,
                clearing: &clr,
                gap,
                budget_mode: mode,
                setpoint_from: st.setpoint_from,
                scores_before: &scores_before,
                scores_after: &st.commitment.scores,
                actuals: &actuals,
                dt_s_h: params.dt_s_h,
                caps: params.caps,
            });
            st.budget.debit(Money { p: pay_p, q: pay_q });

            for (d, score) in clr.dcas.iter().zip(&st.commitment.scores) {
                results.sm.push(SmRow {
                    t: ts.clone(),
                    smo: st.node,
                    dca: d.dca_id,
                    p_star: d.p_star,
                    dp: d.dp,
                    q_star: d.q_star,
                    dq: d.dq,
                    mu_p: d.mu_p,
                    mu_q: d.mu_q,
                    score: *score,
                });
            }
            st.tariffs = clr.dcas.iter().map(|d| (d.mu_p, d.mu_q)).collect();
            st.window.push_back(clr.dcas.iter().map(|d| (d.mu_p, d.p_star)).collect());
            while st.window.len() > n_s {
                st.window.pop_front();
            }
            st.last = Some(clr);
            st.last_bids = bids;
        }

        if tl.is_pm_boundary(t) {
            let pm_params = scn.pm_params(t);
            let alpha_q_ratio = scn.config.market.alpha_q_ratio;
            let mut smo_bids = Vec::with_capacity(state.smos.len());
            for st in state.smos.iter_mut() {
                let a = st.alpha.update(st.window.iter().flatten().copied());
                let clr = st.last.as_ref().ok_or(OrchestratorError::EmptyClearing(st.node))?;
                let betas: Vec<f64> = st.last_bids.iter().map(|b| b.beta_p).collect();
                let mut bid = aggregate_smo_bid(st.node, &clr.dcas, &betas, (a, alpha_q_ratio * a), kw)?;
                bid.beta_q = mean(st.last_bids.iter().map(|b| b.beta_q));
                smo_bids.push(bid);
            }
            let pm = clear_pm(&scn.network, &smo_bids, &pm_params).map_err(|source| OrchestratorError::Pm { t, source })?;
            for st in state.smos.iter_mut() {
                let n = pm.node(st.node).expect("every SMO node is cleared");
                st.setpoint = (n.p_net * kw, n.q_net * kw);
                st.setpoint_from = Some(t);
                st.mu_star = (n.dlmp_p, n.dlmp_q);
                st.budget.credit_period(credit(st.mu_star, st.setpoint, tl.dt_p_h()), n_s);
            }
            let ledgers: Vec<BudgetLedger> = state.smos.iter().map(|s| s.budget.clone()).collect();
            obs.on_pm(&PmEvent {
                t,
                bids: &smo_bids,
                clearing: &pm,
                ledgers: &ledgers,
            });
            record_pm(scn, t, &smo_bids, &pm, pm_params.lambda_p, &mut results, &mut stats);
        }
    }
    Ok(RunOutcome {
        results,
        stats,
        final_state: Some(state),
    })
}

/// PM-only run: the PMO assumes ±`pm_only_flex` around each node's raw
/// generation and load baselines; there is no SM, commitment or budget.
pub fn run_without_smo(scn: &Scenario) -> Result<RunOutcome, OrchestratorError> {
    run_without_smo_observed(scn, &mut ())
}

pub fn run_without_smo_observed(scn: &Scenario, obs: &mut dyn Observer) -> Result<RunOutcome, OrchestratorError> {
    let tl = scn.timeline();
    let kw = scn.network.s_base_kw();
    let frac = scn.config.market.pm_only_flex;
    let ratio = scn.config.market.alpha_q_ratio;
    let mut results = RunResults::new(RunMode::PmOnly, tl.dt_p_minutes);
    let mut stats = fresh_stats();
    for t in (0..tl.horizon_minutes).step_by(tl.dt_p_minutes as usize) {
        let bids: Vec<SmoBid> = scn
            .smos
            .iter()
            .map(|s| pm_only_bid(s.node, &scn.dca_bids(s, t), frac, (s.alpha_fixed, ratio * s.alpha_fixed), kw))
            .collect();
        let params = scn.pm_params(t);
        let pm = clear_pm(&scn.network, &bids, &params).map_err(|source| OrchestratorError::Pm { t, source })?;
        obs.on_pm(&PmEvent {
            t,
            bids: &bids,
            clearing: &pm,
            ledgers: &[],
        });
        record_pm(scn, t, &bids, &pm, params.lambda_p, &mut results, &mut stats);
    }
    Ok(RunOutcome {
        results,
        stats,
        final_state: None,
    })
}

/// Writes the scenario inputs (feeder, profiles, LMPs, config) into `dir` so a
/// run can be reproduced from files alone.
pub fn save_scenario(scn: &Scenario, dir: &Path) -> Result<(), OrchestratorError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    scn.feeder.save(&dir.join("feeder.toml"))?;
    scn.profiles.save(&dir.join("profiles.csv"))?;
    scn.lmp.save(&dir.join("lmp.csv"))?;
    let cfg = ScenarioConfig {
        feeder: Some("feeder.toml".into()),
        profiles: Some("profiles.csv".into()),
        lmp: Some("lmp.csv".into()),
        ..scn.config.clone()
    };
    let path = dir.join("scenario.toml");
    std::fs::write(&path, cfg.to_toml_string()?).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}
