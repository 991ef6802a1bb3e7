//! Invariant checks on a finished run, read back from its output directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::data::{load_results, DataError, RunMode, RunResults, ScenarioConfig};
use crate::grid::{build_feeder, FeederSpec, RadialNetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &'static str, failures: usize, total: usize, extra: String) {
        self.checks.push(Check {
            name,
            passed: failures == 0,
            detail: format!("{failures} of {total} violate{extra}"),
        });
    }
}

/// Tolerances of the file-level checks.
const GAP_TOL: f64 = 1e-7;
const PU_TOL: f64 = 1e-6;

/// Checks a run directory written by `lem run` or `lem baseline`.
pub fn validate_run_dir(dir: &Path) -> Result<ValidationReport, DataError> {
    let cfg = ScenarioConfig::load(&dir.join("scenario.toml"))?;
    let feeder_path = cfg.feeder.clone().unwrap_or_else(|| dir.join("feeder.toml"));
    let feeder = FeederSpec::load(&feeder_path).map_err(|e| DataError::Parse(e.to_string()))?;
    let net = build_feeder(&feeder).map_err(|e| DataError::Parse(e.to_string()))?;
    let text = std::fs::read_to_string(dir.join("run_metadata.json")).map_err(|e| DataError::io(dir, e))?;
    let meta: serde_json::Value = serde_json::from_str(&text).map_err(|e| DataError::Parse(e.to_string()))?;
    let mode: RunMode = serde_json::from_value(meta["mode"].clone()).map_err(|e| DataError::Parse(e.to_string()))?;
    let results = load_results(dir, mode, cfg.dt_p_minutes)?;
    Ok(validate_results(&results, &net, &cfg))
}

pub fn validate_results(r: &RunResults, net: &RadialNetwork, cfg: &ScenarioConfig) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let n_p = cfg.horizon_minutes / cfg.dt_p_minutes as usize;
    let n_sm = cfg.horizon_minutes / cfg.dt_s_minutes as usize;
    let kw = net.s_base_kw();

    rep.checks.push(Check {
        name: "pm_clearing_count",
        passed: r.totals.len() == n_p && r.pm.len() == n_p * net.nodes.len(),
        detail: format!("{} clearings, {} node rows; expected {n_p} and {}", r.totals.len(), r.pm.len(), n_p * net.nodes.len()),
    });

    let mut per_dca: BTreeMap<usize, usize> = BTreeMap::new();
    for row in &r.sm {
        *per_dca.entry(row.dca).or_default() += 1;
    }
    let wrong = per_dca.values().filter(|&&c| c != n_sm).count();
    let expected = if r.mode == RunMode::WithSmo { n_sm } else { 0 };
    rep.checks.push(Check {
        name: "sm_clearing_count",
        passed: wrong == 0 && (r.mode == RunMode::WithSmo) == !r.sm.is_empty(),
        detail: format!("{} DCAs, {wrong} without exactly {expected} clearings", per_dca.len()),
    });

    let (cap_p, cap_q) = (cfg.market.price_cap_p, cfg.market.price_cap_q);
    let bad = r
        .sm
        .iter()
        .filter(|s| !((0.0..=cap_p).contains(&s.mu_p) && (0.0..=cap_q).contains(&s.mu_q)))
        .count();
    rep.push("tariff_ceilings", bad, r.sm.len(), String::new());
    let bad = r.sm.iter().filter(|s| !(s.dp >= 0.0 && s.dq >= 0.0)).count();
    rep.push("band_nonnegative", bad, r.sm.len(), String::new());
    let bad = r.sm.iter().filter(|s| !(0.0..=1.0).contains(&s.score)).count();
    rep.push("score_range", bad, r.sm.len(), String::new());

    let bad = r.lines.iter().filter(|l| l.socp_gap < -GAP_TOL).count();
    let max_gap = r.lines.iter().map(|l| l.socp_gap).fold(f64::NEG_INFINITY, f64::max);
    rep.push("socp_gap_nonnegative", bad, r.lines.len(), format!("; max gap {max_gap:.3e}"));

    // power conservation at every clearing, in pu
    let r_of: BTreeMap<(usize, usize), (f64, f64)> = net.lines.iter().map(|l| ((l.from, l.to), (l.r, l.x))).collect();
    let mut balance: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for row in &r.pm {
        let e = balance.entry(row.t.as_str()).or_default();
        e.0 += row.p_net / kw;
        e.1 += row.q_net / kw;
    }
    for l in &r.lines {
        let (rr, xx) = r_of.get(&(l.from, l.to)).copied().unwrap_or((f64::NAN, f64::NAN));
        let e = balance.entry(l.t.as_str()).or_default();
        e.0 -= rr * l.l;
        e.1 -= xx * l.l;
    }
    let bad = balance.values().filter(|(p, q)| !(p.abs() <= PU_TOL && q.abs() <= PU_TOL)).count();
    rep.push("power_conservation", bad, balance.len(), String::new());

    // each node's cleared injection lies within the range it bid
    let cleared: BTreeMap<(&str, usize), f64> = r.pm.iter().map(|p| ((p.t.as_str(), p.node), p.p_net)).collect();
    let bad = r
        .bids
        .iter()
        .filter(|b| {
            let p = cleared.get(&(b.t.as_str(), b.node)).copied().unwrap_or(f64::NAN);
            !(p >= b.p_lo - PU_TOL * kw && p <= b.p_hi + PU_TOL * kw)
        })
        .count();
    rep.push("interface_consistency", bad, r.bids.len(), String::new());
    rep
}
