use serde::{Deserialize, Serialize};

use super::{DataError, RunMode, RunResults};

/// Summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: RunMode,
    pub horizon_minutes: usize,
    pub sm_clearings: usize,
    pub pm_clearings: usize,
    /// |P_net|-weighted mean real-power d-LMP over SMO nodes, $/kWh.
    pub avg_dlmp_p: f64,
    /// Mean retail tariff paid or received by DCAs, $/kWh. Without SMOs the
    /// nodal d-LMP is the retail price, so this equals `avg_dlmp_p`.
    pub avg_retail: f64,
    pub losses_kwh: f64,
    pub slack_import_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsComparison {
    pub with_smo: Metrics,
    pub pm_only: Metrics,
    pub flat_rate: f64,
    pub delta_dlmp_p: f64,
    pub delta_retail: f64,
    pub delta_losses_kwh: f64,
    pub delta_slack_import_kwh: f64,
}

fn weighted_mean(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (num, den) = pairs.fold((0.0, 0.0), |(n, d), (x, w)| (n + x * w, d + w));
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn report_metrics(results: &RunResults, slack_id: usize) -> Metrics {
    let dt_h = results.dt_p_minutes as f64 / 60.0;
    let avg_dlmp_p = weighted_mean(
        results
            .pm
            .iter()
            .filter(|r| r.node != slack_id)
            .map(|r| (r.dlmp_p, r.p_net.abs())),
    );
    let avg_retail = match results.mode {
        RunMode::WithSmo => weighted_mean(results.sm.iter().map(|r| (r.mu_p, 1.0))),
        RunMode::PmOnly => avg_dlmp_p,
    };
    let sm_clearings = {
        let mut keys: Vec<(&str, usize)> = results.sm.iter().map(|r| (r.t.as_str(), r.smo)).collect();
        keys.dedup();
        keys.len()
    };
    Metrics {
        mode: results.mode,
        horizon_minutes: results.horizon_minutes(),
        sm_clearings,
        pm_clearings: results.totals.len(),
        avg_dlmp_p,
        avg_retail,
        losses_kwh: results.totals.iter().map(|t| t.losses_kw * dt_h).sum(),
        slack_import_kwh: results.totals.iter().map(|t| t.p_pcc * dt_h).sum(),
    }
}

pub fn compare_metrics(with_smo: &Metrics, pm_only: &Metrics, flat_rate: f64) -> Result<MetricsComparison, DataError> {
    if with_smo.horizon_minutes != pm_only.horizon_minutes {
        return Err(DataError::IncompatibleHorizons(with_smo.horizon_minutes, pm_only.horizon_minutes));
    }
    Ok(MetricsComparison {
        with_smo: with_smo.clone(),
        pm_only: pm_only.clone(),
        flat_rate,
        delta_dlmp_p: with_smo.avg_dlmp_p - pm_only.avg_dlmp_p,
        delta_retail: with_smo.avg_retail - pm_only.avg_retail,
        delta_losses_kwh: with_smo.losses_kwh - pm_only.losses_kwh,
        delta_slack_import_kwh: with_smo.slack_import_kwh - pm_only.slack_import_kwh,
    })
}
