use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::secondary::BudgetMode;

/// Scenario configuration, read from TOML. Every field has a default, so an
/// empty file describes the default synthetic 24 h scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub horizon_minutes: usize,
    pub dt_s_minutes: u32,
    pub dt_p_minutes: u32,
    /// Input files; when absent the synthetic generator is used. Relative
    /// paths are resolved against the config file's directory.
    pub feeder: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub lmp: Option<PathBuf>,
    pub synthetic: SyntheticParams,
    pub market: MarketParams,
    pub dca: DcaParams,
    pub response: ResponseParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            horizon_minutes: 1440,
            dt_s_minutes: 1,
            dt_p_minutes: 5,
            feeder: None,
            profiles: None,
            lmp: None,
            synthetic: SyntheticParams::default(),
            market: MarketParams::default(),
            dca: DcaParams::default(),
            response: ResponseParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub n_smo: usize,
    pub slack_id: usize,
    /// SMO ids are drawn from `1..=max_node_id`.
    pub max_node_id: usize,
    pub pv_nodes: Vec<usize>,
    pub pv_total_kw: f64,
    pub peak_load_kw: f64,
    pub power_factor: f64,
    pub v_base_kv: f64,
    pub s_base_mva: f64,
    /// Squared-voltage drop at the farthest node under peak load.
    pub peak_v_sq_drop: f64,
    pub start: String,
    pub lmp_min: f64,
    pub lmp_max: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n_smo: 79,
            slack_id: 149,
            max_node_id: 123,
            pv_nodes: vec![5, 20, 50, 63, 94],
            pv_total_kw: 510.3,
            peak_load_kw: 3600.0,
            power_factor: 0.95,
            v_base_kv: 4.16,
            s_base_mva: 1.0,
            peak_v_sq_drop: 0.05,
            start: "2024-07-01T00:00:00".into(),
            lmp_min: 0.03,
            lmp_max: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketParams {
    /// Retail tariff ceilings, $/kWh and $/kvarh.
    pub price_cap_p: f64,
    pub price_cap_q: f64,
    pub budget_mode: BudgetMode,
    pub epsilon: f64,
    /// Loss weight, $/MWh.
    pub xi: f64,
    pub q_lmp_ratio: f64,
    pub alpha_q_ratio: f64,
    /// Flat retail rate used as the no-market comparator, $/kWh.
    pub flat_rate: f64,
    /// Symmetric flexibility fraction the PMO assumes without SMOs.
    pub pm_only_flex: f64,
    /// Tariffs used over the first SM window and for zero-injection DCAs
    /// before any clearing; `None` uses the first LMP.
    pub initial_tariff: Option<f64>,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            price_cap_p: 0.2,
            price_cap_q: 0.2,
            budget_mode: BudgetMode::QuasiMultiperiod,
            epsilon: 0.05,
            xi: 100.0,
            q_lmp_ratio: 0.1,
            alpha_q_ratio: 0.1,
            flat_rate: 0.129,
            pm_only_flex: 0.5,
            initial_tariff: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcaParams {
    /// Inclusive range of DCAs per SMO.
    pub count: (usize, usize),
    /// Upper end of the U[0, cap] flexibility fractions.
    pub flex_cap: f64,
    pub beta: (f64, f64),
    pub alpha_fixed: (f64, f64),
    /// Range of the generator share γ of each non-remainder DCA.
    pub share: (f64, f64),
}

impl Default for DcaParams {
    fn default() -> Self {
        Self {
            count: (3, 5),
            flex_cap: 0.5,
            beta: (0.1, 1.0),
            alpha_fixed: (4.0, 8.0),
            share: (0.1, 0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseParams {
    /// Cycled over the DCAs of each SMO in order.
    pub follow_probs: Vec<f64>,
    pub overshoot_scale: f64,
    pub noise_scale: f64,
    pub min_violation_kw: f64,
}

impl Default for ResponseParams {
    fn default() -> Self {
        Self {
            follow_probs: vec![1.0, 0.8, 0.3],
            overshoot_scale: 0.5,
            noise_scale: 0.5,
            min_violation_kw: 0.1,
        }
    }
}

fn ordered(name: &str, r: (f64, f64)) -> Result<(), DataError> {
    if r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 {
        Ok(())
    } else {
        Err(DataError::InvalidConfig(format!("{name} range {:?} is not ordered", r)))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, DataError> {
        let cfg: Self = toml::from_str(s).map_err(|e| DataError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves its input paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.feeder, &mut cfg.profiles, &mut cfg.lmp].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, DataError> {
        toml::to_string(self).map_err(|e| DataError::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.dt_s_minutes == 0 || self.dt_p_minutes < self.dt_s_minutes || self.dt_p_minutes % self.dt_s_minutes != 0 {
            return bad(format!("periods dt_s={} dt_p={}", self.dt_s_minutes, self.dt_p_minutes));
        }
        if self.horizon_minutes == 0 || self.horizon_minutes % self.dt_p_minutes as usize != 0 {
            return bad(format!("horizon {} is not a positive multiple of dt_p", self.horizon_minutes));
        }
        let (lo, hi) = self.dca.count;
        if lo < 1 || lo > hi {
            return bad(format!("dca count range {:?}", self.dca.count));
        }
        ordered("beta", self.dca.beta)?;
        ordered("alpha_fixed", self.dca.alpha_fixed)?;
        ordered("share", self.dca.share)?;
        ordered("lmp", (self.synthetic.lmp_min, self.synthetic.lmp_max))?;
        if !(self.dca.beta.0 > 0.0 && self.dca.alpha_fixed.0 > 0.0 && self.dca.share.0 > 0.0) {
            return bad("beta, alpha and share ranges must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.dca.flex_cap) || !(0.0..=1.0).contains(&self.market.pm_only_flex) {
            return bad("flexibility fractions must lie in [0, 1]".into());
        }
        if !(self.market.price_cap_p >= 0.0 && self.market.price_cap_q >= 0.0) {
            return bad("price caps must be nonnegative".into());
        }
        if !(self.market.epsilon >= 0.0 && self.market.xi >= 0.0) {
            return bad("epsilon and xi must be nonnegative".into());
        }
        if self.response.follow_probs.is_empty() || self.response.follow_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("follow probabilities must lie in [0, 1]".into());
        }
        let s = &self.synthetic;
        if s.n_smo == 0 || !(s.power_factor > 0.0 && s.power_factor <= 1.0) || !(s.s_base_mva > 0.0) {
            return bad("synthetic feeder parameters".into());
        }
        Ok(())
    }

    pub fn n_s(&self) -> usize {
        (self.dt_p_minutes / self.dt_s_minutes) as usize
    }
}
