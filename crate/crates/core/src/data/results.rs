use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    WithSmo,
    PmOnly,
}

/// One DCA in one SM clearing (kW, kvar, $/kWh).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmRow {
    pub t: String,
    pub smo: usize,
    pub dca: usize,
    #[serde(rename = "P_star")]
    pub p_star: f64,
    #[serde(rename = "dP")]
    pub dp: f64,
    #[serde(rename = "Q_star")]
    pub q_star: f64,
    #[serde(rename = "dQ")]
    pub dq: f64,
    #[serde(rename = "mu_P")]
    pub mu_p: f64,
    #[serde(rename = "mu_Q")]
    pub mu_q: f64,
    pub score: f64,
}

/// One node in one PM clearing. Injections in kW and kvar, `v_sq` in pu²,
/// d-LMPs in $/kWh and $/kvarh. The slack row carries the PCC import.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmRow {
    pub t: String,
    pub node: usize,
    #[serde(rename = "P_net")]
    pub p_net: f64,
    #[serde(rename = "Q_net")]
    pub q_net: f64,
    pub v_sq: f64,
    #[serde(rename = "dlmp_P")]
    pub dlmp_p: f64,
    #[serde(rename = "dlmp_Q")]
    pub dlmp_q: f64,
}

/// One line in one PM clearing, all in pu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRow {
    pub t: String,
    pub from: usize,
    pub to: usize,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub l: f64,
    pub socp_gap: f64,
}

/// The flexibility range a node offered to the PM (kW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidRow {
    pub t: String,
    pub node: usize,
    #[serde(rename = "PG_lo")]
    pub pg_lo: f64,
    #[serde(rename = "PG_hi")]
    pub pg_hi: f64,
    #[serde(rename = "PL_lo")]
    pub pl_lo: f64,
    #[serde(rename = "PL_hi")]
    pub pl_hi: f64,
    #[serde(rename = "P_lo")]
    pub p_lo: f64,
    #[serde(rename = "P_hi")]
    pub p_hi: f64,
}

/// Feeder-level totals of one PM clearing (kW, kvar, $).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalsRow {
    pub t: String,
    #[serde(rename = "P_pcc")]
    pub p_pcc: f64,
    #[serde(rename = "Q_pcc")]
    pub q_pcc: f64,
    pub losses_kw: f64,
    pub lambda_p: f64,
    pub objective: f64,
    pub max_socp_gap: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub sm_clearings: usize,
    pub pm_clearings: usize,
    pub relaxed_setpoints: usize,
    pub budget_dropped: usize,
    pub price_infeasible: usize,
    pub max_socp_gap: f64,
    pub min_socp_gap: f64,
    pub flagged_lines: usize,
    pub max_setpoint_gap_kw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResults {
    pub mode: RunMode,
    pub dt_p_minutes: u32,
    pub sm: Vec<SmRow>,
    pub pm: Vec<PmRow>,
    pub lines: Vec<LineRow>,
    pub bids: Vec<BidRow>,
    pub totals: Vec<TotalsRow>,
}

impl RunResults {
    pub fn new(mode: RunMode, dt_p_minutes: u32) -> Self {
        Self {
            mode,
            dt_p_minutes,
            sm: Vec::new(),
            pm: Vec::new(),
            lines: Vec::new(),
            bids: Vec::new(),
            totals: Vec::new(),
        }
    }

    pub fn horizon_minutes(&self) -> usize {
        self.totals.len() * self.dt_p_minutes as usize
    }
}

pub const SM_FILE: &str = "sm_clearings.csv";
pub const PM_FILE: &str = "pm_clearings.csv";
pub const LINES_FILE: &str = "lines.csv";
pub const BIDS_FILE: &str = "pm_bids.csv";
pub const TOTALS_FILE: &str = "pm_totals.csv";

fn write_csv<T: Serialize>(dir: &Path, name: &str, header: &[&str], rows: &[T]) -> Result<(), DataError> {
    let path = dir.join(name);
    let file = std::fs::File::create(&path).map_err(|e| DataError::io(&path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| DataError::io(&path, e))
}

fn read_csv<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>, DataError> {
    let path = dir.join(name);
    let file = std::fs::File::open(&path).map_err(|e| DataError::io(&path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| DataError::Parse(format!("{}: {e}", path.display())))
}

/// Writes the run's CSV files into `dir` (created if needed). Empty tables
/// produce header-only files.
pub fn export_results(results: &RunResults, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    write_csv(dir, SM_FILE, &["t", "smo", "dca", "P_star", "dP", "Q_star", "dQ", "mu_P", "mu_Q", "score"], &results.sm)?;
    write_csv(dir, PM_FILE, &["t", "node", "P_net", "Q_net", "v_sq", "dlmp_P", "dlmp_Q"], &results.pm)?;
    write_csv(dir, LINES_FILE, &["t", "from", "to", "P", "Q", "l", "socp_gap"], &results.lines)?;
    write_csv(dir, BIDS_FILE, &["t", "node", "PG_lo", "PG_hi", "PL_lo", "PL_hi", "P_lo", "P_hi"], &results.bids)?;
    write_csv(
        dir,
        TOTALS_FILE,
        &["t", "P_pcc", "Q_pcc", "losses_kw", "lambda_p", "objective", "max_socp_gap"],
        &results.totals,
    )
}

/// Reads back what [`export_results`] wrote.
pub fn load_results(dir: &Path, mode: RunMode, dt_p_minutes: u32) -> Result<RunResults, DataError> {
    Ok(RunResults {
        mode,
        dt_p_minutes,
        sm: read_csv(dir, SM_FILE)?,
        pm: read_csv(dir, PM_FILE)?,
        lines: read_csv(dir, LINES_FILE)?,
        bids: read_csv(dir, BIDS_FILE)?,
        totals: read_csv(dir, TOTALS_FILE)?,
    })
}
