//! Inputs and outputs: profile and LMP series, synthetic scenario generation,
//! scenario configuration, results export and summary metrics.

mod config;
mod metrics;
mod results;
mod series;
mod synth;

pub use config::{DcaParams, MarketParams, ResponseParams, ScenarioConfig, SyntheticParams};
pub use metrics::{compare_metrics, report_metrics, Metrics, MetricsComparison};
pub use results::{
    export_results, load_results, BidRow, LineRow, PmRow, RunMode, RunResults, RunStats, SmRow, TotalsRow, BIDS_FILE,
    LINES_FILE, PM_FILE, SM_FILE, TOTALS_FILE,
};
pub use series::{format_timestamp, parse_timestamp, LmpSeries, ProfileSeries};
pub use synth::{
    disaggregate_node, flex_interval, gen_flexibility_bids, gen_synthetic_feeder, gen_synthetic_lmp, DcaSplit,
    SyntheticFeeder,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("timestamps not strictly increasing at {0}")]
    NonMonotoneTimestamps(String),
    #[error("gap in series at {0}")]
    GapInSeries(String),
    #[error("series too short: {0}")]
    ShortSeries(String),
    #[error("missing profiles")]
    MissingProfiles,
    #[error("incompatible horizons: {0} vs {1} minutes")]
    IncompatibleHorizons(usize, usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        DataError::Parse(e.to_string())
    }
}
