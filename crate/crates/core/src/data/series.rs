use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDateTime};

use super::DataError;

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format(TS_FORMAT).to_string()
}

/// Accepts `YYYY-MM-DDTHH:MM:SS`, optionally with an RFC 3339 offset.
pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime, DataError> {
    NaiveDateTime::parse_from_str(s, TS_FORMAT)
        .or_else(|_| chrono::DateTime::parse_from_rfc3339(s).map(|d| d.naive_utc()))
        .map_err(|_| DataError::Parse(format!("bad timestamp `{s}`")))
}

fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<(), DataError> {
    for col in expected {
        if !headers.iter().any(|h| h.trim() == *col) {
            return Err(DataError::SchemaMismatch(format!("missing column `{col}`")));
        }
    }
    Ok(())
}

fn column(headers: &csv::StringRecord, name: &str) -> usize {
    headers.iter().position(|h| h.trim() == name).expect("header checked")
}

fn parse_f64(s: &str, what: &str) -> Result<f64, DataError> {
    let v: f64 = s.trim().parse().map_err(|_| DataError::Parse(format!("bad {what} `{s}`")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DataError::Parse(format!("non-finite {what}")))
    }
}

/// Checks a strictly increasing, gap-free series of the given cadence.
fn check_cadence(times: &[NaiveDateTime], cadence: Duration) -> Result<(), DataError> {
    for w in times.windows(2) {
        if w[1] <= w[0] {
            return Err(DataError::NonMonotoneTimestamps(format_timestamp(w[1])));
        }
        if w[1] - w[0] != cadence {
            let missing = w[0] + cadence;
            return Err(DataError::GapInSeries(missing.format("%H:%M").to_string()));
        }
    }
    Ok(())
}

/// Per-node net injections (kW, kvar; generation positive) at a uniform
/// cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSeries {
    pub start: NaiveDateTime,
    pub cadence_minutes: u32,
    pub nodes: BTreeMap<usize, Vec<(f64, f64)>>,
}

impl ProfileSeries {
    pub const COLUMNS: [&'static str; 4] = ["node_id", "timestamp_iso8601", "P_kW", "Q_kvar"];

    pub fn len(&self) -> usize {
        self.nodes.values().next().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn at(&self, node: usize, step: usize) -> Option<(f64, f64)> {
        self.nodes.get(&node)?.get(step).copied()
    }

    pub fn read<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        check_header(&headers, &Self::COLUMNS)?;
        let (ci, ct, cp, cq) = (
            column(&headers, "node_id"),
            column(&headers, "timestamp_iso8601"),
            column(&headers, "P_kW"),
            column(&headers, "Q_kvar"),
        );
        let mut raw: BTreeMap<usize, Vec<(NaiveDateTime, f64, f64)>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let id: usize = rec[ci]
                .parse()
                .map_err(|_| DataError::Parse(format!("bad node id `{}`", &rec[ci])))?;
            let t = parse_timestamp(&rec[ct])?;
            raw.entry(id)
                .or_default()
                .push((t, parse_f64(&rec[cp], "P_kW")?, parse_f64(&rec[cq], "Q_kvar")?));
        }
        let Some(first) = raw.values().next() else {
            return Err(DataError::MissingProfiles);
        };
        let start = first[0].0;
        let cadence = if first.len() > 1 { first[1].0 - first[0].0 } else { Duration::minutes(1) };
        if cadence <= Duration::zero() || cadence.num_seconds() % 60 != 0 {
            let at = first.get(1).map_or(start, |r| r.0);
            return Err(DataError::NonMonotoneTimestamps(format_timestamp(at)));
        }
        let len = first.len();
        let mut nodes = BTreeMap::new();
        for (id, rows) in raw {
            let times: Vec<_> = rows.iter().map(|r| r.0).collect();
            check_cadence(&times, cadence)?;
            if times[0] != start || rows.len() != len {
                return Err(DataError::SchemaMismatch(format!("node {id} does not cover the common time range")));
            }
            nodes.insert(id, rows.into_iter().map(|r| (r.1, r.2)).collect());
        }
        Ok(Self {
            start,
            cadence_minutes: cadence.num_minutes() as u32,
            nodes,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::read(std::fs::File::open(path).map_err(|e| DataError::io(path, e))?)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::COLUMNS)?;
        for (id, rows) in &self.nodes {
            for (k, (p, q)) in rows.iter().enumerate() {
                let t = self.start + Duration::minutes(k as i64 * self.cadence_minutes as i64);
                w.write_record([id.to_string(), format_timestamp(t), p.to_string(), q.to_string()])?;
            }
        }
        w.flush().map_err(|e| DataError::Parse(e.to_string()))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        self.write(std::fs::File::create(path).map_err(|e| DataError::io(path, e))?)
    }
}

/// Wholesale real-power LMP at the PCC ($/kWh).
#[derive(Debug, Clone, PartialEq)]
pub struct LmpSeries {
    pub start: NaiveDateTime,
    pub cadence_minutes: u32,
    pub values: Vec<f64>,
}

impl LmpSeries {
    pub const COLUMNS: [&'static str; 2] = ["timestamp_iso8601", "lmp_usd_per_kwh"];

    /// Price in force at `minute` after the start.
    pub fn at_minute(&self, minute: usize) -> Option<f64> {
        self.values.get(minute / self.cadence_minutes as usize).copied()
    }

    pub fn read<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        check_header(&headers, &Self::COLUMNS)?;
        let (ct, cv) = (column(&headers, "timestamp_iso8601"), column(&headers, "lmp_usd_per_kwh"));
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            times.push(parse_timestamp(&rec[ct])?);
            values.push(parse_f64(&rec[cv], "lmp_usd_per_kwh")?);
        }
        let Some(&start) = times.first() else {
            return Err(DataError::ShortSeries("empty LMP file".into()));
        };
        let cadence = if times.len() > 1 { times[1] - times[0] } else { Duration::minutes(5) };
        if cadence <= Duration::zero() || cadence.num_seconds() % 60 != 0 {
            return Err(DataError::NonMonotoneTimestamps(format_timestamp(times[1])));
        }
        check_cadence(&times, cadence)?;
        Ok(Self {
            start,
            cadence_minutes: cadence.num_minutes() as u32,
            values,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::read(std::fs::File::open(path).map_err(|e| DataError::io(path, e))?)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::COLUMNS)?;
        for (k, v) in self.values.iter().enumerate() {
            let t = self.start + Duration::minutes(k as i64 * self.cadence_minutes as i64);
            w.write_record([format_timestamp(t), v.to_string()])?;
        }
        w.flush().map_err(|e| DataError::Parse(e.to_string()))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        self.write(std::fs::File::create(path).map_err(|e| DataError::io(path, e))?)
    }
}
