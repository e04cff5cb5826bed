use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Channel, Dataset, MeasurementError, PoseAngle, RssiSample};

/// Maps logical fields onto CSV header names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub rssi: String,
    pub tx_power: String,
    pub distance: String,
    pub carriage_user1: String,
    pub carriage_user2: String,
    pub pose_user1: String,
    pub pose_user2: String,
    /// Optional; absent column means `Channel::Unknown`.
    pub channel: Option<String>,
    /// Optional; absent column means measured.
    pub synthetic: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            rssi: "rssi".into(),
            tx_power: "tx_power".into(),
            distance: "distance_ft".into(),
            carriage_user1: "carriage_user1".into(),
            carriage_user2: "carriage_user2".into(),
            pose_user1: "pose_user1".into(),
            pose_user2: "pose_user2".into(),
            channel: Some("channel".into()),
            synthetic: Some("synthetic".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    /// Any row error aborts the ingest.
    pub strict: bool,
    /// Rows below this RSSI are dropped as undecodable.
    pub censor_below: Option<i32>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            strict: false,
            censor_below: Some(super::SENSITIVITY_FLOOR_DBM),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    /// 1-based line in the source file (header is line 1).
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub source: String,
    pub rows_read: usize,
    pub accepted: usize,
    pub censored: usize,
    pub issues: Vec<RowIssue>,
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "{}:{}: {}", self.source, issue.line, issue.message)?;
        }
        write!(
            f,
            "{}: {} rows read, {} accepted, {} censored, {} error(s)",
            self.source,
            self.rows_read,
            self.accepted,
            self.censored,
            self.issues.len()
        )
    }
}

pub fn ingest_csv(
    path: &Path,
    mapping: &ColumnMapping,
    opts: &IngestOptions,
) -> Result<(Dataset, IngestReport), MeasurementError> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, &path.display().to_string(), mapping, opts)
}

struct Columns {
    rssi: usize,
    tx_power: usize,
    distance: usize,
    carriage_user1: usize,
    carriage_user2: usize,
    pose_user1: usize,
    pose_user2: usize,
    channel: Option<usize>,
    synthetic: Option<usize>,
}

impl Columns {
    fn resolve(
        headers: &csv::StringRecord,
        mapping: &ColumnMapping,
    ) -> Result<Self, MeasurementError> {
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let mut missing = Vec::new();
        let mut required = |name: &str| {
            find(name).unwrap_or_else(|| {
                missing.push(name.to_string());
                usize::MAX
            })
        };
        let cols = Columns {
            rssi: required(&mapping.rssi),
            tx_power: required(&mapping.tx_power),
            distance: required(&mapping.distance),
            carriage_user1: required(&mapping.carriage_user1),
            carriage_user2: required(&mapping.carriage_user2),
            pose_user1: required(&mapping.pose_user1),
            pose_user2: required(&mapping.pose_user2),
            channel: mapping.channel.as_deref().and_then(find),
            synthetic: mapping.synthetic.as_deref().and_then(find),
        };
        if missing.is_empty() {
            Ok(cols)
        } else {
            Err(MeasurementError::Schema(format!(
                "missing column(s): {}",
                missing.join(", ")
            )))
        }
    }
}

fn parse_integer(field: &str, what: &str) -> Result<i64, String> {
    let t = field.trim();
    if let Ok(v) = t.parse::<i64>() {
        return Ok(v);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 => Ok(v as i64),
        Ok(v) => Err(format!("{what} `{v}` is not an integer dB value")),
        Err(_) => Err(format!("{what} `{t}` is not a number")),
    }
}

fn parse_row(rec: &csv::StringRecord, cols: &Columns) -> Result<RssiSample, String> {
    let get = |i: usize| rec.get(i).unwrap_or("");
    let rssi = parse_integer(get(cols.rssi), "rssi")? as i32;
    let tx_power = parse_integer(get(cols.tx_power), "tx_power")? as i32;
    let distance: f64 = get(cols.distance)
        .trim()
        .parse()
        .map_err(|_| format!("distance `{}` is not a number", get(cols.distance).trim()))?;
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(format!("distance {distance} must be positive"));
    }
    let pose_user1 = PoseAngle::new(parse_integer(get(cols.pose_user1), "pose_user1")?)
        .map_err(|e| e.to_string())?;
    let pose_user2 = PoseAngle::new(parse_integer(get(cols.pose_user2), "pose_user2")?)
        .map_err(|e| e.to_string())?;
    let user1 = get(cols.carriage_user1)
        .parse()
        .map_err(|e| format!("carriage_user1: {e}"))?;
    let user2 = get(cols.carriage_user2)
        .parse()
        .map_err(|e| format!("carriage_user2: {e}"))?;
    let channel = match cols.channel {
        Some(i) => get(i).parse::<Channel>()?,
        None => Channel::Unknown,
    };
    let synthetic = match cols.synthetic {
        Some(i) => match get(i).trim().to_ascii_lowercase().as_str() {
            "" | "0" | "false" | "no" => false,
            "1" | "true" | "yes" => true,
            other => return Err(format!("synthetic flag `{other}` is not a boolean")),
        },
        None => false,
    };
    Ok(RssiSample {
        rssi,
        tx_power,
        distance,
        pose_user1,
        pose_user2,
        carriage: super::CarriagePair::new(user1, user2),
        channel,
        synthetic,
    })
}

/// Reads and validates a measurement CSV (header row required).
///
/// Row errors are collected with their line numbers; in strict mode any row
/// error is fatal, otherwise the offending rows are skipped.
pub fn ingest_reader<R: Read>(
    reader: R,
    source: &str,
    mapping: &ColumnMapping,
    opts: &IngestOptions,
) -> Result<(Dataset, IngestReport), MeasurementError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = Columns::resolve(&headers, mapping)?;

    let mut report = IngestReport {
        source: source.to_string(),
        ..Default::default()
    };
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        report.rows_read += 1;
        match parse_row(&rec, &cols) {
            Ok(s) => match opts.censor_below {
                Some(floor) if s.rssi < floor => report.censored += 1,
                _ => samples.push(s),
            },
            Err(message) => report.issues.push(RowIssue { line, message }),
        }
    }
    report.accepted = samples.len();
    if opts.strict && !report.issues.is_empty() {
        return Err(MeasurementError::Rows(report.issues));
    }
    Ok((
        Dataset::new(samples, format!("ingested from {source}")),
        report,
    ))
}

/// Writes a dataset with the default column layout.
pub fn write_csv<W: Write>(d: &Dataset, writer: W) -> Result<(), MeasurementError> {
    let m = ColumnMapping::default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        m.rssi.as_str(),
        &m.tx_power,
        &m.distance,
        &m.carriage_user1,
        &m.carriage_user2,
        &m.pose_user1,
        &m.pose_user2,
        "channel",
        "synthetic",
    ])?;
    for s in &d.samples {
        w.write_record([
            s.rssi.to_string(),
            s.tx_power.to_string(),
            s.distance.to_string(),
            s.carriage.user1.to_string(),
            s.carriage.user2.to_string(),
            s.pose_user1.to_string(),
            s.pose_user2.to_string(),
            s.channel.to_string(),
            s.synthetic.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
