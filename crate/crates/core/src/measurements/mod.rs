//! RSSI measurement datasets: validation, transmit-power normalization, pose
//! augmentation and range extension.
//!
//! All transforms are pure: they take a [`Dataset`] by reference and return a
//! new one. Synthetic samples produced by [`synthesize_pose`] and
//! [`extend_range`] are flagged so that estimation can exclude them.

mod carriage;
mod csv_io;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use carriage::{CarriagePair, CarriageState, Holding, ParseCarriageError, PoseAngle, Posture};
pub use csv_io::{
    ingest_csv, ingest_reader, write_csv, ColumnMapping, IngestOptions, IngestReport, RowIssue,
};

/// Lowest RSSI a typical receiver can demodulate, in dBm.
pub const SENSITIVITY_FLOOR_DBM: i32 = -100;

/// Transmit power every dataset is normalized to, in dBm.
pub const DEFAULT_REFERENCE_TX_DBM: i32 = 12;

/// Largest separation at which BLE advertisements are expected to be heard, in feet.
pub const MAX_BLE_RANGE_FT: f64 = 30.0;

/// Two distances closer than this are the same grid point.
pub const DISTANCE_EPS_FT: f64 = 1e-6;

fn first_issue(issues: &[RowIssue]) -> String {
    issues
        .first()
        .map(|i| format!("; first: line {}: {}", i.line, i.message))
        .unwrap_or_default()
}

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{} row(s) failed validation{}", .0.len(), first_issue(.0))]
    Rows(Vec<RowIssue>),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("range extension error: {0}")]
    Range(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rounds to integer dB, half away from zero.
pub fn quantize_db(x: f64) -> i32 {
    x.round() as i32
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Low,
    Mid,
    High,
    #[default]
    Unknown,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Low => "low",
            Channel::Mid => "mid",
            Channel::High => "high",
            Channel::Unknown => "unknown",
        })
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" | "37" | "2402" => Ok(Channel::Low),
            "mid" | "38" | "2426" => Ok(Channel::Mid),
            "high" | "39" | "2480" => Ok(Channel::High),
            "" | "unknown" | "na" => Ok(Channel::Unknown),
            other => Err(format!("unknown channel `{other}`")),
        }
    }
}

/// One quantized RSSI observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RssiSample {
    pub rssi: i32,
    pub tx_power: i32,
    /// Separation in feet.
    pub distance: f64,
    pub pose_user1: PoseAngle,
    pub pose_user2: PoseAngle,
    pub carriage: CarriagePair,
    pub channel: Channel,
    pub synthetic: bool,
}

impl RssiSample {
    pub fn at_distance(&self, s: f64) -> bool {
        (self.distance - s).abs() < DISTANCE_EPS_FT
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<RssiSample>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(samples: Vec<RssiSample>, provenance: impl Into<String>) -> Self {
        Self {
            samples,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct carriage pairs, sorted.
    pub fn carriage_pairs(&self) -> Vec<CarriagePair> {
        let set: BTreeSet<_> = self.samples.iter().map(|s| s.carriage).collect();
        set.into_iter().collect()
    }

    /// Distinct separations, ascending.
    pub fn distances(&self) -> Vec<f64> {
        distinct_distances(self.samples.iter().map(|s| s.distance))
    }

    /// Concatenates `other` after `self`.
    pub fn merged(&self, other: &Dataset) -> Dataset {
        let mut samples = self.samples.clone();
        samples.extend_from_slice(&other.samples);
        let provenance = match (self.provenance.is_empty(), other.provenance.is_empty()) {
            (_, true) => self.provenance.clone(),
            (true, false) => other.provenance.clone(),
            (false, false) => format!("{}; {}", self.provenance, other.provenance),
        };
        Dataset {
            samples,
            provenance,
        }
    }

    fn derived(&self, samples: Vec<RssiSample>, step: &str) -> Dataset {
        let provenance = if self.provenance.is_empty() {
            step.to_string()
        } else {
            format!("{}; {}", self.provenance, step)
        };
        Dataset {
            samples,
            provenance,
        }
    }
}

pub(crate) fn distinct_distances(it: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = it.collect();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < DISTANCE_EPS_FT);
    v
}

/// Drops samples below `floor` dBm (packets the receiver could not decode).
pub fn censor_dataset(d: &Dataset, floor: i32) -> Dataset {
    let kept = d
        .samples
        .iter()
        .filter(|s| s.rssi >= floor)
        .copied()
        .collect();
    d.derived(kept, &format!("censored below {floor} dBm"))
}

/// Re-expresses every RSSI as if the transmitter had radiated `reference_tx` dBm.
pub fn normalize_tx(d: &Dataset, reference_tx: i32) -> Dataset {
    let samples = d
        .samples
        .iter()
        .map(|s| RssiSample {
            rssi: s.rssi + (reference_tx - s.tx_power),
            tx_power: reference_tx,
            ..*s
        })
        .collect();
    d.derived(samples, &format!("normalized to {reference_tx} dBm tx"))
}

/// Per-carriage-state attenuation delta (dB) for each pose angle.
pub type BulkDeltaTable = BTreeMap<CarriageState, BTreeMap<PoseAngle, f64>>;

/// Fills in the seven unmeasured user-2 pose angles of every measured sample.
///
/// The synthetic RSSI is `rssi + delta(c2, new) - delta(c2, measured)`,
/// quantized, where `c2` is user 2's carriage state. Samples already flagged
/// synthetic are passed through unchanged.
pub fn synthesize_pose(
    d: &Dataset,
    bulk_deltas: &BulkDeltaTable,
) -> Result<Dataset, MeasurementError> {
    let mut out = Vec::with_capacity(d.samples.len() * 8);
    for sample in &d.samples {
        out.push(*sample);
        if sample.synthetic {
            continue;
        }
        let c2 = sample.carriage.user2;
        let table = bulk_deltas.get(&c2).ok_or_else(|| {
            MeasurementError::Config(format!("no bulk pose deltas for carriage state {c2}"))
        })?;
        let lookup = |a: PoseAngle| {
            table.get(&a).copied().ok_or_else(|| {
                MeasurementError::Config(format!("bulk pose deltas for {c2} lack angle {a}"))
            })
        };
        let measured = lookup(sample.pose_user2)?;
        for angle in PoseAngle::all().filter(|a| *a != sample.pose_user2) {
            let delta = lookup(angle)? - measured;
            out.push(RssiSample {
                rssi: quantize_db(sample.rssi as f64 + delta),
                pose_user2: angle,
                synthetic: true,
                ..*sample
            });
        }
    }
    Ok(d.derived(out, "pose-synthesized"))
}

/// Mean RSSI change of each user-1 pose angle relative to 0°, for datasets where
/// user 1 carries the phone in `carriage`.
///
/// Differences are taken per range and then averaged over the ranges at which
/// both angles were measured. Synthetic samples are ignored.
pub fn estimate_bulk_deltas(
    d: &Dataset,
    carriage: CarriageState,
) -> Result<BTreeMap<PoseAngle, f64>, MeasurementError> {
    // (distance index, angle index) -> (sum, count)
    let distances = distinct_distances(
        d.samples
            .iter()
            .filter(|s| !s.synthetic && s.carriage.user1 == carriage)
            .map(|s| s.distance),
    );
    let mut acc = vec![[(0.0f64, 0usize); 8]; distances.len()];
    for s in d
        .samples
        .iter()
        .filter(|s| !s.synthetic && s.carriage.user1 == carriage)
    {
        let di = distances
            .iter()
            .position(|&x| (x - s.distance).abs() < DISTANCE_EPS_FT)
            .expect("distance grid built from the same samples");
        let cell = &mut acc[di][s.pose_user1.index()];
        cell.0 += s.rssi as f64;
        cell.1 += 1;
    }

    let mut deltas = BTreeMap::new();
    let mut missing = Vec::new();
    for angle in PoseAngle::all() {
        let ai = angle.index();
        let diffs: Vec<f64> = acc
            .iter()
            .filter(|row| row[0].1 > 0 && row[ai].1 > 0)
            .map(|row| row[ai].0 / row[ai].1 as f64 - row[0].0 / row[0].1 as f64)
            .collect();
        if diffs.is_empty() {
            missing.push(angle);
        } else {
            deltas.insert(angle, diffs.iter().sum::<f64>() / diffs.len() as f64);
        }
    }
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|a| a.to_string()).collect();
        return Err(MeasurementError::Estimation(format!(
            "user-1 carriage {carriage}: no measurements (paired with 0°) at angle(s) {}",
            list.join(", ")
        )));
    }
    deltas.insert(PoseAngle::ZERO, 0.0);
    Ok(deltas)
}

/// Excess free-space-style path loss between two ranges, in dB (positive).
pub fn excess_path_loss_db(base_range: f64, target_range: f64, path_loss_exponent: f64) -> f64 {
    10.0 * path_loss_exponent * (target_range / base_range).log10()
}

/// Synthesizes samples at `target_range` by shifting every `base_range` sample
/// down by the excess path loss. Only the new samples are returned.
pub fn extend_range(
    d: &Dataset,
    base_range: f64,
    target_range: f64,
    path_loss_exponent: f64,
) -> Result<Dataset, MeasurementError> {
    if !(base_range > 0.0) || !base_range.is_finite() {
        return Err(MeasurementError::Range(format!(
            "base range {base_range} ft must be positive"
        )));
    }
    if target_range < base_range - DISTANCE_EPS_FT {
        return Err(MeasurementError::Range(format!(
            "target range {target_range} ft is below base range {base_range} ft"
        )));
    }
    if target_range > MAX_BLE_RANGE_FT + DISTANCE_EPS_FT {
        return Err(MeasurementError::Range(format!(
            "target range {target_range} ft exceeds maximum BLE range {MAX_BLE_RANGE_FT} ft"
        )));
    }
    if !(path_loss_exponent > 0.0) {
        return Err(MeasurementError::Range(format!(
            "path-loss exponent {path_loss_exponent} must be positive"
        )));
    }
    let shift = -excess_path_loss_db(base_range, target_range, path_loss_exponent);
    let samples: Vec<RssiSample> = d
        .samples
        .iter()
        .filter(|s| s.at_distance(base_range))
        .map(|s| RssiSample {
            rssi: quantize_db(s.rssi as f64 + shift),
            distance: target_range,
            synthetic: true,
            ..*s
        })
        .collect();
    if samples.is_empty() {
        return Err(MeasurementError::Range(format!(
            "no samples at base range {base_range} ft"
        )));
    }
    Ok(d.derived(
        samples,
        &format!("range-extended {base_range}->{target_range} ft (n={path_loss_exponent})"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hand() -> CarriageState {
        CarriageState::new(Posture::Standing, Holding::Hand)
    }

    fn sample(rssi: i32, tx: i32, distance: f64) -> RssiSample {
        RssiSample {
            rssi,
            tx_power: tx,
            distance,
            pose_user1: PoseAngle::ZERO,
            pose_user2: PoseAngle::ZERO,
            carriage: CarriagePair::new(hand(), hand()),
            channel: Channel::Unknown,
            synthetic: false,
        }
    }

    #[test]
    fn quantization_rounds_half_away_from_zero() {
        assert_eq!(quantize_db(-6.02), -6);
        assert_eq!(quantize_db(-6.5), -7);
        assert_eq!(quantize_db(6.5), 7);
        assert_eq!(quantize_db(-60.0), -60);
    }

    #[test]
    fn normalize_shifts_by_tx_difference() {
        let d = Dataset::new(vec![sample(-70, 0, 3.0), sample(-58, 12, 3.0)], "t");
        let n = normalize_tx(&d, 12);
        assert_eq!(n.samples[0].rssi, -58);
        assert_eq!(n.samples[1].rssi, -58);
        assert!(n.samples.iter().all(|s| s.tx_power == 12));
    }

    #[test]
    fn normalize_mean_shift_on_uniform_tx() {
        let samples: Vec<_> = (0..100)
            .map(|i| sample(-90 + (i * 7) % 40, 4, 5.0))
            .collect();
        let d = Dataset::new(samples, "");
        let mean =
            |d: &Dataset| d.samples.iter().map(|s| s.rssi as f64).sum::<f64>() / d.len() as f64;
        let shifted = normalize_tx(&d, 12);
        assert!((mean(&shifted) - mean(&d) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn pose_synthesis_with_zero_deltas() {
        let d = Dataset::new(vec![sample(-60, 12, 3.0)], "");
        let zeros: BTreeMap<_, _> = PoseAngle::all().map(|a| (a, 0.0)).collect();
        let table: BulkDeltaTable = [(hand(), zeros)].into_iter().collect();
        let out = synthesize_pose(&d, &table).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.samples.iter().all(|s| s.rssi == -60));
        assert_eq!(out.samples.iter().filter(|s| s.synthetic).count(), 7);
        let angles: BTreeSet<_> = out.samples.iter().map(|s| s.pose_user2).collect();
        assert_eq!(angles.len(), 8);
    }

    #[test]
    fn pose_synthesis_applies_delta() {
        let d = Dataset::new(vec![sample(-60, 12, 3.0)], "");
        let mut deltas: BTreeMap<_, _> = PoseAngle::all().map(|a| (a, 0.0)).collect();
        deltas.insert(PoseAngle::new(180).unwrap(), -10.0);
        let table: BulkDeltaTable = [(hand(), deltas)].into_iter().collect();
        let out = synthesize_pose(&d, &table).unwrap();
        let at180 = out
            .samples
            .iter()
            .find(|s| s.pose_user2 == PoseAngle::new(180).unwrap())
            .unwrap();
        assert_eq!(at180.rssi, -70);
        assert_eq!(out.samples[0], d.samples[0]);
    }

    #[test]
    fn pose_synthesis_missing_entry_is_config_error() {
        let d = Dataset::new(vec![sample(-60, 12, 3.0)], "");
        let mut deltas: BTreeMap<_, _> = PoseAngle::all().map(|a| (a, 0.0)).collect();
        deltas.remove(&PoseAngle::new(90).unwrap());
        let table: BulkDeltaTable = [(hand(), deltas)].into_iter().collect();
        assert!(matches!(
            synthesize_pose(&d, &table),
            Err(MeasurementError::Config(_))
        ));
        assert!(matches!(
            synthesize_pose(&d, &BulkDeltaTable::new()),
            Err(MeasurementError::Config(_))
        ));
    }

    fn angle_dataset(offsets: &[(u16, f64)]) -> Dataset {
        let mut samples = Vec::new();
        for (k, dist) in [2.0, 4.0, 6.0].into_iter().enumerate() {
            for a in PoseAngle::all() {
                let off = offsets
                    .iter()
                    .find(|(deg, _)| *deg == a.degrees())
                    .map(|(_, o)| *o)
                    .unwrap_or(0.0);
                for jitter in [-2.0, 0.0, 2.0] {
                    let mut s = sample(0, 12, dist);
                    s.rssi = quantize_db(-50.0 - 3.0 * k as f64 + off + jitter);
                    s.pose_user1 = a;
                    samples.push(s);
                }
            }
        }
        Dataset::new(samples, "")
    }

    #[test]
    fn bulk_deltas_recover_injected_offsets() {
        let d = angle_dataset(&[(90, -6.0), (180, -10.0)]);
        let deltas = estimate_bulk_deltas(&d, hand()).unwrap();
        assert_eq!(deltas[&PoseAngle::ZERO], 0.0);
        assert!((deltas[&PoseAngle::new(90).unwrap()] + 6.0).abs() <= 0.5);
        assert!((deltas[&PoseAngle::new(180).unwrap()] + 10.0).abs() <= 0.5);
        assert!(deltas[&PoseAngle::new(45).unwrap()].abs() <= 0.5);
    }

    #[test]
    fn bulk_deltas_all_equal_angles() {
        let d = angle_dataset(&[]);
        let deltas = estimate_bulk_deltas(&d, hand()).unwrap();
        assert!(deltas.values().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn bulk_deltas_missing_angle() {
        let mut d = angle_dataset(&[]);
        d.samples
            .retain(|s| s.pose_user1.degrees() != 135 && s.pose_user1.degrees() != 270);
        let err = estimate_bulk_deltas(&d, hand()).unwrap_err().to_string();
        assert!(err.contains("135") && err.contains("270"), "{err}");
    }

    #[test]
    fn extend_range_shifts() {
        let d = Dataset::new(vec![sample(-60, 12, 15.0), sample(-70, 12, 10.0)], "");
        let ext = extend_range(&d, 15.0, 30.0, 2.0).unwrap();
        assert_eq!(ext.len(), 1);
        assert_eq!(ext.samples[0].rssi, -66);
        assert_eq!(ext.samples[0].distance, 30.0);
        assert!(ext.samples[0].synthetic);

        let ext = extend_range(&d, 15.0, 15.0 * 10f64.sqrt(), 2.0);
        // 15·√10 ≈ 47 ft exceeds BLE range
        assert!(ext.is_err());
        assert!((excess_path_loss_db(15.0, 15.0 * 10f64.sqrt(), 2.0) - 10.0).abs() < 1e-12);
        let ext = extend_range(&d, 3.0, 3.0 * 10f64.sqrt(), 2.0);
        assert!(ext.is_err(), "no samples at 3 ft");

        let same = extend_range(&d, 15.0, 15.0, 2.0).unwrap();
        assert_eq!(same.samples[0].rssi, -60);
        assert!(extend_range(&d, 15.0, 10.0, 2.0).is_err());
    }

    #[test]
    fn extend_range_closed_form_ten_db() {
        let d = Dataset::new(vec![sample(-50, 12, 2.0)], "");
        let ext = extend_range(&d, 2.0, 2.0 * 10f64.sqrt(), 2.0).unwrap();
        assert_eq!(ext.samples[0].rssi, -60);
    }

    #[test]
    fn censoring_drops_weak_samples() {
        let d = Dataset::new(vec![sample(-95, 12, 3.0), sample(-105, 12, 3.0)], "");
        let c = censor_dataset(&d, SENSITIVITY_FLOOR_DBM);
        assert_eq!(c.len(), 1);
        assert_eq!(c.samples[0].rssi, -95);
    }

    proptest! {
        #[test]
        fn normalize_round_trip(rssis in proptest::collection::vec(-120i32..0, 1..50), tx in -20i32..20, reference in -20i32..20) {
            let d = Dataset::new(rssis.iter().map(|&r| sample(r, tx, 3.0)).collect(), "");
            let back = normalize_tx(&normalize_tx(&d, reference), tx);
            for (a, b) in d.samples.iter().zip(&back.samples) {
                prop_assert!((a.rssi - b.rssi).abs() <= 1);
                prop_assert_eq!(b.tx_power, tx);
            }
        }

        #[test]
        fn quantization_is_idempotent(x in -200i32..50) {
            prop_assert_eq!(quantize_db(x as f64), x);
        }

        #[test]
        fn extension_translates_histogram(rssis in proptest::collection::vec(-95i32..-30, 1..80), target in 15.5f64..30.0) {
            let d = Dataset::new(rssis.iter().map(|&r| sample(r, 12, 15.0)).collect(), "");
            let ext = extend_range(&d, 15.0, target, 2.0).unwrap();
            let shift = -excess_path_loss_db(15.0, target, 2.0);
            for (a, b) in d.samples.iter().zip(&ext.samples) {
                let exact = a.rssi as f64 + shift;
                prop_assert!((b.rssi as f64 - exact).abs() <= 0.5 + 1e-9);
            }
            // all samples move by the same integer amount, so the histogram is a pure translation
            let moves: BTreeSet<i32> = d.samples.iter().zip(&ext.samples).map(|(a, b)| b.rssi - a.rssi).collect();
            prop_assert_eq!(moves.len(), 1);
        }

        #[test]
        fn synthesis_multiplies_count(n in 1usize..20) {
            let d = Dataset::new((0..n).map(|i| sample(-50 - i as i32, 12, 3.0)).collect(), "");
            let deltas: BTreeMap<_, _> = PoseAngle::all().map(|a| (a, -(a.index() as f64) * 1.3)).collect();
            let table: BulkDeltaTable = [(hand(), deltas)].into_iter().collect();
            let out = synthesize_pose(&d, &table).unwrap();
            prop_assert_eq!(out.len(), 8 * n);
            let measured: Vec<_> = out.samples.iter().filter(|s| !s.synthetic).copied().collect();
            prop_assert_eq!(measured, d.samples.clone());
        }
    }
}
