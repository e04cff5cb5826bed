//! Too-close-for-too-long detectors: the tabulated log-likelihood-ratio
//! detector, the M-of-N detector with optional per-carriage RSSI corrections,
//! and minimax selection of M-of-N parameters across carriage states.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densities::HypothesisPdfs;
use crate::measurements::CarriagePair;

/// Floor on per-bin probability used when taking logs.
pub const DEFAULT_H0_FLOOR: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("target P_D {target} is unreachable; best worst-state P_D is {best}")]
    Infeasible { target: f64, best: f64 },
}

/// Per-bin log-likelihood weight z(x) = ln p(x|H1) − ln p(x|H0), both floored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    support_min: i32,
    weights: Vec<f64>,
    h0_floor: f64,
}

impl Nonlinearity {
    /// A table given directly (e.g. replayed from a file).
    pub fn from_table(
        support_min: i32,
        weights: Vec<f64>,
        h0_floor: f64,
    ) -> Result<Self, DetectorError> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
            return Err(DetectorError::Parameter(
                "nonlinearity table must be non-empty and finite".into(),
            ));
        }
        Ok(Self {
            support_min,
            weights,
            h0_floor,
        })
    }

    pub fn support_min(&self) -> i32 {
        self.support_min
    }

    pub fn support_max(&self) -> i32 {
        self.support_min + self.weights.len() as i32 - 1
    }

    pub fn h0_floor(&self) -> f64 {
        self.h0_floor
    }

    /// z(x), clamping x into the tabulated support.
    pub fn weight(&self, x: i32) -> f64 {
        let i = (x - self.support_min).clamp(0, self.weights.len() as i32 - 1);
        self.weights[i as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .map(move |(i, &w)| (self.support_min + i as i32, w))
    }

    /// Largest weight any bin can reach, ln(1/floor).
    pub fn max_weight(&self) -> f64 {
        -self.h0_floor.ln()
    }
}

pub fn build_nonlinearity(h: &HypothesisPdfs, floor: f64) -> Result<Nonlinearity, DetectorError> {
    if !(floor > 0.0) || floor >= 1.0 {
        return Err(DetectorError::Parameter(format!(
            "floor {floor} must lie in (0, 1)"
        )));
    }
    let lo = h.h1.support_min().min(h.h0.support_min());
    let hi = h.h1.support_max().max(h.h0.support_max());
    let weights = (lo..=hi)
        .map(|x| h.h1.prob(x).max(floor).ln() - h.h0.prob(x).max(floor).ln())
        .collect();
    Nonlinearity::from_table(lo, weights, floor)
}

/// l(X) = Σ z(x_i).
pub fn llr_statistic(nl: &Nonlinearity, samples: &[i32]) -> Result<f64, DetectorError> {
    if samples.is_empty() {
        return Err(DetectorError::Input("no samples".into()));
    }
    Ok(samples.iter().map(|&x| nl.weight(x)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    TooCloseTooLong,
    NotTooClose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub statistic: f64,
}

/// Likelihood-ratio test: declare when l(X) ≥ threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlrDetector {
    pub nonlinearity: Nonlinearity,
    pub threshold: f64,
}

impl LlrDetector {
    pub fn decide(&self, samples: &[i32]) -> Result<Decision, DetectorError> {
        let statistic = llr_statistic(&self.nonlinearity, samples)?;
        Ok(Decision {
            verdict: if statistic >= self.threshold {
                Verdict::TooCloseTooLong
            } else {
                Verdict::NotTooClose
            },
            statistic,
        })
    }
}

/// Per-carriage RSSI corrections, dB, added to each sample before thresholding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarriageOffsets {
    /// The state whose correction is zero by construction.
    pub reference: CarriagePair,
    pub offsets: BTreeMap<CarriagePair, i32>,
}

impl CarriageOffsets {
    pub fn get(&self, c: CarriagePair) -> Result<i32, DetectorError> {
        self.offsets
            .get(&c)
            .copied()
            .ok_or_else(|| DetectorError::Config(format!("no RSSI offset for carriage {c}")))
    }
}

/// Counts looks at or above `tau` and declares when the count reaches `m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MofNDetector {
    pub tau: i32,
    pub m: u32,
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<CarriageOffsets>,
}

pub fn check_m_n(m: u32, n: u32) -> Result<(), DetectorError> {
    if m == 0 || m > n {
        return Err(DetectorError::Parameter(format!(
            "need 1 <= m <= n, got m={m}, n={n}"
        )));
    }
    Ok(())
}

impl MofNDetector {
    pub fn new(tau: i32, m: u32, n: u32) -> Result<Self, DetectorError> {
        check_m_n(m, n)?;
        Ok(Self {
            tau,
            m,
            n,
            offsets: None,
        })
    }

    pub fn with_offsets(mut self, offsets: CarriageOffsets) -> Self {
        self.offsets = Some(offsets);
        self
    }

    /// Threshold on the raw RSSI of a sample in state `c`.
    pub fn effective_threshold(&self, c: CarriagePair) -> Result<i32, DetectorError> {
        match &self.offsets {
            Some(o) => Ok(self.tau - o.get(c)?),
            None => Ok(self.tau),
        }
    }

    pub fn decide(&self, samples: &[(i32, CarriagePair)]) -> Result<Decision, DetectorError> {
        check_m_n(self.m, self.n)?;
        if samples.is_empty() {
            return Err(DetectorError::Input("no samples".into()));
        }
        let mut count = 0u32;
        for &(x, c) in samples {
            let corrected = match &self.offsets {
                Some(o) => x + o.get(c)?,
                None => x,
            };
            if corrected >= self.tau {
                count += 1;
            }
        }
        Ok(Decision {
            verdict: if count >= self.m {
                Verdict::TooCloseTooLong
            } else {
                Verdict::NotTooClose
            },
            statistic: count as f64,
        })
    }
}

pub fn decide_mofn(
    det: &MofNDetector,
    samples: &[(i32, CarriagePair)],
) -> Result<Decision, DetectorError> {
    det.decide(samples)
}

/// P(at least m of n independent looks exceed), each exceeding with probability p.
pub fn mofn_detection_prob(p: f64, m: u32, n: u32) -> Result<f64, DetectorError> {
    check_m_n(m, n)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(DetectorError::Parameter(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    Ok(binomial_upper_tail(p, m, n))
}

pub(crate) fn binomial_upper_tail(p: f64, m: u32, n: u32) -> f64 {
    let q = 1.0 - p;
    let mut coeff = 1.0f64; // C(n, k)
    let mut lower = 0.0;
    let mut upper = 0.0;
    for k in 0..=n {
        if k > 0 {
            coeff = coeff * (n - k + 1) as f64 / k as f64;
        }
        let term = coeff * p.powi(k as i32) * q.powi((n - k) as i32);
        if k < m {
            lower += term;
        } else {
            upper += term;
        }
    }
    // sum whichever side is smaller for accuracy near 0 and 1
    if upper <= 0.5 {
        upper
    } else {
        (1.0 - lower).clamp(0.0, 1.0)
    }
}

/// P_D and P_FA of one carriage state for every (threshold, m) on a common grid.
///
/// Thresholds run over `tau_min ..= tau_min + rows - 1`; the first row is at or
/// below the support (every look exceeds) and the last is above it.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingTable {
    pub carriage: CarriagePair,
    pub tau_min: i32,
    pub looks: u32,
    pd: Vec<f64>,
    pfa: Vec<f64>,
}

impl OperatingTable {
    /// `rows[i][m-1] = (pd, pfa)` for threshold `tau_min + i`.
    pub fn from_rows(
        carriage: CarriagePair,
        tau_min: i32,
        looks: u32,
        rows: Vec<Vec<(f64, f64)>>,
    ) -> Self {
        let mut pd = Vec::with_capacity(rows.len() * looks as usize);
        let mut pfa = Vec::with_capacity(rows.len() * looks as usize);
        for row in rows {
            assert_eq!(row.len(), looks as usize, "row width must equal look count");
            for (d, f) in row {
                pd.push(d);
                pfa.push(f);
            }
        }
        Self {
            carriage,
            tau_min,
            looks,
            pd,
            pfa,
        }
    }

    /// Independent looks drawn from the hypothesis mixtures.
    pub fn independent(
        carriage: CarriagePair,
        h: &HypothesisPdfs,
        looks: u32,
        taus: (i32, i32),
    ) -> Self {
        let rows = (taus.0..=taus.1)
            .map(|tau| {
                let p1 = h.h1.tail_mass(tau);
                let p0 = h.h0.tail_mass(tau);
                (1..=looks)
                    .map(|m| {
                        (
                            binomial_upper_tail(p1, m, looks),
                            binomial_upper_tail(p0, m, looks),
                        )
                    })
                    .collect()
            })
            .collect();
        Self::from_rows(carriage, taus.0, looks, rows)
    }

    pub fn tau_max(&self) -> i32 {
        self.tau_min + self.rows() as i32 - 1
    }

    pub fn rows(&self) -> usize {
        self.pd.len() / self.looks as usize
    }

    fn index(&self, tau: i32, m: u32) -> usize {
        let row = (tau.clamp(self.tau_min, self.tau_max()) - self.tau_min) as usize;
        row * self.looks as usize + (m as usize - 1)
    }

    pub fn pd(&self, tau: i32, m: u32) -> f64 {
        self.pd[self.index(tau, m)]
    }

    pub fn pfa(&self, tau: i32, m: u32) -> f64 {
        self.pfa[self.index(tau, m)]
    }

    /// Largest threshold whose P_D still reaches `target`.
    /// P_D is non-increasing in the threshold, so this is a binary search.
    pub fn threshold_for(&self, m: u32, target: f64) -> Option<i32> {
        let rows = self.rows() as i32;
        let reached = |i: i32| self.pd(self.tau_min + i, m) >= target - 1e-12;
        let (mut lo, mut hi) = (0, rows);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if reached(mid) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        (lo > 0).then(|| self.tau_min + lo - 1)
    }
}

/// Common threshold grid for a set of hypothesis pairs.
pub fn threshold_range<'a>(states: impl IntoIterator<Item = &'a HypothesisPdfs>) -> (i32, i32) {
    let mut lo = i32::MAX;
    let mut hi = i32::MIN;
    for h in states {
        let (a, b) = h.support();
        lo = lo.min(a);
        hi = hi.max(b);
    }
    (lo, hi + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateOperatingPoint {
    pub carriage: CarriagePair,
    /// Threshold on raw RSSI for this state.
    pub tau: i32,
    pub p_d: f64,
    pub p_fa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxSelection {
    pub detector: MofNDetector,
    pub per_state: Vec<StateOperatingPoint>,
    pub min_pd: f64,
    pub worst_pfa: f64,
}

impl MinimaxSelection {
    /// Spread of the per-state raw thresholds, dB.
    pub fn threshold_spread(&self) -> i32 {
        let taus = self.per_state.iter().map(|s| s.tau);
        taus.clone().max().unwrap_or(0) - taus.min().unwrap_or(0)
    }
}

/// Minimax M-of-N selection over per-state operating tables.
///
/// For each m, every state gets the largest raw threshold that still reaches
/// `target_pd`; offsets align those thresholds onto the first (reference)
/// state's. The m with the smallest worst-state P_FA wins, then the largest
/// worst-state P_D, then the smallest m.
pub fn minimax_from_tables(
    tables: &[OperatingTable],
    target_pd: f64,
) -> Result<MinimaxSelection, DetectorError> {
    if tables.is_empty() {
        return Err(DetectorError::Parameter(
            "need at least one carriage state".into(),
        ));
    }
    if !(target_pd > 0.0 && target_pd < 1.0) {
        return Err(DetectorError::Parameter(format!(
            "target P_D {target_pd} must lie in (0, 1)"
        )));
    }
    let looks = tables[0].looks;
    if tables.iter().any(|t| t.looks != looks) {
        return Err(DetectorError::Parameter(
            "tables disagree on look count".into(),
        ));
    }
    let mut best: Option<MinimaxSelection> = None;
    let mut best_reachable = 0.0f64;
    for m in 1..=looks {
        let reachable = tables
            .iter()
            .map(|t| {
                (t.tau_min..=t.tau_max())
                    .map(|tau| t.pd(tau, m))
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        best_reachable = best_reachable.max(reachable);
        let Some(taus) = tables
            .iter()
            .map(|t| t.threshold_for(m, target_pd))
            .collect::<Option<Vec<i32>>>()
        else {
            continue;
        };
        let per_state: Vec<StateOperatingPoint> = tables
            .iter()
            .zip(&taus)
            .map(|(t, &tau)| StateOperatingPoint {
                carriage: t.carriage,
                tau,
                p_d: t.pd(tau, m),
                p_fa: t.pfa(tau, m),
            })
            .collect();
        let worst_pfa = per_state.iter().map(|s| s.p_fa).fold(0.0, f64::max);
        let min_pd = per_state.iter().map(|s| s.p_d).fold(1.0, f64::min);
        let reference = tables[0].carriage;
        let offsets = CarriageOffsets {
            reference,
            offsets: per_state
                .iter()
                .map(|s| (s.carriage, taus[0] - s.tau))
                .collect(),
        };
        let candidate = MinimaxSelection {
            detector: MofNDetector::new(taus[0], m, looks)?.with_offsets(offsets),
            per_state,
            min_pd,
            worst_pfa,
        };
        let better = match &best {
            None => true,
            Some(b) => {
                candidate.worst_pfa < b.worst_pfa - 1e-12
                    || ((candidate.worst_pfa - b.worst_pfa).abs() <= 1e-12
                        && candidate.min_pd > b.min_pd + 1e-12)
            }
        };
        if better {
            best = Some(candidate);
        }
    }
    best.ok_or(DetectorError::Infeasible {
        target: target_pd,
        best: best_reachable,
    })
}

/// Minimax selection for `n` independent looks per state.
pub fn minimax_select(
    banks: &[(CarriagePair, HypothesisPdfs)],
    n: u32,
    target_pd: f64,
) -> Result<MinimaxSelection, DetectorError> {
    if n == 0 {
        return Err(DetectorError::Parameter("n must be at least 1".into()));
    }
    let taus = threshold_range(banks.iter().map(|(_, h)| h));
    let tables: Vec<OperatingTable> = banks
        .iter()
        .map(|(c, h)| OperatingTable::independent(*c, h, n, taus))
        .collect();
    minimax_from_tables(&tables, target_pd)
}
