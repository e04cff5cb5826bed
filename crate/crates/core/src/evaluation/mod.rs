//! DET curves, expected true/false contacts, false discovery rate, and
//! look-count sweeps.
//!
//! Every curve is built from per-state [`OperatingTable`]s: P_D and P_FA for
//! each (threshold, m) pair. Mixed-state figures weight states by the carriage
//! prior times the unscaled contact mass of the near/far interval, so the
//! overall P_D is TC normalized by its P_D ≡ 1 value.

mod window;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use window::{
    common_thresholds, expected_contacts, pd_at_range, pd_at_range_monte_carlo,
    window_detection_probs, McEstimate, StateModel, WindowPopulation,
};

use crate::densities::DensityError;
use crate::detectors::{CarriageOffsets, DetectorError, MofNDetector, OperatingTable};
use crate::measurements::{CarriagePair, Holding, Posture};
use crate::scansim::{Correlation, Looks, RecordingPolicy, SamplingModel, ScanError, ScanModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("FDR is undefined when no contacts are declared (tc + fc = 0)")]
    UndefinedFdr,
    #[error("prior error: {0}")]
    Prior(String),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Scan(#[from] ScanError),
}

/// Probability of each carriage pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "BTreeMap<CarriagePair, f64>",
    into = "BTreeMap<CarriagePair, f64>"
)]
pub struct CarriagePrior {
    weights: BTreeMap<CarriagePair, f64>,
}

impl TryFrom<BTreeMap<CarriagePair, f64>> for CarriagePrior {
    type Error = EvalError;

    fn try_from(weights: BTreeMap<CarriagePair, f64>) -> Result<Self, Self::Error> {
        CarriagePrior::new(weights)
    }
}

impl From<CarriagePrior> for BTreeMap<CarriagePair, f64> {
    fn from(p: CarriagePrior) -> Self {
        p.weights
    }
}

impl CarriagePrior {
    pub fn new(weights: BTreeMap<CarriagePair, f64>) -> Result<Self, EvalError> {
        if weights.is_empty() {
            return Err(EvalError::Prior("prior has no states".into()));
        }
        if weights.values().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(EvalError::Prior(
                "prior weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(EvalError::Prior(format!(
                "prior weights sum to {total}, not 1"
            )));
        }
        Ok(Self { weights })
    }

    /// Normalizes arbitrary non-negative weights.
    pub fn from_weights(weights: BTreeMap<CarriagePair, f64>) -> Result<Self, EvalError> {
        let total: f64 = weights.values().sum();
        if !(total > 0.0) {
            return Err(EvalError::Prior(
                "prior weights must have a positive sum".into(),
            ));
        }
        Self::new(weights.into_iter().map(|(c, w)| (c, w / total)).collect())
    }

    pub fn single(c: CarriagePair) -> Self {
        Self {
            weights: [(c, 1.0)].into_iter().collect(),
        }
    }

    pub fn uniform(pairs: &[CarriagePair]) -> Result<Self, EvalError> {
        Self::from_weights(pairs.iter().map(|&c| (c, 1.0)).collect())
    }

    /// Independent per-user carriage marginals, restricted to `pairs`.
    ///
    /// Each user holds the phone in hand with probability `hand`, the remaining
    /// mass shared equally by the other holdings present in `pairs`, and stands
    /// with probability `standing`. Pair weights are the product over both
    /// users, renormalized over `pairs`.
    pub fn from_marginals(
        pairs: &[CarriagePair],
        hand: f64,
        standing: f64,
    ) -> Result<Self, EvalError> {
        if !(0.0..=1.0).contains(&hand) || !(0.0..=1.0).contains(&standing) {
            return Err(EvalError::Prior(
                "marginal probabilities must lie in [0, 1]".into(),
            ));
        }
        let others: std::collections::BTreeSet<Holding> = pairs
            .iter()
            .flat_map(|p| [p.user1.holding, p.user2.holding])
            .filter(|h| *h != Holding::Hand)
            .collect();
        let holding_p = |h: Holding| {
            if h == Holding::Hand {
                hand
            } else {
                (1.0 - hand) / others.len().max(1) as f64
            }
        };
        let posture_p = |p: Posture| {
            if p == Posture::Standing {
                standing
            } else {
                1.0 - standing
            }
        };
        let user_p =
            |s: crate::measurements::CarriageState| holding_p(s.holding) * posture_p(s.posture);
        Self::from_weights(
            pairs
                .iter()
                .map(|&c| (c, user_p(c.user1) * user_p(c.user2)))
                .collect(),
        )
    }

    pub fn weight(&self, c: CarriagePair) -> Result<f64, EvalError> {
        self.weights
            .get(&c)
            .copied()
            .ok_or_else(|| EvalError::Prior(format!("prior has no weight for {c}")))
    }

    pub fn weights(&self) -> &BTreeMap<CarriagePair, f64> {
        &self.weights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetMode {
    /// Threshold and m optimized, shared by all states.
    MofN,
    /// Maximum-value detector (m = 1), shared by all states.
    OneOfN,
    /// Carriage-blind: one (threshold, m) across states weighted by the prior.
    Agnostic,
    /// Carriage-aware: per-state thresholds aligned by minimax offsets.
    Cognitive,
}

impl DetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DetMode::MofN => "m-of-n",
            DetMode::OneOfN => "one-of-n",
            DetMode::Agnostic => "agnostic",
            DetMode::Cognitive => "cognitive",
        }
    }
}

impl std::str::FromStr for DetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "m-of-n" | "mofn" => Ok(DetMode::MofN),
            "one-of-n" | "1-of-n" | "max" => Ok(DetMode::OneOfN),
            "agnostic" => Ok(DetMode::Agnostic),
            "cognitive" => Ok(DetMode::Cognitive),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub p_fa: f64,
    pub p_d: f64,
    pub detector: MofNDetector,
}

/// Operating points sorted by P_FA, with P_D strictly increasing (upper-left envelope).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub mode: DetMode,
    pub looks: u32,
    pub points: Vec<DetPoint>,
}

impl DetCurve {
    /// Best P_D among points with P_FA ≤ `p_fa`.
    pub fn step_pd(&self, p_fa: f64) -> f64 {
        self.points
            .iter()
            .take_while(|p| p.p_fa <= p_fa + 1e-12)
            .map(|p| p.p_d)
            .fold(0.0, f64::max)
    }

    /// P_D at `p_fa` by linear interpolation between envelope points.
    pub fn interpolated_pd(&self, p_fa: f64) -> f64 {
        let pts = &self.points;
        match pts.iter().position(|p| p.p_fa >= p_fa) {
            None => pts.last().map(|p| p.p_d).unwrap_or(0.0),
            Some(0) => {
                if pts[0].p_fa <= p_fa + 1e-15 {
                    pts[0].p_d
                } else {
                    // between (0, 0) and the first point
                    pts[0].p_d * p_fa / pts[0].p_fa
                }
            }
            Some(i) => {
                let (a, b) = (&pts[i - 1], &pts[i]);
                if b.p_fa - a.p_fa <= 0.0 {
                    return b.p_d;
                }
                a.p_d + (b.p_d - a.p_d) * (p_fa - a.p_fa) / (b.p_fa - a.p_fa)
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("p_fa,p_d,tau,m,n,offsets\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                p.p_fa,
                p.p_d,
                p.detector.tau,
                p.detector.m,
                p.detector.n,
                offsets_field(&p.detector)
            );
        }
        out
    }
}

fn offsets_field(det: &MofNDetector) -> String {
    det.offsets
        .as_ref()
        .map(|o| {
            o.offsets
                .iter()
                .map(|(c, v)| format!("{c}={v}"))
                .collect::<Vec<_>>()
                .join(";")
        })
        .unwrap_or_default()
}

/// Per-state aggregation weights for P_D and P_FA.
struct Weights {
    near: Vec<f64>,
    far: Vec<f64>,
}

fn aggregation_weights(states: &[StateModel], prior: &CarriagePrior) -> Result<Weights, EvalError> {
    let mut near = Vec::with_capacity(states.len());
    let mut far = Vec::with_capacity(states.len());
    for s in states {
        let w = prior.weight(s.carriage)?;
        let (m1, m0) = s.masses.unwrap_or((1.0, 1.0));
        near.push(w * m1);
        far.push(w * m0);
    }
    let (tn, tf): (f64, f64) = (near.iter().sum(), far.iter().sum());
    if !(tn > 0.0 && tf > 0.0) {
        return Err(EvalError::Prior(
            "prior puts no weight on the evaluated states".into(),
        ));
    }
    Ok(Weights {
        near: near.into_iter().map(|x| x / tn).collect(),
        far: far.into_iter().map(|x| x / tf).collect(),
    })
}

/// Upper-left envelope: sorted by P_FA, keeping only points that raise P_D.
/// Earlier candidates win exact ties.
fn envelope(mut candidates: Vec<DetPoint>) -> Vec<DetPoint> {
    candidates.sort_by(|a, b| a.p_fa.total_cmp(&b.p_fa).then(b.p_d.total_cmp(&a.p_d)));
    let mut out: Vec<DetPoint> = Vec::new();
    for c in candidates {
        if out.last().is_none_or(|last| c.p_d > last.p_d) {
            out.push(c);
        }
    }
    out
}

pub fn tables_for(states: &[StateModel], looks: &Looks) -> Vec<OperatingTable> {
    let taus = common_thresholds(states);
    states.iter().map(|s| s.table(looks, taus)).collect()
}

/// DET curve of a detector family over the given states.
pub fn det_curve(
    states: &[StateModel],
    prior: &CarriagePrior,
    looks: &Looks,
    mode: DetMode,
) -> Result<DetCurve, EvalError> {
    let tables = tables_for(states, looks);
    det_curve_from_tables(&tables, states, prior, looks.total(), mode)
}

pub fn det_curve_from_tables(
    tables: &[OperatingTable],
    states: &[StateModel],
    prior: &CarriagePrior,
    n: u32,
    mode: DetMode,
) -> Result<DetCurve, EvalError> {
    if n == 0 {
        return Err(EvalError::Parameter("n must be at least 1".into()));
    }
    if tables.is_empty() {
        return Err(EvalError::Parameter(
            "no carriage states to evaluate".into(),
        ));
    }
    let w = aggregation_weights(states, prior)?;
    let (tau_lo, tau_hi) = (tables[0].tau_min, tables[0].tau_max());
    let ms: Vec<u32> = match mode {
        DetMode::OneOfN => vec![1],
        _ => (1..=n).collect(),
    };
    let mut candidates = Vec::new();
    match mode {
        DetMode::MofN | DetMode::OneOfN | DetMode::Agnostic => {
            for &m in &ms {
                for tau in (tau_lo..=tau_hi).rev() {
                    let p_d = tables
                        .iter()
                        .zip(&w.near)
                        .map(|(t, w)| w * t.pd(tau, m))
                        .sum();
                    let p_fa = tables
                        .iter()
                        .zip(&w.far)
                        .map(|(t, w)| w * t.pfa(tau, m))
                        .sum();
                    candidates.push(DetPoint {
                        p_fa,
                        p_d,
                        detector: MofNDetector::new(tau, m, n)?,
                    });
                }
            }
        }
        DetMode::Cognitive => {
            let reference = tables[0].carriage;
            for &m in &ms {
                let mut targets: Vec<f64> = tables
                    .iter()
                    .flat_map(|t| (tau_lo..=tau_hi).map(move |tau| t.pd(tau, m)))
                    .collect();
                targets.sort_by(|a, b| b.total_cmp(a));
                targets.dedup();
                for target in targets {
                    let Some(taus) = tables
                        .iter()
                        .map(|t| t.threshold_for(m, target))
                        .collect::<Option<Vec<i32>>>()
                    else {
                        continue;
                    };
                    let mut p_d = 0.0;
                    let mut p_fa = 0.0;
                    for ((t, &tau), (wn, wf)) in
                        tables.iter().zip(&taus).zip(w.near.iter().zip(&w.far))
                    {
                        p_d += wn * t.pd(tau, m);
                        p_fa += wf * t.pfa(tau, m);
                    }
                    let offsets = CarriageOffsets {
                        reference,
                        offsets: tables
                            .iter()
                            .zip(&taus)
                            .map(|(t, &tau)| (t.carriage, taus[0] - tau))
                            .collect(),
                    };
                    candidates.push(DetPoint {
                        p_fa,
                        p_d,
                        detector: MofNDetector::new(taus[0], m, n)?.with_offsets(offsets),
                    });
                }
            }
        }
    }
    Ok(DetCurve {
        mode,
        looks: n,
        points: envelope(candidates),
    })
}

/// False discovery rate fc / (tc + fc).
pub fn fdr(tc: f64, fc: f64) -> Result<f64, EvalError> {
    if !(tc >= 0.0 && fc >= 0.0) {
        return Err(EvalError::Parameter(format!(
            "contacts must be non-negative (tc={tc}, fc={fc})"
        )));
    }
    if tc + fc <= 0.0 {
        return Err(EvalError::UndefinedFdr);
    }
    Ok(fc / (tc + fc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrPoint {
    pub p_d: f64,
    pub fdr: f64,
    pub p_fa: f64,
    /// Prior-weighted expected true contacts.
    pub tc: f64,
    /// Prior-weighted expected false contacts.
    pub fc: f64,
    pub detector: MofNDetector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrCurve {
    pub mode: DetMode,
    pub looks: u32,
    pub points: Vec<FdrPoint>,
}

impl FdrCurve {
    /// Largest P_D at which the curve's FDR is at most `target`, interpolating
    /// linearly in (P_D, FDR) between points. `None` when no point gets there.
    pub fn pd_at_fdr(&self, target: f64) -> Option<f64> {
        let pts = &self.points;
        let mut best: Option<f64> = None;
        let mut consider = |pd: f64| best = Some(best.map_or(pd, |b: f64| b.max(pd)));
        for (i, p) in pts.iter().enumerate() {
            if p.fdr <= target {
                consider(p.p_d);
            }
            if let Some(q) = pts.get(i + 1) {
                if (p.fdr - target) * (q.fdr - target) < 0.0 {
                    let t = (target - p.fdr) / (q.fdr - p.fdr);
                    consider(p.p_d + t * (q.p_d - p.p_d));
                }
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("p_d,fdr,p_fa,tc,fc,tau,m,n,offsets\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                p.p_d,
                p.fdr,
                p.p_fa,
                p.tc,
                p.fc,
                p.detector.tau,
                p.detector.m,
                p.detector.n,
                offsets_field(&p.detector)
            );
        }
        out
    }
}

/// FDR versus overall P_D along the mode's DET envelope. States must be
/// range-conditioned ([`StateModel::from_bank`]).
pub fn fdr_curve(
    states: &[StateModel],
    prior: &CarriagePrior,
    looks: &Looks,
    mode: DetMode,
) -> Result<FdrCurve, EvalError> {
    let det = det_curve(states, prior, looks, mode)?;
    fdr_from_det(&det, states, prior)
}

pub fn fdr_from_det(
    det: &DetCurve,
    states: &[StateModel],
    prior: &CarriagePrior,
) -> Result<FdrCurve, EvalError> {
    let mut near_total = 0.0;
    let mut far_total = 0.0;
    for s in states {
        let (m1, m0) = s.masses.ok_or_else(|| {
            EvalError::Parameter(format!(
                "state {} is not range-conditioned; FDR needs contact masses",
                s.carriage
            ))
        })?;
        let w = prior.weight(s.carriage)?;
        near_total += w * m1;
        far_total += w * m0;
    }
    let mut points = Vec::with_capacity(det.points.len());
    for p in &det.points {
        let tc = p.p_d * near_total;
        let fc = p.p_fa * far_total;
        match fdr(tc, fc) {
            Ok(f) => points.push(FdrPoint {
                p_d: p.p_d,
                fdr: f,
                p_fa: p.p_fa,
                tc,
                fc,
                detector: p.detector.clone(),
            }),
            Err(EvalError::UndefinedFdr) => continue,
            Err(e) => return Err(e),
        }
    }
    points.sort_by(|a, b| a.p_d.total_cmp(&b.p_d));
    Ok(FdrCurve {
        mode: det.mode,
        looks: det.looks,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookConfig {
    pub scans: u32,
    pub samples_per_scan: u32,
}

impl LookConfig {
    pub fn sampling(&self, correlation: Correlation) -> SamplingModel {
        if self.samples_per_scan <= 1 {
            SamplingModel {
                policy: RecordingPolicy::FirstChirp,
                samples_per_scan: 1,
                correlation,
            }
        } else {
            SamplingModel {
                policy: RecordingPolicy::AllChirps,
                samples_per_scan: self.samples_per_scan,
                correlation,
            }
        }
    }
}

impl std::fmt::Display for LookConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.scans, self.samples_per_scan)
    }
}

impl std::str::FromStr for LookConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once('x').unwrap_or((s, "1"));
        let scans = a
            .trim()
            .parse()
            .map_err(|_| format!("bad scan count in `{s}`"))?;
        let samples_per_scan = b
            .trim()
            .parse()
            .map_err(|_| format!("bad samples-per-scan in `{s}`"))?;
        if scans == 0 || samples_per_scan == 0 {
            return Err(format!("look config `{s}` must be positive"));
        }
        Ok(Self {
            scans,
            samples_per_scan,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookSweepRow {
    pub config: LookConfig,
    pub looks: u32,
    /// `None` when the FDR target is outside the curve's range.
    pub p_d: Option<f64>,
}

/// P_D at a fixed FDR for each look configuration.
pub fn look_sweep(
    states: &[StateModel],
    prior: &CarriagePrior,
    model: &ScanModel,
    configs: &[LookConfig],
    correlation: Correlation,
    mode: DetMode,
    fdr_target: f64,
) -> Result<Vec<LookSweepRow>, EvalError> {
    if !(fdr_target > 0.0 && fdr_target < 1.0) {
        return Err(EvalError::Parameter(format!(
            "FDR target {fdr_target} must lie in (0, 1)"
        )));
    }
    configs
        .iter()
        .map(|cfg| {
            let looks = Looks::new(&model.with_scans(cfg.scans), cfg.sampling(correlation))?;
            let curve = fdr_curve(states, prior, &looks, mode)?;
            Ok(LookSweepRow {
                config: *cfg,
                looks: looks.total(),
                p_d: curve.pd_at_fdr(fdr_target),
            })
        })
        .collect()
}
