//! Exact detection probability of an M-of-N window under the scan sampling
//! models, and the per-carriage-state models evaluated by the curve sweeps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::densities::{
    grid_weights, ConditionalPdfBank, ContactDensity, HypothesisConfig, HypothesisPdfs,
    StratifiedPdf,
};
use crate::detectors::{MofNDetector, OperatingTable, Verdict};
use crate::measurements::CarriagePair;
use crate::scansim::{window_seed, Correlation, Looks, RecordingPolicy, StratifiedSampler};

fn binomial_pmf(p: f64, r: u32) -> Vec<f64> {
    let q = 1.0 - p;
    let mut coeff = 1.0f64;
    (0..=r)
        .map(|k| {
            if k > 0 {
                coeff = coeff * (r - k + 1) as f64 / k as f64;
            }
            coeff * p.powi(k as i32) * q.powi((r - k) as i32)
        })
        .collect()
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Distribution of the number of recorded values at or above `threshold` in one scan.
fn scan_count_pmf(pdf: &StratifiedPdf, threshold: i32, looks: &Looks) -> Vec<f64> {
    let comps = pdf.components();
    let tails: Vec<f64> = comps.iter().map(|c| c.pdf.tail_mass(threshold)).collect();
    let pooled: f64 = comps
        .iter()
        .zip(&tails)
        .map(|(c, p)| c.weight * p)
        .sum::<f64>()
        .min(1.0);
    let correlated = looks.sampling.correlation == Correlation::WithinScanCorrelated;
    let bernoulli = |q: f64| vec![1.0 - q, q];
    match looks.sampling.policy {
        RecordingPolicy::FirstChirp => bernoulli(pooled),
        RecordingPolicy::MinAttenuation => {
            let k = looks.chirps_per_scan.max(1) as i32;
            let q = if correlated {
                comps
                    .iter()
                    .zip(&tails)
                    .map(|(c, p)| c.weight * (1.0 - (1.0 - p).powi(k)))
                    .sum::<f64>()
            } else {
                1.0 - (1.0 - pooled).powi(k)
            };
            bernoulli(q.clamp(0.0, 1.0))
        }
        RecordingPolicy::AllChirps => {
            let r = looks.sampling.samples_per_scan;
            if correlated {
                let mut acc = vec![0.0; r as usize + 1];
                for (c, &p) in comps.iter().zip(&tails) {
                    for (a, b) in acc.iter_mut().zip(binomial_pmf(p, r)) {
                        *a += c.weight * b;
                    }
                }
                acc
            } else {
                binomial_pmf(pooled, r)
            }
        }
    }
}

/// P(count ≥ m) for m = 1..=looks.total(), windows drawn from `pdf`.
pub fn window_detection_probs(pdf: &StratifiedPdf, threshold: i32, looks: &Looks) -> Vec<f64> {
    let scan = scan_count_pmf(pdf, threshold, looks);
    let mut total = vec![1.0];
    for _ in 0..looks.scans {
        total = convolve(&total, &scan);
    }
    let n = looks.total() as usize;
    let mut tails = vec![0.0; n];
    let mut acc = 0.0;
    for m in (1..=n).rev() {
        acc += total.get(m).copied().unwrap_or(0.0);
        tails[m - 1] = acc.min(1.0);
    }
    tails
}

/// A population of windows: each window draws one component (e.g. a
/// separation) and keeps it; scans within the window draw pose strata from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPopulation {
    components: Vec<(f64, StratifiedPdf)>,
}

impl WindowPopulation {
    pub fn single(pdf: StratifiedPdf) -> Self {
        Self {
            components: vec![(1.0, pdf)],
        }
    }

    /// Normalizes the weights.
    pub fn new(components: Vec<(f64, StratifiedPdf)>) -> Result<Self, EvalError> {
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if !(total > 0.0) || components.iter().any(|(w, _)| *w < 0.0) {
            return Err(EvalError::Parameter(
                "population weights must be non-negative with positive sum".into(),
            ));
        }
        Ok(Self {
            components: components
                .into_iter()
                .map(|(w, p)| (w / total, p))
                .collect(),
        })
    }

    pub fn support(&self) -> (i32, i32) {
        let lo = self
            .components
            .iter()
            .map(|(_, p)| p.support().0)
            .min()
            .unwrap_or(0);
        let hi = self
            .components
            .iter()
            .map(|(_, p)| p.support().1)
            .max()
            .unwrap_or(0);
        (lo, hi)
    }

    pub fn detection_probs(&self, threshold: i32, looks: &Looks) -> Vec<f64> {
        let mut acc = vec![0.0; looks.total() as usize];
        for (w, pdf) in &self.components {
            for (a, p) in acc
                .iter_mut()
                .zip(window_detection_probs(pdf, threshold, looks))
            {
                *a += w * p;
            }
        }
        acc
    }
}

/// Near (H1) and far (H0) window populations of one carriage state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateModel {
    pub carriage: CarriagePair,
    pub near: WindowPopulation,
    pub far: WindowPopulation,
    /// Unscaled ∫D(s)ds over the near and far intervals, when range-conditioned.
    pub masses: Option<(f64, f64)>,
}

impl StateModel {
    /// Looks drawn from the hypothesis mixtures (separation redrawn per scan).
    pub fn from_hypothesis(carriage: CarriagePair, h: &HypothesisPdfs) -> Self {
        Self {
            carriage,
            near: WindowPopulation::single(h.h1_stratified()),
            far: WindowPopulation::single(h.h0_stratified()),
            masses: None,
        }
    }

    /// Range-conditioned windows: separation fixed for the window, weighted by D(s).
    pub fn from_bank(
        bank: &ConditionalPdfBank,
        density: &ContactDensity,
        carriage: CarriagePair,
        cfg: &HypothesisConfig,
    ) -> Result<Self, EvalError> {
        cfg.validate()?;
        let cells: Vec<_> = bank
            .cells()
            .iter()
            .filter(|x| x.carriage == carriage)
            .collect();
        let grid: Vec<f64> = cells.iter().map(|x| x.distance).collect();
        let build = |interval| -> Result<(WindowPopulation, f64), EvalError> {
            let w = grid_weights(&grid, density, interval, cfg.max_gap)?;
            let mass: f64 = w.iter().map(|(_, x)| x).sum();
            let pop = WindowPopulation::new(
                w.into_iter()
                    .map(|(i, x)| (x, cells[i].stratified()))
                    .collect(),
            )?;
            Ok((pop, mass))
        };
        if cells.is_empty() {
            return Err(EvalError::Coverage(format!(
                "bank has no cells for {carriage}"
            )));
        }
        let (near, near_mass) = build(cfg.near())?;
        let (far, far_mass) = build(cfg.far())?;
        Ok(Self {
            carriage,
            near,
            far,
            masses: Some((near_mass, far_mass)),
        })
    }

    pub fn support(&self) -> (i32, i32) {
        let (a, b) = self.near.support();
        let (c, d) = self.far.support();
        (a.min(c), b.max(d))
    }

    /// P_D and P_FA for every threshold in `taus` and every m.
    pub fn table(&self, looks: &Looks, taus: (i32, i32)) -> OperatingTable {
        let rows: Vec<Vec<(f64, f64)>> = (taus.0..=taus.1)
            .into_par_iter()
            .map(|tau| {
                let pd = self.near.detection_probs(tau, looks);
                let pfa = self.far.detection_probs(tau, looks);
                pd.into_iter().zip(pfa).collect()
            })
            .collect();
        OperatingTable::from_rows(self.carriage, taus.0, looks.total(), rows)
    }
}

/// Threshold grid covering every state: from the lowest support bin (all
/// looks exceed) to one above the highest (none do).
pub fn common_thresholds(states: &[StateModel]) -> (i32, i32) {
    let lo = states.iter().map(|s| s.support().0).min().unwrap_or(0);
    let hi = states.iter().map(|s| s.support().1).max().unwrap_or(0);
    (lo, hi + 1)
}

fn check_detector(det: &MofNDetector, looks: &Looks) -> Result<(), EvalError> {
    crate::detectors::check_m_n(det.m, det.n)?;
    if det.n != looks.total() {
        return Err(EvalError::Parameter(format!(
            "detector expects n={} looks but the sampling model records {}",
            det.n,
            looks.total()
        )));
    }
    Ok(())
}

/// P_D of `det` for windows at separation `s` in state `c`.
pub fn pd_at_range(
    det: &MofNDetector,
    bank: &ConditionalPdfBank,
    s: f64,
    c: CarriagePair,
    looks: &Looks,
) -> Result<f64, EvalError> {
    check_detector(det, looks)?;
    let cell = bank.cell(s, c)?;
    let threshold = det.effective_threshold(c)?;
    Ok(window_detection_probs(&cell.stratified(), threshold, looks)[det.m as usize - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub p: f64,
    pub std_err: f64,
    pub trials: u64,
}

/// Monte Carlo P_D by simulating windows and running the detector on each.
pub fn pd_at_range_monte_carlo(
    det: &MofNDetector,
    bank: &ConditionalPdfBank,
    s: f64,
    c: CarriagePair,
    looks: &Looks,
    trials: u64,
    seed: u64,
) -> Result<McEstimate, EvalError> {
    check_detector(det, looks)?;
    if trials == 0 {
        return Err(EvalError::Parameter("need at least one trial".into()));
    }
    det.effective_threshold(c)?;
    let sampler = StratifiedSampler::new(&bank.cell(s, c)?.stratified());
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(window_seed(seed, i));
            let window: Vec<(i32, CarriagePair)> = sampler
                .window(looks, &mut rng)
                .into_iter()
                .map(|x| (x, c))
                .collect();
            match det.decide(&window) {
                Ok(d) if d.verdict == Verdict::TooCloseTooLong => 1u64,
                _ => 0,
            }
        })
        .sum();
    let p = hits as f64 / trials as f64;
    Ok(McEstimate {
        p,
        std_err: (p * (1.0 - p) / trials as f64).sqrt(),
        trials,
    })
}

/// Unscaled ∫ D(s)·P_D(s) ds over `interval` (trapezoidal on the bank grid).
pub fn expected_contacts(
    det: &MofNDetector,
    bank: &ConditionalPdfBank,
    density: &ContactDensity,
    c: CarriagePair,
    interval: crate::densities::DistanceInterval,
    max_gap: f64,
    looks: &Looks,
) -> Result<f64, EvalError> {
    check_detector(det, looks)?;
    let cells: Vec<_> = bank.cells().iter().filter(|x| x.carriage == c).collect();
    if cells.is_empty() {
        return Err(EvalError::Coverage(format!("bank has no cells for {c}")));
    }
    let grid: Vec<f64> = cells.iter().map(|x| x.distance).collect();
    let threshold = det.effective_threshold(c)?;
    let mut total = 0.0;
    for (i, w) in grid_weights(&grid, density, interval, max_gap)? {
        total += w * window_detection_probs(&cells[i].stratified(), threshold, looks)
            [det.m as usize - 1];
    }
    Ok(total)
}
