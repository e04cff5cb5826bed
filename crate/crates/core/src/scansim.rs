//! Advertisement/scan timing of the exposure-notification receiver and the
//! per-scan recording policies.
//!
//! A window is `scans_per_window` scans. Each scan hears
//! `floor(chirp_rate × scan_duration)` chirps. With within-scan correlation all
//! chirps of a scan are drawn from one pose stratum of the (s, c) cell; strata
//! are redrawn independently for every scan.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densities::{ConditionalPdfBank, DensityError, EmpiricalPdf, StratifiedPdf};
use crate::measurements::{CarriagePair, SENSITIVITY_FLOOR_DBM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScanError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error(transparent)]
    Density(#[from] DensityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanModel {
    pub chirp_rate_hz: f64,
    pub scan_interval_s: f64,
    pub scan_duration_s: f64,
    pub scans_per_window: u32,
    pub window_s: f64,
}

impl Default for ScanModel {
    fn default() -> Self {
        Self {
            chirp_rate_hz: 4.0,
            scan_interval_s: 300.0,
            scan_duration_s: 4.0,
            scans_per_window: 6,
            window_s: 900.0,
        }
    }
}

impl ScanModel {
    pub fn validate(&self) -> Result<(), ScanError> {
        if !(self.scan_duration_s > 0.0 && self.scan_duration_s < self.scan_interval_s) {
            return Err(ScanError::Parameter(format!(
                "scan duration {} s must be positive and shorter than the scan interval {} s",
                self.scan_duration_s, self.scan_interval_s
            )));
        }
        if !(self.chirp_rate_hz * self.scan_duration_s >= 1.0) {
            return Err(ScanError::Parameter(
                "a scan must span at least one chirp".into(),
            ));
        }
        if self.scans_per_window == 0 {
            return Err(ScanError::Parameter(
                "scans_per_window must be at least 1".into(),
            ));
        }
        if !(self.window_s > 0.0) {
            return Err(ScanError::Parameter("window must be positive".into()));
        }
        Ok(())
    }

    pub fn chirps_per_scan(&self) -> u32 {
        (self.chirp_rate_hz * self.scan_duration_s).floor() as u32
    }

    pub fn with_scans(self, scans: u32) -> Self {
        Self {
            scans_per_window: scans,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordingPolicy {
    /// Only the first chirp heard in a scan.
    #[default]
    FirstChirp,
    /// The first `samples_per_scan` chirps heard in a scan.
    AllChirps,
    /// The strongest chirp (minimum attenuation) of the scan.
    MinAttenuation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    Independent,
    #[default]
    WithinScanCorrelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingModel {
    pub policy: RecordingPolicy,
    /// Chirps recorded per scan under `AllChirps`.
    pub samples_per_scan: u32,
    pub correlation: Correlation,
}

impl Default for SamplingModel {
    fn default() -> Self {
        Self {
            policy: RecordingPolicy::FirstChirp,
            samples_per_scan: 4,
            correlation: Correlation::WithinScanCorrelated,
        }
    }
}

impl SamplingModel {
    /// One independent look per scan.
    pub fn independent() -> Self {
        Self {
            policy: RecordingPolicy::FirstChirp,
            samples_per_scan: 1,
            correlation: Correlation::Independent,
        }
    }

    /// `per_scan` correlated chirps recorded in every scan.
    pub fn correlated(per_scan: u32) -> Self {
        Self {
            policy: RecordingPolicy::AllChirps,
            samples_per_scan: per_scan,
            correlation: Correlation::WithinScanCorrelated,
        }
    }

    pub fn recorded_per_scan(&self) -> u32 {
        match self.policy {
            RecordingPolicy::FirstChirp | RecordingPolicy::MinAttenuation => 1,
            RecordingPolicy::AllChirps => self.samples_per_scan,
        }
    }

    pub fn validate(&self, model: &ScanModel) -> Result<(), ScanError> {
        if self.samples_per_scan == 0 {
            return Err(ScanError::Parameter(
                "samples_per_scan must be at least 1".into(),
            ));
        }
        if self.policy == RecordingPolicy::AllChirps
            && self.samples_per_scan > model.chirps_per_scan()
        {
            return Err(ScanError::Parameter(format!(
                "cannot record {} chirps per scan; only {} are heard",
                self.samples_per_scan,
                model.chirps_per_scan()
            )));
        }
        Ok(())
    }
}

/// The look structure a detector sees in one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Looks {
    pub scans: u32,
    pub chirps_per_scan: u32,
    pub sampling: SamplingModel,
}

impl Looks {
    pub fn new(model: &ScanModel, sampling: SamplingModel) -> Result<Self, ScanError> {
        model.validate()?;
        sampling.validate(model)?;
        Ok(Self {
            scans: model.scans_per_window,
            chirps_per_scan: model.chirps_per_scan(),
            sampling,
        })
    }

    /// `n` independent single looks.
    pub fn independent(n: u32) -> Self {
        Self {
            scans: n,
            chirps_per_scan: ScanModel::default().chirps_per_scan(),
            sampling: SamplingModel::independent(),
        }
    }

    /// Total recorded values per window (the detector's N).
    pub fn total(&self) -> u32 {
        self.scans * self.sampling.recorded_per_scan()
    }
}

/// Draws integer-dB values from a stratified distribution.
pub(crate) struct StratifiedSampler {
    strata: WeightedIndex<f64>,
    pooled: WeightedIndex<f64>,
    components: Vec<(i32, WeightedIndex<f64>)>,
    pooled_min: i32,
}

impl StratifiedSampler {
    pub(crate) fn new(pdf: &StratifiedPdf) -> Self {
        let index = |p: &EmpiricalPdf| {
            WeightedIndex::new(p.probabilities().iter().copied()).expect("normalized pdf")
        };
        let pooled = pdf.pooled();
        Self {
            strata: WeightedIndex::new(pdf.components().iter().map(|c| c.weight))
                .expect("validated weights"),
            pooled: index(&pooled),
            pooled_min: pooled.support_min(),
            components: pdf
                .components()
                .iter()
                .map(|c| (c.pdf.support_min(), index(&c.pdf)))
                .collect(),
        }
    }

    pub(crate) fn window<R: Rng>(&self, looks: &Looks, rng: &mut R) -> Vec<i32> {
        let mut out = Vec::with_capacity(looks.total() as usize);
        let heard = looks.chirps_per_scan.max(1) as usize;
        let mut chirps = Vec::with_capacity(heard);
        for _ in 0..looks.scans {
            chirps.clear();
            match looks.sampling.correlation {
                Correlation::WithinScanCorrelated => {
                    let (lo, dist) = &self.components[self.strata.sample(rng)];
                    chirps.extend((0..heard).map(|_| lo + dist.sample(rng) as i32));
                }
                Correlation::Independent => {
                    chirps.extend(
                        (0..heard).map(|_| self.pooled_min + self.pooled.sample(rng) as i32),
                    );
                }
            }
            match looks.sampling.policy {
                RecordingPolicy::FirstChirp => out.push(chirps[0]),
                RecordingPolicy::MinAttenuation => {
                    out.push(*chirps.iter().max().expect("at least one chirp"))
                }
                RecordingPolicy::AllChirps => {
                    out.extend_from_slice(&chirps[..looks.sampling.samples_per_scan as usize])
                }
            }
        }
        out
    }
}

/// Seed for window `index` of a run seeded with `seed` (splitmix64 finalizer).
pub fn window_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Values recorded in one window at separation `s` in state `c`, before censoring.
pub fn simulate_window(
    model: &ScanModel,
    sampling: &SamplingModel,
    bank: &ConditionalPdfBank,
    s: f64,
    c: CarriagePair,
    seed: u64,
) -> Result<Vec<i32>, ScanError> {
    let looks = Looks::new(model, *sampling)?;
    let sampler = StratifiedSampler::new(&bank.cell(s, c)?.stratified());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.window(&looks, &mut rng))
}

/// `count` windows with per-window seeds derived from `seed`; identical for any thread count.
pub fn simulate_windows(
    model: &ScanModel,
    sampling: &SamplingModel,
    bank: &ConditionalPdfBank,
    s: f64,
    c: CarriagePair,
    seed: u64,
    count: usize,
) -> Result<Vec<Vec<i32>>, ScanError> {
    let looks = Looks::new(model, *sampling)?;
    let sampler = StratifiedSampler::new(&bank.cell(s, c)?.stratified());
    Ok((0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(window_seed(seed, i));
            sampler.window(&looks, &mut rng)
        })
        .collect())
}

/// Removes values the receiver could not have decoded.
pub fn censor_sensitivity(values: &[i32], floor: i32) -> Vec<i32> {
    values.iter().copied().filter(|&v| v >= floor).collect()
}

/// [`censor_sensitivity`] at the default −100 dBm floor.
pub fn censor_default(values: &[i32]) -> Vec<i32> {
    censor_sensitivity(values, SENSITIVITY_FLOOR_DBM)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{BankCell, PoseStratum, StratumPdf};
    use crate::measurements::{CarriageState, Holding, PoseAngle, Posture};

    fn pair() -> CarriagePair {
        let s = CarriageState::new(Posture::Sitting, Holding::Hand);
        CarriagePair::new(s, s)
    }

    fn point_bank() -> ConditionalPdfBank {
        ConditionalPdfBank::from_pdfs(vec![(3.0, pair(), EmpiricalPdf::point_mass(-64))]).unwrap()
    }

    /// Two strata 20 dB apart, each with a few dB of spread.
    pub(crate) fn two_stratum_bank() -> ConditionalPdfBank {
        let spread = |center: i32| {
            EmpiricalPdf::from_weights(center - 2, vec![1.0, 2.0, 3.0, 2.0, 1.0], 9).unwrap()
        };
        let stratum = |deg: i64, center: i32| StratumPdf {
            pose: PoseStratum {
                user1: PoseAngle::new(deg).unwrap(),
                user2: PoseAngle::ZERO,
            },
            weight: 0.5,
            pdf: spread(center),
        };
        let strata = vec![stratum(0, -55), stratum(180, -75)];
        let pdf = EmpiricalPdf::mixture(strata.iter().map(|s| (s.weight, &s.pdf))).unwrap();
        ConditionalPdfBank::from_cells(vec![BankCell {
            distance: 3.0,
            carriage: pair(),
            pdf,
            strata,
        }])
        .unwrap()
    }

    #[test]
    fn model_validation() {
        assert!(ScanModel::default().validate().is_ok());
        assert_eq!(ScanModel::default().chirps_per_scan(), 16);
        let bad = ScanModel {
            scan_duration_s: 400.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let too_many = SamplingModel::correlated(17);
        assert!(too_many.validate(&ScanModel::default()).is_err());
    }

    #[test]
    fn point_mass_is_policy_independent() {
        for policy in [
            RecordingPolicy::FirstChirp,
            RecordingPolicy::AllChirps,
            RecordingPolicy::MinAttenuation,
        ] {
            let sampling = SamplingModel {
                policy,
                ..Default::default()
            };
            let v = simulate_window(
                &ScanModel::default(),
                &sampling,
                &point_bank(),
                3.0,
                pair(),
                1,
            )
            .unwrap();
            assert!(v.iter().all(|&x| x == -64));
        }
    }

    #[test]
    fn cardinality() {
        let bank = two_stratum_bank();
        let first = simulate_window(
            &ScanModel::default(),
            &SamplingModel::default(),
            &bank,
            3.0,
            pair(),
            9,
        )
        .unwrap();
        assert_eq!(first.len(), 6);
        let all = simulate_window(
            &ScanModel::default(),
            &SamplingModel::correlated(4),
            &bank,
            3.0,
            pair(),
            9,
        )
        .unwrap();
        assert_eq!(all.len(), 24);
        let min = SamplingModel {
            policy: RecordingPolicy::MinAttenuation,
            ..Default::default()
        };
        assert_eq!(
            simulate_window(&ScanModel::default(), &min, &bank, 3.0, pair(), 9)
                .unwrap()
                .len(),
            6
        );
    }

    #[test]
    fn min_attenuation_is_scan_maximum() {
        let bank = two_stratum_bank();
        let looks = Looks::new(&ScanModel::default(), SamplingModel::correlated(16)).unwrap();
        let min_looks = Looks::new(
            &ScanModel::default(),
            SamplingModel {
                policy: RecordingPolicy::MinAttenuation,
                ..Default::default()
            },
        )
        .unwrap();
        let sampler = StratifiedSampler::new(&bank.cell(3.0, pair()).unwrap().stratified());
        let all = sampler.window(&looks, &mut ChaCha8Rng::seed_from_u64(5));
        let maxes = sampler.window(&min_looks, &mut ChaCha8Rng::seed_from_u64(5));
        let expected: Vec<i32> = all.chunks(16).map(|c| *c.iter().max().unwrap()).collect();
        assert_eq!(maxes, expected);
    }

    #[test]
    fn missing_cell_is_error() {
        let err = simulate_window(
            &ScanModel::default(),
            &SamplingModel::default(),
            &point_bank(),
            4.0,
            pair(),
            1,
        );
        assert!(matches!(
            err,
            Err(ScanError::Density(DensityError::Coverage(_)))
        ));
    }

    #[test]
    fn deterministic_across_threads() {
        let bank = two_stratum_bank();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    simulate_windows(
                        &ScanModel::default(),
                        &SamplingModel::correlated(4),
                        &bank,
                        3.0,
                        pair(),
                        77,
                        500,
                    )
                    .unwrap()
                })
        };
        assert_eq!(run(1), run(8));
    }

    #[test]
    fn censoring() {
        assert_eq!(censor_default(&[-95, -100, -60]), vec![-95, -100, -60]);
        assert!(censor_default(&[-101, -120]).is_empty());
        assert_eq!(censor_sensitivity(&[-95, -105], -100), vec![-95]);
    }
}
