//! Conditional RSSI distributions p(x | s, c) and the contact-density-weighted
//! hypothesis mixtures built from them.
//!
//! Everything lives on the 1-dB RSSI grid. Distance integrals use the
//! trapezoidal rule on the measured range grid; the integrand is held constant
//! from an interval end to the nearest grid point inside the interval.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measurements::{
    distinct_distances, CarriagePair, Dataset, PoseAngle, DEFAULT_REFERENCE_TX_DBM,
    DISTANCE_EPS_FT, MAX_BLE_RANGE_FT, SENSITIVITY_FLOOR_DBM,
};

/// Tolerance on Σp = 1.
pub const NORMALIZATION_TOL: f64 = 1e-9;

pub const DEFAULT_BOUNDARY_FT: f64 = 6.0;
pub const DEFAULT_MAX_GAP_FT: f64 = 5.0;
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("invalid distribution: {0}")]
    Invalid(String),
    #[error("no samples for distance {distance} ft, carriage {carriage}")]
    EmptyCell {
        distance: f64,
        carriage: CarriagePair,
    },
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parameter error: {0}")]
    Parameter(String),
}

/// Probability mass on consecutive 1-dB RSSI bins starting at `support_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPdf")]
pub struct EmpiricalPdf {
    support_min: i32,
    probabilities: Vec<f64>,
    sample_count: usize,
}

#[derive(Deserialize)]
struct RawPdf {
    support_min: i32,
    probabilities: Vec<f64>,
    #[serde(default)]
    sample_count: usize,
}

impl TryFrom<RawPdf> for EmpiricalPdf {
    type Error = DensityError;

    fn try_from(raw: RawPdf) -> Result<Self, Self::Error> {
        EmpiricalPdf::new(raw.support_min, raw.probabilities, raw.sample_count)
    }
}

impl EmpiricalPdf {
    pub fn new(
        support_min: i32,
        probabilities: Vec<f64>,
        sample_count: usize,
    ) -> Result<Self, DensityError> {
        if probabilities.is_empty() {
            return Err(DensityError::Invalid("empty support".into()));
        }
        if let Some(p) = probabilities.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(DensityError::Invalid(format!("bad probability {p}")));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(DensityError::Invalid(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(Self {
            support_min,
            probabilities,
            sample_count,
        })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(
        support_min: i32,
        weights: Vec<f64>,
        sample_count: usize,
    ) -> Result<Self, DensityError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(DensityError::Invalid(format!("weights sum to {total}")));
        }
        Self::new(
            support_min,
            weights.into_iter().map(|w| w / total).collect(),
            sample_count,
        )
    }

    pub fn point_mass(x: i32) -> Self {
        Self {
            support_min: x,
            probabilities: vec![1.0],
            sample_count: 1,
        }
    }

    /// Histogram of integer-dB values.
    pub fn from_samples(values: &[i32]) -> Result<Self, DensityError> {
        let lo = *values
            .iter()
            .min()
            .ok_or_else(|| DensityError::Invalid("no samples".into()))?;
        let hi = *values.iter().max().expect("non-empty");
        let mut counts = vec![0.0; (hi - lo + 1) as usize];
        for &v in values {
            counts[(v - lo) as usize] += 1.0;
        }
        Self::from_weights(lo, counts, values.len())
    }

    pub fn support_min(&self) -> i32 {
        self.support_min
    }

    pub fn support_max(&self) -> i32 {
        self.support_min + self.probabilities.len() as i32 - 1
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Mass at `x`; zero outside the support.
    pub fn prob(&self, x: i32) -> f64 {
        let i = x - self.support_min;
        if i < 0 {
            0.0
        } else {
            self.probabilities.get(i as usize).copied().unwrap_or(0.0)
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.probabilities
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.support_min + i as i32, p))
    }

    /// P(X ≥ tau).
    pub fn tail_mass(&self, tau: i32) -> f64 {
        let start = (tau - self.support_min).max(0) as usize;
        if start >= self.probabilities.len() {
            return 0.0;
        }
        let tail: f64 = self.probabilities[start..].iter().sum();
        tail.min(1.0)
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(x, p)| x as f64 * p).sum()
    }

    /// Smallest x with P(X ≤ x) ≥ 1/2.
    pub fn median(&self) -> i32 {
        let mut acc = 0.0;
        for (x, p) in self.iter() {
            acc += p;
            if acc >= 0.5 - 1e-12 {
                return x;
            }
        }
        self.support_max()
    }

    /// The distribution of X + delta.
    pub fn shifted(&self, delta: i32) -> Self {
        Self {
            support_min: self.support_min + delta,
            ..self.clone()
        }
    }

    /// Zero-pads to cover [lo, hi] (the existing support is always kept).
    pub fn with_support(&self, lo: i32, hi: i32) -> Self {
        let lo = lo.min(self.support_min);
        let hi = hi.max(self.support_max());
        let mut probabilities = vec![0.0; (hi - lo + 1) as usize];
        let off = (self.support_min - lo) as usize;
        probabilities[off..off + self.probabilities.len()].copy_from_slice(&self.probabilities);
        Self {
            support_min: lo,
            probabilities,
            sample_count: self.sample_count,
        }
    }

    /// Adds `epsilon` to every bin and renormalizes.
    pub fn smoothed(&self, epsilon: f64) -> Self {
        if epsilon <= 0.0 {
            return self.clone();
        }
        let total = 1.0 + epsilon * self.probabilities.len() as f64;
        Self {
            probabilities: self
                .probabilities
                .iter()
                .map(|p| (p + epsilon) / total)
                .collect(),
            ..self.clone()
        }
    }

    /// Weighted mixture; weights need not be normalized.
    pub fn mixture<'a>(
        parts: impl IntoIterator<Item = (f64, &'a EmpiricalPdf)>,
    ) -> Result<Self, DensityError> {
        let parts: Vec<(f64, &EmpiricalPdf)> =
            parts.into_iter().filter(|(w, _)| *w > 0.0).collect();
        if parts.is_empty() {
            return Err(DensityError::Invalid(
                "mixture has no positive weight".into(),
            ));
        }
        let lo = parts
            .iter()
            .map(|(_, p)| p.support_min)
            .min()
            .expect("non-empty");
        let hi = parts
            .iter()
            .map(|(_, p)| p.support_max())
            .max()
            .expect("non-empty");
        let mut acc = vec![0.0; (hi - lo + 1) as usize];
        let mut count = 0;
        for (w, pdf) in &parts {
            count += pdf.sample_count;
            for (x, p) in pdf.iter() {
                acc[(x - lo) as usize] += w * p;
            }
        }
        Self::from_weights(lo, acc, count)
    }
}

/// Pose-angle pair of the two carriers; the unit of within-scan correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PoseStratum {
    pub user1: PoseAngle,
    pub user2: PoseAngle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPdf {
    pub weight: f64,
    pub pdf: EmpiricalPdf,
}

/// A mixture kept as its components, so that draws can be conditioned on a
/// single component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedPdf {
    components: Vec<WeightedPdf>,
}

impl StratifiedPdf {
    /// Normalizes weights and drops zero-weight components.
    pub fn new(components: Vec<WeightedPdf>) -> Result<Self, DensityError> {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total > 0.0)
            || components
                .iter()
                .any(|c| c.weight < 0.0 || !c.weight.is_finite())
        {
            return Err(DensityError::Invalid(
                "stratum weights must be non-negative with positive sum".into(),
            ));
        }
        Ok(Self {
            components: components
                .into_iter()
                .filter(|c| c.weight > 0.0)
                .map(|c| WeightedPdf {
                    weight: c.weight / total,
                    pdf: c.pdf,
                })
                .collect(),
        })
    }

    pub fn single(pdf: EmpiricalPdf) -> Self {
        Self {
            components: vec![WeightedPdf { weight: 1.0, pdf }],
        }
    }

    pub fn components(&self) -> &[WeightedPdf] {
        &self.components
    }

    pub fn pooled(&self) -> EmpiricalPdf {
        EmpiricalPdf::mixture(self.components.iter().map(|c| (c.weight, &c.pdf)))
            .expect("weights validated")
    }

    pub fn support(&self) -> (i32, i32) {
        let lo = self
            .components
            .iter()
            .map(|c| c.pdf.support_min())
            .min()
            .unwrap_or(0);
        let hi = self
            .components
            .iter()
            .map(|c| c.pdf.support_max())
            .max()
            .unwrap_or(0);
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateOptions {
    /// Minimum support [lo, hi]; widened to cover the data.
    pub support: (i32, i32),
    /// Added to every bin before renormalizing; 0 disables.
    pub epsilon: f64,
    pub include_synthetic: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            support: (SENSITIVITY_FLOOR_DBM, DEFAULT_REFERENCE_TX_DBM),
            epsilon: DEFAULT_EPSILON,
            include_synthetic: true,
        }
    }
}

fn matching<'a>(
    d: &'a Dataset,
    s: f64,
    c: CarriagePair,
    opts: &'a EstimateOptions,
) -> impl Iterator<Item = &'a crate::measurements::RssiSample> + 'a {
    d.samples.iter().filter(move |x| {
        x.carriage == c && x.at_distance(s) && (opts.include_synthetic || !x.synthetic)
    })
}

fn histogram(
    values: impl Iterator<Item = i32>,
    lo: i32,
    hi: i32,
    epsilon: f64,
) -> Result<EmpiricalPdf, DensityError> {
    let mut counts = vec![0.0; (hi - lo + 1) as usize];
    let mut n = 0usize;
    for v in values {
        counts[(v - lo) as usize] += 1.0;
        n += 1;
    }
    Ok(EmpiricalPdf::from_weights(lo, counts, n)?.smoothed(epsilon))
}

/// Histogram estimate of p(x | s, c).
pub fn estimate_pdf(
    d: &Dataset,
    s: f64,
    c: CarriagePair,
    opts: &EstimateOptions,
) -> Result<EmpiricalPdf, DensityError> {
    let values: Vec<i32> = matching(d, s, c, opts).map(|x| x.rssi).collect();
    if values.is_empty() {
        return Err(DensityError::EmptyCell {
            distance: s,
            carriage: c,
        });
    }
    let lo = opts.support.0.min(*values.iter().min().expect("non-empty"));
    let hi = opts.support.1.max(*values.iter().max().expect("non-empty"));
    histogram(values.into_iter(), lo, hi, opts.epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumPdf {
    pub pose: PoseStratum,
    pub weight: f64,
    pub pdf: EmpiricalPdf,
}

/// One (distance, carriage) cell of a bank: pooled distribution plus its
/// per-pose-stratum components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankCell {
    pub distance: f64,
    pub carriage: CarriagePair,
    pub pdf: EmpiricalPdf,
    pub strata: Vec<StratumPdf>,
}

impl BankCell {
    pub fn stratified(&self) -> StratifiedPdf {
        if self.strata.is_empty() {
            return StratifiedPdf::single(self.pdf.clone());
        }
        StratifiedPdf::new(
            self.strata
                .iter()
                .map(|s| WeightedPdf {
                    weight: s.weight,
                    pdf: s.pdf.clone(),
                })
                .collect(),
        )
        .expect("bank strata weights are validated at estimation")
    }
}

/// p(x | s, c) for every measured (s, c), on a common RSSI support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPdfBank {
    pub support_min: i32,
    pub support_max: i32,
    cells: Vec<BankCell>,
}

impl ConditionalPdfBank {
    /// Estimates every (distance, carriage) cell present in the dataset.
    pub fn estimate(d: &Dataset, opts: &EstimateOptions) -> Result<Self, DensityError> {
        use rayon::prelude::*;

        let used: Vec<_> = d
            .samples
            .iter()
            .filter(|x| opts.include_synthetic || !x.synthetic)
            .collect();
        if used.is_empty() {
            return Err(DensityError::Invalid(
                "dataset has no usable samples".into(),
            ));
        }
        let lo = opts
            .support
            .0
            .min(used.iter().map(|x| x.rssi).min().expect("non-empty"));
        let hi = opts
            .support
            .1
            .max(used.iter().map(|x| x.rssi).max().expect("non-empty"));

        let mut keys = Vec::new();
        for c in d.carriage_pairs() {
            let distances =
                distinct_distances(used.iter().filter(|x| x.carriage == c).map(|x| x.distance));
            keys.extend(distances.into_iter().map(|s| (c, s)));
        }
        let cells = keys
            .par_iter()
            .map(|&(c, s)| {
                let mut by_pose: BTreeMap<PoseStratum, Vec<i32>> = BTreeMap::new();
                for x in matching(d, s, c, opts) {
                    by_pose
                        .entry(PoseStratum {
                            user1: x.pose_user1,
                            user2: x.pose_user2,
                        })
                        .or_default()
                        .push(x.rssi);
                }
                let total: usize = by_pose.values().map(Vec::len).sum();
                let pdf = histogram(
                    matching(d, s, c, opts).map(|x| x.rssi),
                    lo,
                    hi,
                    opts.epsilon,
                )?;
                let strata = by_pose
                    .into_iter()
                    .map(|(pose, values)| {
                        Ok(StratumPdf {
                            pose,
                            weight: values.len() as f64 / total as f64,
                            pdf: histogram(values.into_iter(), lo, hi, opts.epsilon)?,
                        })
                    })
                    .collect::<Result<Vec<_>, DensityError>>()?;
                Ok(BankCell {
                    distance: s,
                    carriage: c,
                    pdf,
                    strata,
                })
            })
            .collect::<Result<Vec<_>, DensityError>>()?;
        Ok(Self {
            support_min: lo,
            support_max: hi,
            cells,
        })
    }

    /// Builds a bank from explicit cells (no strata), padding every PDF to a common support.
    pub fn from_pdfs(
        entries: Vec<(f64, CarriagePair, EmpiricalPdf)>,
    ) -> Result<Self, DensityError> {
        Self::from_cells(
            entries
                .into_iter()
                .map(|(distance, carriage, pdf)| BankCell {
                    distance,
                    carriage,
                    pdf,
                    strata: Vec::new(),
                })
                .collect(),
        )
    }

    pub fn from_cells(mut cells: Vec<BankCell>) -> Result<Self, DensityError> {
        if cells.is_empty() {
            return Err(DensityError::Invalid("empty bank".into()));
        }
        let mut lo = i32::MAX;
        let mut hi = i32::MIN;
        for cell in &cells {
            if !(cell.distance >= 0.0) {
                return Err(DensityError::Domain(format!(
                    "negative distance {}",
                    cell.distance
                )));
            }
            lo = lo.min(cell.pdf.support_min());
            hi = hi.max(cell.pdf.support_max());
            for s in &cell.strata {
                lo = lo.min(s.pdf.support_min());
                hi = hi.max(s.pdf.support_max());
            }
        }
        for cell in &mut cells {
            cell.pdf = cell.pdf.with_support(lo, hi);
            for s in &mut cell.strata {
                s.pdf = s.pdf.with_support(lo, hi);
            }
            if !cell.strata.is_empty() {
                let total: f64 = cell.strata.iter().map(|s| s.weight).sum();
                if !(total > 0.0) {
                    return Err(DensityError::Invalid(
                        "stratum weights must sum to a positive value".into(),
                    ));
                }
                for s in &mut cell.strata {
                    s.weight /= total;
                }
            }
        }
        cells.sort_by(|a, b| {
            a.carriage
                .cmp(&b.carriage)
                .then(a.distance.total_cmp(&b.distance))
        });
        for w in cells.windows(2) {
            if w[0].carriage == w[1].carriage
                && (w[0].distance - w[1].distance).abs() < DISTANCE_EPS_FT
            {
                return Err(DensityError::Invalid(format!(
                    "duplicate cell ({} ft, {})",
                    w[0].distance, w[0].carriage
                )));
            }
        }
        Ok(Self {
            support_min: lo,
            support_max: hi,
            cells,
        })
    }

    pub fn cells(&self) -> &[BankCell] {
        &self.cells
    }

    pub fn carriage_pairs(&self) -> Vec<CarriagePair> {
        let mut v: Vec<_> = self.cells.iter().map(|c| c.carriage).collect();
        v.dedup();
        v
    }

    /// Ascending distance grid for one carriage pair.
    pub fn grid(&self, c: CarriagePair) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|x| x.carriage == c)
            .map(|x| x.distance)
            .collect()
    }

    pub fn cell(&self, s: f64, c: CarriagePair) -> Result<&BankCell, DensityError> {
        self.cells
            .iter()
            .find(|x| x.carriage == c && (x.distance - s).abs() < DISTANCE_EPS_FT)
            .ok_or_else(|| DensityError::Coverage(format!("bank has no cell at {s} ft for {c}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bank serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DensityError> {
        let raw: ConditionalPdfBank = serde_json::from_str(text)
            .map_err(|e| DensityError::Invalid(format!("bank JSON: {e}")))?;
        Self::from_cells(raw.cells)
    }
}

/// D(s) for contacts spread uniformly over the plane: proportional to s.
pub fn uniform_area_density(s: f64) -> Result<f64, DensityError> {
    if s < 0.0 || !s.is_finite() {
        return Err(DensityError::Domain(format!(
            "separation {s} ft must be non-negative"
        )));
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    #[default]
    UniformArea,
    Custom,
}

/// Physical density of potential contacts versus separation, D(s).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactDensity {
    pub kind: DensityKind,
    /// (s, D(s)) knots for `Custom`, linearly interpolated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(f64, f64)>>,
}

impl ContactDensity {
    pub fn uniform_area() -> Self {
        Self::default()
    }

    pub fn custom(mut table: Vec<(f64, f64)>) -> Result<Self, DensityError> {
        if table.is_empty() {
            return Err(DensityError::Parameter(
                "custom density needs at least one knot".into(),
            ));
        }
        if table.iter().any(|&(s, d)| !(d >= 0.0) || !s.is_finite()) {
            return Err(DensityError::Parameter(
                "custom density values must be finite and non-negative".into(),
            ));
        }
        table.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            kind: DensityKind::Custom,
            table: Some(table),
        })
    }

    pub fn eval(&self, s: f64) -> Result<f64, DensityError> {
        match self.kind {
            DensityKind::UniformArea => uniform_area_density(s),
            DensityKind::Custom => {
                let table = self.table.as_deref().ok_or_else(|| {
                    DensityError::Parameter("custom density without table".into())
                })?;
                let first = table.first().expect("validated non-empty");
                let last = table.last().expect("validated non-empty");
                if table.len() == 1 {
                    return Ok(first.1);
                }
                if s < first.0 - DISTANCE_EPS_FT || s > last.0 + DISTANCE_EPS_FT {
                    return Err(DensityError::Domain(format!(
                        "separation {s} ft outside density table [{}, {}]",
                        first.0, last.0
                    )));
                }
                let s = s.clamp(first.0, last.0);
                let k = table
                    .partition_point(|&(x, _)| x <= s)
                    .clamp(1, table.len() - 1);
                let (x0, y0) = table[k - 1];
                let (x1, y1) = table[k];
                if x1 - x0 <= 0.0 {
                    return Ok(y1);
                }
                Ok(y0 + (y1 - y0) * (s - x0) / (x1 - x0))
            }
        }
    }
}

/// Separation interval; grid points at `lo` belong to it only when `lo_inclusive`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceInterval {
    pub lo: f64,
    pub hi: f64,
    pub lo_inclusive: bool,
}

impl DistanceInterval {
    /// [0, boundary]: too close.
    pub fn near(boundary: f64) -> Self {
        Self {
            lo: 0.0,
            hi: boundary,
            lo_inclusive: true,
        }
    }

    /// (boundary, max_range]: too far; the boundary grid point itself is near.
    pub fn far(boundary: f64, max_range: f64) -> Self {
        Self {
            lo: boundary,
            hi: max_range,
            lo_inclusive: false,
        }
    }

    fn contains(&self, s: f64) -> bool {
        let above_lo = if self.lo_inclusive {
            s >= self.lo - DISTANCE_EPS_FT
        } else {
            s > self.lo + DISTANCE_EPS_FT
        };
        above_lo && s <= self.hi + DISTANCE_EPS_FT
    }
}

/// Unnormalized trapezoidal weights W_g such that Σ_g W_g f(grid[g]) approximates
/// ∫ D(s) f(s) ds over `interval`, with f held constant beyond the outermost
/// grid points inside the interval. Returns (grid index, weight) pairs.
pub fn grid_weights(
    grid: &[f64],
    density: &ContactDensity,
    interval: DistanceInterval,
    max_gap: f64,
) -> Result<Vec<(usize, f64)>, DensityError> {
    if !(interval.lo < interval.hi) {
        return Err(DensityError::Parameter(format!(
            "empty interval [{}, {}]",
            interval.lo, interval.hi
        )));
    }
    let inside: Vec<usize> = (0..grid.len())
        .filter(|&i| interval.contains(grid[i]))
        .collect();
    let (&first, &last) = match (inside.first(), inside.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => {
            return Err(DensityError::Coverage(format!(
                "no grid points in [{}, {}] ft",
                interval.lo, interval.hi
            )))
        }
    };
    // (position, grid index supplying the integrand)
    let mut nodes: Vec<(f64, usize)> = Vec::with_capacity(inside.len() + 2);
    if grid[first] > interval.lo + DISTANCE_EPS_FT {
        nodes.push((interval.lo, first));
    }
    nodes.extend(inside.iter().map(|&i| (grid[i], i)));
    if grid[last] < interval.hi - DISTANCE_EPS_FT {
        nodes.push((interval.hi, last));
    }
    for w in nodes.windows(2) {
        let gap = w[1].0 - w[0].0;
        if gap > max_gap + DISTANCE_EPS_FT {
            return Err(DensityError::Coverage(format!(
                "grid gap of {gap} ft between {} and {} ft exceeds {max_gap} ft",
                w[0].0, w[1].0
            )));
        }
    }
    let mut weights: BTreeMap<usize, f64> = BTreeMap::new();
    let k = nodes.len();
    for j in 0..k {
        let left = if j > 0 {
            nodes[j].0 - nodes[j - 1].0
        } else {
            0.0
        };
        let right = if j + 1 < k {
            nodes[j + 1].0 - nodes[j].0
        } else {
            0.0
        };
        let h = 0.5 * (left + right);
        *weights.entry(nodes[j].1).or_insert(0.0) += h * density.eval(nodes[j].0)?;
    }
    Ok(weights.into_iter().collect())
}

/// ∫ D(s) ds over the interval on the same nodes as [`grid_weights`].
pub fn density_mass(
    grid: &[f64],
    density: &ContactDensity,
    interval: DistanceInterval,
    max_gap: f64,
) -> Result<f64, DensityError> {
    Ok(grid_weights(grid, density, interval, max_gap)?
        .iter()
        .map(|(_, w)| w)
        .sum())
}

fn cell_weights<'a>(
    bank: &'a ConditionalPdfBank,
    density: &ContactDensity,
    c: CarriagePair,
    interval: DistanceInterval,
    max_gap: f64,
) -> Result<Vec<(f64, &'a BankCell)>, DensityError> {
    let cells: Vec<&BankCell> = bank.cells.iter().filter(|x| x.carriage == c).collect();
    if cells.is_empty() {
        return Err(DensityError::Coverage(format!("bank has no cells for {c}")));
    }
    let grid: Vec<f64> = cells.iter().map(|x| x.distance).collect();
    let weights = grid_weights(&grid, density, interval, max_gap)?;
    if weights.iter().all(|(_, w)| *w <= 0.0) {
        return Err(DensityError::Coverage(format!(
            "contact density vanishes on [{}, {}] ft",
            interval.lo, interval.hi
        )));
    }
    Ok(weights.into_iter().map(|(i, w)| (w, cells[i])).collect())
}

/// Density-weighted mixture of p(x | s, c) over a separation interval,
/// renormalized to a distribution.
pub fn mixture_pdf(
    bank: &ConditionalPdfBank,
    density: &ContactDensity,
    c: CarriagePair,
    interval: DistanceInterval,
    max_gap: f64,
) -> Result<EmpiricalPdf, DensityError> {
    let parts = cell_weights(bank, density, c, interval, max_gap)?;
    EmpiricalPdf::mixture(parts.iter().map(|(w, cell)| (*w, &cell.pdf)))
}

/// Like [`mixture_pdf`] but keeps every (distance, pose stratum) component.
pub fn mixture_stratified(
    bank: &ConditionalPdfBank,
    density: &ContactDensity,
    c: CarriagePair,
    interval: DistanceInterval,
    max_gap: f64,
) -> Result<StratifiedPdf, DensityError> {
    let parts = cell_weights(bank, density, c, interval, max_gap)?;
    let mut components = Vec::new();
    for (w, cell) in parts {
        for comp in cell.stratified().components() {
            components.push(WeightedPdf {
                weight: w * comp.weight,
                pdf: comp.pdf.clone(),
            });
        }
    }
    StratifiedPdf::new(components)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HypothesisConfig {
    /// Largest separation that is still "too close", ft.
    pub boundary: f64,
    pub max_range: f64,
    /// Largest allowed spacing between integration nodes, ft.
    pub max_gap: f64,
}

impl Default for HypothesisConfig {
    fn default() -> Self {
        Self {
            boundary: DEFAULT_BOUNDARY_FT,
            max_range: MAX_BLE_RANGE_FT,
            max_gap: DEFAULT_MAX_GAP_FT,
        }
    }
}

impl HypothesisConfig {
    pub fn validate(&self) -> Result<(), DensityError> {
        if !(self.boundary > 0.0 && self.boundary < self.max_range) {
            return Err(DensityError::Parameter(format!(
                "boundary {} ft must lie in (0, max_range = {} ft)",
                self.boundary, self.max_range
            )));
        }
        if !(self.max_gap > 0.0) {
            return Err(DensityError::Parameter("max_gap must be positive".into()));
        }
        Ok(())
    }

    pub fn near(&self) -> DistanceInterval {
        DistanceInterval::near(self.boundary)
    }

    pub fn far(&self) -> DistanceInterval {
        DistanceInterval::far(self.boundary, self.max_range)
    }
}

/// p(x | H1, c) and p(x | H0, c) on a common support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisPdfs {
    pub h1: EmpiricalPdf,
    pub h0: EmpiricalPdf,
    pub boundary: f64,
    pub max_range: f64,
    /// Mixture components of `h1` (one per distance and pose stratum).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h1_components: Option<StratifiedPdf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h0_components: Option<StratifiedPdf>,
}

impl HypothesisPdfs {
    pub fn new(
        h1: EmpiricalPdf,
        h0: EmpiricalPdf,
        boundary: f64,
        max_range: f64,
    ) -> Result<Self, DensityError> {
        if !(boundary < max_range) {
            return Err(DensityError::Parameter(format!(
                "boundary {boundary} ft must be below max range {max_range} ft"
            )));
        }
        let lo = h1.support_min().min(h0.support_min());
        let hi = h1.support_max().max(h0.support_max());
        Ok(Self {
            h1: h1.with_support(lo, hi),
            h0: h0.with_support(lo, hi),
            boundary,
            max_range,
            h1_components: None,
            h0_components: None,
        })
    }

    pub fn from_bank(
        bank: &ConditionalPdfBank,
        density: &ContactDensity,
        c: CarriagePair,
        cfg: &HypothesisConfig,
    ) -> Result<Self, DensityError> {
        cfg.validate()?;
        let h1 = mixture_stratified(bank, density, c, cfg.near(), cfg.max_gap)?;
        let h0 = mixture_stratified(bank, density, c, cfg.far(), cfg.max_gap)?;
        let mut out = Self::new(h1.pooled(), h0.pooled(), cfg.boundary, cfg.max_range)?;
        out.h1_components = Some(h1);
        out.h0_components = Some(h0);
        Ok(out)
    }

    pub fn h1_stratified(&self) -> StratifiedPdf {
        self.h1_components
            .clone()
            .unwrap_or_else(|| StratifiedPdf::single(self.h1.clone()))
    }

    pub fn h0_stratified(&self) -> StratifiedPdf {
        self.h0_components
            .clone()
            .unwrap_or_else(|| StratifiedPdf::single(self.h0.clone()))
    }

    pub fn support(&self) -> (i32, i32) {
        (self.h1.support_min(), self.h1.support_max())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::{Channel, Holding, Posture, RssiSample};
    use proptest::prelude::*;

    fn pair() -> CarriagePair {
        let s = crate::measurements::CarriageState::new(Posture::Standing, Holding::Hand);
        CarriagePair::new(s, s)
    }

    fn dataset(values: &[(f64, i32)]) -> Dataset {
        let samples = values
            .iter()
            .map(|&(distance, rssi)| RssiSample {
                rssi,
                tx_power: 12,
                distance,
                pose_user1: PoseAngle::ZERO,
                pose_user2: PoseAngle::ZERO,
                carriage: pair(),
                channel: Channel::Unknown,
                synthetic: false,
            })
            .collect();
        Dataset::new(samples, "")
    }

    fn raw_opts() -> EstimateOptions {
        EstimateOptions {
            epsilon: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn point_mass_estimate() {
        let d = dataset(&[(3.0, -60); 4]);
        let pdf = estimate_pdf(&d, 3.0, pair(), &raw_opts()).unwrap();
        assert_eq!(pdf.prob(-60), 1.0);
        assert_eq!(pdf.sample_count(), 4);
        assert!(pdf.support_min() <= -100 && pdf.support_max() >= 12);
    }

    #[test]
    fn counting_estimate() {
        let d = dataset(&[(3.0, -60), (3.0, -60), (3.0, -70), (3.0, -80)]);
        let pdf = estimate_pdf(&d, 3.0, pair(), &raw_opts()).unwrap();
        assert_eq!(pdf.prob(-60), 0.5);
        assert_eq!(pdf.prob(-70), 0.25);
        assert_eq!(pdf.prob(-80), 0.25);
    }

    #[test]
    fn empty_cell_names_cell() {
        let d = dataset(&[(3.0, -60)]);
        let err = estimate_pdf(&d, 4.0, pair(), &raw_opts()).unwrap_err();
        assert!(matches!(err, DensityError::EmptyCell { distance, .. } if distance == 4.0));
    }

    #[test]
    fn smoothing_keeps_normalization() {
        let d = dataset(&[(3.0, -60), (3.0, -61)]);
        let pdf = estimate_pdf(&d, 3.0, pair(), &EstimateOptions::default()).unwrap();
        let total: f64 = pdf.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(pdf.probabilities().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn uniform_density_values() {
        assert_eq!(uniform_area_density(0.0).unwrap(), 0.0);
        assert_eq!(uniform_area_density(6.0).unwrap(), 6.0);
        assert!(uniform_area_density(-1.0).is_err());
        let grid: Vec<f64> = (0..=6).map(f64::from).collect();
        let mass = density_mass(
            &grid,
            &ContactDensity::uniform_area(),
            DistanceInterval::near(6.0),
            5.0,
        )
        .unwrap();
        assert!((mass - 18.0).abs() < 1e-12);
        assert!((6.0 / mass - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn custom_density_interpolates() {
        let d = ContactDensity::custom(vec![(0.0, 1.0), (10.0, 3.0)]).unwrap();
        assert!((d.eval(5.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(d.eval(11.0).is_err());
        assert!(ContactDensity::custom(vec![(0.0, -1.0)]).is_err());
    }

    fn three_bin(lo: i32, p: [f64; 3]) -> EmpiricalPdf {
        EmpiricalPdf::new(lo, p.to_vec(), 10).unwrap()
    }

    #[test]
    fn mixture_single_grid_point_is_identity() {
        let pdf = three_bin(-62, [0.2, 0.5, 0.3]);
        let bank = ConditionalPdfBank::from_pdfs(vec![(4.0, pair(), pdf.clone())]).unwrap();
        let mix = mixture_pdf(
            &bank,
            &ContactDensity::uniform_area(),
            pair(),
            DistanceInterval::near(6.0),
            5.0,
        )
        .unwrap();
        for x in -62..=-60 {
            assert!((mix.prob(x) - pdf.prob(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn mixture_equal_weights_average() {
        let bank = ConditionalPdfBank::from_pdfs(vec![
            (1.0, pair(), EmpiricalPdf::point_mass(-60)),
            (2.0, pair(), EmpiricalPdf::point_mass(-70)),
        ])
        .unwrap();
        let flat = ContactDensity::custom(vec![(0.0, 1.0), (10.0, 1.0)]).unwrap();
        let interval = DistanceInterval {
            lo: 1.0,
            hi: 2.0,
            lo_inclusive: true,
        };
        let mix = mixture_pdf(&bank, &flat, pair(), interval, 5.0).unwrap();
        assert!((mix.prob(-60) - 0.5).abs() < 1e-15);
        assert!((mix.prob(-70) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mixture_matches_hand_trapezoid() {
        let a = three_bin(-62, [0.6, 0.3, 0.1]);
        let b = three_bin(-62, [0.2, 0.5, 0.3]);
        let c = three_bin(-62, [0.1, 0.2, 0.7]);
        let bank = ConditionalPdfBank::from_pdfs(vec![
            (2.0, pair(), a),
            (4.0, pair(), b),
            (6.0, pair(), c),
        ])
        .unwrap();
        let interval = DistanceInterval {
            lo: 2.0,
            hi: 6.0,
            lo_inclusive: true,
        };
        let mix = mixture_pdf(
            &bank,
            &ContactDensity::uniform_area(),
            pair(),
            interval,
            5.0,
        )
        .unwrap();
        // trapezoid node weights: D(2)·1 = 2, D(4)·2 = 8, D(6)·1 = 6; total 16
        let expected = [
            (2.0 * 0.6 + 8.0 * 0.2 + 6.0 * 0.1) / 16.0,
            (2.0 * 0.3 + 8.0 * 0.5 + 6.0 * 0.2) / 16.0,
            (2.0 * 0.1 + 8.0 * 0.3 + 6.0 * 0.7) / 16.0,
        ];
        for (i, e) in expected.iter().enumerate() {
            assert!((mix.prob(-62 + i as i32) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_point_belongs_to_near_interval() {
        let grid = [2.0, 6.0, 10.0];
        let near = grid_weights(
            &grid,
            &ContactDensity::uniform_area(),
            DistanceInterval::near(6.0),
            5.0,
        )
        .unwrap();
        assert!(near.iter().any(|&(i, _)| i == 1));
        let far = grid_weights(
            &grid,
            &ContactDensity::uniform_area(),
            DistanceInterval::far(6.0, 10.0),
            5.0,
        )
        .unwrap();
        assert_eq!(far.iter().map(|&(i, _)| i).collect::<Vec<_>>(), vec![2]);
        // far mass is still the full ∫_6^10 s ds
        let mass: f64 = far.iter().map(|(_, w)| w).sum();
        assert!((mass - 32.0).abs() < 1e-12);
    }

    #[test]
    fn coverage_gap_is_reported() {
        let grid = [1.0, 2.0, 15.0];
        let err = grid_weights(
            &grid,
            &ContactDensity::uniform_area(),
            DistanceInterval::far(6.0, 30.0),
            5.0,
        )
        .unwrap_err();
        assert!(matches!(err, DensityError::Coverage(_)));
        let err = grid_weights(
            &grid,
            &ContactDensity::uniform_area(),
            DistanceInterval::far(16.0, 30.0),
            20.0,
        )
        .unwrap_err();
        assert!(matches!(err, DensityError::Coverage(_)));
    }

    #[test]
    fn synthetic_ordering_of_hypothesis_means() {
        let entries = (1..=30)
            .map(|s| {
                let mean = -40 - (20.0 * (s as f64).log10()).round() as i32;
                (s as f64, pair(), three_bin(mean - 1, [0.25, 0.5, 0.25]))
            })
            .collect();
        let bank = ConditionalPdfBank::from_pdfs(entries).unwrap();
        let h = HypothesisPdfs::from_bank(
            &bank,
            &ContactDensity::uniform_area(),
            pair(),
            &HypothesisConfig::default(),
        )
        .unwrap();
        assert!(h.h0.mean() < h.h1.mean());
        assert_eq!(h.h1.support_min(), h.h0.support_min());
    }

    #[test]
    fn bank_json_round_trip() {
        let d = dataset(&[(3.0, -60), (3.0, -61), (6.0, -70)]);
        let bank = ConditionalPdfBank::estimate(&d, &EstimateOptions::default()).unwrap();
        let back = ConditionalPdfBank::from_json(&bank.to_json()).unwrap();
        assert_eq!(back, bank);
        assert_eq!(bank.grid(pair()), vec![3.0, 6.0]);
        let bad = r#"{"support_min":0,"support_max":0,"cells":[{"distance":1.0,"carriage":"standing_hand|standing_hand","pdf":{"support_min":0,"probabilities":[0.5]},"strata":[]}]}"#;
        assert!(ConditionalPdfBank::from_json(bad).is_err());
    }

    fn arb_pdf() -> impl Strategy<Value = EmpiricalPdf> {
        (-90i32..-40, proptest::collection::vec(0.0f64..1.0, 1..12))
            .prop_filter_map("positive", |(lo, w)| {
                EmpiricalPdf::from_weights(lo, w, 1).ok()
            })
    }

    proptest! {
        #[test]
        fn mixtures_are_normalized(pdfs in proptest::collection::vec(arb_pdf(), 1..8), scale in 0.01f64..100.0) {
            let entries: Vec<_> = pdfs.iter().enumerate().map(|(i, p)| (1.0 + i as f64, pair(), p.clone())).collect();
            let bank = ConditionalPdfBank::from_pdfs(entries).unwrap();
            let interval = DistanceInterval::near(pdfs.len() as f64 + 0.5);
            let mix = mixture_pdf(&bank, &ContactDensity::uniform_area(), pair(), interval, 5.0).unwrap();
            let total: f64 = mix.probabilities().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);

            // scaling D(s) leaves the mixture unchanged
            let n = pdfs.len() as f64 + 1.0;
            let scaled = ContactDensity::custom(vec![(0.0, 0.0), (n, n * scale)]).unwrap();
            let mix2 = mixture_pdf(&bank, &scaled, pair(), interval, 5.0).unwrap();
            for (x, p) in mix.iter() {
                prop_assert!((p - mix2.prob(x)).abs() < 1e-12);
            }
        }

        #[test]
        fn mixture_of_identical_pdfs_is_that_pdf(pdf in arb_pdf(), k in 1usize..6, scale in 0.1f64..10.0) {
            let entries: Vec<_> = (0..k).map(|i| (2.0 + i as f64, pair(), pdf.clone())).collect();
            let bank = ConditionalPdfBank::from_pdfs(entries).unwrap();
            let density = ContactDensity::custom(vec![(0.0, scale), (30.0, 3.0 * scale)]).unwrap();
            let mix = mixture_pdf(&bank, &density, pair(), DistanceInterval::near(2.0 + k as f64), 5.0).unwrap();
            for (x, p) in pdf.iter() {
                prop_assert!((p - mix.prob(x)).abs() < 1e-12);
            }
        }
    }
}
