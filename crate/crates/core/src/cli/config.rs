use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::densities::{ContactDensity, HypothesisConfig, DEFAULT_EPSILON};
use crate::detectors::DEFAULT_H0_FLOOR;
use crate::evaluation::{CarriagePrior, DetMode, EvalError, LookConfig};
use crate::measurements::{
    CarriagePair, ColumnMapping, DEFAULT_REFERENCE_TX_DBM, SENSITIVITY_FLOOR_DBM,
};
use crate::scansim::{Correlation, SamplingModel, ScanModel};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    #[default]
    Uniform,
    /// Per-user probabilities of carrying in hand and of standing.
    Marginals { hand: f64, standing: f64 },
    Table {
        weights: BTreeMap<CarriagePair, f64>,
    },
}

impl PriorSpec {
    pub fn resolve(&self, pairs: &[CarriagePair]) -> Result<CarriagePrior, EvalError> {
        match self {
            PriorSpec::Uniform => CarriagePrior::uniform(pairs),
            PriorSpec::Marginals { hand, standing } => {
                CarriagePrior::from_marginals(pairs, *hand, *standing)
            }
            PriorSpec::Table { weights } => CarriagePrior::new(weights.clone()),
        }
    }

    /// Short tag used in output file names.
    pub fn tag(&self) -> String {
        match self {
            PriorSpec::Uniform => "uniform".into(),
            PriorSpec::Marginals { hand, standing } => {
                format!("hand{}-stand{}", percent(*hand), percent(*standing))
            }
            PriorSpec::Table { .. } => "table".into(),
        }
    }
}

fn percent(x: f64) -> i64 {
    (x * 100.0).round() as i64
}

impl std::str::FromStr for PriorSpec {
    type Err = String;

    /// `uniform`, `marginals:HAND,STANDING`, or a path to a JSON pair→weight table.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "uniform" {
            return Ok(PriorSpec::Uniform);
        }
        if let Some(rest) = s.strip_prefix("marginals:") {
            let (h, st) = rest
                .split_once(',')
                .ok_or("expected marginals:HAND,STANDING")?;
            let hand = h
                .trim()
                .parse()
                .map_err(|_| format!("bad hand probability `{h}`"))?;
            let standing = st
                .trim()
                .parse()
                .map_err(|_| format!("bad standing probability `{st}`"))?;
            return Ok(PriorSpec::Marginals { hand, standing });
        }
        let text =
            std::fs::read_to_string(s).map_err(|e| format!("cannot read prior table {s}: {e}"))?;
        let weights =
            serde_json::from_str(&text).map_err(|e| format!("bad prior table {s}: {e}"))?;
        Ok(PriorSpec::Table { weights })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RangeExtension {
    pub base: f64,
    pub targets: Vec<f64>,
    pub path_loss_exponent: f64,
}

impl Default for RangeExtension {
    fn default() -> Self {
        Self {
            base: 15.0,
            targets: Vec::new(),
            path_loss_exponent: 2.0,
        }
    }
}

/// Everything a command needs, loadable from JSON and overridable by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub datasets: Vec<PathBuf>,
    pub columns: ColumnMapping,
    /// Serialized PDF bank; used instead of `datasets` when set.
    pub bank: Option<PathBuf>,
    /// Generate a synthetic campaign with this seed instead of reading data.
    pub synthetic: Option<u64>,
    pub reference_tx: i32,
    pub censor_below: Option<i32>,
    pub strict: bool,
    pub synthesize_pose: bool,
    pub extend_range: Option<RangeExtension>,
    pub hypothesis: HypothesisConfig,
    pub density: ContactDensity,
    pub epsilon: f64,
    pub h0_floor: f64,
    pub prior: PriorSpec,
    pub scan: ScanModel,
    pub sampling: SamplingModel,
    pub mode: DetMode,
    /// Independent looks per window; when unset the scan and sampling models decide.
    pub n: Option<u32>,
    pub target_pd: f64,
    pub fdr_target: f64,
    pub looks: Vec<LookConfig>,
    pub sweep_correlation: Correlation,
    pub distance: f64,
    pub carriage: Option<CarriagePair>,
    pub windows: u64,
    pub seed: u64,
    pub output: PathBuf,
    pub svg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            columns: ColumnMapping::default(),
            bank: None,
            synthetic: None,
            reference_tx: DEFAULT_REFERENCE_TX_DBM,
            censor_below: Some(SENSITIVITY_FLOOR_DBM),
            strict: false,
            synthesize_pose: false,
            extend_range: None,
            hypothesis: HypothesisConfig::default(),
            density: ContactDensity::default(),
            epsilon: DEFAULT_EPSILON,
            h0_floor: DEFAULT_H0_FLOOR,
            prior: PriorSpec::Uniform,
            scan: ScanModel::default(),
            sampling: SamplingModel::default(),
            mode: DetMode::MofN,
            n: None,
            target_pd: 0.6,
            fdr_target: 0.5,
            looks: vec![
                LookConfig {
                    scans: 6,
                    samples_per_scan: 1,
                },
                LookConfig {
                    scans: 6,
                    samples_per_scan: 4,
                },
            ],
            sweep_correlation: Correlation::WithinScanCorrelated,
            distance: 3.0,
            carriage: None,
            windows: 1000,
            seed: 0,
            output: PathBuf::from("out"),
            svg: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        for p in &self.datasets {
            if !p.is_file() {
                return Err(format!("dataset {} does not exist", p.display()));
            }
        }
        if let Some(b) = &self.bank {
            if !b.is_file() {
                return Err(format!("bank {} does not exist", b.display()));
            }
        }
        if self.bank.is_none() && self.synthetic.is_none() && self.datasets.is_empty() {
            return Err("no input: give --dataset, --bank or --synthetic".into());
        }
        self.hypothesis.validate().map_err(|e| e.to_string())?;
        self.scan.validate().map_err(|e| e.to_string())?;
        if !(self.epsilon >= 0.0) {
            return Err("epsilon must be non-negative".into());
        }
        if !(self.h0_floor > 0.0 && self.h0_floor < 1.0) {
            return Err("h0_floor must lie in (0, 1)".into());
        }
        if self.n == Some(0) {
            return Err("n must be at least 1".into());
        }
        if !(self.target_pd > 0.0 && self.target_pd < 1.0) {
            return Err("target_pd must lie in (0, 1)".into());
        }
        if !(self.fdr_target > 0.0 && self.fdr_target < 1.0) {
            return Err("fdr_target must lie in (0, 1)".into());
        }
        if !(self.distance > 0.0) {
            return Err("distance must be positive".into());
        }
        Ok(())
    }
}
