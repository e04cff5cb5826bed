//! Command-line workbench: ingest, estimate, optimize, det, fdr, sweep, simulate.
//!
//! Every command resolves a [`RunConfig`] (JSON file, then flags), writes CSV
//! data files with a header row, and a `.meta.json` sidecar per data file with
//! the resolved config and toolkit version.

mod config;
pub mod svg;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub use config::{PriorSpec, RangeExtension, RunConfig};

use crate::densities::{ConditionalPdfBank, DensityError, EstimateOptions, HypothesisPdfs};
use crate::detectors::{build_nonlinearity, minimax_from_tables, DetectorError};
use crate::evaluation::{
    det_curve, fdr_from_det, look_sweep, tables_for, CarriagePrior, DetMode, EvalError, LookConfig,
    StateModel,
};
use crate::measurements::synthetic::SyntheticCampaign;
use crate::measurements::{
    censor_dataset, estimate_bulk_deltas, extend_range, ingest_csv, normalize_tx, synthesize_pose,
    write_csv, BulkDeltaTable, CarriagePair, ColumnMapping, Dataset, IngestOptions,
    MeasurementError,
};
use crate::scansim::{simulate_windows, Correlation, Looks, RecordingPolicy, ScanError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "tcftl",
    version,
    about = "BLE RSSI proximity detection workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate and normalize measurement CSVs into one dataset file.
    Ingest(Flags),
    /// Estimate the conditional PDF bank and hypothesis PDFs.
    Estimate(Flags),
    /// Minimax M-of-N detector with per-carriage offsets at a target P_D.
    Optimize(Flags),
    /// DET curve for a detector mode.
    Det(Flags),
    /// FDR versus overall P_D for a detector mode.
    Fdr(Flags),
    /// P_D at a fixed FDR for several look configurations.
    Sweep(Flags),
    /// Simulated recorded windows at one separation and carriage.
    Simulate(Flags),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Estimate(_) => "estimate",
            Command::Optimize(_) => "optimize",
            Command::Det(_) => "det",
            Command::Fdr(_) => "fdr",
            Command::Sweep(_) => "sweep",
            Command::Simulate(_) => "simulate",
        }
    }

    fn flags(&self) -> &Flags {
        match self {
            Command::Ingest(f)
            | Command::Estimate(f)
            | Command::Optimize(f)
            | Command::Det(f)
            | Command::Fdr(f)
            | Command::Sweep(f)
            | Command::Simulate(f) => f,
        }
    }
}

fn serde_str<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|e| e.to_string())
}

#[derive(Debug, Clone, clap::Args)]
struct Flags {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Measurement CSV (repeatable).
    #[arg(long = "dataset")]
    datasets: Vec<PathBuf>,
    /// JSON column mapping for the measurement CSVs.
    #[arg(long)]
    columns: Option<PathBuf>,
    /// Serialized PDF bank from `estimate`.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Use a generated campaign with this seed instead of measurements.
    #[arg(long)]
    synthetic: Option<u64>,
    #[arg(long)]
    reference_tx: Option<i32>,
    /// Keep rows below the -100 dBm sensitivity floor.
    #[arg(long)]
    no_censor: bool,
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    synthesize_pose: bool,
    /// Synthesize these ranges from the base range (repeatable).
    #[arg(long = "extend-to")]
    extend_to: Vec<f64>,
    #[arg(long)]
    extend_base: Option<f64>,
    #[arg(long)]
    boundary: Option<f64>,
    #[arg(long)]
    max_range: Option<f64>,
    /// `uniform`, `marginals:HAND,STANDING` or a JSON weight table.
    #[arg(long)]
    prior: Option<PriorSpec>,
    /// m-of-n, one-of-n, agnostic or cognitive.
    #[arg(long)]
    mode: Option<DetMode>,
    /// Independent looks per window.
    #[arg(long)]
    n: Option<u32>,
    /// first-chirp, all-chirps or min-attenuation.
    #[arg(long, value_parser = serde_str::<RecordingPolicy>)]
    policy: Option<RecordingPolicy>,
    #[arg(long)]
    samples_per_scan: Option<u32>,
    #[arg(long)]
    scans: Option<u32>,
    /// independent or within-scan-correlated.
    #[arg(long, value_parser = serde_str::<Correlation>)]
    correlation: Option<Correlation>,
    #[arg(long)]
    target_pd: Option<f64>,
    #[arg(long)]
    fdr_target: Option<f64>,
    /// Look configurations SCANSxSAMPLES, comma separated.
    #[arg(long, value_delimiter = ',')]
    looks: Vec<LookConfig>,
    #[arg(long)]
    distance: Option<f64>,
    /// Carriage pair `user1|user2`, e.g. `standing_hand|standing_hand`.
    #[arg(long)]
    carriage: Option<CarriagePair>,
    #[arg(long)]
    windows: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    no_svg: bool,
    /// Worker threads; outputs do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

impl Flags {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(Failure::config)?,
            None => RunConfig::default(),
        };
        if !self.datasets.is_empty() {
            cfg.datasets = self.datasets.clone();
        }
        if let Some(p) = &self.columns {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
            cfg.columns = serde_json::from_str::<ColumnMapping>(&text)
                .map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
        }
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = &self.$flag {
                    cfg.$($field)+ = v.clone().into();
                }
            };
        }
        set!(bank => bank);
        set!(synthetic => synthetic);
        set!(reference_tx => reference_tx);
        set!(boundary => hypothesis.boundary);
        set!(max_range => hypothesis.max_range);
        set!(prior => prior);
        set!(mode => mode);
        set!(n => n);
        set!(policy => sampling.policy);
        set!(samples_per_scan => sampling.samples_per_scan);
        set!(scans => scan.scans_per_window);
        set!(correlation => sampling.correlation);
        set!(target_pd => target_pd);
        set!(fdr_target => fdr_target);
        set!(distance => distance);
        set!(carriage => carriage);
        set!(windows => windows);
        set!(seed => seed);
        set!(output => output);
        if self.no_censor {
            cfg.censor_below = None;
        }
        if self.strict {
            cfg.strict = true;
        }
        if self.synthesize_pose {
            cfg.synthesize_pose = true;
        }
        if self.no_svg {
            cfg.svg = false;
        }
        if !self.looks.is_empty() {
            cfg.looks = self.looks.clone();
            if let Some(c) = self.correlation {
                cfg.sweep_correlation = c;
            }
        }
        if !self.extend_to.is_empty() || self.extend_base.is_some() {
            let mut ext = cfg.extend_range.take().unwrap_or_default();
            if !self.extend_to.is_empty() {
                ext.targets = self.extend_to.clone();
            }
            if let Some(b) = self.extend_base {
                ext.base = b;
            }
            cfg.extend_range = Some(ext);
        }
        cfg.validate().map_err(Failure::config)?;
        Ok(cfg)
    }
}

/// A failed command and its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

impl From<MeasurementError> for Failure {
    fn from(e: MeasurementError) -> Self {
        let code = match e {
            MeasurementError::Schema(_) | MeasurementError::Rows(_) | MeasurementError::Csv(_) => {
                EXIT_VALIDATION
            }
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<DensityError> for Failure {
    fn from(e: DensityError) -> Self {
        let code = match e {
            DensityError::Invalid(_)
            | DensityError::EmptyCell { .. }
            | DensityError::Coverage(_) => EXIT_VALIDATION,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<DetectorError> for Failure {
    fn from(e: DetectorError) -> Self {
        let code = match e {
            DetectorError::Infeasible { .. } => EXIT_INFEASIBLE,
            DetectorError::Input(_) => EXIT_VALIDATION,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ScanError> for Failure {
    fn from(e: ScanError) -> Self {
        match e {
            ScanError::Density(d) => d.into(),
            other => Failure::config(other.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Density(d) => d.into(),
            EvalError::Detector(d) => d.into(),
            EvalError::Scan(s) => s.into(),
            EvalError::Coverage(m) => Failure::validation(m),
            other => Failure::config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::config(e.to_string())
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn execute(command: &Command) -> Result<(), Failure> {
    let flags = command.flags();
    let cfg = flags.resolve()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = flags.threads {
        if t == 0 {
            return Err(Failure::config("--threads must be at least 1"));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| Failure::config(e.to_string()))?;
    let mut out = Outputs::new(&cfg, command.name())?;
    pool.install(|| match command {
        Command::Ingest(_) => cmd_ingest(&cfg, &mut out),
        Command::Estimate(_) => cmd_estimate(&cfg, &mut out),
        Command::Optimize(_) => cmd_optimize(&cfg, &mut out),
        Command::Det(_) => cmd_det(&cfg, &mut out),
        Command::Fdr(_) => cmd_fdr(&cfg, &mut out),
        Command::Sweep(_) => cmd_sweep(&cfg, &mut out),
        Command::Simulate(_) => cmd_simulate(&cfg, &mut out),
    })
}

#[derive(Serialize)]
struct Sidecar<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    data: &'a str,
    config: &'a RunConfig,
}

struct Outputs<'a> {
    dir: PathBuf,
    cfg: &'a RunConfig,
    command: &'static str,
}

impl<'a> Outputs<'a> {
    fn new(cfg: &'a RunConfig, command: &'static str) -> Result<Self, Failure> {
        std::fs::create_dir_all(&cfg.output)
            .map_err(|e| Failure::config(format!("cannot create {}: {e}", cfg.output.display())))?;
        Ok(Self {
            dir: cfg.output.clone(),
            cfg,
            command,
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, Failure> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    /// Data file plus its `.meta.json` sidecar.
    fn data(&mut self, name: &str, contents: &str) -> Result<PathBuf, Failure> {
        let path = self.write(name, contents)?;
        let stem = Path::new(name)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(name);
        let sidecar = Sidecar {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            data: name,
            config: self.cfg,
        };
        let json = serde_json::to_string_pretty(&sidecar).expect("config serializes");
        self.write(&format!("{stem}.meta.json"), &(json + "\n"))?;
        Ok(path)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, Failure> {
        let json = serde_json::to_string_pretty(value).expect("value serializes");
        self.data(name, &(json + "\n"))
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, Failure> {
    let mut dataset = if let Some(seed) = cfg.synthetic {
        SyntheticCampaign::with_pairs(&CarriagePair::campaign_pairs(), 3.0, seed).generate()
    } else {
        let opts = IngestOptions {
            strict: cfg.strict,
            censor_below: cfg.censor_below,
        };
        let mut merged: Option<Dataset> = None;
        for path in &cfg.datasets {
            let (d, report) = match ingest_csv(path, &cfg.columns, &opts) {
                Ok(x) => x,
                Err(MeasurementError::Rows(issues)) => {
                    for i in &issues {
                        eprintln!("{}:{}: {}", path.display(), i.line, i.message);
                    }
                    return Err(Failure::validation(format!(
                        "{}: {} invalid row(s) in strict mode",
                        path.display(),
                        issues.len()
                    )));
                }
                Err(e) => return Err(e.into()),
            };
            eprintln!("{report}");
            merged = Some(match merged {
                Some(m) => m.merged(&d),
                None => d,
            });
        }
        merged.ok_or_else(|| Failure::config("no datasets given"))?
    };
    dataset = normalize_tx(&dataset, cfg.reference_tx);
    if cfg.synthesize_pose {
        let mut table = BulkDeltaTable::new();
        for state in dataset.carriage_pairs().iter().map(|c| c.user1) {
            if let std::collections::btree_map::Entry::Vacant(e) = table.entry(state) {
                e.insert(estimate_bulk_deltas(&dataset, state)?);
            }
        }
        dataset = synthesize_pose(&dataset, &table)?;
    }
    if let Some(ext) = &cfg.extend_range {
        for &target in &ext.targets {
            let extra = extend_range(&dataset, ext.base, target, ext.path_loss_exponent)?;
            dataset = dataset.merged(&extra);
        }
    }
    if let Some(floor) = cfg.censor_below {
        dataset = censor_dataset(&dataset, floor);
    }
    if dataset.is_empty() {
        return Err(Failure::validation("no usable samples after validation"));
    }
    Ok(dataset)
}

fn load_bank(cfg: &RunConfig) -> Result<ConditionalPdfBank, Failure> {
    if let Some(path) = &cfg.bank {
        let text = std::fs::read_to_string(path)?;
        return Ok(ConditionalPdfBank::from_json(&text)?);
    }
    let dataset = load_dataset(cfg)?;
    let opts = EstimateOptions {
        epsilon: cfg.epsilon,
        ..EstimateOptions::default()
    };
    Ok(ConditionalPdfBank::estimate(&dataset, &opts)?)
}

/// Carriage states with positive prior weight, in carriage order.
fn state_models(
    cfg: &RunConfig,
    bank: &ConditionalPdfBank,
) -> Result<(Vec<StateModel>, CarriagePrior), Failure> {
    let pairs = bank.carriage_pairs();
    let prior = cfg.prior.resolve(&pairs)?;
    let mut states = Vec::new();
    for (&c, &w) in prior.weights() {
        if w <= 0.0 {
            continue;
        }
        if !pairs.contains(&c) {
            return Err(Failure::validation(format!(
                "prior state {c} has no measurements"
            )));
        }
        states.push(StateModel::from_bank(
            bank,
            &cfg.density,
            c,
            &cfg.hypothesis,
        )?);
    }
    Ok((states, prior))
}

fn looks_for(cfg: &RunConfig) -> Result<Looks, Failure> {
    match cfg.n {
        Some(n) => Ok(Looks::independent(n)),
        None => Ok(Looks::new(&cfg.scan, cfg.sampling)?),
    }
}

fn file_safe(c: CarriagePair) -> String {
    c.to_string().replace('|', "__")
}

fn cmd_ingest(cfg: &RunConfig, out: &mut Outputs) -> Result<(), Failure> {
    let dataset = load_dataset(cfg)?;
    let mut buf = Vec::new();
    write_csv(&dataset, &mut buf)?;
    out.data(
        "dataset.csv",
        &String::from_utf8(buf).expect("csv is utf-8"),
    )?;
    eprintln!("{} samples written", dataset.len());
    Ok(())
}

fn cmd_estimate(cfg: &RunConfig, out: &mut Outputs) -> Result<(), Failure> {
    let bank = load_bank(cfg)?;
    out.data("bank.json", &(bank.to_json() + "\n"))?;
    let mut cells = String::from("distance_ft,carriage,rssi,probability\n");
    for cell in bank.cells() {
        for (x, p) in cell.pdf.iter() {
            let _ = writeln!(cells, "{},{},{x},{p}", cell.distance, cell.carriage);
        }
    }
    out.data("conditional_pdfs.csv", &cells)?;
    let mut hyp = String::from("carriage,rssi,p_h1,p_h0,llr_weight\n");
    for c in bank.carriage_pairs() {
        let h = HypothesisPdfs::from_bank(&bank, &cfg.density, c, &cfg.hypothesis)?;
        let nl = build_nonlinearity(&h, cfg.h0_floor)?;
        for ((x, p1), (_, p0)) in h.h1.iter().zip(h.h0.iter()) {
            let _ = writeln!(hyp, "{c},{x},{p1},{p0},{}", nl.weight(x));
        }
    }
    out.data("hypothesis_pdfs.csv", &hyp)?;
    Ok(())
}

fn cmd_optimize(cfg: &RunConfig, out: &mut Outputs) -> Result<(), Failure> {
    let bank = load_bank(cfg)?;
    let (states, _) = state_models(cfg, &bank)?;
    let looks = looks_for(cfg)?;
    let tables = tables_for(&states, &looks);
    let sel = minimax_from_tables(&tables, cfg.target_pd)?;
    let n = looks.total();
    let stem = format!("optimize_n{n}_pd{}", (cfg.target_pd * 100.0).round() as i64);
    let offsets = sel.detector.offsets.as_ref();
    let mut csv = String::from("carriage,tau,offset,m,n,p_d,p_fa\n");
    for s in &sel.per_state {
        let off = offsets
            .and_then(|o| o.offsets.get(&s.carriage))
            .copied()
            .unwrap_or(0);
        let _ = writeln!(
            csv,
            "{},{},{off},{},{n},{},{}",
            s.carriage, s.tau, sel.detector.m, s.p_d, s.p_fa
        );
    }
    out.data(&format!("{stem}.csv"), &csv)?;
    out.json(&format!("{stem}_detector.json"), &sel)?;
    println!(
        "m={} n={n} tau={} worst P_FA={} min P_D={} threshold spread={} dB",
        sel.detector.m,
        sel.detector.tau,
        sel.worst_pfa,
        sel.min_pd,
        sel.threshold_spread()
    );
    Ok(())
}

fn curve_stem(kind: &str, cfg: &RunConfig, n: u32) -> String {
    format!("{kind}_{}_n{n}_{}", cfg.mode.as_str(), cfg.prior.tag())
}

fn cmd_det(cfg: &RunConfig, out: &mut Outputs) -> Result<(), Failure> {
    let bank = load_bank(cfg)?;
    let (states, prior) = state_models(cfg, &bank)?;
    let looks = looks_for(cfg)?;
    let curve = det_curve(&states, &prior, &looks, cfg.mode)?;
    let stem = curve_stem("det", cfg, looks.total());
    out.data(&format!("{stem}.csv"), &curve.to_csv())?;
    out.json(&format!("{stem}_curve.json"), &curve)?;
    if cfg.svg {
        let mut pts = vec![(0.0, 0.0)];
        pts.extend(curve.points.iter().map(|p| (p.p_fa, p.p_d)));
        pts.push((1.0, 1.0));
        let svg = svg::plot(
            &format!("DET, {} (N = {})", cfg.mode.as_str(), looks.total()),
            "P_FA",
            "P_D",
            &[svg::Series {
                label: format!("{} N={}", cfg.mode.as_str(), looks.total()),
                points: pts,
            }],
            true,
        );
        out.write(&format!("{stem}.svg"), &svg)?;
    }
    Ok(())
}

fn cmd_fdr(cfg: &RunConfig, out: &mut Outputs) -> Result<(), Failure> {
    let bank = load_bank(cfg)?;
    let (states, prior) = state_models(cfg, &bank)?;
    let looks = looks_for(cfg)?;
    let det = det_curve(&states, &prior, &looks, cfg.mode)?;
    let curve = fdr_from_det(&det, &states, &prior)?;
    let stem = curve_stem("fdr", cfg, looks.total());
    out.data(&format!("{stem}.csv"), &curve.to_csv())?;
    out.json(&format!("{stem}_curve.json"), &curve)?;
    let mut summary = String::from("fdr_target,p_d,status\n");
    match curve.pd_at_fdr(cfg.fdr_target) {
        Some(pd) => {
            let _ = writeln!(summary, "{},{pd},ok", cfg.fdr_target);
            println!("P_D at FDR {}: {pd}", cfg.fdr_target);
        }
        None => {
            let _ = writeln!(summary, "{},,infeasible", cfg.fdr_target);
            eprintln!(
                "warning: FDR target {} is not reachable on this curve",
                cfg.fdr_target
            );
        }
    }
    out.data(&format!("{stem}_target.csv"), &summary)?;
    if cfg.svg {
        let svg = svg::plot(
            &format!("FDR, {} (N = {})", cfg.mode.as_str(), looks.total()),
            "overall P_D",
            "FDR",
            &[svg::Series {
                label: format!("{} N={}", cfg.mode.as_str(), looks.total()),
                points: curve.points.iter().map(|p| (p.p_d, p.fdr)).collect(),
            }],
            false,
        );
        out.write(&format!("{stem}.svg"), &svg)?;
    }
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, out: &mut Outputs) -> Result<(), Failure> {
    if cfg.looks.is_empty() {
        return Err(Failure::config("no look configurations to sweep"));
    }
    let bank = load_bank(cfg)?;
    let (states, prior) = state_models(cfg, &bank)?;
    let rows = look_sweep(
        &states,
        &prior,
        &cfg.scan,
        &cfg.looks,
        cfg.sweep_correlation,
        cfg.mode,
        cfg.fdr_target,
    )?;
    let mut csv = String::from("scans,samples_per_scan,looks,p_d,status\n");
    for r in &rows {
        match r.p_d {
            Some(pd) => {
                let _ = writeln!(
                    csv,
                    "{},{},{},{pd},ok",
                    r.config.scans, r.config.samples_per_scan, r.looks
                );
            }
            None => {
                let _ = writeln!(
                    csv,
                    "{},{},{},,infeasible",
                    r.config.scans, r.config.samples_per_scan, r.looks
                );
                eprintln!(
                    "warning: FDR target {} is not reachable with {} looks",
                    cfg.fdr_target, r.config
                );
            }
        }
    }
    let stem = format!(
        "sweep_{}_fdr{}_{}",
        cfg.mode.as_str(),
        (cfg.fdr_target * 100.0).round() as i64,
        cfg.prior.tag()
    );
    out.data(&format!("{stem}.csv"), &csv)?;
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, out: &mut Outputs) -> Result<(), Failure> {
    let bank = load_bank(cfg)?;
    let c = match cfg.carriage {
        Some(c) => c,
        None => *bank
            .carriage_pairs()
            .first()
            .ok_or_else(|| Failure::validation("bank is empty"))?,
    };
    let windows = simulate_windows(
        &cfg.scan,
        &cfg.sampling,
        &bank,
        cfg.distance,
        c,
        cfg.seed,
        cfg.windows as usize,
    )?;
    let floor = cfg.censor_below;
    let mut csv = String::from("window,look,rssi,decoded\n");
    for (w, values) in windows.iter().enumerate() {
        for (i, v) in values.iter().enumerate() {
            let decoded = floor.is_none_or(|f| *v >= f);
            let _ = writeln!(csv, "{w},{i},{v},{decoded}");
        }
    }
    let policy = serde_json::to_value(cfg.sampling.policy).expect("policy serializes");
    let stem = format!(
        "simulate_{}_s{}_{}",
        policy.as_str().unwrap_or("policy"),
        cfg.distance,
        file_safe(c)
    );
    out.data(&format!("{stem}.csv"), &csv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.json");
        std::fs::write(
            &cfg_path,
            r#"{"synthetic": 3, "seed": 9, "mode": "agnostic", "fdr_target": 0.3}"#,
        )
        .unwrap();
        let cli = Cli::try_parse_from([
            "tcftl",
            "det",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "11",
            "--policy",
            "all-chirps",
            "--prior",
            "marginals:0.3,0.4",
        ])
        .unwrap();
        let cfg = cli.command.flags().resolve().unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.synthetic, Some(3));
        assert_eq!(cfg.mode, DetMode::Agnostic);
        assert_eq!(cfg.fdr_target, 0.3);
        assert_eq!(cfg.sampling.policy, RecordingPolicy::AllChirps);
        assert_eq!(cfg.prior.tag(), "hand30-stand40");
    }

    #[test]
    fn missing_input_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let code = run(["tcftl", "det", "-o", dir.path().to_str().unwrap()]);
        assert_eq!(code, EXIT_CONFIG);
    }

    #[test]
    fn exit_codes_by_error_kind() {
        let infeasible = DetectorError::Infeasible {
            target: 0.9,
            best: 0.5,
        };
        assert_eq!(
            Failure::from(EvalError::from(infeasible)).code,
            EXIT_INFEASIBLE
        );
        assert_eq!(
            Failure::from(MeasurementError::Rows(vec![])).code,
            EXIT_VALIDATION
        );
        assert_eq!(
            Failure::from(DensityError::Coverage("gap".into())).code,
            EXIT_VALIDATION
        );
        assert_eq!(
            Failure::from(MeasurementError::Config("x".into())).code,
            EXIT_CONFIG
        );
        assert_eq!(
            Failure::from(EvalError::Prior("x".into())).code,
            EXIT_CONFIG
        );
    }

    #[test]
    fn unknown_config_field_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.json");
        std::fs::write(&cfg_path, r#"{"synthetic": 1, "bogus": true}"#).unwrap();
        let code = run(["tcftl", "det", "--config", cfg_path.to_str().unwrap()]);
        assert_eq!(code, EXIT_CONFIG);
    }
}
