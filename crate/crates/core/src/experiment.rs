//! Experiment configuration and the calibrate, select, track pipeline.
//!
//! [`analyze`] runs on an in-memory simulation so that several methods can
//! share one trace; [`run_experiment`] adds scenario loading, simulation and
//! the on-disk outputs.

use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};
use crate::geometry::{build_weight_matrix, Point2, WeightMatrix};
use crate::imaging::{argmax_voxel, ImageFrame, Reconstructor, Regularizer, DEFAULT_ALPHA};
use crate::linkstats::{
    attenuation_sweep, calibrate_lenient, link_statistics, quantile_thresholds, stable_sum,
    vrti_stat, AttenuationRate, CalibrationTable, LinkStatVector, StatKind, StreamTable,
    DEFAULT_WINDOW,
};
use crate::scenarios;
use crate::selection::{select_all_links, LinkSelection, SelectionMethod, SelectionResult};
use crate::simulator::{
    load_scenario, obstruction_truth, simulate, PropagationParams, Scenario, SimMode,
    SimulationOutput, ALLOWED_CHANNELS, DEFAULT_CHANNELS,
};
use crate::trace::{write_truth, StreamId, StreamKey, TruthSample};
use crate::tracking::{
    default_cdf_levels, error_cdf, percentile, rmse_from_errors, tracking_errors, write_trajectory,
    KalmanParams, KalmanTracker, RmseNormalization, TrajectoryRow,
};

pub const SEED_ENV: &str = "RTI_SEED";
pub const BUILTIN_PREFIX: &str = "builtin:";
pub const DEFAULT_LAMBDA: f64 = 1.5;
pub const DEFAULT_SWEEP_THRESHOLDS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    MRti,
    VRti,
    CRtiMean,
    CRtiVar,
    DRtiMean,
    DRtiVar,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::MRti,
        Method::VRti,
        Method::CRtiMean,
        Method::CRtiVar,
        Method::DRtiMean,
        Method::DRtiVar,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::MRti => "mRTI",
            Method::VRti => "vRTI",
            Method::CRtiMean => "cRTI-mean",
            Method::CRtiVar => "cRTI-var",
            Method::DRtiMean => "dRTI-mean",
            Method::DRtiVar => "dRTI-var",
        }
    }

    pub fn kind(&self) -> StatKind {
        match self {
            Method::MRti | Method::CRtiMean | Method::DRtiMean => StatKind::Mean,
            Method::VRti | Method::CRtiVar | Method::DRtiVar => StatKind::Variance,
        }
    }

    pub fn is_directional(&self) -> bool {
        matches!(self, Method::DRtiMean | Method::DRtiVar)
    }

    pub fn is_multichannel(&self) -> bool {
        matches!(self, Method::CRtiMean | Method::CRtiVar)
    }

    /// Radio configuration the method needs.
    pub fn sim_mode(&self, channels: &[u8]) -> SimMode {
        if self.is_directional() {
            SimMode::Directional
        } else if self.is_multichannel() {
            SimMode::MultiChannel {
                channels: channels.to_vec(),
            }
        } else {
            SimMode::Omni
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = RtiError;

    fn from_str(s: &str) -> Result<Self> {
        let want = s.trim().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == want)
            .ok_or_else(|| {
                let known: Vec<&str> = Method::ALL.iter().map(Method::name).collect();
                RtiError::Config(format!(
                    "unknown method `{s}` (known: {})",
                    known.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingConfig {
    pub alpha: f64,
    pub regularizer: Regularizer,
    /// Excess path length of the weight-model ellipse (m).
    pub lambda: f64,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        ImagingConfig {
            alpha: DEFAULT_ALPHA,
            regularizer: Regularizer::default(),
            lambda: DEFAULT_LAMBDA,
        }
    }
}

/// Analysis choices independent of where the trace comes from.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub method: Method,
    /// Pattern-pair selection, directional methods only.
    pub selection: Option<SelectionMethod>,
    pub window: usize,
    pub tracking: KalmanParams,
    pub cdf_levels: Vec<f64>,
    pub sweep_thresholds: usize,
}

impl AnalysisSettings {
    pub fn new(method: Method) -> Self {
        AnalysisSettings {
            method,
            selection: method.is_directional().then_some(SelectionMethod::All),
            window: DEFAULT_WINDOW,
            tracking: KalmanParams::default(),
            cdf_levels: default_cdf_levels(),
            sweep_thresholds: DEFAULT_SWEEP_THRESHOLDS,
        }
    }

    pub fn with_selection(mut self, selection: SelectionMethod) -> Self {
        self.selection = Some(selection);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Scenario file, or `builtin:<name>`.
    pub scenario: String,
    pub method: Method,
    pub selection: Option<SelectionMethod>,
    /// Channels for the multi-channel methods.
    pub channels: Vec<u8>,
    pub imaging: ImagingConfig,
    pub tracking: KalmanParams,
    pub window: usize,
    pub output: PathBuf,
    pub seed: u64,
    pub sweep_thresholds: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: String,
    method: String,
    selection: Option<String>,
    channels: Option<Vec<u8>>,
    #[serde(default)]
    imaging: ImagingConfig,
    #[serde(default)]
    tracking: KalmanParams,
    window: Option<usize>,
    output: PathBuf,
    #[serde(default)]
    seed: u64,
    sweep_thresholds: Option<usize>,
}

/// Seed from the `RTI_SEED` environment variable, if set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            v.trim().parse().map(Some).map_err(|_| {
                RtiError::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))
            })
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(RtiError::Config(format!("{SEED_ENV}: {e}"))),
    }
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn new(scenario: impl Into<String>, method: Method, output: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            scenario: scenario.into(),
            method,
            selection: method.is_directional().then_some(SelectionMethod::All),
            channels: DEFAULT_CHANNELS.to_vec(),
            imaging: ImagingConfig::default(),
            tracking: KalmanParams::default(),
            window: DEFAULT_WINDOW,
            output: output.into(),
            seed: 0,
            sweep_thresholds: DEFAULT_SWEEP_THRESHOLDS,
        }
    }

    /// Parses TOML; relative file paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: ConfigFile = toml::from_str(text).map_err(|e| RtiError::Config(e.to_string()))?;
        let method: Method = raw.method.parse()?;
        let selection = match raw.selection {
            Some(s) => Some(s.parse::<SelectionMethod>()?),
            None => None,
        };
        if selection.is_some() && !method.is_directional() {
            return Err(RtiError::Config(format!(
                "selection only applies to dRTI methods, not {method}"
            )));
        }
        let scenario = if raw.scenario.starts_with(BUILTIN_PREFIX) {
            raw.scenario
        } else {
            resolve_path(base_dir, Path::new(&raw.scenario))
                .display()
                .to_string()
        };
        let config = ExperimentConfig {
            scenario,
            method,
            selection: selection.or(method.is_directional().then_some(SelectionMethod::All)),
            channels: raw.channels.unwrap_or_else(|| DEFAULT_CHANNELS.to_vec()),
            imaging: raw.imaging,
            tracking: raw.tracking,
            window: raw.window.unwrap_or(DEFAULT_WINDOW),
            output: resolve_path(base_dir, &raw.output),
            seed: raw.seed,
            sweep_thresholds: raw.sweep_thresholds.unwrap_or(DEFAULT_SWEEP_THRESHOLDS),
        };
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file and applies the `RTI_SEED` override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| RtiError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut config = ExperimentConfig::parse(&text, base)?;
        if let Some(seed) = seed_from_env()? {
            config.seed = seed;
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RtiError::Config(m));
        match (self.method.is_directional(), &self.selection) {
            (true, Some(s)) => s.validate()?,
            (true, None) => return bad(format!("{} needs a selection method", self.method)),
            (false, Some(_)) => {
                return bad(format!(
                    "selection only applies to dRTI methods, not {}",
                    self.method
                ))
            }
            (false, None) => {}
        }
        if self.method.is_multichannel() {
            if self.channels.is_empty() {
                return bad("cRTI needs at least one channel".into());
            }
            if let Some(c) = self.channels.iter().find(|c| !ALLOWED_CHANNELS.contains(c)) {
                return bad(format!("channel {c} not in {ALLOWED_CHANNELS:?}"));
            }
        }
        if self.window < 2 {
            return bad(format!("window must be at least 2, got {}", self.window));
        }
        if !(self.imaging.alpha.is_finite() && self.imaging.alpha > 0.0) {
            return bad(format!(
                "imaging alpha must be positive, got {}",
                self.imaging.alpha
            ));
        }
        if !(self.imaging.lambda.is_finite() && self.imaging.lambda > 0.0) {
            return bad(format!(
                "imaging lambda must be positive, got {}",
                self.imaging.lambda
            ));
        }
        self.tracking
            .validate()
            .map_err(|e| RtiError::Config(e.to_string()))?;
        if self.sweep_thresholds == 0 {
            return bad("sweep_thresholds must be at least 1".into());
        }
        Ok(())
    }

    pub fn analysis_settings(&self) -> AnalysisSettings {
        AnalysisSettings {
            method: self.method,
            selection: self.selection,
            window: self.window,
            tracking: self.tracking,
            cdf_levels: default_cdf_levels(),
            sweep_thresholds: self.sweep_thresholds,
        }
    }
}

/// Loads a scenario file or a `builtin:<name>` scenario.
pub fn resolve_scenario(spec: &str) -> Result<(Scenario, PropagationParams)> {
    match spec.strip_prefix(BUILTIN_PREFIX) {
        Some(name) => scenarios::builtin(name, 0),
        None => load_scenario(Path::new(spec)).map_err(|e| match e {
            RtiError::Io(io) => RtiError::Config(format!("cannot read scenario {spec}: {io}")),
            other => other,
        }),
    }
}

/// Weight matrix and projection shared by every frame of a scenario.
#[derive(Debug, Clone)]
pub struct ImagingSetup {
    pub weights: WeightMatrix,
    pub reconstructor: Reconstructor,
}

pub fn prepare_imaging(scenario: &Scenario, imaging: &ImagingConfig) -> Result<ImagingSetup> {
    let weights = build_weight_matrix(&scenario.grid, &scenario.layout, imaging.lambda)?;
    let reconstructor =
        Reconstructor::for_grid(&weights, &scenario.grid, imaging.alpha, imaging.regularizer)?;
    Ok(ImagingSetup {
        weights,
        reconstructor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub level_m: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ticks: usize,
    pub first_tick: u32,
    pub last_tick: u32,
    /// Kalman-filtered RMSE with the `t_d - t_c` normalization.
    pub rmse_m: f64,
    pub rmse_sample_count_m: f64,
    /// RMSE of the unfiltered per-frame argmax.
    pub rmse_raw_m: f64,
    pub mean_error_m: f64,
    pub p90_error_m: f64,
    pub cdf: Vec<CdfPoint>,
    pub attenuation: Vec<AttenuationRate>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    /// Streams summed for each link, in layout link order.
    pub streams: Vec<Vec<StreamKey>>,
    pub selection: Option<SelectionResult>,
    pub calibration: CalibrationTable,
    pub stats: Vec<LinkStatVector>,
    pub frames: Vec<ImageFrame>,
    pub raw: Vec<Point2>,
    pub estimates: Vec<Point2>,
    pub truth: Vec<TruthSample>,
    pub errors: Vec<f64>,
    pub metrics: Metrics,
}

impl Analysis {
    pub fn trajectory_rows(&self) -> Vec<TrajectoryRow> {
        self.truth
            .iter()
            .zip(&self.estimates)
            .zip(&self.errors)
            .map(|((t, &estimate), &error)| TrajectoryRow {
                tick: t.tick,
                estimate,
                truth: t.position,
                error,
            })
            .collect()
    }
}

fn method_streams(
    scenario: &Scenario,
    sim: &SimulationOutput,
    settings: &AnalysisSettings,
    calibration: &CalibrationTable,
) -> Result<(Vec<Vec<StreamKey>>, Option<SelectionResult>)> {
    let (c1, c2) = scenario.calibration_ticks();
    let links = scenario.layout.links();
    let calibrated = |link, keys: Vec<StreamKey>| -> Vec<StreamKey> {
        keys.into_iter()
            .filter(|&key| calibration.contains(&StreamId { link, key }))
            .collect()
    };
    if settings.method.is_directional() {
        let method = settings.selection.ok_or_else(|| {
            RtiError::Config(format!("{} needs a selection method", settings.method))
        })?;
        let chosen = select_all_links(method, &scenario.layout, &sim.trace, c1, c2)?;
        let mut streams = Vec::with_capacity(links.len());
        let mut used = Vec::with_capacity(links.len());
        for ls in &chosen.links {
            let keys = calibrated(
                ls.link,
                ls.pairs.iter().copied().map(StreamKey::Pattern).collect(),
            );
            if keys.len() < ls.pairs.len() {
                warn!(
                    "link {}: {} selected pair(s) lack calibration",
                    ls.link,
                    ls.pairs.len() - keys.len()
                );
            }
            used.push(LinkSelection {
                link: ls.link,
                pairs: keys
                    .iter()
                    .filter_map(|k| match k {
                        StreamKey::Pattern(p) => Some(*p),
                        _ => None,
                    })
                    .collect(),
            });
            streams.push(keys);
        }
        Ok((
            streams,
            Some(SelectionResult {
                method,
                links: used,
            }),
        ))
    } else {
        let keys: Vec<StreamKey> = match &scenario.mode {
            SimMode::MultiChannel { channels } if settings.method.is_multichannel() => {
                channels.iter().map(|&c| StreamKey::Channel(c)).collect()
            }
            SimMode::Omni if !settings.method.is_multichannel() => vec![StreamKey::Omni],
            other => {
                return Err(RtiError::Config(format!(
                    "{} cannot run on a {} trace",
                    settings.method,
                    other.name()
                )))
            }
        };
        let streams = links.iter().map(|&l| calibrated(l, keys.clone())).collect();
        Ok((streams, None))
    }
}

/// Calibrates on the empty-area rounds, selects streams, computes per-tick
/// statistics over the tracking rounds, reconstructs and tracks.
pub fn analyze(
    scenario: &Scenario,
    params: &PropagationParams,
    sim: &SimulationOutput,
    imaging: &ImagingSetup,
    settings: &AnalysisSettings,
) -> Result<Analysis> {
    if settings.method.is_directional() != matches!(scenario.mode, SimMode::Directional) {
        return Err(RtiError::Config(format!(
            "{} cannot run on a {} trace",
            settings.method,
            scenario.mode.name()
        )));
    }
    let (c1, c2) = scenario.calibration_ticks();
    let (calibration, missing) =
        calibrate_lenient(&sim.trace, c1, c2).map_err(|e| e.in_phase("calibrate"))?;
    if !missing.is_empty() {
        warn!(
            "{} stream(s) received nothing during calibration and are ignored",
            missing.len()
        );
    }
    let (streams, selection) =
        method_streams(scenario, sim, settings, &calibration).map_err(|e| e.in_phase("select"))?;

    let (t1, t2) = scenario.tracking_ticks();
    let table = StreamTable::from_trace(&sim.trace, scenario.total_ticks());
    let stats = link_statistics(
        scenario.layout.links(),
        &streams,
        &table,
        &calibration,
        t1..=t2,
        settings.method.kind(),
        settings.window,
    )
    .map_err(|e| e.in_phase("statistics"))?;

    let mut frames = Vec::with_capacity(stats.len());
    let mut raw = Vec::with_capacity(stats.len());
    for y in &stats {
        let frame = imaging
            .reconstructor
            .reconstruct(y)
            .map_err(|e| e.in_phase("reconstruct"))?;
        raw.push(argmax_voxel(&frame, &scenario.grid).map_err(|e| e.in_phase("reconstruct"))?);
        frames.push(frame);
    }

    let mut tracker = KalmanTracker::new(settings.tracking).map_err(|e| e.in_phase("track"))?;
    let estimates = raw
        .iter()
        .zip(&stats)
        .map(|(&m, y)| tracker.update(m, y.time))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_phase("track"))?;

    let truth = sim.truth.clone();
    let positions: Vec<Point2> = truth.iter().map(|t| t.position).collect();
    let metrics_err = |e: RtiError| e.in_phase("metrics");
    let errors = tracking_errors(&estimates, &positions).map_err(metrics_err)?;
    let raw_errors = tracking_errors(&raw, &positions).map_err(metrics_err)?;
    let cdf = error_cdf(&errors, &settings.cdf_levels).map_err(metrics_err)?;
    let obstructed =
        obstruction_truth(&scenario.layout, &truth, params.person_lambda_m).map_err(metrics_err)?;
    let thresholds = quantile_thresholds(&stats, settings.sweep_thresholds);
    let attenuation = attenuation_sweep(&stats, &obstructed, &thresholds).map_err(metrics_err)?;
    let metrics = Metrics {
        ticks: errors.len(),
        first_tick: t1,
        last_tick: t2,
        rmse_m: rmse_from_errors(&errors, RmseNormalization::Printed).map_err(metrics_err)?,
        rmse_sample_count_m: rmse_from_errors(&errors, RmseNormalization::SampleCount)
            .map_err(metrics_err)?,
        rmse_raw_m: rmse_from_errors(&raw_errors, RmseNormalization::Printed)
            .map_err(metrics_err)?,
        mean_error_m: errors.iter().sum::<f64>() / errors.len() as f64,
        p90_error_m: percentile(&errors, 90.0).map_err(metrics_err)?,
        cdf: settings
            .cdf_levels
            .iter()
            .zip(cdf)
            .map(|(&level_m, probability)| CdfPoint {
                level_m,
                probability,
            })
            .collect(),
        attenuation,
    };
    Ok(Analysis {
        streams,
        selection,
        calibration,
        stats,
        frames,
        raw,
        estimates,
        truth,
        errors,
        metrics,
    })
}

/// Simulates `scenario` in the radio mode `settings.method` needs and analyzes it.
pub fn simulate_and_analyze(
    scenario: &Scenario,
    params: &PropagationParams,
    imaging: &ImagingSetup,
    settings: &AnalysisSettings,
    channels: &[u8],
) -> Result<(SimulationOutput, Analysis)> {
    let scenario = scenario.with_mode(settings.method.sim_mode(channels));
    let sim = simulate(&scenario, params).map_err(|e| e.in_phase("simulate"))?;
    let analysis = analyze(&scenario, params, &sim, imaging, settings)?;
    Ok((sim, analysis))
}

/// Mean per-stream window variance over every (link, tracking tick) where
/// the person obstructs the link. Each stream counts once, so a directional
/// trace averages over its pattern pairs.
pub fn obstructed_stream_variance(
    scenario: &Scenario,
    params: &PropagationParams,
    sim: &SimulationOutput,
    window: usize,
) -> Result<f64> {
    let obstructed = obstruction_truth(&scenario.layout, &sim.truth, params.person_lambda_m)?;
    let table = StreamTable::from_trace(&sim.trace, scenario.total_ticks());
    let links = scenario.layout.links();
    let mut terms = Vec::new();
    for id in table.streams() {
        let Some(li) = links.iter().position(|&l| l == id.link) else {
            continue;
        };
        for (sample, row) in sim.truth.iter().zip(&obstructed) {
            if row[li] {
                let w = table.window(id, sample.tick, window);
                if w.len() >= 2 {
                    terms.push(vrti_stat(&w)?);
                }
            }
        }
    }
    if terms.is_empty() {
        return Err(RtiError::invalid("the person never obstructs a link"));
    }
    let n = terms.len() as f64;
    Ok(stable_sum(&mut terms) / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub scenario: String,
    pub method: String,
    pub selection: Option<String>,
    pub channels: Option<Vec<u8>>,
    pub imaging: ImagingConfig,
    pub tracking: KalmanParams,
    pub window: usize,
    pub output: String,
    pub seed: u64,
    pub sweep_thresholds: usize,
    pub rmse_normalization: RmseNormalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEcho {
    pub name: String,
    pub mode: String,
    pub nodes: usize,
    pub links: usize,
    pub grid_width_voxels: usize,
    pub grid_height_voxels: usize,
    pub voxel_width_m: f64,
    pub walls: usize,
    pub calibration_rounds: u32,
    pub rounds: u32,
    pub trajectory_speed: f64,
    pub propagation: PropagationParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ConfigEcho,
    pub scenario: ScenarioEcho,
    pub metrics: Metrics,
}

pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SELECTION_FILE: &str = "selection.txt";
pub const STREAMS_FILE: &str = "streams.txt";
pub const FRAMES_DIR: &str = "frames";

impl Report {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| RtiError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| RtiError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| RtiError::InvalidArgument(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let s = &self.scenario;
        let m = &self.metrics;
        let mut out = String::new();
        out.push_str(&format!(
            "scenario      {} ({} mode, {} nodes, {} links)\n",
            s.name, s.mode, s.nodes, s.links
        ));
        out.push_str(&format!("method        {}", c.method));
        if let Some(sel) = &c.selection {
            out.push_str(&format!(" / {sel}"));
        }
        out.push('\n');
        out.push_str(&format!(
            "imaging       alpha {} {} lambda {} m, grid {}x{} @ {} m\n",
            c.imaging.alpha,
            c.imaging.regularizer,
            c.imaging.lambda,
            s.grid_width_voxels,
            s.grid_height_voxels,
            s.voxel_width_m
        ));
        out.push_str(&format!(
            "tracking      q {} r {}, window {}\n",
            c.tracking.q, c.tracking.r, c.window
        ));
        out.push_str(&format!("seed          {}\n", c.seed));
        out.push_str(&format!(
            "ticks         {} ({}..={})\n",
            m.ticks, m.first_tick, m.last_tick
        ));
        out.push_str(&format!("rmse          {:.4} m\n", m.rmse_m));
        out.push_str(&format!("rmse (n)      {:.4} m\n", m.rmse_sample_count_m));
        out.push_str(&format!("rmse raw      {:.4} m\n", m.rmse_raw_m));
        out.push_str(&format!("mean error    {:.4} m\n", m.mean_error_m));
        out.push_str(&format!("p90 error     {:.4} m\n", m.p90_error_m));
        out.push_str("cdf          ");
        for p in m
            .cdf
            .iter()
            .filter(|p| ((p.level_m * 10.0).round() as i64) % 5 == 0)
        {
            out.push_str(&format!(" {:.1}:{:.3}", p.level_m, p.probability));
        }
        out.push('\n');
        out
    }

    /// `key,value` rows.
    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let m = &self.metrics;
        let mut rows: Vec<(String, String)> = vec![
            ("scenario".into(), self.scenario.name.clone()),
            ("method".into(), c.method.clone()),
            ("selection".into(), c.selection.clone().unwrap_or_default()),
            ("alpha".into(), c.imaging.alpha.to_string()),
            ("regularizer".into(), c.imaging.regularizer.to_string()),
            ("lambda".into(), c.imaging.lambda.to_string()),
            ("q".into(), c.tracking.q.to_string()),
            ("r".into(), c.tracking.r.to_string()),
            ("window".into(), c.window.to_string()),
            ("seed".into(), c.seed.to_string()),
            ("ticks".into(), m.ticks.to_string()),
            ("rmse_m".into(), m.rmse_m.to_string()),
            (
                "rmse_sample_count_m".into(),
                m.rmse_sample_count_m.to_string(),
            ),
            ("rmse_raw_m".into(), m.rmse_raw_m.to_string()),
            ("mean_error_m".into(), m.mean_error_m.to_string()),
            ("p90_error_m".into(), m.p90_error_m.to_string()),
        ];
        for p in &m.cdf {
            rows.push((format!("cdf_{:.1}", p.level_m), p.probability.to_string()));
        }
        let mut out = String::from("key,value\n");
        for (k, v) in rows {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }
}

pub fn build_report(
    config: &ExperimentConfig,
    scenario: &Scenario,
    params: &PropagationParams,
    metrics: Metrics,
) -> Report {
    Report {
        config: ConfigEcho {
            scenario: config.scenario.clone(),
            method: config.method.name().to_string(),
            selection: config.selection.map(|s| s.to_string()),
            channels: config
                .method
                .is_multichannel()
                .then(|| config.channels.clone()),
            imaging: config.imaging,
            tracking: config.tracking,
            window: config.window,
            output: config.output.display().to_string(),
            seed: config.seed,
            sweep_thresholds: config.sweep_thresholds,
            rmse_normalization: RmseNormalization::Printed,
        },
        scenario: ScenarioEcho {
            name: scenario.name.clone(),
            mode: scenario.mode.name().to_string(),
            nodes: scenario.layout.nodes().len(),
            links: scenario.layout.links().len(),
            grid_width_voxels: scenario.grid.width_voxels,
            grid_height_voxels: scenario.grid.height_voxels,
            voxel_width_m: scenario.grid.voxel_width,
            walls: scenario.walls.len(),
            calibration_rounds: scenario.calibration_rounds,
            rounds: scenario.rounds,
            trajectory_speed: scenario.trajectory.speed,
            propagation: *params,
        },
        metrics,
    }
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Writes `trace.csv` and `truth.csv`.
pub fn write_simulation(sim: &SimulationOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    sim.trace.write(&dir.join(TRACE_FILE))?;
    write_truth(&sim.truth, create_file(&dir.join(TRUTH_FILE))?)?;
    Ok(())
}

fn write_analysis(scenario: &Scenario, analysis: &Analysis, dir: &Path) -> Result<()> {
    let mut streams = String::new();
    for (link, keys) in scenario.layout.links().iter().zip(&analysis.streams) {
        streams.push_str(&format!("link {} {} streams", link.tx, link.rx));
        for k in keys {
            streams.push_str(&format!(" {k}"));
        }
        streams.push('\n');
    }
    fs::write(dir.join(STREAMS_FILE), streams)?;
    if let Some(sel) = &analysis.selection {
        fs::write(dir.join(SELECTION_FILE), sel.to_text())?;
    }
    let frames = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames)?;
    for frame in &analysis.frames {
        let stem = format!("frame_{:06}", frame.time);
        frame.write_csv(
            &scenario.grid,
            create_file(&frames.join(format!("{stem}.csv")))?,
        )?;
        frame.write_pgm(
            &scenario.grid,
            create_file(&frames.join(format!("{stem}.pgm")))?,
        )?;
    }
    write_trajectory(
        &analysis.trajectory_rows(),
        create_file(&dir.join(TRAJECTORY_FILE))?,
    )?;
    Ok(())
}

/// Full experiment: load, simulate, analyze and write every output file.
/// Files of completed phases stay on disk when a later phase fails.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let (base, params) = resolve_scenario(&config.scenario).map_err(|e| e.in_phase("load"))?;
    let scenario = Scenario {
        seed: config.seed,
        ..base.with_mode(config.method.sim_mode(&config.channels))
    };
    scenario.validate().map_err(|e| e.in_phase("load"))?;
    info!(
        "simulating {} ({} mode, seed {})",
        scenario.name,
        scenario.mode.name(),
        scenario.seed
    );
    let sim = simulate(&scenario, &params).map_err(|e| e.in_phase("simulate"))?;
    write_simulation(&sim, &config.output).map_err(|e| e.in_phase("write"))?;

    let imaging = prepare_imaging(&scenario, &config.imaging).map_err(|e| e.in_phase("imaging"))?;
    let analysis = analyze(
        &scenario,
        &params,
        &sim,
        &imaging,
        &config.analysis_settings(),
    )?;
    write_analysis(&scenario, &analysis, &config.output).map_err(|e| e.in_phase("write"))?;

    let report = build_report(config, &scenario, &params, analysis.metrics.clone());
    let json = report.to_json().map_err(|e| e.in_phase("write"))?;
    fs::write(config.output.join(REPORT_FILE), json + "\n")
        .map_err(|e| RtiError::from(e).in_phase("write"))?;
    info!(
        "rmse {:.3} m, wrote {}",
        report.metrics.rmse_m,
        config.output.display()
    );
    Ok(report)
}
