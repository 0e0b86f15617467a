//! Seeded RSS trace generator for omni, multi-channel and directional
//! networks with walls and one moving person.
//!
//! Received power per stream and packet:
//!
//! ```text
//! P_rx = P_tx + g_tx + g_rx - L(d) - S_walls - S_person + F + W + n
//! ```
//!
//! `F` is a static per-stream fading draw whose spread shrinks with the
//! combined directivity of the pattern pair. `S_person` applies the body loss
//! only to the line-of-sight share of the received power, so a stream with a
//! strong multipath share (large fading spread) sees a smaller drop; it is
//! redrawn every round per stream, and `shadow_phase_mix` lets it swing to a
//! rise depending on where in the ellipse the person stands. `W` is scatter
//! from motion near, but not on, the link, and only streams sitting in a
//! fade pick it up. `n` is white measurement noise.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};
use crate::geometry::{
    angle_to_link, build_grid, in_ellipse, segments_intersect, Link, NetworkLayout, NodeSpec,
    PatternPair, Point2, VoxelGrid,
};
use crate::trace::{RssRecord, RssTrace, StreamKey, TruthSample};

/// Channels the hardware can be tuned to.
pub const ALLOWED_CHANNELS: [u8; 5] = [11, 15, 18, 21, 26];
pub const DEFAULT_CHANNELS: [u8; 4] = [11, 15, 18, 21];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationParams {
    /// Path loss at 1 m (dB).
    pub reference_loss_db: f64,
    pub path_loss_exponent: f64,
    pub tx_power_dbm: f64,
    /// Body loss of a person standing in a link's ellipse (dB).
    pub person_loss_db: f64,
    /// Excess path length of the body-shadowing ellipse (m).
    pub person_lambda_m: f64,
    /// Fading spread for omni antennas (dB).
    pub fading_std_db: f64,
    /// Fractional fading reduction per unit of combined directivity.
    pub fading_reduction: f64,
    pub noise_std_db: f64,
    pub sensitivity_dbm: f64,
    /// Slope of the packet-reception sigmoid (1/dB).
    pub prr_slope: f64,
    /// Fading spread at which multipath power equals line-of-sight power.
    /// Zero disables the split and applies the full body loss to every stream.
    pub multipath_reference_std_db: f64,
    /// Per-tick spread of the body loss while obstructing (dB).
    pub body_jitter_db: f64,
    /// Scatter amplitude per dB of fade depth below the stream's mean.
    pub scatter_gain: f64,
    /// Excess path length over which scatter decays by 1/e (m).
    pub scatter_range_m: f64,
    /// Spatial period of the scatter pattern (m).
    pub scatter_wavelength_m: f64,
    /// Share of the body effect that turns into a position-dependent rise or
    /// fall, in [0, 1]. Zero is plain shadowing.
    pub shadow_phase_mix: f64,
    /// Spatial period of that rise and fall (m).
    pub shadow_wavelength_m: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        PropagationParams {
            reference_loss_db: 40.0,
            path_loss_exponent: 2.5,
            tx_power_dbm: 0.0,
            person_loss_db: 7.0,
            person_lambda_m: 0.5,
            fading_std_db: 6.0,
            fading_reduction: 0.6,
            noise_std_db: 1.5,
            sensitivity_dbm: -94.0,
            prr_slope: 1.0,
            multipath_reference_std_db: 9.0,
            body_jitter_db: 4.0,
            scatter_gain: 0.3,
            scatter_range_m: 3.0,
            scatter_wavelength_m: 2.0,
            shadow_phase_mix: 0.0,
            shadow_wavelength_m: 1.0,
        }
    }
}

impl PropagationParams {
    /// Pure path loss with every random and person-related term disabled.
    pub fn deterministic() -> Self {
        PropagationParams {
            fading_std_db: 0.0,
            noise_std_db: 0.0,
            multipath_reference_std_db: 0.0,
            body_jitter_db: 0.0,
            scatter_gain: 0.0,
            shadow_phase_mix: 0.0,
            ..PropagationParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RtiError::InvalidScenario(m));
        let finite = [
            self.reference_loss_db,
            self.path_loss_exponent,
            self.tx_power_dbm,
            self.person_loss_db,
            self.person_lambda_m,
            self.fading_std_db,
            self.fading_reduction,
            self.noise_std_db,
            self.sensitivity_dbm,
            self.prr_slope,
            self.multipath_reference_std_db,
            self.body_jitter_db,
            self.scatter_gain,
            self.scatter_range_m,
            self.scatter_wavelength_m,
            self.shadow_phase_mix,
            self.shadow_wavelength_m,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("propagation parameters must be finite".into());
        }
        if self.path_loss_exponent < 1.0 {
            return bad(format!(
                "path-loss exponent {} < 1",
                self.path_loss_exponent
            ));
        }
        if !(0.0..=1.0).contains(&self.shadow_phase_mix) {
            return bad(format!(
                "shadow phase mix {} outside [0, 1]",
                self.shadow_phase_mix
            ));
        }
        if !(0.0..=1.0).contains(&self.fading_reduction) {
            return bad(format!(
                "fading reduction {} outside [0, 1]",
                self.fading_reduction
            ));
        }
        for (name, v) in [
            ("fading std", self.fading_std_db),
            ("noise std", self.noise_std_db),
            ("person loss", self.person_loss_db),
            ("person lambda", self.person_lambda_m),
            ("multipath reference std", self.multipath_reference_std_db),
            ("body jitter", self.body_jitter_db),
            ("scatter gain", self.scatter_gain),
        ] {
            if v < 0.0 {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if self.prr_slope <= 0.0
            || self.scatter_range_m <= 0.0
            || self.scatter_wavelength_m <= 0.0
            || self.shadow_wavelength_m <= 0.0
        {
            return bad("PRR slope, scatter range and the wavelengths must be positive".into());
        }
        Ok(())
    }

    pub fn path_loss_db(&self, distance_m: f64) -> f64 {
        self.reference_loss_db + 10.0 * self.path_loss_exponent * distance_m.max(1e-3).log10()
    }

    /// Fading spread of a stream with combined directivity `d`.
    pub fn fading_std_for(&self, directivity: f64) -> f64 {
        self.fading_std_db * (1.0 - self.fading_reduction * directivity)
    }

    /// Multipath-to-LOS power ratio of a stream with fading spread `std_db`.
    pub fn multipath_ratio(&self, std_db: f64) -> f64 {
        if self.multipath_reference_std_db > 0.0 {
            (std_db / self.multipath_reference_std_db).powi(2)
        } else {
            0.0
        }
    }

    pub fn prr(&self, rx_power_dbm: f64) -> f64 {
        1.0 / (1.0 + (-(rx_power_dbm - self.sensitivity_dbm) * self.prr_slope).exp())
    }
}

/// Drop in dB when the line-of-sight share of the power is attenuated by
/// `loss_db` and the multipath share (ratio `m` to LOS) is untouched.
pub fn body_drop_db(loss_db: f64, m: f64) -> f64 {
    if m == 0.0 {
        return loss_db;
    }
    10.0 * ((1.0 + m) / (10f64.powf(-loss_db / 10.0) + m)).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntennaGainModel {
    pub g_max_db: f64,
    pub g_min_db: f64,
}

impl Default for AntennaGainModel {
    fn default() -> Self {
        AntennaGainModel {
            g_max_db: 7.0,
            g_min_db: -4.0,
        }
    }
}

impl AntennaGainModel {
    /// Raised-cosine gain at relative angle `theta` from boresight.
    pub fn gain(&self, theta: f64) -> f64 {
        self.g_min_db + (self.g_max_db - self.g_min_db) * (1.0 + theta.cos()) / 2.0
    }

    /// Combined directivity in [0, 1] of a pattern pair with gains `g_tx`, `g_rx`.
    pub fn directivity(&self, g_tx: f64, g_rx: f64) -> f64 {
        (g_tx + g_rx - 2.0 * self.g_min_db) / (2.0 * (self.g_max_db - self.g_min_db))
    }
}

pub fn antenna_gain(model: &AntennaGainModel, theta: f64) -> f64 {
    model.gain(theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub a: Point2,
    pub b: Point2,
    pub attenuation_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SimMode {
    Omni,
    MultiChannel {
        channels: Vec<u8>,
    },
    /// Every transmitter direction against every receiver direction.
    Directional,
}

impl SimMode {
    pub fn name(&self) -> &'static str {
        match self {
            SimMode::Omni => "omni",
            SimMode::MultiChannel { .. } => "multichannel",
            SimMode::Directional => "directional",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Point2>,
    /// Metres per tick.
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub layout: NetworkLayout,
    pub grid: VoxelGrid,
    pub walls: Vec<Wall>,
    pub trajectory: Trajectory,
    pub mode: SimMode,
    pub seed: u64,
    /// Tracking rounds with the person present.
    pub rounds: u32,
    /// Leading rounds with an empty area.
    pub calibration_rounds: u32,
    pub antenna: AntennaGainModel,
}

impl Scenario {
    pub fn total_ticks(&self) -> u32 {
        self.calibration_rounds + self.rounds
    }

    /// Inclusive tick range of the calibration phase.
    pub fn calibration_ticks(&self) -> (u32, u32) {
        (0, self.calibration_rounds.saturating_sub(1))
    }

    /// Inclusive tick range of the tracking phase.
    pub fn tracking_ticks(&self) -> (u32, u32) {
        (
            self.calibration_rounds,
            self.total_ticks().saturating_sub(1),
        )
    }

    pub fn with_mode(&self, mode: SimMode) -> Scenario {
        Scenario {
            mode,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RtiError::InvalidScenario(m));
        if self.trajectory.waypoints.is_empty() {
            return bad("trajectory needs at least one waypoint".into());
        }
        if !(self.trajectory.speed.is_finite() && self.trajectory.speed >= 0.0) {
            return bad(format!(
                "trajectory speed {} must be >= 0",
                self.trajectory.speed
            ));
        }
        if let Some(p) = self
            .trajectory
            .waypoints
            .iter()
            .find(|p| !self.grid.contains(**p))
        {
            return bad(format!("waypoint {p} is outside the area of interest"));
        }
        if self.rounds == 0 {
            return bad("at least one tracking round is required".into());
        }
        if self.calibration_rounds < 2 {
            return bad("at least two calibration rounds are required".into());
        }
        if let SimMode::MultiChannel { channels } = &self.mode {
            if channels.is_empty() {
                return bad("multichannel mode needs at least one channel".into());
            }
            if let Some(c) = channels.iter().find(|c| !ALLOWED_CHANNELS.contains(c)) {
                return bad(format!("channel {c} not in {ALLOWED_CHANNELS:?}"));
            }
            let mut sorted = channels.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != channels.len() {
                return bad("duplicate channels".into());
            }
        }
        if let Some(w) = self
            .walls
            .iter()
            .find(|w| !(w.attenuation_db.is_finite() && w.attenuation_db >= 0.0))
        {
            return bad(format!(
                "wall attenuation {} must be >= 0",
                w.attenuation_db
            ));
        }
        Ok(())
    }
}

/// Per-tick positions moving at constant speed along the waypoint polyline,
/// holding the last waypoint once the path is exhausted.
pub fn generate_trajectory(waypoints: &[Point2], speed: f64, rounds: u32) -> Result<Vec<Point2>> {
    if waypoints.is_empty() {
        return Err(RtiError::InvalidScenario(
            "trajectory needs at least one waypoint".into(),
        ));
    }
    let mut out = Vec::with_capacity(rounds as usize);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for t in 0..rounds {
        let s = speed * f64::from(t);
        while seg + 1 < waypoints.len()
            && s > seg_start + waypoints[seg].distance(&waypoints[seg + 1])
        {
            seg_start += waypoints[seg].distance(&waypoints[seg + 1]);
            seg += 1;
        }
        if seg + 1 >= waypoints.len() {
            out.push(*waypoints.last().unwrap());
            continue;
        }
        let len = waypoints[seg].distance(&waypoints[seg + 1]);
        let frac = if len > 0.0 {
            ((s - seg_start) / len).min(1.0)
        } else {
            1.0
        };
        out.push(waypoints[seg].lerp(&waypoints[seg + 1], frac));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub trace: RssTrace,
    /// Person position for each tracking tick.
    pub truth: Vec<TruthSample>,
}

/// Which links the person obstructs at each truth sample, by the
/// body-shadowing ellipse with excess path `lambda`.
pub fn obstruction_truth(
    layout: &NetworkLayout,
    truth: &[TruthSample],
    lambda: f64,
) -> Result<Vec<Vec<bool>>> {
    let ends: Vec<(Point2, Point2)> = layout
        .links()
        .iter()
        .map(|&l| layout.endpoints(l))
        .collect::<Result<_>>()?;
    Ok(truth
        .iter()
        .map(|s| {
            ends.iter()
                .map(|&(a, b)| in_ellipse(a, b, s.position, lambda))
                .collect()
        })
        .collect())
}

struct StreamModel {
    key: StreamKey,
    /// Deterministic part: P_tx + gains - path loss - walls + F.
    static_dbm: f64,
    fading_std: f64,
    fade: f64,
    scatter_dir: (f64, f64),
    scatter_phase: f64,
    shadow_dir: (f64, f64),
    shadow_phase: f64,
    rng: ChaCha8Rng,
    jitter_rng: ChaCha8Rng,
}

struct LinkModel {
    link: Link,
    a: Point2,
    b: Point2,
    streams: Vec<StreamModel>,
}

const DOMAIN_STATIC: u64 = 1;
const DOMAIN_NOISE: u64 = 2;
const DOMAIN_JITTER: u64 = 3;

fn key_code(key: StreamKey) -> u64 {
    match key {
        StreamKey::Omni => 0,
        StreamKey::Channel(c) => 1 + u64::from(c),
        StreamKey::Pattern(p) => {
            (1 << 16) | (u64::from(p.tx_direction) << 8) | u64::from(p.rx_direction)
        }
    }
}

/// Independent generator for one (domain, link, stream) triple.
fn stream_rng(seed: u64, domain: u64, link_index: usize, key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 56) | ((link_index as u64) << 24) | key);
    rng
}

fn stream_keys(mode: &SimMode, tx: &NodeSpec, rx: &NodeSpec) -> Vec<StreamKey> {
    match mode {
        SimMode::Omni => vec![StreamKey::Omni],
        SimMode::MultiChannel { channels } => {
            channels.iter().map(|&c| StreamKey::Channel(c)).collect()
        }
        SimMode::Directional => (1..=tx.num_directions)
            .flat_map(|t| {
                (1..=rx.num_directions).map(move |r| StreamKey::Pattern(PatternPair::new(t, r)))
            })
            .collect(),
    }
}

fn build_link_models(scenario: &Scenario, params: &PropagationParams) -> Result<Vec<LinkModel>> {
    let layout = &scenario.layout;
    let mut models = Vec::with_capacity(layout.links().len());
    for (li, &link) in layout.links().iter().enumerate() {
        let tx = layout.node(link.tx).expect("layout link endpoints exist");
        let rx = layout.node(link.rx).expect("layout link endpoints exist");
        let (a, b) = (tx.position, rx.position);
        let walls: f64 = scenario
            .walls
            .iter()
            .filter(|w| segments_intersect(a, b, w.a, w.b))
            .map(|w| w.attenuation_db)
            .sum();
        let base = params.tx_power_dbm - params.path_loss_db(a.distance(&b)) - walls;
        let mut streams = Vec::new();
        for key in stream_keys(&scenario.mode, tx, rx) {
            let (gains, directivity) = match key {
                StreamKey::Pattern(p) => {
                    let g_tx = scenario.antenna.gain(angle_to_link(tx, p.tx_direction, b)?);
                    let g_rx = scenario.antenna.gain(angle_to_link(rx, p.rx_direction, a)?);
                    (g_tx + g_rx, scenario.antenna.directivity(g_tx, g_rx))
                }
                _ => (0.0, 0.0),
            };
            let fading_std = params.fading_std_for(directivity);
            let mut srng = stream_rng(scenario.seed, DOMAIN_STATIC, li, key_code(key));
            let z: f64 = srng.sample(StandardNormal);
            let fade = fading_std * z;
            let angle = srng.random_range(0.0..2.0 * PI);
            let scatter_phase = srng.random_range(0.0..2.0 * PI);
            let shadow_angle = srng.random_range(0.0..2.0 * PI);
            let shadow_phase = srng.random_range(0.0..2.0 * PI);
            streams.push(StreamModel {
                key,
                static_dbm: base + gains + fade,
                fading_std,
                fade,
                scatter_dir: (angle.cos(), angle.sin()),
                scatter_phase,
                shadow_dir: (shadow_angle.cos(), shadow_angle.sin()),
                shadow_phase,
                rng: stream_rng(scenario.seed, DOMAIN_NOISE, li, key_code(key)),
                jitter_rng: stream_rng(scenario.seed, DOMAIN_JITTER, li, key_code(key)),
            });
        }
        models.push(LinkModel {
            link,
            a,
            b,
            streams,
        });
    }
    Ok(models)
}

/// Generates the calibration rounds (empty area) followed by the tracking
/// rounds, and the person's position for every tracking tick.
pub fn simulate(scenario: &Scenario, params: &PropagationParams) -> Result<SimulationOutput> {
    scenario.validate()?;
    params.validate()?;
    let path = generate_trajectory(
        &scenario.trajectory.waypoints,
        scenario.trajectory.speed,
        scenario.rounds,
    )?;
    let mut links = build_link_models(scenario, params)?;
    let noise = Normal::new(0.0, params.noise_std_db)
        .map_err(|e| RtiError::InvalidScenario(e.to_string()))?;
    let jitter = Normal::new(0.0, params.body_jitter_db)
        .map_err(|e| RtiError::InvalidScenario(e.to_string()))?;
    let k_spatial = 2.0 * PI / params.scatter_wavelength_m;
    let k_shadow = 2.0 * PI / params.shadow_wavelength_m;

    // Links grouped by transmitter in layout node order for the TDMA schedule.
    let node_ids: Vec<u32> = scenario.layout.nodes().iter().map(|n| n.id).collect();
    let mut seq = vec![0u32; node_ids.len()];
    let mut records = Vec::new();
    let mut truth = Vec::with_capacity(scenario.rounds as usize);

    for tick in 0..scenario.total_ticks() {
        let person = tick
            .checked_sub(scenario.calibration_rounds)
            .map(|k| path[k as usize]);
        if let Some(p) = person {
            truth.push(TruthSample { tick, position: p });
        }

        // Person-dependent offset per stream, computed once per round.
        let mut offsets: Vec<Vec<f64>> = Vec::with_capacity(links.len());
        for lm in links.iter_mut() {
            let mut row = vec![0.0; lm.streams.len()];
            if let Some(p) = person {
                let excess = p.distance(&lm.a) + p.distance(&lm.b) - lm.a.distance(&lm.b);
                let obstructed = in_ellipse(lm.a, lm.b, p, params.person_lambda_m);
                let decay = (-excess / params.scatter_range_m).exp();
                let mix = params.shadow_phase_mix;
                for (s, off) in lm.streams.iter_mut().zip(row.iter_mut()) {
                    *off = if obstructed {
                        let loss =
                            (params.person_loss_db + jitter.sample(&mut s.jitter_rng)).max(0.0);
                        let phase = k_shadow * (s.shadow_dir.0 * p.x + s.shadow_dir.1 * p.y)
                            + s.shadow_phase;
                        -body_drop_db(loss, params.multipath_ratio(s.fading_std))
                            * (1.0 - mix + mix * phase.cos())
                    } else if params.scatter_gain > 0.0 {
                        // Only streams sitting in a fade react to motion off the link.
                        let phase = k_spatial * (s.scatter_dir.0 * p.x + s.scatter_dir.1 * p.y)
                            + s.scatter_phase;
                        params.scatter_gain * (-s.fade).max(0.0) * phase.sin() * decay
                    } else {
                        0.0
                    };
                }
            }
            offsets.push(row);
        }

        for (ti, &tx_id) in node_ids.iter().enumerate() {
            let tx_links: Vec<usize> = (0..links.len())
                .filter(|&i| links[i].link.tx == tx_id)
                .collect();
            let Some(&first) = tx_links.first() else {
                continue;
            };
            // Every receiver hears the same broadcast packets, so stream j of
            // each link corresponds to the same transmitted packet.
            #[allow(clippy::needless_range_loop)]
            for j in 0..links[first].streams.len() {
                seq[ti] = seq[ti].wrapping_add(1);
                for &li in &tx_links {
                    let lm = &mut links[li];
                    let off = offsets[li][j];
                    let s = &mut lm.streams[j];
                    let p_rx = s.static_dbm + off + noise.sample(&mut s.rng);
                    let received = s.rng.random_bool(params.prr(p_rx).clamp(0.0, 1.0));
                    records.push(RssRecord {
                        tick,
                        tx_id,
                        rx_id: lm.link.rx,
                        key: s.key,
                        tx_power_dbm: params.tx_power_dbm,
                        seq: seq[ti],
                        rssi_dbm: received.then_some(p_rx),
                    });
                }
            }
        }
    }
    Ok(SimulationOutput {
        trace: RssTrace::new(records),
        truth,
    })
}

// ---------------------------------------------------------------------------
// Scenario files

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: u32,
    x: f64,
    y: f64,
    /// Bearing of direction 1 in degrees.
    #[serde(default)]
    bearing_deg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AreaEntry {
    origin: [f64; 2],
    width: f64,
    height: f64,
    #[serde(default = "default_voxel_width")]
    voxel_width: f64,
}

fn default_voxel_width() -> f64 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WallEntry {
    a: [f64; 2],
    b: [f64; 2],
    attenuation_db: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryEntry {
    waypoints: Vec<[f64; 2]>,
    speed: f64,
}

/// On-disk scenario description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    name: String,
    #[serde(default)]
    seed: u64,
    rounds: u32,
    calibration_rounds: u32,
    /// `omni`, `multichannel` or `directional`.
    mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channels: Option<Vec<u8>>,
    /// Layout text file, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layout: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    nodes: Vec<NodeEntry>,
    area: AreaEntry,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    walls: Vec<WallEntry>,
    trajectory: TrajectoryEntry,
    #[serde(default)]
    propagation: PropagationParams,
}

fn pt(v: [f64; 2]) -> Point2 {
    Point2::new(v[0], v[1])
}

pub fn parse_mode(mode: &str, channels: Option<Vec<u8>>) -> Result<SimMode> {
    match mode.trim().to_ascii_lowercase().as_str() {
        "omni" => Ok(SimMode::Omni),
        "multichannel" => Ok(SimMode::MultiChannel {
            channels: channels.unwrap_or_else(|| DEFAULT_CHANNELS.to_vec()),
        }),
        "directional" => Ok(SimMode::Directional),
        other => Err(RtiError::InvalidScenario(format!("unknown mode `{other}`"))),
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| RtiError::InvalidScenario(e.to_string()))
    }

    /// Resolves the layout (relative to `base_dir`) and checks the result.
    pub fn resolve(self, base_dir: &Path) -> Result<(Scenario, PropagationParams)> {
        let layout = match (&self.layout, self.nodes.is_empty()) {
            (Some(_), false) => {
                return Err(RtiError::InvalidScenario(
                    "give either `layout` or `nodes`, not both".into(),
                ))
            }
            (Some(path), true) => NetworkLayout::read(&base_dir.join(path))?,
            (None, false) => NetworkLayout::new(
                self.nodes
                    .iter()
                    .map(|n| NodeSpec::new(n.id, Point2::new(n.x, n.y), n.bearing_deg.to_radians()))
                    .collect(),
            )?,
            (None, true) => return Err(RtiError::InvalidScenario("scenario has no nodes".into())),
        };
        let grid = build_grid(
            pt(self.area.origin),
            self.area.width,
            self.area.height,
            self.area.voxel_width,
        )
        .map_err(|e| RtiError::InvalidScenario(e.to_string()))?;
        let scenario = Scenario {
            name: self.name,
            layout,
            grid,
            walls: self
                .walls
                .iter()
                .map(|w| Wall {
                    a: pt(w.a),
                    b: pt(w.b),
                    attenuation_db: w.attenuation_db,
                })
                .collect(),
            trajectory: Trajectory {
                waypoints: self.trajectory.waypoints.iter().copied().map(pt).collect(),
                speed: self.trajectory.speed,
            },
            mode: parse_mode(&self.mode, self.channels)?,
            seed: self.seed,
            rounds: self.rounds,
            calibration_rounds: self.calibration_rounds,
            antenna: AntennaGainModel::default(),
        };
        scenario.validate()?;
        self.propagation.validate()?;
        Ok((scenario, self.propagation))
    }

    /// Inverse of `resolve` with the nodes written inline.
    pub fn from_scenario(scenario: &Scenario, params: &PropagationParams) -> Self {
        let (lo, hi) = scenario.grid.extent();
        ScenarioFile {
            name: scenario.name.clone(),
            seed: scenario.seed,
            rounds: scenario.rounds,
            calibration_rounds: scenario.calibration_rounds,
            mode: scenario.mode.name().to_string(),
            channels: match &scenario.mode {
                SimMode::MultiChannel { channels } => Some(channels.clone()),
                _ => None,
            },
            layout: None,
            nodes: scenario
                .layout
                .nodes()
                .iter()
                .map(|n| NodeEntry {
                    id: n.id,
                    x: n.position.x,
                    y: n.position.y,
                    bearing_deg: n.antenna_zero_bearing.to_degrees(),
                })
                .collect(),
            area: AreaEntry {
                origin: [lo.x, lo.y],
                width: hi.x - lo.x,
                height: hi.y - lo.y,
                voxel_width: scenario.grid.voxel_width,
            },
            walls: scenario
                .walls
                .iter()
                .map(|w| WallEntry {
                    a: [w.a.x, w.a.y],
                    b: [w.b.x, w.b.y],
                    attenuation_db: w.attenuation_db,
                })
                .collect(),
            trajectory: TrajectoryEntry {
                waypoints: scenario
                    .trajectory
                    .waypoints
                    .iter()
                    .map(|p| [p.x, p.y])
                    .collect(),
                speed: scenario.trajectory.speed,
            },
            propagation: *params,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| RtiError::InvalidScenario(e.to_string()))
    }
}

pub fn load_scenario(path: &Path) -> Result<(Scenario, PropagationParams)> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    ScenarioFile::parse(&text)?.resolve(base)
}
