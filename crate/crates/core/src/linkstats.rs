//! Calibration baselines and per-link quality statistics.
//!
//! Every multi-stream statistic (multi-channel or pattern-pair) is the sum of
//! the single-stream statistic over the selected streams of a link, so a link
//! with one selected stream reduces exactly to the omni statistic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};
use crate::geometry::{Link, PatternPair};
use crate::trace::{RssTrace, StreamId, StreamKey};

/// Default variance window length in ticks.
pub const DEFAULT_WINDOW: usize = 10;

/// Order-independent sum: values are sorted before accumulation so that the
/// result does not depend on record order.
pub(crate) fn stable_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Per-stream mean RSS over a calibration window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub means: BTreeMap<StreamId, f64>,
}

impl CalibrationTable {
    pub fn get(&self, id: &StreamId) -> Option<f64> {
        self.means.get(id).copied()
    }

    pub fn contains(&self, id: &StreamId) -> bool {
        self.means.contains_key(id)
    }

    fn require(&self, id: &StreamId) -> Result<f64> {
        self.get(id)
            .ok_or_else(|| RtiError::MissingCalibration(id.to_string()))
    }
}

/// Calibration over `[t1, t2]` plus the streams that appeared in the window
/// without a single received packet.
pub fn calibrate_lenient(
    trace: &RssTrace,
    t1: u32,
    t2: u32,
) -> Result<(CalibrationTable, Vec<StreamId>)> {
    if t1 > t2 {
        return Err(RtiError::invalid(format!(
            "empty calibration window [{t1}, {t2}]"
        )));
    }
    let mut seen: BTreeMap<StreamId, Vec<f64>> = BTreeMap::new();
    for r in trace.window(t1, t2) {
        let values = seen.entry(r.stream()).or_default();
        if let Some(v) = r.rssi_dbm {
            values.push(v);
        }
    }
    let mut table = CalibrationTable::default();
    let mut missing = Vec::new();
    for (id, mut values) in seen {
        if values.is_empty() {
            missing.push(id);
        } else {
            let n = values.len() as f64;
            table.means.insert(id, stable_sum(&mut values) / n);
        }
    }
    Ok((table, missing))
}

/// Mean received RSS per stream over `[t1, t2]`. Fails naming every stream
/// that has records in the window but no received packet.
pub fn calibrate(trace: &RssTrace, t1: u32, t2: u32) -> Result<CalibrationTable> {
    let (table, missing) = calibrate_lenient(trace, t1, t2)?;
    if !missing.is_empty() {
        let names: Vec<String> = missing.iter().map(ToString::to_string).collect();
        return Err(RtiError::MissingCalibration(names.join(", ")));
    }
    if table.means.is_empty() {
        return Err(RtiError::invalid(format!(
            "no records in calibration window [{t1}, {t2}]"
        )));
    }
    Ok(table)
}

pub fn mrti_stat(rssi: f64, baseline: f64) -> f64 {
    (rssi - baseline).abs()
}

/// Sample variance (divisor `v - 1`) of the window.
pub fn vrti_stat(window: &[f64]) -> Result<f64> {
    sample_variance(window).ok_or(RtiError::InsufficientWindow {
        stream: "window".into(),
        usable: window.len(),
    })
}

fn sample_variance(window: &[f64]) -> Option<f64> {
    if window.len() < 2 {
        return None;
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in window.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    Some((m2 / (window.len() - 1) as f64).max(0.0))
}

/// Sum over `keys` of the absolute deviation from calibration.
fn summed_mean_stat(
    link: Link,
    keys: &[StreamKey],
    current: &[f64],
    calibration: &CalibrationTable,
) -> Result<f64> {
    if keys.is_empty() {
        return Err(RtiError::invalid(format!(
            "no streams selected for link {link}"
        )));
    }
    if keys.len() != current.len() {
        return Err(RtiError::invalid(format!(
            "{} streams but {} current values for link {link}",
            keys.len(),
            current.len()
        )));
    }
    let mut terms = Vec::with_capacity(keys.len());
    for (&key, &r) in keys.iter().zip(current) {
        let baseline = calibration.require(&StreamId { link, key })?;
        terms.push(mrti_stat(r, baseline));
    }
    Ok(stable_sum(&mut terms))
}

/// Sum over `keys` of the per-stream window variance.
fn summed_var_stat(link: Link, keys: &[StreamKey], windows: &[&[f64]]) -> Result<f64> {
    if keys.is_empty() {
        return Err(RtiError::invalid(format!(
            "no streams selected for link {link}"
        )));
    }
    if keys.len() != windows.len() {
        return Err(RtiError::invalid(format!(
            "{} streams but {} windows for link {link}",
            keys.len(),
            windows.len()
        )));
    }
    let mut terms = Vec::with_capacity(keys.len());
    for (&key, window) in keys.iter().zip(windows) {
        terms.push(
            sample_variance(window).ok_or_else(|| RtiError::InsufficientWindow {
                stream: StreamId { link, key }.to_string(),
                usable: window.len(),
            })?,
        );
    }
    Ok(stable_sum(&mut terms))
}

fn pattern_keys(pairs: &[PatternPair]) -> Vec<StreamKey> {
    pairs.iter().copied().map(StreamKey::Pattern).collect()
}

fn channel_keys(channels: &[u8]) -> Vec<StreamKey> {
    channels.iter().copied().map(StreamKey::Channel).collect()
}

/// Directional mean statistic: `current[j]` is the RSS of `pairs[j]`.
pub fn drti_mean_stat(
    link: Link,
    pairs: &[PatternPair],
    current: &[f64],
    calibration: &CalibrationTable,
) -> Result<f64> {
    summed_mean_stat(link, &pattern_keys(pairs), current, calibration)
}

/// Directional variance statistic: `windows[j]` holds the last `v` values of `pairs[j]`.
pub fn drti_var_stat(link: Link, pairs: &[PatternPair], windows: &[&[f64]]) -> Result<f64> {
    summed_var_stat(link, &pattern_keys(pairs), windows)
}

pub fn crti_mean_stat(
    link: Link,
    channels: &[u8],
    current: &[f64],
    calibration: &CalibrationTable,
) -> Result<f64> {
    summed_mean_stat(link, &channel_keys(channels), current, calibration)
}

pub fn crti_var_stat(link: Link, channels: &[u8], windows: &[&[f64]]) -> Result<f64> {
    summed_var_stat(link, &channel_keys(channels), windows)
}

/// Link statistics for all links at one tick, in layout link order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkStatVector {
    pub time: u32,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatKind {
    Mean,
    Variance,
}

/// Per-stream RSS indexed by tick, with lost packets filled by the last
/// received value of the same stream.
#[derive(Debug, Clone)]
pub struct StreamTable {
    num_ticks: usize,
    series: BTreeMap<StreamId, Vec<Option<f64>>>,
}

impl StreamTable {
    /// Covers ticks `0..num_ticks`; later records are ignored.
    pub fn from_trace(trace: &RssTrace, num_ticks: u32) -> Self {
        let n = num_ticks as usize;
        let mut series: BTreeMap<StreamId, Vec<Option<f64>>> = BTreeMap::new();
        for r in &trace.records {
            let t = r.tick as usize;
            if t >= n {
                continue;
            }
            let s = series.entry(r.stream()).or_insert_with(|| vec![None; n]);
            if let Some(v) = r.rssi_dbm {
                s[t] = Some(v);
            }
        }
        for s in series.values_mut() {
            let mut last = None;
            for slot in s.iter_mut() {
                match slot {
                    Some(v) => last = Some(*v),
                    None => *slot = last,
                }
            }
        }
        StreamTable {
            num_ticks: n,
            series,
        }
    }

    pub fn num_ticks(&self) -> usize {
        self.num_ticks
    }

    pub fn streams(&self) -> impl Iterator<Item = &StreamId> {
        self.series.keys()
    }

    /// Carried-forward value at `tick`.
    pub fn value(&self, id: &StreamId, tick: u32) -> Option<f64> {
        self.series
            .get(id)
            .and_then(|s| s.get(tick as usize).copied().flatten())
    }

    /// Usable values among ticks `tick + 1 - v ..= tick`.
    pub fn window(&self, id: &StreamId, tick: u32, v: usize) -> Vec<f64> {
        let Some(s) = self.series.get(id) else {
            return Vec::new();
        };
        let end = (tick as usize + 1).min(s.len());
        let start = end.saturating_sub(v);
        s[start..end].iter().flatten().copied().collect()
    }
}

/// Computes y(t) for every tick in `ticks`. `selected[i]` lists the streams
/// summed for `links[i]`; a link with no selected streams contributes 0.
pub fn link_statistics(
    links: &[Link],
    selected: &[Vec<StreamKey>],
    table: &StreamTable,
    calibration: &CalibrationTable,
    ticks: std::ops::RangeInclusive<u32>,
    kind: StatKind,
    window_len: usize,
) -> Result<Vec<LinkStatVector>> {
    if links.len() != selected.len() {
        return Err(RtiError::invalid("one stream selection per link required"));
    }
    if kind == StatKind::Variance && window_len < 2 {
        return Err(RtiError::invalid(format!(
            "variance window must be at least 2, got {window_len}"
        )));
    }
    let mut out = Vec::new();
    for t in ticks {
        let mut values = Vec::with_capacity(links.len());
        for (&link, keys) in links.iter().zip(selected) {
            if keys.is_empty() {
                values.push(0.0);
                continue;
            }
            let y = match kind {
                StatKind::Mean => {
                    let current = keys
                        .iter()
                        .map(|&key| {
                            let id = StreamId { link, key };
                            table
                                .value(&id, t)
                                .ok_or_else(|| RtiError::InsufficientWindow {
                                    stream: id.to_string(),
                                    usable: 0,
                                })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    summed_mean_stat(link, keys, &current, calibration)?
                }
                StatKind::Variance => {
                    let windows: Vec<Vec<f64>> = keys
                        .iter()
                        .map(|&key| table.window(&StreamId { link, key }, t, window_len))
                        .collect();
                    let refs: Vec<&[f64]> = windows.iter().map(Vec::as_slice).collect();
                    summed_var_stat(link, keys, &refs)?
                }
            };
            values.push(y);
        }
        out.push(LinkStatVector { time: t, values });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttenuationOutcome {
    TruePositive,
    FalsePositive,
    TrueNegative,
    FalseNegative,
}

/// Detection is `stat > threshold`; a tie counts as no detection.
pub fn classify_link_attenuation(
    stat: f64,
    threshold: f64,
    obstructed: bool,
) -> AttenuationOutcome {
    match (stat > threshold, obstructed) {
        (true, true) => AttenuationOutcome::TruePositive,
        (true, false) => AttenuationOutcome::FalsePositive,
        (false, true) => AttenuationOutcome::FalseNegative,
        (false, false) => AttenuationOutcome::TrueNegative,
    }
}

/// FP and FN as percentages of all (link, tick) samples at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuationRate {
    pub threshold: f64,
    pub fp_percent: f64,
    pub fn_percent: f64,
}

/// Sweeps `thresholds` over pooled samples. `obstructed[k][i]` is the ground
/// truth for link `i` at `stats[k]`.
pub fn attenuation_sweep(
    stats: &[LinkStatVector],
    obstructed: &[Vec<bool>],
    thresholds: &[f64],
) -> Result<Vec<AttenuationRate>> {
    if stats.len() != obstructed.len() {
        return Err(RtiError::invalid(
            "ground truth must cover every statistics vector",
        ));
    }
    let mut samples = Vec::new();
    for (s, o) in stats.iter().zip(obstructed) {
        if s.values.len() != o.len() {
            return Err(RtiError::invalid(format!(
                "ground truth length mismatch at tick {}",
                s.time
            )));
        }
        samples.extend(s.values.iter().copied().zip(o.iter().copied()));
    }
    if samples.is_empty() {
        return Err(RtiError::invalid("no samples for attenuation sweep"));
    }
    let total = samples.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&threshold| {
            let (mut fp, mut fn_) = (0usize, 0usize);
            for &(stat, obs) in &samples {
                match classify_link_attenuation(stat, threshold, obs) {
                    AttenuationOutcome::FalsePositive => fp += 1,
                    AttenuationOutcome::FalseNegative => fn_ += 1,
                    _ => {}
                }
            }
            AttenuationRate {
                threshold,
                fp_percent: 100.0 * fp as f64 / total,
                fn_percent: 100.0 * fn_ as f64 / total,
            }
        })
        .collect())
}

/// `count + 1` thresholds at evenly spaced quantiles of the pooled statistic,
/// from its minimum to its maximum, deduplicated and ascending.
pub fn quantile_thresholds(stats: &[LinkStatVector], count: usize) -> Vec<f64> {
    let mut pooled: Vec<f64> = stats
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .collect();
    if pooled.is_empty() {
        return Vec::new();
    }
    pooled.sort_by(f64::total_cmp);
    let last = pooled.len() - 1;
    let count = count.max(1);
    let mut out: Vec<f64> = (0..=count).map(|k| pooled[k * last / count]).collect();
    out.dedup();
    out
}

/// Lowest FP% reachable on `curve` while keeping FN% at or below `fn_level`.
pub fn fp_at_fn_level(curve: &[AttenuationRate], fn_level: f64) -> Option<f64> {
    curve
        .iter()
        .filter(|p| p.fn_percent <= fn_level)
        .map(|p| p.fp_percent)
        .min_by(f64::total_cmp)
}
