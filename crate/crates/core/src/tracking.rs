//! Constant-velocity Kalman tracking and tracking-error metrics.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use nalgebra::{Matrix2x4, Matrix4, SMatrix, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};
use crate::geometry::Point2;

pub const DEFAULT_Q: f64 = 0.05;
pub const DEFAULT_R: f64 = 0.5;
pub const INITIAL_VARIANCE: f64 = 10.0;

pub const TRAJECTORY_HEADER: &str = "tick,est_x,est_y,truth_x,truth_y,error_m";

const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    /// Process noise intensity (white acceleration).
    pub q: f64,
    /// Position measurement variance per axis.
    pub r: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        KalmanParams {
            q: DEFAULT_Q,
            r: DEFAULT_R,
        }
    }
}

impl KalmanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.q.is_finite() && self.q >= 0.0) {
            return Err(RtiError::invalid(format!(
                "process noise q must be >= 0, got {}",
                self.q
            )));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(RtiError::invalid(format!(
                "measurement noise r must be > 0, got {}",
                self.r
            )));
        }
        Ok(())
    }
}

/// State `(px, py, vx, vy)` with positions in m and velocities in m/tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackState {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
    pub time: u32,
}

impl TrackState {
    /// First measurement as position, zero velocity, covariance `10 I`.
    pub fn initial(measurement: Point2, time: u32) -> Self {
        TrackState {
            mean: Vector4::new(measurement.x, measurement.y, 0.0, 0.0),
            covariance: Matrix4::identity() * INITIAL_VARIANCE,
            time,
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.mean[0], self.mean[1])
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.mean[2], self.mean[3])
    }

    pub fn check_covariance(&self) -> Result<()> {
        let p = &self.covariance;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(RtiError::InvalidState(
                "covariance has non-finite entries".into(),
            ));
        }
        for i in 0..4 {
            if p[(i, i)] <= 0.0 {
                return Err(RtiError::InvalidState(format!(
                    "covariance diagonal {i} is {}",
                    p[(i, i)]
                )));
            }
            for j in 0..i {
                if (p[(i, j)] - p[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(RtiError::InvalidState(format!(
                        "covariance is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn transition() -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = 1.0;
    f[(1, 3)] = 1.0;
    f
}

fn process_noise(q: f64) -> Matrix4<f64> {
    // Piecewise white acceleration per axis with dt = 1.
    let mut m = Matrix4::zeros();
    for axis in 0..2 {
        let (p, v) = (axis, axis + 2);
        m[(p, p)] = q * 0.25;
        m[(p, v)] = q * 0.5;
        m[(v, p)] = q * 0.5;
        m[(v, v)] = q;
    }
    m
}

fn observation() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

/// One predict/update cycle with a position-only measurement.
pub fn kalman_step(
    state: &TrackState,
    measurement: Point2,
    params: &KalmanParams,
) -> Result<TrackState> {
    params.validate()?;
    state.check_covariance()?;
    let f = transition();
    let h = observation();
    let mean_pred = f * state.mean;
    let cov_pred = f * state.covariance * f.transpose() + process_noise(params.q);

    let z = Vector2::new(measurement.x, measurement.y);
    let innovation = z - h * mean_pred;
    let s = h * cov_pred * h.transpose() + SMatrix::<f64, 2, 2>::identity() * params.r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| RtiError::NumericalFailure("innovation covariance is singular".into()))?;
    let gain = cov_pred * h.transpose() * s_inv;
    let mean = mean_pred + gain * innovation;
    // Joseph form keeps the covariance symmetric and positive definite.
    let ikh = Matrix4::identity() - gain * h;
    let mut covariance = ikh * cov_pred * ikh.transpose() + gain * gain.transpose() * params.r;
    covariance = (covariance + covariance.transpose()) * 0.5;

    Ok(TrackState {
        mean,
        covariance,
        time: state.time + 1,
    })
}

#[derive(Debug, Clone)]
pub struct KalmanTracker {
    params: KalmanParams,
    state: Option<TrackState>,
}

impl KalmanTracker {
    pub fn new(params: KalmanParams) -> Result<Self> {
        params.validate()?;
        Ok(KalmanTracker {
            params,
            state: None,
        })
    }

    pub fn state(&self) -> Option<&TrackState> {
        self.state.as_ref()
    }

    /// Feeds one measurement and returns the filtered position.
    pub fn update(&mut self, measurement: Point2, time: u32) -> Result<Point2> {
        let next = match &self.state {
            None => TrackState::initial(measurement, time),
            Some(s) => {
                let mut n = kalman_step(s, measurement, &self.params)?;
                n.time = time;
                n
            }
        };
        self.state = Some(next);
        Ok(next.position())
    }

    pub fn filter(params: KalmanParams, measurements: &[Point2]) -> Result<Vec<Point2>> {
        let mut tracker = KalmanTracker::new(params)?;
        measurements
            .iter()
            .enumerate()
            .map(|(t, &m)| tracker.update(m, t as u32))
            .collect()
    }
}

/// How the sum of squared errors is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseNormalization {
    /// Divide by `t_d - t_c`, i.e. one less than the number of ticks in the inclusive window.
    #[default]
    Printed,
    /// Divide by the number of ticks.
    SampleCount,
}

pub fn tracking_errors(estimates: &[Point2], truth: &[Point2]) -> Result<Vec<f64>> {
    if estimates.len() != truth.len() {
        return Err(RtiError::invalid(format!(
            "{} estimates vs {} ground-truth positions",
            estimates.len(),
            truth.len()
        )));
    }
    Ok(estimates
        .iter()
        .zip(truth)
        .map(|(e, g)| e.distance(g))
        .collect())
}

/// RMSE over ticks `t_c..=t_d` of the two trajectories.
pub fn rmse(
    estimates: &[Point2],
    truth: &[Point2],
    t_c: usize,
    t_d: usize,
    normalization: RmseNormalization,
) -> Result<f64> {
    if t_d <= t_c {
        return Err(RtiError::invalid(format!("empty window [{t_c}, {t_d}]")));
    }
    if t_d >= estimates.len() || t_d >= truth.len() {
        return Err(RtiError::invalid(format!(
            "window end {t_d} beyond trajectory"
        )));
    }
    let errors = tracking_errors(&estimates[t_c..=t_d], &truth[t_c..=t_d])?;
    rmse_from_errors(&errors, normalization)
}

pub fn rmse_from_errors(errors: &[f64], normalization: RmseNormalization) -> Result<f64> {
    let denom = match normalization {
        RmseNormalization::Printed => errors.len().saturating_sub(1),
        RmseNormalization::SampleCount => errors.len(),
    };
    if denom == 0 {
        return Err(RtiError::invalid("window needs at least two ticks"));
    }
    let ss: f64 = errors.iter().map(|e| e * e).sum();
    Ok((ss / denom as f64).sqrt())
}

/// Empirical `P(e <= level)` for each level.
pub fn error_cdf(errors: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(RtiError::invalid("no errors to summarize"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(levels
        .iter()
        .map(|&l| sorted.partition_point(|&e| e <= l) as f64 / n)
        .collect())
}

/// `0.1, 0.2, .., 3.0` m.
pub fn default_cdf_levels() -> Vec<f64> {
    (1..=30).map(|i| f64::from(i) / 10.0).collect()
}

/// Nearest-rank percentile: smallest error with at least `p` percent of samples at or below it.
pub fn percentile(errors: &[f64], p: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(RtiError::invalid("no errors to summarize"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(RtiError::invalid(format!(
            "percentile {p} outside [0, 100]"
        )));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub tick: u32,
    pub estimate: Point2,
    pub truth: Point2,
    pub error: f64,
}

pub fn write_trajectory<W: Write>(rows: &[TrajectoryRow], out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.tick, r.estimate.x, r.estimate.y, r.truth.x, r.truth.y, r.error
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(input: R) -> Result<Vec<TrajectoryRow>> {
    let mut lines = BufReader::new(input).lines();
    match lines.next().transpose()? {
        Some(h) if h.trim() == TRAJECTORY_HEADER => {}
        _ => return Err(RtiError::parse(1, "missing or wrong trajectory header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(RtiError::parse(
                line_no,
                format!("expected 6 fields, found {}", f.len()),
            ));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| RtiError::parse(line_no, format!("`{s}`: {e}")))
        };
        rows.push(TrajectoryRow {
            tick: f[0]
                .trim()
                .parse()
                .map_err(|e| RtiError::parse(line_no, format!("tick `{}`: {e}", f[0])))?,
            estimate: Point2::new(num(f[1])?, num(f[2])?),
            truth: Point2::new(num(f[3])?, num(f[4])?),
            error: num(f[5])?,
        });
    }
    Ok(rows)
}
