//! Built-in LOS and NLOS scenarios used by the examples and acceptance runs.

use crate::error::{Result, RtiError};
use crate::geometry::{build_grid, NetworkLayout, NodeSpec, Point2};
use crate::simulator::{AntennaGainModel, PropagationParams, Scenario, SimMode, Trajectory, Wall};

pub const BUILTIN_NAMES: [&str; 2] = ["los", "nlos"];

fn facing(id: u32, x: f64, y: f64, target: Point2) -> NodeSpec {
    let p = Point2::new(x, y);
    NodeSpec::new(id, p, p.bearing_to(&target))
}

/// `laps` walks around the square with corners at `lo` and `hi`.
fn square_loop(lo: f64, hi: f64, laps: usize) -> Vec<Point2> {
    let corners = [
        Point2::new(hi, lo),
        Point2::new(hi, hi),
        Point2::new(lo, hi),
        Point2::new(lo, lo),
    ];
    let mut path = vec![Point2::new(lo, lo)];
    for _ in 0..laps {
        path.extend_from_slice(&corners);
    }
    path
}

/// Seven nodes on the border of an open 6 m x 6 m area.
pub fn los(seed: u64) -> (Scenario, PropagationParams) {
    let c = Point2::new(3.0, 3.0);
    let layout = NetworkLayout::new(vec![
        facing(1, 0.0, 1.5, c),
        facing(2, 0.0, 4.5, c),
        facing(3, 2.0, 6.0, c),
        facing(4, 4.5, 6.0, c),
        facing(5, 6.0, 3.5, c),
        facing(6, 4.5, 0.0, c),
        facing(7, 1.8, 0.0, c),
    ])
    .expect("static layout is valid");
    let scenario = Scenario {
        name: "los".into(),
        layout,
        grid: build_grid(Point2::new(0.0, 0.0), 6.0, 6.0, 0.2).expect("static grid is valid"),
        walls: vec![],
        trajectory: Trajectory {
            waypoints: square_loop(1.0, 5.0, 3),
            speed: 0.05,
        },
        mode: SimMode::Directional,
        seed,
        rounds: 960,
        calibration_rounds: 50,
        antenna: AntennaGainModel::default(),
    };
    (scenario, PropagationParams::default())
}

/// A 5 m x 5 m room walled on three sides, four nodes inside and three
/// looking in through the walls.
pub fn nlos(seed: u64) -> (Scenario, PropagationParams) {
    let c = Point2::new(2.5, 2.5);
    let layout = NetworkLayout::new(vec![
        facing(1, 1.0, 0.3, c),
        facing(2, 4.0, 0.3, c),
        facing(3, 0.4, 3.5, c),
        facing(4, 4.6, 3.5, c),
        facing(5, -1.5, 2.5, c),
        facing(6, 2.5, 6.5, c),
        facing(7, 6.5, 2.5, c),
    ])
    .expect("static layout is valid");
    let wall = |ax, ay, bx, by| Wall {
        a: Point2::new(ax, ay),
        b: Point2::new(bx, by),
        attenuation_db: 5.0,
    };
    let scenario = Scenario {
        name: "nlos".into(),
        layout,
        grid: build_grid(Point2::new(0.0, 0.0), 5.0, 5.0, 0.2).expect("static grid is valid"),
        walls: vec![
            wall(0.0, 0.0, 0.0, 5.0),
            wall(0.0, 5.0, 5.0, 5.0),
            wall(5.0, 0.0, 5.0, 5.0),
        ],
        trajectory: Trajectory {
            waypoints: square_loop(1.0, 4.0, 3),
            speed: 0.05,
        },
        mode: SimMode::Directional,
        seed,
        rounds: 720,
        calibration_rounds: 50,
        antenna: AntennaGainModel::default(),
    };
    // Through walls the body mostly reshuffles multipath instead of shadowing.
    let params = PropagationParams {
        body_jitter_db: 8.0,
        shadow_phase_mix: 1.0,
        shadow_wavelength_m: 0.5,
        ..PropagationParams::default()
    };
    (scenario, params)
}

pub fn builtin(name: &str, seed: u64) -> Result<(Scenario, PropagationParams)> {
    match name {
        "los" => Ok(los(seed)),
        "nlos" => Ok(nlos(seed)),
        other => Err(RtiError::InvalidScenario(format!(
            "unknown built-in scenario `{other}` (known: {})",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        for name in BUILTIN_NAMES {
            let (s, p) = builtin(name, 1).unwrap();
            s.validate().unwrap();
            p.validate().unwrap();
            assert_eq!(s.layout.links().len(), 42);
        }
        assert!(builtin("attic", 1).is_err());
    }

    #[test]
    fn trajectories_fit_their_rounds() {
        for name in BUILTIN_NAMES {
            let (s, _) = builtin(name, 1).unwrap();
            let length: f64 = s
                .trajectory
                .waypoints
                .windows(2)
                .map(|w| w[0].distance(&w[1]))
                .sum();
            assert!(
                (length / s.trajectory.speed - f64::from(s.rounds)).abs() < 1e-6,
                "{name}"
            );
        }
    }
}
