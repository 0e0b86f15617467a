//! Tikhonov-regularized image reconstruction.
//!
//! The projection `P = (A^T A + alpha Q)^-1 A^T` is computed once per weight
//! matrix; every frame is then a single matrix-vector product `x = P y`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};
use crate::geometry::{Point2, VoxelGrid, WeightMatrix};
use crate::linkstats::LinkStatVector;

pub const DEFAULT_ALPHA: f64 = 20.0;

const CONSISTENCY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    /// Plain ridge penalty. The default: the smoothness prior pushes argmax
    /// peaks towards the border of the area.
    #[default]
    Identity,
    /// Horizontal and vertical first differences between neighbouring voxels.
    Difference,
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regularizer::Identity => "identity",
            Regularizer::Difference => "difference",
        })
    }
}

impl FromStr for Regularizer {
    type Err = RtiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" => Ok(Regularizer::Identity),
            "difference" => Ok(Regularizer::Difference),
            other => Err(RtiError::Config(format!("unknown regularizer `{other}`"))),
        }
    }
}

/// Stacked first-difference operator `L` on a `rows x cols` grid.
pub fn difference_operator(rows: usize, cols: usize) -> DMatrix<f64> {
    let n = rows * cols;
    let edges = rows * cols.saturating_sub(1) + rows.saturating_sub(1) * cols;
    let mut l = DMatrix::zeros(edges, n);
    let mut e = 0;
    for r in 0..rows {
        for c in 0..cols.saturating_sub(1) {
            l[(e, r * cols + c)] = -1.0;
            l[(e, r * cols + c + 1)] = 1.0;
            e += 1;
        }
    }
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols {
            l[(e, r * cols + c)] = -1.0;
            l[(e, (r + 1) * cols + c)] = 1.0;
            e += 1;
        }
    }
    l
}

/// `Q = L^T L` built directly: the 4-neighbour grid Laplacian.
fn difference_gram(rows: usize, cols: usize) -> DMatrix<f64> {
    let n = rows * cols;
    let mut q = DMatrix::zeros(n, n);
    let mut edge = |a: usize, b: usize| {
        q[(a, a)] += 1.0;
        q[(b, b)] += 1.0;
        q[(a, b)] -= 1.0;
        q[(b, a)] -= 1.0;
    };
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edge(i, i + 1);
            }
            if r + 1 < rows {
                edge(i, i + cols);
            }
        }
    }
    q
}

/// Regularization Gram matrix `Q` for `n` voxels arranged as `rows x cols`.
pub fn regularizer_matrix(regularizer: Regularizer, rows: usize, cols: usize) -> DMatrix<f64> {
    match regularizer {
        Regularizer::Identity => DMatrix::identity(rows * cols, rows * cols),
        Regularizer::Difference => difference_gram(rows, cols),
    }
}

#[derive(Debug, Clone)]
pub struct Reconstructor {
    projection: DMatrix<f64>,
    alpha: f64,
    regularizer: Regularizer,
}

impl Reconstructor {
    /// Builds the projection for weight matrix `a` over a grid of
    /// `rows x cols` voxels (`rows * cols` must equal the number of columns).
    pub fn build(
        a: &DMatrix<f64>,
        rows: usize,
        cols: usize,
        alpha: f64,
        regularizer: Regularizer,
    ) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(RtiError::invalid(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if rows * cols != a.ncols() || a.ncols() == 0 {
            return Err(RtiError::invalid(format!(
                "grid {rows}x{cols} does not match {} weight-matrix columns",
                a.ncols()
            )));
        }
        if a.iter().all(|&v| v == 0.0) {
            return Err(RtiError::invalid("weight matrix is all zero"));
        }
        let q = regularizer_matrix(regularizer, rows, cols);
        let at = a.transpose();
        let gram = &at * a + &q * alpha;
        let chol = gram.cholesky().ok_or_else(|| {
            RtiError::NumericalFailure("A^T A + alpha Q is not positive definite".into())
        })?;
        let projection = chol.solve(&at);
        if projection.iter().any(|v| !v.is_finite()) {
            return Err(RtiError::NumericalFailure("non-finite projection".into()));
        }

        // P A + alpha G^-1 Q = G^-1 (A^T A + alpha Q) = I, probed on a few vectors.
        let n = a.ncols();
        for probe in 0..3 {
            let v = DVector::from_fn(n, |i, _| (((i * 7 + probe * 13) % 11) as f64 - 5.0) / 5.0);
            let back = &projection * (a * &v) + chol.solve(&(&q * &v)) * alpha;
            let err = (back - &v).amax();
            if err > CONSISTENCY_TOL {
                return Err(RtiError::NumericalFailure(format!(
                    "projection consistency check failed (max deviation {err:e})"
                )));
            }
        }
        Ok(Reconstructor {
            projection,
            alpha,
            regularizer,
        })
    }

    pub fn for_grid(
        weights: &WeightMatrix,
        grid: &VoxelGrid,
        alpha: f64,
        regularizer: Regularizer,
    ) -> Result<Self> {
        Reconstructor::build(
            &weights.matrix,
            grid.height_voxels,
            grid.width_voxels,
            alpha,
            regularizer,
        )
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn regularizer(&self) -> Regularizer {
        self.regularizer
    }

    /// N x M projection matrix.
    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn num_links(&self) -> usize {
        self.projection.ncols()
    }

    pub fn num_voxels(&self) -> usize {
        self.projection.nrows()
    }

    pub fn reconstruct_values(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.num_links() {
            return Err(RtiError::invalid(format!(
                "statistics vector has {} entries, expected {}",
                y.len(),
                self.num_links()
            )));
        }
        let x = &self.projection * DVector::from_column_slice(y);
        Ok(x.iter().copied().collect())
    }

    pub fn reconstruct(&self, y: &LinkStatVector) -> Result<ImageFrame> {
        Ok(ImageFrame {
            time: y.time,
            values: self.reconstruct_values(&y.values)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFrame {
    pub time: u32,
    pub values: Vec<f64>,
}

impl ImageFrame {
    /// Index of the largest value, lowest index on ties.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Row-major CSV, one grid row per line starting at row 0.
    pub fn write_csv<W: Write>(&self, grid: &VoxelGrid, mut out: W) -> Result<()> {
        check_frame(self, grid)?;
        for row in self.values.chunks(grid.width_voxels) {
            let line: Vec<String> = row.iter().map(ToString::to_string).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Binary 8-bit PGM, min-max normalized, highest row first so +y is up.
    pub fn write_pgm<W: Write>(&self, grid: &VoxelGrid, mut out: W) -> Result<()> {
        check_frame(self, grid)?;
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        write!(
            out,
            "P5\n{} {}\n255\n",
            grid.width_voxels, grid.height_voxels
        )?;
        let mut bytes = Vec::with_capacity(self.values.len());
        for row in self.values.chunks(grid.width_voxels).rev() {
            bytes.extend(row.iter().map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round() as u8
                } else {
                    0
                }
            }));
        }
        out.write_all(&bytes)?;
        Ok(())
    }
}

fn check_frame(frame: &ImageFrame, grid: &VoxelGrid) -> Result<()> {
    if frame.values.len() != grid.len() {
        return Err(RtiError::invalid(format!(
            "frame has {} voxels, grid has {}",
            frame.values.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// Center of the most intense voxel.
pub fn argmax_voxel(frame: &ImageFrame, grid: &VoxelGrid) -> Result<Point2> {
    check_frame(frame, grid)?;
    frame
        .argmax()
        .map(|i| grid.center(i))
        .ok_or_else(|| RtiError::invalid("empty frame"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, build_weight_matrix, in_ellipse, NetworkLayout, NodeSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Gaussian elimination with partial pivoting on the regularized normal equations.
    #[allow(clippy::needless_range_loop)]
    fn normal_equation_solution(
        a: &DMatrix<f64>,
        q: &DMatrix<f64>,
        alpha: f64,
        y: &[f64],
    ) -> Vec<f64> {
        let n = a.ncols();
        let m = a.nrows();
        let mut g = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..m {
                    s += a[(k, i)] * a[(k, j)];
                }
                g[i][j] = s + alpha * q[(i, j)];
            }
            g[i][n] = (0..m).map(|k| a[(k, i)] * y[k]).sum();
        }
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&r1, &r2| g[r1][col].abs().total_cmp(&g[r2][col].abs()))
                .unwrap();
            g.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = g[r][col] / g[col][col];
                    for c in col..=n {
                        g[r][c] -= f * g[col][c];
                    }
                }
            }
        }
        (0..n).map(|i| g[i][n] / g[i][i]).collect()
    }

    fn random_system(rng: &mut ChaCha8Rng, m: usize, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, rows * cols, |_, _| {
            if rng.random_bool(0.4) {
                rng.random_range(0.1..1.0)
            } else {
                0.0
            }
        })
    }

    #[test]
    fn one_link_two_voxels_closed_form() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let rec = Reconstructor::build(&a, 1, 2, 1.0, Regularizer::Identity).unwrap();
        assert!((rec.projection()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!(rec.projection()[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn matches_normal_equations_on_random_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a = random_system(&mut rng, 5, 3, 4);
        for reg in [Regularizer::Identity, Regularizer::Difference] {
            let rec = Reconstructor::build(&a, 3, 4, 0.1, reg).unwrap();
            let y: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..5.0)).collect();
            let x = rec.reconstruct_values(&y).unwrap();
            let q = regularizer_matrix(reg, 3, 4);
            let want = normal_equation_solution(&a, &q, 0.1, &y);
            for (u, v) in x.iter().zip(&want) {
                assert!((u - v).abs() < 1e-9, "{reg}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn difference_gram_equals_lt_l() {
        let l = difference_operator(3, 4);
        assert_eq!(l.nrows(), 3 * 3 + 2 * 4);
        let q = l.transpose() * &l;
        assert_eq!(q, difference_gram(3, 4));
    }

    #[test]
    fn shrinkage_with_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_system(&mut rng, 6, 3, 3);
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..3.0)).collect();
        for reg in [Regularizer::Identity, Regularizer::Difference] {
            let norms: Vec<f64> = [1.0, 10.0, 100.0]
                .iter()
                .map(|&alpha| {
                    let x = Reconstructor::build(&a, 3, 3, alpha, reg)
                        .unwrap()
                        .reconstruct_values(&y)
                        .unwrap();
                    x.iter().map(|v| v * v).sum::<f64>().sqrt()
                })
                .collect();
            if reg == Regularizer::Identity {
                assert!(norms[0] > norms[1] && norms[1] > norms[2], "{norms:?}");
            }
            // The smoothness penalty leaves the constant image unpenalized, so only
            // the identity case must shrink to zero; both stay finite.
            assert!(norms.iter().all(|n| n.is_finite()));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(Reconstructor::build(&a, 1, 2, 0.0, Regularizer::Identity).is_err());
        assert!(Reconstructor::build(&a, 2, 2, 1.0, Regularizer::Identity).is_err());
        assert!(
            Reconstructor::build(&DMatrix::zeros(1, 2), 1, 2, 1.0, Regularizer::Identity).is_err()
        );
        let rec = Reconstructor::build(&a, 1, 2, 1.0, Regularizer::Identity).unwrap();
        assert!(rec.reconstruct_values(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_statistics_give_zero_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_system(&mut rng, 4, 2, 5);
        let rec = Reconstructor::build(&a, 2, 5, 1.0, Regularizer::Difference).unwrap();
        assert!(rec
            .reconstruct_values(&[0.0; 4])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn single_obstructed_link_peaks_inside_its_ellipse() {
        let layout = NetworkLayout::new(vec![
            NodeSpec::new(1, Point2::new(0.5, 1.0), 0.0),
            NodeSpec::new(2, Point2::new(3.5, 2.0), 0.0),
            NodeSpec::new(3, Point2::new(2.0, 0.0), 0.0),
        ])
        .unwrap();
        let grid = build_grid(Point2::new(0.0, 0.0), 4.0, 3.0, 0.2).unwrap();
        let w = build_weight_matrix(&grid, &layout, 1.5).unwrap();
        let rec = Reconstructor::for_grid(&w, &grid, 5.0, Regularizer::Difference).unwrap();
        for target in 0..layout.links().len() {
            let mut y = vec![0.0; layout.links().len()];
            y[target] = 4.0;
            let frame = rec
                .reconstruct(&LinkStatVector { time: 0, values: y })
                .unwrap();
            let p = argmax_voxel(&frame, &grid).unwrap();
            let (a, b) = layout.endpoints(layout.links()[target]).unwrap();
            assert!(
                in_ellipse(a, b, p, 1.5),
                "link {target}: peak {p} outside ellipse"
            );
        }
    }

    #[test]
    fn argmax_examples() {
        let grid = build_grid(Point2::new(0.0, 0.0), 1.0, 1.0, 0.5).unwrap();
        let one_hot = ImageFrame {
            time: 0,
            values: vec![0.0, 0.0, 1.0, 0.0],
        };
        assert_eq!(
            argmax_voxel(&one_hot, &grid).unwrap(),
            Point2::new(0.25, 0.75)
        );
        let flat = ImageFrame {
            time: 0,
            values: vec![2.0; 4],
        };
        assert_eq!(argmax_voxel(&flat, &grid).unwrap(), grid.center(0));
        assert!(argmax_voxel(
            &ImageFrame {
                time: 0,
                values: vec![]
            },
            &grid
        )
        .is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grid = build_grid(Point2::new(0.0, 0.0), 2.0, 2.0, 0.2).unwrap();
        for _ in 0..50 {
            let values: Vec<f64> = (0..grid.len())
                .map(|_| f64::from(rng.random_range(-20..20)))
                .collect();
            let mut best = 0;
            for i in 1..values.len() {
                if values[i] > values[best] {
                    best = i;
                }
            }
            let frame = ImageFrame { time: 0, values };
            assert_eq!(argmax_voxel(&frame, &grid).unwrap(), grid.center(best));
        }
    }

    #[test]
    fn exports() {
        let grid = build_grid(Point2::new(0.0, 0.0), 1.0, 0.5, 0.5).unwrap();
        let frame = ImageFrame {
            time: 3,
            values: vec![-1.0, 3.0],
        };
        let mut csv = Vec::new();
        frame.write_csv(&grid, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "-1,3\n");
        let mut pgm = Vec::new();
        frame.write_pgm(&grid, &mut pgm).unwrap();
        assert_eq!(&pgm[..], b"P5\n2 1\n255\n\x00\xff");
    }

    #[test]
    fn rebuild_is_bit_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_system(&mut rng, 8, 4, 4);
        let p1 = Reconstructor::build(&a, 4, 4, 5.0, Regularizer::Difference).unwrap();
        let p2 = Reconstructor::build(&a, 4, 4, 5.0, Regularizer::Difference).unwrap();
        assert!(p1
            .projection()
            .iter()
            .zip(p2.projection().iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    proptest! {
        #[test]
        fn linear_and_scale_invariant_argmax(seed in 0u64..500, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_system(&mut rng, 7, 3, 5);
            prop_assume!(a.iter().any(|&v| v != 0.0));
            let rec = Reconstructor::build(&a, 3, 5, 1.0, Regularizer::Difference).unwrap();
            let y1: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..4.0)).collect();
            let y2: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..4.0)).collect();
            let sum: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a + b).collect();
            let (x1, x2, xs) = (rec.reconstruct_values(&y1).unwrap(), rec.reconstruct_values(&y2).unwrap(), rec.reconstruct_values(&sum).unwrap());
            for i in 0..xs.len() {
                prop_assert!((xs[i] - x1[i] - x2[i]).abs() < 1e-9);
            }
            let scaled: Vec<f64> = y1.iter().map(|v| v * c).collect();
            let xc = rec.reconstruct_values(&scaled).unwrap();
            for i in 0..xc.len() {
                prop_assert!((xc[i] - c * x1[i]).abs() <= 1e-9 * (1.0 + c * x1[i].abs()));
            }
        }
    }
}
