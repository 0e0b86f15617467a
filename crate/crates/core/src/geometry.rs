//! Area-of-interest discretization, node/link enumeration and the ellipse
//! weight model that maps voxel attenuation onto link statistics.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};

/// Directions on the switched-beam antennas used throughout.
pub const DEFAULT_DIRECTIONS: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Bearing of `other` seen from `self`, counter-clockwise from +x.
    pub fn bearing_to(&self, other: &Point2) -> f64 {
        (other.y - self.y).atan2(other.x - self.x)
    }

    pub fn lerp(&self, other: &Point2, t: f64) -> Point2 {
        Point2::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

impl fmt::Display for Point2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Rectangular voxel grid. Voxel `index = row * width_voxels + col`, row 0 at
/// the origin's y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub origin: Point2,
    pub width_voxels: usize,
    pub height_voxels: usize,
    pub voxel_width: f64,
}

/// Builds the grid covering `width_m` x `height_m` from `origin`, rounding the
/// voxel counts up.
pub fn build_grid(
    origin: Point2,
    width_m: f64,
    height_m: f64,
    voxel_width: f64,
) -> Result<VoxelGrid> {
    for (name, v) in [
        ("width", width_m),
        ("height", height_m),
        ("voxel width", voxel_width),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(RtiError::invalid(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    // 7.0 / 0.2 is 35.000000000000004 in binary floating point.
    let count = |len: f64| ((len / voxel_width - 1e-9).ceil() as usize).max(1);
    Ok(VoxelGrid {
        origin,
        width_voxels: count(width_m),
        height_voxels: count(height_m),
        voxel_width,
    })
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.width_voxels * self.height_voxels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height_voxels && col < self.width_voxels);
        row * self.width_voxels + col
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.width_voxels, index % self.width_voxels)
    }

    pub fn center(&self, index: usize) -> Point2 {
        let (row, col) = self.row_col(index);
        Point2::new(
            self.origin.x + (col as f64 + 0.5) * self.voxel_width,
            self.origin.y + (row as f64 + 0.5) * self.voxel_width,
        )
    }

    pub fn centers(&self) -> impl Iterator<Item = Point2> + '_ {
        (0..self.len()).map(move |i| self.center(i))
    }

    /// Voxel containing `p`, if any.
    pub fn voxel_at(&self, p: Point2) -> Option<usize> {
        let cx = ((p.x - self.origin.x) / self.voxel_width).floor();
        let cy = ((p.y - self.origin.y) / self.voxel_width).floor();
        if cx < 0.0 || cy < 0.0 {
            return None;
        }
        let (col, row) = (cx as usize, cy as usize);
        (col < self.width_voxels && row < self.height_voxels).then(|| self.index(row, col))
    }

    pub fn extent(&self) -> (Point2, Point2) {
        let far = Point2::new(
            self.origin.x + self.width_voxels as f64 * self.voxel_width,
            self.origin.y + self.height_voxels as f64 * self.voxel_width,
        );
        (self.origin, far)
    }

    pub fn contains(&self, p: Point2) -> bool {
        let (lo, hi) = self.extent();
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: u32,
    pub position: Point2,
    /// Bearing of direction 1 in radians.
    pub antenna_zero_bearing: f64,
    pub num_directions: u8,
}

impl NodeSpec {
    pub fn new(id: u32, position: Point2, antenna_zero_bearing: f64) -> Self {
        NodeSpec {
            id,
            position,
            antenna_zero_bearing,
            num_directions: DEFAULT_DIRECTIONS,
        }
    }

    /// Bearing of the 1-based `direction`.
    pub fn direction_bearing(&self, direction: u8) -> f64 {
        let step = 2.0 * PI / f64::from(self.num_directions);
        self.antenna_zero_bearing + f64::from(direction - 1) * step
    }
}

/// Directed link between two node ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Link {
    pub tx: u32,
    pub rx: u32,
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.tx, self.rx)
    }
}

/// Node positions plus every ordered pair of distinct nodes as a link, in
/// node order (tx-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLayout {
    nodes: Vec<NodeSpec>,
    links: Vec<Link>,
}

impl NetworkLayout {
    pub fn new(nodes: Vec<NodeSpec>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(RtiError::InvalidLayout("need at least two nodes".into()));
        }
        for (i, a) in nodes.iter().enumerate() {
            if a.num_directions == 0 {
                return Err(RtiError::InvalidLayout(format!(
                    "node {} has no antenna directions",
                    a.id
                )));
            }
            if nodes[..i].iter().any(|b| b.id == a.id) {
                return Err(RtiError::InvalidLayout(format!(
                    "duplicate node id {}",
                    a.id
                )));
            }
        }
        let links = nodes
            .iter()
            .flat_map(|t| {
                nodes
                    .iter()
                    .filter(move |r| r.id != t.id)
                    .map(move |r| Link { tx: t.id, rx: r.id })
            })
            .collect();
        Ok(NetworkLayout { nodes, links })
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node(&self, id: u32) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn link_index(&self, link: Link) -> Option<usize> {
        self.links.iter().position(|l| *l == link)
    }

    /// Endpoint positions of a link.
    pub fn endpoints(&self, link: Link) -> Result<(Point2, Point2)> {
        let get = |id| {
            self.node(id)
                .map(|n| n.position)
                .ok_or_else(|| RtiError::InvalidLayout(format!("unknown node id {id}")))
        };
        Ok((get(link.tx)?, get(link.rx)?))
    }

    pub fn link_length(&self, link: Link) -> Result<f64> {
        let (a, b) = self.endpoints(link)?;
        Ok(a.distance(&b))
    }

    /// Parses the layout text format, one `node <id> <x> <y> <zero_bearing_deg>`
    /// record per line. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut nodes = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 || fields[0] != "node" {
                return Err(RtiError::parse(
                    line_no,
                    "expected `node <id> <x> <y> <zero_bearing_deg>`",
                ));
            }
            let id = fields[1]
                .parse::<u32>()
                .map_err(|e| RtiError::parse(line_no, format!("bad node id: {e}")))?;
            let num = |s: &str, what: &str| {
                s.parse::<f64>()
                    .map_err(|e| RtiError::parse(line_no, format!("bad {what}: {e}")))
            };
            let x = num(fields[2], "x")?;
            let y = num(fields[3], "y")?;
            let bearing = num(fields[4], "bearing")?;
            nodes.push(NodeSpec::new(id, Point2::new(x, y), bearing.to_radians()));
        }
        NetworkLayout::new(nodes)
    }

    pub fn to_text(&self) -> String {
        self.nodes
            .iter()
            .map(|n| {
                format!(
                    "node {} {} {} {}\n",
                    n.id,
                    n.position.x,
                    n.position.y,
                    n.antenna_zero_bearing.to_degrees()
                )
            })
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        NetworkLayout::parse(&std::fs::read_to_string(path)?)
    }
}

/// Transmit/receive antenna direction combination (1-based). Ordering is
/// lexicographic on (tx, rx), which is the tie-break everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatternPair {
    pub tx_direction: u8,
    pub rx_direction: u8,
}

impl PatternPair {
    pub const fn new(tx_direction: u8, rx_direction: u8) -> Self {
        PatternPair {
            tx_direction,
            rx_direction,
        }
    }

    /// All `n * n` pairs in lexicographic order.
    pub fn all(num_directions: u8) -> Vec<PatternPair> {
        (1..=num_directions)
            .flat_map(|t| (1..=num_directions).map(move |r| PatternPair::new(t, r)))
            .collect()
    }
}

impl fmt::Display for PatternPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.tx_direction, self.rx_direction)
    }
}

/// Ellipse membership test: the excess path through `p` is below `lambda`.
pub fn in_ellipse(a: Point2, b: Point2, p: Point2, lambda: f64) -> bool {
    p.distance(&a) + p.distance(&b) < a.distance(&b) + lambda
}

/// Dense M x N ellipse model matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub matrix: DMatrix<f64>,
    pub lambda: f64,
}

impl WeightMatrix {
    pub fn num_links(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_voxels(&self) -> usize {
        self.matrix.ncols()
    }

    /// Column indices of the nonzero entries of one row.
    pub fn nonzero_columns(&self, row: usize) -> Vec<usize> {
        (0..self.matrix.ncols())
            .filter(|&j| self.matrix[(row, j)] != 0.0)
            .collect()
    }
}

pub fn build_weight_matrix(
    grid: &VoxelGrid,
    layout: &NetworkLayout,
    lambda: f64,
) -> Result<WeightMatrix> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(RtiError::invalid(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let centers: Vec<Point2> = grid.centers().collect();
    let mut matrix = DMatrix::zeros(layout.links().len(), grid.len());
    for (i, &link) in layout.links().iter().enumerate() {
        let (a, b) = layout.endpoints(link)?;
        let d = a.distance(&b);
        if d <= 0.0 {
            return Err(RtiError::InvalidLayout(format!(
                "link {link} has coincident nodes"
            )));
        }
        let w = 1.0 / d.sqrt();
        for (j, c) in centers.iter().enumerate() {
            if in_ellipse(a, b, *c, lambda) {
                matrix[(i, j)] = w;
            }
        }
    }
    Ok(WeightMatrix { matrix, lambda })
}

/// Magnitude of the angle between antenna `direction` of `node` and the line
/// from the node to `other`, in [0, pi].
pub fn angle_to_link(node: &NodeSpec, direction: u8, other: Point2) -> Result<f64> {
    if direction == 0 || direction > node.num_directions {
        return Err(RtiError::invalid(format!(
            "direction {direction} outside 1..={}",
            node.num_directions
        )));
    }
    if node.position.distance(&other) == 0.0 {
        return Err(RtiError::invalid(format!(
            "point coincides with node {}",
            node.id
        )));
    }
    Ok(wrap_angle(node.direction_bearing(direction) - node.position.bearing_to(&other)).abs())
}

/// True when segments `p1-p2` and `q1-q2` properly cross or touch.
pub fn segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
        (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
    }
    fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
        p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
    }
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}
