//! Planar points, the pivotal grid, box arithmetic, the neighbor-direction
//! set `DIR`, and dilution predicates.
//!
//! The plane is partitioned by an axis-aligned grid of half-open `cell x cell`
//! boxes: a box includes its left and bottom sides but not its right and top
//! sides, so every point lands in exactly one box. The pivotal grid uses
//! `cell = gamma = r / sqrt(2)`, the largest pitch for which any two stations
//! in the same box are mutually in range.
//!
//! ```
//! use sinr_backbone::geometry::{box_of, dir_set, GridCoord, GridSpec, Point};
//!
//! let g = GridSpec::new(1.0);
//! // the right side of a box belongs to the next box over
//! assert_eq!(box_of(Point::new(1.0, 0.5), g), GridCoord::new(1, 0));
//! assert_eq!(box_of(Point::new(-0.5, -0.5), g), GridCoord::new(-1, -1));
//! // two pivotal boxes can host mutually reachable stations at 20 offsets
//! let dirs = dir_set();
//! assert_eq!(dirs.len(), 20);
//! assert!(dirs.contains(&(2, 1)) && !dirs.contains(&(2, 2)));
//! ```

use serde::{Deserialize, Serialize};

use crate::phy::ModelParams;

/// A point of the plane, in abstract length units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        debug_assert!(x.is_finite() && y.is_finite());
        Point { x, y }
    }
}

/// Integer coordinates `(i, j)` of a grid box; the box spans
/// `[i*cell, (i+1)*cell) x [j*cell, (j+1)*cell)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCoord {
    pub i: i32,
    pub j: i32,
}

impl GridCoord {
    pub fn new(i: i32, j: i32) -> Self {
        GridCoord { i, j }
    }

    pub fn offset(&self, d: (i32, i32)) -> GridCoord {
        GridCoord::new(self.i + d.0, self.j + d.1)
    }
}

impl std::fmt::Display for GridCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.i, self.j)
    }
}

/// Side length of the (square) grid boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cell: f64,
}

impl GridSpec {
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell must be positive");
        GridSpec { cell }
    }

    /// The pivotal grid for the given model parameters.
    pub fn pivotal(params: &ModelParams) -> Self {
        GridSpec::new(pivotal_gamma(params))
    }
}

/// Euclidean distance.
pub fn dist(p: Point, q: Point) -> f64 {
    let dx = p.x - q.x;
    let dy = p.y - q.y;
    (dx * dx + dy * dy).sqrt()
}

/// Box of a point: floor semantics give the half-open box rule (the left and
/// bottom sides belong to the box, the right and top ones do not). Negative
/// coordinates use the mathematical floor, not truncation.
pub fn box_of(p: Point, g: GridSpec) -> GridCoord {
    GridCoord::new(
        (p.x / g.cell).floor() as i32,
        (p.y / g.cell).floor() as i32,
    )
}

/// Pitch of the pivotal grid, `gamma = r / sqrt(2)` where `r` is the
/// communication range derived from the model parameters.
pub fn pivotal_gamma(params: &ModelParams) -> f64 {
    params.range() / std::f64::consts::SQRT_2
}

/// Infimum distance between boxes at relative offset `(d1, d2)`, in units of
/// the cell size. Boxes separated by `k >= 1` cells in an axis contribute a
/// gap of `k - 1` cells in that axis.
fn box_gap_cells(d: (i32, i32)) -> f64 {
    let gx = (d.0.abs() - 1).max(0) as f64;
    let gy = (d.1.abs() - 1).max(0) as f64;
    (gx * gx + gy * gy).sqrt()
}

/// The set `DIR` of offsets at which two pivotal-grid boxes can contain
/// mutually reachable stations.
///
/// Computed from the box geometry rather than hard-coded: an offset is
/// included iff the infimum distance between the two half-open boxes is
/// strictly below `r = cell * sqrt(2)`. The infimum at the four corner
/// offsets `(+-2, +-2)` equals `r` and is never attained, so they are
/// excluded and `|DIR| = 20`. The result is sorted lexicographically; all
/// direction-indexed protocol phases iterate in this order.
pub fn dir_set() -> Vec<(i32, i32)> {
    let mut dirs = Vec::new();
    for d1 in -2..=2 {
        for d2 in -2..=2 {
            if (d1, d2) == (0, 0) {
                continue;
            }
            if box_gap_cells((d1, d2)) < std::f64::consts::SQRT_2 {
                dirs.push((d1, d2));
            }
        }
    }
    dirs
}

/// True iff all pairwise coordinate differences are divisible by `delta`,
/// i.e. all coordinates share one residue class mod `delta` in each axis.
pub fn is_diluted<'a, I>(coords: I, delta: u32) -> bool
where
    I: IntoIterator<Item = &'a GridCoord>,
{
    assert!(delta >= 1);
    let d = delta as i64;
    let mut base: Option<(i64, i64)> = None;
    for c in coords {
        let r = ((c.i as i64).rem_euclid(d), (c.j as i64).rem_euclid(d));
        match base {
            None => base = Some(r),
            Some(b) if b != r => return false,
            _ => {}
        }
    }
    true
}
