use std::fmt;

use serde::{Deserialize, Serialize};

pub type FloorId = i32;

/// Grid cell addressed by (row, col). Row grows southward, col eastward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub row: i32,
    pub col: i32,
}

impl Cell {
    pub const fn new(row: i32, col: i32) -> Self {
        Self { row, col }
    }

    pub fn step(self, heading: Heading) -> Self {
        self.offset(heading, 1)
    }

    pub fn offset(self, heading: Heading, n: i32) -> Self {
        let (dr, dc) = heading.delta();
        Self::new(self.row + dr * n, self.col + dc * n)
    }

    pub fn neighbors4(self) -> [Cell; 4] {
        [
            Cell::new(self.row - 1, self.col),
            Cell::new(self.row, self.col - 1),
            Cell::new(self.row, self.col + 1),
            Cell::new(self.row + 1, self.col),
        ]
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    /// Metric center of the cell as (x, y) in meters.
    pub fn center(self, cell_size: f64) -> Point {
        Point {
            x: (f64::from(self.col) + 0.5) * cell_size,
            y: (f64::from(self.row) + 0.5) * cell_size,
        }
    }
}

impl From<[i32; 2]> for Cell {
    fn from(v: [i32; 2]) -> Self {
        Cell::new(v[0], v[1])
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.row, c.col]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Metric position on a floor, meters. `y` grows southward like rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::N => (-1, 0),
            Heading::E => (0, 1),
            Heading::S => (1, 0),
            Heading::W => (0, -1),
        }
    }

    /// Unit vector in (x, y) metric coordinates.
    pub fn vector(self) -> (f64, f64) {
        let (dr, dc) = self.delta();
        (f64::from(dc), f64::from(dr))
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::N => Heading::W,
            Heading::W => Heading::S,
            Heading::S => Heading::E,
            Heading::E => Heading::N,
        }
    }

    pub fn right(self) -> Heading {
        self.left().opposite()
    }

    pub fn opposite(self) -> Heading {
        match self {
            Heading::N => Heading::S,
            Heading::S => Heading::N,
            Heading::E => Heading::W,
            Heading::W => Heading::E,
        }
    }

    /// Heading of the single step from `a` to the 4-adjacent cell `b`.
    pub fn between(a: Cell, b: Cell) -> Option<Heading> {
        Heading::ALL.into_iter().find(|h| a.step(*h) == b)
    }

    /// Axis-aligned heading that best points from `from` toward `to`.
    pub fn toward(from: Point, to: Point) -> Heading {
        let dx = to.x - from.x;
        let dy = to.y - from.y;
        if dx.abs() >= dy.abs() && dx != 0.0 {
            if dx > 0.0 {
                Heading::E
            } else {
                Heading::W
            }
        } else if dy > 0.0 {
            Heading::S
        } else {
            Heading::N
        }
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Heading::N => "N",
            Heading::E => "E",
            Heading::S => "S",
            Heading::W => "W",
        };
        f.write_str(s)
    }
}

/// Direction relative to the robot camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelDir {
    Forward,
    Left,
    Right,
    Backward,
}

impl RelDir {
    pub const ALL: [RelDir; 4] = [RelDir::Forward, RelDir::Left, RelDir::Right, RelDir::Backward];
    pub const PUSHABLE: [RelDir; 3] = [RelDir::Forward, RelDir::Left, RelDir::Right];

    pub fn apply(self, heading: Heading) -> Heading {
        match self {
            RelDir::Forward => heading,
            RelDir::Left => heading.left(),
            RelDir::Right => heading.right(),
            RelDir::Backward => heading.opposite(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelDir::Forward => "forward",
            RelDir::Left => "left",
            RelDir::Right => "right",
            RelDir::Backward => "backward",
        }
    }

    pub fn parse(s: &str) -> Option<RelDir> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forward" | "front" | "ahead" => Some(RelDir::Forward),
            "left" => Some(RelDir::Left),
            "right" => Some(RelDir::Right),
            "backward" | "back" | "backwards" => Some(RelDir::Backward),
            _ => None,
        }
    }
}

impl fmt::Display for RelDir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Signed bearing of `target` seen from `origin` facing `heading`, radians.
/// Positive values are to the robot's left.
pub fn bearing(origin: Point, heading: Heading, target: Point) -> f64 {
    let (hx, hy) = heading.vector();
    let dx = target.x - origin.x;
    let dy = target.y - origin.y;
    // y grows southward, so the usual cross product sign flips.
    let cross = hx * dy - hy * dx;
    let dot = hx * dx + hy * dy;
    (-cross).atan2(dot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn left_and_right_are_inverse_rotations() {
        for h in Heading::ALL {
            assert_eq!(h.left().right(), h);
            assert_eq!(h.left().left(), h.opposite());
        }
        assert_eq!(Heading::E.left(), Heading::N);
        assert_eq!(Heading::W.left(), Heading::S);
    }

    #[test]
    fn bearing_sign_convention() {
        let o = Point { x: 0.0, y: 0.0 };
        // facing north, a point to the west is on the left
        let b = bearing(o, Heading::N, Point { x: -1.0, y: 0.0 });
        assert!((b - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let ahead = bearing(o, Heading::E, Point { x: 2.0, y: 0.0 });
        assert!(ahead.abs() < 1e-12);
    }

    #[test]
    fn cell_serializes_as_pair() {
        let c = Cell::new(3, 7);
        assert_eq!(serde_json::to_string(&c).unwrap(), "[3,7]");
        let back: Cell = serde_json::from_str("[3,7]").unwrap();
        assert_eq!(back, c);
    }
}
