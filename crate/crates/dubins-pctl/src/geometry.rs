//! Convex polygonal environment model and the exact disc predicates used to
//! label states of the tree abstraction and to generate trajectory words.
//!
//! All regions and discs are closed sets; tangency counts as both containment
//! and intersection. Only strictly convex counterclockwise polygons are
//! accepted — non-convex environments must be pre-decomposed in the input
//! file.

use crate::dynamics::Pose;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("region '{name}': needs at least 3 vertices (got {got})")]
    TooFewVertices { name: String, got: usize },
    #[error("region '{name}': non-finite vertex coordinate")]
    NonFinite { name: String },
    #[error("region '{name}': repeated vertex at index {index}")]
    RepeatedVertex { name: String, index: usize },
    #[error("region '{name}': collinear vertices around index {index}")]
    Collinear { name: String, index: usize },
    #[error("region '{name}': not convex (reflex vertex around index {index})")]
    NotConvex { name: String, index: usize },
    #[error("region '{name}': clockwise winding")]
    ClockwiseWinding { name: String },
    #[error("environment has no pickup region")]
    NoPickup,
    #[error("environment has no dropoff region")]
    NoDropoff,
    #[error("initial position lies inside unsafe region '{name}'")]
    InitialInUnsafe { name: String },
}

/// Point in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        (dx * dx + dy * dy).sqrt()
    }
}

/// The three atomic propositions observable in the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Prop {
    Pickup,
    Dropoff,
    Unsafe,
}

impl Prop {
    fn bit(self) -> u8 {
        match self {
            Prop::Pickup => 1,
            Prop::Dropoff => 2,
            Prop::Unsafe => 4,
        }
    }
}

/// A set of propositions, stored as a bitmask.
///
/// Displays compactly as the letters `p`, `d`, `u` in that order, or `-` for
/// the empty set; the same encoding is used in policy files and DOT exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PropSet(u8);

impl PropSet {
    pub const EMPTY: PropSet = PropSet(0);

    pub fn singleton(p: Prop) -> Self {
        PropSet(p.bit())
    }

    pub fn insert(&mut self, p: Prop) {
        self.0 |= p.bit();
    }

    pub fn with(mut self, p: Prop) -> Self {
        self.insert(p);
        self
    }

    pub fn contains(self, p: Prop) -> bool {
        self.0 & p.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for PropSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "-");
        }
        if self.contains(Prop::Pickup) {
            write!(f, "p")?;
        }
        if self.contains(Prop::Dropoff) {
            write!(f, "d")?;
        }
        if self.contains(Prop::Unsafe) {
            write!(f, "u")?;
        }
        Ok(())
    }
}

impl FromStr for PropSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "-" {
            return Ok(PropSet::EMPTY);
        }
        let mut set = PropSet::EMPTY;
        for c in s.chars() {
            match c {
                'p' => set.insert(Prop::Pickup),
                'd' => set.insert(Prop::Dropoff),
                'u' => set.insert(Prop::Unsafe),
                _ => return Err(format!("unknown proposition letter '{c}'")),
            }
        }
        Ok(set)
    }
}

/// Role of a region in the mission. Each label carries at most one
/// proposition; `Free` regions carry none.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionLabel {
    Pickup,
    Dropoff,
    Unsafe,
    Free,
}

impl RegionLabel {
    pub fn proposition(self) -> Option<Prop> {
        match self {
            RegionLabel::Pickup => Some(Prop::Pickup),
            RegionLabel::Dropoff => Some(Prop::Dropoff),
            RegionLabel::Unsafe => Some(Prop::Unsafe),
            RegionLabel::Free => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::Pickup => "pickup",
            RegionLabel::Dropoff => "dropoff",
            RegionLabel::Unsafe => "unsafe",
            RegionLabel::Free => "free",
        }
    }
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pickup" => Ok(RegionLabel::Pickup),
            "dropoff" => Ok(RegionLabel::Dropoff),
            "unsafe" => Ok(RegionLabel::Unsafe),
            "free" => Ok(RegionLabel::Free),
            other => Err(format!("unknown region label '{other}'")),
        }
    }
}

/// Strictly convex polygon with counterclockwise winding.
///
/// Edge planes are precomputed so that the signed inward distance of a point
/// to every edge line is a single dot product.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexRegion {
    name: String,
    label: RegionLabel,
    vertices: Vec<Point2>,
    // inward unit normal (nx, ny) and offset c per edge: signed = nx*x + ny*y + c
    planes: Vec<(f64, f64, f64)>,
}

/// True if the polygon winds clockwise (every cross product of consecutive
/// edges negative). Mixed or zero cross products are reported as convexity
/// errors so callers can distinguish a fixable orientation mistake from a
/// genuinely invalid polygon.
pub fn is_clockwise(name: &str, vertices: &[Point2]) -> Result<bool, GeometryError> {
    let n = vertices.len();
    if n < 3 {
        return Err(GeometryError::TooFewVertices { name: name.to_string(), got: n });
    }
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let c = vertices[(i + 2) % n];
        let cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
        if cross == 0.0 {
            return Err(GeometryError::Collinear { name: name.to_string(), index: (i + 1) % n });
        }
        if sign == 0.0 {
            sign = cross;
        } else if sign * cross < 0.0 {
            return Err(GeometryError::NotConvex { name: name.to_string(), index: (i + 1) % n });
        }
    }
    Ok(sign < 0.0)
}

impl ConvexRegion {
    pub fn new(
        name: impl Into<String>,
        label: RegionLabel,
        vertices: Vec<Point2>,
    ) -> Result<Self, GeometryError> {
        let name = name.into();
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices { name, got: vertices.len() });
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(GeometryError::NonFinite { name });
        }
        for i in 0..vertices.len() {
            for j in i + 1..vertices.len() {
                if vertices[i] == vertices[j] {
                    return Err(GeometryError::RepeatedVertex { name, index: j });
                }
            }
        }
        if is_clockwise(&name, &vertices)? {
            return Err(GeometryError::ClockwiseWinding { name });
        }
        let n = vertices.len();
        let planes = (0..n)
            .map(|i| {
                let a = vertices[i];
                let b = vertices[(i + 1) % n];
                let (ex, ey) = (b.x - a.x, b.y - a.y);
                let len = (ex * ex + ey * ey).sqrt();
                // interior is to the left of each CCW edge
                let (nx, ny) = (-ey / len, ex / len);
                (nx, ny, -(nx * a.x + ny * a.y))
            })
            .collect();
        Ok(Self { name, label, vertices, planes })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn label(&self) -> RegionLabel {
        self.label
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    /// Minimum over all edges of the signed inward distance from `p` to the
    /// edge line. Non-negative iff `p` lies in the closed region; values
    /// `>= r` mean the whole disc of radius `r` about `p` does.
    pub fn signed_inward_min(&self, p: Point2) -> f64 {
        self.planes
            .iter()
            .map(|&(nx, ny, c)| nx * p.x + ny * p.y + c)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains_point(&self, p: Point2) -> bool {
        self.signed_inward_min(p) >= 0.0
    }

    /// Euclidean distance from `p` to the closed region; 0 iff `p` is inside
    /// or on the boundary.
    pub fn distance_to(&self, p: Point2) -> f64 {
        if self.contains_point(p) {
            return 0.0;
        }
        let n = self.vertices.len();
        (0..n)
            .map(|i| dist_point_segment(p, self.vertices[i], self.vertices[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }

    /// True iff the closed disc of radius `r` about `center` lies within the
    /// closed region.
    pub fn contains_disc(&self, center: Point2, r: f64) -> bool {
        debug_assert!(r >= 0.0);
        self.signed_inward_min(center) >= r
    }

    /// True iff the closed disc of radius `r` about `center` meets the closed
    /// region.
    pub fn intersects_disc(&self, center: Point2, r: f64) -> bool {
        debug_assert!(r >= 0.0);
        self.distance_to(center) <= r
    }
}

fn dist_point_segment(p: Point2, a: Point2, b: Point2) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let (apx, apy) = (p.x - a.x, p.y - a.y);
    let len2 = abx * abx + aby * aby;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0);
    p.dist(Point2::new(a.x + t * abx, a.y + t * aby))
}

/// Partitioned workspace plus the vehicle's known initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    regions: Vec<ConvexRegion>,
    initial_pose: Pose,
}

impl Environment {
    pub fn new(regions: Vec<ConvexRegion>, initial_pose: Pose) -> Result<Self, GeometryError> {
        if !regions.iter().any(|r| r.label == RegionLabel::Pickup) {
            return Err(GeometryError::NoPickup);
        }
        if !regions.iter().any(|r| r.label == RegionLabel::Dropoff) {
            return Err(GeometryError::NoDropoff);
        }
        let p0 = initial_pose.position();
        if let Some(r) = regions
            .iter()
            .find(|r| r.label == RegionLabel::Unsafe && r.contains_point(p0))
        {
            return Err(GeometryError::InitialInUnsafe { name: r.name.clone() });
        }
        Ok(Self { regions, initial_pose })
    }

    pub fn regions(&self) -> &[ConvexRegion] {
        &self.regions
    }

    pub fn initial_pose(&self) -> Pose {
        self.initial_pose
    }

    pub fn labeled(&self, label: RegionLabel) -> impl Iterator<Item = &ConvexRegion> {
        self.regions.iter().filter(move |r| r.label == label)
    }

    /// Propositions satisfied at a point: each proposition holds iff the
    /// point lies in the closed union of regions carrying it. Points on
    /// shared boundaries may satisfy several propositions.
    pub fn propositions_at(&self, p: Point2) -> PropSet {
        let mut set = PropSet::EMPTY;
        for r in &self.regions {
            if let Some(prop) = r.label.proposition() {
                if !set.contains(prop) && r.contains_point(p) {
                    set.insert(prop);
                }
            }
        }
        set
    }
}
