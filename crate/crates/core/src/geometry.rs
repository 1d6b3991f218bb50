//! Image-source geometry in the plane.
//!
//! Specular reflections at flat surfaces are modeled by virtual anchors
//! (VAs), the mirror images of a base station across each reflecting
//! surface. Everything here is a pure function of its arguments.

use nalgebra::Vector2;
use std::f64::consts::PI;

/// A point or displacement in the plane, in meters.
pub type Point = Vector2<f64>;

const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("invalid surface: {0}")]
    InvalidSurface(&'static str),
    #[error("invalid array geometry: {0}")]
    InvalidArray(&'static str),
}

/// Wraps an angle to `[-π, π)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let wrapped = angle - two_pi * ((angle + PI) / two_pi).floor();
    if wrapped >= PI {
        wrapped - two_pi
    } else if wrapped < -PI {
        wrapped + two_pi
    } else {
        wrapped
    }
}

/// Direction of `to` as seen from `from`, i.e. `atan2(to - from)`.
pub fn bearing(from: &Point, to: &Point) -> f64 {
    let d = to - from;
    wrap_angle(d.y.atan2(d.x))
}

/// A flat reflecting surface: unit normal `normal`, a point `anchor` on it,
/// and optionally the finite segment it occupies.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    normal: Point,
    anchor: Point,
    extent: Option<(Point, Point)>,
}

impl Surface {
    /// An unbounded surface through `anchor` with unit normal `normal`.
    pub fn infinite(normal: Point, anchor: Point) -> Result<Self, GeometryError> {
        if !normal.iter().chain(anchor.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidSurface("non-finite coordinates"));
        }
        if (normal.norm() - 1.0).abs() > 1e-12 {
            return Err(GeometryError::InvalidSurface("normal is not a unit vector"));
        }
        Ok(Self {
            normal,
            anchor,
            extent: None,
        })
    }

    /// The finite wall segment from `start` to `end`.
    pub fn segment(start: Point, end: Point) -> Result<Self, GeometryError> {
        if !start.iter().chain(end.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidSurface("non-finite coordinates"));
        }
        let dir = end - start;
        let len = dir.norm();
        if len < DEGENERATE_EPS {
            return Err(GeometryError::InvalidSurface("zero-length segment"));
        }
        let normal = Point::new(-dir.y, dir.x) / len;
        Ok(Self {
            normal,
            anchor: start,
            extent: Some((start, end)),
        })
    }

    pub fn normal(&self) -> &Point {
        &self.normal
    }

    pub fn anchor(&self) -> &Point {
        &self.anchor
    }

    pub fn extent(&self) -> Option<(Point, Point)> {
        self.extent
    }

    /// Signed distance of `p` from the surface along the normal.
    pub fn signed_distance(&self, p: &Point) -> f64 {
        self.normal.dot(&(p - self.anchor))
    }

    /// Whether the segment `a → b` crosses this surface, ignoring contacts
    /// at the segment's own endpoints.
    fn blocks(&self, a: &Point, b: &Point) -> bool {
        let da = self.signed_distance(a);
        let db = self.signed_distance(b);
        if da * db >= 0.0 {
            return false;
        }
        let t = da / (da - db);
        if !(1e-9..=1.0 - 1e-9).contains(&t) {
            return false;
        }
        match self.extent {
            None => true,
            Some((s, e)) => {
                let hit = a + (b - a) * t;
                let dir = e - s;
                let along = (hit - s).dot(&dir) / dir.norm_squared();
                (0.0..=1.0).contains(&along)
            }
        }
    }

    fn contains_projection(&self, q: &Point) -> bool {
        match self.extent {
            None => true,
            Some((s, e)) => {
                let dir = e - s;
                let along = (q - s).dot(&dir) / dir.norm_squared();
                (-1e-9..=1.0 + 1e-9).contains(&along)
            }
        }
    }
}

/// Mirror image of `p` across surface `s`.
pub fn mirror_point(p: &Point, s: &Surface) -> Point {
    let u = s.normal();
    p + 2.0 * (u.dot(s.anchor()) - u.dot(p)) * u
}

/// The point on `s` where the path from the BS at `p_bs` reflects towards
/// the MT at `p_mt`, given the VA `p_va` of the BS across `s`.
pub fn reflection_point(
    p_va: &Point,
    p_bs: &Point,
    p_mt: &Point,
    s: &Surface,
) -> Result<Point, GeometryError> {
    let u = s.normal();
    let leg = p_mt - p_va;
    let denom = 2.0 * leg.dot(u);
    if denom.abs() < DEGENERATE_EPS {
        return Err(GeometryError::DegenerateGeometry(
            "MT lies on the mirror plane of the VA",
        ));
    }
    Ok(p_va + ((p_bs - p_va).dot(u) / denom) * leg)
}

/// Which propagation path a VA parameterizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Path {
    LineOfSight,
    /// Single-bounce reflection at the surface with the given index.
    Reflection(usize),
}

impl Path {
    pub fn bounces(self) -> u32 {
        match self {
            Path::LineOfSight => 0,
            Path::Reflection(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    /// Path length in meters.
    pub distance: f64,
    /// Angle of arrival in the MT frame.
    pub aoa: f64,
    /// Angle of departure in the global frame, measured as the direction from
    /// the VA to the MT.
    pub aod: f64,
    pub bounce_count: u32,
}

/// Distance, AoA and AoD of the path between the MT and a VA.
pub fn path_params(
    p_mt: &Point,
    o_mt: f64,
    p_va: &Point,
    path: Path,
) -> Result<PathParams, GeometryError> {
    let distance = (p_mt - p_va).norm();
    if distance < DEGENERATE_EPS {
        return Err(GeometryError::DegenerateGeometry("MT coincides with the VA"));
    }
    Ok(PathParams {
        distance,
        aoa: wrap_angle(bearing(p_mt, p_va) - o_mt),
        aod: bearing(p_va, p_mt),
        bounce_count: path.bounces(),
    })
}

/// Position of an array element at distance `d_h` and angle `psi_h` from the
/// array center, for an array frame rotated by `frame_orientation`.
pub fn element_position(center: &Point, frame_orientation: f64, d_h: f64, psi_h: f64) -> Point {
    let a = frame_orientation + psi_h;
    center + d_h * Point::new(a.cos(), a.sin())
}

/// Antenna array layout, each element given by its distance and angle from
/// the array center in the array's own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    elements: Vec<(f64, f64)>,
}

impl ArrayGeometry {
    pub fn new(elements: Vec<(f64, f64)>) -> Result<Self, GeometryError> {
        if elements.is_empty() {
            return Err(GeometryError::InvalidArray("array needs at least one element"));
        }
        for &(d, psi) in &elements {
            if !(d.is_finite() && psi.is_finite()) || d < 0.0 {
                return Err(GeometryError::InvalidArray("element distance must be finite and >= 0"));
            }
            if !(-PI..PI).contains(&psi) {
                return Err(GeometryError::InvalidArray("element angle outside [-pi, pi)"));
            }
        }
        Ok(Self { elements })
    }

    /// A single element at the array center.
    pub fn single() -> Self {
        Self {
            elements: vec![(0.0, 0.0)],
        }
    }

    /// Square uniform rectangular array of `side × side` elements with the
    /// given inter-element spacing, centered on the array origin.
    pub fn square_ura(side: usize, spacing: f64) -> Self {
        let offset = (side as f64 - 1.0) / 2.0;
        let elements = (0..side)
            .flat_map(|r| (0..side).map(move |c| (r, c)))
            .map(|(r, c)| {
                let x = (c as f64 - offset) * spacing;
                let y = (r as f64 - offset) * spacing;
                polar(x, y)
            })
            .collect();
        Self { elements }
    }

    /// Uniform linear array along the frame's x axis.
    pub fn ula(count: usize, spacing: f64) -> Self {
        let offset = (count as f64 - 1.0) / 2.0;
        let elements = (0..count)
            .map(|c| polar((c as f64 - offset) * spacing, 0.0))
            .collect();
        Self { elements }
    }

    /// The conventional layout for `count` elements at `spacing`: a square URA
    /// when `count` is a perfect square above one, otherwise a ULA.
    pub fn for_count(count: usize, spacing: f64) -> Self {
        let side = (count as f64).sqrt().round() as usize;
        match count {
            0 | 1 => Self::single(),
            _ if side * side == count => Self::square_ura(side, spacing),
            _ => Self::ula(count, spacing),
        }
    }

    pub fn elements(&self) -> &[(f64, f64)] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

fn polar(x: f64, y: f64) -> (f64, f64) {
    let d = x.hypot(y);
    let psi = if d == 0.0 { 0.0 } else { wrap_angle(y.atan2(x)) };
    (d, psi)
}

/// Whether the path parameterized by the VA at `p_va` reaches the MT.
///
/// For a reflection, `p_va` must be the mirror image across
/// `surfaces[index]`; the base station is recovered by mirroring back. The
/// path is visible when MT and BS lie on the same side of the reflecting
/// surface, the reflection point falls within its extent, and neither leg
/// crosses another surface. The line of sight only checks blockage.
pub fn is_visible(p_mt: &Point, p_va: &Point, path: Path, surfaces: &[Surface]) -> bool {
    match path {
        Path::LineOfSight => !surfaces.iter().any(|s| s.blocks(p_va, p_mt)),
        Path::Reflection(index) => {
            let Some(wall) = surfaces.get(index) else {
                return false;
            };
            let p_bs = mirror_point(p_va, wall);
            let side_bs = wall.signed_distance(&p_bs);
            let side_mt = wall.signed_distance(p_mt);
            if side_bs * side_mt <= 0.0 {
                return false;
            }
            let Ok(q) = reflection_point(p_va, &p_bs, p_mt, wall) else {
                return false;
            };
            if !wall.contains_projection(&q) {
                return false;
            }
            !surfaces
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != index)
                .any(|(_, s)| s.blocks(&p_bs, &q) || s.blocks(&q, p_mt))
        }
    }
}
