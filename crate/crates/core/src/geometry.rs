//! Source loci, rays, balls, and the ray-set calculus used to reason about
//! truncation.
//!
//! World coordinates are expressed in voxels of the reference grid. A
//! [`SourceGeometry`] bundles a source locus (sphere, helix, circle, twin
//! circles), the target ball `B` the object lives in, and a flat detector that
//! faces the ball center from every source position.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    /// Unit vector in the same direction, or `None` for zero/non-finite input.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Some(self / n)
        } else {
            None
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4})", self.x, self.y, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A deterministic orthonormal pair spanning the plane orthogonal to `n`.
pub fn orthonormal_frame(n: Vec3) -> (Vec3, Vec3) {
    let helper = if n.z.abs() < 0.9 { Vec3::Z } else { Vec3::X };
    let e1 = helper.cross(n).normalized().expect("unit normal");
    let e2 = n.cross(e1);
    (e1, e2)
}

/// Quasi-uniform directions on the upper hemisphere (z > 0), Fibonacci lattice.
pub fn fibonacci_hemisphere(count: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Quasi-uniform directions on the whole sphere, Fibonacci lattice.
pub fn fibonacci_sphere(count: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// Low-discrepancy (Halton 2,3,5) points filling a ball.
pub fn halton_ball_points(ball: &Ball, count: usize) -> Vec<Vec3> {
    (1..=count as u64)
        .map(|i| {
            let r = ball.radius * radical_inverse(i, 2).cbrt();
            let cos_p = 2.0 * radical_inverse(i, 3) - 1.0;
            let sin_p = (1.0 - cos_p * cos_p).max(0.0).sqrt();
            let az = 2.0 * PI * radical_inverse(i, 5);
            ball.center + Vec3::new(sin_p * az.cos(), sin_p * az.sin(), cos_p) * r
        })
        .collect()
}

/// Half-line `source + t * direction`, `t >= 0`, with a unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub source: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(source: Vec3, direction: Vec3) -> Result<Ray> {
        if !source.is_finite() {
            return Err(Error::Geometry(format!("non-finite ray source {source}")));
        }
        let direction = direction
            .normalized()
            .ok_or_else(|| Error::Geometry(format!("degenerate ray direction {direction}")))?;
        Ok(Ray { source, direction })
    }

    /// Ray from `source` aimed at `target`. Both points must differ.
    pub fn through(source: Vec3, target: Vec3) -> Result<Ray> {
        Ray::new(source, target - source)
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.source + self.direction * t
    }

    pub fn reversed(&self) -> Ray {
        Ray { source: self.source, direction: -self.direction }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec3,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec3, radius: f64) -> Result<Ball> {
        if !(radius > 0.0 && radius.is_finite()) || !center.is_finite() {
            return Err(Error::Geometry(format!("invalid ball radius {radius}")));
        }
        Ok(Ball { center, radius })
    }

    pub fn contains_point(&self, p: Vec3) -> bool {
        (p - self.center).norm2() <= self.radius * self.radius * (1.0 + 1e-12)
    }

    /// Closed containment of `other` in `self`.
    pub fn contains_ball(&self, other: &Ball) -> bool {
        (other.center - self.center).norm() + other.radius <= self.radius * (1.0 + 1e-12)
    }

    /// Concentric ball with radius scaled by `fraction`.
    pub fn scaled(&self, fraction: f64) -> Result<Ball> {
        Ball::new(self.center, self.radius * fraction)
    }

    /// Parameter interval of the full line through `ray` inside the ball.
    pub fn chord(&self, ray: &Ray) -> Option<(f64, f64)> {
        let oc = ray.source - self.center;
        let b = oc.dot(ray.direction);
        let c = oc.norm2() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        Some((-b - s, -b + s))
    }
}

/// True iff the half-ray meets the closed ball. Tangent rays count as hits.
pub fn ray_hits_ball(ray: &Ray, ball: &Ball) -> bool {
    let to_center = ball.center - ray.source;
    let t = to_center.dot(ray.direction).max(0.0);
    let closest = ray.at(t);
    (closest - ball.center).norm2() <= ball.radius * ball.radius * (1.0 + 1e-12)
}

/// Cosine of the cone aperture used in the ray-volume bound:
/// `k(u, v) = v / sqrt(u^2 + v^2)` with `u` the ROI radius and `v` the
/// source distance.
pub fn cap_cos(roi_radius: f64, source_dist: f64) -> Result<f64> {
    if !(roi_radius >= 0.0) || !(source_dist > roi_radius) || !source_dist.is_finite() {
        return Err(Error::Geometry(format!(
            "cap_cos needs source_dist > roi_radius >= 0, got u={roi_radius}, v={source_dist}"
        )));
    }
    Ok(aperture_ratio(roi_radius, source_dist))
}

pub(crate) fn aperture_ratio(u: f64, v: f64) -> f64 {
    v / (u * u + v * v).sqrt()
}

/// Cosine of the half-aperture of the cone of half-rays from a point at
/// distance `source_dist` that meet a ball of radius `roi_radius`
/// (`sin(alpha) = u / v`).
pub fn tangent_cone_cos(roi_radius: f64, source_dist: f64) -> Result<f64> {
    if !(roi_radius >= 0.0) || !(source_dist > roi_radius) || !source_dist.is_finite() {
        return Err(Error::Geometry(format!(
            "tangent_cone_cos needs source_dist > roi_radius >= 0, got u={roi_radius}, v={source_dist}"
        )));
    }
    let s = roi_radius / source_dist;
    Ok((1.0 - s * s).sqrt())
}

/// Area of a spherical cap of half-aperture `alpha`: `2 pi (1 - cos alpha)`.
pub fn cap_area(cos_alpha: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&cos_alpha) {
        return Err(Error::Geometry(format!("cap_area: cos_alpha {cos_alpha} outside [-1, 1]")));
    }
    Ok(2.0 * PI * (1.0 - cos_alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub rows: usize,
    pub cols: usize,
    /// Pixel pitch in world units, measured in the detector plane.
    pub spacing: f64,
    /// Source to detector-center distance.
    pub sdd: f64,
}

impl Detector {
    /// Smallest square detector at distance `sdd` whose pixels measure
    /// `iso_spacing` when scaled back to the ball center, and which contains
    /// the shadow of `ball` seen from distance `source_dist`.
    pub fn covering(ball: &Ball, source_dist: f64, sdd: f64, iso_spacing: f64) -> Detector {
        let spacing = iso_spacing * sdd / source_dist;
        let beta = (ball.radius / source_dist).asin();
        let shadow = sdd * beta.tan();
        let half = (shadow / spacing).ceil() as usize + 1;
        Detector { rows: 2 * half, cols: 2 * half, spacing, sdd }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SourceKind {
    /// Sources on a sphere around the ball center, sampled on polar rings.
    Sphere { radius: f64, polar_step_deg: f64, azimuth_step_deg: f64 },
    /// `gamma(t) = (a cos t, a sin t, pitch t / 2pi)`, centered on the ball.
    Helix { radius: f64, pitch: f64, turns: usize, per_turn: usize },
    /// Circle around the ball center in the plane orthogonal to `normal`.
    Circle {
        radius: f64,
        #[serde(default = "default_normal")]
        normal: Vec3,
        positions: usize,
    },
    /// Two concentric circles in the planes z = 0 and x = 0.
    TwinCircles { radius: f64, per_circle: usize },
}

fn default_normal() -> Vec3 {
    Vec3::Z
}

impl SourceKind {
    pub fn name(&self) -> &'static str {
        match self {
            SourceKind::Sphere { .. } => "sphere",
            SourceKind::Helix { .. } => "helix",
            SourceKind::Circle { .. } => "circle",
            SourceKind::TwinCircles { .. } => "twin_circles",
        }
    }

    pub fn is_curve(&self) -> bool {
        !matches!(self, SourceKind::Sphere { .. })
    }
}

/// Orientation and placement of the detector for one source position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorFrame {
    /// Unit vector from the source toward the ball center (detector normal).
    pub axis: Vec3,
    /// Column direction.
    pub eu: Vec3,
    /// Row direction.
    pub ev: Vec3,
    /// Detector center in world coordinates.
    pub center: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceSample {
    pub position: Vec3,
    /// Curve parameter (curve kinds) or polar angle (sphere).
    pub param: f64,
    /// Index of the curve piece (second circle of twin circles is 1).
    pub piece: usize,
    /// Quadrature weight: arclength element for curves, area element for the sphere.
    pub weight: f64,
    /// Curve velocity `gamma'(t)`; zero for the sphere.
    pub velocity: Vec3,
    pub frame: DetectorFrame,
}

impl SourceSample {
    pub fn pixel_center(&self, det: &Detector, row: usize, col: usize) -> Vec3 {
        let u = (col as f64 - (det.cols as f64 - 1.0) / 2.0) * det.spacing;
        let v = (row as f64 - (det.rows as f64 - 1.0) / 2.0) * det.spacing;
        self.frame.center + self.frame.eu * u + self.frame.ev * v
    }

    pub fn pixel_ray(&self, det: &Detector, row: usize, col: usize) -> Ray {
        let d = self.pixel_center(det, row, col) - self.position;
        Ray { source: self.position, direction: d / d.norm() }
    }

    /// Fractional (row, col) where a direction from this source meets the
    /// detector plane, or `None` when it points away from the detector.
    pub fn project_direction(&self, det: &Detector, dir: Vec3) -> Option<(f64, f64)> {
        let c = dir.dot(self.frame.axis);
        if c <= 1e-12 {
            return None;
        }
        let t = det.sdd / c;
        let u = dir.dot(self.frame.eu) * t;
        let v = dir.dot(self.frame.ev) * t;
        Some((
            v / det.spacing + (det.rows as f64 - 1.0) / 2.0,
            u / det.spacing + (det.cols as f64 - 1.0) / 2.0,
        ))
    }

    /// Solid angle subtended by one detector pixel around its center ray.
    pub fn pixel_solid_angle(&self, det: &Detector, row: usize, col: usize) -> f64 {
        let d = self.pixel_center(det, row, col) - self.position;
        let r = d.norm();
        det.spacing * det.spacing * det.sdd / (r * r * r)
    }
}

/// One smooth piece of a source curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CurvePiece {
    Circle { center: Vec3, radius: f64, e1: Vec3, e2: Vec3 },
    Helix { center: Vec3, radius: f64, rise: f64, t0: f64, t1: f64 },
}

impl CurvePiece {
    pub fn point(&self, t: f64) -> Vec3 {
        match *self {
            CurvePiece::Circle { center, radius, e1, e2 } => {
                center + (e1 * t.cos() + e2 * t.sin()) * radius
            }
            CurvePiece::Helix { center, radius, rise, .. } => {
                center + Vec3::new(radius * t.cos(), radius * t.sin(), rise * t)
            }
        }
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        match *self {
            CurvePiece::Circle { radius, e1, e2, .. } => (e2 * t.cos() - e1 * t.sin()) * radius,
            CurvePiece::Helix { radius, rise, .. } => {
                Vec3::new(-radius * t.sin(), radius * t.cos(), rise)
            }
        }
    }

    pub fn range(&self) -> (f64, f64) {
        match *self {
            CurvePiece::Circle { .. } => (0.0, 2.0 * PI),
            CurvePiece::Helix { t0, t1, .. } => (t0, t1),
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, CurvePiece::Circle { .. })
    }

    /// Parameters where the plane `{y : <normal, y> = offset}` meets the
    /// piece, each with its normalized transversality `|<normal, g'>| / |g'|`.
    pub fn plane_intersections(&self, normal: Vec3, offset: f64) -> Vec<(f64, f64)> {
        match *self {
            CurvePiece::Circle { center, radius, e1, e2 } => {
                let a1 = normal.dot(e1);
                let a2 = normal.dot(e2);
                let amp = (a1 * a1 + a2 * a2).sqrt();
                let rhs = offset - normal.dot(center);
                if amp * radius < rhs.abs() || amp < 1e-15 {
                    return Vec::new();
                }
                let phi = a2.atan2(a1);
                let c = (rhs / (radius * amp)).clamp(-1.0, 1.0);
                let d = c.acos();
                let margin = amp * d.sin();
                let wrap = |t: f64| t.rem_euclid(2.0 * PI);
                if d == 0.0 {
                    vec![(wrap(phi), margin)]
                } else {
                    vec![(wrap(phi + d), margin), (wrap(phi - d), margin)]
                }
            }
            CurvePiece::Helix { t0, t1, .. } => {
                let h = |t: f64| normal.dot(self.point(t)) - offset;
                let steps = (((t1 - t0) / (PI / 48.0)).ceil() as usize).max(2);
                let dt = (t1 - t0) / steps as f64;
                let mut out = Vec::new();
                let mut ta = t0;
                let mut ha = h(ta);
                for i in 1..=steps {
                    let tb = t0 + dt * i as f64;
                    let hb = h(tb);
                    if ha == 0.0 {
                        out.push(ta);
                    } else if ha * hb < 0.0 {
                        let (mut lo, mut hi, mut hlo) = (ta, tb, ha);
                        for _ in 0..60 {
                            let mid = 0.5 * (lo + hi);
                            let hm = h(mid);
                            if hm * hlo <= 0.0 {
                                hi = mid;
                            } else {
                                lo = mid;
                                hlo = hm;
                            }
                        }
                        out.push(0.5 * (lo + hi));
                    }
                    ta = tb;
                    ha = hb;
                }
                if ha == 0.0 {
                    out.push(ta);
                }
                out.into_iter()
                    .map(|t| {
                        let v = self.velocity(t);
                        (t, normal.dot(v).abs() / v.norm())
                    })
                    .collect()
            }
        }
    }
}

/// Polar-ring layout of spherical sources.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereLayout {
    pub radius: f64,
    /// Polar angle of each ring (radians), from 0 to pi inclusive.
    pub ring_polar: Vec<f64>,
    /// Number of azimuthal positions in each ring.
    pub ring_counts: Vec<usize>,
    /// Index of the first source of each ring.
    pub ring_offsets: Vec<usize>,
}

impl SphereLayout {
    fn new(radius: f64, polar_step_deg: f64, azimuth_step_deg: f64) -> SphereLayout {
        let step = polar_step_deg.to_radians();
        let mut ring_polar = vec![0.0];
        let mut k = 1;
        while (k as f64) * step < PI - 1e-9 {
            ring_polar.push(k as f64 * step);
            k += 1;
        }
        ring_polar.push(PI);
        let naz = ((360.0 / azimuth_step_deg).round() as usize).max(1);
        let last = ring_polar.len() - 1;
        let ring_counts: Vec<usize> =
            (0..ring_polar.len()).map(|i| if i == 0 || i == last { 1 } else { naz }).collect();
        let mut ring_offsets = Vec::with_capacity(ring_counts.len());
        let mut acc = 0;
        for &c in &ring_counts {
            ring_offsets.push(acc);
            acc += c;
        }
        SphereLayout { radius, ring_polar, ring_counts, ring_offsets }
    }

    pub fn source_count(&self) -> usize {
        self.ring_counts.iter().sum()
    }
}

/// Source locus, target ball, and detector. Immutable once validated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry", into = "RawGeometry")]
pub struct SourceGeometry {
    kind: SourceKind,
    ball: Ball,
    detector: Detector,
}

#[derive(Serialize, Deserialize)]
struct RawGeometry {
    kind: SourceKind,
    ball: Ball,
    detector: Detector,
}

impl TryFrom<RawGeometry> for SourceGeometry {
    type Error = Error;
    fn try_from(raw: RawGeometry) -> Result<Self> {
        SourceGeometry::new(raw.kind, raw.ball, raw.detector)
    }
}

impl From<SourceGeometry> for RawGeometry {
    fn from(g: SourceGeometry) -> Self {
        RawGeometry { kind: g.kind, ball: g.ball, detector: g.detector }
    }
}

impl SourceGeometry {
    pub fn new(kind: SourceKind, ball: Ball, detector: Detector) -> Result<SourceGeometry> {
        Ball::new(ball.center, ball.radius)?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Geometry(format!("{name} must be positive, got {v}")))
            }
        };
        let exterior = |r: f64| {
            if r > ball.radius {
                Ok(())
            } else {
                Err(Error::Geometry(format!(
                    "source radius {r} does not exceed ball radius {}",
                    ball.radius
                )))
            }
        };
        match &kind {
            SourceKind::Sphere { radius, polar_step_deg, azimuth_step_deg } => {
                positive("sphere radius", *radius)?;
                exterior(*radius)?;
                if !(*polar_step_deg > 0.0 && *polar_step_deg <= 180.0) {
                    return Err(Error::Geometry("polar step must lie in (0, 180]".into()));
                }
                if !(*azimuth_step_deg > 0.0 && *azimuth_step_deg <= 360.0) {
                    return Err(Error::Geometry("azimuthal step must lie in (0, 360]".into()));
                }
            }
            SourceKind::Helix { radius, pitch, turns, per_turn } => {
                positive("helix radius", *radius)?;
                positive("helix pitch", *pitch)?;
                exterior(*radius)?;
                if *turns == 0 || *per_turn == 0 {
                    return Err(Error::Geometry("helix sampling counts must be >= 1".into()));
                }
            }
            SourceKind::Circle { radius, normal, positions } => {
                positive("circle radius", *radius)?;
                exterior(*radius)?;
                if normal.normalized().is_none() {
                    return Err(Error::Geometry("circle normal must be nonzero".into()));
                }
                if *positions == 0 {
                    return Err(Error::Geometry("circle needs at least one position".into()));
                }
            }
            SourceKind::TwinCircles { radius, per_circle } => {
                positive("twin-circle radius", *radius)?;
                exterior(*radius)?;
                if *per_circle == 0 {
                    return Err(Error::Geometry("twin circles need at least one position".into()));
                }
            }
        }
        if detector.rows == 0 || detector.cols == 0 {
            return Err(Error::Geometry("detector must have rows and columns".into()));
        }
        positive("detector spacing", detector.spacing)?;
        positive("source-detector distance", detector.sdd)?;

        let geom = SourceGeometry { kind, ball, detector };
        let half_width =
            0.5 * (detector.rows.min(detector.cols) as f64) * detector.spacing * (1.0 + 1e-9);
        for s in geom.sample_sources() {
            let dist = (s.position - ball.center).norm();
            let beta = (ball.radius / dist).asin();
            let shadow = detector.sdd * beta.tan();
            if shadow > half_width {
                return Err(Error::Geometry(format!(
                    "detector half-width {half_width:.3} cannot contain the ball shadow {shadow:.3} seen from {}",
                    s.position
                )));
            }
        }
        Ok(geom)
    }

    pub fn kind(&self) -> &SourceKind {
        &self.kind
    }

    pub fn ball(&self) -> &Ball {
        &self.ball
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    /// Curve pieces (empty for the sphere).
    pub fn curve_pieces(&self) -> Vec<CurvePiece> {
        let c = self.ball.center;
        match &self.kind {
            SourceKind::Sphere { .. } => Vec::new(),
            SourceKind::Helix { radius, pitch, turns, .. } => {
                let half = PI * *turns as f64;
                vec![CurvePiece::Helix {
                    center: c,
                    radius: *radius,
                    rise: pitch / (2.0 * PI),
                    t0: -half,
                    t1: half,
                }]
            }
            SourceKind::Circle { radius, normal, .. } => {
                let n = normal.normalized().expect("validated");
                let (e1, e2) = circle_basis(n);
                vec![CurvePiece::Circle { center: c, radius: *radius, e1, e2 }]
            }
            SourceKind::TwinCircles { radius, .. } => vec![
                CurvePiece::Circle { center: c, radius: *radius, e1: Vec3::X, e2: Vec3::Y },
                CurvePiece::Circle { center: c, radius: *radius, e1: Vec3::Y, e2: Vec3::Z },
            ],
        }
    }

    pub fn sphere_layout(&self) -> Option<SphereLayout> {
        match &self.kind {
            SourceKind::Sphere { radius, polar_step_deg, azimuth_step_deg } => {
                Some(SphereLayout::new(*radius, *polar_step_deg, *azimuth_step_deg))
            }
            _ => None,
        }
    }

    /// Rotation-axis hint used to orient detector rows.
    fn up_vector(&self, piece: usize, axis: Vec3) -> Vec3 {
        let up = match &self.kind {
            SourceKind::Circle { normal, .. } => normal.normalized().expect("validated"),
            SourceKind::TwinCircles { .. } => {
                if piece == 0 {
                    Vec3::Z
                } else {
                    Vec3::X
                }
            }
            _ => Vec3::Z,
        };
        if up.dot(axis).abs() > 0.99 {
            if up.x.abs() > 0.9 {
                Vec3::Y
            } else {
                Vec3::X
            }
        } else {
            up
        }
    }

    fn frame_for(&self, position: Vec3, piece: usize) -> DetectorFrame {
        let axis = (self.ball.center - position).normalized().expect("source off center");
        let up = self.up_vector(piece, axis);
        let eu = up.cross(axis).normalized().expect("up not parallel to axis");
        let ev = axis.cross(eu);
        DetectorFrame { axis, eu, ev, center: position + axis * self.detector.sdd }
    }

    pub fn source_count(&self) -> usize {
        match &self.kind {
            SourceKind::Sphere { .. } => self.sphere_layout().expect("sphere").source_count(),
            SourceKind::Helix { turns, per_turn, .. } => turns * per_turn,
            SourceKind::Circle { positions, .. } => *positions,
            SourceKind::TwinCircles { per_circle, .. } => 2 * per_circle,
        }
    }

    /// Discretization of the source locus with detector frames and
    /// quadrature weights, in a deterministic order.
    pub fn sample_sources(&self) -> Vec<SourceSample> {
        let mut out = Vec::with_capacity(self.source_count());
        match &self.kind {
            SourceKind::Sphere { .. } => {
                let layout = self.sphere_layout().expect("sphere");
                let r = layout.radius;
                let nr = layout.ring_polar.len();
                for (i, &polar) in layout.ring_polar.iter().enumerate() {
                    let lo = if i == 0 { 0.0 } else { 0.5 * (layout.ring_polar[i - 1] + polar) };
                    let hi =
                        if i + 1 == nr { PI } else { 0.5 * (layout.ring_polar[i + 1] + polar) };
                    let band = 2.0 * PI * r * r * (lo.cos() - hi.cos());
                    let count = layout.ring_counts[i];
                    for j in 0..count {
                        let az = 2.0 * PI * j as f64 / count as f64;
                        let dir = Vec3::new(polar.sin() * az.cos(), polar.sin() * az.sin(), polar.cos());
                        let position = self.ball.center + dir * r;
                        out.push(SourceSample {
                            position,
                            param: polar,
                            piece: 0,
                            weight: band / count as f64,
                            velocity: Vec3::ZERO,
                            frame: self.frame_for(position, 0),
                        });
                    }
                }
            }
            SourceKind::Helix { turns, per_turn, .. } => {
                let piece = self.curve_pieces()[0];
                let n = turns * per_turn;
                let (t0, _) = piece.range();
                let dt = 2.0 * PI / *per_turn as f64;
                for i in 0..n {
                    let t = t0 + dt * i as f64;
                    let position = piece.point(t);
                    let velocity = piece.velocity(t);
                    let mut weight = velocity.norm() * dt;
                    if n > 1 && (i == 0 || i + 1 == n) {
                        weight *= 0.5;
                    }
                    out.push(SourceSample {
                        position,
                        param: t,
                        piece: 0,
                        weight,
                        velocity,
                        frame: self.frame_for(position, 0),
                    });
                }
            }
            SourceKind::Circle { positions, .. } => {
                self.push_circle(&mut out, 0, *positions);
            }
            SourceKind::TwinCircles { per_circle, .. } => {
                self.push_circle(&mut out, 0, *per_circle);
                self.push_circle(&mut out, 1, *per_circle);
            }
        }
        out
    }

    fn push_circle(&self, out: &mut Vec<SourceSample>, piece_index: usize, count: usize) {
        let piece = self.curve_pieces()[piece_index];
        let dt = 2.0 * PI / count as f64;
        for i in 0..count {
            let t = dt * i as f64;
            let position = piece.point(t);
            let velocity = piece.velocity(t);
            out.push(SourceSample {
                position,
                param: t,
                piece: piece_index,
                weight: velocity.norm() * dt,
                velocity,
                frame: self.frame_for(position, piece_index),
            });
        }
    }

    /// Total arclength (curves) or area (sphere) of the source locus.
    pub fn locus_measure(&self) -> f64 {
        self.sample_sources().iter().map(|s| s.weight).sum()
    }

    /// Stable digest of the canonical JSON form.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("geometry serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn circle_basis(n: Vec3) -> (Vec3, Vec3) {
    if (n - Vec3::Z).norm() < 1e-12 {
        (Vec3::X, Vec3::Y)
    } else if (n - Vec3::X).norm() < 1e-12 {
        (Vec3::Y, Vec3::Z)
    } else {
        orthonormal_frame(n)
    }
}

/// Measure of the half-rays from the sampled locus that meet `b` but miss
/// `c`, integrating spherical-cap areas with the locus quadrature weights.
pub fn truncated_ray_volume(geom: &SourceGeometry, b: &Ball, c: &Ball) -> Result<f64> {
    if !b.contains_ball(c) {
        return Err(Error::Geometry("ROI is not contained in the target ball".into()));
    }
    let mut vol = 0.0;
    for s in geom.sample_sources() {
        let cos_b = tangent_cone_cos(b.radius, (s.position - b.center).norm())?;
        let cos_c = tangent_cone_cos(c.radius, (s.position - c.center).norm())?;
        vol += s.weight * (cap_area(cos_b)? - cap_area(cos_c)?);
    }
    Ok(vol.max(0.0))
}

/// Measure of all sampled half-rays meeting `b`.
pub fn ray_volume(geom: &SourceGeometry, b: &Ball) -> Result<f64> {
    let mut vol = 0.0;
    for s in geom.sample_sources() {
        let cos_b = tangent_cone_cos(b.radius, (s.position - b.center).norm())?;
        vol += s.weight * cap_area(cos_b)?;
    }
    Ok(vol)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuyReport {
    pub pass: bool,
    /// Smallest best-intersection transversality over all samples.
    pub worst_margin: f64,
    /// Sampled `(x, theta)` pairs without an admissible intersection.
    pub failures: Vec<(Vec3, Vec3)>,
    pub samples: usize,
    pub note: Option<String>,
}

/// Checks, on sampled points of `b` and plane normals, that every plane
/// `<theta, y> = <theta, x>` meets the source curve with transversality
/// above `tolerance`.
pub fn tuy_check(
    geom: &SourceGeometry,
    b: &Ball,
    n_point_samples: usize,
    n_dir_samples: usize,
    tolerance: f64,
) -> TuyReport {
    if !geom.kind().is_curve() {
        return TuyReport {
            pass: true,
            worst_margin: 1.0,
            failures: Vec::new(),
            samples: 0,
            note: Some("spherical source sets contain every plane through the ball".into()),
        };
    }
    let pieces = geom.curve_pieces();
    let points = halton_ball_points(b, n_point_samples);
    let dirs = fibonacci_hemisphere(n_dir_samples);
    let mut worst = f64::INFINITY;
    let mut failures = Vec::new();
    for &x in &points {
        for &theta in &dirs {
            let offset = theta.dot(x);
            let best = pieces
                .iter()
                .flat_map(|p| p.plane_intersections(theta, offset))
                .map(|(_, m)| m)
                .fold(0.0_f64, f64::max);
            worst = worst.min(best);
            if best <= tolerance {
                failures.push((x, theta));
            }
        }
    }
    if !worst.is_finite() {
        worst = 0.0;
    }
    TuyReport {
        pass: failures.is_empty() && worst > tolerance,
        worst_margin: worst,
        failures,
        samples: points.len() * dirs.len(),
        note: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_ball() -> Ball {
        Ball::new(Vec3::ZERO, 1.0).unwrap()
    }

    fn circle_geom(radius: f64, positions: usize) -> SourceGeometry {
        let ball = Ball::new(Vec3::ZERO, 32.0).unwrap();
        let det = Detector::covering(&ball, radius, radius, 1.0);
        SourceGeometry::new(SourceKind::Circle { radius, normal: Vec3::Z, positions }, ball, det)
            .unwrap()
    }

    #[test]
    fn ray_ball_hits() {
        let b = unit_ball();
        let src = Vec3::new(2.0, 0.0, 0.0);
        assert!(ray_hits_ball(&Ray::new(src, -Vec3::X).unwrap(), &b));
        assert!(!ray_hits_ball(&Ray::new(src, Vec3::Y).unwrap(), &b));
        assert!(!ray_hits_ball(&Ray::new(src, Vec3::X).unwrap(), &b));
        // tangent ray grazes the closed ball
        let tangent = Ray::new(Vec3::new(2.0, 1.0, 0.0), -Vec3::X).unwrap();
        assert!(ray_hits_ball(&tangent, &b));
    }

    #[test]
    fn cap_formulas() {
        assert_eq!(cap_cos(0.0, 5.0).unwrap(), 1.0);
        assert!((aperture_ratio(2.0, 2.0) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((cap_cos(1.0, 3f64.sqrt()).unwrap() - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(cap_cos(2.0, 2.0).is_err());
        assert!(cap_cos(3.0, 2.0).is_err());
        assert_eq!(cap_area(1.0).unwrap(), 0.0);
        assert!((cap_area(0.0).unwrap() - 2.0 * PI).abs() < 1e-15);
        assert!((cap_area(0.5).unwrap() - PI).abs() < 1e-15);
        assert!(cap_area(1.5).is_err());
        // sin(alpha) = 1/2 for a ball seen from twice its radius
        assert!((tangent_cone_cos(1.0, 2.0).unwrap() - 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn circle_sampling_is_uniform() {
        let g = circle_geom(213.0, 360);
        let s = g.sample_sources();
        assert_eq!(s.len(), 360);
        for w in s.windows(2) {
            let a = (w[0].position - g.ball().center).normalized().unwrap();
            let b = (w[1].position - g.ball().center).normalized().unwrap();
            assert!((a.dot(b).acos().to_degrees() - 1.0).abs() < 1e-9);
        }
        assert!((g.locus_measure() - 2.0 * PI * 213.0).abs() < 1e-9);
    }

    #[test]
    fn helix_sampling_count() {
        let ball = Ball::new(Vec3::ZERO, 32.0).unwrap();
        let det = Detector::covering(&ball, 55.0, 110.0, 1.0);
        let g = SourceGeometry::new(
            SourceKind::Helix { radius: 55.0, pitch: 5.0, turns: 8, per_turn: 128 },
            ball,
            det,
        )
        .unwrap();
        let s = g.sample_sources();
        assert_eq!(s.len(), 1024);
        assert!(s.windows(2).all(|w| w[1].param > w[0].param));
    }

    #[test]
    fn sphere_two_poles() {
        let ball = Ball::new(Vec3::ZERO, 10.0).unwrap();
        let det = Detector::covering(&ball, 20.0, 40.0, 1.0);
        let g = SourceGeometry::new(
            SourceKind::Sphere { radius: 20.0, polar_step_deg: 180.0, azimuth_step_deg: 360.0 },
            ball,
            det,
        )
        .unwrap();
        let s = g.sample_sources();
        assert_eq!(s.len(), 2);
        assert!((s[0].position - Vec3::new(0.0, 0.0, 20.0)).norm() < 1e-12);
        assert!((s[1].position - Vec3::new(0.0, 0.0, -20.0)).norm() < 1e-9);
        assert!((g.locus_measure() - 4.0 * PI * 400.0).abs() < 1e-6);
    }

    #[test]
    fn sphere_weights_cover_surface() {
        let ball = Ball::new(Vec3::ZERO, 10.0).unwrap();
        let det = Detector::covering(&ball, 20.0, 40.0, 1.0);
        let g = SourceGeometry::new(
            SourceKind::Sphere { radius: 20.0, polar_step_deg: 7.0, azimuth_step_deg: 10.0 },
            ball,
            det,
        )
        .unwrap();
        assert!((g.locus_measure() - 4.0 * PI * 400.0).abs() < 1e-6);
    }

    #[test]
    fn detector_faces_center() {
        let g = circle_geom(100.0, 12);
        let det = g.detector();
        for s in g.sample_sources() {
            let to_center = (g.ball().center - s.position).normalized().unwrap();
            assert!((s.frame.axis - to_center).norm() < 1e-12);
            assert!((s.frame.center - s.position).norm() - det.sdd < 1e-9);
            assert!(s.frame.eu.dot(s.frame.axis).abs() < 1e-12);
            assert!(s.frame.ev.dot(s.frame.axis).abs() < 1e-12);
            // center ray of an even detector passes between the four central pixels
            let (r, c) = s.project_direction(det, s.frame.axis).unwrap();
            assert!((r - (det.rows as f64 - 1.0) / 2.0).abs() < 1e-9);
            assert!((c - (det.cols as f64 - 1.0) / 2.0).abs() < 1e-9);
            let ray = s.pixel_ray(det, 3, 5);
            let (r, c) = s.project_direction(det, ray.direction).unwrap();
            assert!((r - 3.0).abs() < 1e-9 && (c - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn undersized_detector_rejected() {
        let ball = Ball::new(Vec3::ZERO, 32.0).unwrap();
        let det = Detector { rows: 16, cols: 16, spacing: 1.0, sdd: 200.0 };
        let r = SourceGeometry::new(
            SourceKind::Circle { radius: 200.0, normal: Vec3::Z, positions: 10 },
            ball,
            det,
        );
        assert!(r.is_err());
        let inside = SourceGeometry::new(
            SourceKind::Circle { radius: 20.0, normal: Vec3::Z, positions: 10 },
            ball,
            Detector { rows: 512, cols: 512, spacing: 1.0, sdd: 40.0 },
        );
        assert!(inside.is_err());
    }

    #[test]
    fn geometry_json_round_trip() {
        let g = circle_geom(150.0, 90);
        let json = serde_json::to_string(&g).unwrap();
        let back: SourceGeometry = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
        assert_eq!(back.digest(), g.digest());
        let bad = json.replace("\"radius\":150.0", "\"radius\":1.0");
        assert!(serde_json::from_str::<SourceGeometry>(&bad).is_err());
    }

    #[test]
    fn truncated_volume_closed_form_for_circle() {
        let r = 213.0;
        let g = circle_geom(r, 360);
        let b = *g.ball();
        assert_eq!(truncated_ray_volume(&g, &b, &b).unwrap(), 0.0);
        let c = b.scaled(0.4).unwrap();
        let expected = 2.0 * PI * r
            * 2.0
            * PI
            * (tangent_cone_cos(c.radius, r).unwrap() - tangent_cone_cos(b.radius, r).unwrap());
        let got = truncated_ray_volume(&g, &b, &c).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected);
        let outside = Ball::new(Vec3::new(20.0, 0.0, 0.0), 20.0).unwrap();
        assert!(truncated_ray_volume(&g, &b, &outside).is_err());
    }

    #[test]
    fn tuy_twin_circles_pass_single_circle_fails() {
        let ball = Ball::new(Vec3::ZERO, 24.0).unwrap();
        let det = Detector::covering(&ball, 160.0, 160.0, 1.0);
        let twin = SourceGeometry::new(
            SourceKind::TwinCircles { radius: 160.0, per_circle: 90 },
            ball,
            det,
        )
        .unwrap();
        let rep = tuy_check(&twin, &ball, 64, 256, 1e-3);
        assert!(rep.pass, "{rep:?}");
        assert!(rep.worst_margin > 0.5);

        let single = SourceGeometry::new(
            SourceKind::Circle { radius: 160.0, normal: Vec3::Z, positions: 90 },
            ball,
            det,
        )
        .unwrap();
        let rep = tuy_check(&single, &ball, 64, 256, 1e-3);
        assert!(!rep.pass);
        assert!(!rep.failures.is_empty());
        // plane z = z0 != 0 misses the circle in z = 0
        let piece = single.curve_pieces()[0];
        assert!(piece.plane_intersections(Vec3::Z, 5.0).is_empty());
    }

    #[test]
    fn tuy_long_helix_passes() {
        let ball = Ball::new(Vec3::ZERO, 10.0).unwrap();
        let det = Detector::covering(&ball, 40.0, 80.0, 1.0);
        let g = SourceGeometry::new(
            SourceKind::Helix { radius: 40.0, pitch: 12.0, turns: 8, per_turn: 64 },
            ball,
            det,
        )
        .unwrap();
        let rep = tuy_check(&g, &ball, 48, 200, 1e-6);
        assert!(rep.pass, "worst margin {}", rep.worst_margin);
    }

    #[test]
    fn tuy_sphere_is_trivial() {
        let ball = Ball::new(Vec3::ZERO, 10.0).unwrap();
        let det = Detector::covering(&ball, 20.0, 40.0, 1.0);
        let g = SourceGeometry::new(
            SourceKind::Sphere { radius: 20.0, polar_step_deg: 30.0, azimuth_step_deg: 30.0 },
            ball,
            det,
        )
        .unwrap();
        let rep = tuy_check(&g, &ball, 8, 8, 1e-3);
        assert!(rep.pass && rep.note.is_some());
    }

    #[test]
    fn circle_plane_intersections_lie_on_plane() {
        let piece = CurvePiece::Circle { center: Vec3::ZERO, radius: 5.0, e1: Vec3::X, e2: Vec3::Y };
        let theta = Vec3::new(0.3, -0.5, 0.81).normalized().unwrap();
        for (t, m) in piece.plane_intersections(theta, 1.2) {
            assert!((theta.dot(piece.point(t)) - 1.2).abs() < 1e-12);
            let v = piece.velocity(t);
            assert!((theta.dot(v).abs() / v.norm() - m).abs() < 1e-12);
        }
    }
}
