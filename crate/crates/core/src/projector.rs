//! Forward operators, ROI truncation, and projection storage.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use base64::Engine;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    fibonacci_hemisphere, orthonormal_frame, ray_hits_ball, Ball, Ray, SourceGeometry,
    SourceSample, Vec3,
};
use crate::phantom::LineIntegrals;
use crate::volume::sidecar_path;

/// Directions over the upper hemisphere with a square offset grid on each
/// orthogonal plane. Offsets are `(a - nu/2) * du`, `a = 0..nu`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParallelGrid", into = "RawParallelGrid")]
pub struct ParallelGrid {
    ball: Ball,
    n_directions: usize,
    nu: usize,
    du: f64,
    directions: Vec<Vec3>,
}

#[derive(Serialize, Deserialize)]
struct RawParallelGrid {
    ball: Ball,
    n_directions: usize,
    nu: usize,
    du: f64,
}

impl TryFrom<RawParallelGrid> for ParallelGrid {
    type Error = Error;
    fn try_from(r: RawParallelGrid) -> Result<Self> {
        ParallelGrid::new(r.ball, r.n_directions, r.nu, r.du)
    }
}

impl From<ParallelGrid> for RawParallelGrid {
    fn from(g: ParallelGrid) -> Self {
        RawParallelGrid { ball: g.ball, n_directions: g.n_directions, nu: g.nu, du: g.du }
    }
}

impl ParallelGrid {
    pub fn new(ball: Ball, n_directions: usize, nu: usize, du: f64) -> Result<ParallelGrid> {
        Ball::new(ball.center, ball.radius)?;
        if n_directions == 0 || nu < 2 || nu % 2 != 0 {
            return Err(Error::Projector(format!(
                "parallel grid needs directions >= 1 and an even offset count, got {n_directions}, {nu}"
            )));
        }
        if !(du > 0.0) {
            return Err(Error::Projector("offset spacing must be positive".into()));
        }
        if (nu as f64 / 2.0 - 1.0) * du < ball.radius {
            return Err(Error::Projector(format!(
                "offset grid half-width {} does not cover the ball radius {}",
                (nu as f64 / 2.0 - 1.0) * du,
                ball.radius
            )));
        }
        let directions = fibonacci_hemisphere(n_directions);
        Ok(ParallelGrid { ball, n_directions, nu, du, directions })
    }

    /// Smallest even offset grid at spacing `du` covering the ball.
    pub fn covering(ball: Ball, n_directions: usize, du: f64) -> Result<ParallelGrid> {
        let nu = 2 * ((ball.radius / du).ceil() as usize + 2);
        ParallelGrid::new(ball, n_directions, nu, du)
    }

    pub fn ball(&self) -> &Ball {
        &self.ball
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn du(&self) -> f64 {
        self.du
    }

    pub fn frame(&self, view: usize) -> (Vec3, Vec3) {
        orthonormal_frame(self.directions[view])
    }

    pub fn offset(&self, a: usize) -> f64 {
        (a as f64 - (self.nu / 2) as f64) * self.du
    }

    /// Measure element: hemisphere area per direction times offset cell area.
    pub fn ray_weight(&self) -> f64 {
        2.0 * PI / self.n_directions as f64 * self.du * self.du
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "geometry", rename_all = "snake_case")]
pub enum Acquisition {
    Cone(SourceGeometry),
    Parallel(ParallelGrid),
}

impl Acquisition {
    pub fn ball(&self) -> &Ball {
        match self {
            Acquisition::Cone(g) => g.ball(),
            Acquisition::Parallel(p) => p.ball(),
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        match self {
            Acquisition::Cone(g) => (g.source_count(), g.detector().rows, g.detector().cols),
            Acquisition::Parallel(p) => (p.directions().len(), p.nu(), p.nu()),
        }
    }

    pub fn cone(&self) -> Option<&SourceGeometry> {
        match self {
            Acquisition::Cone(g) => Some(g),
            _ => None,
        }
    }

    pub fn parallel(&self) -> Option<&ParallelGrid> {
        match self {
            Acquisition::Parallel(p) => Some(p),
            _ => None,
        }
    }

    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("acquisition serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn ray_table(&self) -> RayTable<'_> {
        match self {
            Acquisition::Cone(g) => RayTable::Cone { geom: g, sources: g.sample_sources() },
            Acquisition::Parallel(p) => RayTable::Parallel {
                grid: p,
                frames: (0..p.directions().len()).map(|v| p.frame(v)).collect(),
            },
        }
    }
}

/// Precomputed per-view data for enumerating rays.
pub enum RayTable<'a> {
    Cone { geom: &'a SourceGeometry, sources: Vec<SourceSample> },
    Parallel { grid: &'a ParallelGrid, frames: Vec<(Vec3, Vec3)> },
}

impl RayTable<'_> {
    /// Ray for detector cell `(row, col)` of `view`. Parallel rays start at
    /// their foot point in the plane through the ball center.
    pub fn ray(&self, view: usize, row: usize, col: usize) -> Ray {
        match self {
            RayTable::Cone { geom, sources } => sources[view].pixel_ray(geom.detector(), row, col),
            RayTable::Parallel { grid, frames } => {
                let (e1, e2) = frames[view];
                let source = grid.ball().center + e1 * grid.offset(col) + e2 * grid.offset(row);
                Ray { source, direction: grid.directions()[view] }
            }
        }
    }

    pub fn is_full_line(&self) -> bool {
        matches!(self, RayTable::Parallel { .. })
    }

    pub fn weight(&self, view: usize, row: usize, col: usize) -> f64 {
        match self {
            RayTable::Cone { geom, sources } => {
                sources[view].weight * sources[view].pixel_solid_angle(geom.detector(), row, col)
            }
            RayTable::Parallel { grid, .. } => grid.ray_weight(),
        }
    }

    pub fn hits(&self, ray: &Ray, ball: &Ball) -> bool {
        if self.is_full_line() {
            let d = ball.center - ray.source;
            let perp = d - ray.direction * d.dot(ray.direction);
            perp.norm2() <= ball.radius * ball.radius * (1.0 + 1e-12)
        } else {
            ray_hits_ball(ray, ball)
        }
    }
}

/// Sampled transform values with a per-ray ROI mask, laid out
/// `(view, row, col)` with `col` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSet {
    acquisition: Acquisition,
    views: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    mask: Vec<bool>,
    roi: Option<Ball>,
}

#[derive(Serialize, Deserialize)]
struct ProjectionHeader {
    acquisition: Acquisition,
    geometry_hash: String,
    shape: [usize; 3],
    roi: Option<Ball>,
    mask: String,
}

impl ProjectionSet {
    /// Untruncated data with an all-true mask.
    pub fn new(acquisition: Acquisition, data: Vec<f64>) -> Result<ProjectionSet> {
        let (views, rows, cols) = acquisition.shape();
        if data.len() != views * rows * cols {
            return Err(Error::Projector(format!(
                "data length {} does not match shape {views}x{rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Projector("non-finite projection values".into()));
        }
        let mask = vec![true; data.len()];
        Ok(ProjectionSet { acquisition, views, rows, cols, data, mask, roi: None })
    }

    pub fn zeros(acquisition: Acquisition) -> ProjectionSet {
        let (v, r, c) = acquisition.shape();
        ProjectionSet::new(acquisition, vec![0.0; v * r * c]).expect("shape matches")
    }

    pub fn acquisition(&self) -> &Acquisition {
        &self.acquisition
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.views, self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn roi(&self) -> Option<&Ball> {
        self.roi.as_ref()
    }

    pub fn view(&self, v: usize) -> &[f64] {
        let m = self.rows * self.cols;
        &self.data[v * m..(v + 1) * m]
    }

    pub fn index(&self, view: usize, row: usize, col: usize) -> usize {
        (view * self.rows + row) * self.cols + col
    }

    /// Same acquisition, mask, and ROI with new values; entries outside the
    /// mask are forced to zero.
    pub fn with_data(&self, mut data: Vec<f64>) -> Result<ProjectionSet> {
        if data.len() != self.data.len() {
            return Err(Error::Projector("replacement data has the wrong length".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Projector("non-finite projection values".into()));
        }
        for (d, &m) in data.iter_mut().zip(&self.mask) {
            if !m {
                *d = 0.0;
            }
        }
        Ok(ProjectionSet { data, ..self.clone() })
    }

    /// Same values with an all-true mask and no ROI.
    pub fn unmasked(&self) -> ProjectionSet {
        ProjectionSet { mask: vec![true; self.data.len()], roi: None, ..self.clone() }
    }

    pub fn scaled(&self, alpha: f64) -> ProjectionSet {
        ProjectionSet { data: self.data.iter().map(|v| v * alpha).collect(), ..self.clone() }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete L2 norm with ray-manifold weights.
    pub fn l2_norm(&self) -> f64 {
        let table = self.acquisition.ray_table();
        let per_view: Vec<f64> = (0..self.views)
            .into_par_iter()
            .map(|v| {
                let mut acc = 0.0;
                for r in 0..self.rows {
                    for c in 0..self.cols {
                        let d = self.data[self.index(v, r, c)];
                        if d != 0.0 {
                            acc += table.weight(v, r, c) * d * d;
                        }
                    }
                }
                acc
            })
            .collect();
        per_view.iter().sum::<f64>().sqrt()
    }

    /// Weighted fraction of rays meeting the target ball that lie inside
    /// the mask.
    pub fn masked_fraction(&self) -> f64 {
        let table = self.acquisition.ray_table();
        let ball = *self.acquisition.ball();
        let sums: Vec<(f64, f64)> = (0..self.views)
            .into_par_iter()
            .map(|v| {
                let (mut kept, mut all) = (0.0, 0.0);
                for r in 0..self.rows {
                    for c in 0..self.cols {
                        let ray = table.ray(v, r, c);
                        if table.hits(&ray, &ball) {
                            let w = table.weight(v, r, c);
                            all += w;
                            if self.mask[self.index(v, r, c)] {
                                kept += w;
                            }
                        }
                    }
                }
                (kept, all)
            })
            .collect();
        let (kept, all) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        if all > 0.0 {
            kept / all
        } else {
            0.0
        }
    }

    pub fn write_raw(&self, raw_path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(raw_path, bytes)?;
        let header = ProjectionHeader {
            acquisition: self.acquisition.clone(),
            geometry_hash: self.acquisition.digest(),
            shape: [self.views, self.rows, self.cols],
            roi: self.roi,
            mask: base64::engine::general_purpose::STANDARD.encode(pack_bits(&self.mask)),
        };
        fs::write(sidecar_path(raw_path), serde_json::to_string_pretty(&header)? + "\n")?;
        Ok(())
    }

    pub fn read_raw(raw_path: &Path) -> Result<ProjectionSet> {
        let header: ProjectionHeader =
            serde_json::from_str(&fs::read_to_string(sidecar_path(raw_path))?)?;
        if header.geometry_hash != header.acquisition.digest() {
            return Err(Error::Projector("geometry hash does not match the stored acquisition".into()));
        }
        let [views, rows, cols] = header.shape;
        if header.acquisition.shape() != (views, rows, cols) {
            return Err(Error::Projector("stored shape disagrees with the acquisition".into()));
        }
        let bytes = fs::read(raw_path)?;
        let len = views * rows * cols;
        if bytes.len() != len * 4 {
            return Err(Error::Projector(format!("{} has the wrong size", raw_path.display())));
        }
        let data: Vec<f64> =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let packed = base64::engine::general_purpose::STANDARD
            .decode(header.mask.as_bytes())
            .map_err(|e| Error::Projector(format!("mask decoding failed: {e}")))?;
        let mask = unpack_bits(&packed, len)?;
        let mut set = ProjectionSet::new(header.acquisition, data)?;
        set.mask = mask;
        set.roi = header.roi;
        Ok(set)
    }
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], len: usize) -> Result<Vec<bool>> {
    if bytes.len() != len.div_ceil(8) {
        return Err(Error::Projector("mask length does not match the data".into()));
    }
    Ok((0..len).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect())
}

fn check_support<L: LineIntegrals + ?Sized>(f: &L, ball: &Ball) -> Result<()> {
    if let Some(s) = f.support() {
        let tol = 1e-9 * ball.radius;
        if (s.center - ball.center).norm() + s.radius > ball.radius + tol {
            return Err(Error::Projector(format!(
                "object support (center {}, radius {}) exceeds the target ball radius {}",
                s.center, s.radius, ball.radius
            )));
        }
    }
    Ok(())
}

/// Evaluates `f` on every ray with `select[i]` true (all rays when `None`);
/// other entries are zero.
fn project<L: LineIntegrals + ?Sized>(
    f: &L,
    acquisition: Acquisition,
    select: Option<&[bool]>,
) -> Result<ProjectionSet> {
    check_support(f, acquisition.ball())?;
    let (views, rows, cols) = acquisition.shape();
    if let Some(s) = select {
        if s.len() != views * rows * cols {
            return Err(Error::Projector("ray selection has the wrong length".into()));
        }
    }
    let ball = *acquisition.ball();
    let mut data = vec![0.0; views * rows * cols];
    {
        let table = acquisition.ray_table();
        let full = table.is_full_line();
        data.par_chunks_mut(rows * cols).enumerate().for_each(|(v, out)| {
            for r in 0..rows {
                for c in 0..cols {
                    let i = r * cols + c;
                    if let Some(s) = select {
                        if !s[v * rows * cols + i] {
                            continue;
                        }
                    }
                    let ray = table.ray(v, r, c);
                    if !table.hits(&ray, &ball) {
                        continue;
                    }
                    out[i] = if full { f.full_line(&ray) } else { f.half_ray(&ray) };
                }
            }
        });
    }
    ProjectionSet::new(acquisition, data)
}

/// Cone-beam transform `D f` sampled at every detector pixel center.
pub fn forward_cone<L: LineIntegrals + ?Sized>(f: &L, geom: &SourceGeometry) -> Result<ProjectionSet> {
    project(f, Acquisition::Cone(geom.clone()), None)
}

/// Cone-beam transform evaluated only where `select` is true.
pub fn forward_cone_selected<L: LineIntegrals + ?Sized>(
    f: &L,
    geom: &SourceGeometry,
    select: &[bool],
) -> Result<ProjectionSet> {
    project(f, Acquisition::Cone(geom.clone()), Some(select))
}

/// Parallel ray transform `X f` on the grid.
pub fn forward_parallel<L: LineIntegrals + ?Sized>(f: &L, grid: &ParallelGrid) -> Result<ProjectionSet> {
    project(f, Acquisition::Parallel(grid.clone()), None)
}

/// Forward transform for whichever acquisition `like` uses, restricted to
/// `select` when given.
pub fn forward<L: LineIntegrals + ?Sized>(
    f: &L,
    acquisition: &Acquisition,
    select: Option<&[bool]>,
) -> Result<ProjectionSet> {
    project(f, acquisition.clone(), select)
}

fn roi_mask(p: &ProjectionSet, roi: &Ball) -> Result<Vec<bool>> {
    let b = p.acquisition.ball();
    if !b.contains_ball(roi) {
        return Err(Error::Projector(format!(
            "ROI (center {}, radius {}) is not contained in the target ball",
            roi.center, roi.radius
        )));
    }
    if (roi.center - b.center).norm() <= 1e-12 * b.radius
        && (roi.radius - b.radius).abs() <= 1e-12 * b.radius
    {
        return Ok(vec![true; p.data.len()]);
    }
    let table = p.acquisition.ray_table();
    let (rows, cols) = (p.rows, p.cols);
    let mut mask = vec![false; p.data.len()];
    mask.par_chunks_mut(rows * cols).enumerate().for_each(|(v, out)| {
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] = table.hits(&table.ray(v, r, c), roi);
            }
        }
    });
    Ok(mask)
}

/// `D_C`: keeps rays meeting `roi`, zeroes the rest.
pub fn truncate(p: &ProjectionSet, roi: &Ball) -> Result<ProjectionSet> {
    let hit = roi_mask(p, roi)?;
    let mask: Vec<bool> = hit.iter().zip(&p.mask).map(|(&a, &b)| a && b).collect();
    let data = p.data.iter().zip(&mask).map(|(&d, &m)| if m { d } else { 0.0 }).collect();
    Ok(ProjectionSet { data, mask, roi: Some(*roi), ..p.clone() })
}

/// `Y_C = D - D_C`: rays that miss `roi`, with the complementary mask.
pub fn complement(full: &ProjectionSet, roi: &Ball) -> Result<ProjectionSet> {
    let kept = truncate(full, roi)?;
    let data = full.data.iter().zip(&kept.data).map(|(a, b)| a - b).collect();
    let mask = kept.mask.iter().map(|m| !m).collect();
    Ok(ProjectionSet { data, mask, roi: Some(*roi), ..full.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Detector, SourceKind};
    use crate::phantom::{uniform_ball, Phantom};

    fn small_circle() -> SourceGeometry {
        let ball = Ball::new(Vec3::ZERO, 16.0).unwrap();
        let det = Detector::covering(&ball, 80.0, 120.0, 1.0);
        SourceGeometry::new(SourceKind::Circle { radius: 80.0, normal: Vec3::Z, positions: 24 }, ball, det)
            .unwrap()
    }

    #[test]
    fn central_pixel_sees_diameter() {
        let g = small_circle();
        let p = uniform_ball(Vec3::ZERO, 10.0, *g.ball()).unwrap();
        let proj = forward_cone(&p, &g).unwrap();
        let det = g.detector();
        let table = proj.acquisition().ray_table();
        // even detector: evaluate the exact central ray directly
        let RayTable::Cone { sources, .. } = &table else { panic!() };
        let central = Ray::new(sources[0].position, sources[0].frame.axis).unwrap();
        assert!((p.half_ray(&central) - 20.0).abs() < 1e-12);
        let mid = proj.view(0)[(det.rows / 2) * det.cols + det.cols / 2];
        assert!(mid > 19.9 && mid <= 20.0);
    }

    #[test]
    fn zero_object_gives_zero_data() {
        let g = small_circle();
        let empty = Phantom::new(vec![], *g.ball()).unwrap();
        assert!(forward_cone(&empty, &g).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parallel_diameter_and_support_check() {
        let ball = Ball::new(Vec3::ZERO, 1.0).unwrap();
        let grid = ParallelGrid::new(ball, 7, 8, 0.5).unwrap();
        let p = uniform_ball(Vec3::ZERO, 1.0, ball).unwrap();
        let proj = forward_parallel(&p, &grid).unwrap();
        for v in 0..7 {
            assert!((proj.view(v)[4 * 8 + 4] - 2.0).abs() < 1e-12);
        }
        let big = Ball::new(Vec3::ZERO, 2.0).unwrap();
        let outside = uniform_ball(Vec3::ZERO, 2.0, big).unwrap();
        assert!(forward_parallel(&outside, &grid).is_err());
        assert!(ParallelGrid::new(ball, 7, 4, 0.5).is_err());
    }

    #[test]
    fn truncate_and_complement_partition() {
        let g = small_circle();
        let p = uniform_ball(Vec3::new(2.0, 1.0, 0.0), 9.0, *g.ball()).unwrap();
        let full = forward_cone(&p, &g).unwrap();
        let roi = Ball::new(Vec3::ZERO, 6.0).unwrap();
        let t = truncate(&full, &roi).unwrap();
        let c = complement(&full, &roi).unwrap();
        for i in 0..full.data().len() {
            assert_eq!(t.data()[i] + c.data()[i], full.data()[i]);
            assert_ne!(t.mask()[i], c.mask()[i]);
        }
        assert_eq!(truncate(&t, &roi).unwrap(), t);
        let same = truncate(&full, g.ball()).unwrap();
        assert_eq!(same.data(), full.data());
        assert!(same.mask().iter().all(|&m| m));
        assert!(complement(&full, g.ball()).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(truncate(&full, &Ball::new(Vec3::new(10.0, 0.0, 0.0), 8.0).unwrap()).is_err());
    }

    #[test]
    fn projection_file_round_trip() {
        let g = small_circle();
        let p = uniform_ball(Vec3::ZERO, 9.0, *g.ball()).unwrap();
        let full = forward_cone(&p, &g).unwrap();
        let t = truncate(&full, &Ball::new(Vec3::ZERO, 5.0).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.raw");
        t.write_raw(&path).unwrap();
        let back = ProjectionSet::read_raw(&path).unwrap();
        assert_eq!(back.mask(), t.mask());
        assert_eq!(back.roi(), t.roi());
        assert_eq!(back.acquisition(), t.acquisition());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }
}
