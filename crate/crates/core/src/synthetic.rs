//! Deterministic synthetic scenes with dense ground truth.
//!
//! Three layouts exercise different parts of the pipeline:
//! - `planes`: a slanted background with a few slanted rectangular slabs;
//!   piecewise affine, large textureless areas.
//! - `sphere_on_plane`: a sphere in front of a slanted plane; curved surface
//!   with an occlusion boundary.
//! - `staircase`: horizontal bands alternating riser and tread, with depth
//!   jumps between steps.
//!
//! The luminance image is Lambertian shading of the depth-derived normals
//! under a fixed directional light.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{CameraIntrinsics, DepthGrid, GridView, IntensityImage, Raster, SparseDepthGrid};

const AMBIENT: f64 = 0.08;
const DIFFUSE: f64 = 0.9;
/// Direction towards the light, camera frame (x right, y down, z forward).
const LIGHT: [f64; 3] = [-0.35, -0.55, -1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneLayout {
    Planes,
    SphereOnPlane,
    Staircase,
}

impl SceneLayout {
    pub const ALL: [SceneLayout; 3] = [SceneLayout::Planes, SceneLayout::SphereOnPlane, SceneLayout::Staircase];

    pub fn name(&self) -> &'static str {
        match self {
            SceneLayout::Planes => "planes",
            SceneLayout::SphereOnPlane => "sphere_on_plane",
            SceneLayout::Staircase => "staircase",
        }
    }
}

impl fmt::Display for SceneLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneLayout::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown scene layout {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub layout: SceneLayout,
    /// `(min_m, max_m)`
    pub depth_range: (f64, f64),
    pub seed: u64,
}

impl SceneSpec {
    /// 304x228 scene spanning 1 to 10 meters.
    pub fn new(layout: SceneLayout, seed: u64) -> Self {
        Self {
            width: 304,
            height: 228,
            layout,
            depth_range: (1.0, 10.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.depth_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
            return Err(Error::InvalidParameter(format!(
                "depth range must satisfy 0 < min < max, got [{lo}, {hi}]"
            )));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidParameter(format!(
                "scene must be at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::nominal(self.width, self.height)
    }
}

/// Affine depth `c + gx (x - x0) + gy (y - y0)`.
#[derive(Debug, Clone, Copy)]
struct Plane {
    center: (f64, f64),
    depth: f64,
    gx: f64,
    gy: f64,
}

impl Plane {
    fn at(&self, x: f64, y: f64) -> f64 {
        self.depth + self.gx * (x - self.center.0) + self.gy * (y - self.center.1)
    }

    /// Random plane over a `half_w x half_h` half-extent box that stays
    /// inside `[lo, hi]` on the whole box.
    fn random(rng: &mut ChaCha8Rng, center: (f64, f64), half: (f64, f64), lo: f64, hi: f64) -> Self {
        let depth = rng.random_range(lo + 0.1 * (hi - lo)..=hi - 0.1 * (hi - lo));
        let budget = (depth - lo).min(hi - depth) * rng.random_range(0.2..0.95);
        let share: f64 = rng.random_range(0.0..1.0);
        let sign = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let gx = sign(rng) * budget * share / half.0.max(1.0);
        let gy = sign(rng) * budget * (1.0 - share) / half.1.max(1.0);
        Self { center, depth, gx, gy }
    }
}

fn planes(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Raster {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let (lo, hi) = spec.depth_range;
    let background = Plane::random(rng, (w / 2.0, h / 2.0), (w / 2.0, h / 2.0), lo, hi);
    let slabs: Vec<((f64, f64, f64, f64), Plane)> = (0..rng.random_range(2..=3))
        .map(|_| {
            let bw = rng.random_range(0.2..0.45) * w;
            let bh = rng.random_range(0.2..0.45) * h;
            let x0 = rng.random_range(0.0..w - bw);
            let y0 = rng.random_range(0.0..h - bh);
            let plane = Plane::random(rng, (x0 + bw / 2.0, y0 + bh / 2.0), (bw / 2.0, bh / 2.0), lo, hi);
            ((x0, y0, x0 + bw, y0 + bh), plane)
        })
        .collect();
    Raster::from_fn(spec.width, spec.height, |x, y| {
        let (x, y) = (x as f64, y as f64);
        // Later slabs occlude earlier ones.
        slabs
            .iter()
            .rev()
            .find(|((x0, y0, x1, y1), _)| x >= *x0 && x < *x1 && y >= *y0 && y < *y1)
            .map_or_else(|| background.at(x, y), |(_, plane)| plane.at(x, y))
    })
}

fn sphere_on_plane(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Raster {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let (lo, hi) = spec.depth_range;
    let span = hi - lo;
    let background = Plane::random(rng, (w / 2.0, h / 2.0), (w / 2.0, h / 2.0), lo + 0.45 * span, hi);
    let radius_px = rng.random_range(0.2..0.35) * w.min(h);
    let u0 = rng.random_range(radius_px..w - radius_px);
    let v0 = rng.random_range(radius_px..h - radius_px);
    let zc = lo + rng.random_range(0.2..0.35) * span;
    let focal = spec.intrinsics().fx;
    let radius_m = (radius_px * zc / focal).min(zc - lo);
    Raster::from_fn(spec.width, spec.height, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let r2 = ((x - u0).powi(2) + (y - v0).powi(2)) / (radius_px * radius_px);
        if r2 < 1.0 {
            zc - radius_m * (1.0 - r2).sqrt()
        } else {
            background.at(x, y)
        }
    })
}

fn staircase(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Raster {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let (lo, hi) = spec.depth_range;
    let span = hi - lo;
    let steps = rng.random_range(4..=7usize);
    let band = h / steps as f64;
    let riser_share = rng.random_range(0.3..0.5);
    let tilt = rng.random_range(-0.04..0.04) * span / w;
    // Step 0 is the bottom (nearest) band.
    let step_depth = |k: usize| lo + span * (0.1 + 0.75 * k as f64 / (steps - 1) as f64);
    Raster::from_fn(spec.width, spec.height, |x, y| {
        let from_bottom = h - 1.0 - y as f64;
        let k = ((from_bottom / band) as usize).min(steps - 1);
        let within = (from_bottom - k as f64 * band) / band;
        let z = step_depth(k);
        let tread = 0.35 * (step_depth(1) - step_depth(0));
        let base = if within < 1.0 - riser_share {
            // Tread climbs towards the riser.
            z - tread * (1.0 - within / (1.0 - riser_share))
        } else {
            z
        };
        (base + tilt * (x as f64 - w / 2.0)).clamp(lo, hi)
    })
}

/// Dense ground truth and its shaded luminance image.
pub fn generate(spec: &SceneSpec) -> Result<(DepthGrid, IntensityImage)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let raster = match spec.layout {
        SceneLayout::Planes => planes(spec, &mut rng),
        SceneLayout::SphereOnPlane => sphere_on_plane(spec, &mut rng),
        SceneLayout::Staircase => staircase(spec, &mut rng),
    };
    let (lo, hi) = spec.depth_range;
    let gt = DepthGrid::from_raster(raster.map(|v| v.clamp(lo, hi)))?;
    let image = shade(&gt, &spec.intrinsics())?;
    Ok((gt, image))
}

/// Lambertian shading of the surface normals implied by `depth`, dimmed
/// in inverse proportion to distance (nearest surface at full brightness).
pub fn shade(depth: &DepthGrid, intrinsics: &CameraIntrinsics) -> Result<IntensityImage> {
    let (w, h) = depth.shape();
    if w < 2 || h < 2 {
        return Err(Error::InvalidParameter(format!("cannot shade a {w}x{h} grid")));
    }
    let norm = (LIGHT[0] * LIGHT[0] + LIGHT[1] * LIGHT[1] + LIGHT[2] * LIGHT[2]).sqrt();
    let light = [LIGHT[0] / norm, LIGHT[1] / norm, LIGHT[2] / norm];
    let diff = |a: usize, b: usize, get: &dyn Fn(usize) -> f64| (get(b) - get(a)) / (b - a) as f64;
    let nearest = depth
        .values()
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let raster = Raster::from_fn(w, h, |x, y| {
        let z = depth.get(x, y).max(1e-6);
        let dzdx = diff(x.saturating_sub(1), (x + 1).min(w - 1), &|i| depth.get(i, y));
        let dzdy = diff(y.saturating_sub(1), (y + 1).min(h - 1), &|j| depth.get(x, j));
        // Depth change per metric step: one pixel spans z / f meters.
        let gx = dzdx * intrinsics.fx / z;
        let gy = dzdy * intrinsics.fy / z;
        let len = (gx * gx + gy * gy + 1.0).sqrt();
        let lambert = (gx * light[0] + gy * light[1] - light[2]) / len;
        let falloff = if nearest.is_finite() {
            (nearest / z).min(1.0)
        } else {
            1.0
        };
        (falloff * (AMBIENT + DIFFUSE * lambert.max(0.0))).clamp(0.0, 1.0)
    });
    IntensityImage::from_raster(raster)
}

/// Image rows hit by `total_lines` beams spread evenly in elevation across
/// the vertical field of view. Rows are distinct and increasing.
pub fn lidar_rows(height: usize, total_lines: usize, intrinsics: &CameraIntrinsics) -> Result<Vec<usize>> {
    if total_lines < 4 {
        return Err(Error::InvalidParameter(format!(
            "need at least 4 lines, got {total_lines}"
        )));
    }
    if total_lines > height {
        return Err(Error::InvalidParameter(format!(
            "{total_lines} lines do not fit in {height} rows"
        )));
    }
    let top = intrinsics.elevation(0.0);
    let bottom = intrinsics.elevation((height - 1) as f64);
    let mut rows: Vec<usize> = (0..total_lines)
        .map(|line| {
            let angle = top + (bottom - top) * line as f64 / (total_lines - 1) as f64;
            let row = intrinsics.cy + intrinsics.fy * angle.tan();
            row.round().clamp(0.0, (height - 1) as f64) as usize
        })
        .collect();
    rows.dedup();
    if rows.len() != total_lines {
        return Err(Error::InvalidParameter(format!(
            "{total_lines} lines collapse onto {} distinct rows",
            rows.len()
        )));
    }
    Ok(rows)
}

/// Samples `gt` along the rows of a spinning LiDAR with `total_lines` beams
/// and full horizontal coverage. Invalid ground-truth pixels stay empty.
pub fn lidar_lines_from_gt(
    gt: &DepthGrid,
    total_lines: usize,
    intrinsics: &CameraIntrinsics,
) -> Result<SparseDepthGrid> {
    let (w, h) = gt.shape();
    let rows = lidar_rows(h, total_lines, intrinsics)?;
    let mut data = vec![0.0; w * h];
    for &y in &rows {
        data[y * w..(y + 1) * w].copy_from_slice(&gt.values()[y * w..(y + 1) * w]);
    }
    SparseDepthGrid::new(w, h, data)
}

/// Generates the scene of `spec` and samples it with a `total_lines` LiDAR.
pub fn lidar_fixture(spec: &SceneSpec, total_lines: usize, intrinsics: &CameraIntrinsics) -> Result<SparseDepthGrid> {
    let (gt, _) = generate(spec)?;
    lidar_lines_from_gt(&gt, total_lines, intrinsics)
}
