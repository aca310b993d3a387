//! Sparse input patterns sampled from dense ground truth.
//!
//! Samplers never alter depth values: every emitted point equals the ground
//! truth at its pixel, and ground-truth pixels that are `0` (invalid) never
//! produce a point. All generators are deterministic in their seed.
//!
//! Pattern specs use the textual form `kind:key=value[,key=value...]`, e.g.
//! `random_k:k=500,seed=7` or `lidar_lines:total=64,kept=16`.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{CameraIntrinsics, DepthGrid, GridView, SparseDepthGrid};

/// Lattice pitch giving ~100 surviving points on 304x228 images once the
/// random shift has cropped the lattice.
pub const DEFAULT_GRID_SPACING: usize = 22;
pub const DEFAULT_PETALS: usize = 8;
/// Tuned for ~150 distinct pixels on 304x228 images.
pub const DEFAULT_REVOLUTIONS: f64 = 1.6;
pub const ROSETTE_SAMPLES_PER_REVOLUTION: usize = 100;
const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    /// `k` uniformly random valid pixels.
    RandomK { k: usize },
    /// Triangular dot lattice translated by a random shift.
    ShiftedGrid { spacing: usize },
    /// Rosette scan of a non-repetitive LiDAR.
    Livox { petals: usize, revolutions: f64 },
    /// Keeps `kept_lines` of `total_lines` elevation bins of a LiDAR scan.
    LidarLines { total_lines: usize, kept_lines: usize },
}

impl Pattern {
    pub fn kind(&self) -> &'static str {
        match self {
            Pattern::RandomK { .. } => "random_k",
            Pattern::ShiftedGrid { .. } => "shifted_grid",
            Pattern::Livox { .. } => "livox",
            Pattern::LidarLines { .. } => "lidar_lines",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Pattern::RandomK { .. } => Ok(()),
            Pattern::ShiftedGrid { spacing } if spacing < 2 => {
                Err(Error::InvalidSpec(format!("spacing must be at least 2, got {spacing}")))
            }
            Pattern::Livox { petals, revolutions } if petals < 2 || !(revolutions.is_finite() && revolutions > 0.0) => {
                Err(Error::InvalidSpec(format!(
                    "livox needs petals >= 2 and positive revolutions, got {petals} / {revolutions}"
                )))
            }
            Pattern::LidarLines {
                total_lines,
                kept_lines,
            } if kept_lines == 0 || kept_lines > total_lines || total_lines % kept_lines != 0 => {
                Err(Error::InvalidSpec(format!(
                    "kept lines must divide total lines, got {kept_lines} of {total_lines}"
                )))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::RandomK { k } => write!(f, "random_k:k={k}"),
            Pattern::ShiftedGrid { spacing } => write!(f, "shifted_grid:spacing={spacing}"),
            Pattern::Livox { petals, revolutions } => {
                write!(f, "livox:petals={petals},revolutions={revolutions}")
            }
            Pattern::LidarLines {
                total_lines,
                kept_lines,
            } => {
                write!(f, "lidar_lines:total={total_lines},kept={kept_lines}")
            }
        }
    }
}

/// A pattern plus the seed that drives it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternSpec {
    pub pattern: Pattern,
    pub seed: u64,
}

impl PatternSpec {
    pub fn new(pattern: Pattern, seed: u64) -> Self {
        Self { pattern, seed }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

impl fmt::Display for PatternSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},seed={}", self.pattern, self.seed)
    }
}

/// Splits `kind:key=value,...` into the kind and its key/value pairs.
/// Duplicate keys are rejected.
pub fn parse_key_values(text: &str) -> Result<(&str, BTreeMap<&str, &str>)> {
    let (kind, rest) = match text.split_once(':') {
        Some((kind, rest)) => (kind.trim(), rest.trim()),
        None => (text.trim(), ""),
    };
    if kind.is_empty() {
        return Err(Error::InvalidSpec(format!("missing kind in {text:?}")));
    }
    let mut pairs = BTreeMap::new();
    if !rest.is_empty() {
        for item in rest.split(',') {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidSpec(format!("expected key=value, got {item:?}")))?;
            if pairs.insert(key.trim(), value.trim()).is_some() {
                return Err(Error::InvalidSpec(format!("duplicate key {:?}", key.trim())));
            }
        }
    }
    Ok((kind, pairs))
}

/// Pops `key` from `pairs` and parses it, or returns `default`.
pub fn take_param<T: FromStr>(pairs: &mut BTreeMap<&str, &str>, key: &str, default: T) -> Result<T> {
    match pairs.remove(key) {
        None => Ok(default),
        Some(raw) => raw
            .parse()
            .map_err(|_| Error::InvalidSpec(format!("cannot parse {key}={raw:?}"))),
    }
}

/// Errors if any key was not consumed.
pub fn reject_unknown(kind: &str, pairs: &BTreeMap<&str, &str>) -> Result<()> {
    match pairs.keys().next() {
        Some(key) => Err(Error::InvalidSpec(format!("unknown key {key:?} for {kind}"))),
        None => Ok(()),
    }
}

impl FromStr for PatternSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let (kind, mut pairs) = parse_key_values(text)?;
        let seed = take_param(&mut pairs, "seed", 0u64)?;
        let pattern = match kind {
            "random_k" => Pattern::RandomK {
                k: take_param(&mut pairs, "k", 500)?,
            },
            "shifted_grid" => Pattern::ShiftedGrid {
                spacing: take_param(&mut pairs, "spacing", DEFAULT_GRID_SPACING)?,
            },
            "livox" => Pattern::Livox {
                petals: take_param(&mut pairs, "petals", DEFAULT_PETALS)?,
                revolutions: take_param(&mut pairs, "revolutions", DEFAULT_REVOLUTIONS)?,
            },
            "lidar_lines" => Pattern::LidarLines {
                total_lines: take_param(&mut pairs, "total", 64)?,
                kept_lines: take_param(&mut pairs, "kept", 64)?,
            },
            other => return Err(Error::InvalidSpec(format!("unknown pattern kind {other:?}"))),
        };
        reject_unknown(kind, &pairs)?;
        pattern.validate()?;
        Ok(PatternSpec { pattern, seed })
    }
}

/// Copies the listed ground-truth pixels into an otherwise empty grid,
/// skipping invalid (zero) ground truth.
fn copy_pixels(gt: &DepthGrid, pixels: impl IntoIterator<Item = usize>) -> SparseDepthGrid {
    let mut data = vec![0.0; gt.values().len()];
    for i in pixels {
        data[i] = gt.values()[i];
    }
    SparseDepthGrid::new(gt.width(), gt.height(), data).expect("ground-truth values are valid depths")
}

/// `k` distinct valid pixels drawn uniformly without replacement.
pub fn sample_random_k(gt: &DepthGrid, k: usize, seed: u64) -> Result<SparseDepthGrid> {
    let valid: Vec<usize> = gt
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, _)| i)
        .collect();
    if k > valid.len() {
        return Err(Error::NotEnoughPoints {
            requested: k,
            available: valid.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, valid.len(), k);
    Ok(copy_pixels(gt, chosen.into_iter().map(|j| valid[j])))
}

/// Row pitch of the triangular lattice: `spacing * sqrt(3) / 2`, rounded.
pub fn lattice_row_pitch(spacing: usize) -> usize {
    ((spacing as f64 * 3f64.sqrt() / 2.0).round() as usize).max(1)
}

/// Pixels of the triangular lattice anchored at `(shift_x, shift_y)`:
/// rows every [`lattice_row_pitch`] pixels, dots every `spacing` pixels,
/// odd rows offset by `spacing / 2`. Cropped to the image.
pub fn lattice_pixels(
    width: usize,
    height: usize,
    spacing: usize,
    shift_x: usize,
    shift_y: usize,
) -> Vec<(usize, usize)> {
    let pitch = lattice_row_pitch(spacing);
    let mut pixels = Vec::new();
    for (row, y) in (shift_y..height).step_by(pitch).enumerate() {
        let start = shift_x + if row % 2 == 1 { spacing / 2 } else { 0 };
        pixels.extend((start..width).step_by(spacing).map(|x| (x, y)));
    }
    pixels
}

/// Triangular lattice with an explicit shift.
pub fn sample_shifted_grid_at(
    gt: &DepthGrid,
    spacing: usize,
    shift_x: usize,
    shift_y: usize,
) -> Result<SparseDepthGrid> {
    Pattern::ShiftedGrid { spacing }.validate()?;
    let width = gt.width();
    let pixels = lattice_pixels(width, gt.height(), spacing, shift_x, shift_y);
    Ok(copy_pixels(gt, pixels.into_iter().map(|(x, y)| y * width + x)))
}

/// Triangular lattice shifted by a uniform random offset in
/// `[0, width / 2) x [0, height / 2)`, leaving the uncovered band empty.
pub fn sample_shifted_grid(gt: &DepthGrid, spacing: usize, seed: u64) -> Result<SparseDepthGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift_x = rng.random_range(0..(gt.width() / 2).max(1));
    let shift_y = rng.random_range(0..(gt.height() / 2).max(1));
    sample_shifted_grid_at(gt, spacing, shift_x, shift_y)
}

/// Geometry of a rosette scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rosette {
    pub petals: usize,
    pub revolutions: f64,
    /// Radius in pixels.
    pub radius: f64,
    pub samples_per_revolution: usize,
}

impl Rosette {
    /// Rosette inscribed in the image.
    pub fn inscribed(width: usize, height: usize, petals: usize, revolutions: f64) -> Self {
        Self {
            petals,
            revolutions,
            radius: (width.min(height) as f64 - 1.0) / 2.0,
            samples_per_revolution: ROSETTE_SAMPLES_PER_REVOLUTION,
        }
    }
}

/// Samples along `r(θ) = R |sin(petals θ / 2)|` around the image center.
/// The curve precesses by `2π / (petals φ)` per revolution so successive
/// revolutions do not retrace each other; the seed sets the start angle.
pub fn sample_rosette(gt: &DepthGrid, rosette: &Rosette, seed: u64) -> Result<SparseDepthGrid> {
    if rosette.petals < 2 || !(rosette.radius.is_finite() && rosette.radius >= 0.0) {
        return Err(Error::InvalidSpec(format!("invalid rosette {rosette:?}")));
    }
    let (width, height) = gt.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.random_range(0.0..TAU);
    let precession = TAU / (rosette.petals as f64 * GOLDEN_RATIO);
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let samples = (rosette.revolutions * rosette.samples_per_revolution as f64).round() as usize;

    let mut touched = std::collections::BTreeSet::new();
    for t in 0..samples {
        let revolutions = t as f64 / rosette.samples_per_revolution as f64;
        let theta = TAU * revolutions;
        let r = rosette.radius * (rosette.petals as f64 * theta / 2.0).sin().abs();
        let psi = theta + phase + precession * revolutions;
        let x = (cx + r * psi.cos()).round();
        let y = (cy + r * psi.sin()).round();
        if x >= 0.0 && y >= 0.0 && (x as usize) < width && (y as usize) < height {
            touched.insert(y as usize * width + x as usize);
        }
    }
    Ok(copy_pixels(gt, touched))
}

/// Rosette inscribed in the image, as produced by a Livox-style scanner.
pub fn sample_livox(gt: &DepthGrid, petals: usize, revolutions: f64, seed: u64) -> Result<SparseDepthGrid> {
    Pattern::Livox { petals, revolutions }.validate()?;
    let rosette = Rosette::inscribed(gt.width(), gt.height(), petals, revolutions);
    sample_rosette(gt, &rosette, seed)
}

/// Keeps every `(total_lines / kept_lines)`-th elevation bin of a LiDAR
/// scan. Valid points are ordered by the vertical ray angle of their row
/// and split into `total_lines` equal-count bins; points sharing an angle
/// share a bin. The seed picks which residue class of bins survives.
pub fn subsample_lidar_lines(
    sparse: &SparseDepthGrid,
    intrinsics: &CameraIntrinsics,
    total_lines: usize,
    kept_lines: usize,
    seed: u64,
) -> Result<SparseDepthGrid> {
    Pattern::LidarLines {
        total_lines,
        kept_lines,
    }
    .validate()?;
    let width = sparse.width();
    let mut points: Vec<(f64, usize)> = sparse
        .iter_valid()
        .map(|(i, _)| (intrinsics.elevation((i / width) as f64), i))
        .collect();
    if points.len() < total_lines {
        return Err(Error::NotEnoughPoints {
            requested: total_lines,
            available: points.len(),
        });
    }
    if kept_lines == total_lines {
        return Ok(sparse.clone());
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let stride = total_lines / kept_lines;
    let phase = ChaCha8Rng::seed_from_u64(seed).random_range(0..stride);
    let n = points.len();
    let mut data = vec![0.0; sparse.values().len()];
    let mut group_rank = 0;
    for (rank, &(angle, pixel)) in points.iter().enumerate() {
        if rank == 0 || angle != points[rank - 1].0 {
            group_rank = rank;
        }
        let bin = group_rank * total_lines / n;
        if bin % stride == phase {
            data[pixel] = sparse.values()[pixel];
        }
    }
    SparseDepthGrid::new(width, sparse.height(), data)
}

/// Dispatches a dense-ground-truth pattern. `lidar_lines` needs a LiDAR scan
/// rather than dense ground truth; see [`subsample_lidar_lines`].
pub fn sample_pattern(gt: &DepthGrid, spec: &PatternSpec) -> Result<SparseDepthGrid> {
    spec.pattern.validate()?;
    match spec.pattern {
        Pattern::RandomK { k } => sample_random_k(gt, k, spec.seed),
        Pattern::ShiftedGrid { spacing } => sample_shifted_grid(gt, spacing, spec.seed),
        Pattern::Livox { petals, revolutions } => sample_livox(gt, petals, revolutions, spec.seed),
        Pattern::LidarLines { .. } => Err(Error::InvalidSpec(
            "lidar_lines subsamples a LiDAR scan, not dense ground truth".into(),
        )),
    }
}
