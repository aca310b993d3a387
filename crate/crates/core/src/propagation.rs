//! Non-local spatial propagation.
//!
//! Every pixel `(m, n)` owns `K` neighbors at fractional offsets `(p, q)` with
//! affinity weights `w_k`. One step updates all pixels from the previous
//! buffer:
//!
//! ```text
//! x'(m, n) = w_c * x(m, n) + Σ_k w_k * c(m + p_k, n + q_k) * x(m + p_k, n + q_k)
//! w_c      = 1 - Σ_k w_k * c(m + p_k, n + q_k)
//! ```
//!
//! Neighbor values and confidences are read by bilinear sampling with
//! border clamping. Each neighbor's contribution is modulated by its
//! confidence `c`, so placed hints (confidence 1) spread further than weak
//! predictions; with `c ≡ 1` this is the plain recurrence. Weights must be
//! normalized (`Σ|w_k| <= 1` per pixel) before propagating. Pixels carrying
//! a hint are re-pinned to it after every step.

use crate::error::{Error, Result};
use crate::grid::{ensure_same_shape, ConfidenceGrid, DepthGrid, GridView, IntensityImage, Raster, SparseDepthGrid};

pub const DEFAULT_NEIGHBORS: usize = 8;
pub const DEFAULT_STEPS: usize = 18;
pub const DEFAULT_MAX_REACH: f64 = 12.0;
/// Intensity difference scale of the heuristic affinities.
pub const SIMILARITY_TAU: f64 = 0.1;
/// Slack on the affinity budget check for rounding in the normalization.
const BUDGET_TOLERANCE: f64 = 1e-12;

/// The eight compass directions scanned by [`heuristic_neighborhood`].
const RAYS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationConfig {
    pub steps: usize,
    /// Reject fields with negative affinities.
    pub nonnegative_weights: bool,
    pub max_reach: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            nonnegative_weights: true,
            max_reach: DEFAULT_MAX_REACH,
        }
    }
}

/// Per-pixel neighbor offsets and affinity weights, `k` per pixel, stored
/// pixel-major (`pixel * k + slot`).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodField {
    width: usize,
    height: usize,
    k: usize,
    offsets: Vec<(f64, f64)>,
    weights: Vec<f64>,
}

impl NeighborhoodField {
    pub fn new(
        width: usize,
        height: usize,
        k: usize,
        offsets: Vec<(f64, f64)>,
        weights: Vec<f64>,
        max_reach: f64,
    ) -> Result<Self> {
        let expected = width * height * k;
        if offsets.len() != expected || weights.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "field {width}x{height} with k={k} needs {expected} offsets and weights, got {} and {}",
                offsets.len(),
                weights.len()
            )));
        }
        for (i, &(p, q)) in offsets.iter().enumerate() {
            if !p.is_finite() || !q.is_finite() {
                return Err(Error::NonFinite {
                    index: i,
                    value: if p.is_finite() { q } else { p },
                });
            }
            if p.abs() > max_reach || q.abs() > max_reach {
                return Err(Error::InvalidParameter(format!(
                    "offset ({p}, {q}) at slot {i} exceeds reach {max_reach}"
                )));
            }
        }
        if let Some((index, &value)) = weights.iter().enumerate().find(|(_, w)| !w.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self {
            width,
            height,
            k,
            offsets,
            weights,
        })
    }

    /// A field with no neighbors; propagation through it is the identity.
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            k: 0,
            offsets: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn neighbors_per_pixel(&self) -> usize {
        self.k
    }

    pub fn offsets(&self, pixel: usize) -> &[(f64, f64)] {
        &self.offsets[pixel * self.k..(pixel + 1) * self.k]
    }

    pub fn weights(&self, pixel: usize) -> &[f64] {
        &self.weights[pixel * self.k..(pixel + 1) * self.k]
    }

    /// `1 - Σ_k w_k` at `pixel`.
    pub fn reference_weight(&self, pixel: usize) -> f64 {
        1.0 - self.weights(pixel).iter().sum::<f64>()
    }

    /// Largest `Σ_k |w_k|` over all pixels.
    pub fn max_abs_sum(&self) -> f64 {
        if self.k == 0 {
            return 0.0;
        }
        self.weights
            .chunks_exact(self.k)
            .map(|ws| ws.iter().map(|w| w.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn check_normalized(&self, nonnegative: bool) -> Result<()> {
        if self.k == 0 {
            return Ok(());
        }
        for (pixel, ws) in self.weights.chunks_exact(self.k).enumerate() {
            let sum: f64 = ws.iter().map(|w| w.abs()).sum();
            if sum > 1.0 + BUDGET_TOLERANCE {
                return Err(Error::UnnormalizedField { pixel, sum });
            }
            if nonnegative && ws.iter().any(|&w| w < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "negative affinity at pixel {pixel} with nonnegative weights required"
                )));
            }
        }
        Ok(())
    }
}

/// Scales one pixel's weights so that `Σ|w| <= 1`. Returns the normalized
/// weights and the reference weight `1 - Σ w`.
pub fn normalize_weights(raw: &[f64]) -> Result<(Vec<f64>, f64)> {
    if let Some((index, &value)) = raw.iter().enumerate().find(|(_, w)| !w.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }
    let budget: f64 = raw.iter().map(|w| w.abs()).sum();
    let weights: Vec<f64> = if budget > 1.0 {
        raw.iter().map(|w| w / budget).collect()
    } else {
        raw.to_vec()
    };
    let reference = 1.0 - weights.iter().sum::<f64>();
    Ok((weights, reference))
}

/// Applies [`normalize_weights`] at every pixel.
pub fn normalize_affinities(field: &NeighborhoodField) -> Result<NeighborhoodField> {
    let mut weights = Vec::with_capacity(field.weights.len());
    if field.k > 0 {
        for ws in field.weights.chunks_exact(field.k) {
            weights.extend(normalize_weights(ws)?.0);
        }
    }
    Ok(NeighborhoodField {
        weights,
        ..field.clone()
    })
}

/// Runs `config.steps` synchronous propagation steps.
pub fn propagate(
    initial: &DepthGrid,
    field: &NeighborhoodField,
    conf: &ConfidenceGrid,
    sparse: &SparseDepthGrid,
    config: &PropagationConfig,
) -> Result<DepthGrid> {
    ensure_same_shape(initial, conf)?;
    ensure_same_shape(initial, sparse)?;
    if field.shape() != initial.shape() {
        return Err(Error::ShapeMismatch {
            left: field.shape(),
            right: initial.shape(),
        });
    }
    field.check_normalized(config.nonnegative_weights)?;
    if config.steps == 0 || field.k == 0 || initial.raster().is_empty() {
        let mut out = initial.values().to_vec();
        if config.steps > 0 {
            pin(&mut out, sparse);
        }
        return DepthGrid::new(initial.width(), initial.height(), out);
    }

    let (width, height) = initial.shape();
    let confidence = conf.raster();
    let mut current = initial.raster().clone();
    let mut next = vec![0.0; current.len()];
    for _ in 0..config.steps {
        for (pixel, out) in next.iter_mut().enumerate() {
            let x = (pixel % width) as f64;
            let y = (pixel / width) as f64;
            let mut reference = 1.0;
            let mut acc = 0.0;
            for (&(p, q), &w) in field.offsets(pixel).iter().zip(field.weights(pixel)) {
                if w == 0.0 {
                    continue;
                }
                let effective = w * confidence.sample_clamped(x + p, y + q);
                reference -= effective;
                acc += effective * current.sample_clamped(x + p, y + q);
            }
            *out = reference * current.values()[pixel] + acc;
        }
        pin(&mut next, sparse);
        let buffer = Raster::new(width, height, std::mem::take(&mut next))?;
        next = std::mem::replace(&mut current, buffer).into_values();
    }

    let values = current.into_values();
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }
    // Signed affinities may overshoot below zero.
    let values = values.into_iter().map(|v| v.max(0.0)).collect();
    DepthGrid::new(width, height, values)
}

fn pin(values: &mut [f64], sparse: &SparseDepthGrid) {
    for (i, hint) in sparse.iter_valid() {
        values[i] = hint;
    }
}

/// Deterministic stand-in for a learned neighborhood: for each pixel, the
/// most intensity-similar pixel along each of the eight compass rays
/// (within `max_reach` steps) is a candidate; the `k` most similar
/// candidates become neighbors with raw weight `exp(-|ΔI| / 0.1)`.
///
/// Ties prefer the nearer pixel along a ray, then the earlier ray. The
/// result is not normalized.
pub fn heuristic_neighborhood(image: &IntensityImage, k: usize, max_reach: usize) -> Result<NeighborhoodField> {
    let (width, height) = image.shape();
    if image.raster().is_empty() {
        return Err(Error::EmptyGrid { width, height });
    }
    if k > RAYS.len() {
        return Err(Error::InvalidParameter(format!(
            "at most {} neighbors are supported, got {k}",
            RAYS.len()
        )));
    }
    if k > 0 && max_reach == 0 {
        return Err(Error::InvalidParameter("max_reach must be at least 1".into()));
    }
    let mut offsets = Vec::with_capacity(width * height * k);
    let mut weights = Vec::with_capacity(width * height * k);
    let mut candidates: Vec<(f64, usize, (f64, f64))> = Vec::with_capacity(RAYS.len());
    for y in 0..height {
        for x in 0..width {
            let center = image.get(x, y);
            candidates.clear();
            for (ray, &(dx, dy)) in RAYS.iter().enumerate() {
                let mut best: Option<(f64, (f64, f64))> = None;
                for step in 1..=max_reach as i64 {
                    let nx = x as i64 + dx * step;
                    let ny = y as i64 + dy * step;
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        break;
                    }
                    let diff = (image.get(nx as usize, ny as usize) - center).abs();
                    if best.is_none_or(|(d, _)| diff < d) {
                        best = Some((diff, ((dx * step) as f64, (dy * step) as f64)));
                    }
                }
                if let Some((diff, offset)) = best {
                    candidates.push((diff, ray, offset));
                }
            }
            candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for slot in 0..k {
                match candidates.get(slot) {
                    Some(&(diff, _, offset)) => {
                        offsets.push(offset);
                        weights.push((-diff / SIMILARITY_TAU).exp());
                    }
                    // Fewer than k rays fit inside the image (1-pixel-wide
                    // images): pad with inert neighbors.
                    None => {
                        offsets.push((0.0, 0.0));
                        weights.push(0.0);
                    }
                }
            }
        }
    }
    NeighborhoodField::new(width, height, k, offsets, weights, max_reach as f64)
}
