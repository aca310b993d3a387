//! Scale-and-place: align an up-to-scale depth prediction to sparse metric
//! hints, then write the hints into the aligned map.
//!
//! The *scale* step fits `s ≈ beta * p + alpha` over the supported pixels by
//! confidence-weighted least squares:
//!
//! ```text
//! p_hat = Σ c p / Σ c          s_hat = Σ c s / Σ c
//! beta  = Σ c (p - p_hat)(s - s_hat) / Σ c (p - p_hat)^2
//! alpha = s_hat - beta * p_hat
//! ```
//!
//! The *place* step copies every non-zero hint into the depth map and sets
//! its confidence to exactly 1. Predicted confidences are squashed into
//! `[0.1, 0.9]` beforehand so placed hints always dominate.
//!
//! When the weighted spread of `p` vanishes (or only one hint exists) the
//! closed form is undefined and the fit falls back to a pure ratio
//! `beta = s_hat / p_hat`, or to a pure shift when `p_hat` is ~0.

use crate::error::{Error, Result};
use crate::grid::{ensure_same_shape, ConfidenceGrid, DepthGrid, GridView, Raster, SparseDepthGrid};

pub const CONFIDENCE_FLOOR: f64 = 0.1;
pub const CONFIDENCE_CEIL: f64 = 0.9;
/// Weighted variance of the prediction below which the slope is not fitted.
pub const MIN_WEIGHTED_VARIANCE: f64 = 1e-12;
/// Weighted mean prediction below which the ratio fallback is not used.
pub const MIN_RATIO_DENOMINATOR: f64 = 1e-9;
pub const MIN_BETA: f64 = 1e-3;
pub const MAX_BETA: f64 = 1e3;

/// Affine map `depth -> beta * depth + alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineScale {
    pub beta: f64,
    pub alpha: f64,
}

impl AffineScale {
    pub const IDENTITY: AffineScale = AffineScale { beta: 1.0, alpha: 0.0 };

    #[inline]
    pub fn apply(&self, value: f64) -> f64 {
        self.beta * value + self.alpha
    }
}

/// Result of a full scale-and-place pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalePlaceOutput {
    pub depth: DepthGrid,
    pub confidence: ConfidenceGrid,
    pub scale: AffineScale,
    pub support_count: usize,
    /// No hints were available: `depth` is the raw prediction.
    pub passthrough: bool,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps unbounded scores into `[0.1, 0.9]` via `0.1 + 0.8 * sigmoid(raw)`.
pub fn squash_confidence(raw: &Raster) -> Result<ConfidenceGrid> {
    if let Some((index, value)) = raw.first_non_finite() {
        return Err(Error::NonFinite { index, value });
    }
    let span = CONFIDENCE_CEIL - CONFIDENCE_FLOOR;
    Ok(ConfidenceGrid::from_raster_unchecked(
        raw.map(|v| CONFIDENCE_FLOOR + span * sigmoid(v)),
    ))
}

/// Weighted means and centered second moments of a regression problem.
#[derive(Debug, Clone, Copy)]
struct Moments {
    weight_sum: f64,
    mean_p: f64,
    mean_s: f64,
    sxx: f64,
    sxy: f64,
}

fn moments(p: &[f64], s: &[f64], c: &[f64]) -> Result<Moments> {
    if p.is_empty() {
        return Err(Error::NoSupport);
    }
    let mut weight_sum = 0.0;
    let mut wp = 0.0;
    let mut ws = 0.0;
    for ((&pi, &si), &ci) in p.iter().zip(s).zip(c) {
        weight_sum += ci;
        wp += ci * pi;
        ws += ci * si;
    }
    if !(weight_sum > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let mean_p = wp / weight_sum;
    let mean_s = ws / weight_sum;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((&pi, &si), &ci) in p.iter().zip(s).zip(c) {
        let dp = pi - mean_p;
        sxx += ci * dp * dp;
        sxy += ci * dp * (si - mean_s);
    }
    Ok(Moments {
        weight_sum,
        mean_p,
        mean_s,
        sxx,
        sxy,
    })
}

/// Confidence-weighted affine fit of `s` against `p` over paired samples,
/// with the degenerate-case fallbacks and the slope clamp applied.
pub fn weighted_affine_fit(p: &[f64], s: &[f64], c: &[f64]) -> Result<AffineScale> {
    if p.len() != s.len() || p.len() != c.len() {
        return Err(Error::InvalidParameter(format!(
            "regression inputs differ in length: {} / {} / {}",
            p.len(),
            s.len(),
            c.len()
        )));
    }
    if let Some(&bad) = c.iter().find(|&&ci| !(ci >= 0.0 && ci.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "regression weight {bad} is not a finite non-negative value"
        )));
    }
    let m = moments(p, s, c)?;
    let variance = m.sxx / m.weight_sum;
    let support = c.iter().filter(|&&ci| ci > 0.0).count();

    if support == 1 || !(variance >= MIN_WEIGHTED_VARIANCE) {
        if m.mean_p > MIN_RATIO_DENOMINATOR {
            let beta = (m.mean_s / m.mean_p).clamp(MIN_BETA, MAX_BETA);
            return Ok(AffineScale { beta, alpha: 0.0 });
        }
        return Ok(AffineScale {
            beta: 1.0,
            alpha: m.mean_s - m.mean_p,
        });
    }

    // The offset is refitted for the clamped slope.
    let beta = (m.sxy / m.sxx).clamp(MIN_BETA, MAX_BETA);
    Ok(AffineScale {
        beta,
        alpha: m.mean_s - beta * m.mean_p,
    })
}

/// Pixel indices with their predictions, hints and confidences.
type Support = (Vec<usize>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Gathers `(prediction, hint, confidence)` triples at every valid hint.
fn support(pred: &DepthGrid, conf: &ConfidenceGrid, sparse: &SparseDepthGrid) -> Result<Support> {
    ensure_same_shape(pred, sparse)?;
    ensure_same_shape(conf, sparse)?;
    let n = sparse.valid_count();
    let mut idx = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for (i, hint) in sparse.iter_valid() {
        idx.push(i);
        p.push(pred.values()[i]);
        s.push(hint);
        c.push(conf.values()[i]);
    }
    Ok((idx, p, s, c))
}

/// Fits `(beta, alpha)` of the scale step over the valid hints.
pub fn fit_scale(pred: &DepthGrid, conf: &ConfidenceGrid, sparse: &SparseDepthGrid) -> Result<AffineScale> {
    let (_, p, s, c) = support(pred, conf, sparse)?;
    weighted_affine_fit(&p, &s, &c)
}

/// `beta * pred + alpha`, clamped below at zero.
pub fn apply_scale(pred: &DepthGrid, scale: AffineScale) -> Result<DepthGrid> {
    if !(scale.beta.is_finite() && scale.alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite scale {scale:?}")));
    }
    let scaled = pred.raster().map(|v| scale.apply(v).max(0.0));
    if let Some((index, value)) = scaled.first_non_finite() {
        return Err(Error::NonFinite { index, value });
    }
    Ok(DepthGrid::from_raster_unchecked(scaled))
}

/// Writes hints into the depth map (confidence 1 there); every other pixel
/// passes through untouched.
pub fn place(
    scaled: &DepthGrid,
    conf: &ConfidenceGrid,
    sparse: &SparseDepthGrid,
) -> Result<(DepthGrid, ConfidenceGrid)> {
    ensure_same_shape(scaled, sparse)?;
    ensure_same_shape(conf, sparse)?;
    let mut depth = scaled.values().to_vec();
    let mut confidence = conf.values().to_vec();
    for (i, hint) in sparse.iter_valid() {
        depth[i] = hint;
        confidence[i] = 1.0;
    }
    let (w, h) = sparse.shape();
    Ok((
        DepthGrid::from_raster_unchecked(Raster::new(w, h, depth)?),
        ConfidenceGrid::from_raster_unchecked(Raster::new(w, h, confidence)?),
    ))
}

/// Squash, fit, scale and place in one pass.
///
/// Without any hint the raw prediction is returned with the identity scale
/// and `passthrough` set.
pub fn scale_and_place(
    pred: &DepthGrid,
    raw_confidence: &Raster,
    sparse: &SparseDepthGrid,
) -> Result<ScalePlaceOutput> {
    ensure_same_shape(pred, sparse)?;
    ensure_same_shape(raw_confidence, sparse)?;
    let confidence = squash_confidence(raw_confidence)?;
    let support_count = sparse.valid_count();
    if support_count == 0 {
        return Ok(ScalePlaceOutput {
            depth: pred.clone(),
            confidence,
            scale: AffineScale::IDENTITY,
            support_count,
            passthrough: true,
        });
    }
    let scale = fit_scale(pred, &confidence, sparse)?;
    let scaled = apply_scale(pred, scale)?;
    let (depth, confidence) = place(&scaled, &confidence, sparse)?;
    Ok(ScalePlaceOutput {
        depth,
        confidence,
        scale,
        support_count,
        passthrough: false,
    })
}

/// Partial derivatives of the closed-form fit, one entry per valid hint in
/// row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleGradients {
    /// Flat pixel index of each support point.
    pub pixels: Vec<usize>,
    pub dbeta_dpred: Vec<f64>,
    pub dalpha_dpred: Vec<f64>,
    pub dbeta_dconf: Vec<f64>,
    pub dalpha_dconf: Vec<f64>,
}

/// Analytic gradients of the unclamped closed-form `(beta, alpha)` with
/// respect to each supported prediction `p_i` and confidence `c_i`.
pub fn fit_scale_gradients(
    pred: &DepthGrid,
    conf: &ConfidenceGrid,
    sparse: &SparseDepthGrid,
) -> Result<ScaleGradients> {
    let (pixels, p, s, c) = support(pred, conf, sparse)?;
    let g = closed_form_gradients(&p, &s, &c)?;
    Ok(ScaleGradients { pixels, ..g })
}

/// Gradients on raw sample vectors; `pixels` is left empty.
pub fn closed_form_gradients(p: &[f64], s: &[f64], c: &[f64]) -> Result<ScaleGradients> {
    let m = moments(p, s, c)?;
    let variance = m.sxx / m.weight_sum;
    if !(variance > MIN_WEIGHTED_VARIANCE) {
        return Err(Error::DegenerateRegression { variance });
    }
    let beta = m.sxy / m.sxx;
    let alpha = m.mean_s - beta * m.mean_p;
    let n = p.len();
    let mut out = ScaleGradients {
        pixels: Vec::new(),
        dbeta_dpred: Vec::with_capacity(n),
        dalpha_dpred: Vec::with_capacity(n),
        dbeta_dconf: Vec::with_capacity(n),
        dalpha_dconf: Vec::with_capacity(n),
    };
    for i in 0..n {
        let dp = p[i] - m.mean_p;
        let ds = s[i] - m.mean_s;
        let residual = s[i] - (beta * p[i] + alpha);

        // Terms through p_hat and s_hat cancel because Σ c (s - s_hat) = 0.
        let dbeta_dp = c[i] * (ds - 2.0 * beta * dp) / m.sxx;
        let dalpha_dp = -m.mean_p * dbeta_dp - beta * c[i] / m.weight_sum;

        let dbeta_dc = dp * residual / m.sxx;
        let dalpha_dc = residual / m.weight_sum - m.mean_p * dbeta_dc;

        out.dbeta_dpred.push(dbeta_dp);
        out.dalpha_dpred.push(dalpha_dp);
        out.dbeta_dconf.push(dbeta_dc);
        out.dalpha_dconf.push(dalpha_dc);
    }
    Ok(out)
}

/// Unclamped closed form, used by gradient checks.
pub fn closed_form_fit(p: &[f64], s: &[f64], c: &[f64]) -> Result<AffineScale> {
    let m = moments(p, s, c)?;
    let variance = m.sxx / m.weight_sum;
    if !(variance > MIN_WEIGHTED_VARIANCE) {
        return Err(Error::DegenerateRegression { variance });
    }
    let beta = m.sxy / m.sxx;
    Ok(AffineScale {
        beta,
        alpha: m.mean_s - beta * m.mean_p,
    })
}
