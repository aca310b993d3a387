//! Multi-scale completion decoder.
//!
//! ```text
//! image ──► predictor@1/8 ──► S&P(H/8) ──► ↑2 ──► predictor@1/4 ──► S&P(H/4) ──► ↑2 ──► predictor@1/2 ──► S&P(H/2)
//!                                                                                                            │ ↑2
//!          propagate ◄── place(H) ◄── unweighted scale(H) ◄── predictor@1 ◄───────────────────────────────────┘
//! ```
//!
//! The image backbone is abstracted behind [`DepthPredictor`]: at every
//! scale it receives the downsampled image and, from 1/4 on, the upsampled
//! depth and confidence of the previous scale, and returns an up-to-scale
//! depth map with an unbounded confidence score. Two reference predictors
//! are provided: [`AffineOraclePredictor`] (an affine distortion of known
//! ground truth, for exact tests) and [`IntensityPredictor`] (a monocular
//! shading heuristic, for qualitative trends).
//!
//! At full resolution the scale fit is unweighted and no confidence is
//! predicted; hints override the result, which is then refined by
//! propagation over the predictor's guidance field, or an intensity
//! similarity field when the predictor has none.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{
    downsample_mean, ensure_same_shape, upsample_to, ConfidenceGrid, DepthGrid, GridView, IntensityImage, Raster,
    SparseDepthGrid,
};
use crate::propagation::{
    heuristic_neighborhood, normalize_affinities, propagate, NeighborhoodField, PropagationConfig, DEFAULT_NEIGHBORS,
};
use crate::pyramid::{build_pyramid, pool_valid_mean, POOLED_LEVELS};
use crate::scale_place::{
    apply_scale, fit_scale, place, scale_and_place, squash_confidence, weighted_affine_fit, AffineScale,
};

/// Downsampling factors of the scale-and-place stages, coarse to fine.
pub const SCALE_DENOMINATORS: [usize; 3] = [8, 4, 2];
/// Lower bound applied to reference-predictor depths to keep them positive.
pub const MIN_PREDICTED_DEPTH: f64 = 1e-3;

/// Previous-scale maps handed to a predictor, already upsampled to the
/// current scale.
#[derive(Debug, Clone, Copy)]
pub struct Previous<'a> {
    pub depth: &'a DepthGrid,
    pub confidence: &'a ConfidenceGrid,
}

/// Up-to-scale depth and an unbounded confidence score, same shape as the
/// input image.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub depth: DepthGrid,
    pub raw_confidence: Raster,
}

/// Stand-in for the learned image backbone and prediction heads.
///
/// Implementations must return maps of the image's shape with strictly
/// positive depth, and must be deterministic in their inputs.
pub trait DepthPredictor: Send + Sync {
    fn predict(&self, image: &IntensityImage, previous: Option<Previous<'_>>) -> Result<Prediction>;

    /// Neighborhood for full-resolution propagation. `None` selects the
    /// intensity-similarity heuristic.
    fn guidance(&self, _image: &IntensityImage, _depth: &DepthGrid) -> Option<NeighborhoodField> {
        None
    }

    /// Identifier printed in effective-config lines.
    fn describe(&self) -> String;
}

/// What the full-resolution stage starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FullResInit {
    /// Run the predictor at full resolution, fed the upsampled 1/2-scale
    /// output.
    #[default]
    Predictor,
    /// Use the upsampled 1/2-scale output directly.
    Upsampled,
}

impl fmt::Display for FullResInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FullResInit::Predictor => "predictor",
            FullResInit::Upsampled => "upsampled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub propagation: PropagationConfig,
    /// Neighbors per pixel of the heuristic guidance field.
    pub neighbors: usize,
    pub full_res_init: FullResInit,
    /// Overrides both predictor and heuristic guidance.
    pub field: Option<NeighborhoodField>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            propagation: PropagationConfig::default(),
            neighbors: DEFAULT_NEIGHBORS,
            full_res_init: FullResInit::default(),
            field: None,
        }
    }
}

impl PipelineConfig {
    pub fn describe(&self) -> String {
        format!(
            "scales=1/8,1/4,1/2 steps={} neighbors={} max_reach={} nonnegative={} full_res_init={} field={}",
            self.propagation.steps,
            self.neighbors,
            self.propagation.max_reach,
            self.propagation.nonnegative_weights,
            self.full_res_init,
            if self.field.is_some() { "injected" } else { "auto" },
        )
    }
}

/// Intermediate maps of one scale-and-place stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleStage {
    /// Downsampling factor (8, 4 or 2).
    pub denominator: usize,
    /// Raw predictor depth.
    pub prediction: DepthGrid,
    /// Depth after the scale step, before placement.
    pub scaled: DepthGrid,
    /// Squashed predictor confidence, before placement.
    pub predicted_confidence: ConfidenceGrid,
    /// Depth after placement.
    pub depth: DepthGrid,
    pub confidence: ConfidenceGrid,
    pub scale: AffineScale,
    pub support_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub depth: DepthGrid,
    pub confidence: ConfidenceGrid,
    pub stages: Vec<ScaleStage>,
    /// Full-resolution depth after the unweighted scale step, before
    /// placement and propagation.
    pub full_scaled: DepthGrid,
    pub full_scale: AffineScale,
    /// No hints at any scale: the output is the monocular prediction.
    pub passthrough: bool,
}

fn checked_prediction(prediction: Prediction, image: &IntensityImage) -> Result<Prediction> {
    if prediction.depth.shape() != image.shape() || prediction.raw_confidence.shape() != image.shape() {
        return Err(Error::PredictorContract(format!(
            "expected {:?} maps, got depth {:?} and confidence {:?}",
            image.shape(),
            prediction.depth.shape(),
            prediction.raw_confidence.shape()
        )));
    }
    if let Some(index) = prediction.depth.values().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::PredictorContract(format!(
            "depth must be strictly positive, got {} at index {index}",
            prediction.depth.values()[index]
        )));
    }
    if let Some((index, value)) = prediction.raw_confidence.first_non_finite() {
        return Err(Error::PredictorContract(format!(
            "confidence score {value} at index {index} is not finite"
        )));
    }
    Ok(prediction)
}

/// Images at full, 1/2, 1/4 and 1/8 resolution.
fn image_pyramid(image: &IntensityImage) -> Vec<IntensityImage> {
    let mut levels = vec![image.clone()];
    for _ in 0..POOLED_LEVELS {
        let next = downsample_mean(levels.last().expect("non-empty"));
        levels.push(next);
    }
    levels
}

/// Runs the full decoder.
pub fn complete(
    image: &IntensityImage,
    sparse: &SparseDepthGrid,
    predictor: &dyn DepthPredictor,
    config: &PipelineConfig,
) -> Result<CompletionResult> {
    ensure_same_shape(image, sparse)?;
    let hints = build_pyramid(sparse)?;
    let images = image_pyramid(image);

    let mut stages: Vec<ScaleStage> = Vec::with_capacity(SCALE_DENOMINATORS.len());
    for (level, &denominator) in (1..=POOLED_LEVELS).rev().zip(&SCALE_DENOMINATORS) {
        let level_image = &images[level];
        let (w, h) = level_image.shape();
        let upsampled = match stages.last() {
            Some(prev) => Some((upsample_to(&prev.depth, w, h)?, upsample_to(&prev.confidence, w, h)?)),
            None => None,
        };
        let previous = upsampled
            .as_ref()
            .map(|(depth, confidence)| Previous { depth, confidence });
        let prediction = checked_prediction(predictor.predict(level_image, previous)?, level_image)?;
        let predicted_confidence = squash_confidence(&prediction.raw_confidence)?;
        let level_hints = hints.level(level);
        let out = scale_and_place(&prediction.depth, &prediction.raw_confidence, level_hints)?;
        let scaled = if out.passthrough {
            prediction.depth.clone()
        } else {
            apply_scale(&prediction.depth, out.scale)?
        };
        stages.push(ScaleStage {
            denominator,
            prediction: prediction.depth,
            scaled,
            predicted_confidence,
            depth: out.depth,
            confidence: out.confidence,
            scale: out.scale,
            support_count: out.support_count,
        });
    }

    let (w, h) = image.shape();
    let last = stages.last().expect("three stages");
    let up_depth = upsample_to(&last.depth, w, h)?;
    let up_confidence = upsample_to(&last.confidence, w, h)?;
    let initial = match config.full_res_init {
        FullResInit::Predictor => {
            let previous = Previous {
                depth: &up_depth,
                confidence: &up_confidence,
            };
            checked_prediction(predictor.predict(image, Some(previous))?, image)?.depth
        }
        FullResInit::Upsampled => up_depth,
    };

    let passthrough = sparse.valid_count() == 0;
    let full_scale = if passthrough {
        AffineScale::IDENTITY
    } else {
        fit_scale(&initial, &ConfidenceGrid::ones(w, h), sparse)?
    };
    let full_scaled = apply_scale(&initial, full_scale)?;
    let (placed, confidence) = place(&full_scaled, &up_confidence, sparse)?;

    let field = match &config.field {
        Some(field) => field.clone(),
        None => match predictor.guidance(image, &placed) {
            Some(field) => field,
            None => heuristic_neighborhood(image, config.neighbors, config.propagation.max_reach as usize)?,
        },
    };
    let field = normalize_affinities(&field)?;
    let depth = propagate(&placed, &field, &confidence, sparse, &config.propagation)?;

    Ok(CompletionResult {
        depth,
        confidence,
        stages,
        full_scaled,
        full_scale,
        passthrough,
    })
}

/// `a * gt + b + N(0, sigma)` at every scale, with confidence score
/// `-|noise| / sigma` (zero when `sigma == 0`). Ground truth at coarser
/// scales is pooled the same way as sparse hints.
#[derive(Debug, Clone)]
pub struct AffineOraclePredictor {
    a: f64,
    b: f64,
    sigma: f64,
    seed: u64,
    levels: Vec<Prediction>,
}

impl AffineOraclePredictor {
    pub fn new(gt: &DepthGrid, a: f64, b: f64, noise_sigma: f64, seed: u64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "oracle gain must be positive, got {a}"
            )));
        }
        if !b.is_finite() || !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "oracle offset {b} and noise {noise_sigma} must be finite, noise non-negative"
            )));
        }
        let mut truth: Vec<Raster> = vec![gt.raster().clone()];
        for _ in 0..POOLED_LEVELS {
            let next = pool_valid_mean(truth.last().expect("non-empty")).into_raster();
            truth.push(next);
        }
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let levels = truth
            .iter()
            .enumerate()
            .map(|(level, raster)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(level as u64));
                let noise: Vec<f64> = (0..raster.len())
                    .map(|_| {
                        if noise_sigma > 0.0 {
                            normal.sample(&mut rng)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let depth: Vec<f64> = raster
                    .values()
                    .iter()
                    .zip(&noise)
                    .map(|(&g, &n)| (a * g + b + n).max(MIN_PREDICTED_DEPTH))
                    .collect();
                let raw: Vec<f64> = noise
                    .iter()
                    .map(|&n| if noise_sigma > 0.0 { -n.abs() / noise_sigma } else { 0.0 })
                    .collect();
                let (w, h) = raster.shape();
                Ok(Prediction {
                    depth: DepthGrid::new(w, h, depth)?,
                    raw_confidence: Raster::new(w, h, raw)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            a,
            b,
            sigma: noise_sigma,
            seed,
            levels,
        })
    }
}

impl DepthPredictor for AffineOraclePredictor {
    fn predict(&self, image: &IntensityImage, _previous: Option<Previous<'_>>) -> Result<Prediction> {
        self.levels
            .iter()
            .find(|p| p.depth.shape() == image.shape())
            .cloned()
            .ok_or_else(|| Error::PredictorContract(format!("oracle has no ground truth at {:?}", image.shape())))
    }

    /// A noise-free oracle is already exact, so it asks for no propagation.
    fn guidance(&self, image: &IntensityImage, _depth: &DepthGrid) -> Option<NeighborhoodField> {
        (self.sigma == 0.0).then(|| NeighborhoodField::empty(image.width(), image.height()))
    }

    fn describe(&self) -> String {
        format!(
            "oracle(a={},b={},sigma={},seed={})",
            self.a, self.b, self.sigma, self.seed
        )
    }
}

/// Darker is farther: `1 / (epsilon + box-smoothed intensity)` with score
/// `-local intensity variance`.
///
/// Given previous-scale maps, the monocular guess is first aligned to the
/// previous depth (weighted by the previous confidence) and then blended
/// with it pixel by pixel, trusting the previous depth in proportion to its
/// confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityPredictor {
    pub epsilon: f64,
    pub radius: usize,
}

impl Default for IntensityPredictor {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            radius: 2,
        }
    }
}

/// Box mean and variance over a clipped `(2r+1)^2` window.
fn box_statistics(image: &Raster, radius: usize) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = image.shape();
    let mut mean = Vec::with_capacity(w * h);
    let mut variance = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (mut sum, mut sum_sq, mut n) = (0.0, 0.0, 0.0);
            for yy in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
                for xx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                    let v = image.get(xx, yy);
                    sum += v;
                    sum_sq += v * v;
                    n += 1.0;
                }
            }
            let m = sum / n;
            mean.push(m);
            variance.push((sum_sq / n - m * m).max(0.0));
        }
    }
    (mean, variance)
}

impl DepthPredictor for IntensityPredictor {
    fn predict(&self, image: &IntensityImage, previous: Option<Previous<'_>>) -> Result<Prediction> {
        let (w, h) = image.shape();
        if image.raster().is_empty() {
            return Err(Error::EmptyGrid { width: w, height: h });
        }
        let (smoothed, variance) = box_statistics(image.raster(), self.radius);
        let mono: Vec<f64> = smoothed.iter().map(|&s| 1.0 / (self.epsilon + s)).collect();
        let raw_confidence = Raster::new(w, h, variance.iter().map(|v| -v).collect())?;

        let depth = match previous {
            None => mono,
            Some(prev) => {
                ensure_same_shape(prev.depth, image)?;
                ensure_same_shape(prev.confidence, image)?;
                let fit = weighted_affine_fit(&mono, prev.depth.values(), prev.confidence.values())?;
                mono.iter()
                    .zip(prev.depth.values())
                    .zip(prev.confidence.values())
                    .map(|((&m, &d), &c)| (c * d + (1.0 - c) * fit.apply(m)).max(MIN_PREDICTED_DEPTH))
                    .collect()
            }
        };
        Ok(Prediction {
            depth: DepthGrid::new(w, h, depth)?,
            raw_confidence,
        })
    }

    fn describe(&self) -> String {
        format!("intensity(epsilon={},radius={})", self.epsilon, self.radius)
    }
}

/// Predictor selection for front ends and sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictorKind {
    Oracle { a: f64, b: f64, sigma: f64, seed: u64 },
    Intensity,
}

impl PredictorKind {
    /// Builds the predictor; the oracle needs ground truth.
    pub fn build(&self, gt: Option<&DepthGrid>) -> Result<Box<dyn DepthPredictor>> {
        match *self {
            PredictorKind::Oracle { a, b, sigma, seed } => {
                let gt = gt.ok_or_else(|| Error::InvalidParameter("the oracle predictor needs ground truth".into()))?;
                Ok(Box::new(AffineOraclePredictor::new(gt, a, b, sigma, seed)?))
            }
            PredictorKind::Intensity => Ok(Box::new(IntensityPredictor::default())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics_valid;
    use crate::patterns::sample_random_k;
    use crate::synthetic::{generate, SceneLayout, SceneSpec};

    fn small_scene(layout: SceneLayout, seed: u64) -> (DepthGrid, IntensityImage) {
        let spec = SceneSpec {
            width: 96,
            height: 72,
            ..SceneSpec::new(layout, seed)
        };
        generate(&spec).unwrap()
    }

    #[test]
    fn oracle_without_noise_returns_ground_truth() {
        let (gt, image) = small_scene(SceneLayout::Planes, 1);
        let oracle = AffineOraclePredictor::new(&gt, 1.0, 0.0, 0.0, 3).unwrap();
        let p = oracle.predict(&image, None).unwrap();
        assert_eq!(p.depth, gt);
        assert!(p.raw_confidence.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oracle_rejects_non_positive_gain() {
        let gt = DepthGrid::filled(8, 8, 1.0).unwrap();
        assert!(AffineOraclePredictor::new(&gt, 0.0, 0.0, 0.0, 0).is_err());
        assert!(AffineOraclePredictor::new(&gt, -1.0, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn oracle_noise_lowers_confidence() {
        let (gt, image) = small_scene(SceneLayout::SphereOnPlane, 2);
        let oracle = AffineOraclePredictor::new(&gt, 1.0, 0.0, 0.2, 5).unwrap();
        let p = oracle.predict(&image, None).unwrap();
        let conf = squash_confidence(&p.raw_confidence).unwrap();
        let noise: Vec<f64> = p
            .depth
            .values()
            .iter()
            .zip(gt.values())
            .map(|(d, g)| (d - g).abs())
            .collect();
        for i in 0..noise.len() {
            for j in [i + 1, i + 7] {
                if j < noise.len() && noise[i] > noise[j] {
                    assert!(conf.values()[i] <= conf.values()[j]);
                }
            }
        }
    }

    #[test]
    fn oracle_inversion_recovered_at_full_resolution() {
        let (gt, image) = small_scene(SceneLayout::Staircase, 4);
        let hints = sample_random_k(&gt, 200, 1).unwrap();
        let oracle = AffineOraclePredictor::new(&gt, 0.5, 1.0, 0.0, 0).unwrap();
        let result = complete(&image, &hints, &oracle, &PipelineConfig::default()).unwrap();
        assert!((result.full_scale.beta - 2.0).abs() < 1e-9);
        assert!((result.full_scale.alpha + 2.0).abs() < 1e-9);
        assert!(metrics_valid(&result.depth, &gt).unwrap().rmse < 1e-9);
    }

    #[test]
    fn no_hints_is_monocular_passthrough() {
        let (gt, image) = small_scene(SceneLayout::Planes, 6);
        let oracle = AffineOraclePredictor::new(&gt, 0.5, 1.0, 0.0, 0).unwrap();
        let result = complete(
            &image,
            &SparseDepthGrid::empty(96, 72),
            &oracle,
            &PipelineConfig::default(),
        )
        .unwrap();
        assert!(result.passthrough);
        assert_eq!(result.full_scale, AffineScale::IDENTITY);
        let expected = oracle.predict(&image, None).unwrap().depth;
        assert_eq!(result.depth, expected);
        assert!(result
            .stages
            .iter()
            .all(|s| s.scale == AffineScale::IDENTITY && s.support_count == 0));
    }

    #[test]
    fn hints_survive_end_to_end_and_per_scale() {
        let (gt, image) = small_scene(SceneLayout::SphereOnPlane, 3);
        let hints = sample_random_k(&gt, 60, 9).unwrap();
        let result = complete(
            &image,
            &hints,
            &IntensityPredictor::default(),
            &PipelineConfig::default(),
        )
        .unwrap();
        for (i, v) in hints.iter_valid() {
            assert_eq!(result.depth.values()[i], v);
        }
        let pyramid = build_pyramid(&hints).unwrap();
        for (stage, level) in result.stages.iter().zip([3, 2, 1]) {
            assert_eq!(stage.denominator, 1 << level);
            for (i, v) in pyramid.level(level).iter_valid() {
                assert_eq!(stage.depth.values()[i], v);
                assert_eq!(stage.confidence.values()[i], 1.0);
            }
        }
        assert!(result.depth.values().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn intensity_predictor_basics() {
        let p = IntensityPredictor::default();
        let flat = IntensityImage::filled(12, 10, 0.45).unwrap();
        let out = p.predict(&flat, None).unwrap();
        let v = out.depth.values()[0];
        assert!(out.depth.values().iter().all(|&d| (d - v).abs() < 1e-12));
        assert!((v - 2.0).abs() < 1e-12);

        let split =
            IntensityImage::new(20, 10, (0..200).map(|i| if i % 20 < 10 { 0.9 } else { 0.1 }).collect()).unwrap();
        let out = p.predict(&split, None).unwrap();
        assert!(out.depth.get(2, 5) < out.depth.get(17, 5));
    }

    #[test]
    fn predictor_contract_is_checked() {
        struct Broken;
        impl DepthPredictor for Broken {
            fn predict(&self, image: &IntensityImage, _: Option<Previous<'_>>) -> Result<Prediction> {
                let (w, h) = image.shape();
                Ok(Prediction {
                    depth: DepthGrid::filled(w, h, 0.0)?,
                    raw_confidence: Raster::filled(w, h, 0.0),
                })
            }
            fn describe(&self) -> String {
                "broken".into()
            }
        }
        let image = IntensityImage::filled(16, 16, 0.5).unwrap();
        let r = complete(
            &image,
            &SparseDepthGrid::empty(16, 16),
            &Broken,
            &PipelineConfig::default(),
        );
        assert!(matches!(r, Err(Error::PredictorContract(_))));
        let r = complete(
            &image,
            &SparseDepthGrid::empty(16, 8),
            &IntensityPredictor::default(),
            &PipelineConfig::default(),
        );
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn upsampled_init_option_runs() {
        let (gt, image) = small_scene(SceneLayout::Planes, 8);
        let hints = sample_random_k(&gt, 100, 2).unwrap();
        let config = PipelineConfig {
            full_res_init: FullResInit::Upsampled,
            ..Default::default()
        };
        let result = complete(&image, &hints, &IntensityPredictor::default(), &config).unwrap();
        assert!(metrics_valid(&result.depth, &gt).unwrap().rmse.is_finite());
    }
}
