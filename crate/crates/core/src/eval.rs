//! Error metrics, the multi-scale training loss and density sweeps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{ensure_same_shape, ConfidenceGrid, DepthGrid, GridView, SparseDepthGrid};
use crate::patterns::{sample_pattern, subsample_lidar_lines, Pattern, PatternSpec};
use crate::pipeline::{complete, CompletionResult, PipelineConfig, PredictorKind};
use crate::pyramid::pool_valid_mean;
use crate::synthetic::{generate, lidar_lines_from_gt, SceneSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    /// Meters.
    pub rmse: f64,
    /// Meters.
    pub mae: f64,
    pub rel: f64,
    /// Evaluated pixels.
    pub n: usize,
}

/// RMSE, MAE and REL over the masked pixels.
pub fn metrics(pred: &DepthGrid, gt: &DepthGrid, mask: &[bool]) -> Result<MetricReport> {
    ensure_same_shape(pred, gt)?;
    if mask.len() != gt.values().len() {
        return Err(Error::DimensionMismatch {
            width: gt.width(),
            height: gt.height(),
            expected: gt.values().len(),
            found: mask.len(),
        });
    }
    let (mut sq, mut abs, mut rel, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (i, ((&d, &g), _)) in pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(mask)
        .enumerate()
        .filter(|(_, (_, &m))| m)
    {
        if g == 0.0 {
            return Err(Error::ZeroGroundTruth { index: i });
        }
        let e = (d - g).abs();
        sq += e * e;
        abs += e;
        rel += e / g;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let count = n as f64;
    Ok(MetricReport {
        rmse: (sq / count).sqrt(),
        mae: abs / count,
        rel: rel / count,
        n,
    })
}

/// [`metrics`] over every pixel with positive ground truth.
pub fn metrics_valid(pred: &DepthGrid, gt: &DepthGrid) -> Result<MetricReport> {
    let mask: Vec<bool> = gt.values().iter().map(|&g| g > 0.0).collect();
    metrics(pred, gt, &mask)
}

pub const DEFAULT_GAMMA: f64 = 0.4;
pub const DEFAULT_ETA: f64 = 0.1;
/// Regularizer weight used for outdoor LiDAR data.
pub const KITTI_ETA: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Per-scale decay, in `(0, 1]`.
    pub gamma: f64,
    /// Weight of the `-ln C` regularizer.
    pub eta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            eta: DEFAULT_ETA,
        }
    }
}

impl LossConfig {
    pub fn kitti() -> Self {
        Self {
            eta: KITTI_ETA,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eta must be non-negative, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// One supervised scale: `scale` 0 is full resolution, `s` is `1/2^s`.
/// Full resolution has no confidence; `None` means confidence 1.
#[derive(Debug, Clone, Copy)]
pub struct ScaleTerm<'a> {
    pub scale: usize,
    pub depth: &'a DepthGrid,
    pub confidence: Option<&'a ConfidenceGrid>,
}

/// Ground truth at full resolution and `levels` pooled scales.
pub fn ground_truth_pyramid(gt: &DepthGrid, levels: usize) -> Vec<DepthGrid> {
    let mut out = vec![gt.clone()];
    for _ in 0..levels {
        let next = pool_valid_mean(out.last().expect("non-empty").raster());
        out.push(DepthGrid::from(next));
    }
    out
}

struct Checked<'a> {
    term: ScaleTerm<'a>,
    target: &'a DepthGrid,
    weight: f64,
    count: usize,
}

fn check_terms<'a>(terms: &[ScaleTerm<'a>], targets: &'a [DepthGrid], config: &LossConfig) -> Result<Vec<Checked<'a>>> {
    config.validate()?;
    terms
        .iter()
        .map(|term| {
            let target = targets
                .get(term.scale)
                .ok_or_else(|| Error::InvalidParameter(format!("no ground truth for scale {}", term.scale)))?;
            ensure_same_shape(term.depth, target)?;
            if let Some(conf) = term.confidence {
                ensure_same_shape(conf, target)?;
                if let Some(index) = conf.values().iter().position(|&c| c <= 0.0) {
                    return Err(Error::NonPositiveConfidence {
                        index,
                        value: conf.values()[index],
                    });
                }
                if term.scale == 0 && conf.values().iter().any(|&c| c != 1.0) {
                    return Err(Error::InvalidParameter(
                        "full-resolution confidence is fixed at 1".into(),
                    ));
                }
            }
            let count = target.values().iter().filter(|&&g| g > 0.0).count();
            if count == 0 {
                return Err(Error::EmptyMask);
            }
            Ok(Checked {
                term: *term,
                target,
                weight: config.gamma.powi(term.scale as i32) / count as f64,
                count,
            })
        })
        .collect()
}

#[inline]
fn confidence_at(term: &ScaleTerm<'_>, i: usize) -> f64 {
    term.confidence.map_or(1.0, |c| c.values()[i])
}

#[inline]
fn l1_l2(d: f64, g: f64) -> f64 {
    let e = (d - g).abs();
    e + e * e
}

/// Multi-scale loss against explicit per-scale targets (`targets[s]` for
/// scale `s`). Only pixels with positive target contribute.
pub fn loss_against(terms: &[ScaleTerm<'_>], targets: &[DepthGrid], config: &LossConfig) -> Result<f64> {
    let checked = check_terms(terms, targets, config)?;
    let mut total = 0.0;
    for c in &checked {
        let mut sum = 0.0;
        for (i, (&d, &g)) in c.term.depth.values().iter().zip(c.target.values()).enumerate() {
            if g > 0.0 {
                let conf = confidence_at(&c.term, i);
                sum += conf * l1_l2(d, g) - config.eta * conf.ln();
            }
        }
        total += c.weight * sum;
    }
    Ok(total)
}

/// `dL/dC` per pixel of each term, zero where the target is invalid.
pub fn loss_confidence_gradient_against(
    terms: &[ScaleTerm<'_>],
    targets: &[DepthGrid],
    config: &LossConfig,
) -> Result<Vec<Vec<f64>>> {
    let checked = check_terms(terms, targets, config)?;
    Ok(checked
        .iter()
        .map(|c| {
            debug_assert!(c.count > 0);
            c.term
                .depth
                .values()
                .iter()
                .zip(c.target.values())
                .enumerate()
                .map(|(i, (&d, &g))| {
                    if g > 0.0 {
                        c.weight * (l1_l2(d, g) - config.eta / confidence_at(&c.term, i))
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect())
}

fn max_scale(terms: &[ScaleTerm<'_>]) -> usize {
    terms.iter().map(|t| t.scale).max().unwrap_or(0)
}

/// Multi-scale loss with targets pooled from full-resolution ground truth.
pub fn loss(terms: &[ScaleTerm<'_>], gt: &DepthGrid, config: &LossConfig) -> Result<f64> {
    loss_against(terms, &ground_truth_pyramid(gt, max_scale(terms)), config)
}

pub fn loss_confidence_gradient(terms: &[ScaleTerm<'_>], gt: &DepthGrid, config: &LossConfig) -> Result<Vec<Vec<f64>>> {
    loss_confidence_gradient_against(terms, &ground_truth_pyramid(gt, max_scale(terms)), config)
}

/// Supervision terms of a completion run: full resolution after the
/// unweighted scale step, then every scale-and-place stage before placement.
pub fn supervision_terms(result: &CompletionResult) -> Vec<ScaleTerm<'_>> {
    let mut terms = vec![ScaleTerm {
        scale: 0,
        depth: &result.full_scaled,
        confidence: None,
    }];
    for stage in result.stages.iter().rev() {
        terms.push(ScaleTerm {
            scale: stage.denominator.trailing_zeros() as usize,
            depth: &stage.scaled,
            confidence: Some(&stage.predicted_confidence),
        });
    }
    terms
}

/// Inputs of a density sweep. Every pattern is run on every scene with every
/// seed; the seed drives pattern sampling and predictor noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub scenes: Vec<SceneSpec>,
    pub patterns: Vec<Pattern>,
    pub predictor: PredictorKind,
    pub seeds: Vec<u64>,
    pub pipeline: PipelineConfig,
}

/// One `(pattern, seed)` cell, averaged over the scene suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub pattern: String,
    /// Mean hint count per scene.
    pub density: usize,
    pub seed: u64,
    pub rmse: f64,
    pub mae: f64,
    pub rel: f64,
    /// Evaluated pixels over all scenes.
    pub n: usize,
}

/// Seed-averaged metrics of one pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub pattern: String,
    pub density: f64,
    pub rmse: f64,
    pub mae: f64,
    pub rel: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

fn hints_for(pattern: &Pattern, gt: &DepthGrid, scene: &SceneSpec, seed: u64) -> Result<SparseDepthGrid> {
    match *pattern {
        Pattern::LidarLines {
            total_lines,
            kept_lines,
        } => {
            let intrinsics = scene.intrinsics();
            let scan = lidar_lines_from_gt(gt, total_lines, &intrinsics)?;
            subsample_lidar_lines(&scan, &intrinsics, total_lines, kept_lines, seed)
        }
        _ => sample_pattern(gt, &PatternSpec::new(*pattern, seed)),
    }
}

/// Label of a pattern without its seed, e.g. `random_k:k=500`.
pub fn pattern_label(pattern: &Pattern) -> String {
    pattern.to_string()
}

/// Runs the pipeline for every scene, pattern and seed.
pub fn density_sweep(config: &SweepConfig) -> Result<SweepResult> {
    if config.seeds.is_empty() {
        return Err(Error::InvalidParameter("a sweep needs at least one seed".into()));
    }
    if config.scenes.is_empty() || config.patterns.is_empty() {
        return Err(Error::InvalidParameter(
            "a sweep needs at least one scene and one pattern".into(),
        ));
    }
    for pattern in &config.patterns {
        pattern.validate()?;
    }
    let scenes = config
        .scenes
        .iter()
        .map(|spec| {
            spec.validate()?;
            generate(spec)
        })
        .collect::<Result<Vec<_>>>()?;

    let scene_count = scenes.len();
    let cells: Vec<(usize, u64, usize)> = (0..config.patterns.len())
        .flat_map(|p| {
            config
                .seeds
                .iter()
                .flat_map(move |&seed| (0..scene_count).map(move |s| (p, seed, s)))
        })
        .collect();
    let runs = cells
        .par_iter()
        .map(|&(p, seed, s)| {
            let (gt, image) = &scenes[s];
            let hints = hints_for(&config.patterns[p], gt, &config.scenes[s], seed)?;
            let predictor = match config.predictor {
                PredictorKind::Oracle { a, b, sigma, .. } => PredictorKind::Oracle { a, b, sigma, seed },
                kind => kind,
            }
            .build(Some(gt))?;
            let result = complete(image, &hints, predictor.as_ref(), &config.pipeline)?;
            Ok((hints.valid_count(), metrics_valid(&result.depth, gt)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let per_cell = scenes.len();
    let rows: Vec<SweepRow> = runs
        .chunks(per_cell)
        .zip(cells.chunks(per_cell))
        .map(|(chunk, cell)| {
            let (p, seed, _) = cell[0];
            let k = chunk.len() as f64;
            let mean = |f: fn(&MetricReport) -> f64| chunk.iter().map(|(_, r)| f(r)).sum::<f64>() / k;
            SweepRow {
                pattern: pattern_label(&config.patterns[p]),
                density: (chunk.iter().map(|(d, _)| *d as f64).sum::<f64>() / k).round() as usize,
                seed,
                rmse: mean(|r| r.rmse),
                mae: mean(|r| r.mae),
                rel: mean(|r| r.rel),
                n: chunk.iter().map(|(_, r)| r.n).sum(),
            }
        })
        .collect();

    let mut groups: BTreeMap<usize, Vec<&SweepRow>> = BTreeMap::new();
    let per_pattern = config.seeds.len();
    for (i, row) in rows.iter().enumerate() {
        groups.entry(i / per_pattern).or_default().push(row);
    }
    let summary = groups
        .into_values()
        .map(|group| {
            let k = group.len() as f64;
            SweepSummary {
                pattern: group[0].pattern.clone(),
                density: group.iter().map(|r| r.density as f64).sum::<f64>() / k,
                rmse: group.iter().map(|r| r.rmse).sum::<f64>() / k,
                mae: group.iter().map(|r| r.mae).sum::<f64>() / k,
                rel: group.iter().map(|r| r.rel).sum::<f64>() / k,
                runs: group.len(),
            }
        })
        .collect();
    Ok(SweepResult { rows, summary })
}

/// CSV with header `pattern,density,seed,rmse,mae,rel,n`.
pub fn write_sweep_csv(rows: &[SweepRow], writer: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for row in rows {
        out.serialize(row).map_err(|e| Error::io("<sweep csv>", e.into()))?;
    }
    out.flush().map_err(|e| Error::io("<sweep csv>", e))?;
    Ok(())
}

pub fn save_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_sweep_csv(rows, std::io::BufWriter::new(file))
}
