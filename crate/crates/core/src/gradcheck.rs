//! Central finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::eval::{loss_against, loss_confidence_gradient_against, LossConfig, ScaleTerm};
use crate::grid::{ConfidenceGrid, DepthGrid, GridView, Raster};
use crate::scale_place::{closed_form_fit, closed_form_gradients};

/// Finite-difference step for the scale fit, whose inputs are of order one
/// to ten.
pub const SCALE_FIT_STEP: f64 = 1e-4;
/// Finite-difference step for the loss, which is nearly linear in confidence.
pub const LOSS_STEP: f64 = 1e-6;
/// Floor on the denominator of [`relative_error`].
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `|a - f| / max(|a|, |f|, 1e-3)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub suite: &'static str,
    pub instances: usize,
    pub partials: usize,
    pub max_relative_error: f64,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Derivatives of the fitted `(beta, alpha)` with respect to every
/// prediction and confidence, on random well-conditioned instances.
pub fn check_scale_gradients(instances: usize, seed: u64, step: f64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut partials = 0;
    for _ in 0..instances {
        let n = rng.random_range(3..40);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..10.0)).collect();
        let beta = rng.random_range(0.3..3.0);
        let alpha = rng.random_range(-1.0..1.0);
        let s: Vec<f64> = p
            .iter()
            .map(|&v| beta * v + alpha + rng.random_range(-1.0..1.0))
            .collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
        let g = closed_form_gradients(&p, &s, &c)?;
        for k in 0..n {
            let diff = |on_pred: bool| -> Result<(f64, f64)> {
                let (mut pp, mut cp, mut pm, mut cm) = (p.clone(), c.clone(), p.clone(), c.clone());
                if on_pred {
                    pp[k] += step;
                    pm[k] -= step;
                } else {
                    cp[k] += step;
                    cm[k] -= step;
                }
                let plus = closed_form_fit(&pp, &s, &cp)?;
                let minus = closed_form_fit(&pm, &s, &cm)?;
                Ok((
                    (plus.beta - minus.beta) / (2.0 * step),
                    (plus.alpha - minus.alpha) / (2.0 * step),
                ))
            };
            let (db_dp, da_dp) = diff(true)?;
            let (db_dc, da_dc) = diff(false)?;
            worst = worst
                .max(relative_error(g.dbeta_dpred[k], db_dp))
                .max(relative_error(g.dalpha_dpred[k], da_dp))
                .max(relative_error(g.dbeta_dconf[k], db_dc))
                .max(relative_error(g.dalpha_dconf[k], da_dc));
            partials += 4;
        }
    }
    Ok(GradcheckReport {
        suite: "scale_fit",
        instances,
        partials,
        max_relative_error: worst,
    })
}

/// Derivative of the multi-scale loss with respect to every confidence.
pub fn check_loss_gradient(instances: usize, seed: u64, step: f64, config: &LossConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut partials = 0;
    for _ in 0..instances {
        let (w, h) = (rng.random_range(2..10), rng.random_range(2..10));
        let scale = rng.random_range(1..4);
        let target = DepthGrid::from_raster(Raster::from_fn(w, h, |_, _| rng.random_range(0.5..10.0)))?;
        let depth = DepthGrid::from_raster(Raster::from_fn(w, h, |x, y| {
            (target.get(x, y) + rng.random_range(-1.5..1.5)).max(0.0)
        }))?;
        let conf = ConfidenceGrid::from_raster(Raster::from_fn(w, h, |_, _| rng.random_range(0.1..0.9)))?;
        let targets = vec![target; scale + 1];
        let analytic = loss_confidence_gradient_against(
            &[ScaleTerm {
                scale,
                depth: &depth,
                confidence: Some(&conf),
            }],
            &targets,
            config,
        )?;
        for i in 0..w * h {
            let eval = |delta: f64| -> Result<f64> {
                let mut values = conf.values().to_vec();
                values[i] += delta;
                let bumped = ConfidenceGrid::new(w, h, values)?;
                loss_against(
                    &[ScaleTerm {
                        scale,
                        depth: &depth,
                        confidence: Some(&bumped),
                    }],
                    &targets,
                    config,
                )
            };
            let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
            worst = worst.max(relative_error(analytic[0][i], numeric));
            partials += 1;
        }
    }
    Ok(GradcheckReport {
        suite: "loss_confidence",
        instances,
        partials,
        max_relative_error: worst,
    })
}
