//! Sparsity-aware downsampling of depth hints.
//!
//! Each coarser pixel `(i, j)` takes the mean of the *valid* (non-zero)
//! source values inside the 3x3 window centered at `(2i, 2j)`, clipped at
//! the border. A window without valid values yields `0`. Repeating the
//! pooling densifies the hints, so even a handful of points cover a large
//! part of the coarse field of view.

use crate::error::{Error, Result};
use crate::grid::{half_shape, GridView, Raster, SparseDepthGrid};

/// Number of pooled levels below full resolution (1/2, 1/4, 1/8).
pub const POOLED_LEVELS: usize = 3;
/// Smallest accepted full-resolution side length.
pub const MIN_PYRAMID_SIDE: usize = 8;

/// Halves the resolution (ceiling) with a 3x3, stride-2 valid-mean window.
pub fn pool_sparse(input: &SparseDepthGrid) -> Result<SparseDepthGrid> {
    let src = input.raster();
    if src.is_empty() {
        return Err(Error::EmptyGrid {
            width: src.width(),
            height: src.height(),
        });
    }
    Ok(pool_valid_mean(src))
}

pub(crate) fn pool_valid_mean(src: &Raster) -> SparseDepthGrid {
    let (w, h) = half_shape(src.width(), src.height());
    let out = Raster::from_fn(w, h, |i, j| {
        let (cx, cy) = (2 * i, 2 * j);
        let mut sum = 0.0;
        let mut count = 0u32;
        for y in cy.saturating_sub(1)..=(cy + 1).min(src.height() - 1) {
            for x in cx.saturating_sub(1)..=(cx + 1).min(src.width() - 1) {
                let v = src.get(x, y);
                if v != 0.0 {
                    sum += v;
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    });
    SparseDepthGrid::from_raster_unchecked(out)
}

/// Sparse hints at full, 1/2, 1/4 and 1/8 resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePyramid {
    levels: Vec<SparseDepthGrid>,
}

impl SparsePyramid {
    /// Level 0 is full resolution; level `l` is downsampled by `2^l`.
    pub fn level(&self, level: usize) -> &SparseDepthGrid {
        &self.levels[level]
    }

    pub fn levels(&self) -> &[SparseDepthGrid] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

pub fn build_pyramid(input: &SparseDepthGrid) -> Result<SparsePyramid> {
    if input.width() < MIN_PYRAMID_SIDE || input.height() < MIN_PYRAMID_SIDE {
        return Err(Error::InvalidParameter(format!(
            "pyramid input must be at least {MIN_PYRAMID_SIDE}x{MIN_PYRAMID_SIDE}, got {}x{}",
            input.width(),
            input.height()
        )));
    }
    let mut levels = Vec::with_capacity(POOLED_LEVELS + 1);
    levels.push(input.clone());
    for _ in 0..POOLED_LEVELS {
        let next = pool_sparse(levels.last().expect("non-empty"))?;
        levels.push(next);
    }
    Ok(SparsePyramid { levels })
}
