//! Raster types shared by every stage of the completion pipeline.
//!
//! All rasters are row-major, top row first, with `f64` storage. The typed
//! wrappers ([`DepthGrid`], [`SparseDepthGrid`], [`ConfidenceGrid`],
//! [`IntensityImage`]) validate their value domain on construction and are
//! immutable afterwards.
//!
//! Fractional-pixel lookups use bilinear interpolation with border clamping:
//! a coordinate outside the image is moved onto the nearest edge before the
//! four support pixels are read, so sampling near a border never mixes in
//! synthetic zeros.

use crate::error::{Error, Result};

/// Untyped finite-or-not raster. Used for unbounded score maps and as the
/// storage behind the typed grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let expected = width.checked_mul(height).ok_or(Error::EmptyGrid { width, height })?;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                width,
                height,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<(usize, f64)> {
        self.data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
            .map(|(i, &v)| (i, v))
    }

    /// Bilinear lookup with border clamping. Caller guarantees non-empty.
    #[inline]
    pub(crate) fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);

        let top_left = self.get(x0, y0);
        if fx == 0.0 && fy == 0.0 {
            return top_left;
        }
        let top = top_left + fx * (self.get(x1, y0) - top_left);
        let bottom = self.get(x0, y1) + fx * (self.get(x1, y1) - self.get(x0, y1));
        if fy == 0.0 {
            top
        } else {
            top + fy * (bottom - top)
        }
    }
}

/// Read access shared by all raster types.
pub trait GridView {
    fn raster(&self) -> &Raster;

    fn width(&self) -> usize {
        self.raster().width
    }

    fn height(&self) -> usize {
        self.raster().height
    }

    fn shape(&self) -> (usize, usize) {
        self.raster().shape()
    }

    fn values(&self) -> &[f64] {
        &self.raster().data
    }

    fn get(&self, x: usize, y: usize) -> f64 {
        self.raster().get(x, y)
    }
}

impl GridView for Raster {
    fn raster(&self) -> &Raster {
        self
    }
}

/// Errors unless both grids have the same width and height.
pub fn ensure_same_shape(a: &impl GridView, b: &impl GridView) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

macro_rules! typed_grid {
    ($(#[$meta:meta])* $name:ident, $check:expr) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Raster);

        impl $name {
            pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
                Self::from_raster(Raster::new(width, height, values)?)
            }

            pub fn from_raster(raster: Raster) -> Result<Self> {
                let check: fn(usize, f64) -> Result<()> = $check;
                for (i, &v) in raster.data.iter().enumerate() {
                    check(i, v)?;
                }
                Ok(Self(raster))
            }

            /// Skips validation; only for values produced by domain-preserving ops.
            pub(crate) fn from_raster_unchecked(raster: Raster) -> Self {
                debug_assert!(Self::from_raster(raster.clone()).is_ok());
                Self(raster)
            }

            pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
                Self::from_raster(Raster::filled(width, height, value))
            }

            pub fn into_raster(self) -> Raster {
                self.0
            }
        }

        impl GridView for $name {
            fn raster(&self) -> &Raster {
                &self.0
            }
        }

        impl TryFrom<Raster> for $name {
            type Error = Error;

            fn try_from(raster: Raster) -> Result<Self> {
                Self::from_raster(raster)
            }
        }
    };
}

fn check_finite(index: usize, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { index, value })
    }
}

fn check_unit_interval(index: usize, value: f64) -> Result<()> {
    check_finite(index, value)?;
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            index,
            value,
            expected: "[0, 1]",
        })
    }
}

fn check_non_negative(index: usize, value: f64) -> Result<()> {
    check_finite(index, value)?;
    if value >= 0.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            index,
            value,
            expected: "[0, inf)",
        })
    }
}

typed_grid!(
    /// Dense depth in meters. Values are finite and non-negative.
    DepthGrid,
    check_non_negative
);

typed_grid!(
    /// Sparse depth hints in meters. `0.0` marks a pixel without a
    /// measurement; every other value is a strictly positive measurement.
    SparseDepthGrid,
    check_non_negative
);

typed_grid!(
    /// Per-pixel reliability in `[0, 1]`.
    ConfidenceGrid,
    check_unit_interval
);

typed_grid!(
    /// Single-channel luminance in `[0, 1]`.
    IntensityImage,
    check_unit_interval
);

impl SparseDepthGrid {
    pub fn empty(width: usize, height: usize) -> Self {
        Self(Raster::filled(width, height, 0.0))
    }

    /// Builds a grid from `(x, y, depth)` triples. Later points overwrite
    /// earlier ones at the same pixel.
    pub fn from_points(
        width: usize,
        height: usize,
        points: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut data = vec![0.0; width * height];
        for (x, y, depth) in points {
            if x >= width || y >= height {
                return Err(Error::MalformedPoints(format!(
                    "point ({x}, {y}) outside {width}x{height}"
                )));
            }
            data[y * width + x] = depth;
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn is_valid(&self, index: usize) -> bool {
        self.0.data[index] != 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.0.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Fraction of pixels carrying a measurement.
    pub fn density(&self) -> f64 {
        if self.0.data.is_empty() {
            0.0
        } else {
            self.valid_count() as f64 / self.0.data.len() as f64
        }
    }

    /// `(index, depth)` for every valid pixel in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0
            .data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
    }
}

impl ConfidenceGrid {
    pub fn ones(width: usize, height: usize) -> Self {
        Self(Raster::filled(width, height, 1.0))
    }
}

impl From<DepthGrid> for SparseDepthGrid {
    fn from(grid: DepthGrid) -> Self {
        SparseDepthGrid(grid.0)
    }
}

impl From<SparseDepthGrid> for DepthGrid {
    fn from(grid: SparseDepthGrid) -> Self {
        DepthGrid(grid.0)
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        let inside = |c: f64, extent: usize| c.is_finite() && c >= 0.0 && c <= extent as f64;
        if !inside(cx, width) || !inside(cy, height) {
            return Err(Error::InvalidParameter(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Centered principal point and a focal length equal to the image width
    /// (roughly a 53 degree horizontal field of view).
    pub fn nominal(width: usize, height: usize) -> Self {
        let f = width.max(1) as f64;
        Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    /// Vertical ray angle of image row `y`, in radians; positive below the
    /// optical axis.
    pub fn elevation(&self, y: f64) -> f64 {
        (y - self.cy).atan2(self.fy)
    }
}

/// Bilinear interpolation at a fractional pixel position, clamping the
/// position to the image border first.
pub fn bilinear_sample(grid: &impl GridView, x: f64, y: f64) -> Result<f64> {
    let raster = grid.raster();
    if raster.is_empty() {
        return Err(Error::EmptyGrid {
            width: raster.width,
            height: raster.height,
        });
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sample position ({x}, {y}) is not finite"
        )));
    }
    Ok(raster.sample_clamped(x, y))
}

/// Grids that can be bilinearly resampled without leaving their value domain.
pub trait Resample: GridView + Sized {
    #[doc(hidden)]
    fn rebuild(raster: Raster) -> Self;
}

impl Resample for Raster {
    fn rebuild(raster: Raster) -> Self {
        raster
    }
}

impl Resample for DepthGrid {
    fn rebuild(raster: Raster) -> Self {
        Self::from_raster_unchecked(raster)
    }
}

impl Resample for ConfidenceGrid {
    fn rebuild(raster: Raster) -> Self {
        Self::from_raster_unchecked(raster)
    }
}

impl Resample for IntensityImage {
    fn rebuild(raster: Raster) -> Self {
        Self::from_raster_unchecked(raster)
    }
}

/// Doubles the resolution with bilinear interpolation. Output pixel `X`
/// samples the source at `X / 2`, the phase used by the sparse pyramid
/// (coarse pixel `i` sits on fine pixel `2i`).
pub fn upsample<G: Resample>(grid: &G, factor: usize) -> Result<G> {
    if factor != 2 {
        return Err(Error::InvalidParameter(format!(
            "upsampling factor must be 2, got {factor}"
        )));
    }
    upsample_to(grid, grid.width() * 2, grid.height() * 2)
}

/// Upsamples a coarse pyramid level onto the next finer level. The target
/// must satisfy `ceil(width / 2) == grid.width()` (likewise for height), so
/// odd finer dimensions round-trip through the pyramid.
pub fn upsample_to<G: Resample>(grid: &G, width: usize, height: usize) -> Result<G> {
    let src = grid.raster();
    if src.is_empty() {
        return Err(Error::EmptyGrid {
            width: src.width,
            height: src.height,
        });
    }
    if width.div_ceil(2) != src.width || height.div_ceil(2) != src.height {
        return Err(Error::InvalidParameter(format!(
            "cannot upsample {}x{} onto {width}x{height}",
            src.width, src.height
        )));
    }
    let out = Raster::from_fn(width, height, |x, y| src.sample_clamped(x as f64 * 0.5, y as f64 * 0.5));
    Ok(G::rebuild(out))
}

/// Dimensions of the next coarser pyramid level.
pub fn half_shape(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(2), height.div_ceil(2))
}

/// Plain 3x3 mean, stride 2, window centered on even source pixels and
/// clipped at the border. Intended for dense images; use
/// [`crate::pyramid::pool_sparse`] for sparse depth.
pub fn downsample_mean<G: Resample>(grid: &G) -> G {
    let src = grid.raster();
    let (w, h) = half_shape(src.width, src.height);
    let out = Raster::from_fn(w, h, |i, j| {
        let (cx, cy) = (2 * i, 2 * j);
        let mut sum = 0.0;
        let mut count = 0usize;
        for y in cy.saturating_sub(1)..=(cy + 1).min(src.height - 1) {
            for x in cx.saturating_sub(1)..=(cx + 1).min(src.width - 1) {
                sum += src.get(x, y);
                count += 1;
            }
        }
        sum / count as f64
    });
    G::rebuild(out)
}

/// Minimum and maximum over all values; `None` for an empty grid.
pub fn value_range(values: &[f64]) -> Option<(f64, f64)> {
    values.iter().fold(None, |acc, &v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn depth(width: usize, height: usize, values: &[f64]) -> DepthGrid {
        DepthGrid::new(width, height, values.to_vec()).unwrap()
    }

    #[test]
    fn constant_grid_samples_constant() {
        let g = DepthGrid::filled(5, 4, 3.0).unwrap();
        for &(x, y) in &[(0.0, 0.0), (1.3, 2.7), (4.0, 3.0), (-2.0, 9.5), (2.5, 0.5)] {
            assert_eq!(bilinear_sample(&g, x, y).unwrap(), 3.0);
        }
    }

    #[test]
    fn lattice_points_are_exact() {
        let g = DepthGrid::new(4, 7, (0..28).map(|v| v as f64 * 0.37).collect()).unwrap();
        assert_eq!(bilinear_sample(&g, 2.0, 5.0).unwrap(), g.get(2, 5));
    }

    #[test]
    fn two_pixel_midpoint() {
        let g = depth(2, 1, &[1.0, 3.0]);
        assert_eq!(bilinear_sample(&g, 0.5, 0.0).unwrap(), 2.0);
    }

    #[test]
    fn out_of_bounds_clamps_to_border() {
        let g = depth(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(bilinear_sample(&g, -5.0, -5.0).unwrap(), 1.0);
        assert_eq!(bilinear_sample(&g, 10.0, 10.0).unwrap(), 4.0);
        assert_eq!(bilinear_sample(&g, 0.5, 10.0).unwrap(), 3.5);
    }

    #[test]
    fn empty_grid_sample_errors() {
        let g = DepthGrid::new(0, 0, vec![]).unwrap();
        assert!(matches!(bilinear_sample(&g, 0.0, 0.0), Err(Error::EmptyGrid { .. })));
    }

    #[test]
    fn construction_rejects_bad_values() {
        assert!(matches!(
            DepthGrid::new(2, 1, vec![1.0, -0.5]),
            Err(Error::OutOfRange { index: 1, .. })
        ));
        assert!(matches!(
            DepthGrid::new(1, 1, vec![f64::NAN]),
            Err(Error::NonFinite { index: 0, .. })
        ));
        assert!(matches!(
            ConfidenceGrid::new(1, 1, vec![1.5]),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            DepthGrid::new(2, 2, vec![1.0; 3]),
            Err(Error::DimensionMismatch {
                expected: 4,
                found: 3,
                ..
            })
        ));
    }

    #[test]
    fn upsample_constant() {
        let g = DepthGrid::filled(3, 2, 4.5).unwrap();
        let up = upsample(&g, 2).unwrap();
        assert_eq!(up.shape(), (6, 4));
        assert!(up.values().iter().all(|&v| v == 4.5));
    }

    #[test]
    fn upsample_row_is_monotone() {
        let g = depth(2, 1, &[0.0, 1.0]);
        let up = upsample(&g, 2).unwrap();
        assert_eq!(up.shape(), (4, 2));
        let row = &up.values()[..4];
        assert_eq!(row, &[0.0, 0.5, 1.0, 1.0]);
        assert!(row.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn upsample_identity_pattern_matches_hand_weights() {
        // Source [[1, 0], [0, 1]] sampled at (X/2, Y/2) with clamping at 1.
        let g = depth(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let up = upsample(&g, 2).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 0.5, 0.0, 0.0,
            0.5, 0.5, 0.5, 0.5,
            0.0, 0.5, 1.0, 1.0,
            0.0, 0.5, 1.0, 1.0,
        ];
        assert_eq!(up.values(), &expected);
    }

    #[test]
    fn upsample_rejects_other_factors() {
        let g = DepthGrid::filled(2, 2, 1.0).unwrap();
        assert!(upsample(&g, 3).is_err());
    }

    #[test]
    fn upsample_to_odd_target() {
        let g = DepthGrid::filled(3, 2, 2.0).unwrap();
        assert_eq!(upsample_to(&g, 5, 3).unwrap().shape(), (5, 3));
        assert!(upsample_to(&g, 7, 3).is_err());
    }

    #[test]
    fn downsample_mean_dims_and_values() {
        let g = depth(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let d = downsample_mean(&g);
        assert_eq!(d.shape(), (2, 2));
        // (0,0): window x,y in 0..=1 -> 1,2,4,5
        assert_eq!(d.get(0, 0), 3.0);
        // (1,1): window x,y in 1..=2 -> 5,6,8,9
        assert_eq!(d.get(1, 1), 7.0);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(100.0, 100.0, 50.0, 40.0, 100, 80).is_ok());
        assert!(CameraIntrinsics::new(0.0, 100.0, 50.0, 40.0, 100, 80).is_err());
        assert!(CameraIntrinsics::new(100.0, 100.0, 150.0, 40.0, 100, 80).is_err());
    }

    fn grid_strategy() -> impl Strategy<Value = DepthGrid> {
        (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
            prop::collection::vec(0.0f64..50.0, w * h).prop_map(move |v| DepthGrid::new(w, h, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn sample_at_lattice_equals_index(g in grid_strategy(), fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
            let x = (fx * (g.width() - 1) as f64).round() as usize;
            let y = (fy * (g.height() - 1) as f64).round() as usize;
            prop_assert_eq!(bilinear_sample(&g, x as f64, y as f64).unwrap(), g.get(x, y));
        }

        #[test]
        fn sample_within_support_range(g in grid_strategy(), fx in -0.2f64..1.2, fy in -0.2f64..1.2) {
            let x = fx * g.width() as f64;
            let y = fy * g.height() as f64;
            let v = bilinear_sample(&g, x, y).unwrap();
            let cx = x.clamp(0.0, (g.width() - 1) as f64);
            let cy = y.clamp(0.0, (g.height() - 1) as f64);
            let (x0, y0) = (cx.floor() as usize, cy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(g.width() - 1), (y0 + 1).min(g.height() - 1));
            let support = [g.get(x0, y0), g.get(x1, y0), g.get(x0, y1), g.get(x1, y1)];
            let (lo, hi) = value_range(&support).unwrap();
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }

        #[test]
        fn upsample_preserves_extrema(g in grid_strategy()) {
            let up = upsample(&g, 2).unwrap();
            let (lo, hi) = value_range(g.values()).unwrap();
            let (ulo, uhi) = value_range(up.values()).unwrap();
            prop_assert!((lo - ulo).abs() <= 1e-6 && (hi - uhi).abs() <= 1e-6);
        }
    }
}
