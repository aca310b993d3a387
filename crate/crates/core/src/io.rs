//! File formats.
//!
//! `DGRID/1`: one ASCII header line `DGRID <width> <height> <scale_mm_per_unit>\n`
//! followed by `width * height` little-endian `f32` values, row-major, top
//! row first. A stored value `v` means `v * scale_mm_per_unit / 1000`
//! meters; the writer always uses a scale of 1000 so stored values are
//! meters. Sparse grids use the same container with `0` for "no
//! measurement". Intensity images are stored with the same container too.
//!
//! Sparse point lists may also be given as CSV with a header row and
//! columns `x,y,depth_m`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridView, Raster, SparseDepthGrid};

pub const DGRID_MAGIC: &str = "DGRID";
/// Scale written by [`write_grid`]: one stored unit is one meter.
pub const METERS_SCALE_MM: f64 = 1000.0;

/// Parses a DGRID byte buffer into meters.
pub fn decode_grid(bytes: &[u8]) -> Result<Raster> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("missing header line".into()))?;
    let header =
        std::str::from_utf8(&bytes[..newline]).map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != DGRID_MAGIC {
        return Err(Error::MalformedHeader(format!("unexpected header {header:?}")));
    }
    let width: usize = fields[1]
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad width {:?}", fields[1])))?;
    let height: usize = fields[2]
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad height {:?}", fields[2])))?;
    let scale: f64 = fields[3]
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad scale {:?}", fields[3])))?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::MalformedHeader(format!("scale must be positive, got {scale}")));
    }

    let payload = &bytes[newline + 1..];
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| Error::MalformedHeader("dimensions overflow".into()))?;
    if !payload.len().is_multiple_of(4) || payload.len() / 4 != expected {
        return Err(Error::DimensionMismatch {
            width,
            height,
            expected,
            found: payload.len() / 4,
        });
    }

    let mut values = Vec::with_capacity(expected);
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !raw.is_finite() {
            return Err(Error::NonFinite {
                index,
                value: raw as f64,
            });
        }
        let raw = raw as f64;
        values.push(if scale == METERS_SCALE_MM {
            raw
        } else {
            raw * scale / METERS_SCALE_MM
        });
    }
    Raster::new(width, height, values)
}

/// Serializes a grid as DGRID with values rounded to `f32` meters.
pub fn encode_grid(grid: &impl GridView) -> Result<Vec<u8>> {
    let raster = grid.raster();
    if let Some((index, value)) = raster.first_non_finite() {
        return Err(Error::NonFinite { index, value });
    }
    let mut out = format!(
        "{DGRID_MAGIC} {} {} {}\n",
        raster.width(),
        raster.height(),
        METERS_SCALE_MM
    )
    .into_bytes();
    out.reserve(raster.len() * 4);
    for &v in raster.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid(&bytes)
}

pub fn write_grid(grid: &impl GridView, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_grid(grid)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads `x,y,depth_m` rows (after one header row) into a sparse grid.
pub fn read_points_csv(path: impl AsRef<Path>, width: usize, height: usize) -> Result<SparseDepthGrid> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_points_csv(file, width, height)
}

pub fn parse_points_csv(reader: impl std::io::Read, width: usize, height: usize) -> Result<SparseDepthGrid> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut points = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::MalformedPoints(e.to_string()))?;
        if record.len() != 3 {
            return Err(Error::MalformedPoints(format!(
                "row {} has {} fields, expected 3",
                line + 2,
                record.len()
            )));
        }
        let field = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|_| Error::MalformedPoints(format!("row {}: cannot parse {:?}", line + 2, &record[i])))
        };
        let (x, y, depth) = (field(0)?, field(1)?, field(2)?);
        if !depth.is_finite() {
            return Err(Error::NonFinite {
                index: line,
                value: depth,
            });
        }
        if x.fract() != 0.0 || y.fract() != 0.0 || x < 0.0 || y < 0.0 || depth < 0.0 {
            return Err(Error::MalformedPoints(format!(
                "row {}: ({x}, {y}, {depth}) is not a pixel with non-negative depth",
                line + 2
            )));
        }
        points.push((x as usize, y as usize, depth));
    }
    SparseDepthGrid::from_points(width, height, points)
}

/// Writes the valid pixels of a sparse grid as `x,y,depth_m` rows.
pub fn write_points_csv(grid: &SparseDepthGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("x,y,depth_m\n");
    for (i, depth) in grid.iter_valid() {
        out.push_str(&format!("{},{},{}\n", i % grid.width(), i / grid.width(), depth));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Binary PGM (P5, maxval 255). Zero pixels stay black; other values are
/// mapped linearly from their min..max onto 1..255, nearer is brighter.
/// For eyeballing only.
pub fn encode_pgm_preview(grid: &impl GridView) -> Vec<u8> {
    let values = grid.values();
    let (lo, hi) = values
        .iter()
        .filter(|&&v| v > 0.0 && v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(values.iter().map(|&v| {
        if !(v > 0.0 && v.is_finite()) {
            0u8
        } else if span <= 0.0 {
            255
        } else {
            (255.0 - 254.0 * (v - lo) / span).round() as u8
        }
    }));
    out
}

pub fn write_pgm_preview(grid: &impl GridView, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_pgm_preview(grid))
        .map_err(|e| Error::io(path, e))
}
