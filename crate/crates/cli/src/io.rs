//! Binary file formats shared by the subcommands.
//!
//! * Image: `NLTG-IMG1\n`, ASCII `width height\n`, then `width * height`
//!   little-endian f64 values, row-major. Lossless.
//! * Sinogram: `NLTG-SIN1\n`, ASCII `n_angles n_detectors r\n`, f64 LE
//!   data row-major by angle, then the observation mask packed LSB-first
//!   into bytes. Detector spacing is 1 pixel; the image side is supplied
//!   by the consumer.
//! * Weight graph: `NLTG-WGT1\n`, ASCII `n_pixels\n`, then per pixel a
//!   u32 LE edge count followed by `(j: u32 LE, w: f64 LE)` pairs sorted
//!   by `j`.
//! * PGM export: binary P5, maxval 255, after clipping; quantization
//!   rounds half away from zero.

use std::fs;
use std::io::Write;
use std::path::Path;

use nltg_core::nonlocal::WeightGraph;
use nltg_core::radon::{ScanGeometry, Sinogram};
use nltg_core::Image;

use crate::CliError;

const IMG_MAGIC: &[u8] = b"NLTG-IMG1\n";
const SIN_MAGIC: &[u8] = b"NLTG-SIN1\n";
const WGT_MAGIC: &[u8] = b"NLTG-WGT1\n";

fn io_err(path: &Path, err: std::io::Error) -> CliError {
    CliError::Format(format!("{}: {err}", path.display()))
}

fn format_err(path: &Path, what: &str) -> CliError {
    CliError::Format(format!("{}: {what}", path.display()))
}

/// Splits one `\n`-terminated ASCII line off the front of `bytes`.
fn take_line<'a>(bytes: &'a [u8], cursor: &mut usize, path: &Path) -> Result<&'a str, CliError> {
    let rest = &bytes[*cursor..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err(path, "truncated header"))?;
    let line = core::str::from_utf8(&rest[..end])
        .map_err(|_| format_err(path, "non-ASCII header"))?;
    *cursor += end + 1;
    Ok(line)
}

fn take_f64s(bytes: &[u8], cursor: &mut usize, n: usize, path: &Path) -> Result<Vec<f64>, CliError> {
    let need = n * 8;
    if bytes.len() < *cursor + need {
        return Err(format_err(path, "truncated data section"));
    }
    let out = bytes[*cursor..*cursor + need]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    *cursor += need;
    Ok(out)
}

/// Writes the native lossless image format.
pub fn write_image(path: &Path, image: &Image) -> Result<(), CliError> {
    if !image.all_finite() {
        return Err(CliError::Numerical(format!(
            "{}: refusing to write non-finite pixel values",
            path.display()
        )));
    }
    let mut buf = Vec::with_capacity(IMG_MAGIC.len() + 32 + image.len() * 8);
    buf.extend_from_slice(IMG_MAGIC);
    buf.extend_from_slice(format!("{} {}\n", image.width(), image.height()).as_bytes());
    for v in image.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Reads the native image format back; bit-exact round trip.
pub fn read_image(path: &Path) -> Result<Image, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if !bytes.starts_with(IMG_MAGIC) {
        return Err(format_err(path, "bad magic (expected NLTG-IMG1)"));
    }
    let mut cursor = IMG_MAGIC.len();
    let dims = take_line(&bytes, &mut cursor, path)?;
    let mut parts = dims.split_whitespace();
    let width: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(path, "malformed dimension header"))?;
    let height: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(path, "malformed dimension header"))?;
    if parts.next().is_some() {
        return Err(format_err(path, "malformed dimension header"));
    }
    let data = take_f64s(&bytes, &mut cursor, width * height, path)?;
    if cursor != bytes.len() {
        return Err(format_err(path, "trailing bytes after pixel data"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(format_err(path, "non-finite pixel values"));
    }
    Image::from_data(width, height, data)
        .map_err(|_| format_err(path, "dimension/data length mismatch"))
}

/// 8-bit PGM export: clip to [0, 255], round half away from zero.
pub fn write_pgm(path: &Path, image: &Image) -> Result<(), CliError> {
    let mut buf = Vec::with_capacity(32 + image.len());
    buf.extend_from_slice(format!("P5\n{} {}\n255\n", image.width(), image.height()).as_bytes());
    for &v in image.as_slice() {
        let q = v.clamp(0.0, 255.0).round();
        buf.push(q as u8);
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Writes the sinogram format. Detector spacing must be 1 pixel (the
/// format does not carry it).
pub fn write_sinogram(path: &Path, sino: &Sinogram) -> Result<(), CliError> {
    if sino.geometry.detector_spacing != 1.0 {
        return Err(CliError::Usage(
            "sinogram format assumes unit detector spacing".into(),
        ));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(SIN_MAGIC);
    buf.extend_from_slice(
        format!(
            "{} {} {}\n",
            sino.geometry.n_angles, sino.geometry.n_detectors, sino.geometry.detector_extent
        )
        .as_bytes(),
    );
    for v in &sino.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut packed = vec![0u8; sino.mask.len().div_ceil(8)];
    for (i, &m) in sino.mask.iter().enumerate() {
        if m {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    buf.extend_from_slice(&packed);
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Reads a sinogram; the image side (not stored in the format) comes from
/// the caller.
pub fn read_sinogram(path: &Path, image_side: usize) -> Result<Sinogram, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if !bytes.starts_with(SIN_MAGIC) {
        return Err(format_err(path, "bad magic (expected NLTG-SIN1)"));
    }
    let mut cursor = SIN_MAGIC.len();
    let header = take_line(&bytes, &mut cursor, path)?;
    let mut parts = header.split_whitespace();
    let n_angles: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(path, "malformed sinogram header"))?;
    let n_detectors: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(path, "malformed sinogram header"))?;
    let extent: f64 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(path, "malformed sinogram header"))?;
    if parts.next().is_some() {
        return Err(format_err(path, "malformed sinogram header"));
    }
    let n = n_angles * n_detectors;
    let data = take_f64s(&bytes, &mut cursor, n, path)?;
    let mask_bytes = n.div_ceil(8);
    if bytes.len() != cursor + mask_bytes {
        return Err(format_err(path, "mask section has the wrong length"));
    }
    let mask: Vec<bool> = (0..n)
        .map(|i| bytes[cursor + i / 8] & (1 << (i % 8)) != 0)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(format_err(path, "non-finite sinogram values"));
    }
    let geometry = ScanGeometry {
        n_angles,
        n_detectors,
        detector_spacing: 1.0,
        detector_extent: extent,
        image_side,
    };
    Ok(Sinogram {
        geometry,
        data,
        mask,
    })
}

/// Writes the weight-graph format.
pub fn write_weights(path: &Path, graph: &WeightGraph) -> Result<(), CliError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WGT_MAGIC);
    buf.extend_from_slice(format!("{}\n", graph.n_pixels()).as_bytes());
    for i in 0..graph.n_pixels() {
        let cols = graph.row_cols(i);
        let weights = graph.row_weights(i);
        buf.extend_from_slice(&(cols.len() as u32).to_le_bytes());
        for (&j, &w) in cols.iter().zip(weights) {
            buf.extend_from_slice(&j.to_le_bytes());
            buf.extend_from_slice(&w.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Reads a weight graph, validating symmetry, ordering, and weight range.
pub fn read_weights(path: &Path) -> Result<WeightGraph, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if !bytes.starts_with(WGT_MAGIC) {
        return Err(format_err(path, "bad magic (expected NLTG-WGT1)"));
    }
    let mut cursor = WGT_MAGIC.len();
    let header = take_line(&bytes, &mut cursor, path)?;
    let n_pixels: usize = header
        .trim()
        .parse()
        .map_err(|_| format_err(path, "malformed pixel count"))?;
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n_pixels);
    for _ in 0..n_pixels {
        if bytes.len() < cursor + 4 {
            return Err(format_err(path, "truncated edge count"));
        }
        let count = u32::from_le_bytes(bytes[cursor..cursor + 4].try_into().unwrap()) as usize;
        cursor += 4;
        let need = count * 12;
        if bytes.len() < cursor + need {
            return Err(format_err(path, "truncated edge list"));
        }
        let mut row = Vec::with_capacity(count);
        for k in 0..count {
            let at = cursor + k * 12;
            let j = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            let w = f64::from_le_bytes(bytes[at + 4..at + 12].try_into().unwrap());
            row.push((j, w));
        }
        cursor += need;
        if !row.windows(2).all(|p| p[0].0 < p[1].0) {
            return Err(format_err(path, "edges not strictly sorted by column"));
        }
        rows.push(row);
    }
    if cursor != bytes.len() {
        return Err(format_err(path, "trailing bytes after edge lists"));
    }
    // Validate symmetry with bitwise-equal weights before rebuilding.
    for (i, row) in rows.iter().enumerate() {
        for &(j, w) in row {
            let back = rows
                .get(j as usize)
                .and_then(|r| r.iter().find(|&&(k, _)| k as usize == i));
            match back {
                Some(&(_, w_back)) if w_back.to_bits() == w.to_bits() => {}
                _ => return Err(format_err(path, "asymmetric edge list")),
            }
        }
    }
    let mut pairs = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        for &(j, w) in row {
            if (i as u32) < j {
                pairs.push((i as u32, j, w));
            }
        }
    }
    WeightGraph::from_pairs(n_pixels, &pairs)
        .map_err(|e| format_err(path, &format!("invalid graph: {e}")))
}

/// Writes rows of ASCII text (CSV emitters use this for determinism).
pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}
