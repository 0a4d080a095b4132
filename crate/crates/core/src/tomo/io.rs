//! Image ingestion (binary PGM) and dense-matrix dumps (CSV and a raw
//! little-endian `f64` format with a 16-byte `PSLB` header).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

pub const PSLB_MAGIC: &[u8; 4] = b"PSLB";

/// Grayscale raster decoded from a P5 PGM file.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    /// Raw sample values, row-major.
    pub samples: Vec<f64>,
}

/// Parses a binary PGM (`P5`) with 8- or 16-bit (big-endian) samples.
pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<Raster, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("missing P5 magic".into());
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("bad header number")?;
    }
    // exactly one whitespace byte before the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err("missing separator after header".into());
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err("empty image".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    let (width, height) = (width as usize, height as usize);
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bytes_per;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(format!("expected {need} sample bytes, found {}", data.len()));
    }
    let samples = if bytes_per == 1 {
        data[..need].iter().map(|&b| b as f64).collect()
    } else {
        data[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    };
    Ok(Raster {
        width,
        height,
        maxval: maxval as u32,
        samples,
    })
}

pub fn read_pgm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path)?;
    if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1] != b'5' {
        return Err(Error::UnsupportedFormat(format!(
            "{}: only binary PGM (P5) is supported",
            path.display()
        )));
    }
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::UnsupportedFormat(format!(
            "{}: not a PGM file",
            path.display()
        )));
    }
    parse_pgm(&bytes).map_err(|reason| Error::Decode {
        path: path.to_path_buf(),
        reason,
    })
}

/// Encodes samples as P5; 16-bit when `maxval > 255`.
pub fn encode_pgm(width: usize, height: usize, maxval: u16, samples: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    for &s in samples {
        if maxval > 255 {
            out.extend_from_slice(&s.to_be_bytes());
        } else {
            out.push(s as u8);
        }
    }
    out
}

/// Loads a grayscale PGM as an `n_side x n_side` image: bicubic resampling,
/// min-max rescale to `[0, 1]`, then masking to the field of view.
pub fn load_image(path: &Path, n_side: usize) -> Result<Image> {
    if n_side == 0 {
        return Err(Error::InvalidParameter("n_side must be positive".into()));
    }
    let raster = read_pgm(path)?;
    let resampled = resample_bicubic(&raster.samples, raster.width, raster.height, n_side, n_side);
    let mut img = Image::new(n_side, resampled)?;
    img.rescale_unit();
    img.mask_to_fov();
    Ok(img)
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * a
    } else {
        0.0
    }
}

/// Normalized resampling weights from `len_in` to `len_out` samples. When
/// shrinking, the kernel is stretched by the scale factor (antialiased).
fn axis_weights(len_in: usize, len_out: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = len_in as f64 / len_out as f64;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..len_out)
        .map(|i| {
            let centre = (i as f64 + 0.5) * scale;
            let lo = ((centre - support).floor().max(0.0)) as usize;
            let hi = ((centre + support).ceil() as usize).min(len_in);
            let mut w: Vec<f64> = (lo..hi)
                .map(|j| cubic((j as f64 + 0.5 - centre) / stretch))
                .collect();
            let total: f64 = w.iter().sum();
            if total != 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            }
            (lo, w)
        })
        .collect()
}

/// Separable bicubic resampling of a row-major raster.
pub fn resample_bicubic(
    samples: &[f64],
    width: usize,
    height: usize,
    out_w: usize,
    out_h: usize,
) -> Vec<f64> {
    let wx = axis_weights(width, out_w);
    let wy = axis_weights(height, out_h);
    let mut tmp = vec![0.0; height * out_w];
    for r in 0..height {
        let row = &samples[r * width..(r + 1) * width];
        for (c, (lo, w)) in wx.iter().enumerate() {
            tmp[r * out_w + c] = w.iter().enumerate().map(|(k, wk)| wk * row[lo + k]).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (r, (lo, w)) in wy.iter().enumerate() {
        for c in 0..out_w {
            out[r * out_w + c] = w
                .iter()
                .enumerate()
                .map(|(k, wk)| wk * tmp[(lo + k) * out_w + c])
                .sum();
        }
    }
    out
}

/// Writes a row-major matrix as CSV with 17 significant digits.
pub fn write_matrix_csv(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    if values.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "{} values for {rows}x{cols}",
            values.len()
        )));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in 0..rows {
        let line = values[r * cols..(r + 1) * cols]
            .iter()
            .map(|v| format_f64(*v))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// `v` in scientific notation with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Encodes a row-major matrix: `PSLB`, u32 rows, u32 cols, u32 reserved
/// (zero), then `rows * cols` little-endian `f64`.
pub fn encode_pslb(rows: usize, cols: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "{} values for {rows}x{cols}",
            values.len()
        )));
    }
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::InvalidParameter(format!("dimension {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(16 + 8 * values.len());
    out.extend_from_slice(PSLB_MAGIC);
    out.extend_from_slice(&to_u32(rows)?.to_le_bytes());
    out.extend_from_slice(&to_u32(cols)?.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Inverse of [`encode_pslb`]: `(rows, cols, values)`.
pub fn decode_pslb(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<f64>), String> {
    if bytes.len() < 16 || &bytes[..4] != PSLB_MAGIC {
        return Err("missing PSLB header".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(4), word(8));
    let body = &bytes[16..];
    if body.len() != rows * cols * 8 {
        return Err(format!(
            "expected {} payload bytes, found {}",
            rows * cols * 8,
            body.len()
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, values))
}

pub fn write_pslb(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    fs::write(path, encode_pslb(rows, cols, values)?)?;
    Ok(())
}

pub fn read_pslb(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path)?;
    decode_pslb(&bytes).map_err(|reason| Error::Decode {
        path: path.to_path_buf(),
        reason,
    })
}
