use super::{BinaryMask, DataError, Image, Result};
use crate::float::Float;
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Parse a binary (P5) PGM header, returning (width, height, data offset).
/// Header tokens may be separated by arbitrary whitespace and `#` comments.
fn parse_header(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize)> {
    let err = |msg: &str| DataError::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(err("not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comment lines.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(err("truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(err("expected a decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are ascii");
        *field = text.parse().map_err(|_| err("header field out of range"))?;
    }
    // Exactly one whitespace byte separates the maxval from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err("missing raster separator")),
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if width == 0 || height == 0 {
        return Err(err("image dimensions must be positive"));
    }
    if maxval != 255 {
        return Err(DataError::Format(format!(
            "{}: unsupported maxval {maxval}, expected 255",
            path.display()
        )));
    }
    let expected = width * height;
    if bytes.len() - pos < expected {
        return Err(err("raster shorter than header promises"));
    }
    if bytes.len() - pos > expected {
        return Err(err("trailing bytes after raster"));
    }
    Ok((width, height, pos))
}

fn read_raster(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            DataError::MissingFile(path.display().to_string())
        } else {
            DataError::Io(e)
        }
    })?;
    let (width, height, offset) = parse_header(&bytes, path)?;
    Ok((width, height, bytes[offset..].to_vec()))
}

/// Load a grayscale PGM as a single-channel image with values in [0,1].
pub fn load_image<T: Float>(path: &Path) -> Result<Image<T>> {
    let (width, height, raster) = read_raster(path)?;
    Image::from_gray_u8(height, width, &raster)
}

/// Load a PGM as a binary mask: samples >= 128 are foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let (width, height, raster) = read_raster(path)?;
    let bits = raster.iter().map(|&s| u8::from(s >= 128)).collect();
    BinaryMask::new(height, width, bits)
}

fn write_pgm(path: &Path, width: usize, height: usize, raster: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = Vec::with_capacity(raster.len() + 32);
    write!(out, "P5\n{width} {height}\n255\n").expect("infallible vec write");
    out.extend_from_slice(raster);
    fs::write(path, out)?;
    Ok(())
}

/// Write 8-bit grayscale samples as a binary PGM.
pub fn save_image_u8(path: &Path, height: usize, width: usize, samples: &[u8]) -> Result<()> {
    if samples.len() != height * width {
        return Err(DataError::Format(format!(
            "sample length {} does not match {}x{}",
            samples.len(),
            height,
            width
        )));
    }
    write_pgm(path, width, height, samples)
}

/// Write a binary mask as a PGM with foreground 255 and background 0.
pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let raster: Vec<u8> = mask.bits().iter().map(|&b| if b == 1 { 255 } else { 0 }).collect();
    write_pgm(path, mask.width(), mask.height(), &raster)
}
