//! Binary PGM (P5) codec, the only image format the tools speak. 8-bit
//! only; pixel p maps to p / 255 on decode and values are clamped to
//! [0, 1] and rounded on encode.

use crate::error::{Error, Result};
use crate::image::ImageVector;

/// Parses a binary P5 PGM with maxval 255 into values in [0, 1].
pub fn decode_pgm(bytes: &[u8]) -> Result<ImageVector> {
    let mut pos = 0usize;

    fn next_token(bytes: &[u8], pos: &mut usize) -> Result<Vec<u8>> {
        // Skip whitespace and '#' comments, then take one token.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::ImageFormat("truncated header".into()));
        }
        Ok(bytes[start..*pos].to_vec())
    }

    fn parse_usize(token: &[u8], what: &str) -> Result<usize> {
        std::str::from_utf8(token)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::ImageFormat(format!("bad {what} field")))
    }

    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::ImageFormat(format!(
            "magic is {:?}, expected \"P5\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let width = parse_usize(&next_token(bytes, &mut pos)?, "width")?;
    let height = parse_usize(&next_token(bytes, &mut pos)?, "height")?;
    let maxval = parse_usize(&next_token(bytes, &mut pos)?, "maxval")?;
    if maxval != 255 {
        return Err(Error::ImageFormat(format!(
            "maxval {maxval} unsupported, only 8-bit (255) images are handled"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::ImageFormat("missing raster separator".into()));
    }
    pos += 1;

    let n = width * height;
    let raster = &bytes[pos..];
    if raster.len() < n {
        return Err(Error::ImageFormat(format!(
            "raster holds {} bytes, expected {n}",
            raster.len()
        )));
    }
    let data = raster[..n].iter().map(|&b| f64::from(b) / 255.0).collect();
    ImageVector::new(height, width, data)
}

/// Encodes values to a binary P5 PGM, clamping to [0, 1] first.
pub fn encode_pgm(img: &ImageVector) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}
