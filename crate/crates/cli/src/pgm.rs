//! Binary 8-bit grayscale PGM (P5).

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<u8>,
}

pub fn write_pgm(img: &Gray8) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Reads P5 with maxval up to 255; `#` comments in the header are allowed.
pub fn read_pgm(bytes: &[u8]) -> Result<Gray8> {
    let bad = |why: &str| CliError::Data(format!("pgm: {why}"));
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(bad("not a P5 file"));
    }
    let mut num = |what: &str| -> Result<usize> { token()?.parse().map_err(|_| bad(&format!("bad {what}"))) };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(bad(&format!("maxval {maxval} unsupported")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let body = pos + 1;
    let n = width * height;
    if bytes.len() < body + n {
        return Err(bad(&format!(
            "expected {n} pixels, found {}",
            bytes.len().saturating_sub(body)
        )));
    }
    Ok(Gray8 {
        width,
        height,
        pixels: bytes[body..body + n].to_vec(),
    })
}

/// Linear min-max window onto 0..=255; a constant slice is all zeros.
pub fn window_to_u8(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_comment() {
        let img = Gray8 {
            width: 3,
            height: 2,
            pixels: vec![0, 10, 20, 30, 40, 255],
        };
        assert_eq!(read_pgm(&write_pgm(&img)).unwrap(), img);
        let mut commented = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        commented.extend_from_slice(&img.pixels);
        assert_eq!(read_pgm(&commented).unwrap(), img);
        assert!(read_pgm(b"P5\n3 2\n255\n\x00").is_err());
        assert!(read_pgm(b"P2\n1 1\n255\n0").is_err());
    }

    #[test]
    fn window_spans_full_range() {
        assert_eq!(window_to_u8(&[1.0, 2.0, 3.0]), vec![0, 128, 255]);
        assert_eq!(window_to_u8(&[0.5, 0.5]), vec![0, 0]);
    }
}
