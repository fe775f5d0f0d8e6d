//! Binary PGM (P5) reader for single-image prediction input.
//!
//! Accepted layout: `P5`, whitespace, width, whitespace, height, whitespace,
//! maxval 255, one whitespace byte, then width*height raw bytes. `#` comments
//! are allowed inside the header.

use std::fs;
use std::path::Path;

use thiserror::Error;

use htrc_core::dataset::RawImages;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("unsupported PGM variant {0}: only binary P5 is supported")]
    UnsupportedVariant(String),
    #[error("not a PGM file (missing P5 magic)")]
    NotPgm,
    #[error("malformed PGM header: {0}")]
    Header(String),
    #[error("unsupported max value {0}, expected 255")]
    MaxValue(u32),
    #[error("truncated pixel data: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    // Skip whitespace and # comments.
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
    if *pos > start {
        Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    } else {
        None
    }
}

/// Parse a P5 PGM into a single-image `RawImages` stack.
pub fn parse_pgm(bytes: &[u8]) -> Result<RawImages, PgmError> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or(PgmError::NotPgm)?;
    match magic.as_str() {
        "P5" => {}
        other if other.len() == 2 && other.starts_with('P') => {
            return Err(PgmError::UnsupportedVariant(other.to_string()))
        }
        _ => return Err(PgmError::NotPgm),
    }
    let mut dim = |name: &str| -> Result<usize, PgmError> {
        next_token(bytes, &mut pos)
            .ok_or_else(|| PgmError::Header(format!("missing {name}")))?
            .parse::<usize>()
            .map_err(|_| PgmError::Header(format!("non-numeric {name}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let maxval = dim("max value")? as u32;
    if maxval != 255 {
        return Err(PgmError::MaxValue(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(PgmError::Header(
            "missing separator before pixel data".into(),
        ));
    }
    pos += 1;
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| PgmError::Header("width*height overflows".into()))?;
    let actual = bytes.len() - pos;
    if actual != expected {
        return Err(PgmError::Truncated { expected, actual });
    }
    Ok(RawImages {
        count: 1,
        height,
        width,
        pixels: bytes[pos..].to_vec(),
    })
}

pub fn read_pgm(path: &Path) -> Result<RawImages, PgmError> {
    let bytes = fs::read(path).map_err(|e| PgmError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_pgm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
        assert_eq!(pixels.len(), width * height);
        let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
        out.extend_from_slice(pixels);
        out
    }

    #[test]
    fn round_trips_p5() {
        let pixels: Vec<u8> = (0..12).collect();
        let encoded = encode_pgm(4, 3, &pixels);
        let parsed = parse_pgm(&encoded).unwrap();
        assert_eq!((parsed.width, parsed.height, parsed.count), (4, 3, 1));
        assert_eq!(parsed.pixels, pixels);
    }

    #[test]
    fn rejects_ascii_p2_naming_p5() {
        let err = parse_pgm(b"P2\n2 2\n255\n0 1 2 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("P2") && msg.contains("P5"), "{msg}");
    }

    #[test]
    fn rejects_non_pgm() {
        assert!(matches!(parse_pgm(b"hello"), Err(PgmError::NotPgm)));
    }

    #[test]
    fn rejects_wrong_maxval() {
        assert!(matches!(
            parse_pgm(b"P5\n2 2\n65535\n\0\0\0\0"),
            Err(PgmError::MaxValue(65535))
        ));
    }

    #[test]
    fn rejects_truncated_raster() {
        assert!(matches!(
            parse_pgm(b"P5\n2 2\n255\n\0\0"),
            Err(PgmError::Truncated {
                expected: 4,
                actual: 2
            })
        ));
    }

    #[test]
    fn header_comments_are_skipped() {
        let parsed = parse_pgm(b"P5\n# made by hand\n2 1\n255\n\x10\x20").unwrap();
        assert_eq!(parsed.pixels, vec![0x10, 0x20]);
    }
}
