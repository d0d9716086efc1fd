//! Loader for binary PPM (P6, RGB) and PGM (P5, grayscale) images into
//! planar pixel arrays with values scaled to [0, 1].

use anyhow::{bail, Context, Result};
use pheye_core::Image;

/// Pull the next whitespace-delimited header token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], cursor: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    if start == *cursor {
        bail!("truncated header");
    }
    Ok(&bytes[start..*cursor])
}

fn parse_number(token: &[u8]) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .with_context(|| format!("bad header number {:?}", String::from_utf8_lossy(token)))
}

/// Decode a P6/P5 byte buffer.
pub fn decode(bytes: &[u8]) -> Result<Image> {
    let mut cursor = 0usize;
    let magic = next_token(bytes, &mut cursor)?;
    let channels = match magic {
        b"P6" => 3,
        b"P5" => 1,
        other => bail!(
            "unsupported format {:?} (binary P6/P5 only)",
            String::from_utf8_lossy(other)
        ),
    };
    let width = parse_number(next_token(bytes, &mut cursor)?)?;
    let height = parse_number(next_token(bytes, &mut cursor)?)?;
    let maxval = parse_number(next_token(bytes, &mut cursor)?)?;
    if maxval == 0 || maxval > 255 {
        bail!("unsupported max value {maxval} (expected 1..=255)");
    }
    // Exactly one whitespace byte separates the header from the raster.
    cursor += 1;
    let expected = width * height * channels;
    let raster = bytes
        .get(cursor..cursor + expected)
        .with_context(|| format!("raster truncated: need {expected} bytes"))?;

    let mut image = Image::zeros(channels, height, width);
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let value = raster[(y * width + x) * channels + c] as f64 / maxval as f64;
                image.set(c, y, x, value);
            }
        }
    }
    Ok(image)
}

pub fn load(path: &std::path::Path) -> Result<Image> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes)
}

/// Encode an image back to P6/P5 (test fixtures).
#[cfg(test)]
pub fn encode(image: &Image) -> Result<Vec<u8>> {
    let magic = match image.channels {
        3 => "P6",
        1 => "P5",
        n => bail!("cannot encode {n}-channel image as PPM/PGM"),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    for y in 0..image.height {
        for x in 0..image.width {
            for c in 0..image.channels {
                let v = (image.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
                out.push(v);
            }
        }
    }
    Ok(out)
}
