//! Binary PGM (P5) and PPM (P6) image files with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::sampler::Image;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum PpmError {
    #[error("image i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PNM header: {0}")]
    Header(String),
    #[error("unsupported maxval {0} (only 1..=255)")]
    MaxVal(u32),
    #[error("pixel data truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn token(bytes: &[u8], pos: &mut usize) -> Result<String, PpmError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(PpmError::Header("unexpected end of header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32, PpmError> {
    let t = token(bytes, pos)?;
    t.parse()
        .map_err(|_| PpmError::Header(format!("{what} {t:?} is not a number")))
}

/// Decodes P5 (one channel) or P6 (three channels) into `[0, 1]` values.
pub fn decode(bytes: &[u8]) -> Result<Image<f32>, PpmError> {
    let mut pos = 0;
    let channels = match token(bytes, &mut pos)?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(PpmError::Header(format!(
                "magic {other:?}, expected P5 or P6"
            )))
        }
    };
    let width = number(bytes, &mut pos, "width")? as usize;
    let height = number(bytes, &mut pos, "height")? as usize;
    let maxval = number(bytes, &mut pos, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(PpmError::MaxVal(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PpmError::Header(format!("empty image {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height * channels;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < n {
        return Err(PpmError::Truncated {
            expected: n,
            actual: raster.len(),
        });
    }
    let maxval = maxval as f32;
    let hw = width * height;
    let mut data = vec![0.0f32; n];
    for k in 0..hw {
        for c in 0..channels {
            data[c * hw + k] = f32::from(raster[k * channels + c]) / maxval;
        }
    }
    let t = Tensor::from_vec(&[channels, height, width], data).expect("raster size");
    Ok(Image::new(t).expect("one or three channels"))
}

/// Encodes as P5 or P6 by channel count; values are clamped to `[0, 1]`
/// and rounded.
pub fn encode(img: &Image<f32>) -> Vec<u8> {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let hw = h * w;
    let src = img.tensor().data();
    out.reserve(c * hw);
    for k in 0..hw {
        for ch in 0..c {
            out.push((src[ch * hw + k].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn read(path: impl AsRef<Path>) -> Result<Image<f32>, PpmError> {
    decode(&fs::read(path)?)
}

pub fn write(path: impl AsRef<Path>, img: &Image<f32>) -> Result<(), PpmError> {
    fs::write(path, encode(img))?;
    Ok(())
}
