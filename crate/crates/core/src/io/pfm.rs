//! Grayscale PFM (`Pf`). Rows are stored bottom-to-top; a negative scale
//! marks little-endian data. Invalid depths are written as `0`.

use std::path::Path;

use super::{read_bytes, write_bytes, DepthMap, IoError};

const MAX_PFM_PIXELS: u64 = 1 << 28;

pub fn encode_pfm(d: &DepthMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", d.width, d.height).into_bytes();
    out.reserve(4 * d.width * d.height);
    for row in (0..d.height).rev() {
        for col in 0..d.width {
            let i = row * d.width + col;
            let z = if d.valid[i] { d.z[i] } else { 0.0 };
            out.extend_from_slice(&z.to_le_bytes());
        }
    }
    out
}

/// Reads one whitespace-delimited header token starting at `*pos`.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str, IoError> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(IoError::MalformedHeader("truncated PFM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| IoError::MalformedHeader("non-ASCII PFM header".into()))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap, IoError> {
    let mut pos = 0;
    let kind = token(bytes, &mut pos)?;
    if kind != "Pf" {
        return Err(IoError::MalformedHeader(format!(
            "expected grayscale `Pf`, found `{kind}`"
        )));
    }
    let dim = |s: &str| -> Result<u64, IoError> {
        s.parse::<u64>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| IoError::MalformedHeader(format!("bad dimension `{s}`")))
    };
    let w = dim(token(bytes, &mut pos)?)?;
    let h = dim(token(bytes, &mut pos)?)?;
    let scale_tok = token(bytes, &mut pos)?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| IoError::MalformedHeader(format!("bad scale `{scale_tok}`")))?;
    if !scale.is_finite() || scale == 0.0 {
        return Err(IoError::MalformedHeader(format!("bad scale `{scale_tok}`")));
    }
    if w.checked_mul(h).is_none_or(|n| n > MAX_PFM_PIXELS) {
        return Err(IoError::DimensionOverflow {
            width: w,
            height: h,
            cap: MAX_PFM_PIXELS as usize,
        });
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(IoError::MalformedHeader("missing raster separator".into()));
    }
    pos += 1;

    let (w, h) = (w as usize, h as usize);
    let data = &bytes[pos..];
    if data.len() != 4 * w * h {
        return Err(IoError::MalformedHeader(format!(
            "{w}x{h} raster needs {} bytes, found {}",
            4 * w * h,
            data.len()
        )));
    }
    let little = scale < 0.0;
    let mut z = vec![0.0f32; w * h];
    for (k, chunk) in data.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().unwrap();
        let value = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (file_row, col) = (k / w, k % w);
        z[(h - 1 - file_row) * w + col] = value;
    }
    DepthMap::new(w, h, z)
}

pub fn save_depth_pfm(d: &DepthMap, path: &Path) -> Result<(), IoError> {
    write_bytes(path, &encode_pfm(d))
}

pub fn load_depth_pfm(path: &Path) -> Result<DepthMap, IoError> {
    decode_pfm(&read_bytes(path)?)
}
