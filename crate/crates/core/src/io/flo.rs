//! Middlebury `.flo`: `f32` magic `202021.25`, `i32` width, `i32` height,
//! then interleaved `(u, v)` `f32` pairs in row-major order. All little-endian.

use std::path::Path;

use super::{read_bytes, write_bytes, DenseFlow, IoError};

pub const FLO_MAGIC: f32 = 202021.25;

/// Default pixel cap applied by [`load_flow`].
pub const MAX_FLOW_PIXELS: usize = 1 << 26;

const HEADER_LEN: usize = 12;

pub fn decode_flo(bytes: &[u8], max_pixels: usize) -> Result<DenseFlow, IoError> {
    if bytes.len() < HEADER_LEN {
        return Err(IoError::MalformedHeader(format!(
            "file holds {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
    let magic = f32::from_le_bytes(word(0));
    if magic.to_bits() != FLO_MAGIC.to_bits() {
        return Err(IoError::MalformedHeader(format!(
            "magic {magic} does not match {FLO_MAGIC}"
        )));
    }
    let width = i32::from_le_bytes(word(4));
    let height = i32::from_le_bytes(word(8));
    if width <= 0 || height <= 0 {
        return Err(IoError::MalformedHeader(format!(
            "non-positive dimensions {width}x{height}"
        )));
    }
    let (w, h) = (width as u64, height as u64);
    let pixels = w * h;
    if pixels > max_pixels as u64 {
        return Err(IoError::DimensionOverflow {
            width: w,
            height: h,
            cap: max_pixels,
        });
    }
    let pixels = pixels as usize;
    let expected = HEADER_LEN + pixels * 8;
    if bytes.len() != expected {
        return Err(IoError::MalformedHeader(format!(
            "{width}x{height} flow needs {expected} bytes, file holds {}",
            bytes.len()
        )));
    }

    let mut u = Vec::with_capacity(pixels);
    let mut v = Vec::with_capacity(pixels);
    for pair in bytes[HEADER_LEN..].chunks_exact(8) {
        u.push(f32::from_le_bytes(pair[0..4].try_into().unwrap()));
        v.push(f32::from_le_bytes(pair[4..8].try_into().unwrap()));
    }
    DenseFlow::new(w as usize, h as usize, u, v)
}

/// Invalid pixels are written as NaN so they reload as invalid.
pub fn encode_flo(flow: &DenseFlow) -> Vec<u8> {
    let n = flow.width * flow.height;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for i in 0..n {
        let (a, b) = if flow.valid[i] {
            (flow.u[i], flow.v[i])
        } else {
            (f32::NAN, f32::NAN)
        };
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

pub fn load_flow(path: &Path) -> Result<DenseFlow, IoError> {
    load_flow_with_cap(path, MAX_FLOW_PIXELS)
}

pub fn load_flow_with_cap(path: &Path, max_pixels: usize) -> Result<DenseFlow, IoError> {
    decode_flo(&read_bytes(path)?, max_pixels)
}

pub fn save_flow(flow: &DenseFlow, path: &Path) -> Result<(), IoError> {
    write_bytes(path, &encode_flo(flow))
}
