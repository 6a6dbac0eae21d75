use std::path::Path;

use serde_json::Value;

use super::{read_bytes, write_bytes, IoError};
use crate::camera::Intrinsics;

pub fn parse_intrinsics(text: &str) -> Result<Intrinsics, IoError> {
    let value: Value = serde_json::from_str(text)?;
    let obj = value.as_object().ok_or(IoError::InvalidField {
        field: "intrinsics",
        expected: "JSON object",
    })?;
    let real = |key: &'static str| -> Result<f64, IoError> {
        obj.get(key)
            .ok_or(IoError::MissingField(key))?
            .as_f64()
            .ok_or(IoError::InvalidField {
                field: key,
                expected: "number",
            })
    };
    let size = |key: &'static str| -> Result<usize, IoError> {
        let v = obj.get(key).ok_or(IoError::MissingField(key))?;
        v.as_u64()
            .or_else(|| {
                v.as_f64()
                    .filter(|f| f.fract() == 0.0 && *f >= 0.0 && *f < 1e12)
                    .map(|f| f as u64)
            })
            .map(|n| n as usize)
            .ok_or(IoError::InvalidField {
                field: key,
                expected: "non-negative integer",
            })
    };
    let k = Intrinsics {
        fx: real("fx")?,
        fy: real("fy")?,
        cx: real("cx")?,
        cy: real("cy")?,
        width: size("width")?,
        height: size("height")?,
    };
    k.validate()?;
    Ok(k)
}

pub fn encode_intrinsics(k: &Intrinsics) -> String {
    let mut s = serde_json::to_string_pretty(k).expect("intrinsics serialize");
    s.push('\n');
    s
}

pub fn load_intrinsics(path: &Path) -> Result<Intrinsics, IoError> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| IoError::InvalidField {
        field: "intrinsics",
        expected: "UTF-8 text",
    })?;
    parse_intrinsics(text)
}

pub fn save_intrinsics(k: &Intrinsics, path: &Path) -> Result<(), IoError> {
    write_bytes(path, encode_intrinsics(k).as_bytes())
}
