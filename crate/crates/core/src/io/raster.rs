use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use super::{read_bytes, IoError};

/// Color image with channels in `[0, 1]`, row-major from the top-left corner.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f32; 3]>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize, pixels: Vec<[f32; 3]>) -> Result<Self, IoError> {
        if pixels.len() != width * height {
            return Err(IoError::LengthMismatch {
                width,
                height,
                actual: pixels.len(),
            });
        }
        let pixels = pixels
            .into_iter()
            .map(|p| p.map(|c| if c.is_finite() { c.clamp(0.0, 1.0) } else { 0.0 }))
            .collect();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixels[y * self.width + x]
    }
}

/// Dense displacement field from the reference to the next image.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFlow {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
    pub valid: Vec<bool>,
}

impl DenseFlow {
    /// Builds a field whose validity mask marks every non-finite pixel invalid.
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self, IoError> {
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(IoError::LengthMismatch {
                width,
                height,
                actual: u.len().min(v.len()),
            });
        }
        let valid = u
            .iter()
            .zip(&v)
            .map(|(a, b)| a.is_finite() && b.is_finite())
            .collect();
        Ok(Self {
            width,
            height,
            u,
            v,
            valid,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![0.0; n],
            v: vec![0.0; n],
            valid: vec![true; n],
        }
    }

    /// Displacement at pixel `(x, y)` if valid.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Option<(f64, f64)> {
        let i = y * self.width + x;
        self.valid[i].then(|| (self.u[i] as f64, self.v[i] as f64))
    }

    pub fn invalidate(&mut self, index: usize) {
        self.valid[index] = false;
        self.u[index] = f32::NAN;
        self.v[index] = f32::NAN;
    }
}

/// Per-pixel depth; valid entries are strictly positive and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub z: Vec<f32>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, z: Vec<f32>) -> Result<Self, IoError> {
        if z.len() != width * height {
            return Err(IoError::LengthMismatch {
                width,
                height,
                actual: z.len(),
            });
        }
        let valid: Vec<bool> = z.iter().map(|&d| d.is_finite() && d > 0.0).collect();
        let z = z
            .into_iter()
            .zip(&valid)
            .map(|(d, &ok)| if ok { d } else { 0.0 })
            .collect();
        Ok(Self {
            width,
            height,
            z,
            valid,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            z: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    pub fn set(&mut self, index: usize, depth: f64) {
        let d = depth as f32;
        if d.is_finite() && d > 0.0 {
            self.z[index] = d;
            self.valid[index] = true;
        } else {
            self.z[index] = 0.0;
            self.valid[index] = false;
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

pub fn decode_image_rgb(bytes: &[u8]) -> Result<ImageRGB, IoError> {
    let img = image::load_from_memory(bytes)?.to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img
        .pixels()
        .map(|p| p.0.map(|c| c as f32 / 255.0))
        .collect();
    Ok(ImageRGB {
        width: w as usize,
        height: h as usize,
        pixels,
    })
}

pub fn load_image_rgb(path: &Path) -> Result<ImageRGB, IoError> {
    decode_image_rgb(&read_bytes(path)?)
}

/// Writes an 8-bit image; the format follows the file extension.
pub fn save_image_rgb(img: &ImageRGB, path: &Path) -> Result<(), IoError> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
            let p = img.get(x as usize, y as usize);
            Rgb(p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
        });
    buf.save(path)?;
    Ok(())
}

/// Decodes a grayscale label map. Returns `(width, height, ids)`.
pub fn decode_label_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u32>), IoError> {
    let img = image::load_from_memory(bytes)?;
    let gray = img.to_luma16();
    let (w, h) = gray.dimensions();
    Ok((
        w as usize,
        h as usize,
        gray.pixels().map(|p| p.0[0] as u32).collect(),
    ))
}

pub fn load_label_png(path: &Path) -> Result<(usize, usize, Vec<u32>), IoError> {
    decode_label_png(&read_bytes(path)?)
}

pub fn encode_label_png(width: usize, height: usize, labels: &[u32]) -> Result<Vec<u8>, IoError> {
    if labels.len() != width * height {
        return Err(IoError::LengthMismatch {
            width,
            height,
            actual: labels.len(),
        });
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
            Luma([labels[y as usize * width + x as usize].min(u16::MAX as u32) as u16])
        });
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn save_label_png(
    width: usize,
    height: usize,
    labels: &[u32],
    path: &Path,
) -> Result<(), IoError> {
    super::write_bytes(path, &encode_label_png(width, height, labels)?)
}
