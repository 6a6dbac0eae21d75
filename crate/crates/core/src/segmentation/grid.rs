use super::{SegmentationError, SuperpixelPartition};

/// Column and row counts of a near-square tiling with about `target` cells.
///
/// Among tilings whose cell count is within `2 * ceil(sqrt(target))` of the
/// request, picks the one whose cells are closest to square.
pub fn grid_shape(width: usize, height: usize, target: usize) -> (usize, usize) {
    let tolerance = 2 * (target as f64).sqrt().ceil() as usize;
    let mut best: Option<((bool, f64, usize), (usize, usize))> = None;
    for cols in 1..=width.min(target) {
        let rows = ((target as f64 / cols as f64).round() as usize).clamp(1, height);
        let n = cols * rows;
        let miss = n.abs_diff(target);
        let aspect = ((width as f64 / cols as f64) / (height as f64 / rows as f64))
            .ln()
            .abs();
        let key = (miss > tolerance, aspect, miss);
        let better = match &best {
            None => true,
            Some((b, _)) => {
                (key.0, key.1, key.2)
                    .partial_cmp(&(b.0, b.1, b.2))
                    .is_some_and(|o| o.is_lt())
            }
        };
        if better {
            best = Some((key, (cols, rows)));
        }
    }
    best.map(|(_, shape)| shape).unwrap_or((1, 1))
}

/// Regular near-square tiling of a `width x height` image.
pub fn grid_segment(
    width: usize,
    height: usize,
    target_n: usize,
) -> Result<SuperpixelPartition, SegmentationError> {
    let pixels = width * height;
    if target_n == 0 || target_n > pixels {
        return Err(SegmentationError::DegenerateRequest {
            requested: target_n,
            pixels,
        });
    }
    let (cols, rows) = grid_shape(width, height, target_n);
    let labels = grid_labels(width, height, cols, rows);
    SuperpixelPartition::from_labels(width, height, labels)
}

pub fn grid_labels(width: usize, height: usize, cols: usize, rows: usize) -> Vec<u32> {
    let mut labels = vec![0u32; width * height];
    for y in 0..height {
        let row = y * rows / height;
        for x in 0..width {
            let col = x * cols / width;
            labels[y * width + x] = (row * cols + col) as u32;
        }
    }
    labels
}
