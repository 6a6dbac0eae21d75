use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SegmentationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pixel {
    pub x: usize,
    pub y: usize,
}

impl Pixel {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn coords(&self) -> (f64, f64) {
        (self.x as f64, self.y as f64)
    }
}

/// Superpixel label map over the reference image plus the per-superpixel
/// pixel sets the energy terms iterate over.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelPartition {
    pub width: usize,
    pub height: usize,
    /// Row-major superpixel id of every pixel.
    pub labels: Vec<u32>,
    pub count: usize,
    /// Mean pixel position of each superpixel.
    pub centroids: Vec<[f64; 2]>,
    /// Member pixel nearest to the centroid.
    pub anchors: Vec<Pixel>,
    /// Member pixels with at least one 4-neighbour in another superpixel.
    pub boundaries: Vec<Vec<Pixel>>,
    /// All member pixels in row-major order.
    pub interiors: Vec<Vec<Pixel>>,
    /// `(i, k)` -> boundary pixels of `i` that 4-touch superpixel `k`.
    pub shared_boundary: BTreeMap<(usize, usize), Vec<Pixel>>,
}

const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

impl SuperpixelPartition {
    /// Builds a partition from dense ids: every id in `0..N` must be used.
    pub fn from_labels(
        width: usize,
        height: usize,
        labels: Vec<u32>,
    ) -> Result<Self, SegmentationError> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(SegmentationError::SizeMismatch {
                width,
                height,
                actual: labels.len(),
            });
        }
        let count = labels.iter().copied().max().unwrap() as usize + 1;
        let mut interiors = vec![Vec::new(); count];
        for y in 0..height {
            for x in 0..width {
                interiors[labels[y * width + x] as usize].push(Pixel::new(x, y));
            }
        }
        if let Some(empty) = interiors.iter().position(Vec::is_empty) {
            return Err(SegmentationError::EmptySuperpixel(empty));
        }

        let centroids: Vec<[f64; 2]> = interiors
            .iter()
            .map(|px| {
                let n = px.len() as f64;
                let (sx, sy) = px
                    .iter()
                    .fold((0.0, 0.0), |(a, b), p| (a + p.x as f64, b + p.y as f64));
                [sx / n, sy / n]
            })
            .collect();
        let anchors = interiors
            .iter()
            .zip(&centroids)
            .map(|(px, c)| nearest_member(px, c))
            .collect();

        let mut boundaries = vec![Vec::new(); count];
        let mut shared_boundary: BTreeMap<(usize, usize), Vec<Pixel>> = BTreeMap::new();
        for y in 0..height {
            for x in 0..width {
                let own = labels[y * width + x] as usize;
                let mut touched: [usize; 4] = [usize::MAX; 4];
                let mut n_touched = 0;
                for (dx, dy) in NEIGHBOURS {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                        continue;
                    }
                    let other = labels[ny as usize * width + nx as usize] as usize;
                    if other != own && !touched[..n_touched].contains(&other) {
                        touched[n_touched] = other;
                        n_touched += 1;
                    }
                }
                if n_touched > 0 {
                    boundaries[own].push(Pixel::new(x, y));
                    for &other in &touched[..n_touched] {
                        shared_boundary
                            .entry((own, other))
                            .or_default()
                            .push(Pixel::new(x, y));
                    }
                }
            }
        }

        Ok(Self {
            width,
            height,
            labels,
            count,
            centroids,
            anchors,
            boundaries,
            interiors,
            shared_boundary,
        })
    }

    /// Accepts arbitrary (sparse) ids, remapping them to `0..N` in ascending order.
    pub fn from_raw_labels(
        width: usize,
        height: usize,
        raw: &[u32],
    ) -> Result<Self, SegmentationError> {
        let mut ids: Vec<u32> = raw.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let remap: BTreeMap<u32, u32> = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i as u32))
            .collect();
        Self::from_labels(width, height, raw.iter().map(|id| remap[id]).collect())
    }

    /// The pixels of superpixel `i`.
    pub fn pixels_of(&self, i: usize) -> Result<&[Pixel], SegmentationError> {
        self.interiors
            .get(i)
            .map(Vec::as_slice)
            .ok_or(SegmentationError::IdOutOfRange {
                id: i,
                count: self.count,
            })
    }

    #[inline]
    pub fn label_at(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    /// Superpixels sharing a boundary with `i`, ascending.
    pub fn adjacent(&self, i: usize) -> Vec<usize> {
        self.shared_boundary
            .range((i, 0)..(i + 1, 0))
            .map(|(&(_, k), _)| k)
            .collect()
    }
}

fn nearest_member(pixels: &[Pixel], c: &[f64; 2]) -> Pixel {
    let mut best = pixels[0];
    let mut best_d = f64::INFINITY;
    for p in pixels {
        let d = (p.x as f64 - c[0]).powi(2) + (p.y as f64 - c[1]).powi(2);
        if d < best_d {
            best_d = d;
            best = *p;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn non_convex_anchor_snaps_inside() {
        // U shape: label 0 wraps around label 1 so its centroid falls on label 1.
        #[rustfmt::skip]
        let labels = vec![
            0, 0, 0,
            0, 1, 0,
            0, 1, 0,
        ];
        let p = SuperpixelPartition::from_labels(3, 3, labels).unwrap();
        let a = p.anchors[0];
        assert_eq!(p.label_at(a.x, a.y), 0);
    }

    #[test]
    fn out_of_range_id() {
        let p = SuperpixelPartition::from_labels(2, 1, vec![0, 1]).unwrap();
        assert!(matches!(
            p.pixels_of(2),
            Err(SegmentationError::IdOutOfRange { id: 2, count: 2 })
        ));
    }

    #[test]
    fn sparse_ids_are_compacted() {
        let p = SuperpixelPartition::from_raw_labels(3, 1, &[7, 7, 300]).unwrap();
        assert_eq!(p.labels, vec![0, 0, 1]);
        assert_eq!(p.count, 2);
    }

    #[test]
    fn unused_id_is_rejected() {
        assert!(matches!(
            SuperpixelPartition::from_labels(2, 1, vec![0, 2]),
            Err(SegmentationError::EmptySuperpixel(1))
        ));
    }

    proptest! {
        #[test]
        fn random_partitions_satisfy_invariants(
            w in 1usize..12, h in 1usize..12, k in 1u32..6, seed in any::<u64>()
        ) {
            let mut state = seed;
            let raw: Vec<u32> = (0..w * h).map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as u32) % k
            }).collect();
            let p = SuperpixelPartition::from_raw_labels(w, h, &raw).unwrap();

            let total: usize = (0..p.count).map(|i| p.pixels_of(i).unwrap().len()).sum();
            prop_assert_eq!(total, w * h);
            let mut seen = vec![false; w * h];
            for i in 0..p.count {
                for px in p.pixels_of(i).unwrap() {
                    prop_assert!(!seen[px.y * w + px.x]);
                    seen[px.y * w + px.x] = true;
                    prop_assert_eq!(p.label_at(px.x, px.y), i);
                }
                let a = p.anchors[i];
                prop_assert_eq!(p.label_at(a.x, a.y), i);
            }
            for y in 0..h {
                for x in 0..w {
                    let own = p.label_at(x, y);
                    let foreign = NEIGHBOURS.iter().any(|&(dx, dy)| {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize
                            && p.label_at(nx as usize, ny as usize) != own
                    });
                    prop_assert_eq!(p.boundaries[own].contains(&Pixel::new(x, y)), foreign);
                }
            }
            for &(i, k) in p.shared_boundary.keys() {
                prop_assert!(p.shared_boundary.contains_key(&(k, i)));
            }
        }
    }
}
