//! Neighbour structures over superpixels: the K-NN graph of anchor points and
//! the shared-boundary adjacency graph, both directed, with edge weights.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::io::ImageRGB;
use crate::segmentation::{Pixel, SuperpixelPartition};

pub const DEFAULT_K: usize = 16;
pub const DEFAULT_BETA_SPATIAL: f64 = 0.05;
pub const DEFAULT_BETA_COLOR: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnnEdge {
    pub from: usize,
    pub to: usize,
    /// Anchor distance in pixels.
    pub distance: f64,
    /// `exp(-beta * distance)`, shared by both anchor terms.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnnGraph {
    pub edges: Vec<KnnEdge>,
    /// Neighbours per node actually used.
    pub k: usize,
    /// Set when the requested K exceeded `N - 1`.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjacencyEdge {
    pub from: usize,
    pub to: usize,
    /// Boundary pixels of `from` that 4-touch `to`.
    pub pixels: Vec<Pixel>,
    /// Colour weight of each boundary pixel.
    pub pixel_weights: Vec<f64>,
    /// Mean of `pixel_weights`; scales the edge's continuity penalty.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneGraph {
    pub knn: KnnGraph,
    pub adjacency: Vec<AdjacencyEdge>,
    pub beta_spatial: f64,
    pub beta_color: f64,
}

impl SceneGraph {
    pub fn build(
        part: &SuperpixelPartition,
        img: &ImageRGB,
        k: usize,
        beta_spatial: f64,
        beta_color: f64,
    ) -> Self {
        Self {
            knn: build_knn_graph(part, k, beta_spatial),
            adjacency: build_adjacency(part, img, beta_color),
            beta_spatial,
            beta_color,
        }
    }
}

/// Orders `(distance, id)` candidates by distance, breaking ties by ascending id.
pub fn tie_break_knn(candidates: &mut [(f64, usize)]) {
    candidates.sort_by(knn_order);
}

fn knn_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Connects each anchor to its `k` nearest anchors in the image plane.
pub fn build_knn_graph(part: &SuperpixelPartition, k: usize, beta: f64) -> KnnGraph {
    let anchors: Vec<(f64, f64)> = part.anchors.iter().map(Pixel::coords).collect();
    knn_from_points(&anchors, k, beta)
}

/// K-NN graph over arbitrary 2-D points.
pub fn knn_from_points(points: &[(f64, f64)], k: usize, beta: f64) -> KnnGraph {
    let n = points.len();
    let k_eff = k.min(n.saturating_sub(1));
    let per_node: Vec<Vec<KnnEdge>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if k_eff == 0 {
                return Vec::new();
            }
            let (xi, yi) = points[i];
            let mut cands: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let (xj, yj) = points[j];
                    ((xi - xj).powi(2) + (yi - yj).powi(2), j)
                })
                .collect();
            if cands.len() > k_eff {
                cands.select_nth_unstable_by(k_eff - 1, knn_order);
                cands.truncate(k_eff);
            }
            tie_break_knn(&mut cands);
            cands
                .into_iter()
                .map(|(d2, j)| {
                    let distance = d2.sqrt();
                    KnnEdge {
                        from: i,
                        to: j,
                        distance,
                        weight: (-beta * distance).exp(),
                    }
                })
                .collect()
        })
        .collect();
    if k > k_eff {
        log::warn!("K = {k} clamped to {k_eff} for {n} superpixels");
    }
    KnnGraph {
        edges: per_node.into_iter().flatten().collect(),
        k: k_eff,
        clamped: k > k_eff,
    }
}

#[inline]
fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// Colour weight of a boundary pixel: `sum_j exp(-beta * |I(p) - I(q_j)|)`
/// over its four neighbours, reflecting across the image border.
pub fn boundary_color_weight(img: &ImageRGB, p: Pixel, beta: f64) -> f64 {
    let c = img.get(p.x, p.y);
    [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
        .iter()
        .map(|&(dx, dy)| {
            let q = img.get(
                reflect101(p.x as isize + dx, img.width),
                reflect101(p.y as isize + dy, img.height),
            );
            let diff = ((c[0] - q[0]) as f64).powi(2)
                + ((c[1] - q[1]) as f64).powi(2)
                + ((c[2] - q[2]) as f64).powi(2);
            (-beta * diff.sqrt()).exp()
        })
        .sum()
}

/// Directed edge `(i, k)` for every pair of superpixels sharing a boundary.
pub fn build_adjacency(part: &SuperpixelPartition, img: &ImageRGB, beta: f64) -> Vec<AdjacencyEdge> {
    assert_eq!(
        (part.width, part.height),
        (img.width, img.height),
        "partition and image dimensions differ"
    );
    part.shared_boundary
        .iter()
        .map(|(&(from, to), pixels)| {
            let pixel_weights: Vec<f64> = pixels
                .iter()
                .map(|&p| boundary_color_weight(img, p, beta))
                .collect();
            let weight = pixel_weights.iter().sum::<f64>() / pixel_weights.len() as f64;
            AdjacencyEdge {
                from,
                to,
                pixels: pixels.clone(),
                pixel_weights,
                weight,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::grid_segment;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collinear_anchors_weight() {
        let g = knn_from_points(&[(0.0, 0.0), (10.0, 0.0), (20.0, 0.0)], 1, 0.1);
        let out = |i| g.edges.iter().find(|e| e.from == i).unwrap();
        assert_eq!(out(0).to, 1);
        assert_eq!(out(1).to, 0); // tie between 0 and 2 goes to the lower id
        assert_eq!(out(2).to, 1);
        assert!((out(0).weight - (-1.0f64).exp()).abs() < 1e-15);
        assert!((out(0).weight - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn ties_follow_ids() {
        let mut c = vec![(1.0, 2), (1.0, 1), (0.5, 7), (1.0, 0)];
        tie_break_knn(&mut c);
        assert_eq!(c, vec![(0.5, 7), (1.0, 0), (1.0, 1), (1.0, 2)]);
    }

    #[test]
    fn equidistant_keep_lowest_ids() {
        // node 0 in the centre of a plus, the other four at distance 3
        let pts = [(3.0, 3.0), (0.0, 3.0), (6.0, 3.0), (3.0, 0.0), (3.0, 6.0)];
        let g = knn_from_points(&pts, 2, 0.1);
        let nb: Vec<usize> = g.edges.iter().filter(|e| e.from == 0).map(|e| e.to).collect();
        assert_eq!(nb, vec![1, 2]);
    }

    #[test]
    fn weights_decay_with_rank() {
        let part = grid_segment(60, 40, 24).unwrap();
        let g = build_knn_graph(&part, 6, DEFAULT_BETA_SPATIAL);
        for i in 0..part.count {
            let w: Vec<f64> = g.edges.iter().filter(|e| e.from == i).map(|e| e.weight).collect();
            assert_eq!(w.len(), 6);
            assert!(w.windows(2).all(|p| p[0] >= p[1]));
            assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0));
        }
    }

    #[test]
    fn k_is_clamped_for_small_graphs() {
        let part = grid_segment(4, 4, 4).unwrap();
        let g = build_knn_graph(&part, 16, 0.05);
        assert!(g.clamped);
        assert_eq!(g.k, 3);
        assert_eq!(g.edges.len(), 12);
    }

    #[test]
    fn matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let n = if trial == 0 { 50 } else { rng.random_range(2..200) };
            // integer coordinates so exact ties actually occur
            let pts: Vec<(i64, i64)> = (0..n)
                .map(|_| (rng.random_range(0..40), rng.random_range(0..30)))
                .collect();
            let fpts: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
            let k = rng.random_range(1..8);
            let g = knn_from_points(&fpts, k, 0.05);
            for i in 0..n {
                let mut all: Vec<(i64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
                        (dx * dx + dy * dy, j)
                    })
                    .collect();
                all.sort();
                let expect: Vec<usize> = all.iter().take(k).map(|p| p.1).collect();
                let got: Vec<usize> = g.edges.iter().filter(|e| e.from == i).map(|e| e.to).collect();
                assert_eq!(got, expect, "trial {trial} node {i}");
            }
        }
    }

    #[test]
    fn partition_graph_uses_anchors() {
        let part = grid_segment(40, 40, 16).unwrap();
        let g = build_knn_graph(&part, 4, 0.05);
        let pts: Vec<(f64, f64)> = part.anchors.iter().map(Pixel::coords).collect();
        assert_eq!(g, knn_from_points(&pts, 4, 0.05));
    }

    #[test]
    fn uniform_image_weights_are_four() {
        let part = grid_segment(20, 10, 8).unwrap();
        let img = ImageRGB::filled(20, 10, [0.3, 0.3, 0.3]);
        let adj = build_adjacency(&part, &img, DEFAULT_BETA_COLOR);
        assert!(!adj.is_empty());
        for e in &adj {
            assert!(e.pixel_weights.iter().all(|&w| (w - 4.0).abs() < 1e-15));
        }
    }

    #[test]
    fn black_white_split_weight() {
        // two-pixel-wide image: black column | white column, one superpixel each
        let part = grid_segment(2, 2, 2).unwrap();
        assert_eq!(part.count, 2);
        let pixels = vec![[0.0; 3], [1.0; 3], [0.0; 3], [1.0; 3]];
        let img = ImageRGB::new(2, 2, pixels).unwrap();
        let adj = build_adjacency(&part, &img, 1.0);
        let expect = 2.0 + 2.0 * (-(3.0f64).sqrt()).exp();
        for e in &adj {
            for &w in &e.pixel_weights {
                assert!((w - expect).abs() < 1e-12, "{w} vs {expect}");
            }
        }
    }

    #[test]
    fn adjacency_is_symmetric_and_bounded() {
        let part = grid_segment(30, 20, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pixels = (0..600)
            .map(|_| [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()])
            .collect();
        let img = ImageRGB::new(30, 20, pixels).unwrap();
        let beta = 5.0;
        let adj = build_adjacency(&part, &img, beta);
        let lo = 4.0 * (-beta * 3.0f64.sqrt()).exp();
        for e in &adj {
            assert!(adj.iter().any(|f| f.from == e.to && f.to == e.from));
            for &w in &e.pixel_weights {
                assert!(w >= lo - 1e-12 && w <= 4.0 + 1e-12);
            }
        }
    }

    #[test]
    fn separated_superpixels_have_no_edge() {
        let labels = vec![0, 1, 2, 0, 1, 2];
        let part = SuperpixelPartition::from_labels(3, 2, labels).unwrap();
        let img = ImageRGB::filled(3, 2, [0.5; 3]);
        let adj = build_adjacency(&part, &img, 5.0);
        assert!(!adj.iter().any(|e| (e.from, e.to) == (0, 2) || (e.from, e.to) == (2, 0)));
        assert_eq!(adj.len(), 4);
    }
}
