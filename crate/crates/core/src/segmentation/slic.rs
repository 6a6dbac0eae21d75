//! SLIC superpixels: k-means in CIELAB + image-plane coordinates, restricted
//! to a `2S x 2S` window around each centre, followed by connectivity
//! enforcement.

use super::grid::{grid_labels, grid_shape};
use super::{SegmentationError, SuperpixelPartition};
use crate::io::ImageRGB;

pub const SLIC_ITERATIONS: usize = 10;
pub const DEFAULT_COMPACTNESS: f64 = 10.0;
const MAX_FRAGMENT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicOptions {
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicOptions {
    fn default() -> Self {
        Self {
            compactness: DEFAULT_COMPACTNESS,
            iterations: SLIC_ITERATIONS,
        }
    }
}

fn srgb_to_lab(rgb: [f32; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| {
        let c = c as f64;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    });
    let x = (0.412_456_4 * lin[0] + 0.357_576_1 * lin[1] + 0.180_437_5 * lin[2]) / 0.950_47;
    let y = 0.212_672_9 * lin[0] + 0.715_152_2 * lin[1] + 0.072_175_0 * lin[2];
    let z = (0.019_333_9 * lin[0] + 0.119_192 * lin[1] + 0.950_304_1 * lin[2]) / 1.088_83;
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Clone, Copy)]
struct Centre {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// Segments `img` into roughly `target_n` compact, connected superpixels.
pub fn slic_segment(
    img: &ImageRGB,
    target_n: usize,
    compactness: f64,
) -> Result<SuperpixelPartition, SegmentationError> {
    slic_segment_with(
        img,
        target_n,
        SlicOptions {
            compactness,
            ..SlicOptions::default()
        },
    )
}

pub fn slic_segment_with(
    img: &ImageRGB,
    target_n: usize,
    opts: SlicOptions,
) -> Result<SuperpixelPartition, SegmentationError> {
    let (w, h) = (img.width, img.height);
    let pixels = w * h;
    if target_n == 0 || target_n > pixels {
        return Err(SegmentationError::DegenerateRequest {
            requested: target_n,
            pixels,
        });
    }
    let lab: Vec<[f64; 3]> = img.pixels.iter().map(|&p| srgb_to_lab(p)).collect();
    let step = (pixels as f64 / target_n as f64).sqrt();
    let radius = step.ceil() as isize;
    let spatial = (opts.compactness / step).powi(2);

    // seed centres at the grid cell centroids
    let (cols, rows) = grid_shape(w, h, target_n);
    let seed = grid_labels(w, h, cols, rows);
    let k = cols * rows;
    let mut acc = vec![[0.0f64; 3]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in seed.iter().enumerate() {
        let l = l as usize;
        acc[l][0] += (i % w) as f64;
        acc[l][1] += (i / w) as f64;
        counts[l] += 1;
    }
    let mut centres: Vec<Centre> = (0..k)
        .map(|l| {
            let x = acc[l][0] / counts[l] as f64;
            let y = acc[l][1] / counts[l] as f64;
            let (px, py) = ((x.round() as usize).min(w - 1), (y.round() as usize).min(h - 1));
            Centre {
                lab: lab[py * w + px],
                x,
                y,
            }
        })
        .collect();

    let mut labels = vec![u32::MAX; pixels];
    let mut dist = vec![f64::INFINITY; pixels];
    for _ in 0..opts.iterations {
        dist.fill(f64::INFINITY);
        for (ci, c) in centres.iter().enumerate() {
            let (cx, cy) = (c.x.round() as isize, c.y.round() as isize);
            let y0 = (cy - radius).max(0) as usize;
            let y1 = ((cy + radius) as usize).min(h - 1);
            let x0 = (cx - radius).max(0) as usize;
            let x1 = ((cx + radius) as usize).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let p = lab[i];
                    let dc = (p[0] - c.lab[0]).powi(2)
                        + (p[1] - c.lab[1]).powi(2)
                        + (p[2] - c.lab[2]).powi(2);
                    let ds = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
                    let d = dc + ds * spatial;
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = ci as u32;
                    }
                }
            }
        }
        // pixels outside every window join the spatially nearest centre
        for i in 0..pixels {
            if labels[i] == u32::MAX {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                let nearest = centres
                    .iter()
                    .enumerate()
                    .map(|(ci, c)| (ci, (x - c.x).powi(2) + (y - c.y).powi(2)))
                    .fold((0, f64::INFINITY), |b, n| if n.1 < b.1 { n } else { b });
                labels[i] = nearest.0 as u32;
            }
        }
        let mut sums = vec![[0.0f64; 5]; k];
        let mut counts = vec![0usize; k];
        for i in 0..pixels {
            let l = labels[i] as usize;
            let s = &mut sums[l];
            s[0] += lab[i][0];
            s[1] += lab[i][1];
            s[2] += lab[i][2];
            s[3] += (i % w) as f64;
            s[4] += (i / w) as f64;
            counts[l] += 1;
        }
        for (c, (s, &n)) in centres.iter_mut().zip(sums.iter().zip(&counts)) {
            if n > 0 {
                let n = n as f64;
                *c = Centre {
                    lab: [s[0] / n, s[1] / n, s[2] / n],
                    x: s[3] / n,
                    y: s[4] / n,
                };
            }
        }
    }

    let min_size = ((step * step / 4.0).floor() as usize).clamp(1, MAX_FRAGMENT);
    let merged = enforce_connectivity(w, h, &labels, min_size);
    SuperpixelPartition::from_labels(w, h, merged)
}

/// Merges every orphan fragment (a component that is not its label's largest,
/// or is smaller than `min_size`) into its largest adjacent neighbour, then
/// renumbers labels densely in order of the original centre ids.
fn enforce_connectivity(w: usize, h: usize, labels: &[u32], min_size: usize) -> Vec<u32> {
    let n = w * h;
    let mut comp = vec![usize::MAX; n];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut comp_first = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        let l = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == l {
                    comp[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        comp_label.push(l);
        comp_size.push(size);
        comp_first.push(start);
    }
    let n_comp = comp_label.len();

    // largest component per label (first found wins ties)
    let mut best_of_label: std::collections::BTreeMap<u32, usize> = Default::default();
    for c in 0..n_comp {
        best_of_label
            .entry(comp_label[c])
            .and_modify(|b| {
                if comp_size[c] > comp_size[*b] {
                    *b = c
                }
            })
            .or_insert(c);
    }
    let kept: Vec<bool> = (0..n_comp)
        .map(|c| best_of_label[&comp_label[c]] == c && comp_size[c] >= min_size)
        .collect();

    let mut adjacency: Vec<std::collections::BTreeSet<usize>> = vec![Default::default(); n_comp];
    for i in 0..n {
        let (x, y) = (i % w, i / w);
        if x + 1 < w && comp[i] != comp[i + 1] {
            adjacency[comp[i]].insert(comp[i + 1]);
            adjacency[comp[i + 1]].insert(comp[i]);
        }
        if y + 1 < h && comp[i] != comp[i + w] {
            adjacency[comp[i]].insert(comp[i + w]);
            adjacency[comp[i + w]].insert(comp[i]);
        }
    }

    let mut parent: Vec<usize> = (0..n_comp).collect();
    fn find(parent: &mut [usize], mut c: usize) -> usize {
        while parent[c] != c {
            parent[c] = parent[parent[c]];
            c = parent[c];
        }
        c
    }
    let mut group_size = comp_size.clone();
    let mut orphans: Vec<usize> = (0..n_comp).filter(|&c| !kept[c]).collect();
    orphans.sort_by_key(|&c| (comp_size[c], comp_first[c]));
    for c in orphans {
        let root = find(&mut parent, c);
        let mut target: Option<(usize, usize)> = None;
        for &nb in &adjacency[c] {
            let r = find(&mut parent, nb);
            if r == root {
                continue;
            }
            let s = group_size[r];
            if target.is_none_or(|(ts, tr)| s > ts || (s == ts && r < tr)) {
                target = Some((s, r));
            }
        }
        if let Some((_, r)) = target {
            parent[root] = r;
            group_size[r] += group_size[root];
        }
    }

    // order groups by the smallest original label they contain, then by position
    let mut group_key: std::collections::BTreeMap<usize, (u32, usize)> = Default::default();
    for c in 0..n_comp {
        let r = find(&mut parent, c);
        let key = (comp_label[c], comp_first[c]);
        group_key
            .entry(r)
            .and_modify(|k| {
                if kept[c] && (!kept[r] || key < *k) {
                    *k = key
                }
            })
            .or_insert(key);
    }
    let mut order: Vec<(usize, (u32, usize))> = group_key.into_iter().collect();
    order.sort_by_key(|&(_, k)| k);
    let mut new_id = vec![0u32; n_comp];
    for (rank, (r, _)) in order.iter().enumerate() {
        new_id[*r] = rank as u32;
    }
    (0..n)
        .map(|i| new_id[find(&mut parent, comp[i])])
        .collect()
}
