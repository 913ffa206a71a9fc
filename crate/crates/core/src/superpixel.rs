//! Superpixel partitions: regular marker grids, marker-based watershed and SLIC.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{lab_gradient, rgb_to_lab, ImageBuffer};

/// Default SLIC compactness.
pub const SLIC_COMPACTNESS: f64 = 10.0;
/// Fixed number of SLIC k-means iterations.
pub const SLIC_ITERATIONS: usize = 10;

/// 4-neighbour offsets in visiting order: up, left, right, down.
const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Watershed,
    Slic,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "watershed" => Ok(Algorithm::Watershed),
            "slic" => Ok(Algorithm::Slic),
            other => Err(Error::InvalidArgument(format!(
                "unknown superpixel algorithm {other:?} (expected watershed or slic)"
            ))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Watershed => "watershed",
            Algorithm::Slic => "slic",
        })
    }
}

/// Seeds placed at the centres of a `rows × cols` tiling of the image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerGrid {
    pub positions: Vec<(usize, usize)>,
    pub requested_n: usize,
    pub rows: usize,
    pub cols: usize,
}

impl MarkerGrid {
    /// Number of markers actually placed; authoritative downstream.
    pub fn actual_n(&self) -> usize {
        self.positions.len()
    }
}

/// Lays out roughly `n` markers on a regular grid.
///
/// `rows = round(sqrt(n·h/w))` clamped to `[1, h]`, `cols = ceil(n/rows)`
/// clamped to `[1, w]`. Cell `i` of `rows` spans `[i·h/rows, (i+1)·h/rows)`
/// (integer division) and its marker sits at the floor of the span midpoint.
pub fn regular_grid_markers(height: usize, width: usize, n: usize) -> Result<MarkerGrid> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("marker grid on an empty image".into()));
    }
    if n == 0 || n > height * width {
        return Err(Error::InvalidArgument(format!(
            "requested {n} markers on a {height}x{width} image"
        )));
    }
    let rows = ((n as f64 * height as f64 / width as f64).sqrt().round() as usize).clamp(1, height);
    let cols = n.div_ceil(rows).clamp(1, width);
    let centre = |i: usize, cells: usize, len: usize| (i * len / cells + (i + 1) * len / cells) / 2;
    let positions = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (centre(i, rows, height), centre(j, cols, width))))
        .collect();
    Ok(MarkerGrid {
        positions,
        requested_n: n,
        rows,
        cols,
    })
}

/// A partition of the image into `n` non-empty, 4-connected regions with ids `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    height: usize,
    width: usize,
    ids: Vec<u32>,
    n: usize,
}

impl SuperpixelMap {
    /// Validates the partition invariants: ids in `0..n`, every region present
    /// and 4-connected.
    pub fn new(height: usize, width: usize, ids: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("superpixel map must be non-empty".into()));
        }
        if ids.len() != height * width {
            return Err(Error::shape(height * width, ids.len()));
        }
        let n = ids.iter().max().map_or(0, |&m| m as usize + 1);
        let map = Self {
            height,
            width,
            ids,
            n,
        };
        let sizes = map.region_sizes();
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidInput(format!("region {empty} is empty")));
        }
        if let Some(region) = map.first_disconnected_region() {
            return Err(Error::InvalidInput(format!(
                "region {region} is not 4-connected"
            )));
        }
        Ok(map)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of regions.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.ids[row * self.width + col]
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n];
        for &id in &self.ids {
            sizes[id as usize] += 1;
        }
        sizes
    }

    /// Pixels with at least one 4-neighbour in another region.
    pub fn boundary(&self) -> Vec<bool> {
        label_boundary(&self.ids, self.height, self.width)
    }

    fn first_disconnected_region(&self) -> Option<usize> {
        let mut seen = vec![false; self.ids.len()];
        let mut visited_region = vec![false; self.n];
        let mut queue = VecDeque::new();
        for start in 0..self.ids.len() {
            if seen[start] {
                continue;
            }
            let region = self.ids[start] as usize;
            if visited_region[region] {
                return Some(region);
            }
            visited_region[region] = true;
            seen[start] = true;
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                for q in neighbours(p, self.height, self.width) {
                    if !seen[q] && self.ids[q] as usize == region {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        None
    }
}

/// Boundary mask of any integer labelling (4-neighbour definition).
pub fn label_boundary<T: PartialEq + Copy>(ids: &[T], height: usize, width: usize) -> Vec<bool> {
    (0..ids.len())
        .map(|p| neighbours(p, height, width).any(|q| ids[q] != ids[p]))
        .collect()
}

/// Fraction of true boundary pixels lying within `tolerance` pixels
/// (Chebyshev distance) of a superpixel boundary pixel.
pub fn boundary_recall(true_boundary: &[bool], sp: &SuperpixelMap, tolerance: usize) -> f64 {
    let (h, w) = sp.dims();
    let sp_boundary = sp.boundary();
    let t = tolerance as isize;
    let mut total = 0usize;
    let mut hit = 0usize;
    for (p, &is_edge) in true_boundary.iter().enumerate() {
        if !is_edge {
            continue;
        }
        total += 1;
        let (r, c) = ((p / w) as isize, (p % w) as isize);
        let found = (-t..=t).any(|dr| {
            (-t..=t).any(|dc| {
                let (rr, cc) = (r + dr, c + dc);
                rr >= 0
                    && cc >= 0
                    && (rr as usize) < h
                    && (cc as usize) < w
                    && sp_boundary[rr as usize * w + cc as usize]
            })
        });
        if found {
            hit += 1;
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

#[inline]
fn neighbours(p: usize, height: usize, width: usize) -> impl Iterator<Item = usize> {
    let (r, c) = ((p / width) as isize, (p % width) as isize);
    NEIGHBOURS.iter().filter_map(move |&(dr, dc)| {
        let (rr, cc) = (r + dr, c + dc);
        (rr >= 0 && cc >= 0 && (rr as usize) < height && (cc as usize) < width)
            .then(|| rr as usize * width + cc as usize)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Priority(f32);

impl Eq for Priority {}

impl PartialOrd for Priority {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Priority {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Marker-based watershed over 4-neighbourhoods.
///
/// Markers are labelled `0..k` in grid order and queued at their own gradient
/// value. The queue pops the lowest `(gradient, insertion sequence)` pair; the
/// popped pixel claims every unlabelled neighbour (visited up, left, right,
/// down), which is queued at its own gradient. A pixel keeps the first label
/// that claims it, so there are no watershed-line pixels.
pub fn watershed(gradient: &ImageBuffer<f32>, markers: &MarkerGrid) -> Result<SuperpixelMap> {
    if gradient.channels() != 1 {
        return Err(Error::InvalidInput(format!(
            "watershed needs a single-channel gradient, got {}",
            gradient.channels()
        )));
    }
    if markers.positions.is_empty() {
        return Err(Error::InvalidArgument("watershed needs at least one marker".into()));
    }
    if gradient.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("gradient contains non-finite values".into()));
    }
    let (height, width) = gradient.dims();
    let grad = gradient.data();
    const UNLABELLED: u32 = u32::MAX;
    let mut ids = vec![UNLABELLED; height * width];
    let mut heap = BinaryHeap::with_capacity(height * width);
    let mut seq = 0u64;

    for (label, &(r, c)) in markers.positions.iter().enumerate() {
        if r >= height || c >= width {
            return Err(Error::InvalidArgument(format!(
                "marker ({r}, {c}) outside {height}x{width} image"
            )));
        }
        let p = r * width + c;
        if ids[p] != UNLABELLED {
            return Err(Error::InvalidArgument(format!("duplicate marker at ({r}, {c})")));
        }
        ids[p] = label as u32;
        heap.push(Reverse((Priority(grad[p]), seq, p)));
        seq += 1;
    }

    while let Some(Reverse((_, _, p))) = heap.pop() {
        let label = ids[p];
        for q in neighbours(p, height, width) {
            if ids[q] == UNLABELLED {
                ids[q] = label;
                heap.push(Reverse((Priority(grad[q]), seq, q)));
                seq += 1;
            }
        }
    }

    Ok(SuperpixelMap {
        height,
        width,
        n: markers.positions.len(),
        ids,
    })
}

#[derive(Debug, Clone, Copy)]
struct Centre {
    lab: [f64; 3],
    row: f64,
    col: f64,
}

impl Centre {
    fn distance2(&self, lab: [f64; 3], row: f64, col: f64, spatial_weight: f64) -> f64 {
        let dc = (lab[0] - self.lab[0]).powi(2)
            + (lab[1] - self.lab[1]).powi(2)
            + (lab[2] - self.lab[2]).powi(2);
        let ds = (row - self.row).powi(2) + (col - self.col).powi(2);
        dc + ds * spatial_weight
    }
}

/// SLIC superpixels: k-means in (L, a, b, row, col) from a regular grid,
/// [`SLIC_ITERATIONS`] iterations with a `2S × 2S` search window, then
/// connectivity enforcement.
///
/// The distance is `d_lab² + (d_xy / S)² · m²` with `S = sqrt(P / k)` and
/// `m = compactness`. Each cluster keeps its largest 4-connected component;
/// the remaining fragments are merged into the adjacent region whose centre is
/// closest to the fragment mean.
pub fn slic(lab: &ImageBuffer<f32>, n: usize, compactness: f64) -> Result<SuperpixelMap> {
    if lab.channels() != 3 {
        return Err(Error::InvalidInput(format!(
            "SLIC needs a 3-channel Lab image, got {}",
            lab.channels()
        )));
    }
    if !(compactness > 0.0 && compactness.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "compactness must be positive, got {compactness}"
        )));
    }
    let (height, width) = lab.dims();
    let grid = regular_grid_markers(height, width, n)?;
    let pixels = height * width;
    let step = (pixels as f64 / grid.actual_n() as f64).sqrt();
    let spatial_weight = (compactness / step).powi(2);
    let window = step.ceil() as isize;
    let px_lab = |p: usize| {
        let s = lab.pixel(p / width, p % width);
        [s[0] as f64, s[1] as f64, s[2] as f64]
    };

    let mut centres: Vec<Centre> = grid
        .positions
        .iter()
        .map(|&(r, c)| Centre {
            lab: px_lab(r * width + c),
            row: r as f64,
            col: c as f64,
        })
        .collect();
    let mut labels = vec![usize::MAX; pixels];
    let mut dist = vec![f64::INFINITY; pixels];

    for _ in 0..SLIC_ITERATIONS {
        dist.fill(f64::INFINITY);
        labels.fill(usize::MAX);
        for (k, centre) in centres.iter().enumerate() {
            let (cr, cc) = (centre.row.round() as isize, centre.col.round() as isize);
            let r0 = (cr - window).max(0) as usize;
            let r1 = ((cr + window) as usize).min(height - 1);
            let c0 = (cc - window).max(0) as usize;
            let c1 = ((cc + window) as usize).min(width - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let p = r * width + c;
                    let d = centre.distance2(px_lab(p), r as f64, c as f64, spatial_weight);
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = k;
                    }
                }
            }
        }
        for p in 0..pixels {
            if labels[p] == usize::MAX {
                let (r, c) = ((p / width) as f64, (p % width) as f64);
                let l = px_lab(p);
                labels[p] = nearest_centre(&centres, l, r, c, spatial_weight);
            }
        }
        let mut sums = vec![[0.0f64; 6]; centres.len()];
        for (p, &k) in labels.iter().enumerate() {
            let l = px_lab(p);
            let s = &mut sums[k];
            s[0] += l[0];
            s[1] += l[1];
            s[2] += l[2];
            s[3] += (p / width) as f64;
            s[4] += (p % width) as f64;
            s[5] += 1.0;
        }
        for (centre, s) in centres.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                *centre = Centre {
                    lab: [s[0] / s[5], s[1] / s[5], s[2] / s[5]],
                    row: s[3] / s[5],
                    col: s[4] / s[5],
                };
            }
        }
    }

    let ids = enforce_connectivity(&labels, height, width, &centres, spatial_weight, px_lab);
    SuperpixelMap::new(height, width, ids)
}

fn nearest_centre(centres: &[Centre], lab: [f64; 3], row: f64, col: f64, w: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, centre) in centres.iter().enumerate() {
        let d = centre.distance2(lab, row, col, w);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

fn enforce_connectivity(
    labels: &[usize],
    height: usize,
    width: usize,
    centres: &[Centre],
    spatial_weight: f64,
    px_lab: impl Fn(usize) -> [f64; 3],
) -> Vec<u32> {
    let pixels = labels.len();
    // 4-connected components of equal cluster label
    let mut comp = vec![usize::MAX; pixels];
    let mut comp_label = vec![];
    let mut comp_sum: Vec<[f64; 6]> = vec![];
    let mut queue = VecDeque::new();
    for start in 0..pixels {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        comp_label.push(labels[start]);
        let mut sum = [0.0; 6];
        comp[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let l = px_lab(p);
            sum[0] += l[0];
            sum[1] += l[1];
            sum[2] += l[2];
            sum[3] += (p / width) as f64;
            sum[4] += (p % width) as f64;
            sum[5] += 1.0;
            for q in neighbours(p, height, width) {
                if comp[q] == usize::MAX && labels[q] == labels[p] {
                    comp[q] = id;
                    queue.push_back(q);
                }
            }
        }
        comp_sum.push(sum);
    }
    let n_comp = comp_label.len();

    let mut adjacency = vec![vec![]; n_comp];
    for p in 0..pixels {
        for q in neighbours(p, height, width) {
            let (a, b) = (comp[p], comp[q]);
            if a != b {
                adjacency[a].push(b);
            }
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
        adj.dedup();
    }

    // Largest component per cluster survives; lowest component id breaks ties.
    let mut largest: Vec<Option<usize>> = vec![None; centres.len()];
    for c in 0..n_comp {
        let slot = &mut largest[comp_label[c]];
        match *slot {
            Some(best) if comp_sum[best][5] >= comp_sum[c][5] => {}
            _ => *slot = Some(c),
        }
    }
    let mut group = vec![usize::MAX; n_comp];
    for &c in largest.iter().flatten() {
        group[c] = c;
    }

    let mut pending: Vec<usize> = (0..n_comp).filter(|&c| group[c] == usize::MAX).collect();
    while !pending.is_empty() {
        let mut still = vec![];
        let mut progressed = false;
        for &c in &pending {
            let s = comp_sum[c];
            let mean_lab = [s[0] / s[5], s[1] / s[5], s[2] / s[5]];
            let (mr, mc) = (s[3] / s[5], s[4] / s[5]);
            let target = adjacency[c]
                .iter()
                .filter(|&&nb| group[nb] != usize::MAX)
                .map(|&nb| group[nb])
                .min_by(|&a, &b| {
                    let da = centres[comp_label[a]].distance2(mean_lab, mr, mc, spatial_weight);
                    let db = centres[comp_label[b]].distance2(mean_lab, mr, mc, spatial_weight);
                    da.total_cmp(&db).then(a.cmp(&b))
                });
            match target {
                Some(g) => {
                    group[c] = g;
                    progressed = true;
                }
                None => still.push(c),
            }
        }
        debug_assert!(progressed, "orphan fragments with no resolved neighbour");
        if !progressed {
            break;
        }
        pending = still;
    }

    // Compact ids in raster order of first appearance.
    let mut remap = vec![u32::MAX; n_comp];
    let mut next = 0u32;
    comp.iter()
        .map(|&c| {
            let g = group[c];
            if remap[g] == u32::MAX {
                remap[g] = next;
                next += 1;
            }
            remap[g]
        })
        .collect()
}

/// Runs the full pipeline on an RGB image: Lab conversion, then either the
/// averaged Lab morphological gradient flooded from a regular marker grid, or
/// SLIC with the default compactness.
pub fn compute_superpixels(
    img: &ImageBuffer<u8>,
    algo: Algorithm,
    n: usize,
) -> Result<SuperpixelMap> {
    let lab = rgb_to_lab(img)?;
    match algo {
        Algorithm::Watershed => {
            let gradient = lab_gradient(&lab)?;
            let markers = regular_grid_markers(img.height(), img.width(), n)?;
            watershed(&gradient, &markers)
        }
        Algorithm::Slic => slic(&lab, n, SLIC_COMPACTNESS),
    }
}
