//! Categorical clean-up of label maps: connected components, absorption of
//! small regions into their surroundings, and a windowed mode filter.

use alloc::vec;
use alloc::vec::Vec;

use crate::maps::{LabelMap, IGNORE_LABEL};

/// Default area below which a region is absorbed by its neighbours.
pub const DEFAULT_MIN_AREA: usize = 64;
pub const DEFAULT_MAX_PASSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    /// N, S, E and W neighbours.
    #[default]
    Four,
    /// All eight surrounding pixels.
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

fn neighbours(height: usize, width: usize, pixel: usize, connectivity: Connectivity) -> impl Iterator<Item = usize> {
    let (r, c) = ((pixel / width) as isize, (pixel % width) as isize);
    connectivity.offsets().iter().filter_map(move |&(dr, dc)| {
        let (nr, nc) = (r + dr, c + dc);
        (nr >= 0 && nc >= 0 && (nr as usize) < height && (nc as usize) < width)
            .then(|| nr as usize * width + nc as usize)
    })
}

/// Maximal same-label connected regions. The ignore label is treated as an
/// ordinary label value here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentMap {
    height: usize,
    width: usize,
    component_ids: Vec<u32>,
    component_sizes: Vec<usize>,
    component_labels: Vec<u8>,
}

impl ComponentMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn component_ids(&self) -> &[u32] {
        &self.component_ids
    }

    pub fn component_sizes(&self) -> &[usize] {
        &self.component_sizes
    }

    pub fn component_labels(&self) -> &[u8] {
        &self.component_labels
    }

    pub fn num_components(&self) -> usize {
        self.component_sizes.len()
    }
}

/// Labels components with ids in raster-scan discovery order.
pub fn connected_components(labels: &LabelMap, connectivity: Connectivity) -> ComponentMap {
    let (h, w) = (labels.height(), labels.width());
    let data = labels.data();
    let mut ids = vec![u32::MAX; data.len()];
    let mut sizes = Vec::new();
    let mut comp_labels = Vec::new();
    let mut stack = Vec::new();
    for start in 0..data.len() {
        if ids[start] != u32::MAX {
            continue;
        }
        let id = sizes.len() as u32;
        let label = data[start];
        ids[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            for q in neighbours(h, w, p, connectivity) {
                if ids[q] == u32::MAX && data[q] == label {
                    ids[q] = id;
                    stack.push(q);
                }
            }
        }
        sizes.push(size);
        comp_labels.push(label);
    }
    ComponentMap { height: h, width: w, component_ids: ids, component_sizes: sizes, component_labels: comp_labels }
}

/// Result of [`remove_small_components`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cleanup {
    pub labels: LabelMap,
    /// Whether a pass changed nothing before the pass limit ran out.
    pub converged: bool,
    pub passes: usize,
}

/// Reassigns every component smaller than `min_area` to the most common
/// class among the pixels bordering it (ties to the lowest class). Ignore
/// regions are left alone and ignore pixels do not vote; a region with no
/// voting neighbours keeps its label.
///
/// Small regions are visited smallest first and absorbed in place, so each
/// change merges two regions and the number of regions strictly decreases.
pub fn remove_small_components(
    labels: &LabelMap,
    min_area: usize,
    connectivity: Connectivity,
    max_passes: usize,
) -> Cleanup {
    let (h, w) = (labels.height(), labels.width());
    let mut current = labels.data().to_vec();
    let mut counts = vec![0usize; labels.num_classes()];
    let mut stamp = vec![u32::MAX; current.len()];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut passes = 0;
    let mut converged = false;

    while passes < max_passes {
        passes += 1;
        let map = LabelMap::new(h, w, labels.num_classes(), current.clone()).expect("labels stay in range");
        let comps = connected_components(&map, connectivity);

        let mut small: Vec<usize> = (0..comps.num_components())
            .filter(|&c| comps.component_sizes[c] < min_area && comps.component_labels[c] != IGNORE_LABEL)
            .collect();
        if small.is_empty() {
            converged = true;
            break;
        }
        small.sort_by_key(|&c| (comps.component_sizes[c], c));

        members.clear();
        members.resize(comps.num_components(), Vec::new());
        for (p, &id) in comps.component_ids.iter().enumerate() {
            if comps.component_sizes[id as usize] < min_area {
                members[id as usize].push(p);
            }
        }

        let mut changed = false;
        for &comp in &small {
            let own = comps.component_labels[comp];
            counts.iter_mut().for_each(|c| *c = 0);
            let mut merged_already = false;
            for &p in &members[comp] {
                for q in neighbours(h, w, p, connectivity) {
                    if comps.component_ids[q] as usize == comp || stamp[q] == comp as u32 {
                        continue;
                    }
                    stamp[q] = comp as u32;
                    match current[q] {
                        IGNORE_LABEL => {}
                        l if l == own => merged_already = true,
                        l => counts[usize::from(l)] += 1,
                    }
                }
            }
            // a neighbour absorbed into this region earlier in the pass; revisit next pass
            if merged_already {
                continue;
            }
            let best = counts.iter().copied().max().unwrap_or(0);
            if best == 0 {
                continue;
            }
            let target = counts.iter().position(|&c| c == best).unwrap() as u8;
            for &p in &members[comp] {
                current[p] = target;
            }
            changed = true;
        }
        stamp.iter_mut().for_each(|s| *s = u32::MAX);
        if !changed {
            converged = true;
            break;
        }
    }

    Cleanup {
        labels: LabelMap::new(h, w, labels.num_classes(), current).expect("labels stay in range"),
        converged,
        passes,
    }
}

/// Replaces each pixel by the most common label in its `(2r+1)^2` window,
/// clipped at the borders. Ignore pixels do not vote. On a tie the pixel
/// keeps its label if that label is among the tied ones, otherwise the lowest
/// tied class wins.
pub fn mode_filter(labels: &LabelMap, radius: usize) -> LabelMap {
    let (h, w) = (labels.height(), labels.width());
    let c = labels.num_classes();
    let data = labels.data();
    if data.is_empty() {
        return labels.clone();
    }
    // per-column histograms over the current row window
    let mut column_hist = vec![0u32; w * c];
    let mut window = vec![0u32; c];
    let mut out = Vec::with_capacity(data.len());

    let add_row = |hist: &mut [u32], row: usize, sign: i32| {
        for col in 0..w {
            let l = data[row * w + col];
            if l != IGNORE_LABEL {
                let slot = &mut hist[col * c + usize::from(l)];
                *slot = (*slot as i32 + sign) as u32;
            }
        }
    };
    for row in 0..=radius.min(h.saturating_sub(1)) {
        add_row(&mut column_hist, row, 1);
    }

    for row in 0..h {
        if row > 0 {
            if row + radius < h {
                add_row(&mut column_hist, row + radius, 1);
            }
            if row > radius {
                add_row(&mut column_hist, row - radius - 1, -1);
            }
        }
        window.iter_mut().for_each(|x| *x = 0);
        for col in 0..=radius.min(w - 1) {
            for (x, &v) in window.iter_mut().zip(&column_hist[col * c..(col + 1) * c]) {
                *x += v;
            }
        }
        for col in 0..w {
            if col > 0 {
                if col + radius < w {
                    let add = col + radius;
                    for (x, &v) in window.iter_mut().zip(&column_hist[add * c..(add + 1) * c]) {
                        *x += v;
                    }
                }
                if col > radius {
                    let sub = col - radius - 1;
                    for (x, &v) in window.iter_mut().zip(&column_hist[sub * c..(sub + 1) * c]) {
                        *x -= v;
                    }
                }
            }
            let own = data[row * w + col];
            let best = window.iter().copied().max().unwrap_or(0);
            let keep = best == 0 || (own != IGNORE_LABEL && window[usize::from(own)] == best);
            let label = if keep { own } else { window.iter().position(|&x| x == best).unwrap() as u8 };
            out.push(label);
        }
    }
    LabelMap::new(h, w, c, out).expect("mode labels come from the input")
}
