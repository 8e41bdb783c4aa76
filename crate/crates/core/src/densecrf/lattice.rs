//! Permutohedral lattice for approximate high-dimensional Gaussian filtering.
//!
//! Points are lifted onto the hyperplane `sum(x) = 0` in `d + 1` dimensions,
//! where the lattice tiles space with simplices. Each point splats its value
//! onto the `d + 1` vertices of its enclosing simplex with barycentric
//! weights, the lattice is blurred with a `[1, 2, 1] / 4` kernel along each
//! of the `d + 1` lattice directions in turn, and values are sliced back with
//! the same weights.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::FeatureSet;
use crate::{Error, Result};

const MISSING: u32 = u32::MAX;

/// Open-addressing table from `d + 1` integer coordinates to vertex index.
#[derive(Debug, Clone)]
struct VertexTable {
    key_len: usize,
    keys: Vec<i32>,
    slots: Vec<u32>,
}

impl VertexTable {
    fn with_capacity(key_len: usize, expected: usize) -> Self {
        let slots = (expected * 2).next_power_of_two().max(16);
        Self { key_len, keys: Vec::with_capacity(expected * key_len), slots: vec![MISSING; slots] }
    }

    fn len(&self) -> usize {
        self.keys.len() / self.key_len
    }

    fn key(&self, index: usize) -> &[i32] {
        &self.keys[index * self.key_len..(index + 1) * self.key_len]
    }

    fn hash(key: &[i32]) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for &k in key {
            h = (h ^ u64::from(k as u32)).wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^ (h >> 31)
    }

    /// Slot holding `key`, or the empty slot where it would go.
    fn probe(&self, key: &[i32]) -> usize {
        let mask = self.slots.len() - 1;
        let mut slot = Self::hash(key) as usize & mask;
        loop {
            let v = self.slots[slot];
            if v == MISSING || self.key(v as usize) == key {
                return slot;
            }
            slot = (slot + 1) & mask;
        }
    }

    fn find(&self, key: &[i32]) -> Option<u32> {
        let v = self.slots[self.probe(key)];
        (v != MISSING).then_some(v)
    }

    fn insert(&mut self, key: &[i32]) -> u32 {
        let slot = self.probe(key);
        if self.slots[slot] != MISSING {
            return self.slots[slot];
        }
        let index = self.len() as u32;
        self.keys.extend_from_slice(key);
        self.slots[slot] = index;
        if self.len() * 2 > self.slots.len() {
            self.grow();
        }
        index
    }

    fn grow(&mut self) {
        self.slots = vec![MISSING; self.slots.len() * 2];
        for index in 0..self.len() {
            let slot = self.probe(self.key(index));
            self.slots[slot] = index as u32;
        }
    }
}

#[derive(Debug, Clone)]
pub struct PermutohedralLattice {
    dim: usize,
    num_points: usize,
    vertices: VertexTable,
    /// Per point, the `d + 1` enclosing simplex vertices.
    splat_indices: Vec<u32>,
    splat_weights: Vec<f32>,
    /// Per vertex and direction `j`: the vertex at `key + u_j`, then `key - u_j`,
    /// where `u_j = (d + 1) e_j - 1`.
    neighbors: Vec<u32>,
}

impl PermutohedralLattice {
    /// Embeds every point of `features`. The features are assumed to be
    /// pre-scaled so the target kernel is `exp(-|f_i - f_j|^2 / 2)`.
    pub fn new(features: &FeatureSet) -> Self {
        let d = features.dim();
        let d1 = d + 1;
        let n = features.len();

        let inv_std_dev = libm::sqrt(2.0 / 3.0) * d1 as f64;
        let scale: Vec<f64> = (0..d).map(|i| inv_std_dev / libm::sqrt(((i + 1) * (i + 2)) as f64)).collect();
        // canonical[r][j]: coordinates of the remainder-r simplex vertex before permutation
        let mut canonical = vec![0i32; d1 * d1];
        for r in 0..d1 {
            for j in 0..d1 {
                canonical[r * d1 + j] = if j < d1 - r { r as i32 } else { r as i32 - d1 as i32 };
            }
        }

        let mut vertices = VertexTable::with_capacity(d1, n.max(1) * 2);
        let mut splat_indices = Vec::with_capacity(n * d1);
        let mut splat_weights = Vec::with_capacity(n * d1);

        let mut elevated = vec![0.0f64; d1];
        let mut rem0 = vec![0i32; d1];
        let mut rank = vec![0i32; d1];
        let mut bary = vec![0.0f64; d1 + 1];
        let mut key = vec![0i32; d1];
        let down = 1.0 / d1 as f64;
        let d1i = d1 as i32;

        for k in 0..n {
            let f = features.point(k);
            let mut sm = 0.0;
            for j in (1..=d).rev() {
                let cf = f64::from(f[j - 1]) * scale[j - 1];
                elevated[j] = sm - j as f64 * cf;
                sm += cf;
            }
            elevated[0] = sm;

            // nearest remainder-0 lattice point
            let mut sum = 0i32;
            for i in 0..d1 {
                let v = down * elevated[i];
                let up = libm::ceil(v) * d1 as f64;
                let lo = libm::floor(v) * d1 as f64;
                rem0[i] = if up - elevated[i] < elevated[i] - lo { up as i32 } else { lo as i32 };
                sum += rem0[i];
            }
            sum /= d1i;

            rank.iter_mut().for_each(|r| *r = 0);
            for i in 0..d {
                let di = elevated[i] - f64::from(rem0[i]);
                for j in i + 1..d1 {
                    if di < elevated[j] - f64::from(rem0[j]) {
                        rank[i] += 1;
                    } else {
                        rank[j] += 1;
                    }
                }
            }
            // bring the point back onto the sum-zero plane
            for i in 0..d1 {
                rank[i] += sum;
                if rank[i] < 0 {
                    rank[i] += d1i;
                    rem0[i] += d1i;
                } else if rank[i] > d as i32 {
                    rank[i] -= d1i;
                    rem0[i] -= d1i;
                }
            }

            bary.iter_mut().for_each(|b| *b = 0.0);
            for i in 0..d1 {
                let v = (elevated[i] - f64::from(rem0[i])) * down;
                let r = rank[i] as usize;
                bary[d - r] += v;
                bary[d1 - r] -= v;
            }
            bary[0] += 1.0 + bary[d1];

            for r in 0..d1 {
                for i in 0..d1 {
                    key[i] = rem0[i] + canonical[r * d1 + rank[i] as usize];
                }
                debug_assert_eq!(key.iter().sum::<i32>(), 0);
                splat_indices.push(vertices.insert(&key));
                splat_weights.push(bary[r].max(0.0) as f32);
            }
        }

        let m = vertices.len();
        let mut neighbors = vec![MISSING; m * d1 * 2];
        let mut plus = vec![0i32; d1];
        let mut minus = vec![0i32; d1];
        for v in 0..m {
            let base = vertices.key(v);
            for j in 0..d1 {
                for i in 0..d1 {
                    plus[i] = base[i] - 1;
                    minus[i] = base[i] + 1;
                }
                plus[j] += d1i;
                minus[j] -= d1i;
                let slot = (v * d1 + j) * 2;
                neighbors[slot] = vertices.find(&plus).unwrap_or(MISSING);
                neighbors[slot + 1] = vertices.find(&minus).unwrap_or(MISSING);
            }
        }

        Self { dim: d, num_points: n, vertices, splat_indices, splat_weights, neighbors }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Lattice key (`d + 1` coordinates summing to zero) of a vertex.
    pub fn vertex_key(&self, vertex: usize) -> &[i32] {
        self.vertices.key(vertex)
    }

    /// Storage index of the vertex with this key, if the lattice has it.
    pub fn find_vertex(&self, key: &[i32]) -> Option<usize> {
        if key.len() != self.dim + 1 {
            return None;
        }
        self.vertices.find(key).map(|v| v as usize)
    }

    /// Vertex indices of point `i`'s enclosing simplex.
    pub fn splat_indices(&self, i: usize) -> &[u32] {
        let d1 = self.dim + 1;
        &self.splat_indices[i * d1..(i + 1) * d1]
    }

    /// Barycentric weights of point `i` within its simplex.
    pub fn splat_weights(&self, i: usize) -> &[f32] {
        let d1 = self.dim + 1;
        &self.splat_weights[i * d1..(i + 1) * d1]
    }

    /// Splat, blur and slice `values` (`channels` per point). The result
    /// approximates the exact Gaussian filter up to a global scale, so callers
    /// divide by [`filter`](Self::filter) of the all-ones field.
    pub fn filter(&self, values: &[f32], channels: usize) -> Result<Vec<f32>> {
        if values.len() != self.num_points * channels {
            return Err(Error::Shape(format!(
                "{} values for a lattice over {} points with {channels} channels",
                values.len(),
                self.num_points
            )));
        }
        let d1 = self.dim + 1;
        let m = self.vertices.len();

        let mut buf = vec![0.0f32; m * channels];
        for (i, v) in values.chunks_exact(channels).enumerate() {
            for (&idx, &w) in self.splat_indices(i).iter().zip(self.splat_weights(i)) {
                let dst = &mut buf[idx as usize * channels..][..channels];
                for (d, &x) in dst.iter_mut().zip(v) {
                    *d += w * x;
                }
            }
        }

        let mut next = vec![0.0f32; m * channels];
        for j in 0..d1 {
            for v in 0..m {
                let slot = (v * d1 + j) * 2;
                let (n1, n2) = (self.neighbors[slot], self.neighbors[slot + 1]);
                let out = &mut next[v * channels..][..channels];
                let own = &buf[v * channels..][..channels];
                for c in 0..channels {
                    let mut s = 0.5 * own[c];
                    if n1 != MISSING {
                        s += 0.25 * buf[n1 as usize * channels + c];
                    }
                    if n2 != MISSING {
                        s += 0.25 * buf[n2 as usize * channels + c];
                    }
                    out[c] = s;
                }
            }
            core::mem::swap(&mut buf, &mut next);
        }

        let mut out = vec![0.0f32; self.num_points * channels];
        for (i, dst) in out.chunks_exact_mut(channels).enumerate() {
            for (&idx, &w) in self.splat_indices(i).iter().zip(self.splat_weights(i)) {
                let src = &buf[idx as usize * channels..][..channels];
                for (d, &x) in dst.iter_mut().zip(src) {
                    *d += w * x;
                }
            }
        }
        Ok(out)
    }

    /// Per point, the weight [`filter`](Self::filter) gives a point's own
    /// value at that point: the lattice counterpart of the exact kernel's
    /// `k(i, i) = 1`.
    pub fn self_weights(&self) -> Vec<f32> {
        let d1 = self.dim + 1;
        let d1i = d1 as i32;
        let mut delta = vec![0i32; d1];
        let mut steps = vec![0i32; d1];
        let mut out = Vec::with_capacity(self.num_points);
        for i in 0..self.num_points {
            let idx = self.splat_indices(i);
            let w = self.splat_weights(i);
            let mut total = 0.0f64;
            for (&dst, &wd) in idx.iter().zip(w) {
                for (&src, &ws) in idx.iter().zip(w) {
                    let (kd, ks) = (self.vertices.key(dst as usize), self.vertices.key(src as usize));
                    for c in 0..d1 {
                        delta[c] = kd[c] - ks[c];
                    }
                    // key(dst) - key(src) = sum_j t_j u_j = (d+1) t - (sum t) 1,
                    // so sum t is fixed modulo d+1 by any coordinate.
                    let base = (-delta[0]).rem_euclid(d1i);
                    let mut transfer = 0.0f64;
                    for t_sum in [base - d1i, base, base + d1i] {
                        if t_sum.abs() > d1i {
                            continue;
                        }
                        let valid = delta.iter().zip(steps.iter_mut()).all(|(&dc, s)| {
                            let q = dc + t_sum;
                            *s = q / d1i;
                            q % d1i == 0 && (-1..=1).contains(s)
                        });
                        if valid && steps.iter().sum::<i32>() == t_sum {
                            transfer += self.path_weight(src as usize, dst as usize, &steps);
                        }
                    }
                    total += f64::from(wd) * f64::from(ws) * transfer;
                }
            }
            out.push(total as f32);
        }
        out
    }

    /// Blur transfer from `src` to `dst` along one step sequence, zero if the
    /// path leaves the lattice.
    fn path_weight(&self, src: usize, dst: usize, steps: &[i32]) -> f64 {
        let d1 = self.dim + 1;
        let mut cur = src;
        let mut weight = 1.0f64;
        for (j, &t) in steps.iter().enumerate() {
            if t == 0 {
                weight *= 0.5;
                continue;
            }
            let slot = (cur * d1 + j) * 2 + usize::from(t < 0);
            let next = self.neighbors[slot];
            if next == MISSING {
                return 0.0;
            }
            cur = next as usize;
            weight *= 0.25;
        }
        if cur == dst {
            weight
        } else {
            0.0
        }
    }
}
