//! Region merging and projection onto a single-assignment map.
//!
//! Two regions are mergeable when their intersection covers at least
//! `overlap_threshold` of the smaller one. Chains of mergeable regions are
//! found by depth-first search over the mergeability matrix and each chain is
//! replaced by the union of its members.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::bitset::PixelSet;
use crate::error::{Error, Result};
use crate::grow::{channel_abs_sum, Region, RegionSet};
use crate::imgio::{Image, RegionMap};
use crate::par::Execution;
use crate::topology::{neighbors_into, Coord, NeighborSpec, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub overlap_threshold: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig { overlap_threshold: 0.1 }
    }
}

impl MergeConfig {
    pub fn new(overlap_threshold: f64) -> Result<Self> {
        if !(overlap_threshold > 0.0 && overlap_threshold <= 1.0) {
            return Err(Error::Spec(format!(
                "overlap threshold {overlap_threshold} outside (0, 1]"
            )));
        }
        Ok(MergeConfig { overlap_threshold })
    }
}

/// Symmetric boolean relation over region indices; the diagonal is set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl MergeMatrix {
    pub fn identity(n: usize) -> Self {
        let mut bits = vec![false; n * n];
        for i in 0..n {
            bits[i * n + i] = true;
        }
        MergeMatrix { n, bits }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        if i != j {
            self.bits[i * self.n + j] = value;
            self.bits[j * self.n + i] = value;
        }
    }

    /// Number of mergeable unordered pairs.
    pub fn edge_count(&self) -> usize {
        (0..self.n)
            .map(|i| (i + 1..self.n).filter(|&j| self.get(i, j)).count())
            .sum()
    }

    /// Connected components by iterative depth-first search, each sorted,
    /// ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut out = Vec::new();
        for root in 0..self.n {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let mut comp = Vec::new();
            let mut stack = vec![root];
            while let Some(i) = stack.pop() {
                comp.push(i);
                for j in (0..self.n).rev() {
                    if !seen[j] && self.get(i, j) {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// Size and occupied word range of a region's pixel set.
struct Extent {
    len: usize,
    span: Range<usize>,
}

/// `|A ∩ B| / min(|A|, |B|) >= t` on exact pixel counts.
fn mergeable(a: &PixelSet, ea: &Extent, b: &PixelSet, eb: &Extent, threshold: f64) -> bool {
    let smaller = ea.len.min(eb.len);
    if smaller == 0 {
        return false;
    }
    let span = ea.span.start.max(eb.span.start)..ea.span.end.min(eb.span.end);
    let shared = if span.is_empty() {
        0
    } else {
        a.intersection_count_in(b, span)
    };
    shared as f64 / smaller as f64 >= threshold
}

pub fn mergeability(rs: &RegionSet, cfg: &MergeConfig) -> MergeMatrix {
    mergeability_with(rs, cfg, Execution::Serial)
}

/// Like [`mergeability`], with rows computed under `exec`.
pub fn mergeability_with(rs: &RegionSet, cfg: &MergeConfig, exec: Execution) -> MergeMatrix {
    let n = rs.len();
    let extents: Vec<Extent> = rs
        .regions
        .iter()
        .map(|r| Extent {
            len: r.len(),
            span: r.pixels.word_span(),
        })
        .collect();
    let rows: Vec<usize> = (0..n).collect();
    let upper = exec.map(&rows, |&i| {
        (i + 1..n)
            .filter(|&j| {
                mergeable(
                    &rs.regions[i].pixels,
                    &extents[i],
                    &rs.regions[j].pixels,
                    &extents[j],
                    cfg.overlap_threshold,
                )
            })
            .collect::<Vec<_>>()
    });
    let mut m = MergeMatrix::identity(n);
    for (i, js) in upper.into_iter().enumerate() {
        for j in js {
            m.set(i, j, true);
        }
    }
    m
}

/// Replaces every mergeability component with the union of its members.
///
/// The merged region keeps the smallest member id and the seed of its
/// largest member (ties to the smaller id).
pub fn merge_chains(rs: &RegionSet, m: &MergeMatrix) -> RegionSet {
    assert_eq!(m.len(), rs.len(), "matrix built from a different region set");
    let mut out = RegionSet::empty(rs.height, rs.width, rs.config.clone());
    for comp in m.components() {
        let members: Vec<&Region> = comp.iter().map(|&i| &rs.regions[i]).collect();
        let id = members.iter().map(|r| r.id).min().expect("non-empty component");
        let rep = members
            .iter()
            .max_by(|a, b| a.len().cmp(&b.len()).then(b.id.cmp(&a.id)))
            .expect("non-empty component");
        let mut pixels = PixelSet::new(rs.height * rs.width);
        for r in &members {
            pixels.union_with(&r.pixels);
        }
        out.push(Region {
            id,
            seed: rep.seed,
            seed_color: rep.seed_color,
            pixels,
        });
    }
    out.regions.sort_by_key(|r| r.id);
    out
}

/// Projects a region set onto a map with ids `1..=N` in region order.
///
/// A pixel claimed by several regions goes to the one whose seed colour is
/// nearest to the pixel's colour in `img`, ties to the earlier region.
/// Uncovered pixels stay 0.
pub fn resolve_overlaps(rs: &RegionSet, img: &Image) -> Result<RegionMap> {
    Error::check_dims(rs.dims(), img.dims())?;
    let mut best: Vec<(u32, u32)> = vec![(u32::MAX, 0); rs.height * rs.width];
    for (k, r) in rs.regions.iter().enumerate() {
        let label = k as u32 + 1;
        for i in r.pixels.iter() {
            let d = channel_abs_sum(r.seed_color, img.at(i));
            if d < best[i].0 {
                best[i] = (d, label);
            }
        }
    }
    let ids = best.into_iter().map(|(_, id)| id).collect();
    RegionMap::from_ids(rs.height, rs.width, ids)
}

/// Assigns every unassigned pixel the id of its nearest assigned pixel
/// (8-connected BFS distance, ties to the smaller id). Assigned pixels are
/// never changed. A map with no assigned pixels is returned unchanged.
pub fn fill_holes(rm: &RegionMap) -> RegionMap {
    let mut out = rm.clone();
    if rm.max_id() == 0 {
        return out;
    }
    let (h, w) = rm.dims();
    let spec = NeighborSpec::new(1, Topology::Cartesian);
    let mut frontier: Vec<usize> = (0..h * w).filter(|&i| rm.ids()[i] != 0).collect();
    // Ring in which each pixel was claimed; 0 = original or unclaimed.
    let mut ring = vec![0u32; h * w];
    let mut round = 0u32;
    let mut buf = Vec::with_capacity(8);
    while !frontier.is_empty() {
        round += 1;
        let ids = out.ids_mut();
        let mut next = Vec::new();
        for &i in &frontier {
            let id = ids[i];
            neighbors_into(Coord::from_index(i, w), spec, h, w, &mut buf);
            for n in &buf {
                let j = n.index(w);
                if ids[j] == 0 {
                    ids[j] = id;
                    ring[j] = round;
                    next.push(j);
                } else if ring[j] == round && id < ids[j] {
                    ids[j] = id;
                }
            }
        }
        frontier = next;
    }
    out
}
