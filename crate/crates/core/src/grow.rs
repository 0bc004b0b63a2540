//! Dual-threshold seeded region growing.
//!
//! A pixel joins a region when it is adjacent (k = 1) to an admitted pixel
//! whose colour is within `tau_l` of it, and its own colour is within `tau_s`
//! of the region's seed. Seeds come from an equidistant candidate grid that
//! is filtered by window overlap with already-covered pixels and nudged off
//! Sobel edges by a seeded random walk. Growth itself ignores prior
//! membership, so regions may overlap.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitset::PixelSet;
use crate::error::{Error, Result};
use crate::imgio::{sobel_edges, EdgeMap, Image, Rgb8};
use crate::topology::{neighbors_into, window_coords, Coord, NeighborSpec, Topology};

/// Local and seed colour-distance thresholds, in mean-absolute-channel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub tau_l: u32,
    pub tau_s: u32,
}

impl ThresholdPair {
    pub fn new(tau_l: u32, tau_s: u32) -> Self {
        ThresholdPair { tau_l, tau_s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SeedStrategy {
    /// Equidistant candidates with overlap avoidance and edge displacement.
    GridPromotion,
    /// `n_seeds` uniformly drawn seeds, no promotion criteria.
    Random { n_seeds: usize },
}

impl std::str::FromStr for SeedStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "grid" {
            return Ok(SeedStrategy::GridPromotion);
        }
        match s.strip_prefix("random:").map(str::parse::<usize>) {
            Some(Ok(n_seeds)) => Ok(SeedStrategy::Random { n_seeds }),
            _ => Err(format!("expected `grid` or `random:N`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowConfig {
    pub thresholds: ThresholdPair,
    pub topology: Topology,
    /// Candidate seeds per axis.
    pub seed_grid: usize,
    /// Radius of the overlap-avoidance window, 2..=6.
    pub seed_window_k: usize,
    /// Sobel binarization cut as a fraction of the maximum magnitude.
    pub edge_fraction: f64,
    pub max_displacement_steps: u32,
    pub prng_seed: u64,
    pub seed_strategy: SeedStrategy,
}

impl Default for GrowConfig {
    fn default() -> Self {
        GrowConfig {
            thresholds: ThresholdPair::new(10, 10),
            topology: Topology::Modular,
            seed_grid: 32,
            seed_window_k: 2,
            edge_fraction: 0.25,
            max_displacement_steps: 20,
            prng_seed: 0,
            seed_strategy: SeedStrategy::GridPromotion,
        }
    }
}

impl GrowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seed_grid == 0 {
            return Err(Error::Spec("seed_grid must be at least 1".into()));
        }
        if !(2..=6).contains(&self.seed_window_k) {
            return Err(Error::Spec(format!(
                "seed_window_k {} outside 2..=6",
                self.seed_window_k
            )));
        }
        if !(self.edge_fraction > 0.0 && self.edge_fraction <= 1.0) {
            return Err(Error::Spec(format!(
                "edge_fraction {} outside (0, 1]",
                self.edge_fraction
            )));
        }
        Ok(())
    }

    pub fn with_thresholds(&self, thresholds: ThresholdPair) -> Self {
        GrowConfig {
            thresholds,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Region {
    pub id: u32,
    pub seed: Coord,
    pub seed_color: Rgb8,
    pub pixels: PixelSet,
}

impl Region {
    pub fn len(&self) -> usize {
        self.pixels.count()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Regions grown over one image. Regions may overlap; `covered` is their union.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    pub regions: Vec<Region>,
    pub covered: PixelSet,
    pub height: usize,
    pub width: usize,
    pub config: GrowConfig,
}

impl RegionSet {
    pub fn empty(height: usize, width: usize, config: GrowConfig) -> Self {
        RegionSet {
            regions: Vec::new(),
            covered: PixelSet::new(height * width),
            height,
            width,
            config,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn push(&mut self, region: Region) {
        self.covered.union_with(&region.pixels);
        self.regions.push(region);
    }
}

/// Sum of absolute channel differences, i.e. three times the colour distance.
#[inline]
pub fn channel_abs_sum(a: Rgb8, b: Rgb8) -> u32 {
    a.iter()
        .zip(&b)
        .map(|(&x, &y)| (x as i32 - y as i32).unsigned_abs())
        .sum()
}

/// Mean absolute per-channel difference.
pub fn color_distance(a: Rgb8, b: Rgb8) -> f64 {
    channel_abs_sum(a, b) as f64 / 3.0
}

/// `color_distance(a, b) <= tau`, decided on integers.
#[inline]
pub fn within(a: Rgb8, b: Rgb8, tau: u32) -> bool {
    channel_abs_sum(a, b) <= 3 * tau
}

/// Equidistant candidates: the pixel containing each cell center of an
/// `n x n` partition, row-major.
pub fn candidate_grid(height: usize, width: usize, n_per_axis: usize) -> Vec<Coord> {
    assert!(n_per_axis >= 1, "candidate grid needs at least one cell per axis");
    let place = |i: usize, len: usize| -> usize {
        let pos = ((i as f64 + 0.5) * len as f64 / n_per_axis as f64).floor() as usize;
        pos.min(len - 1)
    };
    let mut out = Vec::with_capacity(n_per_axis * n_per_axis);
    for i in 0..n_per_axis {
        let h = place(i, height);
        for j in 0..n_per_axis {
            out.push(Coord::new(h, place(j, width)));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// The seed window intersects covered pixels.
    Overlap,
    /// The displacement walk left a Cartesian image.
    LeftImage,
    /// Still on an edge after the step budget.
    StuckOnEdge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Promotion {
    Promoted(Coord),
    Rejected(Rejection),
}

const DIRECTIONS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

fn window_clear(c: Coord, covered: &PixelSet, cfg: &GrowConfig, height: usize, width: usize) -> bool {
    window_coords(c, cfg.seed_window_k, cfg.topology, height, width)
        .into_iter()
        .all(|p| !covered.contains(p.index(width)))
}

/// Applies the seed promotion criteria to candidate `c`.
///
/// The PRNG is only consumed while walking off an edge.
pub fn promote_seed<R: Rng + ?Sized>(
    c: Coord,
    covered: &PixelSet,
    edges: &EdgeMap,
    cfg: &GrowConfig,
    rng: &mut R,
) -> Promotion {
    let (height, width) = edges.dims();
    if !window_clear(c, covered, cfg, height, width) {
        return Promotion::Rejected(Rejection::Overlap);
    }
    let mut pos = c;
    let mut steps = 0;
    while edges.is_edge(pos) {
        if steps == cfg.max_displacement_steps {
            return Promotion::Rejected(Rejection::StuckOnEdge);
        }
        let (dh, dw) = DIRECTIONS[rng.random_range(0..DIRECTIONS.len())];
        match (
            cfg.topology.offset(pos.h, dh, height),
            cfg.topology.offset(pos.w, dw, width),
        ) {
            (Some(h), Some(w)) => pos = Coord::new(h, w),
            _ => return Promotion::Rejected(Rejection::LeftImage),
        }
        steps += 1;
    }
    if pos != c && !window_clear(pos, covered, cfg, height, width) {
        return Promotion::Rejected(Rejection::Overlap);
    }
    Promotion::Promoted(pos)
}

/// Grows one region from `seed` by breadth-first search over k = 1 neighbors.
pub fn grow_region(img: &Image, id: u32, seed: Coord, tp: ThresholdPair, topology: Topology) -> Region {
    let mut scratch = GrowScratch::default();
    grow_with(img, id, seed, tp, topology, &mut scratch)
}

#[derive(Default)]
struct GrowScratch {
    queue: VecDeque<usize>,
    neighbors: Vec<Coord>,
}

fn grow_with(
    img: &Image,
    id: u32,
    seed: Coord,
    tp: ThresholdPair,
    topology: Topology,
    scratch: &mut GrowScratch,
) -> Region {
    let (height, width) = img.dims();
    let seed_color = img.get(seed);
    let mut pixels = PixelSet::new(height * width);
    let spec = NeighborSpec::new(1, topology);
    let (local, global) = (3 * tp.tau_l, 3 * tp.tau_s);
    let start = seed.index(width);
    pixels.insert(start);
    scratch.queue.clear();
    scratch.queue.push_back(start);
    while let Some(i) = scratch.queue.pop_front() {
        let here = img.at(i);
        neighbors_into(Coord::from_index(i, width), spec, height, width, &mut scratch.neighbors);
        for n in &scratch.neighbors {
            let j = n.index(width);
            if pixels.contains(j) {
                continue;
            }
            let cand = img.at(j);
            if channel_abs_sum(here, cand) <= local && channel_abs_sum(cand, seed_color) <= global {
                pixels.insert(j);
                scratch.queue.push_back(j);
            }
        }
    }
    Region {
        id,
        seed,
        seed_color,
        pixels,
    }
}

/// Segments `img` into (possibly overlapping) regions.
pub fn segment(img: &Image, cfg: &GrowConfig) -> Result<RegionSet> {
    cfg.validate()?;
    let (height, width) = img.dims();
    let mut rs = RegionSet::empty(height, width, cfg.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.prng_seed);
    let mut scratch = GrowScratch::default();
    let mut next_id = 1u32;
    let mut grow = |rs: &mut RegionSet, seed: Coord| {
        let region = grow_with(img, next_id, seed, cfg.thresholds, cfg.topology, &mut scratch);
        next_id += 1;
        rs.push(region);
    };
    match cfg.seed_strategy {
        SeedStrategy::GridPromotion => {
            let edges = sobel_edges(img, cfg.edge_fraction)?;
            for c in candidate_grid(height, width, cfg.seed_grid) {
                if let Promotion::Promoted(seed) = promote_seed(c, &rs.covered, &edges, cfg, &mut rng) {
                    grow(&mut rs, seed);
                }
            }
        }
        SeedStrategy::Random { n_seeds } => {
            for _ in 0..n_seeds {
                let seed = Coord::new(rng.random_range(0..height), rng.random_range(0..width));
                // A seed inside an existing region would only regrow a copy of it.
                if !rs.covered.contains(seed.index(width)) {
                    grow(&mut rs, seed);
                }
            }
        }
    }
    Ok(rs)
}
