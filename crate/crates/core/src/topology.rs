//! Pixel coordinates and neighborhoods.
//!
//! Two topologies are supported: the usual Cartesian grid, where offsets that
//! leave the image are dropped, and a modular (toroidal) grid where rows and
//! columns wrap around. Offsets are always enumerated row-major (row offset
//! ascending, then column offset ascending), which fixes traversal order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub h: usize,
    pub w: usize,
}

impl Coord {
    pub const fn new(h: usize, w: usize) -> Self {
        Coord { h, w }
    }

    #[inline]
    pub fn index(self, width: usize) -> usize {
        self.h * width + self.w
    }

    #[inline]
    pub fn from_index(i: usize, width: usize) -> Self {
        Coord {
            h: i / width,
            w: i % width,
        }
    }
}

impl From<(usize, usize)> for Coord {
    fn from((h, w): (usize, usize)) -> Self {
        Coord { h, w }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    Cartesian,
    Modular,
}

impl Topology {
    pub fn as_str(self) -> &'static str {
        match self {
            Topology::Cartesian => "cartesian",
            Topology::Modular => "modular",
        }
    }

    /// Applies a signed offset along an axis of length `len`.
    #[inline]
    pub fn offset(self, pos: usize, delta: isize, len: usize) -> Option<usize> {
        match self {
            Topology::Cartesian => {
                let p = pos as isize + delta;
                (p >= 0 && (p as usize) < len).then_some(p as usize)
            }
            Topology::Modular => Some((pos as isize + delta).rem_euclid(len as isize) as usize),
        }
    }
}

impl std::str::FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cartesian" => Ok(Topology::Cartesian),
            "modular" => Ok(Topology::Modular),
            other => Err(format!("unknown topology `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NeighborSpec {
    pub k: usize,
    pub topology: Topology,
}

impl NeighborSpec {
    pub fn new(k: usize, topology: Topology) -> Self {
        assert!(k >= 1, "connectivity radius must be at least 1");
        NeighborSpec { k, topology }
    }
}

/// Neighbors of `c` within radius `spec.k`, excluding `c` itself.
///
/// Under the modular topology, offsets that wrap onto the same pixel (images
/// narrower than `2k + 1`) are reported once, and a wrap back onto `c` is
/// dropped.
pub fn neighbors(c: Coord, spec: NeighborSpec, height: usize, width: usize) -> Vec<Coord> {
    let mut out = Vec::with_capacity((2 * spec.k + 1).pow(2) - 1);
    neighbors_into(c, spec, height, width, &mut out);
    out
}

/// Buffer-reusing form of [`neighbors`]. `out` is cleared first.
pub fn neighbors_into(c: Coord, spec: NeighborSpec, height: usize, width: usize, out: &mut Vec<Coord>) {
    out.clear();
    collect(c, spec.k, spec.topology, height, width, false, out);
}

/// The `(2k+1)²` window around `c`, center included, deduplicated.
pub fn window_coords(c: Coord, k: usize, topology: Topology, height: usize, width: usize) -> Vec<Coord> {
    let mut out = Vec::with_capacity((2 * k + 1).pow(2));
    collect(c, k, topology, height, width, true, &mut out);
    out
}

fn collect(
    c: Coord,
    k: usize,
    topology: Topology,
    height: usize,
    width: usize,
    include_center: bool,
    out: &mut Vec<Coord>,
) {
    debug_assert!(c.h < height && c.w < width);
    let k = k as isize;
    // Wrapping can only produce repeats when the window spans an axis.
    let may_repeat = topology == Topology::Modular && (2 * k + 1 > height as isize || 2 * k + 1 > width as isize);
    for i in -k..=k {
        let Some(h) = topology.offset(c.h, i, height) else {
            continue;
        };
        for j in -k..=k {
            if i == 0 && j == 0 && !include_center {
                continue;
            }
            let Some(w) = topology.offset(c.w, j, width) else {
                continue;
            };
            let n = Coord { h, w };
            if may_repeat && ((!include_center && n == c) || out.contains(&n)) {
                continue;
            }
            out.push(n);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(h: usize, w: usize) -> Coord {
        Coord::new(h, w)
    }

    #[test]
    fn cartesian_corner_is_clipped_in_row_major_order() {
        let n = neighbors(c(0, 0), NeighborSpec::new(1, Topology::Cartesian), 4, 4);
        assert_eq!(n, vec![c(0, 1), c(1, 0), c(1, 1)]);
    }

    #[test]
    fn modular_corner_wraps() {
        let n = neighbors(c(0, 0), NeighborSpec::new(1, Topology::Modular), 4, 4);
        assert_eq!(n.len(), 8);
        for expected in [c(3, 3), c(3, 0), c(0, 3)] {
            assert!(n.contains(&expected));
        }
        assert_eq!(n[0], c(3, 3));
    }

    #[test]
    fn modular_single_row_dedups() {
        let n = neighbors(c(0, 0), NeighborSpec::new(1, Topology::Modular), 1, 4);
        let mut sorted = n.clone();
        sorted.sort();
        assert_eq!(sorted, vec![c(0, 1), c(0, 3)]);
    }

    #[test]
    fn windows() {
        assert_eq!(window_coords(c(4, 4), 2, Topology::Cartesian, 10, 10).len(), 25);
        assert_eq!(window_coords(c(0, 0), 2, Topology::Cartesian, 8, 8).len(), 9);
        let m = window_coords(c(1, 2), 2, Topology::Modular, 4, 4);
        assert_eq!(m.len(), 16);
        assert!(m.contains(&c(1, 2)));
    }

    fn topo() -> impl Strategy<Value = Topology> {
        prop_oneof![Just(Topology::Cartesian), Just(Topology::Modular)]
    }

    proptest! {
        #[test]
        fn modular_count_when_window_fits(k in 1usize..4, extra_h in 0usize..6, extra_w in 0usize..6, seed in any::<u64>()) {
            let (hh, ww) = (2 * k + 1 + extra_h, 2 * k + 1 + extra_w);
            let p = c((seed as usize) % hh, (seed as usize / 7) % ww);
            let n = neighbors(p, NeighborSpec::new(k, Topology::Modular), hh, ww);
            prop_assert_eq!(n.len(), (2 * k + 1).pow(2) - 1);
        }

        #[test]
        fn relation_is_symmetric(k in 1usize..3, hh in 1usize..7, ww in 1usize..7, t in topo()) {
            let spec = NeighborSpec::new(k, t);
            for a in 0..hh * ww {
                let ca = Coord::from_index(a, ww);
                for cb in neighbors(ca, spec, hh, ww) {
                    prop_assert!(neighbors(cb, spec, hh, ww).contains(&ca));
                    prop_assert!(cb != ca);
                }
            }
        }

        #[test]
        fn interior_sets_coincide(k in 1usize..3, hh in 7usize..12, ww in 7usize..12, ph in 0usize..12, pw in 0usize..12) {
            let p = c(k + ph % (hh - 2 * k), k + pw % (ww - 2 * k));
            let a = neighbors(p, NeighborSpec::new(k, Topology::Cartesian), hh, ww);
            let b = neighbors(p, NeighborSpec::new(k, Topology::Modular), hh, ww);
            prop_assert_eq!(a, b);
        }
    }
}
