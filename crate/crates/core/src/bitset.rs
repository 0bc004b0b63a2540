//! Fixed-size pixel bitsets indexed in row-major order.

/// A set of pixel indices in `0..len`, stored as packed 64-bit words.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PixelSet {
    len: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for PixelSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PixelSet")
            .field("len", &self.len)
            .field("count", &self.count())
            .finish()
    }
}

impl PixelSet {
    pub fn new(len: usize) -> Self {
        PixelSet {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn full(len: usize) -> Self {
        let mut s = PixelSet::new(len);
        for i in 0..len {
            s.insert(i);
        }
        s
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut s = PixelSet::new(len);
        for i in indices {
            s.insert(i);
        }
        s
    }

    /// Capacity of the universe, i.e. `H * W`.
    pub fn universe(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i >> 6] >> (i & 63) & 1 == 1
    }

    /// Inserts `i`, returning true if it was not already present.
    #[inline]
    pub fn insert(&mut self, i: usize) -> bool {
        debug_assert!(i < self.len);
        let word = &mut self.words[i >> 6];
        let bit = 1u64 << (i & 63);
        let fresh = *word & bit == 0;
        *word |= bit;
        fresh
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn union_with(&mut self, other: &PixelSet) {
        assert_eq!(self.len, other.len, "pixel sets over different universes");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn intersection_count(&self, other: &PixelSet) -> usize {
        self.intersection_count_in(other, 0..self.words.len())
    }

    /// Range of words holding set bits; empty for an empty set.
    pub(crate) fn word_span(&self) -> std::ops::Range<usize> {
        match self.words.iter().position(|&w| w != 0) {
            None => 0..0,
            Some(first) => {
                let last = self.words.iter().rposition(|&w| w != 0).unwrap_or(first);
                first..last + 1
            }
        }
    }

    /// Intersection size counting only the given word range.
    pub(crate) fn intersection_count_in(&self, other: &PixelSet, words: std::ops::Range<usize>) -> usize {
        assert_eq!(self.len, other.len, "pixel sets over different universes");
        self.words[words.clone()]
            .iter()
            .zip(&other.words[words])
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn is_subset(&self, other: &PixelSet) -> bool {
        self.len == other.len && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Ascending iterator over member indices.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let tz = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + tz)
                }
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_count_iter() {
        let mut s = PixelSet::new(130);
        assert!(s.insert(0));
        assert!(s.insert(64));
        assert!(s.insert(129));
        assert!(!s.insert(64));
        assert_eq!(s.count(), 3);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 64, 129]);
        assert!(s.contains(129) && !s.contains(128));
    }

    #[test]
    fn union_and_intersection() {
        let a = PixelSet::from_indices(100, [1, 2, 3, 70]);
        let b = PixelSet::from_indices(100, [3, 70, 99]);
        assert_eq!(a.intersection_count(&b), 2);
        let mut u = a.clone();
        u.union_with(&b);
        assert_eq!(u.count(), 5);
        assert!(a.is_subset(&u) && b.is_subset(&u) && !u.is_subset(&a));
    }

    #[test]
    fn word_span_bounds_set_bits() {
        assert_eq!(PixelSet::new(300).word_span(), 0..0);
        let a = PixelSet::from_indices(300, [70, 200]);
        assert_eq!(a.word_span(), 1..4);
        let b = PixelSet::from_indices(300, [70, 71, 299]);
        assert_eq!(a.intersection_count_in(&b, 1..2), 1);
        assert_eq!(a.intersection_count(&b), 1);
    }

    #[test]
    fn full_set() {
        assert_eq!(PixelSet::full(65).count(), 65);
        assert!(PixelSet::new(10).is_empty());
    }
}
