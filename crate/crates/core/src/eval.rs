//! Scoring region proposals against a binary ground truth.
//!
//! Two views are provided. The weighted-similarity view scores each region
//! as the better of "all foreground" and "all background" under a chosen
//! metric and averages the scores weighted by region size over the whole
//! image. The composed-mask view assigns each region its majority class,
//! projects regions to a single-assignment map with holes filled, and
//! computes ordinary pixel metrics on the resulting mask.

use serde::{Deserialize, Serialize};

use crate::bitset::PixelSet;
use crate::error::{Error, Result};
use crate::grow::{Region, RegionSet};
use crate::imgio::{BinaryMask, Image, RegionMap};
use crate::merge::{fill_holes, resolve_overlaps};
use crate::pipeline::{run_pipeline, AblationSpec, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMetric {
    Accuracy,
    Precision,
    Recall,
    F1,
    #[serde(rename = "iou")]
    IoU,
}

impl SimMetric {
    pub const ALL: [SimMetric; 5] = [
        SimMetric::Accuracy,
        SimMetric::Precision,
        SimMetric::Recall,
        SimMetric::F1,
        SimMetric::IoU,
    ];
}

impl std::str::FromStr for SimMetric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "accuracy" => Ok(SimMetric::Accuracy),
            "precision" => Ok(SimMetric::Precision),
            "recall" => Ok(SimMetric::Recall),
            "f1" => Ok(SimMetric::F1),
            "iou" => Ok(SimMetric::IoU),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

/// Binary confusion counts with foreground as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Score of the prediction under `metric`. `degenerate` is used whenever
    /// the metric's denominator is zero.
    fn score(&self, metric: SimMetric, degenerate: f64) -> f64 {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                degenerate
            } else {
                num as f64 / den as f64
            }
        };
        match metric {
            SimMetric::Accuracy => ratio(self.tp + self.tn, self.total()),
            SimMetric::Precision => ratio(self.tp, self.tp + self.fp),
            SimMetric::Recall => ratio(self.tp, self.tp + self.fn_),
            SimMetric::F1 => ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
            SimMetric::IoU => ratio(self.tp, self.tp + self.fp + self.fn_),
        }
    }
}

/// Per-region score: `max(sim(all foreground), sim(all background))`.
///
/// Zero denominators score 1 for a single-class region and 0 otherwise.
/// Ties go to class 0.
pub fn region_sim(pixels: &PixelSet, gt: &BinaryMask, metric: SimMetric) -> Result<(f64, u8)> {
    check_universe(pixels, gt)?;
    let n = pixels.count();
    let pos = pixels.iter().filter(|&i| gt.at(i)).count();
    Ok(region_sim_counts(n, pos, metric))
}

fn region_sim_counts(n: usize, pos: usize, metric: SimMetric) -> (f64, u8) {
    let neg = n - pos;
    let degenerate = if pos == 0 || neg == 0 { 1.0 } else { 0.0 };
    let as_fg = Confusion {
        tp: pos,
        fp: neg,
        ..Confusion::default()
    };
    let as_bg = Confusion {
        fn_: pos,
        tn: neg,
        ..Confusion::default()
    };
    let s1 = as_fg.score(metric, degenerate);
    let s0 = as_bg.score(metric, degenerate);
    if s1 > s0 {
        (s1, 1)
    } else {
        (s0, 0)
    }
}

fn check_universe(pixels: &PixelSet, gt: &BinaryMask) -> Result<()> {
    let (h, w) = gt.dims();
    if pixels.universe() != h * w {
        return Err(Error::Precondition(format!(
            "region over {} pixels scored against a {h}x{w} mask",
            pixels.universe()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub id: u32,
    pub pixels: usize,
    pub sim: f64,
    pub class: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub metric: SimMetric,
    pub per_region: Vec<RegionScore>,
    pub image_score: f64,
    pub coverage: f64,
    pub n_regions: usize,
}

fn image_sim_of<'a>(
    regions: impl IntoIterator<Item = (u32, &'a PixelSet)>,
    covered: usize,
    gt: &BinaryMask,
    metric: SimMetric,
) -> Result<SimReport> {
    let total = gt.dims().0 * gt.dims().1;
    let mut per_region = Vec::new();
    for (id, pixels) in regions {
        let (sim, class) = region_sim(pixels, gt, metric)?;
        per_region.push(RegionScore {
            id,
            pixels: pixels.count(),
            sim,
            class,
        });
    }
    let weighted: f64 = per_region.iter().map(|r| r.pixels as f64 * r.sim).sum();
    Ok(SimReport {
        metric,
        n_regions: per_region.len(),
        per_region,
        image_score: weighted / total as f64,
        coverage: covered as f64 / total as f64,
    })
}

/// Size-weighted mean of region scores over all `H * W` pixels; uncovered
/// pixels contribute zero.
pub fn image_sim(rs: &RegionSet, gt: &BinaryMask, metric: SimMetric) -> Result<SimReport> {
    Error::check_dims(rs.dims(), gt.dims())?;
    image_sim_of(
        rs.regions.iter().map(|r| (r.id, &r.pixels)),
        rs.covered.count(),
        gt,
        metric,
    )
}

/// [`image_sim`] over the regions of a single-assignment map.
pub fn image_sim_map(rm: &RegionMap, gt: &BinaryMask, metric: SimMetric) -> Result<SimReport> {
    Error::check_dims(rm.dims(), gt.dims())?;
    let sets = rm.region_sets();
    let covered = rm.ids().len() - rm.unassigned();
    image_sim_of(
        sets.iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(|(k, s)| (k as u32 + 1, s)),
        covered,
        gt,
        metric,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub miou: f64,
}

impl PixelMetrics {
    /// Global metrics of `pred` against `gt`.
    ///
    /// Undefined precision (nothing predicted) is 1 when there is also no
    /// missed foreground and 0 otherwise; recall symmetrically. A class IoU
    /// with an empty union is 1.
    pub fn compute(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        Error::check_dims(gt.dims(), pred.dims())?;
        let mut c = Confusion::default();
        for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(Self::from_confusion(&c))
    }

    pub fn from_confusion(c: &Confusion) -> Self {
        let ratio = |num: usize, den: usize, undefined: f64| {
            if den == 0 {
                undefined
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(c.tp, c.tp + c.fp, if c.fn_ == 0 { 1.0 } else { 0.0 });
        let recall = ratio(c.tp, c.tp + c.fn_, if c.fp == 0 { 1.0 } else { 0.0 });
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let iou_fg = ratio(c.tp, c.tp + c.fp + c.fn_, 1.0);
        let iou_bg = ratio(c.tn, c.tn + c.fp + c.fn_, 1.0);
        PixelMetrics {
            accuracy: ratio(c.tp + c.tn, c.total(), 1.0),
            precision,
            recall,
            f1,
            miou: (iou_fg + iou_bg) / 2.0,
        }
    }
}

/// Majority ground-truth class of each region (ties to background).
pub fn majority_classes(regions: &[Region], gt: &BinaryMask) -> Vec<bool> {
    regions
        .iter()
        .map(|r| {
            let pos = r.pixels.iter().filter(|&i| gt.at(i)).count();
            2 * pos > r.len()
        })
        .collect()
}

/// Mask a perfect region classifier would produce, and its pixel metrics.
///
/// Regions are projected with nearest-seed-colour overlap resolution and
/// nearest-region hole filling; each pixel takes its owner's majority class.
pub fn oracle_mask(rs: &RegionSet, img: &Image, gt: &BinaryMask) -> Result<(BinaryMask, PixelMetrics)> {
    Error::check_dims(rs.dims(), gt.dims())?;
    let map = fill_holes(&resolve_overlaps(rs, img)?);
    let classes = majority_classes(&rs.regions, gt);
    let (h, w) = rs.dims();
    let pred = BinaryMask::from_fn(h, w, |c| match map.get(c) {
        0 => false,
        id => classes[id as usize - 1],
    });
    let metrics = PixelMetrics::compute(&pred, gt)?;
    Ok((pred, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub metrics: PixelMetrics,
    pub coverage: f64,
    pub n_regions: usize,
    pub tau_l: u32,
    pub tau_s: u32,
}

/// Runs each variant on `img` and scores it with [`oracle_mask`].
pub fn ablate(img: &Image, gt: &BinaryMask, variants: &[Variant], spec: &AblationSpec) -> Result<Vec<AblationRow>> {
    Error::check_dims(img.dims(), gt.dims())?;
    variants
        .iter()
        .map(|&variant| {
            let out = run_pipeline(img, &spec.pipeline_config(variant))?;
            let (_, metrics) = oracle_mask(&out.regions, img, gt)?;
            Ok(AblationRow {
                variant,
                metrics,
                coverage: crate::adapt::coverage(&out.regions),
                n_regions: out.regions.len(),
                tau_l: out.thresholds.tau_l,
                tau_s: out.thresholds.tau_s,
            })
        })
        .collect()
}

/// Aligned text rendering of ablation rows, percentages for metrics.
pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<10} {:<14} {:<9} {:<9} {:<3} {:>7} {:>9} {:>7} {:>7} {:>7} {:>7} {:>6}\n",
        "Algorithm", "Seed", "Thresh", "Neighbors", "RM", "Acc", "Precision", "Recall", "F1", "mIoU", "Pi", "N"
    );
    for r in rows {
        let v = r.variant;
        out.push_str(&format!(
            "{:<10} {:<14} {:<9} {:<9} {:<3} {:>7.2} {:>9.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>6}\n",
            v.algorithm(),
            v.seed_choice(),
            v.thresholding(),
            v.neighbors(),
            if v.merges() { "Yes" } else { "No" },
            100.0 * r.metrics.accuracy,
            100.0 * r.metrics.precision,
            100.0 * r.metrics.recall,
            100.0 * r.metrics.f1,
            100.0 * r.metrics.miou,
            100.0 * r.coverage,
            r.n_regions
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grow::GrowConfig;
    use crate::topology::Coord;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn region(id: u32, pixels: PixelSet) -> Region {
        let first = pixels.iter().next().unwrap_or(0);
        Region {
            id,
            seed: Coord::from_index(first, 10),
            seed_color: [0; 3],
            pixels,
        }
    }

    fn mask_first(n: usize, total: usize, w: usize) -> BinaryMask {
        BinaryMask::from_fn(total / w, w, |c| c.index(w) < n)
    }

    #[test]
    fn region_inside_foreground() {
        let gt = mask_first(50, 100, 10);
        let r = PixelSet::from_indices(100, 0..20);
        assert_eq!(region_sim(&r, &gt, SimMetric::IoU).unwrap(), (1.0, 1));
    }

    #[test]
    fn half_and_thirty_percent_accuracy() {
        let gt = mask_first(50, 100, 10);
        let half = PixelSet::from_indices(100, 40..60);
        assert_eq!(region_sim(&half, &gt, SimMetric::Accuracy).unwrap(), (0.5, 0));
        let thirty = PixelSet::from_indices(100, 47..57);
        let (s, c) = region_sim(&thirty, &gt, SimMetric::Accuracy).unwrap();
        assert!((s - 0.7).abs() < 1e-15);
        assert_eq!(c, 0);
    }

    #[test]
    fn pure_background_region_scores_one_everywhere() {
        let gt = mask_first(50, 100, 10);
        let r = PixelSet::from_indices(100, 60..90);
        for m in SimMetric::ALL {
            assert_eq!(region_sim(&r, &gt, m).unwrap(), (1.0, 0), "{m:?}");
        }
    }

    #[test]
    fn weighted_mean() {
        let gt = mask_first(50, 100, 10);
        let mut rs = RegionSet::empty(10, 10, GrowConfig::default());
        rs.push(region(1, PixelSet::from_indices(100, (50..100).chain(0..10))));
        rs.push(region(2, PixelSet::from_indices(100, 10..50)));
        let rep = image_sim(&rs, &gt, SimMetric::Accuracy).unwrap();
        // Region 1: 60 px, 10 foreground -> 50/60. Region 2: 40 px all foreground -> 1.
        let expected = (60.0 * (50.0 / 60.0) + 40.0) / 100.0;
        assert!((rep.image_score - expected).abs() < 1e-12);
        assert_eq!(rep.coverage, 1.0);
        assert_eq!(rep.n_regions, 2);

        // Two regions of 60 and 40 pixels scoring 1.0 and 0.5.
        let gt = BinaryMask::from_fn(10, 10, |c| (80..100).contains(&c.index(10)));
        let mut rs = RegionSet::empty(10, 10, GrowConfig::default());
        rs.push(region(1, PixelSet::from_indices(100, 0..60)));
        rs.push(region(2, PixelSet::from_indices(100, 60..100)));
        let rep = image_sim(&rs, &gt, SimMetric::Accuracy).unwrap();
        assert_eq!(rep.per_region[1].sim, 0.5);
        assert!((rep.image_score - 0.8).abs() < 1e-15);
    }

    #[test]
    fn perfect_partition_scores_one() {
        let gt = mask_first(30, 100, 10);
        let mut rs = RegionSet::empty(10, 10, GrowConfig::default());
        rs.push(region(1, PixelSet::from_indices(100, 0..30)));
        rs.push(region(2, PixelSet::from_indices(100, 30..70)));
        rs.push(region(3, PixelSet::from_indices(100, 70..100)));
        for m in SimMetric::ALL {
            assert_eq!(image_sim(&rs, &gt, m).unwrap().image_score, 1.0);
        }
        let img = Image::filled(10, 10, [0; 3]);
        let (pred, metrics) = oracle_mask(&rs, &img, &gt).unwrap();
        assert_eq!(pred, gt);
        assert_eq!(metrics.miou, 1.0);
        assert_eq!(metrics.f1, 1.0);
    }

    #[test]
    fn whole_image_region_against_thirty_percent_foreground() {
        let gt = mask_first(30, 100, 10);
        let mut rs = RegionSet::empty(10, 10, GrowConfig::default());
        rs.push(region(1, PixelSet::full(100)));
        let img = Image::filled(10, 10, [0; 3]);
        let (pred, m) = oracle_mask(&rs, &img, &gt).unwrap();
        assert_eq!(pred.count_ones(), 0);
        // tp 0, fp 0, fn 30, tn 70.
        assert!((m.accuracy - 0.7).abs() < 1e-15);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f1, 0.0);
        assert!((m.miou - 0.35).abs() < 1e-15);
    }

    #[test]
    fn empty_prediction_of_empty_truth_is_perfect() {
        let gt = BinaryMask::new(4, 4);
        let m = PixelMetrics::compute(&gt, &gt).unwrap();
        assert_eq!(
            m,
            PixelMetrics {
                accuracy: 1.0,
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                miou: 1.0
            }
        );
    }

    #[test]
    fn dimension_mismatch() {
        let gt = BinaryMask::new(4, 4);
        let rs = RegionSet::empty(5, 4, GrowConfig::default());
        assert!(matches!(
            image_sim(&rs, &gt, SimMetric::F1),
            Err(Error::Dimensions { .. })
        ));
    }

    proptest! {
        #[test]
        fn accuracy_closed_form(n in 1usize..200, frac in 0.0f64..=1.0) {
            let pos = ((n as f64) * frac).floor() as usize;
            let (s, _) = region_sim_counts(n, pos, SimMetric::Accuracy);
            let p = pos as f64 / n as f64;
            prop_assert!((s - p.max(1.0 - p)).abs() < 1e-12);
        }

        #[test]
        fn scores_in_unit_interval(n in 1usize..200, pos_frac in 0.0f64..=1.0) {
            let pos = ((n as f64) * pos_frac).floor() as usize;
            for m in SimMetric::ALL {
                let (s, _) = region_sim_counts(n, pos, m);
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }

        #[test]
        fn disjoint_sets_agree_with_their_projection(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<u32> = (0..144).map(|_| rng.random_range(0..5)).collect();
            let gt = BinaryMask::from_fn(12, 12, |_| rng.random_bool(0.4));
            let map = RegionMap::from_ids(12, 12, labels.clone()).unwrap();
            let mut rs = RegionSet::empty(12, 12, GrowConfig::default());
            for id in 1..5u32 {
                let px = PixelSet::from_indices(144, (0..144).filter(|&i| labels[i] == id));
                if !px.is_empty() {
                    rs.push(region(id, px));
                }
            }
            for m in SimMetric::ALL {
                let a = image_sim(&rs, &gt, m).unwrap();
                let b = image_sim_map(&map, &gt, m).unwrap();
                prop_assert!((a.image_score - b.image_score).abs() < 1e-12);
                prop_assert_eq!(a.coverage, b.coverage);
            }
            // Relabelling regions does not change composed-mask metrics.
            let img = Image::filled(12, 12, [0; 3]);
            let (_, m1) = oracle_mask(&rs, &img, &gt).unwrap();
            let mut rev = rs.clone();
            for (k, r) in rev.regions.iter_mut().enumerate() {
                r.id = 100 - k as u32;
            }
            let (_, m2) = oracle_mask(&rev, &img, &gt).unwrap();
            prop_assert_eq!(m1, m2);
        }
    }
}
