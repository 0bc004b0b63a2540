//! Classifier training data from region proposals.
//!
//! Regions are labelled by their foreground purity, with impure regions
//! flagged as ambiguous. RegionMix samples are unions of a few randomly
//! chosen regions of one image, labelled by the fraction of the union that
//! lies in the ground-truth foreground.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitset::PixelSet;
use crate::error::{Error, Result};
use crate::grow::RegionSet;
use crate::imgio::{create_writer, save_mask, write_json, BinaryMask};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConfig {
    pub max_members: usize,
    pub samples_per_image: usize,
    pub prng_seed: u64,
    pub p_hi: f64,
    pub p_lo: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            max_members: 5,
            samples_per_image: 16,
            prng_seed: 0,
            p_hi: 0.95,
            p_lo: 0.05,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_members == 0 {
            return Err(Error::Spec("max_members must be at least 1".into()));
        }
        if !(0.0 <= self.p_lo && self.p_lo < self.p_hi && self.p_hi <= 1.0) {
            return Err(Error::Spec(format!(
                "purity cutoffs must satisfy 0 <= p_lo < p_hi <= 1, got {} / {}",
                self.p_lo, self.p_hi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionLabel {
    Background,
    Blade,
    Ambiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledRegion {
    pub id: u32,
    pub label: RegionLabel,
    pub purity: f64,
}

fn purity(pixels: &PixelSet, gt: &BinaryMask) -> f64 {
    let n = pixels.count();
    if n == 0 {
        return 0.0;
    }
    pixels.iter().filter(|&i| gt.at(i)).count() as f64 / n as f64
}

/// Labels every region; none are dropped.
pub fn label_regions(rs: &RegionSet, gt: &BinaryMask, cfg: &MixConfig) -> Result<Vec<LabeledRegion>> {
    Error::check_dims(rs.dims(), gt.dims())?;
    cfg.validate()?;
    Ok(rs
        .regions
        .iter()
        .map(|r| {
            let p = purity(&r.pixels, gt);
            let label = if p >= cfg.p_hi {
                RegionLabel::Blade
            } else if p <= cfg.p_lo {
                RegionLabel::Background
            } else {
                RegionLabel::Ambiguous
            };
            LabeledRegion {
                id: r.id,
                label,
                purity: p,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixSample {
    pub mask: BinaryMask,
    /// Foreground fraction of the union.
    pub label: f64,
    /// Ascending ids of the member regions.
    pub member_ids: Vec<u32>,
    pub source_image: String,
}

/// Draws one composite sample: a uniform member count in
/// `1..=min(N, max_members)`, then that many distinct regions.
pub fn synth_mix<R: Rng + ?Sized>(
    rs: &RegionSet,
    gt: &BinaryMask,
    cfg: &MixConfig,
    source_image: &str,
    rng: &mut R,
) -> Result<MixSample> {
    Error::check_dims(rs.dims(), gt.dims())?;
    cfg.validate()?;
    let n = rs.len();
    if n == 0 {
        return Err(Error::Precondition("RegionMix needs at least one region".into()));
    }
    let m = rng.random_range(1..=n.min(cfg.max_members));
    let mut picked = sample(rng, n, m).into_vec();
    picked.sort_unstable();
    let mut union = PixelSet::new(rs.height * rs.width);
    for &i in &picked {
        union.union_with(&rs.regions[i].pixels);
    }
    let label = purity(&union, gt);
    let mut member_ids: Vec<u32> = picked.iter().map(|&i| rs.regions[i].id).collect();
    member_ids.sort_unstable();
    Ok(MixSample {
        mask: BinaryMask::from_pixel_set(rs.height, rs.width, &union),
        label,
        member_ids,
        source_image: source_image.to_owned(),
    })
}

/// PRNG for sample `index`: the config seed with `index` as the ChaCha stream.
pub fn sample_rng(prng_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(prng_seed);
    rng.set_stream(index);
    rng
}

/// `cfg.samples_per_image` samples, each drawn from its own PRNG stream so
/// the output does not depend on scheduling.
pub fn synth_batch(
    rs: &RegionSet,
    gt: &BinaryMask,
    cfg: &MixConfig,
    source_image: &str,
    exec: Execution,
) -> Result<Vec<MixSample>> {
    let indices: Vec<u64> = (0..cfg.samples_per_image as u64).collect();
    exec.map(&indices, |&i| {
        synth_mix(rs, gt, cfg, source_image, &mut sample_rng(cfg.prng_seed, i))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportMode {
    Binary,
    Regionmix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportSample {
    pub image: String,
    pub mask: BinaryMask,
    pub label: f64,
    pub member_ids: Vec<u32>,
}

impl From<MixSample> for ExportSample {
    fn from(s: MixSample) -> Self {
        ExportSample {
            image: s.source_image,
            mask: s.mask,
            label: s.label,
            member_ids: s.member_ids,
        }
    }
}

/// One sample per Blade or Background region, labelled 1.0 / 0.0.
pub fn binary_samples(rs: &RegionSet, labels: &[LabeledRegion], source_image: &str) -> Vec<ExportSample> {
    rs.regions
        .iter()
        .zip(labels)
        .filter_map(|(r, l)| {
            let label = match l.label {
                RegionLabel::Blade => 1.0,
                RegionLabel::Background => 0.0,
                RegionLabel::Ambiguous => return None,
            };
            Some(ExportSample {
                image: source_image.to_owned(),
                mask: BinaryMask::from_pixel_set(rs.height, rs.width, &r.pixels),
                label,
                member_ids: vec![r.id],
            })
        })
        .collect()
}

/// One JSONL line of the sample manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image: String,
    pub mask_file: String,
    pub label: f64,
    pub member_ids: Vec<u32>,
    pub mode: ExportMode,
}

/// Header written as `dataset.json` beside `samples.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub mode: ExportMode,
    pub n_samples: usize,
    pub samples_file: String,
    pub mask_dir: String,
}

pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const HEADER_FILE: &str = "dataset.json";
const MASK_DIR: &str = "masks";

/// Writes masks, `samples.jsonl` and `dataset.json` under `out_dir`.
///
/// Mask files are `masks/<index>.png` with a running index; `image` fields
/// are written as given.
pub fn export_dataset(samples: &[ExportSample], out_dir: &Path, mode: ExportMode) -> Result<DatasetManifest> {
    let mask_dir = out_dir.join(MASK_DIR);
    fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;
    let jsonl = out_dir.join(SAMPLES_FILE);
    let mut writer = create_writer(&jsonl)?;
    for (i, s) in samples.iter().enumerate() {
        let mask_file = format!("{MASK_DIR}/{i:06}.png");
        save_mask(&s.mask, out_dir.join(&mask_file))?;
        let record = SampleRecord {
            image: s.image.clone(),
            mask_file,
            label: s.label,
            member_ids: s.member_ids.clone(),
            mode,
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n").map_err(|e| Error::io(&jsonl, e))?;
    }
    writer.flush().map_err(|e| Error::io(&jsonl, e))?;
    let manifest = DatasetManifest {
        version: 1,
        mode,
        n_samples: samples.len(),
        samples_file: SAMPLES_FILE.into(),
        mask_dir: MASK_DIR.into(),
    };
    write_json(&out_dir.join(HEADER_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_dataset(out_dir: &Path) -> Result<(DatasetManifest, Vec<SampleRecord>)> {
    let header: DatasetManifest = crate::imgio::read_json(&out_dir.join(HEADER_FILE))?;
    let path = out_dir.join(&header.samples_file);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<Vec<SampleRecord>, _>>()?;
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grow::{GrowConfig, Region};
    use crate::imgio::load_mask;
    use crate::topology::Coord;
    use proptest::prelude::*;
    use rand::Rng;

    fn rs_from(h: usize, w: usize, sets: Vec<Vec<usize>>) -> RegionSet {
        let mut rs = RegionSet::empty(h, w, GrowConfig::default());
        for (k, idx) in sets.into_iter().enumerate() {
            rs.push(Region {
                id: k as u32 + 1,
                seed: Coord::from_index(idx[0], w),
                seed_color: [0; 3],
                pixels: PixelSet::from_indices(h * w, idx),
            });
        }
        rs
    }

    #[test]
    fn labels_by_purity() {
        let gt = BinaryMask::from_fn(10, 10, |c| c.h < 5);
        let rs = rs_from(10, 10, vec![(0..20).collect(), (60..80).collect(), (40..60).collect()]);
        let l = label_regions(&rs, &gt, &MixConfig::default()).unwrap();
        assert_eq!((l[0].label, l[0].purity), (RegionLabel::Blade, 1.0));
        assert_eq!((l[1].label, l[1].purity), (RegionLabel::Background, 0.0));
        assert_eq!((l[2].label, l[2].purity), (RegionLabel::Ambiguous, 0.5));
    }

    #[test]
    fn eighty_twenty_union() {
        let gt = BinaryMask::from_fn(10, 10, |c| c.h < 8);
        let rs = rs_from(10, 10, vec![(0..80).collect(), (80..100).collect()]);
        let cfg = MixConfig {
            max_members: 2,
            ..MixConfig::default()
        };
        // Find a draw that takes both regions.
        let both = (0..64)
            .map(|i| synth_mix(&rs, &gt, &cfg, "x.png", &mut sample_rng(1, i)).unwrap())
            .find(|s| s.member_ids.len() == 2)
            .unwrap();
        assert_eq!(both.member_ids, vec![1, 2]);
        assert_eq!(both.label, 0.8);
        assert_eq!(both.mask.count_ones(), 100);
    }

    #[test]
    fn all_members_in_foreground() {
        let gt = BinaryMask::from_fn(10, 10, |_| true);
        let rs = rs_from(10, 10, vec![(0..5).collect(), (5..9).collect(), (50..60).collect()]);
        for i in 0..20 {
            let s = synth_mix(&rs, &gt, &MixConfig::default(), "", &mut sample_rng(9, i)).unwrap();
            assert_eq!(s.label, 1.0);
        }
    }

    #[test]
    fn empty_region_set_is_a_precondition_error() {
        let gt = BinaryMask::new(3, 3);
        let rs = RegionSet::empty(3, 3, GrowConfig::default());
        let r = synth_mix(&rs, &gt, &MixConfig::default(), "", &mut sample_rng(0, 0));
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn bad_cutoffs() {
        let cfg = MixConfig {
            p_lo: 0.6,
            p_hi: 0.5,
            ..MixConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn export_empty_and_binary() {
        let dir = tempfile::tempdir().unwrap();
        let m = export_dataset(&[], dir.path(), ExportMode::Regionmix).unwrap();
        assert_eq!(m.n_samples, 0);
        assert_eq!(fs::read_to_string(dir.path().join(SAMPLES_FILE)).unwrap(), "");
        let (h, recs) = load_dataset(dir.path()).unwrap();
        assert_eq!(h, m);
        assert!(recs.is_empty());

        let gt = BinaryMask::from_fn(4, 4, |c| c.h < 2);
        let rs = rs_from(4, 4, vec![(0..8).collect(), (6..12).collect()]);
        let labels = label_regions(&rs, &gt, &MixConfig::default()).unwrap();
        let samples = binary_samples(&rs, &labels, "img.png");
        assert_eq!(samples.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&samples, dir.path(), ExportMode::Binary).unwrap();
        let (_, recs) = load_dataset(dir.path()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].label, 1.0);
        assert_eq!(recs[0].mode, ExportMode::Binary);
        assert_eq!(recs[0].member_ids, vec![1]);
        let mask = load_mask(dir.path().join(&recs[0].mask_file)).unwrap();
        assert_eq!(mask, samples[0].mask);
        let line = fs::read_to_string(dir.path().join(SAMPLES_FILE)).unwrap();
        assert!(line.starts_with("{\"image\":\"img.png\",\"mask_file\":\"masks/000000.png\",\"label\":1.0,"));
    }

    #[test]
    fn batches_are_schedule_independent() {
        let gt = BinaryMask::from_fn(8, 8, |c| c.w < 3);
        let rs = rs_from(8, 8, (0..8).map(|r| (r * 8..r * 8 + 8).collect()).collect());
        let cfg = MixConfig {
            samples_per_image: 40,
            prng_seed: 5,
            ..MixConfig::default()
        };
        let a = synth_batch(&rs, &gt, &cfg, "s", Execution::Serial).unwrap();
        let b = synth_batch(&rs, &gt, &cfg, "s", Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
    }

    proptest! {
        #[test]
        fn labels_survive_export(labels in proptest::collection::vec(0.0f64..=1.0, 0..6)) {
            let dir = tempfile::tempdir().unwrap();
            let samples: Vec<ExportSample> = labels
                .iter()
                .map(|&label| ExportSample { image: "i".into(), mask: BinaryMask::new(2, 2), label, member_ids: vec![1, 2] })
                .collect();
            export_dataset(&samples, dir.path(), ExportMode::Regionmix).unwrap();
            let (h, recs) = load_dataset(dir.path()).unwrap();
            prop_assert_eq!(h.n_samples, labels.len());
            for (r, &l) in recs.iter().zip(&labels) {
                prop_assert_eq!(r.label.to_bits(), l.to_bits());
            }
        }

        #[test]
        fn monotone_in_added_pure_regions(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = BinaryMask::from_fn(12, 12, |_| rng.random_bool(0.5));
            let base: Vec<usize> = (0..144).filter(|_| rng.random_bool(0.3)).collect();
            prop_assume!(!base.is_empty());
            let inside: Vec<usize> = (0..144).filter(|&i| gt.at(i)).take(7).collect();
            let outside: Vec<usize> = (0..144).filter(|&i| !gt.at(i)).take(7).collect();
            prop_assume!(!inside.is_empty() && !outside.is_empty());
            let base_set = PixelSet::from_indices(144, base.iter().copied());
            let l0 = purity(&base_set, &gt);
            let mut with_in = base_set.clone();
            with_in.union_with(&PixelSet::from_indices(144, inside));
            let mut with_out = base_set.clone();
            with_out.union_with(&PixelSet::from_indices(144, outside));
            prop_assert!(purity(&with_in, &gt) >= l0);
            prop_assert!(purity(&with_out, &gt) <= l0);
        }
    }
}
