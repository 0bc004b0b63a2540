//! End-to-end region proposal: threshold selection, growth, merging.

use serde::{Deserialize, Serialize};

use crate::adapt::{adaptive_thresholds, SweepReport, SweepSpec};
use crate::error::Result;
use crate::grow::{segment, GrowConfig, RegionSet, SeedStrategy, ThresholdPair};
use crate::imgio::{Image, RegionMap};
use crate::merge::{fill_holes, merge_chains, mergeability_with, resolve_overlaps, MergeConfig};
use crate::par::Execution;
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Growth settings; thresholds are used only when `adaptive` is false.
    pub grow: GrowConfig,
    pub adaptive: bool,
    pub sweep: SweepSpec,
    /// `None` disables region merging.
    pub merge: Option<MergeConfig>,
    pub exec: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grow: GrowConfig::default(),
            adaptive: true,
            sweep: SweepSpec::default(),
            merge: Some(MergeConfig::default()),
            exec: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Regions as grown, before merging.
    pub raw: RegionSet,
    /// Final regions (equal to `raw` when merging is off).
    pub regions: RegionSet,
    /// Member ids of each final region, in final-region order.
    pub components: Vec<Vec<u32>>,
    pub thresholds: ThresholdPair,
    pub sweep: Option<SweepReport>,
}

impl PipelineOutput {
    /// Overlap-resolved, hole-filled labelling of the final regions.
    pub fn region_map(&self, img: &Image) -> Result<RegionMap> {
        Ok(fill_holes(&resolve_overlaps(&self.regions, img)?))
    }
}

pub fn run_pipeline(img: &Image, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let (thresholds, sweep) = if cfg.adaptive {
        let report = adaptive_thresholds(img, &cfg.grow, &cfg.sweep, cfg.exec)?;
        (report.chosen, Some(report))
    } else {
        (cfg.grow.thresholds, None)
    };
    let raw = segment(img, &cfg.grow.with_thresholds(thresholds))?;
    let (regions, components) = match &cfg.merge {
        Some(mc) => {
            let m = mergeability_with(&raw, mc, cfg.exec);
            let comps = m
                .components()
                .into_iter()
                .map(|c| c.into_iter().map(|i| raw.regions[i].id).collect())
                .collect();
            (merge_chains(&raw, &m), comps)
        }
        None => (raw.clone(), raw.regions.iter().map(|r| vec![r.id]).collect()),
    };
    Ok(PipelineOutput {
        raw,
        regions,
        components,
        thresholds,
        sweep,
    })
}

/// The region-growing configurations compared in the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Random seeds, global thresholds, Cartesian, no merging.
    Rsrg,
    /// Grid seed promotion, global thresholds, Cartesian, no merging.
    DtrgGt,
    /// Grid seed promotion, adaptive thresholds, Cartesian, no merging.
    DtrgAt,
    /// As `DtrgAt` with modular neighbors.
    DtmrgAt,
    /// As `DtmrgAt` with region merging.
    Marg,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Rsrg,
        Variant::DtrgGt,
        Variant::DtrgAt,
        Variant::DtmrgAt,
        Variant::Marg,
    ];

    pub fn algorithm(self) -> &'static str {
        match self {
            Variant::Rsrg => "RSRG",
            Variant::DtrgGt | Variant::DtrgAt => "DTRG",
            Variant::DtmrgAt => "DTMRG",
            Variant::Marg => "MARG",
        }
    }

    pub fn seed_choice(self) -> &'static str {
        match self {
            Variant::Rsrg => "Random",
            _ => "SeedSelection",
        }
    }

    pub fn adaptive(self) -> bool {
        !matches!(self, Variant::Rsrg | Variant::DtrgGt)
    }

    pub fn thresholding(self) -> &'static str {
        if self.adaptive() {
            "Adaptive"
        } else {
            "Global"
        }
    }

    pub fn topology(self) -> Topology {
        match self {
            Variant::DtmrgAt | Variant::Marg => Topology::Modular,
            _ => Topology::Cartesian,
        }
    }

    pub fn neighbors(self) -> &'static str {
        match self.topology() {
            Topology::Modular => "Modular",
            Topology::Cartesian => "Cartesian",
        }
    }

    pub fn merges(self) -> bool {
        self == Variant::Marg
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rsrg" => Ok(Variant::Rsrg),
            "dtrg-gt" | "dtrg+gt" => Ok(Variant::DtrgGt),
            "dtrg-at" | "dtrg+at" => Ok(Variant::DtrgAt),
            "dtmrg-at" | "dtmrg+at" => Ok(Variant::DtmrgAt),
            "marg" => Ok(Variant::Marg),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

/// Shared settings from which every ablation variant is derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSpec {
    /// Seed grid, window, edge and PRNG settings.
    pub grow: GrowConfig,
    /// Thresholds for the global-thresholding variants.
    pub global_thresholds: ThresholdPair,
    /// Seeds drawn by the random-seed baseline.
    pub random_seeds: usize,
    pub sweep: SweepSpec,
    pub merge: MergeConfig,
    pub exec: Execution,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            grow: GrowConfig::default(),
            global_thresholds: ThresholdPair::new(10, 10),
            random_seeds: 16,
            sweep: SweepSpec::default(),
            merge: MergeConfig::default(),
            exec: Execution::Parallel,
        }
    }
}

impl AblationSpec {
    pub fn pipeline_config(&self, v: Variant) -> PipelineConfig {
        let seed_strategy = match v {
            Variant::Rsrg => SeedStrategy::Random {
                n_seeds: self.random_seeds,
            },
            _ => SeedStrategy::GridPromotion,
        };
        PipelineConfig {
            grow: GrowConfig {
                thresholds: self.global_thresholds,
                topology: v.topology(),
                seed_strategy,
                ..self.grow.clone()
            },
            adaptive: v.adaptive(),
            sweep: self.sweep.clone(),
            merge: v.merges().then_some(self.merge),
            exec: self.exec,
        }
    }
}
