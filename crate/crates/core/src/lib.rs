//! Unsupervised image segmentation by modular adaptive seeded region growing.
//!
//! The pipeline picks a local and a seed colour threshold per image from the
//! coverage curve ([`adapt`]), grows regions from promoted grid seeds with a
//! toroidal neighborhood ([`grow`], [`topology`]) and merges chains of
//! overlapping regions ([`merge`]). [`eval`] scores proposals against a
//! ground-truth mask, and [`mixgen`] turns them into labelled training samples.

pub mod adapt;
pub mod bitset;
pub mod cli;
pub mod error;
pub mod eval;
pub mod grow;
pub mod imgio;
pub mod merge;
pub mod mixgen;
pub mod par;
pub mod pipeline;
pub mod topology;

pub use adapt::{adaptive_thresholds, coverage, SweepPoint, SweepReport, SweepSpec};
pub use bitset::PixelSet;
pub use error::{Error, Result};
pub use eval::{ablate, image_sim, oracle_mask, region_sim, PixelMetrics, SimMetric, SimReport};
pub use grow::{
    candidate_grid, color_distance, grow_region, promote_seed, segment, GrowConfig, Region, RegionSet, SeedStrategy,
    ThresholdPair,
};
pub use imgio::{BinaryMask, EdgeMap, Image, RegionMap};
pub use merge::{fill_holes, merge_chains, mergeability, resolve_overlaps, MergeConfig, MergeMatrix};
pub use par::Execution;
pub use pipeline::{run_pipeline, AblationSpec, PipelineConfig, PipelineOutput, Variant};
pub use topology::{neighbors, window_coords, Coord, NeighborSpec, Topology};
