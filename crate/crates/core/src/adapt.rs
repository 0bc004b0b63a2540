//! Adaptive threshold selection from the coverage curve.
//!
//! Coverage is swept first over the seed threshold (local threshold held
//! fixed) and then over the local threshold at the chosen seed threshold.
//! Each phase stops at the first plateau: `window` consecutive grid steps
//! during which coverage never rises `eps` or more above the value at the
//! start of the window. The start of that window is the chosen value.
//!
//! Grid points are independent segmentations, so they are evaluated in
//! parallel batches. The plateau rule is applied to the ordered results, and
//! points past the stopping index are discarded, which makes the report
//! identical to a one-point-at-a-time serial sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grow::{segment, GrowConfig, RegionSet, ThresholdPair};
use crate::imgio::Image;
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub tau_s_grid: Vec<u32>,
    pub tau_l_grid: Vec<u32>,
    pub plateau_eps: f64,
    pub plateau_window: usize,
    pub tau_l_during_s_sweep: u32,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            tau_s_grid: (1..=40).map(|i| 2 * i).collect(),
            tau_l_grid: (1..=40).map(|i| 2 * i).collect(),
            plateau_eps: 0.005,
            plateau_window: 2,
            tau_l_during_s_sweep: 10,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tau_s_grid.is_empty() || self.tau_l_grid.is_empty() {
            return Err(Error::Spec("threshold grids must be non-empty".into()));
        }
        for (name, grid) in [("tau_s_grid", &self.tau_s_grid), ("tau_l_grid", &self.tau_l_grid)] {
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Spec(format!("{name} must be strictly ascending")));
            }
        }
        if self.plateau_window == 0 {
            return Err(Error::Spec("plateau_window must be at least 1".into()));
        }
        if self.plateau_eps.is_nan() || self.plateau_eps <= 0.0 {
            return Err(Error::Spec("plateau_eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: u32,
    pub coverage: f64,
    pub n_regions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed_sweep: Vec<SweepPoint>,
    pub local_sweep: Vec<SweepPoint>,
    pub chosen: ThresholdPair,
    /// False when the seed sweep ran off the grid without a plateau.
    pub seed_converged: bool,
    pub local_converged: bool,
}

impl SweepReport {
    pub fn converged(&self) -> bool {
        self.seed_converged && self.local_converged
    }

    /// `phase,tau,coverage,n_regions` rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,tau,coverage,n_regions\n");
        for (phase, pts) in [("seed", &self.seed_sweep), ("local", &self.local_sweep)] {
            for p in pts.iter() {
                out.push_str(&format!("{phase},{},{},{}\n", p.tau, p.coverage, p.n_regions));
            }
        }
        out
    }
}

/// Fraction of pixels covered by at least one region.
pub fn coverage(rs: &RegionSet) -> f64 {
    rs.covered.count() as f64 / (rs.height * rs.width) as f64
}

/// Index of the first plateau window start, if any.
///
/// The window ending at `end` spans steps `end - window + 1 ..= end`; it is a
/// plateau when no value in it rises `eps` or more above `values[end - window]`
/// and no single step rises by `eps` or more.
pub fn find_plateau(values: &[f64], window: usize, eps: f64) -> Option<usize> {
    (window..values.len()).find_map(|end| {
        let start = end - window;
        let base = values[start];
        let flat = (start + 1..=end).all(|j| values[j] - base < eps && values[j] - values[j - 1] < eps);
        flat.then_some(start)
    })
}

struct Phase {
    points: Vec<SweepPoint>,
    chosen: u32,
    converged: bool,
}

fn run_phase(
    grid: &[u32],
    spec: &SweepSpec,
    exec: Execution,
    eval: impl Fn(u32) -> Result<SweepPoint> + Sync + Send,
) -> Result<Phase> {
    let batch = exec.workers().max(spec.plateau_window + 1);
    let mut points: Vec<SweepPoint> = Vec::with_capacity(grid.len());
    for chunk in grid.chunks(batch) {
        for p in exec.map(chunk, |&tau| eval(tau)) {
            points.push(p?);
        }
        let curve: Vec<f64> = points.iter().map(|p| p.coverage).collect();
        if let Some(start) = find_plateau(&curve, spec.plateau_window, spec.plateau_eps) {
            points.truncate(start + spec.plateau_window + 1);
            return Ok(Phase {
                chosen: points[start].tau,
                points,
                converged: true,
            });
        }
    }
    let chosen = *grid.last().expect("validated non-empty");
    Ok(Phase {
        points,
        chosen,
        converged: false,
    })
}

fn measure(img: &Image, base: &GrowConfig, tau: u32, tp: ThresholdPair) -> Result<SweepPoint> {
    let rs = segment(img, &base.with_thresholds(tp))?;
    Ok(SweepPoint {
        tau,
        coverage: coverage(&rs),
        n_regions: rs.len(),
    })
}

/// Chooses `(tau_s*, tau_l*)` for `img`. The thresholds in `base` are ignored.
pub fn adaptive_thresholds(img: &Image, base: &GrowConfig, spec: &SweepSpec, exec: Execution) -> Result<SweepReport> {
    spec.validate()?;
    base.validate()?;
    let seed = run_phase(&spec.tau_s_grid, spec, exec, |tau| {
        measure(img, base, tau, ThresholdPair::new(spec.tau_l_during_s_sweep, tau))
    })?;
    let tau_s = seed.chosen;
    let local = run_phase(&spec.tau_l_grid, spec, exec, |tau| {
        measure(img, base, tau, ThresholdPair::new(tau, tau_s))
    })?;
    Ok(SweepReport {
        seed_sweep: seed.points,
        local_sweep: local.points,
        chosen: ThresholdPair::new(local.chosen, tau_s),
        seed_converged: seed.converged,
        local_converged: local.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitset::PixelSet;
    use crate::grow::Region;
    use crate::imgio::Rgb8;
    use crate::topology::{Coord, Topology};

    fn gray(v: u8) -> Rgb8 {
        [v, v, v]
    }

    #[test]
    fn coverage_values() {
        let mut rs = RegionSet::empty(64, 64, GrowConfig::default());
        assert_eq!(coverage(&rs), 0.0);
        rs.push(Region {
            id: 1,
            seed: Coord::new(0, 0),
            seed_color: gray(0),
            pixels: PixelSet::from_indices(4096, 0..2048),
        });
        assert_eq!(coverage(&rs), 0.5);
        rs.push(Region {
            id: 2,
            seed: Coord::new(63, 63),
            seed_color: gray(0),
            pixels: PixelSet::full(4096),
        });
        assert_eq!(coverage(&rs), 1.0);
    }

    #[test]
    fn plateau_detection() {
        assert_eq!(find_plateau(&[1.0, 1.0, 1.0], 2, 0.005), Some(0));
        assert_eq!(find_plateau(&[0.1, 0.5, 0.9, 0.9, 0.9], 2, 0.005), Some(2));
        assert_eq!(find_plateau(&[0.1, 0.2, 0.3, 0.4], 2, 0.005), None);
        // Two small rises that add up to eps do not count as flat.
        assert_eq!(
            find_plateau(&[0.5, 0.504, 0.508, 0.512, 0.512, 0.512], 2, 0.005),
            Some(2)
        );
        // A dip followed by recovery above the window start is not flat either.
        assert_eq!(find_plateau(&[0.5, 0.4, 0.51, 0.51, 0.51], 2, 0.005), Some(2));
    }

    fn small_cfg() -> GrowConfig {
        GrowConfig {
            seed_grid: 8,
            topology: Topology::Modular,
            ..GrowConfig::default()
        }
    }

    #[test]
    fn flat_image_plateaus_immediately() {
        let img = Image::filled(16, 16, gray(120));
        let r = adaptive_thresholds(&img, &small_cfg(), &SweepSpec::default(), Execution::Serial).unwrap();
        assert_eq!(r.chosen, ThresholdPair::new(2, 2));
        assert!(r.converged());
        assert_eq!(r.seed_sweep.len(), 3);
        assert!(r.seed_sweep.iter().all(|p| p.coverage == 1.0 && p.n_regions == 1));
    }

    #[test]
    fn two_tone_never_crosses_the_split() {
        let img = Image::from_fn(16, 16, |c| if c.w < 8 { gray(100) } else { gray(200) });
        let r = adaptive_thresholds(&img, &small_cfg(), &SweepSpec::default(), Execution::Serial).unwrap();
        assert!(r.chosen.tau_s < 100);
        assert_eq!(r.local_sweep.last().unwrap().coverage, 1.0);
        let rs = segment(&img, &small_cfg().with_thresholds(r.chosen)).unwrap();
        for reg in &rs.regions {
            let left = reg.pixels.iter().filter(|i| i % 16 < 8).count();
            assert!(left == 0 || left == reg.len());
        }
    }

    #[test]
    fn serial_and_parallel_reports_match() {
        let img = Image::from_fn(24, 24, |c| {
            gray(((c.h * 7 + c.w * 3) % 90) as u8 + (c.w / 8 * 50) as u8)
        });
        let spec = SweepSpec::default();
        let a = adaptive_thresholds(&img, &small_cfg(), &spec, Execution::Serial).unwrap();
        let b = adaptive_thresholds(&img, &small_cfg(), &spec, Execution::Parallel).unwrap();
        let c = crate::par::with_threads(3, || {
            adaptive_thresholds(&img, &small_cfg(), &spec, Execution::Parallel).unwrap()
        });
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn non_convergence_falls_back_to_last_value() {
        let img = Image::from_fn(16, 16, |c| gray((c.w * 16) as u8));
        let spec = SweepSpec {
            tau_s_grid: vec![1, 2],
            tau_l_grid: vec![1],
            ..SweepSpec::default()
        };
        let r = adaptive_thresholds(&img, &small_cfg(), &spec, Execution::Serial).unwrap();
        assert!(!r.seed_converged);
        assert_eq!(r.chosen.tau_s, 2);
        assert_eq!(r.chosen.tau_l, 1);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let img = Image::filled(4, 4, gray(1));
        let spec = SweepSpec {
            tau_s_grid: vec![],
            ..SweepSpec::default()
        };
        assert!(matches!(
            adaptive_thresholds(&img, &small_cfg(), &spec, Execution::Serial),
            Err(Error::Spec(_))
        ));
    }

    #[test]
    fn csv_has_both_phases() {
        let img = Image::filled(8, 8, gray(9));
        let r = adaptive_thresholds(&img, &small_cfg(), &SweepSpec::default(), Execution::Serial).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("phase,tau,coverage,n_regions\n"));
        assert_eq!(csv.lines().count(), 1 + r.seed_sweep.len() + r.local_sweep.len());
    }
}
