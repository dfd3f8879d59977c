//! Landmark-prior waypoint planning.
//!
//! The contours of the instruction landmarks are merged, rasterized into a
//! weighted coverage grid (overlaps weigh more), covered greedily by square
//! camera footprints placed on a lattice with pitch `FOV(z) * (1 - r)`, and
//! the chosen observation points are ordered into an open tour.

mod tour;

pub use tour::{nearest_neighbor, order_tour, path_length as tour_length, two_opt, two_opt_delta};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fov_side, Footprint, MergedContour, Point2, Rect};
use crate::scene::{ConstraintSet, LandmarkKnowledge, Pose, DEFAULT_ALPHA, DEFAULT_OVERLAP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub alpha: f64,
    pub r: f64,
    /// Raster pitch; defaults to a tenth of the candidate grid step.
    pub cell_size: Option<f64>,
    pub coverage_target: f64,
    pub intersection_weight: f64,
    /// Largest allowed shared area between two selected footprints, as a
    /// fraction of one footprint.
    pub max_pairwise_overlap: f64,
    /// Planning altitude; defaults to the start altitude.
    pub plan_altitude: Option<f64>,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            r: DEFAULT_OVERLAP,
            cell_size: None,
            coverage_target: 0.95,
            intersection_weight: 2.0,
            max_pairwise_overlap: 0.5,
            plan_altitude: None,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::param("alpha", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.r) {
            return Err(Error::param("r", format!("must lie in [0, 1), got {}", self.r)));
        }
        if !(self.coverage_target > 0.0 && self.coverage_target <= 1.0) {
            return Err(Error::param("coverage_target", "must lie in (0, 1]"));
        }
        if let Some(c) = self.cell_size {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::param("cell_size", "must be positive"));
            }
        }
        if self.intersection_weight.is_nan() || self.intersection_weight <= 0.0 {
            return Err(Error::param("intersection_weight", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.max_pairwise_overlap) {
            return Err(Error::param("max_pairwise_overlap", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Candidate lattice pitch: `FOV(z) * (1 - r)`.
pub fn grid_step(z: f64, z_ground: f64, alpha: f64, r: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::param("r", format!("must lie in [0, 1), got {r}")));
    }
    Ok(fov_side(z, z_ground, alpha)? * (1.0 - r))
}

/// Lattice coordinates along one axis: `ceil(len / step)` points (at least
/// one), centred in the interval so every point stays inside it.
fn axis_lattice(min: f64, len: f64, step: f64) -> Vec<f64> {
    let n = ((len / step - 1e-9).ceil() as usize).max(1);
    let first = min + (len - (n - 1) as f64 * step) / 2.0;
    (0..n).map(|i| first + i as f64 * step).collect()
}

/// Observation candidates on a regular lattice over `bbox`.
pub fn lattice(bbox: &Rect, step: f64) -> Vec<Point2> {
    let xs = axis_lattice(bbox.min.x, bbox.width(), step);
    let ys = axis_lattice(bbox.min.y, bbox.height(), step);
    ys.iter()
        .flat_map(|&y| xs.iter().map(move |&x| Point2::new(x, y)))
        .collect()
}

pub fn generate_candidates(merged: &MergedContour, step: f64) -> Vec<Point2> {
    lattice(&merged.bounding_box(), step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub center: Point2,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageGrid {
    pub cells: Vec<Cell>,
    pub cell_size: f64,
}

impl CoverageGrid {
    pub fn total_weight(&self) -> f64 {
        self.cells.iter().map(|c| c.weight).sum()
    }
}

/// Cells of pitch `cell_size` whose centers fall inside the merged contour;
/// cells inside two or more parts get `intersection_weight`.
pub fn rasterize(merged: &MergedContour, cell_size: f64, intersection_weight: f64) -> CoverageGrid {
    let bbox = merged.bounding_box();
    let nx = ((bbox.width() / cell_size).ceil() as usize).max(1);
    let ny = ((bbox.height() / cell_size).ceil() as usize).max(1);
    let mut cells = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let center = Point2::new(
                bbox.min.x + (i as f64 + 0.5) * cell_size,
                bbox.min.y + (j as f64 + 0.5) * cell_size,
            );
            match merged.membership(center) {
                0 => {}
                1 => cells.push(Cell { center, weight: 1.0 }),
                _ => cells.push(Cell {
                    center,
                    weight: intersection_weight,
                }),
            }
        }
    }
    CoverageGrid { cells, cell_size }
}

/// One greedy selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub candidate: Point2,
    pub gain: f64,
    pub covered_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cover {
    /// Selected candidates in selection order.
    pub selected: Vec<Point2>,
    pub steps: Vec<GreedyStep>,
    pub covered_fraction: f64,
}

/// Marginal uncovered weight each candidate footprint would add.
pub fn marginal_gains(footprints: &[Footprint], grid: &CoverageGrid, covered: &[bool]) -> Vec<f64> {
    footprints
        .iter()
        .map(|fp| {
            grid.cells
                .iter()
                .zip(covered)
                .filter(|(c, &done)| !done && fp.contains(c.center))
                .map(|(c, _)| c.weight)
                .sum()
        })
        .collect()
}

/// True when `fp` shares more than the allowed area with any selected one.
pub fn violates_overlap(fp: &Footprint, selected: &[Footprint], max_overlap: f64) -> bool {
    selected
        .iter()
        .any(|s| fp.overlap_area(s) > max_overlap * fp.area() + 1e-9)
}

/// Weighted greedy set cover with a pairwise footprint overlap cap.
///
/// Each round picks the admissible candidate with the largest uncovered
/// weight, ties going to the lowest `(y, x)`. Stops at `coverage_target` or
/// when nothing adds weight.
pub fn greedy_cover(candidates: &[Point2], grid: &CoverageGrid, side: f64, params: &PlannerParams) -> Cover {
    let total = grid.total_weight();
    let footprints: Vec<Footprint> = candidates.iter().map(|&center| Footprint { center, side }).collect();
    let mut covered = vec![false; grid.cells.len()];
    let mut covered_weight = 0.0;
    let mut taken = vec![false; candidates.len()];
    let mut chosen: Vec<Footprint> = Vec::new();
    let mut cover = Cover {
        selected: Vec::new(),
        steps: Vec::new(),
        covered_fraction: if total > 0.0 { 0.0 } else { 1.0 },
    };

    while total > 0.0 && covered_weight / total < params.coverage_target {
        let gains = marginal_gains(&footprints, grid, &covered);
        let mut best: Option<usize> = None;
        for (i, &gain) in gains.iter().enumerate() {
            if taken[i] || gain <= 0.0 || violates_overlap(&footprints[i], &chosen, params.max_pairwise_overlap) {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    let (p, q) = (candidates[i], candidates[b]);
                    gain > gains[b] || (gain == gains[b] && (p.y, p.x) < (q.y, q.x))
                }
            };
            if better {
                best = Some(i);
            }
        }
        let Some(i) = best else { break };
        taken[i] = true;
        chosen.push(footprints[i]);
        for (c, done) in grid.cells.iter().zip(covered.iter_mut()) {
            if !*done && footprints[i].contains(c.center) {
                *done = true;
                covered_weight += c.weight;
            }
        }
        cover.covered_fraction = covered_weight / total;
        cover.selected.push(candidates[i]);
        cover.steps.push(GreedyStep {
            candidate: candidates[i],
            gain: gains[i],
            covered_fraction: cover.covered_fraction,
        });
    }
    cover
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPlan {
    pub waypoints: Vec<Pose>,
    pub covered_fraction: f64,
    /// Greedy selection log, in selection order.
    pub steps: Vec<GreedyStep>,
}

/// Merges the instruction landmarks' contours; unknown labels are skipped.
pub fn merge_instruction_landmarks(priors: &[LandmarkKnowledge], constraints: &ConstraintSet) -> Result<MergedContour> {
    let parts: Vec<_> = constraints
        .instruction_landmarks
        .iter()
        .filter_map(|label| priors.iter().find(|l| &l.label == label))
        .map(|l| l.contour.clone())
        .collect();
    if parts.is_empty() {
        return Err(Error::NoLandmarkPrior);
    }
    MergedContour::new(parts)
}

/// Full planning pass: merge, rasterize, lattice, greedy cover, tour.
pub fn plan(
    priors: &[LandmarkKnowledge],
    constraints: &ConstraintSet,
    start: &Pose,
    z_ground: f64,
    params: &PlannerParams,
) -> Result<WaypointPlan> {
    params.validate()?;
    let merged = merge_instruction_landmarks(priors, constraints)?;
    let altitude = params.plan_altitude.unwrap_or(start.z);
    let step = grid_step(altitude, z_ground, params.alpha, params.r)?;
    let side = fov_side(altitude, z_ground, params.alpha)?;
    let cell = params.cell_size.unwrap_or(step / 10.0);
    let grid = rasterize(&merged, cell, params.intersection_weight);
    let candidates = generate_candidates(&merged, step);
    let cover = greedy_cover(&candidates, &grid, side, params);
    let ordered = order_tour(&cover.selected, start.position());
    Ok(WaypointPlan {
        waypoints: ordered
            .into_iter()
            .map(|p| Pose::new(p.x, p.y, altitude, 0.0))
            .collect(),
        covered_fraction: cover.covered_fraction,
        steps: cover.steps,
    })
}
