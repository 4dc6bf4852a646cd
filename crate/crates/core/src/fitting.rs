//! Parametric click surfaces and their grid-search fit by total variation.
//!
//! Both surfaces place items of geometrically decaying attraction on an
//! `m x K` grid. The TCM surface reads the grid row-major as one list with
//! attraction `p0 * gamma^k` at list index `k`; the CCM surface uses
//! `p0 * gamma^(i + j)` at `(i, j)` and evaluates the carousel model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::models::{tcm_click_into, AttractionMatrix, ClickProbMatrix, TerminationProfile};
use crate::simulate::EmpiricalClicks;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamTriple {
    /// Highest attraction probability.
    pub p0: f64,
    /// Per-step attraction discount.
    pub gamma: f64,
    /// Termination probability.
    pub pq: f64,
}

impl ParamTriple {
    pub fn new(p0: f64, gamma: f64, pq: f64) -> Result<Self> {
        check_probability("p0", p0)?;
        check_probability("gamma", gamma)?;
        check_probability("pq", pq)?;
        Ok(Self { p0, gamma, pq })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitModel {
    Tcm,
    Ccm,
}

impl FitModel {
    pub fn name(self) -> &'static str {
        match self {
            FitModel::Tcm => "tcm",
            FitModel::Ccm => "ccm",
        }
    }
}

impl std::str::FromStr for FitModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tcm" => Ok(FitModel::Tcm),
            "ccm" => Ok(FitModel::Ccm),
            other => Err(Error::Invalid(format!("cannot fit model `{other}` (expected tcm or ccm)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub params: ParamTriple,
    /// Minimum total variation distance found on the grid.
    pub delta: f64,
    pub grid_resolution: f64,
}

/// `gamma^0 .. gamma^(n-1)` by repeated multiplication, which (unlike
/// `powi`) gives the same bits whether or not the compiler folds it.
fn powers_into(gamma: f64, n: usize, out: &mut Vec<f64>) {
    out.clear();
    let mut g = 1.0;
    for _ in 0..n {
        out.push(g);
        g *= gamma;
    }
}

fn powers(gamma: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    powers_into(gamma, n, &mut out);
    out
}

/// Reusable buffers for evaluating a surface many times.
#[derive(Default)]
struct SurfaceScratch {
    powers: Vec<f64>,
    attraction: Vec<f64>,
    clicks: Vec<f64>,
    row: Vec<f64>,
}

/// Evaluates a surface into `scratch.clicks`, row-major.
fn surface_into(model: FitModel, (m, k): (usize, usize), params: ParamTriple, scratch: &mut SurfaceScratch) {
    let ParamTriple { p0, gamma, pq } = params;
    let term = TerminationProfile::Uniform { pq };
    scratch.attraction.clear();
    match model {
        FitModel::Tcm => {
            powers_into(gamma, m * k, &mut scratch.powers);
            scratch.attraction.extend(scratch.powers.iter().map(|g| p0 * g));
            tcm_click_into(&scratch.attraction, &term, &mut scratch.clicks);
        }
        FitModel::Ccm => {
            powers_into(gamma, m + k - 1, &mut scratch.powers);
            scratch.clicks.clear();
            let mut exam = 1.0;
            for i in 0..m {
                scratch.attraction.clear();
                scratch
                    .attraction
                    .extend(scratch.powers[i..i + k].iter().map(|g| p0 * g));
                tcm_click_into(&scratch.attraction, &term, &mut scratch.row);
                scratch.clicks.extend(scratch.row.iter().map(|&c| exam * c));
                let survival = scratch.attraction.iter().fold(1.0, |acc, &p| acc * (1.0 - p));
                exam *= (1.0 - pq) * survival;
            }
        }
    }
}

fn check_shape((m, k): (usize, usize)) -> Result<()> {
    if m == 0 || k == 0 {
        return Err(Error::Size(format!("surface shape ({m}, {k}) is empty")));
    }
    Ok(())
}

fn surface(model: FitModel, shape: (usize, usize), params: ParamTriple) -> Result<ClickProbMatrix> {
    check_shape(shape)?;
    ParamTriple::new(params.p0, params.gamma, params.pq)?;
    let mut scratch = SurfaceScratch::default();
    surface_into(model, shape, params, &mut scratch);
    let rows = scratch.clicks.chunks(shape.1).map(<[f64]>::to_vec).collect();
    Ok(ClickProbMatrix::from_rows_unchecked(rows))
}

/// TCM click surface on an `m x K` grid read row-major.
pub fn mu_tcm(shape: (usize, usize), params: ParamTriple) -> Result<ClickProbMatrix> {
    surface(FitModel::Tcm, shape, params)
}

/// CCM click surface on an `m x K` grid of carousels.
pub fn mu_ccm(shape: (usize, usize), params: ParamTriple) -> Result<ClickProbMatrix> {
    surface(FitModel::Ccm, shape, params)
}

/// The attraction grid behind [`mu_ccm`], as a layout.
pub fn ccm_surface_layout((m, k): (usize, usize), p0: f64, gamma: f64) -> Result<AttractionMatrix> {
    check_shape((m, k))?;
    let g = powers(gamma, m + k - 1);
    AttractionMatrix::new((0..m).map(|i| g[i..i + k].iter().map(|g| p0 * g).collect()).collect())
}

/// The ranked list behind [`mu_tcm`].
pub fn tcm_surface_layout((m, k): (usize, usize), p0: f64, gamma: f64) -> Result<AttractionMatrix> {
    check_shape((m, k))?;
    AttractionMatrix::single_row(powers(gamma, m * k).iter().map(|g| p0 * g).collect())
}

/// Half the L1 distance between two same-shaped click matrices.
pub fn total_variation(a: &ClickProbMatrix, b: &ClickProbMatrix) -> Result<f64> {
    if a.row_lengths() != b.row_lengths() {
        return Err(Error::Shape(format!(
            "cannot compare click matrices with row lengths {:?} and {:?}",
            a.row_lengths(),
            b.row_lengths()
        )));
    }
    Ok(0.5 * a.values().zip(b.values()).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Grid points `0, res, 2 res, ..., 1` (1 is always included).
pub fn grid_points(resolution: f64) -> Result<Vec<f64>> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::Invalid(format!("grid resolution {resolution} is not in (0, 1]")));
    }
    let steps = (1.0 / resolution).round();
    if (steps * resolution - 1.0).abs() < 1e-9 {
        // Divide instead of multiplying so nested grids share exact values.
        let n = steps as usize;
        return Ok((0..=n).map(|s| s as f64 / n as f64).collect());
    }
    let n = (1.0 / resolution).floor() as usize;
    let mut points: Vec<f64> = (0..=n).map(|s| s as f64 * resolution).collect();
    points.push(1.0);
    Ok(points)
}

/// Best `(delta, gamma_index, pq_index)` for one `p0` slice; first minimum
/// wins, scanning gamma then pq in increasing order.
fn best_in_slice(
    model: FitModel,
    shape: (usize, usize),
    target: &[f64],
    p0: f64,
    grid: &[f64],
) -> (f64, usize, usize) {
    let mut scratch = SurfaceScratch::default();
    let mut best = (f64::INFINITY, 0, 0);
    for (g, &gamma) in grid.iter().enumerate() {
        for (q, &pq) in grid.iter().enumerate() {
            surface_into(model, shape, ParamTriple { p0, gamma, pq }, &mut scratch);
            let delta = 0.5
                * scratch
                    .clicks
                    .iter()
                    .zip(target)
                    .map(|(x, y)| (x - y).abs())
                    .sum::<f64>();
            if delta < best.0 {
                best = (delta, g, q);
            }
        }
    }
    best
}

fn fit_target(target: &ClickProbMatrix) -> Result<((usize, usize), Vec<f64>)> {
    let shape = target
        .rectangular_shape()
        .ok_or_else(|| Error::Shape("grid fit needs a rectangular click matrix".into()))?;
    for v in target.values() {
        check_probability("target click probability", v)?;
    }
    Ok((shape, target.values().collect()))
}

fn assemble(model: FitModel, resolution: f64, grid: &[f64], best: (usize, (f64, usize, usize))) -> FitResult {
    let (p, (delta, g, q)) = best;
    FitResult {
        model,
        params: ParamTriple {
            p0: grid[p],
            gamma: grid[g],
            pq: grid[q],
        },
        delta,
        grid_resolution: resolution,
    }
}

/// Exhaustive search over the `(p0, gamma, pq)` grid at `resolution`,
/// parallel over `p0`. Ties go to the lexicographically smallest triple, so
/// the result does not depend on the partitioning.
pub fn grid_fit(target: &ClickProbMatrix, model: FitModel, resolution: f64) -> Result<FitResult> {
    let (shape, flat) = fit_target(target)?;
    let grid = grid_points(resolution)?;
    let best = grid
        .par_iter()
        .enumerate()
        .map(|(p, &p0)| (p, best_in_slice(model, shape, &flat, p0, &grid)))
        .reduce_with(|a, b| if b.1 .0 < a.1 .0 || (b.1 .0 == a.1 .0 && b.0 < a.0) { b } else { a })
        .expect("grid is never empty");
    Ok(assemble(model, resolution, &grid, best))
}

/// Single-threaded [`grid_fit`].
pub fn grid_fit_sequential(target: &ClickProbMatrix, model: FitModel, resolution: f64) -> Result<FitResult> {
    let (shape, flat) = fit_target(target)?;
    let grid = grid_points(resolution)?;
    let mut best = (0, (f64::INFINITY, 0, 0));
    for (p, &p0) in grid.iter().enumerate() {
        let slice = best_in_slice(model, shape, &flat, p0, &grid);
        if slice.0 < best.1 .0 {
            best = (p, slice);
        }
    }
    Ok(assemble(model, resolution, &grid, best))
}

/// Click frequency per position, with every session (clicked or not) in the
/// denominator.
pub fn empirical_frequencies(clicks: &EmpiricalClicks) -> Result<ClickProbMatrix> {
    if clicks.sessions() == 0 {
        return Err(Error::Size("no sessions recorded".into()));
    }
    let n = clicks.sessions() as f64;
    let rows = clicks
        .counts()
        .iter()
        .map(|row| row.iter().map(|&c| c as f64 / n).collect())
        .collect();
    ClickProbMatrix::new(rows)
}
