//! The envelope `u = max_i phi_{Y_i, b_i}` sampled on the source grid, its
//! tracing map, the refractor measure, and the refractor-normal map.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist2, phi_from_dist2, Hyperboloid, PointUp};
use crate::scene::{admissible_b_range, Scene};

const CHUNK: usize = 1024;

/// Sum of `f(0..len)` with a fixed chunking, so the result does not depend on
/// the number of worker threads.
pub fn ordered_sum<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let partials: Vec<f64> = (0..len.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = 0.0;
            for k in c * CHUNK..((c + 1) * CHUNK).min(len) {
                acc += f(k);
            }
            acc
        })
        .collect();
    partials.iter().sum()
}

/// Per-target sums with the same chunking as [`ordered_sum`]; entry `i` is
/// bit-identical to `ordered_sum` over the cells with `label(k) == i`.
pub fn ordered_sums<F>(len: usize, bins: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> Option<(usize, f64)> + Sync,
{
    let partials: Vec<Vec<f64>> = (0..len.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; bins];
            for k in c * CHUNK..((c + 1) * CHUNK).min(len) {
                if let Some((i, v)) = f(k) {
                    acc[i] += v;
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; bins];
    for p in &partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Whether a cell goes to target `i`, given its branch value, the maximum of
/// the other branches, and the maximum of the lower-indexed branches.
#[inline]
pub fn assigned_to(phi: f64, other: f64, lower: f64, tol: f64) -> bool {
    let u = phi.max(other);
    phi >= u - tol && !(lower >= u - tol)
}

/// Height, lowest index of the tie set, and tie flag for branch values `phis`.
#[inline]
fn argmax(phis: impl Iterator<Item = f64> + Clone, tol: f64) -> (f64, usize, bool) {
    let u = phis.clone().fold(f64::NEG_INFINITY, f64::max);
    let mut first = usize::MAX;
    let mut count = 0;
    for (j, p) in phis.enumerate() {
        if p >= u - tol {
            if first == usize::MAX {
                first = j;
            }
            count += 1;
        }
    }
    (u, first, count > 1)
}

#[derive(Debug, Clone)]
pub struct RefractorEnvelope {
    pub scene: Arc<Scene>,
    pub b: Vec<f64>,
    pub branches: Vec<Hyperboloid>,
    pub grid_u: Vec<f64>,
    pub assignment: Vec<usize>,
    pub tie: Vec<bool>,
}

impl RefractorEnvelope {
    pub fn new(scene: Arc<Scene>, b: Vec<f64>) -> Result<Self> {
        let targets = scene.targets();
        if b.len() != targets.len() {
            return Err(Error::ConfigParse(format!(
                "{} focal parameters for {} targets",
                b.len(),
                targets.len()
            )));
        }
        for (t, bi) in targets.iter().zip(&b) {
            let (_, hi) = admissible_b_range(t, scene.delta_cap, &scene.constants)?;
            if !(*bi > 0.0) {
                return Err(Error::NonPositiveFocalParameter(*bi));
            }
            if *bi > hi * (1.0 + 1e-12) {
                return Err(Error::ConfigParse(format!("focal parameter {bi} above the admissible bound {hi}")));
            }
        }
        let branches: Vec<Hyperboloid> = targets
            .iter()
            .zip(&b)
            .map(|(t, bi)| Hyperboloid { focus: t.point(), b: *bi })
            .collect();
        let tol = scene.tie_tolerance();
        let k = scene.constants;
        let grid = &scene.grid;
        let cells: Vec<(f64, usize, bool)> = (0..grid.len())
            .into_par_iter()
            .map(|c| {
                let x = grid.center(c);
                argmax(
                    branches.iter().map(|h| phi_from_dist2(dist2(x, &h.focus.x), h.focus.last, h.b, &k)),
                    tol,
                )
            })
            .collect();
        let grid_u = cells.iter().map(|c| c.0).collect();
        let assignment = cells.iter().map(|c| c.1).collect();
        let tie = cells.iter().map(|c| c.2).collect();
        Ok(Self { scene, b, branches, grid_u, assignment, tie })
    }

    pub fn len(&self) -> usize {
        self.grid_u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid_u.is_empty()
    }

    pub fn n_targets(&self) -> usize {
        self.b.len()
    }

    /// Exact envelope value at any `x`, with the lowest tie index and tie flag.
    pub fn eval_raw(&self, x: &[f64]) -> (f64, usize, bool) {
        let k = &self.scene.constants;
        argmax(self.branches.iter().map(|h| h.eval(x, k)), self.scene.tie_tolerance())
    }

    pub fn point(&self, cell: usize) -> PointUp {
        PointUp::new(self.scene.grid.center(cell).to_vec(), self.grid_u[cell])
    }

    pub fn max_height(&self) -> f64 {
        self.grid_u.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_height(&self) -> f64 {
        self.grid_u.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// `u(x)` and the full tie set at `x`.
pub fn envelope_eval(x: &[f64], env: &RefractorEnvelope) -> Result<(f64, Vec<usize>)> {
    if !env.scene.config.source.shape.contains(x) {
        return Err(Error::OutOfDomain);
    }
    let k = &env.scene.constants;
    let tol = env.scene.tie_tolerance();
    let vals: Vec<f64> = env.branches.iter().map(|h| h.eval(x, k)).collect();
    let u = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let set = (0..vals.len()).filter(|&j| vals[j] >= u - tol).collect();
    Ok((u, set))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracingMap {
    /// Cells assigned to each target (ties go to the lowest index).
    pub regions: Vec<Vec<usize>>,
    pub tie_cells: Vec<usize>,
}

pub fn tracing_map(env: &RefractorEnvelope) -> TracingMap {
    let mut regions = vec![Vec::new(); env.n_targets()];
    let mut tie_cells = Vec::new();
    for (c, &i) in env.assignment.iter().enumerate() {
        regions[i].push(c);
        if env.tie[c] {
            tie_cells.push(c);
        }
    }
    TracingMap { regions, tie_cells }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureVector {
    pub values: Vec<f64>,
    /// Mass of cells adjacent to an interface or to the domain boundary.
    pub error_estimate: f64,
    pub total: f64,
}

/// Midpoint-rule energy of each tracing region.
pub fn refractor_measure(env: &RefractorEnvelope) -> MeasureVector {
    let grid = &env.scene.grid;
    let masses = &grid.masses;
    let values = ordered_sums(masses.len(), env.n_targets(), |k| Some((env.assignment[k], masses[k])));
    let curved = matches!(env.scene.config.source.shape, crate::scene::SourceShape::Ball { .. });
    let error_estimate = ordered_sum(masses.len(), |k| {
        let flagged = grid.neighbors(k).iter().any(|nb| match nb {
            Some(j) => env.assignment[*j] != env.assignment[k],
            None => curved,
        });
        if flagged {
            masses[k]
        } else {
            0.0
        }
    });
    let total = values.iter().sum();
    MeasureVector { values, error_estimate, total }
}

/// Global support test at grid cell `cell` for target `i`: the margin is
/// `min_x u(x) - phi(x, Y_i, X0)` over `cells` with `X0 = (x0, u(x0))`.
pub fn support_margin(
    env: &RefractorEnvelope,
    cell: usize,
    i: usize,
    cells: &[usize],
) -> Result<f64> {
    let k = &env.scene.constants;
    let h = Hyperboloid::through(&env.scene.targets()[i].point(), &env.point(cell), k)?;
    let grid = &env.scene.grid;
    let m = cells
        .par_iter()
        .map(|&c| env.grid_u[c] - h.eval(grid.center(c), k))
        .reduce(|| f64::INFINITY, f64::min);
    Ok(m)
}

pub fn support_tolerance(env: &RefractorEnvelope) -> f64 {
    let scale = env.scene.targets().iter().map(|t| t.h.abs()).fold(1.0, f64::max);
    1e-9 * scale
}

/// `(supports, margin)`; a non-positive focal parameter counts as not supporting.
pub fn support_test(cell: usize, i: usize, env: &RefractorEnvelope) -> Result<(bool, f64)> {
    let all: Vec<usize> = (0..env.len()).collect();
    match support_margin(env, cell, i, &all) {
        Ok(m) => Ok((m >= -support_tolerance(env), m)),
        Err(Error::NonPositiveFocalParameter(c)) => Ok((false, c)),
        Err(e) => Err(e),
    }
}

/// Targets whose hyperboloid through `(x0, u(x0))` supports `u` globally.
pub fn normal_map(cell: usize, env: &RefractorEnvelope) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for i in 0..env.n_targets() {
        if support_test(cell, i, env)?.0 {
            out.push(i);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceRow {
    pub x: Vec<f64>,
    pub u: f64,
    pub target: usize,
    pub tie: bool,
}

pub fn surface_csv(env: &RefractorEnvelope) -> String {
    let n = env.scene.dim();
    let mut out = String::new();
    for d in 1..=n {
        let _ = write!(out, "x{d},");
    }
    out.push_str("u,target_index,tie\n");
    for c in 0..env.len() {
        for v in env.scene.grid.center(c) {
            let _ = write!(out, "{v:?},");
        }
        let _ = writeln!(out, "{:?},{},{}", env.grid_u[c], env.assignment[c], env.tie[c] as u8);
    }
    out
}

pub fn parse_surface_csv(text: &str) -> Result<Vec<SurfaceRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::ConfigParse("empty surface file".into()))?;
    let cols = header.split(',').count();
    if cols < 4 {
        return Err(Error::ConfigParse("surface header too short".into()));
    }
    let n = cols - 3;
    let bad = |l: &str| Error::ConfigParse(format!("bad surface row: {l}"));
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != cols {
                return Err(bad(l));
            }
            let x = f[..n].iter().map(|s| s.parse::<f64>()).collect::<std::result::Result<_, _>>();
            Ok(SurfaceRow {
                x: x.map_err(|_| bad(l))?,
                u: f[n].parse().map_err(|_| bad(l))?,
                target: f[n + 1].parse().map_err(|_| bad(l))?,
                tie: f[n + 2] == "1",
            })
        })
        .collect()
}
