use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{c_segment_point, h_and_g, random_in_ball, ParametrizedTarget};
use crate::error::{Error, Result};
use crate::geometry::{dist2, norm, Hyperboloid, OpticalConstants, PointUp};
use crate::refractor::{support_margin, support_tolerance, RefractorEnvelope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwReport {
    pub samples: usize,
    pub max_eigenvalue: f64,
    pub worst_v: Vec<f64>,
    pub tolerance: f64,
    pub min_g: f64,
    /// Smallest `d^2/de^2 J` over sampled orthogonal pairs `xi ⊥ eta`; absent for `n = 1`.
    pub restricted_min: Option<f64>,
    pub passed: bool,
}

fn g_at(v: &[f64], x0: &PointUp, target: &ParametrizedTarget, k: &OpticalConstants) -> Result<f64> {
    Ok(h_and_g(v, x0, target, k)?.g)
}

fn hessian_of_g(
    v: &[f64],
    x0: &PointUp,
    target: &ParametrizedTarget,
    k: &OpticalConstants,
    step: f64,
) -> Result<(f64, DMatrix<f64>)> {
    let n = v.len();
    let g0 = g_at(v, x0, target, k)?;
    let shifted = |i: usize, si: f64, j: usize, sj: f64| {
        let mut w = v.to_vec();
        w[i] += si * step;
        w[j] += sj * step;
        g_at(&w, x0, target, k)
    };
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut w = v.to_vec();
        w[i] += step;
        let gp = g_at(&w, x0, target, k)?;
        w[i] -= 2.0 * step;
        let gm = g_at(&w, x0, target, k)?;
        hess[(i, i)] = (gp - 2.0 * g0 + gm) / (step * step);
        for j in (i + 1)..n {
            let val = (shifted(i, 1.0, j, 1.0)? - shifted(i, 1.0, j, -1.0)? - shifted(i, -1.0, j, 1.0)?
                + shifted(i, -1.0, j, -1.0)?)
                / (4.0 * step * step);
            hess[(i, j)] = val;
            hess[(j, i)] = val;
        }
    }
    Ok((g0, hess))
}

/// Orthonormal pairs `(xi, eta)` used for the restricted form.
fn orthogonal_pairs(n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = Vec::new();
    match n {
        2 => {
            for a in 0..8 {
                let t = std::f64::consts::PI * a as f64 / 8.0;
                out.push((vec![t.cos(), t.sin()], vec![-t.sin(), t.cos()]));
            }
        }
        3 => {
            let s = 0.5f64.sqrt();
            let dirs = [
                ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
                ([0.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
                ([0.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
                ([s, s, 0.0], [0.0, 0.0, 1.0]),
                ([s, 0.0, s], [0.0, 1.0, 0.0]),
                ([0.0, s, s], [1.0, 0.0, 0.0]),
            ];
            for (x, e) in dirs {
                out.push((x.to_vec(), e.to_vec()));
            }
        }
        _ => {}
    }
    out
}

/// Concavity of `G(., X0)` on the slope samples `v_grid` via a central
/// difference Hessian with step `1e-4` times the critical slope.
pub fn check_aw(
    x0: &PointUp,
    target: &ParametrizedTarget,
    v_grid: &[Vec<f64>],
    k: &OpticalConstants,
) -> Result<AwReport> {
    let radius = k.critical_slope();
    if let Some(v) = v_grid.iter().find(|v| norm(v) > radius - 1e-3) {
        return Err(Error::HypothesisNotMet(format!(
            "slope sample with |v| = {} too close to the critical slope {radius}",
            norm(v)
        )));
    }
    let step = 1e-4 * radius;
    let pairs = orthogonal_pairs(x0.dim());
    let results: Vec<Result<(f64, f64, Option<f64>)>> = v_grid
        .par_iter()
        .map(|v| {
            let (g, hess) = hessian_of_g(v, x0, target, k, step)?;
            let eig = SymmetricEigen::new(hess.clone()).eigenvalues.max();
            let restricted = pairs
                .iter()
                .map(|(xi, eta)| {
                    let xv = nalgebra::DVector::from_row_slice(xi);
                    let p: f64 = v.iter().zip(eta).map(|(a, b)| a * b).sum();
                    (k.k2m1() * p * p - 1.0) * (xv.transpose() * &hess * &xv)[(0, 0)]
                })
                .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.min(x))));
            Ok((g, eig, restricted))
        })
        .collect();
    let mut max_eig = f64::NEG_INFINITY;
    let mut worst = Vec::new();
    let mut min_g = f64::INFINITY;
    let mut max_g: f64 = 0.0;
    let mut restricted_min: Option<f64> = None;
    for (v, r) in v_grid.iter().zip(results) {
        let (g, eig, restricted) = r?;
        min_g = min_g.min(g);
        max_g = max_g.max(g.abs());
        if eig > max_eig {
            max_eig = eig;
            worst = v.clone();
        }
        if let Some(x) = restricted {
            restricted_min = Some(restricted_min.map_or(x, |a| a.min(x)));
        }
    }
    let tolerance = 1e-6 * max_g;
    Ok(AwReport {
        samples: v_grid.len(),
        max_eigenvalue: max_eig,
        worst_v: worst,
        tolerance,
        min_g,
        restricted_min,
        passed: min_g > 0.0 && max_eig <= tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DasmReport {
    pub max_violation: f64,
    pub worst_lambda: f64,
    pub worst_x: Vec<f64>,
    pub lambda_samples: usize,
    pub x_samples: usize,
}

/// Regular `per_axis^n` grid on the box `center ± half_width`.
pub fn box_samples(center: &[f64], half_width: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let n = center.len();
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|lin| {
            let mut rem = lin;
            let mut x = vec![0.0; n];
            for d in (0..n).rev() {
                let i = rem % per_axis;
                rem /= per_axis;
                x[d] = center[d] - half_width + 2.0 * half_width * i as f64 / (per_axis - 1) as f64;
            }
            x
        })
        .collect()
}

/// `max phi(x, Y_lambda, X0) - max(phi(x, Y_bar, X0), phi(x, Y_hat, X0))`
/// over `lambda_samples` values of `lambda` in `[0, 1]` and the `x` samples.
pub fn check_dasm(
    x0: &PointUp,
    v_bar: &[f64],
    v_hat: &[f64],
    target: &ParametrizedTarget,
    x_samples: &[Vec<f64>],
    lambda_samples: usize,
    k: &OpticalConstants,
) -> Result<DasmReport> {
    let sheet = |lambda: f64| -> Result<Hyperboloid> {
        let y = c_segment_point(x0, v_bar, v_hat, lambda, target, k)?;
        Hyperboloid::through(&y, x0, k)
    };
    let hb = sheet(0.0)?;
    let hh = sheet(1.0)?;
    let base: Vec<f64> = x_samples.iter().map(|x| hb.eval(x, k).max(hh.eval(x, k))).collect();
    let lambdas: Vec<f64> = (0..lambda_samples).map(|i| i as f64 / (lambda_samples - 1) as f64).collect();
    let per_lambda: Vec<Result<(f64, usize)>> = lambdas
        .par_iter()
        .map(|&l| {
            let h = sheet(l)?;
            let mut best = (f64::NEG_INFINITY, 0);
            for (j, x) in x_samples.iter().enumerate() {
                let d = h.eval(x, k) - base[j];
                if d > best.0 {
                    best = (d, j);
                }
            }
            Ok(best)
        })
        .collect();
    let mut report = DasmReport {
        max_violation: f64::NEG_INFINITY,
        worst_lambda: 0.0,
        worst_x: Vec::new(),
        lambda_samples,
        x_samples: x_samples.len(),
    };
    for (l, r) in lambdas.iter().zip(per_lambda) {
        let (d, j) = r?;
        if d > report.max_violation {
            report.max_violation = d;
            report.worst_lambda = *l;
            report.worst_x = x_samples[j].clone();
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalGlobal {
    pub local_ok: bool,
    pub global_ok: bool,
    pub local_margin: f64,
    pub global_margin: f64,
}

/// Support of `u` at grid cell `cell` by the sheet with focus `Y_i` through
/// `(x0, u(x0))`, tested on the cells within `eps_ball` and on every cell.
pub fn check_local_to_global(env: &RefractorEnvelope, cell: usize, i: usize, eps_ball: f64) -> Result<LocalGlobal> {
    let grid = &env.scene.grid;
    let x0 = grid.center(cell);
    let local: Vec<usize> = (0..env.len()).filter(|&c| dist2(grid.center(c), x0) <= eps_ball * eps_ball).collect();
    let all: Vec<usize> = (0..env.len()).collect();
    let tol = support_tolerance(env);
    match (support_margin(env, cell, i, &local), support_margin(env, cell, i, &all)) {
        (Ok(l), Ok(g)) => Ok(LocalGlobal { local_ok: l >= -tol, global_ok: g >= -tol, local_margin: l, global_margin: g }),
        (Err(Error::NonPositiveFocalParameter(c)), _) | (_, Err(Error::NonPositiveFocalParameter(c))) => {
            Ok(LocalGlobal { local_ok: false, global_ok: false, local_margin: c, global_margin: c })
        }
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalGlobalSummary {
    pub tested: usize,
    pub locally_supporting: usize,
    pub local_not_global: usize,
    pub first_failure: Option<(usize, usize)>,
}

/// Runs the local/global pair for every target at each listed cell.
pub fn local_to_global_sweep(env: &RefractorEnvelope, cells: &[usize], eps_ball: f64) -> Result<LocalGlobalSummary> {
    let mut s = LocalGlobalSummary { tested: 0, locally_supporting: 0, local_not_global: 0, first_failure: None };
    for &c in cells {
        for i in 0..env.n_targets() {
            let r = check_local_to_global(env, c, i, eps_ball)?;
            s.tested += 1;
            if r.local_ok {
                s.locally_supporting += 1;
                if !r.global_ok {
                    s.local_not_global += 1;
                    s.first_failure.get_or_insert((c, i));
                }
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyCounterexample {
    pub slope: f64,
    pub local_margin: f64,
    pub global_margin: f64,
    pub worst_offset: f64,
}

/// Searches the envelope `max(phi(., Y(-a e1), X0), phi(., Y(a e1), X0))`
/// restricted to the line `x0 + t e1`, `|t| <= half_width`, for a slope `a`
/// at which the middle sheet `Y(0)` supports locally (`|t| <= eps_ball`) but
/// not globally.
pub fn local_to_global_family_search(
    x0: &PointUp,
    target: &ParametrizedTarget,
    half_width: f64,
    eps_ball: f64,
    k: &OpticalConstants,
) -> Result<Option<FamilyCounterexample>> {
    let n = x0.dim();
    let r = k.critical_slope();
    let offsets: Vec<f64> = (0..=2000).map(|i| -half_width + 2.0 * half_width * i as f64 / 2000.0).collect();
    for step in 1..=40 {
        let a = 0.02 * step as f64 * r;
        if a >= 0.9 * r {
            break;
        }
        let mut vb = vec![0.0; n];
        let mut vh = vec![0.0; n];
        vb[0] = -a;
        vh[0] = a;
        let sheet = |v: &[f64]| -> Result<Hyperboloid> {
            let y = target.point_from_slope(x0, v, k)?;
            Hyperboloid::through(&y, x0, k)
        };
        let (hb, hh, hm) = match (sheet(&vb), sheet(&vh), sheet(&vec![0.0; n])) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            _ => continue,
        };
        let mut local = f64::INFINITY;
        let mut global = f64::INFINITY;
        let mut worst = 0.0;
        for &t in &offsets {
            let mut x = x0.x.clone();
            x[0] += t;
            let margin = hb.eval(&x, k).max(hh.eval(&x, k)) - hm.eval(&x, k);
            if t.abs() <= eps_ball {
                local = local.min(margin);
            }
            if margin < global {
                global = margin;
                worst = t;
            }
        }
        let tol = 1e-12 * x0.last.abs().max(1.0);
        if local >= -tol && global < -tol {
            return Ok(Some(FamilyCounterexample { slope: a, local_margin: local, global_margin: global, worst_offset: worst }));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityOptions {
    pub samples: usize,
    pub seed: u64,
    /// Half-width of the box neighbourhood of `X*`.
    pub half_width: f64,
    /// Radius `C2` of the `x` ball around `z`.
    pub c2: f64,
    /// Slope samples are drawn within this fraction of the critical slope.
    pub slope_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityEstimate {
    pub c1: f64,
    pub c2: f64,
    pub samples_used: usize,
    pub worst_lambda: f64,
    pub worst_distance: f64,
}

/// Sampled lower bound for the constant `C1` of the quantitative
/// sliding-mountain inequality around `x_star`.
pub fn estimate_regularity_constants(
    x_star: &PointUp,
    target: &ParametrizedTarget,
    opts: &RegularityOptions,
    k: &OpticalConstants,
) -> Result<RegularityEstimate> {
    let n = x_star.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let vr = opts.slope_fraction * k.critical_slope();
    let mut best = RegularityEstimate { c1: f64::INFINITY, c2: opts.c2, samples_used: 0, worst_lambda: 0.0, worst_distance: 0.0 };
    for s in 0..opts.samples {
        let dz: Vec<f64> = (0..=n).map(|_| rng.gen_range(-opts.half_width..opts.half_width)).collect();
        let z = PointUp::from_slice(&x_star.to_vec().iter().zip(&dz).map(|(a, b)| a + b).collect::<Vec<_>>());
        let vb = random_in_ball(&mut rng, n, vr);
        let vh = random_in_ball(&mut rng, n, vr);
        let lambda = match s % 4 {
            0 => 0.25,
            1 => 0.75,
            _ => rng.gen_range(0.25..=0.75),
        };
        let dx = random_in_ball(&mut rng, n, opts.c2);
        let x: Vec<f64> = z.x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let (yb, yh, yl) = match (
            target.point_from_slope(&z, &vb, k),
            target.point_from_slope(&z, &vh, k),
            c_segment_point(&z, &vb, &vh, lambda, target, k),
        ) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            _ => continue,
        };
        let dy = yb.distance(&yh);
        let dxn = norm(&dx);
        if dy < 1e-9 || dxn < 1e-9 {
            continue;
        }
        let phi = |y: &PointUp| Hyperboloid::through(y, &z, k).map(|h| h.eval(&x, k));
        let (pb, ph, pl) = match (phi(&yb), phi(&yh), phi(&yl)) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            _ => continue,
        };
        let ratio = (pb.max(ph) - pl) / (dy * dy * dxn * dxn);
        best.samples_used += 1;
        if ratio < best.c1 {
            best.c1 = ratio;
            best.worst_lambda = lambda;
            best.worst_distance = dxn;
        }
    }
    if !(best.c1 > 0.0) {
        return Err(Error::NotStrictlyRegular(best.c1));
    }
    Ok(best)
}
