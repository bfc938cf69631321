use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::slope_toward;
use crate::error::{Error, Result};
use crate::geometry::{dist2, norm, refract_dir, PointUp};
use crate::refractor::RefractorEnvelope;

/// Hölder exponent `alpha(n, q)` for the growth exponent `q` in `[1, n/(n-1))`.
pub fn holder_alpha(n: usize, q: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::RangeError { q, upper: f64::NAN });
    }
    let nf = n as f64;
    let upper = if n == 1 { f64::INFINITY } else { nf / (nf - 1.0) };
    if !(q >= 1.0 && q < upper) {
        return Err(Error::RangeError { q, upper });
    }
    let a = nf / (2.0 * q);
    let b = (nf - 1.0) / 2.0;
    Ok((a - b) / (1.0 + 3.0 * b + a))
}

/// Constants of the tube inclusion hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeParams {
    pub m: f64,
    pub delta: f64,
    pub c2: f64,
}

impl TubeParams {
    /// `max{1, (2M/delta)^2, (2M/C2)^2}`.
    pub fn k_factor(&self) -> f64 {
        let a = 2.0 * self.m / self.delta;
        let b = 2.0 * self.m / self.c2;
        1f64.max(a * a).max(b * b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeReport {
    pub y_bar: usize,
    pub y_hat: usize,
    pub dist_x: f64,
    pub dist_y: f64,
    pub k_factor: f64,
    pub mu: f64,
    pub eta: f64,
    /// Targets inside the `mu`-neighbourhood of the middle c-segment at the witness.
    pub tube_members: Vec<usize>,
    pub witness: Option<Vec<f64>>,
    pub searched: usize,
    pub verified: bool,
}

/// Targets `j` whose sheet is active at cell `c` up to the tie tolerance.
fn active_targets(env: &RefractorEnvelope, c: usize) -> Vec<usize> {
    let k = &env.scene.constants;
    let x = env.scene.grid.center(c);
    let tol = env.scene.tie_tolerance();
    (0..env.n_targets())
        .filter(|&j| env.branches[j].eval(x, k) >= env.grid_u[c] - tol)
        .collect()
}

/// Point `Y(lambda)` of the c-segment from `x0` between the target points,
/// with the travelled distance interpolated between the endpoint distances.
fn discrete_segment(x0: &PointUp, yb: &PointUp, yh: &PointUp, lambda: f64, env: &RefractorEnvelope) -> Result<PointUp> {
    let k = &env.scene.constants;
    let vb = slope_toward(x0, yb, k.kappa);
    let vh = slope_toward(x0, yh, k.kappa);
    let v: Vec<f64> = vb.iter().zip(&vh).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect();
    let s = (1.0 - lambda) * x0.distance(yb) + lambda * x0.distance(yh);
    Ok(x0.offset(s, &refract_dir(&v, k)?.lambda))
}

/// Searches `x0` on `[x_bar, x_hat]` such that every target within `mu` of the
/// middle c-segment from `(x0, u(x0))` is reached from a cell in `B_eta(x0)`.
pub fn check_tube_inclusion(env: &RefractorEnvelope, xbar_cell: usize, xhat_cell: usize, params: &TubeParams) -> Result<TubeReport> {
    let grid = &env.scene.grid;
    let targets = env.scene.targets();
    let (ib, ih) = (env.assignment[xbar_cell], env.assignment[xhat_cell]);
    if ib == ih {
        return Err(Error::DegeneratePair);
    }
    let (xb, xh) = (grid.center(xbar_cell).to_vec(), grid.center(xhat_cell).to_vec());
    let (yb, yh) = (targets[ib].point(), targets[ih].point());
    let dist_x = dist2(&xb, &xh).sqrt();
    let dist_y = yb.distance(&yh);
    let k_factor = params.k_factor();
    if dist_y < k_factor * dist_x {
        return Err(Error::HypothesisNotMet(format!(
            "|Y_bar - Y_hat| = {dist_y} below {k_factor} |x_bar - x_hat| = {}",
            k_factor * dist_x
        )));
    }
    let mu = dist_y.powf(1.5) * dist_x.sqrt();
    let eta = params.m * (dist_x / dist_y).sqrt();
    let searched = 33;
    let mut report = TubeReport {
        y_bar: ib,
        y_hat: ih,
        dist_x,
        dist_y,
        k_factor,
        mu,
        eta,
        tube_members: Vec::new(),
        witness: None,
        searched,
        verified: false,
    };
    for step in 0..searched {
        let t = step as f64 / (searched - 1) as f64;
        let x0: Vec<f64> = xb.iter().zip(&xh).map(|(a, b)| a + t * (b - a)).collect();
        let anchor = PointUp::new(x0.clone(), env.eval_raw(&x0).0);
        let curve: Vec<PointUp> = (0..=64)
            .map(|j| discrete_segment(&anchor, &yb, &yh, 0.25 + 0.5 * j as f64 / 64.0, env))
            .collect::<Result<_>>()?;
        let members: Vec<usize> = (0..targets.len())
            .filter(|&j| {
                let p = targets[j].point();
                curve.iter().any(|c| c.distance(&p) < mu)
            })
            .collect();
        let ball: Vec<usize> = (0..grid.len()).filter(|&c| dist2(grid.center(c), &x0) < eta * eta).collect();
        let reached: Vec<bool> = {
            let mut r = vec![false; targets.len()];
            for &c in &ball {
                for j in active_targets(env, c) {
                    r[j] = true;
                }
            }
            r
        };
        if members.iter().all(|&j| reached[j]) {
            report.tube_members = members;
            report.witness = Some(x0);
            report.verified = true;
            break;
        }
        if step == 0 {
            report.tube_members = members;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderRow {
    pub dist_x: f64,
    pub dist_y: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub alpha: f64,
    pub k_factor: f64,
    pub pairs: usize,
    /// Pairs with distinct targets that satisfy the separation hypothesis.
    pub eligible: usize,
    /// Pairs with a common target; the ratio is zero for them.
    pub same_target: usize,
    pub max_ratio: f64,
    pub worst_pair: Option<(usize, usize)>,
    /// `max |Du(x_bar) - Du(x_hat)| / |x_bar - x_hat|^alpha` over the same pairs.
    pub du_ratio: f64,
    pub rows: Vec<HolderRow>,
}

impl HolderReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dist_x,dist_Y,ratio\n");
        for r in &self.rows {
            s.push_str(&format!("{:?},{:?},{:?}\n", r.dist_x, r.dist_y, r.ratio));
        }
        s
    }
}

/// Empirical Hölder ratios `|Y_bar - Y_hat| / |x_bar - x_hat|^alpha` over
/// non-tie cell pairs within `radius` of `center` and at most two lattice
/// steps apart per axis.
pub fn holder_diagnostic(env: &RefractorEnvelope, center: &[f64], radius: f64, alpha: f64, k_factor: f64) -> Result<HolderReport> {
    let grid = &env.scene.grid;
    let targets = env.scene.targets();
    let k = &env.scene.constants;
    let n = grid.dim;
    let cells: Vec<usize> = (0..grid.len())
        .filter(|&c| !env.tie[c] && dist2(grid.center(c), center) <= radius * radius)
        .collect();
    let inside: Vec<bool> = {
        let mut m = vec![false; grid.len()];
        cells.iter().for_each(|&c| m[c] = true);
        m
    };
    // half of {-2..2}^n \ {0}, so each unordered pair is visited once
    let offsets: Vec<Vec<i64>> = (0..5usize.pow(n as u32))
        .map(|lin| {
            let mut rem = lin;
            let mut o = vec![0i64; n];
            for d in (0..n).rev() {
                o[d] = (rem % 5) as i64 - 2;
                rem /= 5;
            }
            o
        })
        .filter(|o| o.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0))
        .collect();
    let per_cell: Vec<(usize, usize, Vec<(usize, usize, HolderRow, f64)>)> = cells
        .par_iter()
        .map(|&c| {
            let base = grid.cell_coords(c);
            let mut pairs = 0;
            let mut same = 0;
            let mut rows = Vec::new();
            for o in &offsets {
                let coords: Option<Vec<usize>> = base
                    .iter()
                    .zip(o)
                    .map(|(b, d)| usize::try_from(*b as i64 + d).ok())
                    .collect();
                let Some(other) = coords.and_then(|cc| grid.active_at(&cc)) else { continue };
                if !inside[other] {
                    continue;
                }
                pairs += 1;
                let (ib, ih) = (env.assignment[c], env.assignment[other]);
                if ib == ih {
                    same += 1;
                    continue;
                }
                let dx = dist2(grid.center(c), grid.center(other)).sqrt();
                let dy = targets[ib].point().distance(&targets[ih].point());
                if dy < k_factor * dx {
                    continue;
                }
                let gb = env.branches[ib].gradient(grid.center(c), k);
                let gh = env.branches[ih].gradient(grid.center(other), k);
                let dg: Vec<f64> = gb.iter().zip(&gh).map(|(a, b)| a - b).collect();
                let scale = dx.powf(alpha);
                rows.push((c, other, HolderRow { dist_x: dx, dist_y: dy, ratio: dy / scale }, norm(&dg) / scale));
            }
            (pairs, same, rows)
        })
        .collect();
    let mut report = HolderReport {
        alpha,
        k_factor,
        pairs: 0,
        eligible: 0,
        same_target: 0,
        max_ratio: 0.0,
        worst_pair: None,
        du_ratio: 0.0,
        rows: Vec::new(),
    };
    for (pairs, same, rows) in per_cell {
        report.pairs += pairs;
        report.same_target += same;
        for (a, b, row, du) in rows {
            report.eligible += 1;
            if row.ratio > report.max_ratio {
                report.max_ratio = row.ratio;
                report.worst_pair = Some((a, b));
            }
            report.du_ratio = report.du_ratio.max(du);
            report.rows.push(row);
        }
    }
    if report.pairs == 0 {
        return Err(Error::NoEligiblePairs);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthProbe {
    pub center: Vec<f64>,
    pub etas: Vec<f64>,
    /// Target weight reached from `B_eta(center)`.
    pub sigmas: Vec<f64>,
    /// Smallest probed `eta` at which two targets are reached; the fit uses radii above it.
    pub separation_scale: Option<f64>,
    pub fitted_exponent: Option<f64>,
    pub fitted_q: Option<f64>,
    pub c0: Option<f64>,
}

/// Fits `sigma(F_u(B_eta)) <= C0 eta^(n/q)` over dyadic radii for the
/// discrete target measure given by the weights.
pub fn growth_probe(env: &RefractorEnvelope, center: &[f64]) -> GrowthProbe {
    let grid = &env.scene.grid;
    let targets = env.scene.targets();
    let n = grid.dim;
    let top = env.scene.config.source.shape.diameter();
    let floor = 2.0 * grid.cell_diameter();
    let mut etas = Vec::new();
    let mut eta = top;
    while eta >= floor {
        etas.push(eta);
        eta *= 0.5;
    }
    etas.reverse();
    let mut counts = Vec::new();
    let sigmas: Vec<f64> = etas
        .iter()
        .map(|&e| {
            let mut hit = vec![false; targets.len()];
            for c in 0..grid.len() {
                if dist2(grid.center(c), center) < e * e {
                    for j in active_targets(env, c) {
                        hit[j] = true;
                    }
                }
            }
            counts.push(hit.iter().filter(|h| **h).count());
            targets.iter().zip(&hit).filter(|(_, h)| **h).map(|(t, _)| t.weight).sum()
        })
        .collect();
    let separation_scale = etas.iter().zip(&counts).find(|(_, c)| **c >= 2).map(|(e, _)| *e);
    let pts: Vec<(f64, f64)> = etas
        .iter()
        .zip(&sigmas)
        .filter(|(e, s)| separation_scale.is_some_and(|sep| **e >= sep) && **s > 0.0)
        .map(|(e, s)| (e.ln(), s.ln()))
        .collect();
    let (mut fitted_exponent, mut fitted_q, mut c0) = (None, None, None);
    if pts.len() >= 2 {
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx > 0.0 {
            let slope = sxy / sxx;
            fitted_exponent = Some(slope);
            if slope > 0.0 {
                fitted_q = Some(n as f64 / slope);
                // smallest C0 that bounds every probed radius
                c0 = Some(pts.iter().map(|p| (p.1 - slope * p.0).exp()).fold(0.0, f64::max));
            }
        }
    }
    GrowthProbe { center: center.to_vec(), etas, sigmas, separation_scale, fitted_exponent, fitted_q, c0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_closed_values() {
        assert_eq!(holder_alpha(2, 1.0).unwrap(), 1.0 / 7.0);
        assert_eq!(holder_alpha(3, 1.0).unwrap(), 1.0 / 11.0);
        assert_eq!(holder_alpha(1, 1.0).unwrap(), 1.0 / 3.0);
        assert!(holder_alpha(2, 2.0 - 1e-12).unwrap().abs() < 1e-9);
        assert!(holder_alpha(2, 2.0).is_err());
        assert!(holder_alpha(2, 0.99).is_err());
    }

    #[test]
    fn alpha_decreases_in_q() {
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let a = holder_alpha(3, 1.0 + 0.5 * i as f64 / 50.0).unwrap();
            assert!(a < prev && a > 0.0);
            prev = a;
        }
    }

    #[test]
    fn k_factor_takes_largest() {
        let p = TubeParams { m: 1.0, delta: 0.5, c2: 1.0 };
        assert_eq!(p.k_factor(), 16.0);
        assert_eq!(TubeParams { m: 0.1, delta: 1.0, c2: 1.0 }.k_factor(), 1.0);
    }
}
