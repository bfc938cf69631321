use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{random_in_ball, ParametrizedTarget};
use crate::error::{Error, Result};
use crate::geometry::{c_lower_bound, dist2, OpticalConstants, PointUp};
use crate::refractor::RefractorEnvelope;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub pairs: usize,
    pub constant: f64,
    pub slack: f64,
    pub max_ratio: f64,
    /// Largest `|u(x2) - u(x1)| - (constant |x2 - x1| + slack)`.
    pub max_excess: f64,
    pub passed: bool,
}

/// Checks `|u(x2) - u(x1)| <= |x2 - x1|/sqrt(kappa^2-1)` plus a grid slack on
/// all axis-neighbour pairs and `samples` random cell pairs.
pub fn check_lipschitz(env: &RefractorEnvelope, samples: usize, seed: u64) -> LipschitzReport {
    let grid = &env.scene.grid;
    let constant = 1.0 / env.scene.constants.k2m1().sqrt();
    let slack = 2.0 * grid.cell_diameter() * constant;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for c in 0..grid.len() {
        for j in grid.neighbors(c).into_iter().flatten() {
            if j > c {
                pairs.push((c, j));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        pairs.push((rng.gen_range(0..grid.len()), rng.gen_range(0..grid.len())));
    }
    let mut report = LipschitzReport {
        pairs: 0,
        constant,
        slack,
        max_ratio: 0.0,
        max_excess: f64::NEG_INFINITY,
        passed: true,
    };
    for (a, b) in pairs {
        if a == b {
            continue;
        }
        let dx = dist2(grid.center(a), grid.center(b)).sqrt();
        let du = (env.grid_u[a] - env.grid_u[b]).abs();
        report.pairs += 1;
        report.max_ratio = report.max_ratio.max(du / dx);
        report.max_excess = report.max_excess.max(du - constant * dx - slack);
    }
    report.passed = report.max_excess <= 0.0;
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetLipschitz {
    pub samples: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `C` with `|Y_bar - Y_hat|/C <= |v_bar - v_hat| <= C |Y_bar - Y_hat|` on the samples.
    pub constant: f64,
}

/// Sampled bi-Lipschitz constant of the correspondence between slopes and
/// target points seen from `x0`.
pub fn target_lipschitz(
    x0: &PointUp,
    target: &ParametrizedTarget,
    samples: usize,
    fraction: f64,
    seed: u64,
    k: &OpticalConstants,
) -> Result<TargetLipschitz> {
    let n = x0.dim();
    let radius = fraction * k.critical_slope();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TargetLipschitz { samples: 0, min_ratio: f64::INFINITY, max_ratio: 0.0, constant: 0.0 };
    for _ in 0..samples {
        let vb = random_in_ball(&mut rng, n, radius);
        let vh = random_in_ball(&mut rng, n, radius);
        let dv = dist2(&vb, &vh).sqrt();
        if dv < 1e-9 {
            continue;
        }
        let dy = target.point_from_slope(x0, &vb, k)?.distance(&target.point_from_slope(x0, &vh, k)?);
        let ratio = dy / dv;
        out.samples += 1;
        out.min_ratio = out.min_ratio.min(ratio);
        out.max_ratio = out.max_ratio.max(ratio);
    }
    if out.samples == 0 {
        return Err(Error::Invariant("no slope pairs sampled".into()));
    }
    out.constant = out.max_ratio.max(1.0 / out.min_ratio);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiconvexityReport {
    pub triples: usize,
    pub constant: f64,
    pub interpolated: bool,
    pub slack: f64,
    /// Largest `u(x_s) - (1-s) u(x_bar) - s u(x_hat) - C s (1-s) |x_bar - x_hat|^2`.
    pub max_defect: f64,
    pub passed: bool,
}

/// Semiconvexity inequality with `C = 2/gamma`, `gamma = (kappa-1) Delta`,
/// on seeded random triples. With `interpolate` the envelope is read off the
/// grid by multilinear interpolation and a Lipschitz-scale slack is allowed.
pub fn check_semiconvexity(env: &RefractorEnvelope, triples: usize, seed: u64, interpolate: bool) -> Result<SemiconvexityReport> {
    let scene = &env.scene;
    let grid = &scene.grid;
    let gamma = c_lower_bound(&scene.constants, scene.delta_cap);
    let constant = 2.0 / gamma;
    let slack = if interpolate { 2.0 * grid.cell_diameter() / scene.constants.k2m1().sqrt() } else { 0.0 };
    let shape = &scene.config.source.shape;
    let (lo, hi) = shape.bounding_box();
    let n = grid.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |x: &[f64]| -> Option<f64> {
        if interpolate {
            grid.interpolate(&env.grid_u, x)
        } else {
            Some(env.eval_raw(x).0)
        }
    };
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let x: Vec<f64> = (0..n).map(|d| rng.gen_range(lo[d]..=hi[d])).collect();
            if shape.contains(&x) && (!interpolate || grid.interpolate(&env.grid_u, &x).is_some()) {
                return x;
            }
        }
    };
    let mut report = SemiconvexityReport {
        triples: 0,
        constant,
        interpolated: interpolate,
        slack,
        max_defect: f64::NEG_INFINITY,
        passed: true,
    };
    let mut attempts = 0;
    while report.triples < triples {
        attempts += 1;
        if attempts > 100 * triples.max(1) {
            return Err(Error::Invariant("could not sample semiconvexity triples".into()));
        }
        let xb = draw(&mut rng);
        let xh = draw(&mut rng);
        let s: f64 = rng.gen_range(0.0..=1.0);
        let xs: Vec<f64> = xb.iter().zip(&xh).map(|(a, b)| (1.0 - s) * a + s * b).collect();
        let (Some(ub), Some(uh), Some(us)) = (eval(&xb), eval(&xh), eval(&xs)) else { continue };
        let d2 = dist2(&xb, &xh);
        let defect = us - (1.0 - s) * ub - s * uh - constant * s * (1.0 - s) * d2;
        report.triples += 1;
        report.max_defect = report.max_defect.max(defect);
    }
    report.passed = report.max_defect <= slack + 1e-12 * env.max_height().abs().max(1.0);
    Ok(report)
}
