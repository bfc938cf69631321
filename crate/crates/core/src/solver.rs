//! Parameter selection for the slab configuration and the energy-matching
//! iteration on the focal parameters.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist2, phi_from_dist2};
use crate::refractor::{assigned_to, ordered_sum, refractor_measure, RefractorEnvelope};
use crate::scene::{admissible_b_range, Scene, TargetPoint};

fn height_floor(kappa: f64, delta_cap: f64) -> f64 {
    delta_cap / (kappa * kappa - 1.0).sqrt()
}

/// `kappa s/(kappa^2-1) + sqrt(s^2/(kappa^2-1)^2 + Delta^2/(kappa^2-1))`, the
/// height drop from a focus to the lowest point of its sheet over `Omega`.
pub fn phi_aux(s: f64, kappa: f64, delta_cap: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::DomainError { function: "phi_aux", value: s });
    }
    let k2m1 = kappa * kappa - 1.0;
    Ok(kappa * s / k2m1 + (s * s / (k2m1 * k2m1) + delta_cap * delta_cap / k2m1).sqrt())
}

/// Inverse of [`phi_aux`]: `kappa y - sqrt(y^2 + Delta^2)`.
pub fn phi_aux_inv(y: f64, kappa: f64, delta_cap: f64) -> Result<f64> {
    let floor = height_floor(kappa, delta_cap);
    // a relative guard keeps the exact floor value inside the domain
    if !(y >= floor * (1.0 - 1e-14)) {
        return Err(Error::DomainError { function: "phi_aux_inv", value: y });
    }
    Ok((kappa * y - (y * y + delta_cap * delta_cap).sqrt()).max(0.0))
}

/// `(m*, b1_bar)` for the first target, the largest admissible parameter that
/// keeps its sheet above every other sheet at its maximal parameter.
pub fn compute_b1bar(targets: &[TargetPoint], delta_cap: f64, kappa: f64) -> Result<(f64, f64)> {
    if targets.len() < 2 {
        return Err(Error::SingleTarget);
    }
    let m = targets[1..]
        .iter()
        .map(|t| (t.h - (t.h * t.h + delta_cap * delta_cap).sqrt()) / (kappa - 1.0))
        .fold(f64::INFINITY, f64::min);
    let m_star = targets[0].h + m;
    let bound = height_floor(kappa, delta_cap);
    if !(m_star > bound) {
        return Err(Error::InfeasibleHeights { m_star, bound });
    }
    let h1 = targets[0].h;
    let cap = kappa * h1 - (h1 * h1 + delta_cap * delta_cap).sqrt();
    let b1 = phi_aux_inv(m_star, kappa, delta_cap)?.min(cap);
    Ok((m_star, b1))
}

/// Every quantity of the parameter chain for a given `tau1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterPipeline {
    pub kappa: f64,
    pub delta_cap: f64,
    pub w: f64,
    pub tau1: f64,
    pub tau0: f64,
    /// `phi^-1(tau1)`.
    pub inv_tau1: f64,
    /// `L = phi^-1(phi^-1(tau1)/(kappa-1))`, a lower bound for `b1_bar`.
    pub l_value: f64,
    /// Lower bound `delta` for every free parameter.
    pub delta_lb: f64,
    /// `m*`; without targets, its worst-case lower estimate `phi^-1(tau1)/(kappa-1)`.
    pub m_star: f64,
    /// `b1_bar`; without targets, its lower estimate `L`.
    pub b1_bar: f64,
}

impl ParameterPipeline {
    pub fn evaluate(kappa: f64, delta_cap: f64, w: f64, tau1: f64) -> Result<Self> {
        if !(kappa > 1.0 && delta_cap > 0.0 && w >= 0.0 && tau1.is_finite()) {
            return Err(Error::ConfigParse(format!(
                "pipeline needs kappa > 1, Delta > 0, w >= 0 (got {kappa}, {delta_cap}, {w})"
            )));
        }
        let inv_tau1 = phi_aux_inv(tau1, kappa, delta_cap)?;
        let m_est = inv_tau1 / (kappa - 1.0);
        let l_value = phi_aux_inv(m_est, kappa, delta_cap)?;
        let level = l_value / (kappa - 1.0) - w;
        let delta_lb = phi_aux_inv(level, kappa, delta_cap)?;
        let tau0 = tau1 + w - delta_lb / (kappa - 1.0);
        Ok(Self {
            kappa,
            delta_cap,
            w,
            tau1,
            tau0,
            inv_tau1,
            l_value,
            delta_lb,
            m_star: m_est,
            b1_bar: l_value,
        })
    }

    /// Replaces the worst-case estimates of `m*` and `b1_bar` with the values
    /// for a concrete target list.
    pub fn with_targets(mut self, targets: &[TargetPoint]) -> Result<Self> {
        let (m_star, b1) = compute_b1bar(targets, self.delta_cap, self.kappa)?;
        self.m_star = m_star;
        self.b1_bar = b1;
        Ok(self)
    }

    fn floor(&self) -> f64 {
        height_floor(self.kappa, self.delta_cap)
    }

    /// `tau1 - Delta/sqrt(kappa^2-1)`.
    pub fn height_margin(&self) -> f64 {
        self.tau1 - self.floor()
    }

    /// `phi^-1(tau1)/(kappa-1) - Delta/sqrt(kappa^2-1)`.
    pub fn m_estimate_margin(&self) -> f64 {
        self.inv_tau1 / (self.kappa - 1.0) - self.floor()
    }

    /// `L/(kappa-1) - w - Delta/sqrt(kappa^2-1)`; strictly positive when `delta > 0`.
    pub fn c1c2_margin(&self) -> f64 {
        self.l_value / (self.kappa - 1.0) - self.w - self.floor()
    }

    /// `tau1 - max(kappa tau0, tau0 + kappa Delta/(kappa-1))`.
    pub fn regularity_margin(&self) -> f64 {
        let k = self.kappa;
        self.tau1 - (k * self.tau0).max(self.tau0 + k * self.delta_cap / (k - 1.0))
    }

    /// `delta/((kappa-1) tau1)`, which tends to 1 as `tau1` grows.
    pub fn regularity_ratio(&self) -> f64 {
        self.delta_lb / ((self.kappa - 1.0) * self.tau1)
    }

    /// `b1_bar - delta`, non-negative for every admissible chain.
    pub fn b1_gap(&self) -> f64 {
        self.b1_bar - self.delta_lb
    }

    pub fn all_conditions_hold(&self) -> bool {
        self.height_margin() > 0.0
            && self.m_estimate_margin() > 0.0
            && self.c1c2_margin() > 0.0
            && self.regularity_margin() >= 0.0
    }
}

const SEARCH_LIMIT: f64 = 1e12;

fn passes(kappa: f64, delta_cap: f64, w: f64, tau1: f64) -> bool {
    ParameterPipeline::evaluate(kappa, delta_cap, w, tau1).map(|p| p.all_conditions_hold()).unwrap_or(false)
}

/// Smallest `tau1` (to bisection precision) for which every condition of the
/// chain holds, found by doubling from `max(1, Delta)` and then bisecting.
pub fn select_parameters(kappa: f64, delta_cap: f64, w: f64) -> Result<ParameterPipeline> {
    let limit = SEARCH_LIMIT * delta_cap;
    let mut hi = delta_cap.max(1.0);
    if passes(kappa, delta_cap, w, hi) {
        return ParameterPipeline::evaluate(kappa, delta_cap, w, hi);
    }
    let mut lo = hi;
    while !passes(kappa, delta_cap, w, hi) {
        lo = hi;
        hi *= 2.0;
        if hi > limit {
            return Err(Error::SearchOverflow { limit });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if passes(kappa, delta_cap, w, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    ParameterPipeline::evaluate(kappa, delta_cap, w, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub b: Vec<f64>,
    /// `max_i |M_i - a_i|` from a fresh measure evaluation.
    pub residual: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub measure: Vec<f64>,
    pub pipeline: ParameterPipeline,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub eps_energy: f64,
    pub max_rounds: usize,
    pub bisection_steps: usize,
}

impl SolveOptions {
    pub fn for_scene(scene: &Scene) -> Self {
        let n = scene.targets().len();
        Self {
            eps_energy: scene.energy_tolerance(),
            max_rounds: scene.config.tolerances.max_rounds.unwrap_or(200 * n),
            bisection_steps: 100,
        }
    }
}

struct Workspace {
    dist2: Vec<Vec<f64>>,
    phis: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(scene: &Scene, b: &[f64]) -> Self {
        let grid = &scene.grid;
        let dist2: Vec<Vec<f64>> = scene
            .targets()
            .iter()
            .map(|t| (0..grid.len()).map(|k| dist2(grid.center(k), &t.y)).collect())
            .collect();
        let mut ws = Self { phis: vec![Vec::new(); b.len()], dist2 };
        for i in 0..b.len() {
            ws.refresh(scene, i, b[i]);
        }
        ws
    }

    fn refresh(&mut self, scene: &Scene, i: usize, b: f64) {
        let h = scene.targets()[i].h;
        let k = &scene.constants;
        self.phis[i] = self.dist2[i].iter().map(|d| phi_from_dist2(*d, h, b, k)).collect();
    }

    /// Per-cell maximum over all targets except `i`, and over targets below `i`.
    fn competitors(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let len = self.phis[0].len();
        let mut other = vec![f64::NEG_INFINITY; len];
        let mut lower = vec![f64::NEG_INFINITY; len];
        for (j, p) in self.phis.iter().enumerate() {
            if j == i {
                continue;
            }
            for k in 0..len {
                other[k] = other[k].max(p[k]);
                if j < i {
                    lower[k] = lower[k].max(p[k]);
                }
            }
        }
        (other, lower)
    }

    fn measure_all(&self, scene: &Scene) -> Vec<f64> {
        let n_t = self.phis.len();
        let tol = scene.tie_tolerance();
        (0..n_t)
            .map(|i| {
                let (other, lower) = self.competitors(i);
                measure_of(scene, &self.phis[i], &other, &lower, tol)
            })
            .collect()
    }
}

fn measure_of(scene: &Scene, phi: &[f64], other: &[f64], lower: &[f64], tol: f64) -> f64 {
    let masses = &scene.grid.masses;
    ordered_sum(masses.len(), |k| if assigned_to(phi[k], other[k], lower[k], tol) { masses[k] } else { 0.0 })
}

fn residual(measure: &[f64], targets: &[TargetPoint]) -> f64 {
    measure.iter().zip(targets).map(|(m, t)| (m - t.weight).abs()).fold(0.0, f64::max)
}

/// Coordinate descent on the free parameters `b_2..b_N` with `b_1` fixed.
pub fn solve_discrete(scene: &Arc<Scene>, opts: SolveOptions) -> Result<SolveResult> {
    let targets = scene.targets();
    let n_t = targets.len();
    let kappa = scene.constants.kappa;
    let delta_cap = scene.delta_cap;
    let slab = scene.config.slab;
    let eps = opts.eps_energy;
    let cell_mass = scene.grid.max_cell_mass();
    if eps < 2.0 * cell_mass {
        return Err(Error::GridTooCoarse { eps, cell_mass });
    }
    let imbalance = (scene.total_weight() - scene.total_energy).abs();
    if imbalance > eps {
        return Err(Error::HypothesisNotMet(format!(
            "weights differ from the source energy by {imbalance:e} > {eps:e}"
        )));
    }
    let pipeline = ParameterPipeline::evaluate(kappa, delta_cap, slab.w, slab.tau1)?;
    let upper: Vec<f64> = targets
        .iter()
        .map(|t| admissible_b_range(t, delta_cap, &scene.constants).map(|r| r.1))
        .collect::<Result<_>>()?;

    if n_t == 1 {
        let env = RefractorEnvelope::new(scene.clone(), upper.clone())?;
        let m = refractor_measure(&env);
        let mut p = pipeline;
        p.b1_bar = upper[0];
        p.m_star = targets[0].h;
        return Ok(SolveResult {
            b: upper,
            residual: residual(&m.values, targets),
            iterations: 0,
            history: Vec::new(),
            measure: m.values,
            pipeline: p,
        });
    }

    let pipeline = pipeline.with_targets(targets)?;
    let delta_lb = pipeline.delta_lb;
    let mut b = upper.clone();
    b[0] = pipeline.b1_bar;
    let tol = scene.tie_tolerance();
    let mut ws = Workspace::new(scene, &b);
    let mut measure = ws.measure_all(scene);
    let mut history = Vec::new();
    let mut rounds = 0;

    loop {
        let res = residual(&measure, targets);
        if res <= eps {
            break;
        }
        let (i, deficit) = (1..n_t)
            .map(|i| (i, targets[i].weight - measure[i]))
            .fold((0, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
        if rounds >= opts.max_rounds || !(deficit > 0.0) {
            return Err(Error::NonConvergence { rounds, residual: res, history });
        }
        let target = targets[i].weight;
        let (other, lower) = ws.competitors(i);
        let h = targets[i].h;
        let d2 = &ws.dist2[i];
        let mass_at = |bi: f64| {
            let phi: Vec<f64> = d2.iter().map(|d| phi_from_dist2(*d, h, bi, &scene.constants)).collect();
            measure_of(scene, &phi, &other, &lower, tol)
        };
        let mut lo = delta_lb.min(b[i]);
        let mut hi = b[i];
        let m_lo = mass_at(lo);
        let next = if m_lo < target {
            lo
        } else {
            let mut m_lo = m_lo;
            for _ in 0..opts.bisection_steps {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let m = mass_at(mid);
                if m >= target {
                    lo = mid;
                    m_lo = m;
                } else {
                    hi = mid;
                }
            }
            if m_lo > target + eps {
                hi
            } else {
                lo
            }
        };
        b[i] = next;
        ws.refresh(scene, i, next);
        measure = ws.measure_all(scene);
        rounds += 1;
        history.push(residual(&measure, targets));
    }

    for (i, bi) in b.iter().enumerate().skip(1) {
        if *bi < delta_lb {
            return Err(Error::Invariant(format!("b[{i}] = {bi} fell below delta = {delta_lb}")));
        }
    }
    let env = RefractorEnvelope::new(scene.clone(), b.clone())?;
    let m = refractor_measure(&env);
    Ok(SolveResult {
        residual: residual(&m.values, targets),
        b,
        iterations: rounds,
        history,
        measure: m.values,
        pipeline,
    })
}
