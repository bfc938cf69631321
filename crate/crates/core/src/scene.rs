//! Scene description, the source-domain grid, and admissibility checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist2, norm, OpticalConstants, PointUp};
use crate::solver::ParameterPipeline;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refraction {
    pub n1: f64,
    pub n2: f64,
}

/// Convex source domain `Omega`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceShape {
    Box { min: Vec<f64>, max: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl SourceShape {
    pub fn dim(&self) -> usize {
        match self {
            SourceShape::Box { min, .. } => min.len(),
            SourceShape::Ball { center, .. } => center.len(),
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            SourceShape::Box { min, max } => (min.clone(), max.clone()),
            SourceShape::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            SourceShape::Box { min, max } => {
                x.iter().zip(min.iter().zip(max)).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
            }
            SourceShape::Ball { center, radius } => dist2(x, center) <= radius * radius,
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            SourceShape::Box { min, max } => dist2(min, max).sqrt(),
            SourceShape::Ball { radius, .. } => 2.0 * radius,
        }
    }

    /// Point of the closed domain farthest from `y`.
    pub fn farthest_point(&self, y: &[f64]) -> Vec<f64> {
        match self {
            SourceShape::Box { min, max } => y
                .iter()
                .zip(min.iter().zip(max))
                .map(|(v, (lo, hi))| if (v - lo).abs() >= (hi - v).abs() { *lo } else { *hi })
                .collect(),
            SourceShape::Ball { center, radius } => {
                let d: Vec<f64> = center.iter().zip(y).map(|(c, v)| c - v).collect();
                let len = norm(&d);
                if len == 0.0 {
                    let mut p = center.clone();
                    p[0] += radius;
                    p
                } else {
                    center.iter().zip(&d).map(|(c, di)| c + radius * di / len).collect()
                }
            }
        }
    }

    /// `diam(Omega ∪ {y})`.
    pub fn diameter_with(&self, y: &[f64]) -> f64 {
        let far = dist2(&self.farthest_point(y), y).sqrt();
        self.diameter().max(far)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledIntensity {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Node count per axis (at least 2).
    pub shape: Vec<usize>,
    /// Node values, last axis fastest.
    pub values: Vec<f64>,
}

impl SampledIntensity {
    /// Multilinear interpolation, clamped to the sampled box.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.shape.len();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for d in 0..n {
            let cells = (self.shape[d] - 1) as f64;
            let t = ((x[d] - self.min[d]) / (self.max[d] - self.min[d])).clamp(0.0, 1.0) * cells;
            let i = (t.floor() as usize).min(self.shape[d] - 2);
            base[d] = i;
            frac[d] = t - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut lin = 0;
            for d in 0..n {
                let bit = (corner >> (n - 1 - d)) & 1;
                w *= if bit == 1 { frac[d] } else { 1.0 - frac[d] };
                lin = lin * self.shape[d] + base[d] + bit;
            }
            acc += w * self.values[lin];
        }
        acc
    }
}

/// Source intensity `f`: a constant or a sampled grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntensitySpec {
    Constant(f64),
    Sampled { grid: SampledIntensity },
}

impl IntensitySpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            IntensitySpec::Constant(c) => *c,
            IntensitySpec::Sampled { grid } => grid.eval(x),
        }
    }
}

impl Default for IntensitySpec {
    fn default() -> Self {
        IntensitySpec::Constant(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDomain {
    pub shape: SourceShape,
    /// Cells per axis of the bounding box.
    pub grid: usize,
    #[serde(default)]
    pub intensity: IntensitySpec,
}

/// Discrete target point `Y = (y, h)` with energy `weight`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPoint {
    pub y: Vec<f64>,
    pub h: f64,
    pub weight: f64,
}

impl TargetPoint {
    pub fn point(&self) -> PointUp {
        PointUp::new(self.y.clone(), self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabSpec {
    pub tau1: f64,
    pub w: f64,
    pub tau0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Absolute energy tolerance; defaults to `1e-3 * ∫f`.
    pub energy: Option<f64>,
    /// Required strict margin for the target-height lower bound.
    pub margin: f64,
    /// Relative argmax tie tolerance (scaled by the largest target height).
    pub tie: f64,
    /// Angular separation (radians) for the visibility test.
    pub visibility: f64,
    /// Bisection-round cap; defaults to `200 * N`.
    pub max_rounds: Option<usize>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { energy: None, margin: 0.0, tie: 1e-10, visibility: 1e-9, max_rounds: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub refraction: Refraction,
    pub source: SourceDomain,
    pub targets: Vec<TargetPoint>,
    pub slab: SlabSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl SceneConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }
}

/// Cell-centred grid over the bounding box of `Omega`; cells whose centre lies
/// in `Omega` are active and carry the midpoint-rule mass `f(centre) * |cell|`.
#[derive(Debug, Clone)]
pub struct SourceGrid {
    pub dim: usize,
    pub res: usize,
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    /// Lattice index of each active cell, increasing.
    pub cells: Vec<usize>,
    lookup: Vec<usize>,
    centers: Vec<f64>,
    pub masses: Vec<f64>,
    pub cell_volume: f64,
}

const INACTIVE: usize = usize::MAX;

impl SourceGrid {
    pub fn new(shape: &SourceShape, res: usize, intensity: &IntensitySpec) -> Self {
        let dim = shape.dim();
        let (lo, hi) = shape.bounding_box();
        let spacing: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a) / res as f64).collect();
        let cell_volume: f64 = spacing.iter().product();
        let total = res.pow(dim as u32);
        let mut lookup = vec![INACTIVE; total];
        let mut cells = Vec::new();
        let mut centers = Vec::new();
        let mut masses = Vec::new();
        let mut c = vec![0.0; dim];
        for lin in 0..total {
            let mut rem = lin;
            for d in (0..dim).rev() {
                let i = rem % res;
                rem /= res;
                c[d] = lo[d] + (i as f64 + 0.5) * spacing[d];
            }
            if shape.contains(&c) {
                lookup[lin] = cells.len();
                cells.push(lin);
                centers.extend_from_slice(&c);
                masses.push(intensity.eval(&c) * cell_volume);
            }
        }
        Self { dim, res, origin: lo, spacing, cells, lookup, centers, masses, cell_volume }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn center(&self, k: usize) -> &[f64] {
        &self.centers[k * self.dim..(k + 1) * self.dim]
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn max_cell_mass(&self) -> f64 {
        self.masses.iter().cloned().fold(0.0, f64::max)
    }

    pub fn cell_diameter(&self) -> f64 {
        norm(&self.spacing)
    }

    fn coords(&self, lin: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        let mut rem = lin;
        for d in (0..self.dim).rev() {
            out[d] = rem % self.res;
            rem /= self.res;
        }
        out
    }

    /// Lattice coordinates of active cell `k`.
    pub fn cell_coords(&self, k: usize) -> Vec<usize> {
        self.coords(self.cells[k])
    }

    fn linear(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, c| acc * self.res + c)
    }

    /// Active cell at lattice coordinates, if any.
    pub fn active_at(&self, coords: &[usize]) -> Option<usize> {
        if coords.iter().any(|&c| c >= self.res) {
            return None;
        }
        match self.lookup[self.linear(coords)] {
            INACTIVE => None,
            k => Some(k),
        }
    }

    /// Active cell whose box contains `x`.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut coords = vec![0; self.dim];
        for d in 0..self.dim {
            let t = (x[d] - self.origin[d]) / self.spacing[d];
            if !(t >= 0.0) || t > self.res as f64 {
                return None;
            }
            coords[d] = (t.floor() as usize).min(self.res - 1);
        }
        self.active_at(&coords)
    }

    /// Axis neighbours of cell `k`: `Some(active index)` or `None` when the
    /// neighbour is outside the domain.
    pub fn neighbors(&self, k: usize) -> Vec<Option<usize>> {
        let base = self.coords(self.cells[k]);
        let mut out = Vec::with_capacity(2 * self.dim);
        for d in 0..self.dim {
            for step in [-1i64, 1] {
                let v = base[d] as i64 + step;
                if v < 0 || v >= self.res as i64 {
                    out.push(None);
                    continue;
                }
                let mut c = base.clone();
                c[d] = v as usize;
                out.push(self.active_at(&c));
            }
        }
        out
    }

    /// Multilinear interpolation of cell-centre values; `None` when a
    /// surrounding centre is inactive or `x` lies outside the centre lattice.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Option<f64> {
        let n = self.dim;
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for d in 0..n {
            let t = (x[d] - self.origin[d]) / self.spacing[d] - 0.5;
            if !(t >= 0.0) || t > (self.res - 1) as f64 {
                return None;
            }
            let i = (t.floor() as usize).min(self.res - 2);
            base[d] = i;
            frac[d] = t - i as f64;
        }
        let mut acc = 0.0;
        let mut c = vec![0; n];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            for d in 0..n {
                let bit = (corner >> d) & 1;
                c[d] = base[d] + bit;
                w *= if bit == 1 { frac[d] } else { 1.0 - frac[d] };
            }
            let k = self.active_at(&c)?;
            acc += w * values[k];
        }
        Some(acc)
    }
}

/// A configuration together with its derived quantities.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub constants: OpticalConstants,
    pub grid: SourceGrid,
    /// `Delta = max_y diam(Omega ∪ {y})`.
    pub delta_cap: f64,
    /// Discrete `∫f`, the sum of the cell masses.
    pub total_energy: f64,
}

impl Scene {
    pub fn new(config: SceneConfig) -> Result<Self> {
        let constants = OpticalConstants::new(config.refraction.n1, config.refraction.n2)?;
        let n = config.source.shape.dim();
        if !(1..=3).contains(&n) {
            return Err(Error::ConfigParse(format!("dimension {n} not in 1..=3")));
        }
        match &config.source.shape {
            SourceShape::Box { min, max } => {
                if max.len() != n || min.iter().zip(max).any(|(a, b)| !(b > a)) {
                    return Err(Error::ConfigParse("box must have min < max on every axis".into()));
                }
            }
            SourceShape::Ball { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::ConfigParse("ball radius must be positive".into()));
                }
            }
        }
        if config.source.grid < 8 {
            return Err(Error::ConfigParse("grid resolution must be at least 8".into()));
        }
        if let IntensitySpec::Sampled { grid } = &config.source.intensity {
            let expect: usize = grid.shape.iter().product();
            if grid.shape.len() != n || grid.shape.iter().any(|&s| s < 2) || grid.values.len() != expect {
                return Err(Error::ConfigParse("sampled intensity shape mismatch".into()));
            }
            if grid.values.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::ConfigParse("intensity must be non-negative".into()));
            }
        } else if let IntensitySpec::Constant(c) = config.source.intensity {
            if !(c > 0.0) {
                return Err(Error::ConfigParse("constant intensity must be positive".into()));
            }
        }
        if config.targets.is_empty() {
            return Err(Error::ConfigParse("at least one target is required".into()));
        }
        for (i, t) in config.targets.iter().enumerate() {
            if t.y.len() != n {
                return Err(Error::ConfigParse(format!("target {i} has dimension {}", t.y.len())));
            }
            if !(t.weight > 0.0) {
                return Err(Error::ConfigParse(format!("target {i} weight must be positive")));
            }
        }
        let s = config.slab;
        if !(s.tau1.is_finite() && s.tau0.is_finite() && s.w >= 0.0) {
            return Err(Error::ConfigParse("slab values must be finite with w >= 0".into()));
        }
        let grid = SourceGrid::new(&config.source.shape, config.source.grid, &config.source.intensity);
        if grid.is_empty() {
            return Err(Error::ConfigParse("source grid has no active cells".into()));
        }
        let delta_cap = config
            .targets
            .iter()
            .map(|t| config.source.shape.diameter_with(&t.y))
            .fold(0.0, f64::max);
        let total_energy = grid.total_mass();
        Ok(Self { config, constants, grid, delta_cap, total_energy })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(SceneConfig::from_json(text)?)
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn targets(&self) -> &[TargetPoint] {
        &self.config.targets
    }

    pub fn energy_tolerance(&self) -> f64 {
        self.config.tolerances.energy.unwrap_or(1e-3 * self.total_energy)
    }

    /// Absolute tie tolerance for the envelope argmax.
    pub fn tie_tolerance(&self) -> f64 {
        let scale = self.config.targets.iter().map(|t| t.h.abs()).fold(1.0, f64::max);
        self.config.tolerances.tie * scale
    }

    pub fn total_weight(&self) -> f64 {
        self.config.targets.iter().map(|t| t.weight).sum()
    }
}

/// Open interval `(0, kappa h - sqrt(h^2 + Delta^2))` of focal parameters
/// keeping the sheet positive over `Omega`.
pub fn admissible_b_range(
    target: &TargetPoint,
    delta_cap: f64,
    constants: &OpticalConstants,
) -> Result<(f64, f64)> {
    let bound = delta_cap / constants.k2m1().sqrt();
    let upper = constants.kappa * target.h - (target.h * target.h + delta_cap * delta_cap).sqrt();
    if !(target.h > bound) || !(upper > 0.0) {
        return Err(Error::EmptyRange { height: target.h, bound });
    }
    Ok((0.0, upper))
}

/// `e_{n+1}·(Y - X)/|Y - X| - n2/n1`; non-negative means no total reflection.
pub fn tir_margin(x: &PointUp, y: &PointUp, constants: &OpticalConstants) -> f64 {
    (y.last - x.last) / x.distance(y) - constants.n2 / constants.n1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub passed: bool,
    pub delta_cap: f64,
    pub checks: Vec<CheckEntry>,
}

impl DiagnosticReport {
    pub fn check(&self, name: &str) -> Option<&CheckEntry> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn entry(name: &str, passed: bool, margin: f64, detail: impl Into<String>) -> CheckEntry {
    CheckEntry { name: name.to_string(), passed, margin, detail: detail.into() }
}

/// Angle between two vectors, stable for nearly parallel inputs.
fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

/// Minimum angular separation, seen from grid points of the cylinder at
/// heights `0, tau0/2, tau0`, between any two targets.
pub fn visibility_margin(scene: &Scene) -> (f64, Option<(usize, usize)>) {
    let targets: Vec<Vec<f64>> = scene.targets().iter().map(|t| t.point().to_vec()).collect();
    let tau0 = scene.config.slab.tau0;
    let n = scene.dim();
    let mut best = f64::INFINITY;
    let mut pair = None;
    let mut a = vec![0.0; n + 1];
    let mut b = vec![0.0; n + 1];
    for k in 0..scene.grid.len() {
        let c = scene.grid.center(k);
        for level in [0.0, 0.5 * tau0, tau0] {
            for i in 0..targets.len() {
                for j in (i + 1)..targets.len() {
                    for d in 0..n {
                        a[d] = targets[i][d] - c[d];
                        b[d] = targets[j][d] - c[d];
                    }
                    a[n] = targets[i][n] - level;
                    b[n] = targets[j][n] - level;
                    let ang = angle_between(&a, &b);
                    if ang < best {
                        best = ang;
                        pair = Some((i, j));
                    }
                }
            }
        }
    }
    (best, pair)
}

/// Runs every admissibility check; failures are report entries, not errors.
pub fn validate_scene(scene: &Scene) -> DiagnosticReport {
    let cfg = &scene.config;
    let k = &scene.constants;
    let kappa = k.kappa;
    let delta = scene.delta_cap;
    let slab = cfg.slab;
    let mut checks = Vec::new();

    let min_h = cfg.targets.iter().map(|t| t.h).fold(f64::INFINITY, f64::min);
    let height_bound = delta / k.k2m1().sqrt();
    let m = min_h - height_bound;
    checks.push(entry(
        "target_height_lower_bound",
        m > cfg.tolerances.margin,
        m,
        format!("min target height {min_h} vs Delta/sqrt(kappa^2-1) = {height_bound}"),
    ));

    let order = slab.tau0.min(slab.tau1 - slab.tau0);
    checks.push(entry("slab_order", order > 0.0, order, "requires 0 < tau0 < tau1"));

    let need = (kappa * slab.tau0).max(slab.tau0 + kappa * delta / (kappa - 1.0));
    let compat = slab.tau1 - need;
    checks.push(entry(
        "compatibility",
        compat >= 0.0,
        compat,
        format!("tau1 = {} vs max(kappa tau0, tau0 + kappa Delta/(kappa-1)) = {need}", slab.tau1),
    ));

    let slab_margin = cfg
        .targets
        .iter()
        .map(|t| (t.h - slab.tau1).min(slab.tau1 + slab.w - t.h))
        .fold(f64::INFINITY, f64::min);
    checks.push(entry("slab_membership", slab_margin >= 0.0, slab_margin, "tau1 <= h <= tau1 + w"));

    let mut tir = f64::INFINITY;
    for t in &cfg.targets {
        let far = PointUp::new(cfg.source.shape.farthest_point(&t.y), slab.tau0);
        tir = tir.min(tir_margin(&far, &t.point(), k));
    }
    checks.push(entry(
        "total_internal_reflection",
        tir >= 0.0,
        tir,
        "minimum over the top face of the cylinder (farthest point per target)",
    ));

    let (vis, pair) = if cfg.targets.len() > 1 { visibility_margin(scene) } else { (f64::INFINITY, None) };
    let vis_margin = if vis.is_finite() { vis - cfg.tolerances.visibility } else { f64::MAX };
    checks.push(entry(
        "visibility",
        vis_margin > 0.0,
        vis_margin,
        match pair {
            Some((i, j)) => format!("closest pair ({i}, {j}) at {vis:e} rad"),
            None => "single target".to_string(),
        },
    ));

    let mut b_margin = f64::INFINITY;
    let mut b_detail = String::from("all ranges non-empty");
    for (i, t) in cfg.targets.iter().enumerate() {
        match admissible_b_range(t, delta, k) {
            Ok((_, hi)) => b_margin = b_margin.min(hi),
            Err(_) => {
                b_margin = b_margin.min(kappa * t.h - (t.h * t.h + delta * delta).sqrt());
                b_detail = format!("target {i} has an empty range");
            }
        }
    }
    checks.push(entry("admissible_b_range", b_margin > 0.0, b_margin, b_detail));

    let eps = scene.energy_tolerance();
    let imbalance = (scene.total_weight() - scene.total_energy).abs();
    checks.push(entry(
        "energy_balance",
        imbalance <= eps,
        eps - imbalance,
        format!("sum of weights {} vs integral of f {}", scene.total_weight(), scene.total_energy),
    ));

    match ParameterPipeline::evaluate(kappa, delta, slab.w, slab.tau1) {
        Ok(p) => {
            let c12 = p.c1c2_margin();
            checks.push(entry(
                "lower_bound_parameter",
                c12 > 0.0,
                c12,
                format!("delta = {}, b1_bar lower estimate = {}", p.delta_lb, p.l_value),
            ));
            let cyl = slab.tau0 - p.tau0;
            checks.push(entry(
                "cylinder_height",
                cyl >= 0.0,
                cyl,
                format!("guaranteed envelope height tau1 + w - delta/(kappa-1) = {}", p.tau0),
            ));
        }
        Err(e) => {
            checks.push(entry("lower_bound_parameter", false, f64::NEG_INFINITY, e.to_string()));
            checks.push(entry("cylinder_height", false, f64::NEG_INFINITY, e.to_string()));
        }
    }

    let passed = checks.iter().all(|c| c.passed);
    DiagnosticReport { passed, delta_cap: delta, checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn pipeline_scene() -> SceneConfig {
        // Omega = [-0.5, 0.5] gives Delta = 1 for targets above it.
        SceneConfig {
            refraction: Refraction { n1: 2.0, n2: 1.0 },
            source: SourceDomain {
                shape: SourceShape::Box { min: vec![-0.5], max: vec![0.5] },
                grid: 64,
                intensity: IntensitySpec::Constant(1.0),
            },
            targets: vec![
                TargetPoint { y: vec![-0.2], h: 10.0, weight: 0.5 },
                TargetPoint { y: vec![0.2], h: 10.25, weight: 0.5 },
            ],
            slab: SlabSpec { tau1: 10.0, w: 0.5, tau0: 1.1531 },
            tolerances: Tolerances::default(),
        }
    }

    #[test]
    fn b_range_example() {
        let k = OpticalConstants::from_kappa(2.0).unwrap();
        let t = TargetPoint { y: vec![0.0], h: 10.0, weight: 1.0 };
        let (lo, hi) = admissible_b_range(&t, 1.0, &k).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - (20.0 - 101f64.sqrt())).abs() < 1e-12);
        assert!((hi - 9.9501).abs() < 1e-4);
        assert!(hi < (k.kappa - 1.0) * t.h);
    }

    #[test]
    fn b_range_empty_at_boundary() {
        let k = OpticalConstants::from_kappa(2.0).unwrap();
        let t = TargetPoint { y: vec![0.0], h: 1.0 / 3f64.sqrt(), weight: 1.0 };
        assert!(matches!(admissible_b_range(&t, 1.0, &k), Err(Error::EmptyRange { .. })));
    }

    #[test]
    fn tir_examples() {
        let k = OpticalConstants::from_kappa(2.0).unwrap();
        let x = PointUp::new(vec![0.0], 0.0);
        assert!((tir_margin(&x, &PointUp::new(vec![0.0], 3.0), &k) - 0.5).abs() < 1e-15);
        let m = tir_margin(&x, &PointUp::new(vec![1.0], 1.0), &k);
        assert!((m - (0.5f64.sqrt() - 0.5)).abs() < 1e-15);
        assert!((m - 0.2071).abs() < 1e-4);
        // on the cone of opening arccos(1/2)
        let on_cone = PointUp::new(vec![3f64.sqrt()], 1.0);
        assert!(tir_margin(&x, &on_cone, &k).abs() < 1e-15);
    }

    #[test]
    fn pipeline_scene_passes() {
        let scene = Scene::new(pipeline_scene()).unwrap();
        assert!((scene.delta_cap - 1.0).abs() < 1e-15);
        let r = validate_scene(&scene);
        assert!(r.passed, "{r:#?}");
    }

    #[test]
    fn low_tau1_fails_compatibility() {
        let mut cfg = pipeline_scene();
        cfg.slab.tau0 = 6.0;
        let r = validate_scene(&Scene::new(cfg).unwrap());
        let c = r.check("compatibility").unwrap();
        assert!(!c.passed && c.margin < 0.0);
        assert!(!r.passed);
    }

    #[test]
    fn far_low_target_triggers_tir() {
        let mut cfg = pipeline_scene();
        cfg.targets[1] = TargetPoint { y: vec![30.0], h: 10.25, weight: 0.5 };
        let r = validate_scene(&Scene::new(cfg).unwrap());
        let c = r.check("total_internal_reflection").unwrap();
        assert!(!c.passed && c.margin < 0.0, "{c:?}");
    }

    #[test]
    fn collinear_targets_fail_visibility() {
        let mut cfg = pipeline_scene();
        // both targets on the vertical line through a cell centre
        let x = -0.5 + (10.0 + 0.5) / 64.0;
        cfg.targets[0] = TargetPoint { y: vec![x], h: 10.0, weight: 0.5 };
        cfg.targets[1] = TargetPoint { y: vec![x], h: 10.4, weight: 0.5 };
        let r = validate_scene(&Scene::new(cfg).unwrap());
        assert!(!r.check("visibility").unwrap().passed);
    }

    #[test]
    fn raising_tau1_keeps_height_checks() {
        let base = pipeline_scene();
        for extra in [0.0, 1.0, 5.0, 50.0] {
            let mut cfg = base.clone();
            cfg.slab.tau1 += extra;
            for t in cfg.targets.iter_mut() {
                t.h += extra;
            }
            let r = validate_scene(&Scene::new(cfg).unwrap());
            assert!(r.check("target_height_lower_bound").unwrap().passed);
            assert!(r.check("compatibility").unwrap().passed);
        }
    }

    #[test]
    fn ball_grid_and_interpolation() {
        let shape = SourceShape::Ball { center: vec![0.0, 0.0], radius: 1.0 };
        let g = SourceGrid::new(&shape, 32, &IntensitySpec::Constant(2.0));
        let area = g.total_mass() / 2.0;
        assert!((area - std::f64::consts::PI).abs() < 0.05);
        let vals: Vec<f64> = (0..g.len()).map(|k| g.center(k)[0] * 3.0 - g.center(k)[1]).collect();
        let v = g.interpolate(&vals, &[0.1, 0.2]).unwrap();
        assert!((v - 0.1).abs() < 1e-12);
        assert!(g.interpolate(&vals, &[0.99, 0.99]).is_none());
    }

    #[test]
    fn sampled_intensity_is_multilinear() {
        let s = SampledIntensity {
            min: vec![0.0, 0.0],
            max: vec![1.0, 1.0],
            shape: vec![2, 2],
            values: vec![0.0, 1.0, 2.0, 3.0],
        };
        // f = 2 x + y
        assert!((s.eval(&[0.25, 0.5]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = pipeline_scene();
        let back = SceneConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
        let raw = r#"{"refraction":{"n1":1.5,"n2":1.0},
            "source":{"shape":{"ball":{"center":[0,0],"radius":0.5}},"grid":16,"intensity":1.0},
            "targets":[{"y":[0,0],"h":9,"weight":0.7}],
            "slab":{"tau1":9,"w":0.2,"tau0":1}}"#;
        let c = SceneConfig::from_json(raw).unwrap();
        assert_eq!(c.source.shape.dim(), 2);
        assert!(SceneConfig::from_json("{").is_err());
    }
}
