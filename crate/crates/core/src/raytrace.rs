//! Forward tracing of the vertical beam through a solved envelope.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{norm, refract_dir, snell_refract, upper_normal, PointUp};
use crate::refractor::{ordered_sums, RefractorEnvelope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayRecord {
    pub origin: Vec<f64>,
    pub hit: Vec<f64>,
    pub normal: Vec<f64>,
    pub lambda: Vec<f64>,
    pub target: usize,
    /// Distance from the assigned target to the refracted line.
    pub miss: f64,
    /// Largest componentwise gap between the Snell direction and `Lambda(Du)`.
    pub path_gap: f64,
}

/// Distance from `p` to the ray `origin + s dir`, `s >= 0`, for a unit `dir`.
pub fn point_to_ray(p: &[f64], origin: &[f64], dir: &[f64]) -> f64 {
    let w: Vec<f64> = p.iter().zip(origin).map(|(a, b)| a - b).collect();
    let along: f64 = w.iter().zip(dir).map(|(a, b)| a * b).sum();
    if along <= 0.0 {
        return norm(&w);
    }
    let perp: Vec<f64> = w.iter().zip(dir).map(|(a, d)| a - along * d).collect();
    norm(&perp)
}

fn trace_branch(x: &[f64], u: f64, i: usize, env: &RefractorEnvelope) -> Result<RayRecord> {
    let k = &env.scene.constants;
    let grad = env.branches[i].gradient(x, k);
    let normal = upper_normal(&grad);
    let lambda = snell_refract(&normal, k)?;
    let other = refract_dir(&grad, k)?.lambda;
    let path_gap = lambda.iter().zip(&other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let hit = PointUp::new(x.to_vec(), u).to_vec();
    let miss = point_to_ray(&env.scene.targets()[i].point().to_vec(), &hit, &lambda);
    Ok(RayRecord { origin: x.to_vec(), hit, normal, lambda, target: i, miss, path_gap })
}

/// Traces the vertical ray through `x` using the active branch's gradient.
pub fn trace_ray(x: &[f64], env: &RefractorEnvelope) -> Result<RayRecord> {
    if !env.scene.config.source.shape.contains(x) {
        return Err(Error::OutOfDomain);
    }
    let (u, i, tie) = env.eval_raw(x);
    if tie {
        return Err(Error::TieCell(env.scene.grid.locate(x).unwrap_or(usize::MAX)));
    }
    trace_branch(x, u, i, env)
}

/// Traces the ray through the centre of grid cell `cell`.
pub fn trace_cell(cell: usize, env: &RefractorEnvelope) -> Result<RayRecord> {
    if env.tie[cell] {
        return Err(Error::TieCell(cell));
    }
    trace_branch(env.scene.grid.center(cell), env.grid_u[cell], env.assignment[cell], env)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TraceMode {
    Cell,
    MonteCarlo { rays: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyHistogram {
    pub mode: TraceMode,
    pub values: Vec<f64>,
    pub total: f64,
    pub rays: usize,
    /// Rays through tie points; their energy goes to the lowest index.
    pub ties: usize,
    pub max_miss: f64,
    pub max_path_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceOutput {
    pub records: Vec<RayRecord>,
    pub histogram: EnergyHistogram,
}

/// Traces every ray of the chosen mode and bins its energy by target. In
/// cell mode the bins use the measure's partition and summation order, so
/// they agree with [`crate::refractor::refractor_measure`] bit for bit.
pub fn trace_all(env: &RefractorEnvelope, mode: TraceMode) -> Result<TraceOutput> {
    let grid = &env.scene.grid;
    let bins = env.n_targets();
    let (records, values, ties, rays) = match mode {
        TraceMode::Cell => {
            let records: Vec<Option<RayRecord>> = (0..grid.len())
                .into_par_iter()
                .map(|c| match trace_cell(c, env) {
                    Ok(r) => Ok(Some(r)),
                    Err(Error::TieCell(_)) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect::<Result<_>>()?;
            let masses = &grid.masses;
            let values = ordered_sums(grid.len(), bins, |k| Some((env.assignment[k], masses[k])));
            let ties = records.iter().filter(|r| r.is_none()).count();
            (records.into_iter().flatten().collect::<Vec<_>>(), values, ties, grid.len())
        }
        TraceMode::MonteCarlo { rays, seed } => {
            let shape = &env.scene.config.source.shape;
            let intensity = &env.scene.config.source.intensity;
            let (lo, hi) = shape.bounding_box();
            let volume: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points: Vec<Vec<f64>> =
                (0..rays).map(|_| lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(*a..*b)).collect()).collect();
            let traced: Vec<Option<(usize, f64, Option<RayRecord>)>> = points
                .par_iter()
                .map(|x| {
                    if !shape.contains(x) {
                        return Ok(None);
                    }
                    let weight = intensity.eval(x) * volume / rays as f64;
                    let (_, i, tie) = env.eval_raw(x);
                    if tie {
                        return Ok(Some((i, weight, None)));
                    }
                    Ok(Some((i, weight, Some(trace_ray(x, env)?))))
                })
                .collect::<Result<_>>()?;
            let values = ordered_sums(traced.len(), bins, |k| traced[k].as_ref().map(|t| (t.0, t.1)));
            let ties = traced.iter().flatten().filter(|t| t.2.is_none()).count();
            let records = traced.into_iter().flatten().filter_map(|t| t.2).collect();
            (records, values, ties, rays)
        }
    };
    let max_miss = records.iter().map(|r| r.miss).fold(0.0, f64::max);
    let max_path_gap = records.iter().map(|r| r.path_gap).fold(0.0, f64::max);
    let total = values.iter().sum();
    Ok(TraceOutput { records, histogram: EnergyHistogram { mode, values, total, rays, ties, max_miss, max_path_gap } })
}

/// Per-target received energy; see [`trace_all`].
pub fn energy_histogram(env: &RefractorEnvelope, mode: TraceMode) -> Result<EnergyHistogram> {
    Ok(trace_all(env, mode)?.histogram)
}

/// `trace.csv`: origin, hit point, refracted direction, target and miss per ray.
pub fn trace_csv(records: &[RayRecord], n: usize) -> String {
    let mut s = String::new();
    let mut cols: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    cols.extend((1..=n + 1).map(|i| format!("hit{i}")));
    cols.extend((1..=n + 1).map(|i| format!("dir{i}")));
    cols.push("target".into());
    cols.push("miss".into());
    s.push_str(&cols.join(","));
    s.push('\n');
    for r in records {
        let nums: Vec<String> = r.origin.iter().chain(&r.hit).chain(&r.lambda).map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{},{},{:?}", nums.join(","), r.target, r.miss);
    }
    s
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::refractor::refractor_measure;
    use crate::scene::{Scene, SceneConfig};

    fn scene(targets: &str) -> Arc<Scene> {
        let text = format!(
            r#"{{"refraction":{{"n1":2.0,"n2":1.0}},
               "source":{{"shape":{{"box":{{"min":[-0.5],"max":[0.5]}}}},"grid":65}},
               "targets":{targets},
               "slab":{{"tau1":10.0,"w":0.5,"tau0":1.1531}}}}"#
        );
        Arc::new(Scene::new(SceneConfig::from_json(&text).unwrap()).unwrap())
    }

    #[test]
    fn vertex_ray_goes_straight() {
        let s = scene(r#"[{"y":[0.1],"h":10.0,"weight":1.0}]"#);
        let env = RefractorEnvelope::new(s, vec![9.0]).unwrap();
        let r = trace_ray(&[0.1], &env).unwrap();
        assert!(r.lambda[0].abs() < 1e-15 && (r.lambda[1] - 1.0).abs() < 1e-15);
        assert!(r.miss < 1e-12);
    }

    #[test]
    fn single_target_gets_everything() {
        let s = scene(r#"[{"y":[0.1],"h":10.0,"weight":1.0}]"#);
        let env = RefractorEnvelope::new(s, vec![9.0]).unwrap();
        let out = trace_all(&env, TraceMode::Cell).unwrap();
        assert_eq!(out.histogram.values, refractor_measure(&env).values);
        assert!(out.histogram.max_miss < 1e-9 * 10.0);
        assert!(out.histogram.max_path_gap < 1e-12);
    }

    #[test]
    fn symmetric_split_and_tie_skipped() {
        let s = scene(r#"[{"y":[-0.2],"h":10.0,"weight":0.5},{"y":[0.2],"h":10.0,"weight":0.5}]"#);
        let env = RefractorEnvelope::new(s, vec![9.0, 9.0]).unwrap();
        let out = trace_all(&env, TraceMode::Cell).unwrap();
        assert_eq!(out.histogram.ties, 1);
        assert!(matches!(trace_cell(32, &env), Err(Error::TieCell(32))));
        let m = refractor_measure(&env);
        assert_eq!(out.histogram.values, m.values);
        let mc = energy_histogram(&env, TraceMode::MonteCarlo { rays: 20000, seed: 1 }).unwrap();
        assert!((mc.values[0] - mc.values[1]).abs() < 0.02);
        assert_eq!(mc, energy_histogram(&env, TraceMode::MonteCarlo { rays: 20000, seed: 1 }).unwrap());
    }

    #[test]
    fn csv_has_one_row_per_ray() {
        let s = scene(r#"[{"y":[0.0],"h":10.0,"weight":1.0}]"#);
        let env = RefractorEnvelope::new(s, vec![9.0]).unwrap();
        let out = trace_all(&env, TraceMode::Cell).unwrap();
        let csv = trace_csv(&out.records, 1);
        assert!(csv.starts_with("x1,hit1,hit2,dir1,dir2,target,miss\n"));
        assert_eq!(csv.lines().count(), 66);
    }
}
