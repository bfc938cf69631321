//! The `refractor` command-line tool.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{
    box_samples, check_aw, check_dasm, check_lipschitz, check_semiconvexity, check_tube_inclusion, default_v_grid,
    estimate_regularity_constants, growth_probe, h_and_g, holder_alpha, holder_diagnostic,
    local_to_global_family_search, local_to_global_sweep, slope_toward, target_lipschitz, ParametrizedTarget,
    RegularityOptions, TubeParams,
};
use crate::error::{Error, Result};
use crate::geometry::{dist2, norm, Hyperboloid, PointUp};
use crate::raytrace::{trace_all, trace_csv, TraceMode};
use crate::refractor::{refractor_measure, surface_csv, RefractorEnvelope};
use crate::scene::{validate_scene, Scene, SceneConfig, TargetPoint};
use crate::solver::{select_parameters, solve_discrete, ParameterPipeline, SolveOptions};

#[derive(Debug, Parser)]
#[command(name = "refractor", version, about = "Parallel refractor construction and checks")]
pub struct Cli {
    /// Worker threads (falls back to REFRACTOR_THREADS); results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Cell,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckKind {
    Aw,
    Dasm,
    LocalGlobal,
    Tube,
    Lipschitz,
    Semiconvexity,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scene file and print the diagnostic report.
    Validate { config: PathBuf },
    /// Print the parameter chain; searches the smallest tau1 unless given.
    Params {
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        width: f64,
        #[arg(long)]
        tau1: Option<f64>,
    },
    /// Solve for the focal parameters and write solution.json and surface.csv.
    Solve {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Replace the targets by this many Lloyd clusters of `target_density`.
        #[arg(long)]
        discretize: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Trace the beam through a solved surface and write trace.csv.
    Trace {
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "cell")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        rays: usize,
    },
    /// Run a numerical check on a solved surface; results go to analysis.json.
    Check {
        #[arg(value_enum)]
        kind: CheckKind,
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Print the Hölder exponent for dimension n and growth exponent q.
    Alpha {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        q: f64,
    },
    /// Summarize a solved directory in report.json, optionally with SVG plots.
    Report {
        dir: PathBuf,
        #[arg(long)]
        svg: bool,
    },
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::ConfigParse(_) => 3,
        Error::NonConvergence { .. } | Error::SearchOverflow { .. } => 2,
        Error::Invariant(_)
        | Error::TotalInternalReflection { .. }
        | Error::RayMiss
        | Error::TieCell(_)
        | Error::OutOfDomain => 4,
        _ => 1,
    }
}

fn error_json(kind: &str, message: &str, code: i32) -> String {
    json!({"error": kind, "message": message, "exit_code": code}).to_string()
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_json("Usage", &e.to_string(), 3));
            return 3;
        }
    };
    let threads = cli
        .threads
        .or_else(|| std::env::var("REFRACTOR_THREADS").ok().and_then(|v| v.parse().ok()))
        .filter(|&t| t > 0);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let outcome = match builder.build() {
        Ok(pool) => pool.install(|| dispatch(cli.command)),
        Err(e) => Err(Error::Invariant(format!("thread pool: {e}"))),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_json(e.kind(), &e.to_string(), code));
            code
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Params { kappa, delta, width, tau1 } => cmd_params(kappa, delta, width, tau1),
        Command::Solve { config, output, discretize, seed } => cmd_solve(&config, &output, discretize, seed),
        Command::Trace { dir, mode, seed, rays } => cmd_trace(&dir, mode, seed, rays),
        Command::Check { kind, dir, seed, samples } => cmd_check(kind, &dir, seed, samples),
        Command::Alpha { n, q } => {
            println!("{}", holder_alpha(n, q)?);
            Ok(0)
        }
        Command::Report { dir, svg } => cmd_report(&dir, svg),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn cmd_validate(config: &Path) -> Result<i32> {
    let scene = Scene::from_json(&read(config)?)?;
    let report = validate_scene(&scene);
    print!("{}", pretty(&report)?);
    Ok(if report.passed { 0 } else { 1 })
}

pub fn pipeline_json(p: &ParameterPipeline) -> Value {
    json!({
        "kappa": p.kappa,
        "Delta": p.delta_cap,
        "w": p.w,
        "tau1": p.tau1,
        "tau0": p.tau0,
        "delta": p.delta_lb,
        "inv_tau1": p.inv_tau1,
        "L": p.l_value,
        "m_star": p.m_star,
        "b1_bar": p.b1_bar,
        "margins": {
            "height": p.height_margin(),
            "m_estimate": p.m_estimate_margin(),
            "c1c2": p.c1c2_margin(),
            "regularity": p.regularity_margin(),
        },
        "regularity_ratio": p.regularity_ratio(),
        "conditions_hold": p.all_conditions_hold(),
    })
}

fn cmd_params(kappa: f64, delta: f64, width: f64, tau1: Option<f64>) -> Result<i32> {
    let p = match tau1 {
        Some(t) => ParameterPipeline::evaluate(kappa, delta, width, t)?,
        None => select_parameters(kappa, delta, width)?,
    };
    print!("{}", pretty(&pipeline_json(&p))?);
    Ok(if p.all_conditions_hold() { 0 } else { 1 })
}

/// Contents of `solution.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub b: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub eps_energy: f64,
    pub measure: Vec<f64>,
    pub error_estimate: f64,
    pub history: Vec<f64>,
    pub pipeline: Value,
}

/// Weighted Lloyd clustering of sample points in `R^(n+1)` into `k` targets
/// whose weights are rescaled to `total`.
pub fn discretize_targets(points: &[TargetPoint], k: usize, total: f64, seed: u64) -> Result<Vec<TargetPoint>> {
    if points.is_empty() || k == 0 {
        return Err(Error::ConfigParse("discretize needs samples and k > 0".into()));
    }
    let coords: Vec<Vec<f64>> = points.iter().map(|p| p.point().to_vec()).collect();
    let weights: Vec<f64> = points.iter().map(|p| p.weight).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // weighted k-means++ seeding
    let mut centres: Vec<Vec<f64>> = Vec::new();
    let first = {
        let total_w: f64 = weights.iter().sum();
        let mut r = rng.gen_range(0.0..total_w);
        let mut idx = 0;
        for (i, w) in weights.iter().enumerate() {
            idx = i;
            if r < *w {
                break;
            }
            r -= w;
        }
        idx
    };
    centres.push(coords[first].clone());
    while centres.len() < k.min(coords.len()) {
        let d: Vec<f64> = coords
            .iter()
            .zip(&weights)
            .map(|(c, w)| w * centres.iter().map(|z| dist2(c, z)).fold(f64::INFINITY, f64::min))
            .collect();
        let sum: f64 = d.iter().sum();
        if !(sum > 0.0) {
            break;
        }
        let mut r = rng.gen_range(0.0..sum);
        let mut pick = 0;
        for (i, v) in d.iter().enumerate() {
            pick = i;
            if r < *v {
                break;
            }
            r -= v;
        }
        centres.push(coords[pick].clone());
    }
    let mut mass = vec![0.0; centres.len()];
    for _ in 0..100 {
        let labels: Vec<usize> = coords
            .iter()
            .map(|c| {
                (0..centres.len())
                    .min_by(|&a, &b| dist2(c, &centres[a]).total_cmp(&dist2(c, &centres[b])))
                    .unwrap_or(0)
            })
            .collect();
        let dim = coords[0].len();
        let mut acc = vec![vec![0.0; dim]; centres.len()];
        mass = vec![0.0; centres.len()];
        for ((c, w), &l) in coords.iter().zip(&weights).zip(&labels) {
            mass[l] += w;
            for (a, x) in acc[l].iter_mut().zip(c) {
                *a += w * x;
            }
        }
        let mut moved = 0.0f64;
        for (j, a) in acc.iter().enumerate() {
            if mass[j] > 0.0 {
                let next: Vec<f64> = a.iter().map(|v| v / mass[j]).collect();
                moved = moved.max(dist2(&next, &centres[j]));
                centres[j] = next;
            }
        }
        if moved == 0.0 {
            break;
        }
    }
    let total_mass: f64 = mass.iter().sum();
    let n = coords[0].len() - 1;
    Ok(centres
        .iter()
        .zip(&mass)
        .filter(|(_, m)| **m > 0.0)
        .map(|(c, m)| TargetPoint { y: c[..n].to_vec(), h: c[n], weight: m / total_mass * total })
        .collect())
}

fn cmd_solve(config: &Path, out: &Path, discretize: Option<usize>, seed: u64) -> Result<i32> {
    let text = read(config)?;
    let (text, cfg) = match discretize {
        None => {
            let cfg = SceneConfig::from_json(&text)?;
            (text, cfg)
        }
        Some(k) => {
            let mut raw: Value = serde_json::from_str(&text)?;
            let samples: Vec<TargetPoint> = serde_json::from_value(
                raw.pointer("/target_density/points")
                    .cloned()
                    .ok_or_else(|| Error::ConfigParse("--discretize needs target_density.points".into()))?,
            )?;
            let cfg0 = SceneConfig::from_json(&text)?;
            let total = Scene::new(cfg0)?.total_energy;
            let targets = discretize_targets(&samples, k, total, seed)?;
            raw["targets"] = serde_json::to_value(&targets)?;
            let text = pretty(&raw)?;
            let cfg = SceneConfig::from_json(&text)?;
            (text, cfg)
        }
    };
    let scene = Arc::new(Scene::new(cfg)?);
    let report = validate_scene(&scene);
    if !report.passed {
        print!("{}", pretty(&report)?);
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(Error::HypothesisNotMet(format!("scene validation failed: {}", failed.join(", "))));
    }
    let opts = SolveOptions::for_scene(&scene);
    let result = solve_discrete(&scene, opts)?;
    let env = RefractorEnvelope::new(scene.clone(), result.b.clone())?;
    let measure = refractor_measure(&env);
    fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    let solution = SolutionFile {
        b: result.b.clone(),
        residual: result.residual,
        iterations: result.iterations,
        eps_energy: opts.eps_energy,
        measure: measure.values.clone(),
        error_estimate: measure.error_estimate,
        history: result.history.clone(),
        pipeline: pipeline_json(&result.pipeline),
    };
    write(&out.join("scene.json"), &text)?;
    write(&out.join("solution.json"), &pretty(&solution)?)?;
    write(&out.join("surface.csv"), &surface_csv(&env))?;
    println!(
        "{}",
        json!({"residual": result.residual, "iterations": result.iterations, "output": out.display().to_string()})
    );
    Ok(0)
}

/// Scene, solution and envelope of a solved output directory.
pub fn load_solution(dir: &Path) -> Result<(Value, SolutionFile, RefractorEnvelope)> {
    let text = read(&dir.join("scene.json"))?;
    let raw: Value = serde_json::from_str(&text)?;
    let scene = Arc::new(Scene::from_json(&text)?);
    let solution: SolutionFile = serde_json::from_str(&read(&dir.join("solution.json"))?)?;
    let env = RefractorEnvelope::new(scene, solution.b.clone())?;
    Ok((raw, solution, env))
}

fn update_analysis(dir: &Path, key: &str, value: Value) -> Result<()> {
    let path = dir.join("analysis.json");
    let mut map: BTreeMap<String, Value> = match fs::read_to_string(&path) {
        Ok(t) => serde_json::from_str(&t)?,
        Err(_) => BTreeMap::new(),
    };
    map.insert(key.to_string(), value);
    write(&path, &pretty(&map)?)
}

fn cmd_trace(dir: &Path, mode: ModeArg, seed: u64, rays: usize) -> Result<i32> {
    let (_, _, env) = load_solution(dir)?;
    let mode = match mode {
        ModeArg::Cell => TraceMode::Cell,
        ModeArg::Mc => TraceMode::MonteCarlo { rays, seed },
    };
    let out = trace_all(&env, mode)?;
    write(&dir.join("trace.csv"), &trace_csv(&out.records, env.scene.dim()))?;
    let tau1 = env.scene.config.slab.tau1;
    let summary = json!({
        "histogram": out.histogram,
        "miss_bound": 1e-8 * tau1,
        "miss_ok": out.histogram.max_miss <= 1e-8 * tau1,
        "weights": env.scene.targets().iter().map(|t| t.weight).collect::<Vec<_>>(),
    });
    update_analysis(dir, "trace", summary.clone())?;
    print!("{}", pretty(&summary)?);
    Ok(0)
}

/// Optional `analysis` section of a scene file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct AnalysisSection {
    pub target: Option<ParametrizedTarget>,
    /// Horizontal base point; defaults to the centre of the source box.
    pub x0: Option<Vec<f64>>,
    pub per_axis: Option<usize>,
    pub fraction: Option<f64>,
    pub eps_ball: Option<f64>,
    pub tube_m: Option<f64>,
    pub growth_q: Option<f64>,
}

struct AnalysisSetup {
    section: AnalysisSection,
    anchor: PointUp,
    target: ParametrizedTarget,
}

fn analysis_setup(raw: &Value, env: &RefractorEnvelope) -> Result<AnalysisSetup> {
    let section: AnalysisSection = match raw.get("analysis") {
        Some(v) => serde_json::from_value(v.clone())?,
        None => AnalysisSection::default(),
    };
    let (lo, hi) = env.scene.config.source.shape.bounding_box();
    let x0 = section.x0.clone().unwrap_or_else(|| lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect());
    let anchor = PointUp::new(x0.clone(), env.eval_raw(&x0).0);
    let target = section.target.clone().unwrap_or_else(|| {
        let mean_h = env.scene.targets().iter().map(|t| t.h).sum::<f64>() / env.n_targets() as f64;
        ParametrizedTarget::Sphere { center: anchor.to_vec(), radius: mean_h - anchor.last }
    });
    Ok(AnalysisSetup { section, anchor, target })
}

fn outcome<T: Serialize>(r: Result<T>) -> Result<Value> {
    match r {
        Ok(v) => Ok(serde_json::to_value(v)?),
        Err(e @ (Error::Io(_) | Error::Invariant(_))) => Err(e),
        Err(e) => Ok(json!({"untestable": e.kind(), "message": e.to_string()})),
    }
}

/// Slopes from the anchor toward the first two targets, pulled inside 0.9 of the critical slope.
fn endpoint_slopes(setup: &AnalysisSetup, env: &RefractorEnvelope) -> (Vec<f64>, Vec<f64>) {
    let k = &env.scene.constants;
    let cap = 0.9 * k.critical_slope();
    let clamp = |v: Vec<f64>| {
        let l = norm(&v);
        if l > cap {
            v.iter().map(|c| c * cap / l).collect()
        } else {
            v
        }
    };
    let n = env.scene.dim();
    let t = env.scene.targets();
    if t.len() >= 2 {
        (clamp(slope_toward(&setup.anchor, &t[0].point(), k.kappa)), clamp(slope_toward(&setup.anchor, &t[1].point(), k.kappa)))
    } else {
        let mut a = vec![0.0; n];
        a[0] = 0.1 * k.critical_slope();
        (a.iter().map(|c| -c).collect(), a)
    }
}

/// Non-tie cell nearest `x` with an axis neighbour assigned to another target.
fn interface_pair(env: &RefractorEnvelope, x: &[f64]) -> Option<(usize, usize)> {
    let grid = &env.scene.grid;
    let mut best: Option<(f64, usize, usize)> = None;
    for c in 0..grid.len() {
        if env.tie[c] {
            continue;
        }
        for j in grid.neighbors(c).into_iter().flatten() {
            if !env.tie[j] && env.assignment[j] != env.assignment[c] {
                let d = dist2(grid.center(c), x);
                if best.is_none_or(|b| d < b.0) {
                    best = Some((d, c, j));
                }
            }
        }
    }
    best.map(|b| (b.1, b.2))
}

fn cmd_check(kind: CheckKind, dir: &Path, seed: u64, samples: usize) -> Result<i32> {
    let (raw, _, env) = load_solution(dir)?;
    let setup = analysis_setup(&raw, &env)?;
    let k = env.scene.constants;
    let n = env.scene.dim();
    let diameter = env.scene.config.source.shape.diameter();
    let (key, value) = match kind {
        CheckKind::Aw => {
            let per_axis = setup.section.per_axis.unwrap_or(if n == 1 { 101 } else if n == 2 { 21 } else { 9 });
            let fraction = setup.section.fraction.unwrap_or(0.9);
            let grid = default_v_grid(n, &k, per_axis, fraction);
            let aw = outcome(check_aw(&setup.anchor, &setup.target, &grid, &k))?;
            let opts = RegularityOptions {
                samples: samples.min(5000),
                seed,
                half_width: 0.05 * env.scene.config.slab.tau0,
                c2: 0.5 * diameter,
                slope_fraction: 0.6,
            };
            let reg = outcome(estimate_regularity_constants(&setup.anchor, &setup.target, &opts, &k))?;
            ("aw", json!({"anchor": setup.anchor.to_vec(), "target": setup.target, "aw": aw, "regularity": reg}))
        }
        CheckKind::Dasm => {
            let (vb, vh) = endpoint_slopes(&setup, &env);
            let xs = box_samples(&setup.anchor.x, 0.5 * diameter, if n == 1 { 4096 } else if n == 2 { 64 } else { 16 });
            let r = outcome(check_dasm(&setup.anchor, &vb, &vh, &setup.target, &xs, 64, &k))?;
            ("dasm", json!({"anchor": setup.anchor.to_vec(), "v_bar": vb, "v_hat": vh, "target": setup.target, "report": r}))
        }
        CheckKind::LocalGlobal => {
            let grid = &env.scene.grid;
            let stride = (grid.len() / 256).max(1);
            let cells: Vec<usize> = (0..grid.len()).step_by(stride).collect();
            let eps = setup.section.eps_ball.unwrap_or(3.0 * grid.cell_diameter());
            let sweep = local_to_global_sweep(&env, &cells, eps)?;
            let family = outcome(local_to_global_family_search(&setup.anchor, &setup.target, 0.5 * diameter, eps, &k))?;
            ("local_global", json!({"eps_ball": eps, "cells_tested": cells.len(), "sweep": sweep, "family_search": family}))
        }
        CheckKind::Tube => {
            let params = TubeParams { m: setup.section.tube_m.unwrap_or(0.1), delta: diameter, c2: diameter };
            let tube = match interface_pair(&env, &setup.anchor.x) {
                Some((a, b)) => outcome(check_tube_inclusion(&env, a, b, &params))?,
                None => outcome::<()>(Err(Error::DegeneratePair))?,
            };
            let q = setup.section.growth_q.unwrap_or(1.0);
            let alpha = holder_alpha(n, q)?;
            let holder = holder_diagnostic(&env, &setup.anchor.x, 0.25 * diameter, alpha, params.k_factor());
            if let Ok(h) = &holder {
                write(&dir.join("holder.csv"), &h.to_csv())?;
            }
            let holder = outcome(holder.map(|mut h| {
                h.rows.clear();
                h
            }))?;
            let growth = growth_probe(&env, &setup.anchor.x);
            ("tube", json!({"params": params, "tube": tube, "alpha": alpha, "holder": holder, "growth": growth}))
        }
        CheckKind::Lipschitz => {
            let r = check_lipschitz(&env, samples, seed);
            let t = outcome(target_lipschitz(&setup.anchor, &setup.target, samples.min(5000), 0.9, seed, &k))?;
            ("lipschitz", json!({"envelope": r, "target": t}))
        }
        CheckKind::Semiconvexity => {
            let exact = check_semiconvexity(&env, samples, seed, false)?;
            let interp = check_semiconvexity(&env, samples, seed, true)?;
            ("semiconvexity", json!({"exact": exact, "interpolated": interp}))
        }
    };
    update_analysis(dir, key, value.clone())?;
    print!("{}", pretty(&value)?);
    Ok(0)
}

fn svg_frame(title: &str, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"440\" viewBox=\"0 0 640 440\">\n\
         <rect x=\"0\" y=\"0\" width=\"640\" height=\"440\" fill=\"white\"/>\n\
         <text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <rect x=\"40\" y=\"40\" width=\"560\" height=\"360\" fill=\"none\" stroke=\"black\"/>\n{body}</svg>\n"
    )
}

fn svg_line(title: &str, pts: &[(f64, f64)]) -> String {
    if pts.is_empty() {
        return svg_frame(title, "");
    }
    let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    let sx = if x1 > x0 { 560.0 / (x1 - x0) } else { 0.0 };
    let sy = if y1 > y0 { 360.0 / (y1 - y0) } else { 0.0 };
    let mut path = String::new();
    for (i, (x, y)) in pts.iter().enumerate() {
        let _ = write!(path, "{}{:.3},{:.3} ", if i == 0 { "M" } else { "L" }, 40.0 + (x - x0) * sx, 400.0 - (y - y0) * sy);
    }
    let body = format!(
        "<path d=\"{}\" fill=\"none\" stroke=\"navy\" stroke-width=\"1.5\"/>\n\
         <text x=\"40\" y=\"420\" font-family=\"sans-serif\" font-size=\"11\">x in [{x0:.4}, {x1:.4}], y in [{y0:.6}, {y1:.6}]</text>\n",
        path.trim_end()
    );
    svg_frame(title, &body)
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Heatmap over an `nx x ny` lattice; categorical values pick palette colours,
/// others a blue-white-red ramp symmetric about zero.
fn svg_heatmap(title: &str, nx: usize, ny: usize, values: &[Option<f64>], categorical: bool) -> String {
    let scale = values.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let (w, h) = (560.0 / nx as f64, 360.0 / ny as f64);
    let mut body = String::new();
    for j in 0..ny {
        for i in 0..nx {
            let Some(v) = values[j * nx + i] else { continue };
            let colour = if categorical {
                PALETTE[(v as usize) % PALETTE.len()].to_string()
            } else {
                let t = if scale > 0.0 { v / scale } else { 0.0 };
                let (r, g, b) = if t >= 0.0 {
                    (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
                } else {
                    (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
                };
                format!("rgb({},{},{})", r.round() as u8, g.round() as u8, b.round() as u8)
            };
            let _ = writeln!(
                body,
                "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{colour}\"/>",
                40.0 + i as f64 * w,
                400.0 - (j + 1) as f64 * h,
                w,
                h
            );
        }
    }
    if !categorical {
        let _ = writeln!(body, "<text x=\"40\" y=\"420\" font-family=\"sans-serif\" font-size=\"11\">max |value| = {scale:.3e}</text>");
    }
    svg_frame(title, &body)
}

fn cmd_report(dir: &Path, svg: bool) -> Result<i32> {
    let (raw, solution, env) = load_solution(dir)?;
    let scene = &env.scene;
    let measure = refractor_measure(&env);
    let validation = validate_scene(scene);
    let delta = solution.pipeline.get("delta").and_then(Value::as_f64).unwrap_or(f64::NAN);
    let residual = measure
        .values
        .iter()
        .zip(scene.targets())
        .map(|(m, t)| (m - t.weight).abs())
        .fold(0.0, f64::max);
    let summary = json!({
        "targets": scene.targets().len(),
        "cells": scene.grid.len(),
        "b": solution.b,
        "measure": measure,
        "weights": scene.targets().iter().map(|t| t.weight).collect::<Vec<_>>(),
        "residual": residual,
        "stored_residual": solution.residual,
        "u_min": env.min_height(),
        "u_max": env.max_height(),
        "tau0": scene.config.slab.tau0,
        "u_below_tau0": env.max_height() <= scene.config.slab.tau0,
        "b_above_delta": solution.b.iter().all(|b| *b >= delta),
        "validation": validation,
    });
    write(&dir.join("report.json"), &pretty(&summary)?)?;
    if svg {
        write_plots(dir, &raw, &env)?;
    }
    print!("{}", pretty(&summary)?);
    Ok(0)
}

fn write_plots(dir: &Path, raw: &Value, env: &RefractorEnvelope) -> Result<()> {
    let scene = &env.scene;
    let grid = &scene.grid;
    let n = scene.dim();
    let k = scene.constants;
    let setup = analysis_setup(raw, env)?;
    // cross-section along the first axis through the anchor
    let (lo, hi) = scene.config.source.shape.bounding_box();
    let pts: Vec<(f64, f64)> = (0..=400)
        .filter_map(|i| {
            let mut x = setup.anchor.x.clone();
            x[0] = lo[0] + (hi[0] - lo[0]) * i as f64 / 400.0;
            scene.config.source.shape.contains(&x).then(|| (x[0], env.eval_raw(&x).0))
        })
        .collect();
    write(&dir.join("surface.svg"), &svg_line("u along the first axis", &pts))?;
    let (nx, ny) = if n == 1 { (grid.res, 1) } else { (grid.res, grid.res) };
    let mut regions = vec![None; nx * ny];
    for c in 0..grid.len() {
        let cc = grid.cell_coords(c);
        if n == 1 {
            regions[cc[0]] = Some(env.assignment[c] as f64);
        } else if n == 2 {
            regions[cc[1] * nx + cc[0]] = Some(env.assignment[c] as f64);
        } else if cc[2] == grid.res / 2 {
            regions[cc[1] * nx + cc[0]] = Some(env.assignment[c] as f64);
        }
    }
    write(&dir.join("regions.svg"), &svg_heatmap("tracing regions", nx, ny, &regions, true))?;
    let r = 0.9 * k.critical_slope();
    let g: Vec<(f64, f64)> = (0..=200)
        .filter_map(|i| {
            let mut v = vec![0.0; n];
            v[0] = -r + 2.0 * r * i as f64 / 200.0;
            h_and_g(&v, &setup.anchor, &setup.target, &k).ok().map(|hg| (v[0], hg.g))
        })
        .collect();
    write(&dir.join("g_slice.svg"), &svg_line("G(v) along the first slope axis", &g))?;
    let (vb, vh) = endpoint_slopes(&setup, env);
    let mid: Vec<f64> = vb.iter().zip(&vh).map(|(a, b)| 0.5 * (a + b)).collect();
    let sheet = |v: &[f64]| -> Result<Hyperboloid> {
        Hyperboloid::through(&setup.target.point_from_slope(&setup.anchor, v, &k)?, &setup.anchor, &k)
    };
    if let (Ok(hb), Ok(hh), Ok(hm)) = (sheet(&vb), sheet(&vh), sheet(&mid)) {
        let violation = |x: &[f64]| hm.eval(x, &k) - hb.eval(x, &k).max(hh.eval(x, &k));
        let half = 0.5 * scene.config.source.shape.diameter();
        let plot = if n == 1 {
            let pts: Vec<(f64, f64)> = box_samples(&setup.anchor.x, half, 401).iter().map(|x| (x[0], violation(x))).collect();
            svg_line("DASM violation at lambda = 1/2", &pts)
        } else {
            let m = 64;
            let vals: Vec<Option<f64>> = (0..m * m)
                .map(|lin| {
                    let mut x = setup.anchor.x.clone();
                    x[0] += -half + 2.0 * half * (lin % m) as f64 / (m - 1) as f64;
                    x[1] += -half + 2.0 * half * (lin / m) as f64 / (m - 1) as f64;
                    Some(violation(&x))
                })
                .collect();
            svg_heatmap("DASM violation at lambda = 1/2", m, m, &vals, false)
        };
        write(&dir.join("dasm.svg"), &plot)?;
    }
    Ok(())
}
