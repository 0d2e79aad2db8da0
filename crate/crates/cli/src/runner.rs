//! Experiment loop: builds one measurement instance per (solver, ratio,
//! seed) cell, runs the selected solver, and writes results.csv, a
//! per-ratio summary.csv and reconstruction PGMs into the output
//! directory. Cell failures land in the status column; the sweep
//! continues.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use netpgd_core::decoder::{forward, project, DecoderWeights, LatentCode};
use netpgd_core::image::ImageVector;
use netpgd_core::measure::{rec_check_grid, MeasurementOperator, RecMode, RecReport};
use netpgd_core::pgm::encode_pgm;
use netpgd_core::rng::SeededRng;
use netpgd_core::solvers::{
    ista_dct, net_gd, net_pgd_cpr, net_pgd_cs, nmse, SenseMode, SolverConfig, SolverTrace,
};

use crate::config::{load_image, ExperimentConfig, SolverKind, Task};

// Independent RNG streams per seed, so adding a consumer never shifts
// the draws of another.
const STREAM_OPERATOR: u64 = 1;
const STREAM_WEIGHT_INIT: u64 = 2;
const STREAM_TARGET_WEIGHTS: u64 = 3;
const STREAM_LATENT: u64 = 4;

#[derive(Debug, Clone)]
pub struct ResultRow {
    pub task: Task,
    pub solver: String,
    pub ratio: f64,
    pub seed: u64,
    pub n: usize,
    pub nmse: Option<f64>,
    pub final_loss: Option<f64>,
    pub iters: usize,
    pub wall_time_s: f64,
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// The problem instance shared by every cell of a sweep.
struct Target {
    image: ImageVector,
    /// Latent code pinned by the instance (synthetic targets live in the
    /// decoder's range for a specific z). Image targets draw a fresh
    /// latent per seed instead.
    latent: Option<LatentCode>,
}

fn resolve_target(cfg: &ExperimentConfig) -> Result<Target> {
    if cfg.synthetic {
        let latent =
            LatentCode::sample(&cfg.spec, &mut SeededRng::stream(cfg.target_seed, STREAM_LATENT));
        let w_star = DecoderWeights::init(
            &cfg.spec,
            &mut SeededRng::stream(cfg.target_seed, STREAM_TARGET_WEIGHTS),
        );
        let (image, _) = forward(&cfg.spec, &w_star, &latent)?;
        Ok(Target { image, latent: Some(latent) })
    } else {
        let path = cfg.image.as_ref().expect("validated: image or synthetic");
        let image = load_image(path, cfg.spec.latent_side())?;
        if image.len() != cfg.spec.output_dim() {
            bail!(
                "image has {} pixels but the decoder produces {} ({}x{})",
                image.len(),
                cfg.spec.output_dim(),
                cfg.spec.output_side(),
                cfg.spec.output_side()
            );
        }
        Ok(Target { image, latent: None })
    }
}

fn solver_config(cfg: &ExperimentConfig) -> SolverConfig {
    let mut sc = match cfg.task {
        Task::Cpr => SolverConfig::cpr(),
        _ => SolverConfig::cs(),
    };
    sc.eta = cfg.eta;
    sc.max_outer_iters = cfg.outer_iters;
    sc.inner_iters = cfg.inner_iters;
    sc.inner_lr = cfg.inner_lr;
    sc
}

fn cell_latent(cfg: &ExperimentConfig, target: &Target, seed: u64) -> LatentCode {
    match &target.latent {
        Some(z) => z.clone(),
        None => LatentCode::sample(&cfg.spec, &mut SeededRng::stream(seed, STREAM_LATENT)),
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    target: &Target,
    solver: SolverKind,
    seed: u64,
    n: usize,
) -> std::result::Result<SolverTrace, String> {
    let x_star = target.image.data();
    let op = MeasurementOperator::gaussian(
        n,
        x_star.len(),
        &mut SeededRng::stream(seed, STREAM_OPERATOR),
    )
    .map_err(|e| e.to_string())?;
    let y = match cfg.task {
        Task::Cpr => op.apply_magnitude(x_star),
        _ => op.apply(x_star),
    }
    .map_err(|e| e.to_string())?;
    let sc = solver_config(cfg);
    let latent = cell_latent(cfg, target, seed);
    let w0 = DecoderWeights::init(&cfg.spec, &mut SeededRng::stream(seed, STREAM_WEIGHT_INIT));

    let trace = match (solver, cfg.task) {
        (SolverKind::NetPgd, Task::Cs) => {
            net_pgd_cs(&y, &op, &cfg.spec, &latent, sc, Some(&w0), Some(x_star))
        }
        (SolverKind::NetPgd, Task::Cpr) => {
            net_pgd_cpr(&y, &op, &cfg.spec, &latent, sc, Some(&w0), Some(x_star))
        }
        (SolverKind::NetGd, Task::Cs) => {
            net_gd(&y, &op, &cfg.spec, &latent, sc, SenseMode::Linear, Some(&w0), Some(x_star))
        }
        (SolverKind::NetGd, Task::Cpr) => {
            net_gd(&y, &op, &cfg.spec, &latent, sc, SenseMode::Magnitude, Some(&w0), Some(x_star))
        }
        (SolverKind::Ista, Task::Cs) => ista_dct(&y, &op, cfg.lambda, cfg.outer_iters),
        (SolverKind::Ista, Task::Cpr) => {
            return Err("ista solves linear measurements only".into())
        }
        (_, Task::Project | Task::RecCheck) => unreachable!("not solver tasks"),
    };
    trace.map_err(|e| e.to_string())
}

/// One character class only: commas and newlines would corrupt the CSV.
fn sanitize_status(msg: &str) -> String {
    msg.chars().map(|c| if c == ',' { ';' } else if c == '\n' { ' ' } else { c }).collect()
}

/// Shortest float form, stable across runs ("0.1", "0.25", "3").
fn ratio_label(r: f64) -> String {
    format!("{r}")
}

fn recon_name(task: Task, solver: &str, ratio: f64, seed: u64) -> String {
    format!("{}_{}_f{}_s{}.pgm", task.name(), solver, ratio_label(ratio), seed)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    match cfg.task {
        Task::Cs | Task::Cpr => {}
        Task::Project => return run_project(cfg),
        Task::RecCheck => bail!("rec-check has its own entry point"),
    }
    let target = resolve_target(cfg)?;
    let d = target.image.len();
    for &r in &cfg.ratios {
        let n = (r * d as f64).round() as usize;
        if n == 0 {
            bail!("ratio {r} gives zero measurements at d={d}");
        }
    }
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;

    let mut rows = Vec::with_capacity(cfg.solvers.len() * cfg.ratios.len() * cfg.seeds.len());
    for &solver in &cfg.solvers {
        for &ratio in &cfg.ratios {
            let n = (ratio * d as f64).round() as usize;
            for &seed in &cfg.seeds {
                let started = Instant::now();
                let outcome = run_cell(cfg, &target, solver, seed, n);
                let wall = if cfg.timing { started.elapsed().as_secs_f64() } else { 0.0 };
                let row = match outcome {
                    Ok(trace) => {
                        let name = recon_name(cfg.task, solver.name(), ratio, seed);
                        std::fs::write(cfg.out_dir.join(&name), encode_pgm(&trace.final_image))
                            .with_context(|| format!("writing {name}"))?;
                        // Recomputed here rather than read off the trace so
                        // every solver reports it, reference-driven or not.
                        // Magnitude measurements fix the image only up to a
                        // global sign, so that task scores sign-resolved.
                        let sign_resolve = cfg.task == Task::Cpr;
                        let err = nmse(trace.final_image.data(), target.image.data(), sign_resolve)
                            .ok();
                        ResultRow {
                            task: cfg.task,
                            solver: solver.name().into(),
                            ratio,
                            seed,
                            n,
                            nmse: err,
                            final_loss: Some(trace.final_loss()),
                            iters: trace.outer_iters_used,
                            wall_time_s: wall,
                            status: "ok".into(),
                        }
                    }
                    Err(msg) => ResultRow {
                        task: cfg.task,
                        solver: solver.name().into(),
                        ratio,
                        seed,
                        n,
                        nmse: None,
                        final_loss: None,
                        iters: 0,
                        wall_time_s: wall,
                        status: sanitize_status(&msg),
                    },
                };
                rows.push(row);
            }
        }
    }

    std::fs::write(cfg.out_dir.join("results.csv"), render_results_csv(&rows))?;
    std::fs::write(cfg.out_dir.join("summary.csv"), render_summary_csv(&rows))?;
    Ok(rows)
}

/// Projection only: fit the decoder to the target image itself, no
/// measurements involved. One row per seed; the fitted image is the
/// "reconstruction".
fn run_project(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let target = resolve_target(cfg)?;
    let x = target.image.data();
    let d = x.len();
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;

    let mut rows = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let started = Instant::now();
        let latent = cell_latent(cfg, &target, seed);
        let warm = DecoderWeights::init(&cfg.spec, &mut SeededRng::stream(seed, STREAM_WEIGHT_INIT));
        let outcome = project(&cfg.spec, &latent, x, &warm, cfg.inner_iters, cfg.inner_lr)
            .and_then(|(w, fit)| Ok((forward(&cfg.spec, &w, &latent)?.0, fit)));
        let wall = if cfg.timing { started.elapsed().as_secs_f64() } else { 0.0 };
        let row = match outcome {
            Ok((fitted, fit_loss)) => {
                let name = recon_name(cfg.task, "project", 1.0, seed);
                std::fs::write(cfg.out_dir.join(&name), encode_pgm(&fitted))
                    .with_context(|| format!("writing {name}"))?;
                ResultRow {
                    task: cfg.task,
                    solver: "project".into(),
                    ratio: 1.0,
                    seed,
                    n: d,
                    nmse: Some(nmse(fitted.data(), x, false).map_err(|e| anyhow::anyhow!(e))?),
                    final_loss: Some(fit_loss),
                    iters: cfg.inner_iters,
                    wall_time_s: wall,
                    status: "ok".into(),
                }
            }
            Err(e) => ResultRow {
                task: cfg.task,
                solver: "project".into(),
                ratio: 1.0,
                seed,
                n: d,
                nmse: None,
                final_loss: None,
                iters: 0,
                wall_time_s: wall,
                status: sanitize_status(&e.to_string()),
            },
        };
        rows.push(row);
    }

    std::fs::write(cfg.out_dir.join("results.csv"), render_results_csv(&rows))?;
    std::fs::write(cfg.out_dir.join("summary.csv"), render_summary_csv(&rows))?;
    Ok(rows)
}

/// Empirical restricted-eigenvalue sweep over the configured n grid;
/// writes rec.csv and returns the reports in grid order.
pub fn run_rec_check(cfg: &ExperimentConfig) -> Result<Vec<RecReport>> {
    let seed = cfg.seeds[0];
    let latent = LatentCode::sample(&cfg.spec, &mut SeededRng::stream(seed, STREAM_LATENT));
    let d = cfg.spec.output_dim();
    let reports = rec_check_grid(
        &cfg.spec,
        &latent,
        d,
        cfg.alpha,
        cfg.trials,
        &cfg.n_grid,
        seed,
        cfg.rec_mode,
    )?;
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    std::fs::write(cfg.out_dir.join("rec.csv"), render_rec_csv(&reports, cfg.rec_mode))?;
    Ok(reports)
}

pub fn render_results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("task,solver,ratio,seed,n,nmse,final_loss,iters,wall_time_s,status\n");
    for r in rows {
        let nmse = r.nmse.map(|v| format!("{v:.6e}")).unwrap_or_default();
        let loss = r.final_loss.map(|v| format!("{v:.6e}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.3},{}",
            r.task.name(),
            r.solver,
            ratio_label(r.ratio),
            r.seed,
            r.n,
            nmse,
            loss,
            r.iters,
            r.wall_time_s,
            r.status
        )
        .expect("string write");
    }
    out
}

/// Mean and sample standard deviation of nMSE per (solver, ratio), ok
/// rows only, in the order the cells were run.
pub fn render_summary_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("task,solver,ratio,n,runs_ok,mean_nmse,stddev_nmse\n");
    let mut seen: Vec<(String, f64)> = Vec::new();
    for r in rows {
        let key = (r.solver.clone(), r.ratio);
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let values: Vec<f64> = rows
            .iter()
            .filter(|q| q.solver == r.solver && q.ratio == r.ratio && q.is_ok())
            .filter_map(|q| q.nmse)
            .collect();
        let (mean, std) = mean_std(&values);
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.task.name(),
            r.solver,
            ratio_label(r.ratio),
            r.n,
            values.len(),
            if values.is_empty() { String::new() } else { format!("{mean:.6e}") },
            if values.is_empty() { String::new() } else { format!("{std:.6e}") },
        )
        .expect("string write");
    }
    out
}

fn render_rec_csv(reports: &[RecReport], mode: RecMode) -> String {
    let mode = match mode {
        RecMode::Range => "range",
        RecMode::Difference => "difference",
    };
    let mut out =
        String::from("n,alpha,mode,trials,kept,discarded,passes,pass_rate,min_ratio,max_ratio\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:.6},{:.6e},{:.6e}",
            r.n,
            r.alpha,
            mode,
            r.trials,
            r.kept,
            r.discarded,
            r.passes,
            r.pass_rate,
            r.min_ratio,
            r.max_ratio
        )
        .expect("string write");
    }
    out
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

/// Copy of the summary statistics for tests and callers that want the
/// numbers without re-parsing CSV text.
pub fn summarize(rows: &[ResultRow], solver: &str, ratio: f64) -> Option<(f64, f64, usize)> {
    let values: Vec<f64> = rows
        .iter()
        .filter(|r| r.solver == solver && r.ratio == ratio && r.is_ok())
        .filter_map(|r| r.nmse)
        .collect();
    if values.is_empty() {
        return None;
    }
    let (mean, std) = mean_std(&values);
    Some((mean, std, values.len()))
}

/// Writes `img` to `path` as PGM (helper shared by main and tests).
pub fn write_pgm(path: &Path, img: &ImageVector) -> Result<()> {
    std::fs::write(path, encode_pgm(img)).with_context(|| format!("writing {}", path.display()))
}
