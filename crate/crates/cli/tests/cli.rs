//! End-to-end harness checks: artifact layout, CSV shape, the bundled
//! fixture's frozen statistics, and the binary's argument handling.

use std::path::PathBuf;
use std::process::Command;

use netpgd_cli::config::{ExperimentConfig, SolverKind, Task};
use netpgd_cli::runner::{run_experiment, run_rec_check};
use netpgd_core::decoder::DecoderSpec;
use netpgd_core::measure::RecMode;
use netpgd_core::numeric::l2_norm;
use netpgd_core::pgm::{decode_pgm, encode_pgm};

fn out_dir(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("netpgd-cli-{}", std::process::id())).join(name)
}

fn toy_spec() -> DecoderSpec {
    DecoderSpec::new(vec![4, 4, 1], 4, false, false).unwrap()
}

fn toy_config(task: Task, dir: &str) -> ExperimentConfig {
    ExperimentConfig {
        task,
        image: None,
        synthetic: true,
        target_seed: 7,
        ratios: vec![0.5],
        seeds: vec![0, 1, 2],
        solvers: vec![SolverKind::NetPgd],
        spec: toy_spec(),
        eta: 0.5,
        outer_iters: 8,
        inner_iters: 60,
        inner_lr: 0.01,
        lambda: 0.1,
        alpha: 0.5,
        trials: 20,
        n_grid: vec![8, 48],
        rec_mode: RecMode::Difference,
        out_dir: out_dir(dir),
        timing: false,
    }
}

/// The acceptance bounds were measured against exactly this image; a
/// changed asset should fail loudly here, not as a drifted mean nMSE.
#[test]
fn bundled_digit_fixture_is_frozen() {
    let img = decode_pgm(include_bytes!("../assets/digit0.pgm")).unwrap();
    assert_eq!((img.height(), img.width()), (28, 28));
    let px = img.data();
    assert_eq!(px.iter().filter(|&&v| v > 0.0).count(), 308);
    let norm = l2_norm(px);
    assert!(
        (norm - 11.813_451_953_549_55).abs() < 1e-9,
        "fixture norm drifted: {norm}"
    );
}

#[test]
fn experiment_writes_rows_and_artifacts_in_grid_order() {
    let cfg = toy_config(Task::Cs, "grid");
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), cfg.solvers.len() * cfg.ratios.len() * cfg.seeds.len());
    for (row, &seed) in rows.iter().zip(&cfg.seeds) {
        assert!(row.is_ok(), "seed {seed} failed: {}", row.status);
        assert_eq!(row.seed, seed);
        assert_eq!(row.n, 32);
        assert!(row.nmse.is_some() && row.final_loss.is_some());
    }

    let results = std::fs::read_to_string(cfg.out_dir.join("results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(
        lines.next().unwrap(),
        "task,solver,ratio,seed,n,nmse,final_loss,iters,wall_time_s,status"
    );
    assert_eq!(lines.count(), rows.len());

    let summary = std::fs::read_to_string(cfg.out_dir.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next().unwrap(), "task,solver,ratio,n,runs_ok,mean_nmse,stddev_nmse");
    assert_eq!(lines.count(), 1, "one summary row per (solver, ratio)");

    // Every cell leaves a reconstruction behind, already quantized: the
    // bytes re-encode to themselves and decode into [0, 1].
    for seed in &cfg.seeds {
        let path = cfg.out_dir.join(format!("cs_net-pgd_f0.5_s{seed}.pgm"));
        let bytes = std::fs::read(&path).unwrap();
        let img = decode_pgm(&bytes).unwrap();
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(encode_pgm(&img), bytes);
    }
}

/// A solver that cannot run a task still yields its rows, so the CSV grid
/// stays rectangular and failures are visible next to successes.
#[test]
fn failed_cells_keep_their_rows() {
    let mut cfg = toy_config(Task::Cpr, "failed-cells");
    cfg.solvers = vec![SolverKind::NetPgd, SolverKind::Ista];
    cfg.seeds = vec![0, 1];
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 4);
    let (ok, failed): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r.is_ok());
    assert_eq!(ok.len(), 2);
    assert_eq!(failed.len(), 2);
    for row in &failed {
        assert_eq!(row.solver, "ista");
        assert!(row.nmse.is_none());
        assert!(!row.status.contains(',') && !row.status.contains('\n'));
    }
    let results = std::fs::read_to_string(cfg.out_dir.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 5);
}

/// Cold-start projection wants the image-scale architecture: channel
/// norm keeps units alive on the way to a far target (the bare toy net
/// dies to all-zero output), and at this width the fit lands within a
/// 0.05 relative error of an in-range target in 500 steps.
#[test]
fn projection_task_fits_in_range_targets() {
    let mut cfg = toy_config(Task::Project, "project");
    cfg.spec = DecoderSpec::new(vec![15, 15, 10, 1], 7, true, true).unwrap();
    cfg.inner_iters = 500;
    cfg.inner_lr = 1e-3;
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), cfg.seeds.len());
    for row in &rows {
        assert!(row.is_ok());
        assert_eq!(row.solver, "project");
        assert_eq!(row.n, 784);
        let nmse = row.nmse.unwrap();
        // 0.05 relative error squared.
        assert!(nmse < 2.5e-3, "seed {}: projection nMSE {nmse}", row.seed);
    }
}

#[test]
fn rec_check_reports_follow_the_grid_and_land_on_disk() {
    let cfg = toy_config(Task::RecCheck, "rec");
    let reports = run_rec_check(&cfg).unwrap();
    assert_eq!(reports.len(), cfg.n_grid.len());
    for (rep, &n) in reports.iter().zip(&cfg.n_grid) {
        assert_eq!(rep.n, n);
        assert_eq!(rep.trials, cfg.trials);
        assert!((0.0..=1.0).contains(&rep.pass_rate));
        assert!(rep.min_ratio <= rep.max_ratio);
    }
    // 8 rows of 64 columns concentrate far too loosely for a whole batch
    // of directions to stay sandwiched; 48 rows mostly succeed.
    assert!(reports[0].pass_rate < reports[1].pass_rate);

    let rec = std::fs::read_to_string(cfg.out_dir.join("rec.csv")).unwrap();
    let mut lines = rec.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n,alpha,mode,trials,kept,discarded,passes,pass_rate,min_ratio,max_ratio"
    );
    assert_eq!(lines.count(), reports.len());
}

/// Drives the installed binary the way a user would: spec and run
/// parameters from a config file, one value overridden on the command
/// line, artifacts under --out-dir.
#[test]
fn binary_runs_from_a_config_file_with_flag_overrides() {
    let dir = out_dir("binary");
    std::fs::create_dir_all(&dir).unwrap();
    let config_path = dir.join("run.conf");
    std::fs::write(
        &config_path,
        "task = cs\n\
         synthetic = true\n\
         target_seed = 7\n\
         channels = 4,4,1\n\
         latent_side = 4\n\
         channel_norm = false\n\
         sigmoid = false\n\
         ratio = 0.5\n\
         seed = 0\n\
         # seeds below are overridden by the flag\n\
         outer_iters = 5\n\
         inner_iters = 40\n\
         inner_lr = 0.01\n",
    )
    .unwrap();

    let out = dir.join("run-out");
    let status = Command::new(env!("CARGO_BIN_EXE_netpgd"))
        .args(["cs", "--config"])
        .arg(&config_path)
        .args(["--seeds", "0,1"])
        .arg("--out-dir")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 3, "header plus one row per overridden seed");

    let rerun = Command::new(env!("CARGO_BIN_EXE_netpgd"))
        .args(["cs", "--config"])
        .arg(&config_path)
        .args(["--seeds", "0,1"])
        .arg("--out-dir")
        .arg(&out)
        .status()
        .unwrap();
    assert!(rerun.success());
    assert_eq!(std::fs::read_to_string(out.join("results.csv")).unwrap(), results);
}

#[test]
fn binary_rejects_contradictory_requests() {
    let dir = out_dir("binary-errors");
    // ista sees only linear measurements; asking it for phase retrieval
    // must fail the cell but exit zero with the row recorded.
    let status = Command::new(env!("CARGO_BIN_EXE_netpgd"))
        .args(["cpr", "--synthetic", "--solver", "ista", "--outer-iters", "3"])
        .arg("--out-dir")
        .arg(dir.join("cpr-ista"))
        .status()
        .unwrap();
    assert!(status.success());
    let results = std::fs::read_to_string(dir.join("cpr-ista").join("results.csv")).unwrap();
    let row = results.lines().nth(1).unwrap();
    assert!(row.contains("ista solves linear measurements only"), "row was: {row}");

    // Unknown solver names are a usage error, not a failed cell.
    let status = Command::new(env!("CARGO_BIN_EXE_netpgd"))
        .args(["cs", "--synthetic", "--solver", "omp"])
        .arg("--out-dir")
        .arg(dir.join("unknown"))
        .status()
        .unwrap();
    assert!(!status.success());
}
