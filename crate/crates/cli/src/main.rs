use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use netpgd_cli::config::{parse_rec_mode, parse_solver_list, ExperimentConfig, Overrides, Task};
use netpgd_cli::runner::{run_experiment, run_rec_check};

#[derive(Parser)]
#[command(
    name = "netpgd",
    about = "Compressive sensing and phase retrieval with an untrained deep-decoder prior",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recover an image from linear Gaussian measurements
    Cs(RunArgs),
    /// Recover an image from magnitude-only measurements
    Cpr(RunArgs),
    /// Fit the decoder directly to an image (no measurements)
    Project(RunArgs),
    /// Empirically probe the restricted eigenvalue condition of random
    /// Gaussian operators on decoder directions
    RecCheck(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Key=value config file (flags override its entries)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target image as an 8-bit binary PGM
    #[arg(long)]
    image: Option<PathBuf>,
    /// Use a decoder-generated target instead of an image
    #[arg(long)]
    synthetic: bool,
    /// Seed for the synthetic target's weights and latent
    #[arg(long)]
    target_seed: Option<u64>,
    /// Undersampling ratios n/d, comma separated, each in (0, 3]
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// Trial seeds, comma separated
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Solvers to run: net-pgd, net-gd, ista (comma separated)
    #[arg(long)]
    solver: Option<String>,
    /// Decoder architecture file (key=value)
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Outer step size
    #[arg(long)]
    eta: Option<f64>,
    /// Outer iteration budget
    #[arg(long)]
    outer_iters: Option<usize>,
    /// Inner projection steps per outer iteration
    #[arg(long)]
    inner_iters: Option<usize>,
    /// Inner projection learning rate
    #[arg(long)]
    inner_lr: Option<f64>,
    /// Soft-threshold weight for the ista baseline
    #[arg(long)]
    lambda: Option<f64>,
    /// Restricted eigenvalue slack in (0, 1) (rec-check)
    #[arg(long)]
    alpha: Option<f64>,
    /// Trials per grid point (rec-check)
    #[arg(long)]
    trials: Option<usize>,
    /// Measurement counts to probe, comma separated (rec-check)
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Direction set for rec-check: range or difference
    #[arg(long)]
    mode: Option<String>,
    /// Output directory for CSVs and reconstructions
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Record wall-clock times in results.csv (off by default so runs
    /// are byte-reproducible)
    #[arg(long)]
    timing: bool,
}

impl RunArgs {
    fn into_overrides(self) -> Result<Overrides> {
        Ok(Overrides {
            config: self.config,
            image: self.image,
            synthetic: if self.synthetic { Some(true) } else { None },
            target_seed: self.target_seed,
            ratios: self.ratios,
            seeds: self.seeds,
            solvers: self.solver.as_deref().map(parse_solver_list).transpose()?,
            spec: self.spec,
            eta: self.eta,
            outer_iters: self.outer_iters,
            inner_iters: self.inner_iters,
            inner_lr: self.inner_lr,
            lambda: self.lambda,
            alpha: self.alpha,
            trials: self.trials,
            n_grid: self.n_grid,
            rec_mode: self.mode.as_deref().map(parse_rec_mode).transpose()?,
            out_dir: self.out_dir,
            timing: if self.timing { Some(true) } else { None },
        })
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (task, args) = match cli.command {
        Command::Cs(a) => (Task::Cs, a),
        Command::Cpr(a) => (Task::Cpr, a),
        Command::Project(a) => (Task::Project, a),
        Command::RecCheck(a) => (Task::RecCheck, a),
    };
    let cfg = ExperimentConfig::resolve(task, &args.into_overrides()?)?;

    if task == Task::RecCheck {
        let reports = run_rec_check(&cfg)?;
        for r in &reports {
            println!(
                "n={:<5} pass_rate={:.3} ({}/{} trials passed, {} direction draws discarded)",
                r.n, r.pass_rate, r.passes, r.kept, r.discarded
            );
        }
        println!("wrote {}", cfg.out_dir.join("rec.csv").display());
        return Ok(());
    }

    let rows = run_experiment(&cfg)?;
    let ok = rows.iter().filter(|r| r.is_ok()).count();
    for row in &rows {
        match row.nmse {
            Some(v) => println!(
                "{} {} f={} seed={}: nmse={:.4e} iters={}",
                row.task.name(),
                row.solver,
                row.ratio,
                row.seed,
                v,
                row.iters
            ),
            None => println!(
                "{} {} f={} seed={}: {}",
                row.task.name(),
                row.solver,
                row.ratio,
                row.seed,
                row.status
            ),
        }
    }
    println!(
        "{}/{} cells ok; wrote {}",
        ok,
        rows.len(),
        cfg.out_dir.join("results.csv").display()
    );
    Ok(())
}
