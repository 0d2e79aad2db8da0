//! Experiment configuration: plain key=value files with CLI overrides.
//!
//! Lists use repeated keys (`ratio=0.1` on several lines). Flags given on
//! the command line always win over file values, which win over defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use netpgd_core::decoder::DecoderSpec;
use netpgd_core::measure::RecMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Cs,
    Cpr,
    Project,
    RecCheck,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Cs => "cs",
            Task::Cpr => "cpr",
            Task::Project => "project",
            Task::RecCheck => "rec-check",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cs" => Ok(Task::Cs),
            "cpr" => Ok(Task::Cpr),
            "project" => Ok(Task::Project),
            "rec-check" => Ok(Task::RecCheck),
            other => bail!("unknown task {other:?} (expected cs, cpr, project or rec-check)"),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SolverKind {
    NetPgd,
    NetGd,
    Ista,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::NetPgd => "net-pgd",
            SolverKind::NetGd => "net-gd",
            SolverKind::Ista => "ista",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "net-pgd" => Ok(SolverKind::NetPgd),
            "net-gd" => Ok(SolverKind::NetGd),
            "ista" => Ok(SolverKind::Ista),
            other => bail!("unknown solver {other:?} (expected net-pgd, net-gd or ista)"),
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything a run needs, resolved and validated.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: Task,
    pub image: Option<PathBuf>,
    /// Use an in-range target G(w*; z) instead of an image file.
    pub synthetic: bool,
    /// Seed for the synthetic target's weights and latent code.
    pub target_seed: u64,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub solvers: Vec<SolverKind>,
    pub spec: DecoderSpec,
    pub eta: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub inner_lr: f64,
    /// L1 weight for the ista baseline.
    pub lambda: f64,
    /// rec-check: REC slack, trial count, measurement grid and set mode.
    pub alpha: f64,
    pub trials: usize,
    pub n_grid: Vec<usize>,
    pub rec_mode: RecMode,
    pub out_dir: PathBuf,
    /// Record real wall time. Off by default so reruns are byte-identical.
    pub timing: bool,
}

/// Optional values gathered from command-line flags.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub synthetic: Option<bool>,
    pub target_seed: Option<u64>,
    pub ratios: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub solvers: Option<Vec<SolverKind>>,
    pub spec: Option<PathBuf>,
    pub eta: Option<f64>,
    pub outer_iters: Option<usize>,
    pub inner_iters: Option<usize>,
    pub inner_lr: Option<f64>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub trials: Option<usize>,
    pub n_grid: Option<Vec<usize>>,
    pub rec_mode: Option<RecMode>,
    pub out_dir: Option<PathBuf>,
    pub timing: Option<bool>,
}

/// Key=value lines with `#` comments; repeated keys accumulate.
fn parse_kv_lines(text: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key=value, got {line:?}", lineno + 1))?;
        map.entry(key.trim().to_string()).or_default().push(value.trim().to_string());
    }
    Ok(map)
}

fn parse_one<T, F>(values: &[String], key: &str, parse: F) -> Result<T>
where
    F: Fn(&str) -> Result<T>,
{
    if values.len() > 1 {
        bail!("key {key:?} given {} times, expected once", values.len());
    }
    parse(&values[0]).with_context(|| format!("bad value for {key:?}: {:?}", values[0]))
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => bail!("expected true/false, got {other:?}"),
    }
}

pub fn parse_rec_mode(s: &str) -> Result<RecMode> {
    match s {
        "range" => Ok(RecMode::Range),
        "difference" => Ok(RecMode::Difference),
        other => bail!("expected range or difference, got {other:?}"),
    }
}

pub fn parse_ratio_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| anyhow!("bad ratio {t:?}")))
        .collect()
}

pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|_| anyhow!("bad seed {t:?}")))
        .collect()
}

pub fn parse_n_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| anyhow!("bad n {t:?}")))
        .collect()
}

pub fn parse_solver_list(s: &str) -> Result<Vec<SolverKind>> {
    s.split(',').map(|t| SolverKind::parse(t.trim())).collect()
}

impl ExperimentConfig {
    /// Task defaults before any file or flag is applied.
    fn defaults(task: Task) -> Self {
        ExperimentConfig {
            task,
            image: None,
            synthetic: false,
            target_seed: 0,
            ratios: vec![0.25],
            seeds: vec![0],
            solvers: vec![SolverKind::NetPgd],
            // The digit-scale architecture; images land in [0,1], hence
            // the squeeze on the output.
            spec: DecoderSpec::new(vec![15, 15, 10, 1], 7, true, true)
                .expect("default spec is valid"),
            eta: match task {
                Task::Cpr => 1.0,
                _ => 0.5,
            },
            outer_iters: 100,
            inner_iters: 400,
            inner_lr: 1e-3,
            lambda: 0.1,
            alpha: 0.5,
            trials: 200,
            n_grid: vec![20, 50, 100, 200, 400],
            rec_mode: RecMode::Difference,
            out_dir: PathBuf::from("out"),
            timing: false,
        }
    }

    /// Resolve defaults, then the config file, then flag overrides, and
    /// validate the result.
    pub fn resolve(task: Task, ov: &Overrides) -> Result<Self> {
        let mut cfg = Self::defaults(task);

        // Spec fields may be edited piecemeal in the file, so stage them.
        let mut channels = cfg.spec.layer_channels().to_vec();
        let mut latent_side = cfg.spec.latent_side();
        let mut channel_norm = cfg.spec.use_channel_norm();
        let mut sigmoid = cfg.spec.use_output_sigmoid();
        let mut spec_file: Option<PathBuf> = None;

        if let Some(path) = &ov.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let map = parse_kv_lines(&text)?;
            for (key, values) in &map {
                match key.as_str() {
                    "task" => {
                        let t = parse_one(values, key, Task::parse)?;
                        if t != task {
                            bail!(
                                "config file says task={t} but the {task} subcommand was invoked"
                            );
                        }
                    }
                    "image" => {
                        cfg.image = Some(parse_one(values, key, |s| Ok(PathBuf::from(s)))?)
                    }
                    "synthetic" => cfg.synthetic = parse_one(values, key, parse_bool)?,
                    "target_seed" => {
                        cfg.target_seed = parse_one(values, key, |s| {
                            s.parse::<u64>().map_err(|_| anyhow!("bad integer"))
                        })?
                    }
                    "ratio" => {
                        cfg.ratios = values
                            .iter()
                            .map(|v| {
                                v.parse::<f64>().map_err(|_| anyhow!("bad ratio {v:?}"))
                            })
                            .collect::<Result<_>>()?
                    }
                    "seed" => {
                        cfg.seeds = values
                            .iter()
                            .map(|v| v.parse::<u64>().map_err(|_| anyhow!("bad seed {v:?}")))
                            .collect::<Result<_>>()?
                    }
                    "solver" => {
                        cfg.solvers = values
                            .iter()
                            .map(|v| SolverKind::parse(v))
                            .collect::<Result<_>>()?
                    }
                    "spec" => spec_file = Some(parse_one(values, key, |s| Ok(PathBuf::from(s)))?),
                    "channels" => {
                        channels = parse_one(values, key, |s| {
                            s.split(',')
                                .map(|t| {
                                    t.trim()
                                        .parse::<usize>()
                                        .map_err(|_| anyhow!("bad channel {t:?}"))
                                })
                                .collect()
                        })?
                    }
                    "latent_side" => {
                        latent_side = parse_one(values, key, |s| {
                            s.parse::<usize>().map_err(|_| anyhow!("bad integer"))
                        })?
                    }
                    "channel_norm" => channel_norm = parse_one(values, key, parse_bool)?,
                    "sigmoid" => sigmoid = parse_one(values, key, parse_bool)?,
                    "eta" => {
                        cfg.eta = parse_one(values, key, |s| {
                            s.parse::<f64>().map_err(|_| anyhow!("bad number"))
                        })?
                    }
                    "outer_iters" => {
                        cfg.outer_iters = parse_one(values, key, |s| {
                            s.parse::<usize>().map_err(|_| anyhow!("bad integer"))
                        })?
                    }
                    "inner_iters" => {
                        cfg.inner_iters = parse_one(values, key, |s| {
                            s.parse::<usize>().map_err(|_| anyhow!("bad integer"))
                        })?
                    }
                    "inner_lr" => {
                        cfg.inner_lr = parse_one(values, key, |s| {
                            s.parse::<f64>().map_err(|_| anyhow!("bad number"))
                        })?
                    }
                    "lambda" => {
                        cfg.lambda = parse_one(values, key, |s| {
                            s.parse::<f64>().map_err(|_| anyhow!("bad number"))
                        })?
                    }
                    "alpha" => {
                        cfg.alpha = parse_one(values, key, |s| {
                            s.parse::<f64>().map_err(|_| anyhow!("bad number"))
                        })?
                    }
                    "trials" => {
                        cfg.trials = parse_one(values, key, |s| {
                            s.parse::<usize>().map_err(|_| anyhow!("bad integer"))
                        })?
                    }
                    "n" => {
                        cfg.n_grid = values
                            .iter()
                            .map(|v| v.parse::<usize>().map_err(|_| anyhow!("bad n {v:?}")))
                            .collect::<Result<_>>()?
                    }
                    "mode" => cfg.rec_mode = parse_one(values, key, parse_rec_mode)?,
                    "out_dir" => {
                        cfg.out_dir = parse_one(values, key, |s| Ok(PathBuf::from(s)))?
                    }
                    "timing" => cfg.timing = parse_one(values, key, parse_bool)?,
                    other => bail!("unknown config key {other:?}"),
                }
            }
        }

        if let Some(path) = ov.spec.as_ref().or(spec_file.as_ref()) {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading decoder spec {}", path.display()))?;
            cfg.spec = DecoderSpec::from_config_str(&text)
                .with_context(|| format!("parsing decoder spec {}", path.display()))?;
        } else {
            cfg.spec = DecoderSpec::new(channels, latent_side, channel_norm, sigmoid)
                .context("building decoder spec from config")?;
        }

        if let Some(v) = &ov.image {
            cfg.image = Some(v.clone());
        }
        if let Some(v) = ov.synthetic {
            cfg.synthetic = v;
        }
        if let Some(v) = ov.target_seed {
            cfg.target_seed = v;
        }
        if let Some(v) = &ov.ratios {
            cfg.ratios = v.clone();
        }
        if let Some(v) = &ov.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &ov.solvers {
            cfg.solvers = v.clone();
        }
        if let Some(v) = ov.eta {
            cfg.eta = v;
        }
        if let Some(v) = ov.outer_iters {
            cfg.outer_iters = v;
        }
        if let Some(v) = ov.inner_iters {
            cfg.inner_iters = v;
        }
        if let Some(v) = ov.inner_lr {
            cfg.inner_lr = v;
        }
        if let Some(v) = ov.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = ov.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = ov.trials {
            cfg.trials = v;
        }
        if let Some(v) = &ov.n_grid {
            cfg.n_grid = v.clone();
        }
        if let Some(v) = ov.rec_mode {
            cfg.rec_mode = v;
        }
        if let Some(v) = &ov.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = ov.timing {
            cfg.timing = v;
        }

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() {
            bail!("at least one ratio is required");
        }
        for &r in &self.ratios {
            if !(r > 0.0 && r <= 3.0) || !r.is_finite() {
                bail!("ratio {r} out of range (0, 3]");
            }
        }
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if self.solvers.is_empty() {
            bail!("at least one solver is required");
        }
        for w in self.solvers.windows(2) {
            if w[0] == w[1] {
                bail!("solver {} listed twice", w[0]);
            }
        }
        let mut sorted = self.solvers.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.solvers.len() {
            bail!("duplicate solver in list");
        }
        match self.task {
            Task::Cs | Task::Cpr | Task::Project => {
                if self.image.is_none() && !self.synthetic {
                    bail!("either an image or synthetic=true is required for {}", self.task);
                }
                if self.image.is_some() && self.synthetic {
                    bail!("image and synthetic target are mutually exclusive");
                }
            }
            Task::RecCheck => {
                if self.n_grid.is_empty() {
                    bail!("rec-check needs a non-empty n grid");
                }
                if !(self.alpha > 0.0 && self.alpha < 1.0) {
                    bail!("alpha {} out of range (0, 1)", self.alpha);
                }
                if self.trials == 0 {
                    bail!("trials must be >= 1");
                }
            }
        }
        Ok(())
    }
}

/// Validates and loads a square PGM whose side is a power-of-two multiple
/// of the decoder's latent grid, scaled to [0, 1].
pub fn load_image(path: &Path, latent_side: usize) -> Result<netpgd_core::image::ImageVector> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading image {}", path.display()))?;
    let img = netpgd_core::pgm::decode_pgm(&bytes)
        .with_context(|| format!("decoding {}", path.display()))?;
    if img.height() != img.width() {
        bail!("image is {}x{}, expected square", img.width(), img.height());
    }
    let side = img.height();
    if latent_side == 0 || side % latent_side != 0 || !(side / latent_side).is_power_of_two() {
        bail!(
            "image side {side} is not a power-of-two multiple of the latent side {latent_side}"
        );
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_lines_accumulate_repeated_keys() {
        let map = parse_kv_lines("a=1\n# comment\n\na=2\nb = x\n").unwrap();
        assert_eq!(map["a"], vec!["1", "2"]);
        assert_eq!(map["b"], vec!["x"]);
    }

    #[test]
    fn kv_lines_reject_garbage() {
        assert!(parse_kv_lines("no equals sign").is_err());
    }

    #[test]
    fn defaults_resolve_for_rec_check() {
        let cfg = ExperimentConfig::resolve(Task::RecCheck, &Overrides::default()).unwrap();
        assert_eq!(cfg.n_grid, vec![20, 50, 100, 200, 400]);
        assert_eq!(cfg.trials, 200);
    }

    #[test]
    fn cs_without_image_or_synthetic_is_rejected() {
        let err = ExperimentConfig::resolve(Task::Cs, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("image"), "{err}");
    }

    #[test]
    fn flags_override_file_values() {
        let dir = std::env::temp_dir().join(format!("netpgd-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("exp.cfg");
        std::fs::write(&path, "synthetic=true\nratio=0.1\nratio=0.2\nseed=5\neta=0.9\n").unwrap();
        let ov = Overrides {
            config: Some(path.clone()),
            eta: Some(0.3),
            ..Overrides::default()
        };
        let cfg = ExperimentConfig::resolve(Task::Cs, &ov).unwrap();
        assert_eq!(cfg.ratios, vec![0.1, 0.2]);
        assert_eq!(cfg.seeds, vec![5]);
        assert!((cfg.eta - 0.3).abs() < 1e-12, "flag must beat file");
        assert!(cfg.synthetic);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn task_mismatch_between_file_and_subcommand_errors() {
        let dir = std::env::temp_dir().join(format!("netpgd-cfg2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("exp.cfg");
        std::fs::write(&path, "task=cpr\nsynthetic=true\n").unwrap();
        let ov = Overrides { config: Some(path.clone()), ..Overrides::default() };
        assert!(ExperimentConfig::resolve(Task::Cs, &ov).is_err());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn ratio_bounds_are_enforced() {
        let ov = Overrides {
            synthetic: Some(true),
            ratios: Some(vec![3.5]),
            ..Overrides::default()
        };
        assert!(ExperimentConfig::resolve(Task::Cs, &ov).is_err());
        let ov = Overrides {
            synthetic: Some(true),
            ratios: Some(vec![0.0]),
            ..Overrides::default()
        };
        assert!(ExperimentConfig::resolve(Task::Cs, &ov).is_err());
    }
}
