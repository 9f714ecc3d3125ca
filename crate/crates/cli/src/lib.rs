//! `topv` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration error, 2 I/O or input-format
//! error, 3 numerical error or failed verification.

pub mod config;
pub mod output;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use topv_core::layersim::{forward_tap, init_block};
use topv_core::pipeline::{self, PipelineConfig};
use topv_core::pruner::prune_counts;
use topv_core::synth::gaussian_tokens;
use topv_core::verify::{run_verify, SolveFn};
use topv_core::{flops_ratio, load_dump, save_dump, ModelShape, PruneConfig, TokenSet};

use crate::config::{extract_overrides, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<topv_core::Error> for CliError {
    fn from(e: topv_core::Error) -> Self {
        use topv_core::Error as E;
        match e {
            E::Contract(_) | E::Shape(_) => CliError::Config(e.to_string()),
            E::Format(_) | E::Length { .. } | E::Data(_) | E::Io(_) => CliError::Io(e.to_string()),
            E::Numerical(_) => CliError::Numerical(e.to_string()),
        }
    }
}

fn io_err(what: &str, path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("i/o error: {what} {}: {e}", path.display()))
}

fn read_dump(path: &Path) -> Result<(TokenSet, Option<TokenSet>), CliError> {
    load_dump(path).map_err(|e| match e {
        topv_core::Error::Io(io) => io_err("cannot read", path, io),
        other => {
            let mut err = CliError::from(other);
            let (CliError::Io(m) | CliError::Config(m) | CliError::Numerical(m)) = &mut err;
            *m = format!("{}: {m}", path.display());
            err
        }
    })
}

#[derive(Debug, Parser)]
#[command(
    name = "topv",
    version,
    about = "Optimal-transport visual token pruning",
    after_help = "Any RunConfig field can be overridden with --<section>.<field>=<value>, e.g. --cost.sigma=10."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score, prune and recover tokens from a dump; write decision files.
    Prune {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-check the Sinkhorn solver against the reference oracle.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8, 16])]
        sizes: Vec<usize>,
    },
    /// Report FLOPs and KV-cache savings for the configured schedule.
    Budget {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Price an explicit retained-token count instead of the prune settings.
        #[arg(long)]
        retained: Option<usize>,
        /// Tabulate over prune ratios, e.g. ratio=0.1:0.9:0.1
        #[arg(long)]
        sweep: Option<String>,
        /// Emit CSV instead of key=value lines.
        #[arg(long)]
        csv: bool,
    },
    /// Run the toy block on a source dump and write a source+target dump.
    Simulate {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a dump of standard-normal source tokens.
    Gen {
        /// Token count; must equal the grid area when given.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        dim: usize,
        /// Grid as HxW, e.g. 24x24.
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    run_with_solver(args, stdout, stderr, &topv_core::solve)
}

/// As [`run`], with the solver used by `verify` injected.
pub fn run_with_solver<I, S>(
    args: I,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
    solver: &SolveFn,
) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let result = extract_overrides(args).and_then(|(rest, overrides)| {
        let cli = match Cli::try_parse_from(rest) {
            Ok(c) => c,
            Err(e) => {
                let code = if e.use_stderr() { 1 } else { 0 };
                let _ = if code == 0 { write!(stdout, "{e}") } else { write!(stderr, "{e}") };
                return Ok(code);
            }
        };
        dispatch(cli.command, &overrides, stdout, stderr, solver)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "topv: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(
    command: Command,
    overrides: &[(String, String)],
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
    solver: &SolveFn,
) -> Result<i32, CliError> {
    let out_err = |e: std::io::Error| CliError::Io(format!("i/o error: writing output: {e}"));
    match command {
        Command::Prune { dump, config, out } => {
            let cfg = RunConfig::load(config.as_deref(), overrides)?;
            cmd_prune(&dump, &cfg, &out, stdout, stderr)?;
            Ok(0)
        }
        Command::Verify { seed, sizes } => {
            if !overrides.is_empty() {
                return Err(CliError::Config("verify takes no config overrides".into()));
            }
            let report = run_verify(seed, &sizes, solver)?;
            write!(stdout, "{}", report.render()).map_err(out_err)?;
            if report.all_passed() {
                writeln!(stdout, "all {} checks passed", report.checks.len()).map_err(out_err)?;
                Ok(0)
            } else {
                let failed = report.checks.iter().filter(|c| !c.passed()).count();
                writeln!(stderr, "topv: {failed} of {} checks failed", report.checks.len()).map_err(out_err)?;
                Ok(3)
            }
        }
        Command::Budget { config, retained, sweep, csv } => {
            let cfg = RunConfig::load(config.as_deref(), overrides)?;
            let text = cmd_budget(&cfg, retained, sweep.as_deref(), csv)?;
            write!(stdout, "{text}").map_err(out_err)?;
            Ok(0)
        }
        Command::Simulate { dump, config, out } => {
            let cfg = RunConfig::load(config.as_deref(), overrides)?;
            let (source, _) = read_dump(&dump)?;
            let target = simulate_target(&source, &cfg)?;
            save_dump(&source, Some(&target), &out)?;
            writeln!(
                stdout,
                "wrote {} tokens (tap {}) to {}",
                source.len(),
                cfg.tap().as_str(),
                out.display()
            )
            .map_err(out_err)?;
            Ok(0)
        }
        Command::Gen { n, dim, grid, seed, out } => {
            if !overrides.is_empty() {
                return Err(CliError::Config("gen takes no config overrides".into()));
            }
            let (h, w) = parse_grid(&grid)?;
            if let Some(n) = n {
                if n != h * w {
                    return Err(CliError::Config(format!("--n {n} does not equal grid area {}", h * w)));
                }
            }
            if dim == 0 {
                return Err(CliError::Config("--dim must be positive".into()));
            }
            let tokens = gaussian_tokens(dim, h, w, seed)?;
            save_dump(&tokens, None, &out)?;
            writeln!(stdout, "wrote {} x {dim} tokens ({h}x{w}) to {}", h * w, out.display()).map_err(out_err)?;
            Ok(0)
        }
    }
}

pub fn parse_grid(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Config(format!("grid must look like HxW, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

/// Targets from the toy block at the configured tap.
pub fn simulate_target(source: &TokenSet, cfg: &RunConfig) -> Result<TokenSet, CliError> {
    let block_cfg = cfg.block_config(source.dim());
    if block_cfg.dim != source.dim() {
        return Err(CliError::Config(format!(
            "sim.dim {} does not match token dimension {}",
            block_cfg.dim,
            source.dim()
        )));
    }
    let block = init_block(block_cfg)?;
    Ok(forward_tap(&block, source, block_cfg.tap)?)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err("cannot write", path, e))
}

pub fn cmd_prune(
    dump: &Path,
    cfg: &RunConfig,
    out_dir: &Path,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let (source, target) = read_dump(dump)?;
    let target = match target {
        Some(t) => t,
        None => simulate_target(&source, cfg)?,
    };
    let pipe_cfg = PipelineConfig {
        cost: cfg.cost_config(),
        sinkhorn: cfg.sinkhorn_config(),
        prune: cfg.prune_config(),
    };
    let result = pipeline::run(&source, &target, &pipe_cfg)?;

    let mut shape = cfg.model_shape();
    if shape.n_visual != source.len() {
        let _ = writeln!(
            stderr,
            "note: model_shape.n_visual {} replaced by dump token count {}",
            shape.n_visual,
            source.len()
        );
        shape.n_visual = source.len();
    }
    let report = flops_ratio(result.decision.retained.len(), &shape)?;

    fs::create_dir_all(out_dir).map_err(|e| io_err("cannot create", out_dir, e))?;
    let importance: Vec<f64> = result.decision.importance.to_vec();
    write_file(&out_dir.join("decision.csv"), &output::decision_csv(&result.decision))?;
    write_file(&out_dir.join("retained.txt"), &output::retained_txt(&result.decision))?;
    write_file(&out_dir.join("importance.pgm"), &output::importance_pgm(&source, &importance))?;
    write_file(&out_dir.join("budget.csv"), &output::budget_csv(&report, &shape))?;

    let _ = writeln!(
        stderr,
        "scoring time (cost + solve): {:.3} ms",
        result.scoring_time.as_secs_f64() * 1e3
    );
    let d = &result.decision;
    let _ = writeln!(
        stdout,
        "tokens={} kept={} recovered={} retained={} iterations={} converged={} flops_ratio_tokenfraction={:.6} kv_ratio={:.6}",
        d.n(),
        d.kept_topk.len(),
        d.recovered.len(),
        d.retained.len(),
        result.plan.iterations_used,
        result.plan.converged,
        report.flops_ratio_tokenfraction,
        report.kv_ratio
    );
    Ok(())
}

/// Parses `ratio=a:b:step` into the list of ratios it covers.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("sweep must look like ratio=a:b:step, got {spec:?}"));
    let body = spec.strip_prefix("ratio=").ok_or_else(bad)?;
    let parts: Vec<f64> = body
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [start, stop, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0) || !(start >= 0.0) || !(stop < 1.0) || start > stop {
        return Err(CliError::Config(format!(
            "sweep needs 0 <= a <= b < 1 and step > 0, got {start}:{stop}:{step}"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| start + k as f64 * step).collect())
}

pub fn cmd_budget(
    cfg: &RunConfig,
    retained: Option<usize>,
    sweep: Option<&str>,
    csv: bool,
) -> Result<String, CliError> {
    let shape: ModelShape = cfg.model_shape();
    if let Some(spec) = sweep {
        let mut out = format!("prune_ratio,{}\n", output::BUDGET_CSV_HEADER);
        for ratio in parse_sweep(spec)? {
            let prune = PruneConfig { prune_ratio: ratio, ..cfg.prune_config() };
            let (_, _, _, kept) = prune_counts(shape.n_visual, &prune)?;
            let report = flops_ratio(kept, &shape)?;
            out.push_str(&format!("{ratio:.4},{}\n", output::budget_csv_row(&report, &shape)));
        }
        return Ok(out);
    }
    let kept = match retained {
        Some(r) => r,
        None => prune_counts(shape.n_visual, &cfg.prune_config())?.3,
    };
    let report = flops_ratio(kept, &shape)?;
    Ok(if csv { output::budget_csv(&report, &shape) } else { output::budget_kv(&report, &shape) })
}
