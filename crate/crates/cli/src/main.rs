//! `lowmach` command-line driver.

use clap::{Args, Parser, Subcommand, ValueEnum};
use lowmach::analysis::{
    horizontal_profile, interface_observables, line_periodogram, Direction, MeanRemoval, StaticSpectrum,
};
use lowmach::config::{RunConfig, ScenarioKind};
use lowmach::integrators::SchemeKind;
use lowmach::io::{self, read_snapshot, write_spectrum_csv, write_table_csv};
use lowmach::scenario::{self, convergence_study, order_tolerance, theory_params, RunSummary};
use lowmach::theory::{effective_wavenumber, equilibrium_static_factors, gravity_cutoff, noneq_scc_full, simplified_scc};
use lowmach::{par, Error};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

#[derive(Parser)]
#[command(name = "lowmach", version, about = "Low Mach number fluctuating hydrodynamics for binary mixtures")]
struct Cli {
    /// Disable data parallelism inside operators.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its outputs.
    Run(RunArgs),
    /// Richardson self-convergence study of the deterministic schemes.
    Convergence(ConvergenceArgs),
    /// Spectra and profiles from concentration snapshots.
    Analyze(AnalyzeArgs),
    /// Linearised-theory predictions for a configuration.
    Theory(TheoryArgs),
}

#[derive(Args)]
struct Common {
    /// Configuration file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Replaces `output.dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Replaces `noise.seed`.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Replaces `integrator.steps`.
    #[arg(long)]
    steps_override: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::from_file(&self.config)?;
        if let Some(d) = &self.output_dir {
            cfg.output.dir = d.clone();
        }
        if let Some(s) = self.seed_override {
            cfg.model.noise.seed = s;
        }
        if let Some(n) = self.steps_override {
            cfg.steps = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Continue from a checkpoint written by the same configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Run this many independent seeds (seed, seed+1, ...) as separate
    /// processes, each in `<output-dir>/seed_<n>`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Concurrent processes for `--seeds`.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Largest acceptable max|δ−1| over the run.
    #[arg(long, default_value_t = 1e-9)]
    eos_tol: f64,
    /// Largest acceptable relative change of each species mass on fully
    /// periodic domains.
    #[arg(long, default_value_t = 1e-10)]
    mass_tol: f64,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated schemes.
    #[arg(long, default_value = "euler,trapezoidal,midpoint,rk3", value_delimiter = ',')]
    schemes: Vec<String>,
    /// Number of time-step levels (Δt, Δt/2, ...); at least 3.
    #[arg(long, default_value_t = 3)]
    levels: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Analysis {
    /// Full 2D static structure factor.
    Full,
    /// `S(k_x, k_y = 0)`.
    AlongX,
    /// `S(k_x = 0, k_y)`.
    AlongY,
    /// Horizontally averaged profile.
    Profile,
    /// Interface spectra `S_c`, `S_h` per snapshot.
    Interface,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Directory of `c_*.csv` snapshots (a run directory or its `snapshots/`).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    kind: Analysis,
    /// Snapshot batches for error bars (consecutive groups in step order).
    #[arg(long, default_value_t = 2)]
    batches: usize,
    /// Ignore snapshots before this step.
    #[arg(long, default_value_t = 0)]
    from_step: u64,
    /// Output CSV path.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TheoryArgs {
    /// Configuration file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Output CSV of `S_cc(k_x)` on the grid wavenumbers; stdout summary only
    /// if absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.sequential {
        par::set_parallel(false);
    }
    let result = match cli.command {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Convergence(a) => cmd_convergence(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Theory(a) => cmd_theory(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(a: RunArgs) -> Result<bool, Error> {
    let cfg = a.common.load()?;
    if a.seeds > 1 {
        return run_seeds(&a, &cfg);
    }
    let summary = match &a.resume {
        Some(p) => scenario::resume(&cfg, p)?,
        None => scenario::run(&cfg)?,
    };
    report_run(&cfg, &summary);
    Ok(invariants_hold(&cfg, &summary, a.eos_tol, a.mass_tol))
}

fn report_run(cfg: &RunConfig, s: &RunSummary) {
    println!(
        "{}: {} steps in {:.1}s, {} samples, max|δ−1| {:.2e}, mass drift {:.2e}/{:.2e}, outputs in {}",
        cfg.scenario.kind.name(),
        s.steps_run,
        s.wall_seconds,
        s.samples,
        s.max_eos_residual,
        s.mass_drift[0],
        s.mass_drift[1],
        cfg.output.dir.display()
    );
}

fn invariants_hold(cfg: &RunConfig, s: &RunSummary, eos_tol: f64, mass_tol: f64) -> bool {
    let mut ok = true;
    if s.max_eos_residual > eos_tol {
        eprintln!("invariant breach: max|δ−1| = {:.3e} > {eos_tol:e}", s.max_eos_residual);
        ok = false;
    }
    if cfg.model.grid.all_periodic() && s.mass_drift.iter().any(|d| *d > mass_tol) {
        eprintln!("invariant breach: relative mass change {:.3e}/{:.3e} > {mass_tol:e}", s.mass_drift[0], s.mass_drift[1]);
        ok = false;
    }
    ok
}

/// Runs `--seeds` copies of this executable, one per seed.
fn run_seeds(a: &RunArgs, cfg: &RunConfig) -> Result<bool, Error> {
    if a.resume.is_some() {
        return Err(Error::Usage("--resume cannot be combined with --seeds".into()));
    }
    let exe = std::env::current_exe()?;
    let base = cfg.model.noise.seed;
    let mut pending: Vec<u64> = (0..a.seeds).map(|n| base + n).collect();
    pending.reverse();
    let mut running = Vec::new();
    let mut ok = true;
    while !pending.is_empty() || !running.is_empty() {
        while running.len() < a.jobs.max(1) {
            let Some(seed) = pending.pop() else { break };
            let dir = cfg.output.dir.join(format!("seed_{seed}"));
            let mut cmd = Command::new(&exe);
            cmd.arg("run")
                .arg("--config")
                .arg(&a.common.config)
                .arg("--output-dir")
                .arg(&dir)
                .arg("--seed-override")
                .arg(seed.to_string())
                .arg("--steps-override")
                .arg(cfg.steps.to_string())
                .arg("--eos-tol")
                .arg(a.eos_tol.to_string())
                .arg("--mass-tol")
                .arg(a.mass_tol.to_string());
            if !par::parallel_enabled() {
                cmd.arg("--sequential");
            }
            running.push((seed, cmd.spawn()?));
        }
        let (seed, mut child) = running.remove(0);
        let status = child.wait()?;
        if !status.success() {
            eprintln!("seed {seed} failed ({status})");
            ok = false;
        }
    }
    Ok(ok)
}

fn cmd_convergence(a: ConvergenceArgs) -> Result<bool, Error> {
    let mut cfg = a.common.load()?;
    if cfg.scenario.kind != ScenarioKind::Convergence {
        eprintln!("note: scenario '{}' is used as the initial condition", cfg.scenario.kind.name());
    }
    cfg.model.noise = lowmach::stochastic::NoiseConfig::off();
    let kinds = a.schemes.iter().map(|s| SchemeKind::parse(s)).collect::<Result<Vec<_>, _>>()?;
    let rows = convergence_study(&cfg, &kinds, a.levels)?;
    let mut ok = true;
    let mut table = Vec::new();
    println!("{:<12} {:>9} {:>9} {:>9} {:>6}", "scheme", "rho1", "velocity", "expected", "pass");
    for r in &rows {
        let expected = r.scheme.order() as f64;
        let good = r.error_from(expected) <= order_tolerance(r.scheme);
        ok &= good;
        println!(
            "{:<12} {:>9.3} {:>9.3} {:>9} {:>6}",
            r.scheme.name(),
            r.order_rho1[0],
            r.order_v[0],
            format!("{expected}±{}", order_tolerance(r.scheme)),
            if good { "yes" } else { "NO" }
        );
        for (n, dt) in r.dts.iter().enumerate().take(r.diff_rho1.len()) {
            table.push(vec![
                r.scheme.order() as f64,
                *dt,
                r.diff_rho1[n],
                r.diff_v[n],
                r.order_rho1.get(n).copied().unwrap_or(f64::NAN),
                r.order_v.get(n).copied().unwrap_or(f64::NAN),
            ]);
        }
    }
    std::fs::create_dir_all(&cfg.output.dir)?;
    write_table_csv(
        &cfg.output.dir.join("convergence.csv"),
        &["scheme_order", "dt", "diff_rho1", "diff_v", "order_rho1", "order_v"],
        &table,
    )?;
    Ok(ok)
}

fn snapshot_files(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let sub = dir.join("snapshots");
    let dir = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("c_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Usage(format!("no c_*.csv snapshots in {}", dir.display())));
    }
    Ok(files)
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<bool, Error> {
    let snaps: Vec<io::Snapshot> = snapshot_files(&a.input)?
        .iter()
        .map(|p| read_snapshot(p))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|s| s.step >= a.from_step)
        .collect();
    if snaps.is_empty() {
        return Err(Error::Statistics(format!("no snapshots at or after step {}", a.from_step)));
    }
    let grid = snaps[0].grid.clone();
    let nb = a.batches.max(1);
    let batch_of = |n: usize| n * nb / snaps.len();
    match a.kind {
        Analysis::Full | Analysis::AlongX | Analysis::AlongY => {
            let dir = match a.kind {
                Analysis::Full => Direction::Full,
                Analysis::AlongX => Direction::AlongX,
                _ => Direction::AlongY,
            };
            let mut sp = StaticSpectrum::new(&grid, dir, nb);
            for (n, s) in snaps.iter().enumerate() {
                sp.add(&s.field, batch_of(n))?;
            }
            let est = sp.estimate(MeanRemoval::Spatial)?;
            write_spectrum_csv(&a.output, &est)?;
        }
        Analysis::Profile => {
            let rows: Vec<Vec<f64>> = {
                let profiles: Vec<Vec<f64>> = snaps.iter().map(|s| horizontal_profile(&s.field)).collect();
                let n = profiles.len() as f64;
                (0..grid.ny)
                    .map(|j| {
                        let vals: Vec<f64> = profiles.iter().map(|p| p[j]).collect();
                        let mean = vals.iter().sum::<f64>() / n;
                        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                        vec![(j as f64 + 0.5) * grid.dy, mean, (var / n).sqrt()]
                    })
                    .collect()
            };
            write_table_csv(&a.output, &["y", "c_mean", "stderr"], &rows)?;
        }
        Analysis::Interface => {
            let mut rows = Vec::new();
            for s in &snaps {
                let (cv, hc) = interface_observables(&s.field, &grid);
                let (sc, sh) = (line_periodogram(&cv, grid.dx), line_periodogram(&hc, grid.dx));
                for m in 1..=grid.nx / 2 {
                    let k = 2.0 * std::f64::consts::PI * m as f64 / grid.lx();
                    rows.push(vec![s.step as f64, s.t, k, sc[m], sh[m]]);
                }
            }
            write_table_csv(&a.output, &["step", "t", "k", "S_c", "S_h"], &rows)?;
        }
    }
    println!("analyzed {} snapshots -> {}", snaps.len(), a.output.display());
    Ok(true)
}

fn cmd_theory(a: TheoryArgs) -> Result<bool, Error> {
    let cfg = RunConfig::from_file(&a.config)?;
    let tp = theory_params(&cfg)?;
    let f = equilibrium_static_factors(&tp);
    println!("rho = {:.6e}  beta = {:.6e}  nu = {:.6e}  chi = {:.6e}", tp.rho, tp.beta, tp.nu, tp.chi);
    println!("S_cc(eq) = {:.6e}  S_vv(eq) = {:.6e}  S_rho_rho(eq) = {:.6e}", f.s_cc, f.s_vv, f.s_rho_rho);
    if tp.h_par != 0.0 {
        println!("h_par = {:.6e}  g = {:.6e}  k_g = {:.6e}", tp.h_par, tp.g, gravity_cutoff(&tp));
    }
    if let Some(out) = &a.output {
        let g = &cfg.model.grid;
        let rows: Vec<Vec<f64>> = (1..=g.nx / 2)
            .map(|m| {
                let k = 2.0 * std::f64::consts::PI * m as f64 / g.lx();
                let ke = effective_wavenumber(k, g.dx);
                vec![k, ke, noneq_scc_full(ke, &tp), simplified_scc(ke, &tp)]
            })
            .collect();
        write_table_csv(out, &["k", "k_eff", "S_cc_full", "S_cc_simplified"], &rows)?;
    }
    Ok(true)
}
