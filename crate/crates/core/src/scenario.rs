//! Scenario set-up and run orchestration: initial conditions, sampling,
//! diagnostics, outputs and the deterministic convergence study.

use crate::analysis::{
    interface_observables, line_periodogram, DynamicSpectrum, Direction, MeanRemoval, Profile, ProfileAccumulator,
    SpectrumEstimate, StaticSpectrum,
};
use crate::config::{RunConfig, ScenarioKind};
use crate::eos::max_eos_residual;
use crate::error::{Error, Result};
use crate::fields::{concentration, vorticity, AxisBc, CellField, FaceVecField, SimState};
use crate::integrators::{state_from_concentration, FluidModel, Integrator, SchemeKind, StepScheme};
use crate::io;
use crate::stochastic::NoiseConfig;
use crate::theory::TheoryParams;
use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

/// Reservoir concentrations `(bottom, top)` of the `y` walls, if any.
fn y_reservoirs(model: &FluidModel) -> Option<(f64, f64)> {
    match model.grid.bc_y {
        AxisBc::Walls { lo, hi } => Some((lo.concentration?, hi.concentration?)),
        AxisBc::Periodic => None,
    }
}

/// Initial concentration field of the configured scenario.
pub fn initial_concentration(cfg: &RunConfig) -> Result<CellField> {
    let g = &cfg.model.grid;
    let s = &cfg.scenario;
    let (lx, ly) = (g.lx(), g.ly());
    Ok(match s.kind {
        ScenarioKind::Equilibrium => CellField::constant(g, s.c0),
        ScenarioKind::GiantFluctuations => {
            let (bot, top) = y_reservoirs(&cfg.model).ok_or_else(|| {
                Error::Config("scenario 'giant_fluctuations' needs reservoir walls 'bc.y_lo' and 'bc.y_hi'".into())
            })?;
            CellField::from_fn(g, |i, j| {
                let (_, y) = g.cell_center(i, j);
                bot + (top - bot) * y / ly
            })
        }
        ScenarioKind::Mixing => CellField::from_fn(g, |i, j| {
            let (_, y) = g.cell_center(i, j);
            let f = y / ly;
            if f >= s.band.0 && f < s.band.1 {
                1.0
            } else {
                0.0
            }
        }),
        ScenarioKind::Convergence => CellField::from_fn(g, |i, j| {
            let (x, y) = g.cell_center(i, j);
            s.c0 + s.amplitude * (2.0 * PI * x / lx).sin() * (2.0 * PI * y / ly).cos()
        }),
    })
}

/// Initial state: EOS-consistent densities and, for the convergence
/// scenario, a smooth velocity projected onto the constraint.
pub fn initial_state(cfg: &RunConfig) -> Result<SimState> {
    let c = initial_concentration(cfg)?;
    let model = &cfg.model;
    if cfg.scenario.kind != ScenarioKind::Convergence {
        return state_from_concentration(model, &c, None);
    }
    let g = &model.grid;
    let (lx, ly) = (g.lx(), g.ly());
    let u0 = cfg.scenario.amplitude;
    let v = FaceVecField::from_fn(
        g,
        |_, j| u0 * (2.0 * PI * (j as f64 + 0.5) * g.dy / ly).sin(),
        |i, _| 0.5 * u0 * (2.0 * PI * (i as f64 + 0.5) * g.dx / lx).cos(),
    );
    let raw = state_from_concentration(model, &c, Some(&v))?;
    let quiet = FluidModel { noise: NoiseConfig::off(), ..model.clone() };
    let vp = quiet.velocity(&raw)?;
    state_from_concentration(model, &c, Some(&vp))
}

/// Reference state of the linearised theory for a configuration.
pub fn theory_params(cfg: &RunConfig) -> Result<TheoryParams> {
    let m = &cfg.model;
    let (c, h_par) = match y_reservoirs(m) {
        Some((bot, top)) if cfg.scenario.kind == ScenarioKind::GiantFluctuations => {
            (0.5 * (bot + top), (bot - top) / m.grid.ly())
        }
        _ => (cfg.scenario.c0, 0.0),
    };
    let rho = m.eos.density(c)?;
    let eta = m.transport.eta(c, rho);
    let chi = m.transport.chi(c, rho, &m.eos);
    Ok(TheoryParams { g: -m.gravity[1], h_par, ..TheoryParams::equilibrium(&m.eos, c, eta, chi)? })
}

/// Results of a scenario run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub final_state: SimState,
    pub steps_run: u64,
    pub samples: usize,
    pub spectrum: Option<SpectrumEstimate>,
    pub profile: Option<Profile>,
    pub max_eos_residual: f64,
    /// Relative change of the total masses of both species.
    pub mass_drift: [f64; 2],
    pub total_excursions: u64,
    pub wall_seconds: f64,
}

fn totals(s: &SimState, dv: f64) -> (f64, f64, f64, f64) {
    let m1 = s.rho1.sum() * dv;
    let m2 = (s.rho.sum() - s.rho1.sum()) * dv;
    (m1, m2, s.m.x.iter().sum::<f64>() * dv, s.m.y.iter().sum::<f64>() * dv)
}

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        (a - b).abs() / b.abs()
    }
}

struct Samplers {
    spectrum: Option<StaticSpectrum>,
    profile: Option<ProfileAccumulator>,
    dyn_c: Option<DynamicSpectrum>,
    dyn_v: Option<DynamicSpectrum>,
    interface: Vec<Vec<f64>>,
    count: usize,
}

impl Samplers {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let g = &cfg.model.grid;
        let s = &cfg.scenario;
        let nb = s.batches;
        let (spectrum, profile) = match s.kind {
            ScenarioKind::Equilibrium => (Some(StaticSpectrum::new(g, Direction::Full, nb)), None),
            ScenarioKind::GiantFluctuations => {
                (Some(StaticSpectrum::new(g, Direction::AlongX, nb)), Some(ProfileAccumulator::new(g.ny, nb)))
            }
            _ => (None, None),
        };
        let (mut dyn_c, mut dyn_v) = (None, None);
        if s.kind == ScenarioKind::Equilibrium && s.dynamic_batch_len > 0 {
            let modes: Vec<(usize, usize)> = (1..=s.dynamic_modes.min(g.nx / 2)).map(|m| (m, 0)).collect();
            let dts = cfg.dt * s.sample_every as f64;
            dyn_c = Some(DynamicSpectrum::new(g, &modes, s.dynamic_batch_len, dts)?);
            if g.all_periodic() {
                dyn_v = Some(DynamicSpectrum::new(g, &modes, s.dynamic_batch_len, dts)?.scale_by_inverse_k());
            }
        }
        Ok(Samplers { spectrum, profile, dyn_c, dyn_v, interface: Vec::new(), count: 0 })
    }

    fn add(&mut self, cfg: &RunConfig, state: &SimState, batch: usize) -> Result<()> {
        let g = &cfg.model.grid;
        let c = concentration(state)?;
        if let Some(s) = &mut self.spectrum {
            s.add(&c, batch)?;
        }
        if let Some(p) = &mut self.profile {
            p.add(&state.rho1, batch)?;
        }
        if let Some(d) = &mut self.dyn_c {
            d.push_field(&c.data)?;
        }
        if let Some(d) = &mut self.dyn_v {
            let v = cfg.model.velocity(state)?;
            d.push_field(&vorticity(&v, g)?.data)?;
        }
        if cfg.scenario.kind == ScenarioKind::Mixing {
            let (cv, hc) = interface_observables(&c, g);
            let (sc, sh) = (line_periodogram(&cv, g.dx), line_periodogram(&hc, g.dx));
            for m in 1..=g.nx / 2 {
                let k = 2.0 * PI * m as f64 / g.lx();
                self.interface.push(vec![state.step as f64, state.t, k, sc[m], sh[m]]);
            }
        }
        self.count += 1;
        Ok(())
    }
}

/// Runs the configured scenario from its initial condition.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    run_from(cfg, initial_state(cfg)?)
}

/// Runs from `state` until `state.step == cfg.steps`, writing outputs into
/// `cfg.output.dir`. Sampling covers only the steps taken in this call.
pub fn run_from(cfg: &RunConfig, mut state: SimState) -> Result<RunSummary> {
    cfg.validate()?;
    let out = &cfg.output;
    std::fs::create_dir_all(&out.dir)?;
    std::fs::write(out.dir.join("config.txt"), cfg.render())?;
    let mut log = io::RunLog::create(&out.dir.join("run.log"))?;
    log.record(&[
        ("event", "start".into()),
        ("scenario", cfg.scenario.kind.name().into()),
        ("scheme", cfg.scheme.kind.name().into()),
        ("dt", format!("{:e}", cfg.dt)),
        ("steps", cfg.steps.to_string()),
        ("seed", cfg.model.noise.seed.to_string()),
        ("start_step", state.step.to_string()),
        ("parallel", crate::par::parallel_enabled().to_string()),
    ])?;

    let mut integ = Integrator::new(cfg.model.clone(), cfg.scheme, cfg.dt)?;
    integ.allow_unstable = cfg.allow_unstable;
    integ.excursion_limit = cfg.excursion_limit;
    let dv = cfg.model.grid.cell_volume();
    let t0 = totals(&state, dv);
    let mut samplers = Samplers::new(cfg)?;
    let mut max_eos = max_eos_residual(&state.rho, &state.rho1, &cfg.model.eos);
    let sc = &cfg.scenario;
    let sampled_span = (cfg.steps - sc.burn_in).max(1);
    let clock = Instant::now();
    let start = state.step;

    while state.step < cfg.steps {
        if let Err(e) = integ.step(&mut state) {
            log.record(&[("event", "failure".into()), ("step", state.step.to_string()), ("error", format!("{e:?}"))])?;
            return Err(e);
        }
        let d = integ.last;
        max_eos = max_eos.max(d.eos_residual);
        let s = state.step;
        if s > sc.burn_in && (s - sc.burn_in).is_multiple_of(sc.sample_every) {
            let batch = (((s - sc.burn_in - 1) * sc.batches as u64) / sampled_span) as usize;
            samplers.add(cfg, &state, batch.min(sc.batches - 1))?;
        }
        if (out.log_every > 0 && s.is_multiple_of(out.log_every)) || s == cfg.steps {
            let (m1, m2, px, py) = totals(&state, dv);
            log.record(&[
                ("step", s.to_string()),
                ("t", format!("{:e}", state.t)),
                ("eos_residual", format!("{:e}", d.eos_residual)),
                ("mass1", format!("{m1:e}")),
                ("mass2", format!("{m2:e}")),
                ("momentum_x", format!("{px:e}")),
                ("momentum_y", format!("{py:e}")),
                ("poisson_iterations", d.poisson_iterations.to_string()),
                ("poisson_residual", format!("{:e}", d.poisson_residual)),
                ("excursions", d.excursions.to_string()),
                ("drift_corrected", d.drift_corrected.to_string()),
            ])?;
        }
        if out.snapshot_every > 0 && s.is_multiple_of(out.snapshot_every) {
            let c = concentration(&state)?;
            io::write_snapshot(&out.dir.join(format!("snapshots/c_{s:09}.csv")), &c, &cfg.model.grid, s, state.t)?;
        }
        if out.checkpoint_every > 0 && s.is_multiple_of(out.checkpoint_every) {
            io::write_checkpoint(&out.dir.join("checkpoint.bin"), &state, cfg.model.noise.seed)?;
        }
    }

    let t1 = totals(&state, dv);
    let mut summary = RunSummary {
        final_state: state.clone(),
        steps_run: state.step - start,
        samples: samplers.count,
        spectrum: None,
        profile: None,
        max_eos_residual: max_eos,
        mass_drift: [rel(t1.0, t0.0), rel(t1.1, t0.1)],
        total_excursions: integ.total_excursions,
        wall_seconds: clock.elapsed().as_secs_f64(),
    };
    let note = |log: &mut io::RunLog, what: &str, e: &Error| {
        log.record(&[("event", "skipped_output".into()), ("output", what.into()), ("reason", format!("{e:?}"))])
    };
    if let Some(s) = &samplers.spectrum {
        match s.estimate(MeanRemoval::Spatial) {
            Ok(est) => {
                io::write_spectrum_csv(&out.dir.join("spectrum.csv"), &est)?;
                summary.spectrum = Some(est);
            }
            Err(e) => note(&mut log, "spectrum.csv", &e)?,
        }
    }
    if let Some(p) = &samplers.profile {
        match p.estimate(&cfg.model.grid) {
            Ok(prof) => {
                io::write_profile_csv(&out.dir.join("profile.csv"), &prof)?;
                summary.profile = Some(prof);
            }
            Err(e) => note(&mut log, "profile.csv", &e)?,
        }
    }
    if !samplers.interface.is_empty() {
        io::write_table_csv(&out.dir.join("interface.csv"), &["step", "t", "k", "S_c", "S_h"], &samplers.interface)?;
    }
    for (name, d) in [("dynamic_c", &samplers.dyn_c), ("dynamic_v", &samplers.dyn_v)] {
        let Some(d) = d else { continue };
        let spectra: Result<Vec<Vec<f64>>> = (0..d.k().len()).map(|m| d.spectrum(m)).collect();
        match spectra {
            Ok(sp) => {
                io::write_dynamic_csv(&out.dir.join(format!("{name}.csv")), d.k(), &d.omegas(), &sp)?;
                let mut rows = Vec::new();
                for m in 0..d.k().len() {
                    if let Ok((fit, zeta)) = d.fit(m, 4.0) {
                        rows.push(vec![d.k()[m], d.k_eff()[m], fit.gamma, zeta, fit.residual]);
                    }
                }
                io::write_table_csv(
                    &out.dir.join(format!("{name}_fits.csv")),
                    &["k", "k_eff", "gamma", "zeta", "residual"],
                    &rows,
                )?;
            }
            Err(e) => note(&mut log, name, &e)?,
        }
    }
    log.record(&[
        ("event", "finish".into()),
        ("steps_run", summary.steps_run.to_string()),
        ("samples", summary.samples.to_string()),
        ("max_eos_residual", format!("{:e}", summary.max_eos_residual)),
        ("mass1_drift", format!("{:e}", summary.mass_drift[0])),
        ("mass2_drift", format!("{:e}", summary.mass_drift[1])),
        ("excursions", summary.total_excursions.to_string()),
        ("wall_seconds", format!("{:.3}", summary.wall_seconds)),
    ])?;
    Ok(summary)
}

/// Resumes from a checkpoint written by a run with the same configuration.
pub fn resume(cfg: &RunConfig, checkpoint: &Path) -> Result<RunSummary> {
    let (state, seed) = io::read_checkpoint(checkpoint)?;
    if seed != cfg.model.noise.seed {
        return Err(Error::Config(format!(
            "checkpoint seed {seed} differs from 'noise.seed' = {}",
            cfg.model.noise.seed
        )));
    }
    state.check(&cfg.model.grid)?;
    run_from(cfg, state)
}

/// One row of a convergence study.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub scheme: SchemeKind,
    /// Time steps from coarse to fine.
    pub dts: Vec<f64>,
    /// Differences between successive refinements for `ρ₁` and the
    /// projected velocity.
    pub diff_rho1: Vec<f64>,
    pub diff_v: Vec<f64>,
    /// Richardson orders `log₂(e_i/e_{i+1})` for `ρ₁` and `v`.
    pub order_rho1: Vec<f64>,
    pub order_v: Vec<f64>,
}

impl ConvergenceRow {
    /// Finest-level observed order, the smaller of the two fields.
    pub fn order(&self) -> f64 {
        let a = self.order_rho1.last().copied().unwrap_or(f64::NAN);
        let b = self.order_v.last().copied().unwrap_or(f64::NAN);
        a.min(b)
    }

    /// Largest deviation of the finest-level orders from the expected one.
    pub fn error_from(&self, expected: f64) -> f64 {
        let a = self.order_rho1.last().copied().unwrap_or(f64::NAN);
        let b = self.order_v.last().copied().unwrap_or(f64::NAN);
        (a - expected).abs().max((b - expected).abs())
    }
}

/// Tolerance on the measured order of each scheme.
pub fn order_tolerance(kind: SchemeKind) -> f64 {
    match kind {
        SchemeKind::EulerMaruyama => 0.2,
        SchemeKind::Trapezoidal | SchemeKind::Midpoint => 0.25,
        SchemeKind::Rk3 => 0.3,
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Deterministic Richardson self-convergence: integrates to
/// `T = cfg.steps·cfg.dt` with `dt/2ⁱ`, `i < levels`, for each scheme.
/// Noise is switched off and drift correction disabled. Velocities are
/// compared after projection: the gradient part of the stored momentum is
/// a gauge that the next projection replaces.
pub fn convergence_study(cfg: &RunConfig, kinds: &[SchemeKind], levels: usize) -> Result<Vec<ConvergenceRow>> {
    if levels < 3 {
        return Err(Error::Usage("convergence study needs at least 3 levels".into()));
    }
    let model = FluidModel { noise: NoiseConfig::off(), ..cfg.model.clone() };
    let x0 = initial_state(cfg)?;
    let mut rows = Vec::new();
    for &kind in kinds {
        let mut finals = Vec::new();
        let mut vels = Vec::new();
        let mut dts = Vec::new();
        for l in 0..levels {
            let n = cfg.steps << l;
            let dt = cfg.dt / (1u64 << l) as f64;
            let mut integ = Integrator::new_unchecked(model.clone(), StepScheme::new(kind).with_drift_correction(0), dt)?;
            integ.allow_unstable = cfg.allow_unstable;
            integ.excursion_limit = cfg.excursion_limit;
            let mut s = x0.clone();
            integ.run(&mut s, n)?;
            let v = model.velocity(&s)?;
            vels.push(v.x.iter().chain(&v.y).copied().collect::<Vec<f64>>());
            finals.push(s);
            dts.push(dt);
        }
        let diff_rho1: Vec<f64> = finals.windows(2).map(|w| l2(&w[0].rho1.data, &w[1].rho1.data)).collect();
        let diff_v: Vec<f64> = vels.windows(2).map(|w| l2(&w[0], &w[1])).collect();
        let ord = |d: &[f64]| d.windows(2).map(|w| (w[0] / w[1]).log2()).collect::<Vec<f64>>();
        rows.push(ConvergenceRow {
            scheme: kind,
            dts,
            order_rho1: ord(&diff_rho1),
            order_v: ord(&diff_v),
            diff_rho1,
            diff_v,
        });
    }
    Ok(rows)
}
