//! Flat `section.key = value` run configuration.
//!
//! Lines starting with `#` are comments. Every key present must be consumed
//! by the parser; unknown keys are reported by name.

use crate::eos::{ChemicalPotential, DiffusionModel, EosParams, TransportModel, ViscosityModel};
use crate::error::{Error, Result};
use crate::fields::{AxisBc, Grid2D, Slip, Wall};
use crate::integrators::{FluidModel, SchemeKind, StepScheme, DEFAULT_EXCURSION_LIMIT};
use crate::projection::PoissonSettings;
use crate::stochastic::NoiseConfig;
use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Parsed key/value pairs with usage tracking.
#[derive(Debug, Default)]
pub struct ConfigMap {
    values: BTreeMap<String, (usize, String)>,
    used: RefCell<BTreeSet<String>>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if values.insert(k.to_string(), (n + 1, v.to_string())).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", n + 1)));
            }
        }
        Ok(ConfigMap { values, used: RefCell::new(BTreeSet::new()) })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.values.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    /// Errors on the first key that was never read.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.values.iter().find(|(k, _)| !used.contains(*k)) {
            Some((k, (line, _))) => Err(Error::Config(format!("line {line}: unknown key '{k}'"))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    Equilibrium,
    GiantFluctuations,
    Mixing,
    Convergence,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Equilibrium => "equilibrium",
            ScenarioKind::GiantFluctuations => "giant_fluctuations",
            ScenarioKind::Mixing => "mixing",
            ScenarioKind::Convergence => "convergence",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "equilibrium" => Ok(ScenarioKind::Equilibrium),
            "giant_fluctuations" => Ok(ScenarioKind::GiantFluctuations),
            "mixing" => Ok(ScenarioKind::Mixing),
            "convergence" => Ok(ScenarioKind::Convergence),
            _ => Err(Error::Config(format!("key 'scenario.name': unknown scenario '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Uniform or mean concentration.
    pub c0: f64,
    /// Perturbation amplitude of the convergence initial condition.
    pub amplitude: f64,
    /// Band `[lo, hi)` of `y/L_y` filled with species one (mixing).
    pub band: (f64, f64),
    pub burn_in: u64,
    pub sample_every: u64,
    pub batches: usize,
    /// Samples per temporal periodogram; 0 disables dynamic spectra.
    pub dynamic_batch_len: usize,
    /// Largest FFT index `m_x` of the modes tracked in time.
    pub dynamic_modes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// 0 disables.
    pub snapshot_every: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: FluidModel,
    pub scheme: StepScheme,
    pub dt: f64,
    pub steps: u64,
    pub allow_unstable: bool,
    pub excursion_limit: f64,
    pub scenario: ScenarioConfig,
    pub output: OutputConfig,
}

fn parse_wall(key: &str, v: &str) -> Result<Wall> {
    let slip = |s: &str| match s.trim() {
        "no_slip" => Ok(Slip::NoSlip),
        "free_slip" => Ok(Slip::FreeSlip),
        o => Err(Error::Config(format!("key '{key}': unknown slip condition '{o}'"))),
    };
    if let Some(inner) = v.strip_prefix("reservoir(").and_then(|s| s.strip_suffix(')')) {
        let mut it = inner.split(',');
        let c: f64 = it
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("key '{key}': bad reservoir concentration in '{v}'")))?;
        let s = it.next().map(slip).transpose()?.unwrap_or(Slip::NoSlip);
        return Ok(Wall::reservoir(c).with_slip(s));
    }
    Ok(Wall { concentration: None, slip: slip(v)? })
}

fn render_wall(w: &Wall) -> String {
    let s = match w.slip {
        Slip::NoSlip => "no_slip",
        Slip::FreeSlip => "free_slip",
    };
    match w.concentration {
        Some(c) => format!("reservoir({c}, {s})"),
        None => s.to_string(),
    }
}

fn parse_axis(m: &ConfigMap, axis: &str) -> Result<AxisBc> {
    let lo = m.raw(&format!("bc.{axis}_lo"));
    let hi = m.raw(&format!("bc.{axis}_hi"));
    match (lo, hi) {
        (None, None) => Ok(AxisBc::Periodic),
        (Some("periodic"), Some("periodic")) => Ok(AxisBc::Periodic),
        (Some(l), Some(h)) => Ok(AxisBc::Walls {
            lo: parse_wall(&format!("bc.{axis}_lo"), l)?,
            hi: parse_wall(&format!("bc.{axis}_hi"), h)?,
        }),
        _ => Err(Error::Config(format!("keys 'bc.{axis}_lo' and 'bc.{axis}_hi' must be given together"))),
    }
}

fn bool_key(m: &ConfigMap, key: &str, default: bool) -> Result<bool> {
    match m.raw(key) {
        None => Ok(default),
        Some("true" | "1" | "yes") => Ok(true),
        Some("false" | "0" | "no") => Ok(false),
        Some(v) => Err(Error::Config(format!("key '{key}': expected a boolean, got '{v}'"))),
    }
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let m = ConfigMap::parse(text)?;
        let cfg = Self::from_map(&m)?;
        m.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    fn from_map(m: &ConfigMap) -> Result<Self> {
        let nx: usize = m.require("grid.nx")?;
        let ny: usize = m.require("grid.ny")?;
        let dx: f64 = m.require("grid.dx")?;
        let dy: f64 = m.get_or("grid.dy", dx)?;
        let grid = Grid2D::new(nx, ny, dx, dy)?
            .with_thickness(m.get_or("grid.thickness", 1.0)?)?
            .with_bc(parse_axis(m, "x")?, parse_axis(m, "y")?);

        let mut eos = EosParams::new(m.require("eos.rho1")?, m.require("eos.rho2")?)?;
        eos.kbt = m.get_or("eos.kbt", eos.kbt)?;
        eos.m1 = m.get_or("eos.m1", eos.m1)?;
        eos.m2 = m.get_or("eos.m2", eos.m2)?;
        eos.eos_tol = m.get_or("eos.tol", eos.eos_tol)?;
        eos.chem = match m.raw("eos.chem").unwrap_or("hard_disk") {
            "hard_disk" => ChemicalPotential::HardDisk,
            "constant" => ChemicalPotential::Constant(m.require("eos.inv_mu_c_kbt")?),
            o => return Err(Error::Config(format!("key 'eos.chem': unknown model '{o}'"))),
        };

        let viscosity = match m.raw("transport.viscosity").unwrap_or("constant") {
            "constant" => ViscosityModel::Constant { eta: m.require("transport.eta")? },
            "quadratic" => ViscosityModel::Quadratic { rho0_nu0: m.require("transport.rho0_nu0")? },
            "linear_kinematic" => ViscosityModel::LinearKinematic {
                nu1: m.require("transport.nu1")?,
                mass_ratio: m.get_or("transport.mass_ratio", 1.0)?,
            },
            o => return Err(Error::Config(format!("key 'transport.viscosity': unknown model '{o}'"))),
        };
        let diffusion = match m.raw("transport.diffusion").unwrap_or("constant") {
            "constant" => DiffusionModel::Constant { chi: m.require("transport.chi")? },
            "stokes_einstein" => DiffusionModel::StokesEinstein { chi0: m.require("transport.chi0")? },
            "quadratic_fit" => DiffusionModel::QuadraticFit { chi0: m.require("transport.chi0")? },
            "mass_ratio_scaled" => DiffusionModel::MassRatioScaled {
                chi1: m.require("transport.chi1")?,
                mass_ratio: m.get_or("transport.mass_ratio", 1.0)?,
            },
            o => return Err(Error::Config(format!("key 'transport.diffusion': unknown model '{o}'"))),
        };

        let noise = NoiseConfig {
            seed: m.get_or("noise.seed", 0)?,
            mass_noise: bool_key(m, "noise.mass", true)?,
            momentum_noise: bool_key(m, "noise.momentum", true)?,
            filter_width: m.get_or("noise.filter", 0)?,
            variance_scale: m.get_or("noise.variance_scale", 1.0)?,
        };
        let d = PoissonSettings::default();
        let poisson = PoissonSettings {
            rel_tol: m.get_or("poisson.rel_tol", d.rel_tol)?,
            abs_tol: m.get_or("poisson.abs_tol", d.abs_tol)?,
            max_iters: m.get_or("poisson.max_iters", d.max_iters)?,
            use_cg: bool_key(m, "poisson.use_cg", d.use_cg)?,
            ..d
        };
        let model = FluidModel {
            grid,
            eos,
            transport: TransportModel { viscosity, diffusion },
            gravity: [m.get_or("gravity.x", 0.0)?, m.get_or("gravity.y", 0.0)?],
            noise,
            poisson,
        };

        let kind = SchemeKind::parse(m.raw("integrator.scheme").unwrap_or("midpoint"))?;
        let mut scheme = StepScheme::new(kind);
        if let Some(e) = m.get("integrator.drift_every")? {
            scheme.drift_correction_every = e;
        }
        let steps: u64 = m.require("integrator.steps")?;
        let scenario = ScenarioConfig {
            kind: ScenarioKind::parse(m.raw("scenario.name").unwrap_or("equilibrium"))?,
            c0: m.get_or("scenario.c0", 0.5)?,
            amplitude: m.get_or("scenario.amplitude", 0.1)?,
            band: (m.get_or("scenario.band_lo", 1.0 / 3.0)?, m.get_or("scenario.band_hi", 2.0 / 3.0)?),
            burn_in: m.get_or("scenario.burn_in", 0)?,
            sample_every: m.get_or("scenario.sample_every", 10)?,
            batches: m.get_or("scenario.batches", 8)?,
            dynamic_batch_len: m.get_or("scenario.dynamic_batch_len", 0)?,
            dynamic_modes: m.get_or("scenario.dynamic_modes", 3)?,
        };
        let output = OutputConfig {
            dir: PathBuf::from(m.raw("output.dir").unwrap_or("output")),
            snapshot_every: m.get_or("output.snapshot_every", 0)?,
            checkpoint_every: m.get_or("output.checkpoint_every", 0)?,
            log_every: m.get_or("output.log_every", 100)?,
        };
        Ok(RunConfig {
            model,
            scheme,
            dt: m.require("integrator.dt")?,
            steps,
            allow_unstable: bool_key(m, "integrator.allow_unstable", false)?,
            excursion_limit: m.get_or("integrator.excursion_limit", DEFAULT_EXCURSION_LIMIT)?,
            scenario,
            output,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.scheme.validate()?;
        if !(self.dt > 0.0) {
            return Err(Error::Config("key 'integrator.dt': must be positive".into()));
        }
        let s = &self.scenario;
        if !(0.0..=1.0).contains(&s.c0) {
            return Err(Error::Config("key 'scenario.c0': must lie in [0, 1]".into()));
        }
        if !(0.0 <= s.band.0 && s.band.0 < s.band.1 && s.band.1 <= 1.0) {
            return Err(Error::Config("keys 'scenario.band_lo/hi': need 0 <= lo < hi <= 1".into()));
        }
        if s.sample_every == 0 {
            return Err(Error::Config("key 'scenario.sample_every': must be positive".into()));
        }
        if s.batches == 0 {
            return Err(Error::Config("key 'scenario.batches': must be positive".into()));
        }
        if s.burn_in > self.steps {
            return Err(Error::Config("key 'scenario.burn_in': exceeds integrator.steps".into()));
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal configuration.
    pub fn render(&self) -> String {
        let mut o = String::new();
        let g = &self.model.grid;
        let e = &self.model.eos;
        let _ = writeln!(o, "grid.nx = {}\ngrid.ny = {}\ngrid.dx = {:?}\ngrid.dy = {:?}\ngrid.thickness = {:?}", g.nx, g.ny, g.dx, g.dy, g.thickness);
        for (name, bc) in [("x", &g.bc_x), ("y", &g.bc_y)] {
            if let AxisBc::Walls { lo, hi } = bc {
                let _ = writeln!(o, "bc.{name}_lo = {}\nbc.{name}_hi = {}", render_wall(lo), render_wall(hi));
            }
        }
        let _ = writeln!(o, "eos.rho1 = {:?}\neos.rho2 = {:?}\neos.kbt = {:?}\neos.m1 = {:?}\neos.m2 = {:?}\neos.tol = {:?}", e.rho1_bar, e.rho2_bar, e.kbt, e.m1, e.m2, e.eos_tol);
        match e.chem {
            ChemicalPotential::HardDisk => {
                let _ = writeln!(o, "eos.chem = hard_disk");
            }
            ChemicalPotential::Constant(v) => {
                let _ = writeln!(o, "eos.chem = constant\neos.inv_mu_c_kbt = {v:?}");
            }
        }
        let t = &self.model.transport;
        let _ = match t.viscosity {
            ViscosityModel::Constant { eta } => writeln!(o, "transport.viscosity = constant\ntransport.eta = {eta:?}"),
            ViscosityModel::Quadratic { rho0_nu0 } => {
                writeln!(o, "transport.viscosity = quadratic\ntransport.rho0_nu0 = {rho0_nu0:?}")
            }
            ViscosityModel::LinearKinematic { nu1, mass_ratio } => writeln!(
                o,
                "transport.viscosity = linear_kinematic\ntransport.nu1 = {nu1:?}\ntransport.mass_ratio = {mass_ratio:?}"
            ),
        };
        let _ = match t.diffusion {
            DiffusionModel::Constant { chi } => writeln!(o, "transport.diffusion = constant\ntransport.chi = {chi:?}"),
            DiffusionModel::StokesEinstein { chi0 } => {
                writeln!(o, "transport.diffusion = stokes_einstein\ntransport.chi0 = {chi0:?}")
            }
            DiffusionModel::QuadraticFit { chi0 } => {
                writeln!(o, "transport.diffusion = quadratic_fit\ntransport.chi0 = {chi0:?}")
            }
            DiffusionModel::MassRatioScaled { chi1, mass_ratio } => {
                // The viscosity line may already carry the mass ratio.
                let shares = matches!(t.viscosity, ViscosityModel::LinearKinematic { .. });
                if shares {
                    writeln!(o, "transport.diffusion = mass_ratio_scaled\ntransport.chi1 = {chi1:?}")
                } else {
                    writeln!(
                        o,
                        "transport.diffusion = mass_ratio_scaled\ntransport.chi1 = {chi1:?}\ntransport.mass_ratio = {mass_ratio:?}"
                    )
                }
            }
        };
        let n = &self.model.noise;
        let p = &self.model.poisson;
        let s = &self.scenario;
        let _ = writeln!(o, "gravity.x = {:?}\ngravity.y = {:?}", self.model.gravity[0], self.model.gravity[1]);
        let _ = writeln!(
            o,
            "noise.seed = {}\nnoise.mass = {}\nnoise.momentum = {}\nnoise.filter = {}\nnoise.variance_scale = {:?}",
            n.seed, n.mass_noise, n.momentum_noise, n.filter_width, n.variance_scale
        );
        let _ = writeln!(
            o,
            "poisson.rel_tol = {:?}\npoisson.abs_tol = {:?}\npoisson.max_iters = {}\npoisson.use_cg = {}",
            p.rel_tol, p.abs_tol, p.max_iters, p.use_cg
        );
        let _ = writeln!(
            o,
            "integrator.scheme = {}\nintegrator.dt = {:?}\nintegrator.steps = {}\nintegrator.drift_every = {}\nintegrator.allow_unstable = {}\nintegrator.excursion_limit = {:?}",
            self.scheme.kind.name(), self.dt, self.steps, self.scheme.drift_correction_every, self.allow_unstable, self.excursion_limit
        );
        let _ = writeln!(
            o,
            "scenario.name = {}\nscenario.c0 = {:?}\nscenario.amplitude = {:?}\nscenario.band_lo = {:?}\nscenario.band_hi = {:?}\nscenario.burn_in = {}\nscenario.sample_every = {}\nscenario.batches = {}\nscenario.dynamic_batch_len = {}\nscenario.dynamic_modes = {}",
            s.kind.name(), s.c0, s.amplitude, s.band.0, s.band.1, s.burn_in, s.sample_every, s.batches, s.dynamic_batch_len, s.dynamic_modes
        );
        let out = &self.output;
        let _ = writeln!(
            o,
            "output.dir = {}\noutput.snapshot_every = {}\noutput.checkpoint_every = {}\noutput.log_every = {}",
            out.dir.display(), out.snapshot_every, out.checkpoint_every, out.log_every
        );
        o
    }
}
