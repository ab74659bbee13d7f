//! Time integrators built as linear combinations of projected Euler stages.
//!
//! A stage takes a state `x` whose momentum is the unprojected `m̃`, applies
//! the projection to obtain `P(x)` and returns it together with the Euler
//! update `E(x) = P(x) + δt·rate(P(x))`. Every scheme is written once, over
//! the [`EulerStage`] trait, and the fluid solver is one implementation.

use crate::eos::{max_eos_residual, EosParams, TransportModel};
use crate::error::{Error, Result};
use crate::fields::{
    interp_cell_to_faces, Axis, CellField, FaceBoundary, FaceVecField, Grid2D, SimState,
};
use crate::operators::{
    diffusive_flux, divergence_cell, interp_eta_to_nodes, momentum_advection_div, set_boundary_normal_velocity,
    viscous_divergence, zero_boundary_faces,
};
use crate::par;
use crate::projection::{compute_s, project_rs, PoissonSettings, PoissonStats};
use crate::stochastic::{draw_noise, stochastic_mass_flux, stochastic_momentum_flux, NoiseConfig, NoiseDraw};

/// Weights of the second variate in the three RK3 stages.
pub const RK3_NOISE_WEIGHTS: [f64; 3] = [
    (2.0 * std::f64::consts::SQRT_2 + 1.732_050_807_568_877_2) / 5.0,
    (-4.0 * std::f64::consts::SQRT_2 + 3.0 * 1.732_050_807_568_877_2) / 5.0,
    (std::f64::consts::SQRT_2 - 2.0 * 1.732_050_807_568_877_2) / 10.0,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeKind {
    EulerMaruyama,
    Trapezoidal,
    Midpoint,
    Rk3,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] =
        [SchemeKind::EulerMaruyama, SchemeKind::Trapezoidal, SchemeKind::Midpoint, SchemeKind::Rk3];

    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::EulerMaruyama => "euler_maruyama",
            SchemeKind::Trapezoidal => "trapezoidal",
            SchemeKind::Midpoint => "midpoint",
            SchemeKind::Rk3 => "rk3",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euler_maruyama" | "euler" => Ok(SchemeKind::EulerMaruyama),
            "trapezoidal" => Ok(SchemeKind::Trapezoidal),
            "midpoint" => Ok(SchemeKind::Midpoint),
            "rk3" => Ok(SchemeKind::Rk3),
            _ => Err(Error::Config(format!("unknown scheme '{s}'"))),
        }
    }

    /// Deterministic order of accuracy.
    pub fn order(&self) -> u32 {
        match self {
            SchemeKind::EulerMaruyama => 1,
            SchemeKind::Trapezoidal | SchemeKind::Midpoint => 2,
            SchemeKind::Rk3 => 3,
        }
    }

    /// Whether the scheme drifts off the EOS without correction.
    pub fn requires_drift_correction(&self) -> bool {
        matches!(self, SchemeKind::Trapezoidal | SchemeKind::Rk3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepScheme {
    pub kind: SchemeKind,
    /// Apply the EOS drift correction every this many steps (0 = off).
    pub drift_correction_every: u64,
}

impl StepScheme {
    /// The scheme with its default correction cadence.
    pub fn new(kind: SchemeKind) -> Self {
        StepScheme { kind, drift_correction_every: u64::from(kind.requires_drift_correction()) }
    }

    pub fn with_drift_correction(mut self, every: u64) -> Self {
        self.drift_correction_every = every;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.requires_drift_correction() && self.drift_correction_every == 0 {
            return Err(Error::Config(format!(
                "{} requires drift correction (integrator.drift_every > 0)",
                self.kind.name()
            )));
        }
        Ok(())
    }
}

/// Coefficients `(a, b)` of the stage noise `a·W₁ + b·W₂`.
pub type NoiseMix = (f64, f64);

/// One projected Euler stage of a system.
pub trait EulerStage {
    type State: Clone;
    /// Returns `(P(x), E_δt(x))` using the stage noise `mix`.
    fn euler(&mut self, x: &Self::State, dt: f64, mix: NoiseMix) -> Result<(Self::State, Self::State)>;
    /// `Σ wᵢ xᵢ`.
    fn combine(terms: &[(f64, &Self::State)]) -> Self::State;
}

/// Advances `x` by one step of `kind`.
pub fn advance<O: EulerStage>(op: &mut O, kind: SchemeKind, x: &O::State, dt: f64) -> Result<O::State> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match kind {
        SchemeKind::EulerMaruyama => Ok(op.euler(x, dt, (1.0, 0.0))?.1),
        SchemeKind::Trapezoidal => {
            let (p0, x1) = op.euler(x, dt, (1.0, 0.0))?;
            let (_, e1) = op.euler(&x1, dt, (1.0, 0.0))?;
            Ok(O::combine(&[(0.5, &p0), (0.5, &e1)]))
        }
        SchemeKind::Midpoint => {
            let (p0, xh) = op.euler(x, 0.5 * dt, (1.0, 0.0))?;
            let (ph, eh) = op.euler(&xh, dt, (s, s))?;
            Ok(O::combine(&[(1.0, &p0), (1.0, &eh), (-1.0, &ph)]))
        }
        SchemeKind::Rk3 => {
            let w = RK3_NOISE_WEIGHTS;
            let (p0, x1) = op.euler(x, dt, (1.0, w[0]))?;
            let (_, e1) = op.euler(&x1, dt, (1.0, w[1]))?;
            let x2 = O::combine(&[(0.75, &p0), (0.25, &e1)]);
            let (_, e2) = op.euler(&x2, dt, (1.0, w[2]))?;
            Ok(O::combine(&[(1.0 / 3.0, &p0), (2.0 / 3.0, &e2)]))
        }
    }
}

/// Globally conservative L₂ projection of `(ρ₁, ρ₂)` onto the EOS.
pub fn eos_drift_correction(rho1: &CellField, rho2: &CellField, p: &EosParams) -> (CellField, CellField) {
    let (r1, r2) = (p.rho1_bar, p.rho2_bar);
    let den = r1 * r1 + r2 * r2;
    let (a1, a2, b) = (r1 * r1 / den, r2 * r2 / den, r1 * r2 / den);
    let n = rho1.data.len() as f64;
    let fix = |own: &CellField, other: &CellField, a: f64| {
        let raw = own.zip_map(other, |x, y| a * x - b * y);
        let shift = own.sum() / n - raw.sum() / n;
        raw.map(|v| v + shift)
    };
    (fix(rho1, rho2, a1), fix(rho2, rho1, a2))
}

/// Applies [`eos_drift_correction`] to a state in place.
pub fn correct_state(state: &mut SimState, p: &EosParams) {
    let (r1, r2) = eos_drift_correction(&state.rho1, &state.rho2(), p);
    state.rho = r1.zip_map(&r2, |a, b| a + b);
    state.rho1 = r1;
}

/// Physical and numerical parameters of the fluid system.
#[derive(Clone, Debug, PartialEq)]
pub struct FluidModel {
    pub grid: Grid2D,
    pub eos: EosParams,
    pub transport: TransportModel,
    pub gravity: [f64; 2],
    pub noise: NoiseConfig,
    pub poisson: PoissonSettings,
}

impl FluidModel {
    pub fn validate(&self) -> Result<()> {
        self.eos.validate()?;
        self.transport.validate()?;
        self.noise.validate(&self.grid)?;
        self.poisson.validate()?;
        for side in [crate::fields::Side::Lo, crate::fields::Side::Hi] {
            for axis in [Axis::X, Axis::Y] {
                if let Some(c) = self.grid.wall(axis, side).and_then(|w| w.concentration) {
                    if !(0.0..=1.0).contains(&c) {
                        return Err(Error::Config(format!("reservoir concentration {c} outside [0, 1]")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest kinematic viscosity over the cells of `state`.
    pub fn max_kinematic_viscosity(&self, state: &SimState) -> Result<f64> {
        let c = crate::fields::concentration(state)?;
        Ok(c.data
            .iter()
            .zip(&state.rho.data)
            .fold(0.0, |m, (&c, &r)| m.max(self.transport.eta(c, r) / r)))
    }

    /// Viscous stability number `α_ν = ν_max δt / Δx²`.
    pub fn alpha_nu(&self, state: &SimState, dt: f64) -> Result<f64> {
        let h = self.grid.dx.min(self.grid.dy);
        Ok(self.max_kinematic_viscosity(state)? * dt / (h * h))
    }

    /// Face values of a cell quantity with reservoir boundary values from `f(c_b)`.
    fn faces(&self, a: &CellField, f: impl Fn(f64) -> f64) -> Result<FaceVecField> {
        interp_cell_to_faces(a, &self.grid, &FaceBoundary::from_reservoirs(&self.grid, f))
    }

    fn density_at(&self, c: f64) -> f64 {
        self.eos.density(c).unwrap_or(f64::NAN)
    }

    /// Deterministic velocity: the state's momentum projected with the
    /// noise-free constraint.
    pub fn velocity(&self, state: &SimState) -> Result<FaceVecField> {
        let mut stage = FluidStage::new(self, None, None);
        let (p, _) = stage.euler(state, 0.0, (0.0, 0.0))?;
        let rho_f = self.faces(&p.rho, |c| self.density_at(c))?;
        Ok(p.m.zip_map(&rho_f, |m, r| m / r))
    }
}

/// Per-step solver and invariant diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    pub poisson_iterations: usize,
    pub poisson_residual: f64,
    pub eos_residual: f64,
    /// Cells with `c` outside `[0, 1]` after the step.
    pub excursions: usize,
    pub max_excursion: f64,
    pub drift_corrected: bool,
}

/// The fluid system as an [`EulerStage`] for one step's noise.
pub struct FluidStage<'a> {
    model: &'a FluidModel,
    w1: Option<NoiseDraw>,
    w2: Option<NoiseDraw>,
    pub poisson: PoissonStats,
}

impl<'a> FluidStage<'a> {
    pub fn new(model: &'a FluidModel, w1: Option<NoiseDraw>, w2: Option<NoiseDraw>) -> Self {
        FluidStage { model, w1, w2, poisson: PoissonStats::default() }
    }

    /// Draws both substreams of `step` when noise is enabled.
    pub fn for_step(model: &'a FluidModel, step: u64) -> Self {
        let cfg = &model.noise;
        if !cfg.enabled() {
            return Self::new(model, None, None);
        }
        let (w1, w2) = par::join(
            || draw_noise(cfg.seed, step, 0, &model.grid, cfg),
            || draw_noise(cfg.seed, step, 1, &model.grid, cfg),
        );
        Self::new(model, Some(w1), Some(w2))
    }

    fn mixed(&self, mix: NoiseMix) -> Option<NoiseDraw> {
        match (&self.w1, &self.w2) {
            (Some(a), Some(b)) if mix.1 != 0.0 => Some(a.combine(mix.0, b, mix.1)),
            (Some(a), _) if mix.0 == 1.0 => Some(a.clone()),
            (Some(a), _) => Some(a.combine(mix.0, a, 0.0)),
            _ => None,
        }
    }
}

impl EulerStage for FluidStage<'_> {
    type State = SimState;

    fn euler(&mut self, x: &SimState, dt: f64, mix: NoiseMix) -> Result<(SimState, SimState)> {
        let model = self.model;
        let grid = &model.grid;
        let eos = &model.eos;
        let tr = &model.transport;
        let c = crate::fields::concentration(x)?;
        let rho_b = |cb: f64| model.density_at(cb);

        let eta_c = c.zip_map(&x.rho, |c, r| tr.eta(c, r));
        let chi_c = c.zip_map(&x.rho, |c, r| tr.chi(c, r, eos));
        let rho_f = model.faces(&x.rho, rho_b)?;
        let rho1_f = model.faces(&x.rho1, |cb| cb * rho_b(cb))?;
        let chi_f = model.faces(&chi_c, |cb| tr.chi(cb, rho_b(cb), eos))?;

        let noise = if dt > 0.0 { self.mixed(mix) } else { None };
        let mut flux = diffusive_flux(&rho_f, &chi_f, &c, grid);
        if let Some(w) = &noise {
            if model.noise.mass_noise {
                let rmu = c.zip_map(&x.rho, |c, r| r * eos.inv_mu_c_kbt(c));
                let rmu_f = model.faces(&rmu, |cb| rho_b(cb) * eos.inv_mu_c_kbt(cb))?;
                flux.axpy(1.0, &stochastic_mass_flux(&chi_f, &rmu_f, dt, grid, &model.noise, w));
            }
        }
        let s = compute_s(&flux, grid, eos);

        // Boundary momentum from the constraint-determined normal velocity.
        let mut m_tilde = x.m.clone();
        let mut vb = FaceVecField::zeros(grid);
        set_boundary_normal_velocity(&mut vb, &flux, grid, eos);
        set_boundary_faces(&mut m_tilde, &vb.zip_map(&rho_f, |v, r| v * r), grid);

        let (m, st) = project_rs(&m_tilde, &rho_f, &s, grid, eos, &model.poisson)?;
        self.poisson.iterations = self.poisson.iterations.max(st.iterations);
        self.poisson.rel_residual = self.poisson.rel_residual.max(st.rel_residual);
        let proj = SimState { rho: x.rho.clone(), rho1: x.rho1.clone(), m, t: x.t, step: x.step };
        if dt == 0.0 {
            return Ok((proj.clone(), proj));
        }
        let v = proj.m.zip_map(&rho_f, |m, r| m / r);

        let (d_rho1, d_rho) = par::join(
            || {
                let mut d = divergence_cell(&rho1_f.zip_map(&v, |a, u| a * u), grid);
                d.data.iter_mut().for_each(|x| *x = -*x);
                d.axpy(1.0, &divergence_cell(&flux, grid));
                d
            },
            || {
                let mut d = divergence_cell(&rho_f.zip_map(&v, |a, u| a * u), grid);
                d.data.iter_mut().for_each(|x| *x = -*x);
                d
            },
        );

        let eta_b = FaceBoundary::from_reservoirs(grid, |cb| tr.eta(cb, rho_b(cb)));
        let eta_n = interp_eta_to_nodes(&eta_c, grid, &eta_b)?;
        let mut d_m = viscous_divergence(&eta_c, &eta_n, &v, grid);
        d_m.axpy(-1.0, &momentum_advection_div(&proj.m, &v, grid));
        if let Some(w) = &noise {
            if model.noise.momentum_noise {
                let sigma = stochastic_momentum_flux(&eta_c, &eta_n, dt, grid, eos.kbt, &model.noise, w);
                d_m.axpy(1.0, &sigma.divergence(grid));
            }
        }
        let [gx, gy] = model.gravity;
        if gx != 0.0 || gy != 0.0 {
            d_m.axpy(1.0, &rho_f.zip_map(&FaceVecField::constant(grid, gx, gy), |r, g| r * g));
        }
        zero_boundary_faces(&mut d_m, grid);

        let mut e = proj.clone();
        e.rho1.axpy(dt, &d_rho1);
        e.rho.axpy(dt, &d_rho);
        e.m.axpy(dt, &d_m);
        Ok((proj, e))
    }

    fn combine(terms: &[(f64, &SimState)]) -> SimState {
        let (w0, first) = terms[0];
        let mut out = first.clone();
        for v in out.rho.data.iter_mut().chain(&mut out.rho1.data).chain(&mut out.m.x).chain(&mut out.m.y) {
            *v *= w0;
        }
        for &(w, s) in &terms[1..] {
            out.rho.axpy(w, &s.rho);
            out.rho1.axpy(w, &s.rho1);
            out.m.axpy(w, &s.m);
        }
        out
    }
}

/// Copies the physical-boundary faces of `src` into `dst`.
fn set_boundary_faces(dst: &mut FaceVecField, src: &FaceVecField, grid: &Grid2D) {
    let nfx = grid.nfx();
    if !grid.is_periodic(Axis::X) {
        for j in 0..grid.ny {
            for i in [0, grid.nx] {
                dst.x[j * nfx + i] = src.x[j * nfx + i];
            }
        }
    }
    if !grid.is_periodic(Axis::Y) {
        let nx = grid.nx;
        let top = grid.ny * nx;
        dst.y[..nx].copy_from_slice(&src.y[..nx]);
        dst.y[top..].copy_from_slice(&src.y[top..]);
    }
}

/// Concentration excursion beyond this is a hard failure.
pub const DEFAULT_EXCURSION_LIMIT: f64 = 0.5;

/// Upper bound on `α_ν` for explicit viscous stability in 2D.
pub const ALPHA_NU_LIMIT: f64 = 0.25;

/// Drives a [`FluidModel`] with a scheme and fixed time step.
#[derive(Clone, Debug)]
pub struct Integrator {
    pub model: FluidModel,
    pub scheme: StepScheme,
    pub dt: f64,
    pub excursion_limit: f64,
    /// Skip the viscous stability check.
    pub allow_unstable: bool,
    pub last: StepDiagnostics,
    /// Total cells with concentration excursions over all steps.
    pub total_excursions: u64,
    checked: bool,
}

impl Integrator {
    pub fn new(model: FluidModel, scheme: StepScheme, dt: f64) -> Result<Self> {
        scheme.validate()?;
        Self::new_unchecked(model, scheme, dt)
    }

    /// As [`Integrator::new`] but accepts schemes without their required
    /// drift correction, for drift diagnostics.
    pub fn new_unchecked(model: FluidModel, scheme: StepScheme, dt: f64) -> Result<Self> {
        model.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time step {dt} must be positive")));
        }
        Ok(Integrator {
            model,
            scheme,
            dt,
            excursion_limit: DEFAULT_EXCURSION_LIMIT,
            allow_unstable: false,
            last: StepDiagnostics::default(),
            total_excursions: 0,
            checked: false,
        })
    }

    /// Checks that `state` satisfies the EOS to the configured tolerance.
    pub fn check_state(&self, state: &SimState) -> Result<()> {
        state.check(&self.model.grid)?;
        let r = max_eos_residual(&state.rho, &state.rho1, &self.model.eos);
        if r > self.model.eos.eos_tol.max(1e3 * self.model.poisson.rel_tol) {
            return Err(Error::Eos(format!("initial state violates the EOS by {r:e}")));
        }
        Ok(())
    }

    /// Advances `state` by one step.
    pub fn step(&mut self, state: &mut SimState) -> Result<()> {
        if !self.checked {
            self.check_state(state)?;
            let a = self.model.alpha_nu(state, self.dt)?;
            if a >= ALPHA_NU_LIMIT && !self.allow_unstable {
                return Err(Error::Stability(a));
            }
            self.checked = true;
        }
        let mut stage = FluidStage::for_step(&self.model, state.step);
        let mut next = advance(&mut stage, self.scheme.kind, state, self.dt)?;
        next.t = state.t + self.dt;
        next.step = state.step + 1;
        let every = self.scheme.drift_correction_every;
        let corrected = every > 0 && next.step % every == 0;
        if corrected {
            correct_state(&mut next, &self.model.eos);
        }
        self.finish(&next, stage.poisson, corrected)?;
        *state = next;
        Ok(())
    }

    fn finish(&mut self, s: &SimState, ps: PoissonStats, corrected: bool) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&s.rho.data) && finite(&s.rho1.data) && finite(&s.m.x) && finite(&s.m.y)) {
            return Err(Error::NonFinite(format!("state after step {}", s.step)));
        }
        let mut d = StepDiagnostics {
            poisson_iterations: ps.iterations,
            poisson_residual: ps.rel_residual,
            eos_residual: max_eos_residual(&s.rho, &s.rho1, &self.model.eos),
            drift_corrected: corrected,
            ..Default::default()
        };
        let nx = self.model.grid.nx;
        for (k, (&r1, &r)) in s.rho1.data.iter().zip(&s.rho.data).enumerate() {
            let c = r1 / r;
            let e = if c < 0.0 { -c } else if c > 1.0 { c - 1.0 } else { 0.0 };
            if e > 0.0 {
                d.excursions += 1;
                d.max_excursion = d.max_excursion.max(e);
                if e > self.excursion_limit {
                    return Err(Error::Excursion { i: k % nx, j: k / nx, excursion: e });
                }
            }
        }
        self.total_excursions += d.excursions as u64;
        self.last = d;
        Ok(())
    }

    /// Runs `n` steps.
    pub fn run(&mut self, state: &mut SimState, n: u64) -> Result<()> {
        for _ in 0..n {
            self.step(state)?;
        }
        Ok(())
    }
}

/// State with concentration `c`, EOS density and momentum `ρ_face v`.
pub fn state_from_concentration(
    model: &FluidModel,
    c: &CellField,
    velocity: Option<&FaceVecField>,
) -> Result<SimState> {
    let rho = crate::eos::density_from_concentration(c, &model.eos)?;
    let rho1 = c.zip_map(&rho, |c, r| c * r);
    let m = match velocity {
        Some(v) => {
            let rho_f = model.faces(&rho, |cb| model.density_at(cb))?;
            v.zip_map(&rho_f, |v, r| v * r)
        }
        None => FaceVecField::zeros(&model.grid),
    };
    Ok(SimState { rho, rho1, m, t: 0.0, step: 0 })
}
