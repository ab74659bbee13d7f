//! Linear equation of state, transport-coefficient models and the
//! chemical-potential factor entering the concentration noise.

use crate::error::{Error, Result};
use crate::fields::CellField;

/// Model for `μ_c⁻¹ k_BT`, the inverse concentration derivative of the
/// chemical potential times the thermal energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChemicalPotential {
    /// Ideal hard-disk mixture: `c(1−c)[c m₂ + (1−c) m₁]`.
    HardDisk,
    /// User-supplied constant `μ_c⁻¹ k_BT`.
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EosParams {
    pub rho1_bar: f64,
    pub rho2_bar: f64,
    pub kbt: f64,
    pub m1: f64,
    pub m2: f64,
    pub eos_tol: f64,
    pub chem: ChemicalPotential,
}

impl EosParams {
    pub fn new(rho1_bar: f64, rho2_bar: f64) -> Result<Self> {
        let p = EosParams {
            rho1_bar,
            rho2_bar,
            kbt: 1.0,
            m1: 1.0,
            m2: 1.0,
            eos_tol: 1e-12,
            chem: ChemicalPotential::HardDisk,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho1_bar > 0.0 && self.rho2_bar > 0.0) {
            return Err(Error::Config("pure-component densities must be positive".into()));
        }
        if !(self.kbt >= 0.0) {
            return Err(Error::Config("kBT must be nonnegative".into()));
        }
        if !(self.m1 > 0.0 && self.m2 > 0.0) {
            return Err(Error::Config("molecular masses must be positive".into()));
        }
        Ok(())
    }

    /// `1/ρ̄₁ − 1/ρ̄₂`, the coefficient linking `∇·v` to `∇·F`.
    pub fn contrast(&self) -> f64 {
        1.0 / self.rho1_bar - 1.0 / self.rho2_bar
    }

    /// `β/ρ = 1/ρ̄₂ − 1/ρ̄₁`, independent of concentration.
    pub fn beta_over_rho(&self) -> f64 {
        1.0 / self.rho2_bar - 1.0 / self.rho1_bar
    }

    pub fn density(&self, c: f64) -> Result<f64> {
        let d = c / self.rho1_bar + (1.0 - c) / self.rho2_bar;
        if !(d > 0.0) {
            return Err(Error::Eos(format!("EOS denominator {d} at c = {c}")));
        }
        Ok(1.0 / d)
    }

    /// Solutal expansion coefficient `β(c)`.
    pub fn beta(&self, c: f64) -> Result<f64> {
        let d = c * self.rho2_bar + (1.0 - c) * self.rho1_bar;
        if !(d > 0.0) {
            return Err(Error::Eos(format!("beta denominator {d} at c = {c}")));
        }
        Ok((self.rho1_bar - self.rho2_bar) / d)
    }

    /// `δ − 1` for one cell.
    #[inline]
    pub fn residual(&self, rho1: f64, rho2: f64) -> f64 {
        rho1 / self.rho1_bar + rho2 / self.rho2_bar - 1.0
    }

    /// `μ_c⁻¹ k_BT`; concentrations outside `[0, 1]` give zero.
    pub fn inv_mu_c_kbt(&self, c: f64) -> f64 {
        match self.chem {
            ChemicalPotential::HardDisk => {
                let v = c * (1.0 - c) * (c * self.m2 + (1.0 - c) * self.m1);
                v.max(0.0)
            }
            ChemicalPotential::Constant(v) => v,
        }
    }
}

pub fn density_from_concentration(c: &CellField, p: &EosParams) -> Result<CellField> {
    let data = c.data.iter().map(|&v| p.density(v)).collect::<Result<Vec<_>>>()?;
    Ok(CellField { nx: c.nx, ny: c.ny, data })
}

pub fn eos_residual(rho1: &CellField, rho2: &CellField, p: &EosParams) -> CellField {
    rho1.zip_map(rho2, |a, b| p.residual(a, b))
}

/// Maximum `|δ−1|` given total and species-1 densities.
pub fn max_eos_residual(rho: &CellField, rho1: &CellField, p: &EosParams) -> f64 {
    rho.data
        .iter()
        .zip(&rho1.data)
        .fold(0.0, |m, (&r, &r1)| m.max(p.residual(r1, r - r1).abs()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ViscosityModel {
    Constant { eta: f64 },
    /// `η = ρ₀ν₀ (1 + 0.66c + 12c²)`.
    Quadratic { rho0_nu0: f64 },
    /// `η = ρ(c)[c ν₁ + (1−c) ν₂]` with `ν₂ = ν₁/√R`.
    LinearKinematic { nu1: f64, mass_ratio: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DiffusionModel {
    Constant { chi: f64 },
    /// `χ = χ₀ η(0)/η(c)`, so that `χη` is constant.
    StokesEinstein { chi0: f64 },
    /// Quadratic fit `χ₀(1 − 2.2c + 1.2c²)` of the Stokes–Einstein form.
    QuadraticFit { chi0: f64 },
    /// `χ(R) = χ(1)·√((1+R)/(2R))`.
    MassRatioScaled { chi1: f64, mass_ratio: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransportModel {
    pub viscosity: ViscosityModel,
    pub diffusion: DiffusionModel,
}

/// `η₂ = η₁√R`.
pub fn eta_mass_ratio_scaling(eta1: f64, mass_ratio: f64) -> f64 {
    eta1 * mass_ratio.sqrt()
}

/// `√((1+R)/(2R))`.
pub fn chi_mass_ratio_factor(mass_ratio: f64) -> f64 {
    ((1.0 + mass_ratio) / (2.0 * mass_ratio)).sqrt()
}

impl TransportModel {
    pub fn constant(eta: f64, chi: f64) -> Self {
        TransportModel {
            viscosity: ViscosityModel::Constant { eta },
            diffusion: DiffusionModel::Constant { chi },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.viscosity {
            ViscosityModel::Constant { eta } => eta >= 0.0,
            ViscosityModel::Quadratic { rho0_nu0 } => rho0_nu0 > 0.0,
            ViscosityModel::LinearKinematic { nu1, mass_ratio } => nu1 > 0.0 && mass_ratio > 0.0,
        } && match self.diffusion {
            DiffusionModel::Constant { chi } => chi >= 0.0,
            DiffusionModel::StokesEinstein { chi0 } | DiffusionModel::QuadraticFit { chi0 } => chi0 > 0.0,
            DiffusionModel::MassRatioScaled { chi1, mass_ratio } => chi1 > 0.0 && mass_ratio > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("transport coefficients must be positive".into()))
        }
    }

    /// Shear viscosity at concentration `c` and density `rho`.
    pub fn eta(&self, c: f64, rho: f64) -> f64 {
        match self.viscosity {
            ViscosityModel::Constant { eta } => eta,
            ViscosityModel::Quadratic { rho0_nu0 } => rho0_nu0 * (1.0 + 0.66 * c + 12.0 * c * c),
            ViscosityModel::LinearKinematic { nu1, mass_ratio } => {
                let nu2 = nu1 / mass_ratio.sqrt();
                rho * (c * nu1 + (1.0 - c) * nu2)
            }
        }
    }

    /// Mass diffusion coefficient; `eos` supplies the pure-2 density used as
    /// the Stokes–Einstein reference.
    pub fn chi(&self, c: f64, rho: f64, eos: &EosParams) -> f64 {
        match self.diffusion {
            DiffusionModel::Constant { chi } => chi,
            DiffusionModel::StokesEinstein { chi0 } => {
                chi0 * self.eta(0.0, eos.rho2_bar) / self.eta(c, rho)
            }
            DiffusionModel::QuadraticFit { chi0 } => chi0 * (1.0 - 2.2 * c + 1.2 * c * c),
            DiffusionModel::MassRatioScaled { chi1, mass_ratio } => {
                chi1 * chi_mass_ratio_factor(mass_ratio)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn glycerol() -> EosParams {
        EosParams::new(1.29, 1.0).unwrap()
    }

    #[test]
    fn density_pure_and_mixture() {
        let p = glycerol();
        assert_eq!(p.density(0.0).unwrap(), 1.0);
        assert!((p.density(1.0).unwrap() - 1.29).abs() < 1e-15);
        let rho = p.density(0.195).unwrap();
        assert!((rho - 1.0459).abs() < 1e-4, "{rho}");
        assert!((rho - 1.05).abs() < 0.01);
    }

    #[test]
    fn density_rejects_bad_denominator() {
        let p = glycerol();
        assert!(matches!(p.density(10.0), Err(Error::Eos(_))));
    }

    #[test]
    fn beta_values() {
        let p = glycerol();
        let b = p.beta(0.195).unwrap();
        assert!((b - 0.2351).abs() < 1e-4, "{b}");
        assert!((b - 0.234).abs() < 0.005);
        let q = EosParams::new(1.1, 1.1).unwrap();
        assert_eq!(q.beta(0.3).unwrap(), 0.0);
        for c in [0.0, 0.3, 0.7, 1.0] {
            let r = p.beta(c).unwrap() / p.density(c).unwrap();
            assert!((r - p.beta_over_rho()).abs() < 1e-14);
        }
    }

    #[test]
    fn residual_examples() {
        let p = glycerol();
        assert_eq!(p.residual(1.29, 0.0), 0.0);
        assert_eq!(p.residual(1.29 / 2.0, 0.5), 0.0);
        assert_eq!(p.residual(1.29, 1.0), 1.0);
    }

    #[test]
    fn viscosity_models() {
        let q = TransportModel::constant(1.0, 1.0);
        assert_eq!(q.eta(0.5, 1.0), 1.0);
        let quad = TransportModel {
            viscosity: ViscosityModel::Quadratic { rho0_nu0: 1e-5 },
            diffusion: DiffusionModel::StokesEinstein { chi0: 2.0 },
        };
        assert_eq!(quad.eta(0.0, 1.0), 1e-5);
        let expect = 1e-5 * (1.0 + 0.66 * 0.39 + 12.0 * 0.39 * 0.39);
        assert!((quad.eta(0.39, 1.0) - expect).abs() < 1e-18);
        assert!((expect - 3.0826e-5).abs() < 1e-9);
        assert_eq!(eta_mass_ratio_scaling(2.5, 4.0), 5.0);
        let p = glycerol();
        assert_eq!(quad.chi(0.0, 1.0, &p), 2.0);
        let c = 0.3;
        assert!((quad.chi(c, 1.0, &p) * quad.eta(c, 1.0) - 2.0 * 1e-5).abs() < 1e-18);
        let lin = TransportModel {
            viscosity: ViscosityModel::LinearKinematic { nu1: 3.0, mass_ratio: 4.0 },
            diffusion: DiffusionModel::MassRatioScaled { chi1: 0.1, mass_ratio: 4.0 },
        };
        assert!((lin.eta(0.0, 2.0) - 2.0 * 1.5).abs() < 1e-15);
        assert!((lin.eta(1.0, 2.0) - 6.0).abs() < 1e-15);
        assert!((lin.chi(0.5, 1.0, &p) - 0.1 * 0.790569415).abs() < 1e-9);
    }

    #[test]
    fn mass_ratio_factor() {
        assert_eq!(chi_mass_ratio_factor(1.0), 1.0);
        assert!((chi_mass_ratio_factor(4.0) - 0.7906).abs() < 1e-4);
    }

    #[test]
    fn quadratic_fit_endpoint() {
        let m = TransportModel {
            viscosity: ViscosityModel::Constant { eta: 1.0 },
            diffusion: DiffusionModel::QuadraticFit { chi0: 3.0 },
        };
        assert_eq!(m.chi(0.0, 1.0, &glycerol()), 3.0);
    }

    #[test]
    fn chemical_potential_factor() {
        let p = EosParams::new(1.0, 1.0).unwrap();
        assert_eq!(p.inv_mu_c_kbt(0.0), 0.0);
        assert_eq!(p.inv_mu_c_kbt(1.0), 0.0);
        assert_eq!(p.inv_mu_c_kbt(0.5), 0.25);
        assert_eq!(p.inv_mu_c_kbt(-0.1), 0.0);
        assert_eq!(p.inv_mu_c_kbt(1.2), 0.0);
        let q = EosParams { chem: ChemicalPotential::Constant(0.7), ..p };
        assert_eq!(q.inv_mu_c_kbt(0.3), 0.7);
    }

    proptest! {
        #[test]
        fn eos_roundtrip(c in 0.0f64..1.0, r1 in 0.5f64..3.0, r2 in 0.5f64..3.0) {
            let p = EosParams::new(r1, r2).unwrap();
            let rho = p.density(c).unwrap();
            prop_assert!(p.residual(c * rho, (1.0 - c) * rho).abs() < 1e-14);
            let br = p.beta(c).unwrap() / rho;
            prop_assert!((br - p.beta_over_rho()).abs() < 1e-14);
        }

        #[test]
        fn chem_factor_symmetry(c in 0.0f64..1.0, m1 in 0.1f64..5.0, m2 in 0.1f64..5.0) {
            let a = EosParams { m1, m2, ..EosParams::new(1.0, 1.0).unwrap() };
            let b = EosParams { m1: m2, m2: m1, ..a };
            prop_assert!((a.inv_mu_c_kbt(c) - b.inv_mu_c_kbt(1.0 - c)).abs() < 1e-14);
        }
    }
}
