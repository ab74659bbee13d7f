//! Linearised fluctuating-hydrodynamics spectra used as reference values.
//!
//! All functions are pure. Static factors are per unit volume; a discrete
//! spectrum normalised as in [`crate::analysis`] compares to them directly.

use crate::eos::EosParams;

/// Reference state and gradient for the linearised theory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryParams {
    pub rho: f64,
    /// Solutal expansion coefficient `β`.
    pub beta: f64,
    /// Magnitude of gravity (acting against the gradient direction).
    pub g: f64,
    /// Kinematic viscosity `ν = η/ρ`.
    pub nu: f64,
    pub chi: f64,
    /// Concentration gradient component along gravity.
    pub h_par: f64,
    /// Concentration gradient component perpendicular to gravity.
    pub h_perp: f64,
    pub kbt: f64,
    /// `μ_c⁻¹ k_BT`.
    pub inv_mu_c_kbt: f64,
    /// Isothermal sound speed; `None` for the low Mach limit.
    pub c_t: Option<f64>,
}

impl TheoryParams {
    /// Equilibrium reference state at concentration `c`.
    pub fn equilibrium(eos: &EosParams, c: f64, eta: f64, chi: f64) -> crate::Result<Self> {
        let rho = eos.density(c)?;
        Ok(TheoryParams {
            rho,
            beta: eos.beta(c)?,
            g: 0.0,
            nu: eta / rho,
            chi,
            h_par: 0.0,
            h_perp: 0.0,
            kbt: eos.kbt,
            inv_mu_c_kbt: eos.inv_mu_c_kbt(c),
            c_t: None,
        })
    }

    pub fn eta(&self) -> f64 {
        self.rho * self.nu
    }
}

/// Wavenumber-independent equilibrium static factors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StaticFactors {
    pub s_rho_rho: f64,
    /// Per velocity component.
    pub s_vv: f64,
    pub s_cc: f64,
    pub s_c_rho: f64,
}

pub fn equilibrium_static_factors(tp: &TheoryParams) -> StaticFactors {
    let s_cc = tp.inv_mu_c_kbt / tp.rho;
    let compressible = tp.c_t.map_or(0.0, |c| tp.rho * tp.kbt / (c * c));
    StaticFactors {
        s_rho_rho: compressible + tp.beta * tp.beta * tp.rho * tp.inv_mu_c_kbt,
        s_vv: tp.kbt / tp.rho,
        s_cc,
        s_c_rho: tp.rho * tp.beta * s_cc,
    }
}

/// Central (Rayleigh) peak of the density dynamic structure factor.
pub fn rayleigh_peak(k: f64, omega: f64, tp: &TheoryParams) -> f64 {
    let g = tp.chi * k * k;
    tp.beta * tp.beta * tp.rho * tp.inv_mu_c_kbt * 2.0 * g / (omega * omega + g * g)
}

/// Equilibrium concentration dynamic structure factor, `S_cc·2χk²/(ω²+χ²k⁴)`.
pub fn concentration_peak(k: f64, omega: f64, tp: &TheoryParams) -> f64 {
    let g = tp.chi * k * k;
    equilibrium_static_factors(tp).s_cc * 2.0 * g / (omega * omega + g * g)
}

/// Equilibrium transverse-velocity dynamic structure factor,
/// `(k_BT/ρ)·2νk²/(ω²+ν²k⁴)`.
pub fn transverse_velocity_peak(k: f64, omega: f64, tp: &TheoryParams) -> f64 {
    let g = tp.nu * k * k;
    tp.kbt / tp.rho * 2.0 * g / (omega * omega + g * g)
}

/// Static concentration spectrum for `k ⊥ ∇c̄`, including the equilibrium
/// term and the low Mach `h⊥` term.
pub fn noneq_scc_full(k_perp: f64, tp: &TheoryParams) -> f64 {
    equilibrium_static_factors(tp).s_cc + noneq_scc_part(k_perp, tp)
}

/// The gradient-induced part of [`noneq_scc_full`].
pub fn noneq_scc_part(k_perp: f64, tp: &TheoryParams) -> f64 {
    let (nu, chi) = (tp.nu, tp.chi);
    let k2 = k_perp * k_perp;
    let lowmach = tp.beta * tp.beta * chi.powi(3) * nu / (nu + chi).powi(2) * k2 * tp.h_perp * tp.h_perp;
    let den = tp.rho * (nu + chi) * (nu * chi * k2 * k2 + tp.h_par * tp.g * tp.beta + lowmach);
    nu * tp.kbt * tp.h_par * tp.h_par / den
}

/// Simplified spectrum `(ν/(ν+χ))·k_BT h∥² / (χηk⁴ + h∥ρgβ)`, without the
/// equilibrium term.
pub fn simplified_scc(k_perp: f64, tp: &TheoryParams) -> f64 {
    let k4 = k_perp.powi(4);
    tp.nu / (tp.nu + tp.chi) * tp.kbt * tp.h_par * tp.h_par
        / (tp.chi * tp.eta() * k4 + tp.h_par * tp.rho * tp.g * tp.beta)
}

/// Gravity cutoff `k_g = [h∥ρgβ/(ηχ)]^¼`.
pub fn gravity_cutoff(tp: &TheoryParams) -> f64 {
    (tp.h_par * tp.rho * tp.g * tp.beta / (tp.eta() * tp.chi)).powf(0.25)
}

/// Modified wavenumber `k sin(kΔx/2)/(kΔx/2)` of the discrete Laplacian.
pub fn effective_wavenumber(k: f64, dx: f64) -> f64 {
    let a = 0.5 * k * dx;
    if a.abs() < 1e-8 {
        k * (1.0 - a * a / 6.0)
    } else {
        k * a.sin() / a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn glycerol(g: f64) -> TheoryParams {
        TheoryParams {
            rho: 1.05,
            beta: 0.234,
            g,
            nu: 1e-3 / 1.05,
            chi: 1e-4,
            h_par: 1.56,
            h_perp: 0.0,
            kbt: 4.1e-14,
            inv_mu_c_kbt: 1e-22,
            c_t: None,
        }
    }

    #[test]
    fn static_factors() {
        let eos = EosParams::new(1.0, 1.0).unwrap();
        let tp = TheoryParams::equilibrium(&eos, 0.5, 1.0, 1.0).unwrap();
        let s = equilibrium_static_factors(&tp);
        assert_eq!(s.s_rho_rho, 0.0);
        assert_eq!(s.s_c_rho, 0.0);
        assert!((s.s_cc - 0.25).abs() < 1e-15);
        let eos = EosParams::new(1.29, 1.0).unwrap();
        let tp = TheoryParams::equilibrium(&eos, 0.2, 1.0, 1.0).unwrap();
        let s = equilibrium_static_factors(&tp);
        assert!((s.s_c_rho / s.s_cc - tp.rho * tp.beta).abs() < 1e-14);
        let with_sound = equilibrium_static_factors(&TheoryParams { c_t: Some(10.0), ..tp });
        assert!((with_sound.s_rho_rho - s.s_rho_rho - tp.rho / 100.0).abs() < 1e-14);
    }

    #[test]
    fn rayleigh_peak_shape() {
        let mut tp = glycerol(0.0);
        tp.beta = 0.3;
        tp.inv_mu_c_kbt = 0.2;
        let k = 2.0;
        let g = tp.chi * k * k;
        let zero = rayleigh_peak(k, 0.0, &tp);
        assert!((zero - tp.beta * tp.beta * tp.rho * tp.inv_mu_c_kbt * 2.0 / g).abs() < 1e-12 * zero);
        assert!((rayleigh_peak(k, g, &tp) / zero - 0.5).abs() < 1e-14);
        // ∫ S dω / 2π over the Lorentzian equals the static value; substitute ω = g tan θ.
        let n = 200_000;
        let mut integral = 0.0;
        for m in 0..n {
            let th = -std::f64::consts::FRAC_PI_2 + (m as f64 + 0.5) * std::f64::consts::PI / n as f64;
            let w = g * th.tan();
            integral += rayleigh_peak(k, w, &tp) * g / th.cos().powi(2) * std::f64::consts::PI / n as f64;
        }
        let stat = equilibrium_static_factors(&tp).s_rho_rho;
        assert!((integral / (2.0 * std::f64::consts::PI) / stat - 1.0).abs() < 1e-9);
    }

    #[test]
    fn limits_of_full_spectrum() {
        let tp = glycerol(1e3);
        let eq = equilibrium_static_factors(&tp).s_cc;
        assert_eq!(noneq_scc_full(100.0, &TheoryParams { h_par: 0.0, ..tp }), eq);
        let strong = noneq_scc_full(100.0, &TheoryParams { g: 1e300, ..tp });
        assert!((strong - eq).abs() <= 1e-12 * eq);
    }

    #[test]
    fn glycerol_cutoff() {
        let tp = glycerol(1e3);
        let kg = gravity_cutoff(&tp);
        assert!((kg - 249.0).abs() < 1.0, "{kg}");
        // Quoted value 246 is within 2%.
        assert!((kg / 246.0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn effective_wavenumber_values() {
        assert_eq!(effective_wavenumber(0.0, 0.1), 0.0);
        let dx = 0.25;
        let k = std::f64::consts::PI / dx;
        assert!((effective_wavenumber(k, dx) - k * 2.0 / std::f64::consts::PI).abs() < 1e-14);
        let k = 0.01;
        let r = effective_wavenumber(k, 1.0) / k;
        assert!((r - (1.0 - k * k / 24.0)).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn full_matches_simplified_without_h_perp(k in 1.0f64..1e3, g in 0.0f64..1e4, sc in 100.0f64..1e4) {
            let mut tp = glycerol(g);
            tp.nu = sc * tp.chi;
            let full = noneq_scc_full(k, &tp) - equilibrium_static_factors(&tp).s_cc;
            let simp = simplified_scc(k, &tp);
            prop_assert!((full / simp - 1.0).abs() < 0.01);
        }

        #[test]
        fn noneq_part_decreases_in_g_and_k(k in 1.0f64..1e3, g in 0.0f64..1e4) {
            let tp = glycerol(g);
            let a = noneq_scc_part(k, &tp);
            prop_assert!(noneq_scc_part(k * 1.1, &tp) < a);
            let stronger = TheoryParams { g: g * 1.1 + 1.0, ..tp };
            prop_assert!(noneq_scc_part(k, &stronger) < a);
        }

        #[test]
        fn h_perp_term_only_reduces(k in 1.0f64..1e3, hp in 0.1f64..100.0) {
            let tp = glycerol(1e3);
            let with = noneq_scc_part(k, &TheoryParams { h_perp: hp, ..tp });
            prop_assert!(with <= noneq_scc_part(k, &tp));
        }

        #[test]
        fn length_rescaling(lam in 0.1f64..10.0, k in 1.0f64..1e3) {
            // Lengths scale by λ: k → k/λ, ν, χ → λ²ν, λ²χ, h → h/λ, g → λg,
            // ρ → ρ/λ³, k_BT → λ²k_BT. The spectrum (volume × c²) scales by λ³.
            let tp = glycerol(1e3);
            let l3 = lam.powi(3);
            let scaled = TheoryParams {
                rho: tp.rho / l3,
                g: tp.g * lam,
                nu: tp.nu * lam * lam,
                chi: tp.chi * lam * lam,
                h_par: tp.h_par / lam,
                kbt: tp.kbt * lam * lam,
                ..tp
            };
            let a = noneq_scc_part(k, &tp) * l3;
            let b = noneq_scc_part(k / lam, &scaled);
            prop_assert!((a / b - 1.0).abs() < 1e-10);
        }
    }
}
