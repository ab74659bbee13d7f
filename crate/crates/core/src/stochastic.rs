//! Thermal noise: counter-based normal variates, stochastic mass and
//! momentum fluxes, and the local variate filters.
//!
//! Every variate is a pure function of `(seed, step, stage, field, index)`,
//! so draws are independent of thread count and evaluation order. Stage
//! numbers are the integrator's substreams (`W₁`, `W₂`), not its internal
//! stage counter: noise reuse between stages is expressed by combining
//! draws, never by re-seeding.

use crate::error::{Error, Result};
use crate::fields::{Axis, CellField, FaceVecField, Grid2D, NodeField, Side, Slip};
use crate::operators::stress_divergence;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    pub seed: u64,
    pub mass_noise: bool,
    pub momentum_noise: bool,
    /// Filter width `w_F` ∈ {0, 2, 4}.
    pub filter_width: u8,
    /// Global multiplier on all noise variances.
    pub variance_scale: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { seed: 0, mass_noise: true, momentum_noise: true, filter_width: 0, variance_scale: 1.0 }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        NoiseConfig { mass_noise: false, momentum_noise: false, ..Default::default() }
    }

    pub fn enabled(&self) -> bool {
        (self.mass_noise || self.momentum_noise) && self.variance_scale > 0.0
    }

    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        if !matches!(self.filter_width, 0 | 2 | 4) {
            return Err(Error::Config(format!("filter width must be 0, 2 or 4, got {}", self.filter_width)));
        }
        if self.filter_width > 0 && !grid.all_periodic() {
            return Err(Error::Config("variate filters require periodic boundaries".into()));
        }
        if !(self.variance_scale >= 0.0) {
            return Err(Error::Config("variance scale must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Field identifiers mixed into the RNG key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum FieldId {
    MassX = 1,
    MassY = 2,
    StressXX = 3,
    StressYY = 4,
    StressXY = 5,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream key for one `(seed, step, stage, field)` tuple.
#[inline]
pub fn stream_key(seed: u64, step: u64, stage: u32, field: FieldId) -> u64 {
    let a = splitmix(seed ^ 0x6A09_E667_F3BC_C908);
    let b = splitmix(a ^ step);
    splitmix(b ^ ((stage as u64) << 8 | field as u64))
}

#[inline]
fn unit_open(x: u64) -> f64 {
    // (0, 1]
    ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal variate number `index` of the stream `key`. Pairs of
/// consecutive indices share one Box–Muller transform. Kept out of line and
/// free of fused `sin_cos` so every caller gets bitwise the same value.
#[inline(never)]
pub fn normal(key: u64, index: u64) -> f64 {
    let pair = index >> 1;
    let c = key.wrapping_add(pair.wrapping_mul(0xD1B5_4A32_D192_ED03));
    let u1 = unit_open(splitmix(c));
    let u2 = unit_open(splitmix(c ^ 0xA076_1D64_78BD_642F));
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    if index & 1 == 0 {
        r * theta.cos()
    } else {
        r * theta.sin()
    }
}

/// Fills `out` with the variates of one stream.
pub fn fill_normals(out: &mut [f64], key: u64) {
    par::for_each_index(out, |k, v| *v = normal(key, k as u64));
}

/// Variates for one substream: face variates for the mass flux and
/// symmetric-tensor variates (two diagonal at cells, one off-diagonal at
/// nodes) for the momentum flux. Disabled parts are empty.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub mass_x: Vec<f64>,
    pub mass_y: Vec<f64>,
    pub sxx: Vec<f64>,
    pub syy: Vec<f64>,
    pub sxy: Vec<f64>,
}

impl NoiseDraw {
    pub fn empty() -> Self {
        NoiseDraw { mass_x: vec![], mass_y: vec![], sxx: vec![], syy: vec![], sxy: vec![] }
    }

    fn parts_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [&mut self.mass_x, &mut self.mass_y, &mut self.sxx, &mut self.syy, &mut self.sxy]
    }

    fn parts(&self) -> [&Vec<f64>; 5] {
        [&self.mass_x, &self.mass_y, &self.sxx, &self.syy, &self.sxy]
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &NoiseDraw, b: f64) -> NoiseDraw {
        let mut out = self.clone();
        for (o, q) in out.parts_mut().into_iter().zip(other.parts()) {
            for (x, y) in o.iter_mut().zip(q) {
                *x = a * *x + b * y;
            }
        }
        out
    }
}

/// Draws the variates of substream `stage` at `step`, filtered if requested.
pub fn draw_noise(seed: u64, step: u64, stage: u32, grid: &Grid2D, cfg: &NoiseConfig) -> NoiseDraw {
    let mut d = NoiseDraw::empty();
    let gen = |len: usize, field: FieldId| {
        let mut v = vec![0.0; len];
        fill_normals(&mut v, stream_key(seed, step, stage, field));
        v
    };
    let (nx, ny, nfx, nfy) = (grid.nx, grid.ny, grid.nfx(), grid.nfy());
    if cfg.mass_noise {
        d.mass_x = gen(nfx * ny, FieldId::MassX);
        d.mass_y = gen(nx * nfy, FieldId::MassY);
    }
    if cfg.momentum_noise {
        d.sxx = gen(nx * ny, FieldId::StressXX);
        d.syy = gen(nx * ny, FieldId::StressYY);
        d.sxy = gen(nfx * nfy, FieldId::StressXY);
    }
    if cfg.filter_width > 0 {
        // Only reachable on periodic grids, where every array is nx by ny.
        for part in d.parts_mut() {
            if !part.is_empty() {
                apply_filter(part, nx, ny, cfg.filter_width);
            }
        }
    }
    d
}

/// One-sided stencil weights `[w₀, w₁, …]` of the symmetric filter.
pub fn filter_weights(width: u8) -> &'static [f64] {
    const W2: [f64; 3] = [5.0 / 8.0, 1.0 / 4.0, -1.0 / 16.0];
    const W4: [f64; 5] = [93.0 / 128.0, 7.0 / 32.0, -7.0 / 64.0, 1.0 / 32.0, -1.0 / 256.0];
    match width {
        2 => &W2,
        4 => &W4,
        _ => &[1.0],
    }
}

/// Analytic transfer function `w₀ + 2Σ w_m cos(mk)` of the 1D filter.
pub fn filter_transfer(width: u8, k: f64) -> f64 {
    let w = filter_weights(width);
    w[0] + 2.0 * w[1..].iter().enumerate().map(|(m, wm)| wm * ((m + 1) as f64 * k).cos()).sum::<f64>()
}

fn filter_1d(line: &[f64], out: &mut [f64], w: &[f64]) {
    let n = line.len() as isize;
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = w[0] * line[i];
        for (m, wm) in w.iter().enumerate().skip(1) {
            let (a, b) = ((i as isize - m as isize).rem_euclid(n), (i as isize + m as isize).rem_euclid(n));
            s += wm * (line[a as usize] + line[b as usize]);
        }
        *o = s;
    }
}

/// Periodic tensor-product filter of an `nx` by `ny` row-major array.
pub fn apply_filter(data: &mut [f64], nx: usize, ny: usize, width: u8) {
    if width == 0 {
        return;
    }
    let w = filter_weights(width);
    let src = data.to_vec();
    par::for_rows(data, nx, |j, row| filter_1d(&src[j * nx..(j + 1) * nx], row, w));
    let mut col = vec![0.0; ny];
    let mut res = vec![0.0; ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = data[j * nx + i];
        }
        filter_1d(&col, &mut res, w);
        for j in 0..ny {
            data[j * nx + i] = res[j];
        }
    }
}

/// Stochastic mass flux `Ψ = √(2χ(ρμ_c⁻¹k_BT)/(δt ΔV))·W̃` on faces, from the
/// same face coefficients as the diffusive flux. Zero on physical-boundary
/// faces and when mass noise is off.
pub fn stochastic_mass_flux(
    chi_faces: &FaceVecField,
    rho_mu_faces: &FaceVecField,
    dt: f64,
    grid: &Grid2D,
    cfg: &NoiseConfig,
    w: &NoiseDraw,
) -> FaceVecField {
    let mut out = FaceVecField::zeros(grid);
    if !cfg.mass_noise || w.mass_x.is_empty() {
        return out;
    }
    let pre = 2.0 * cfg.variance_scale / (dt * grid.cell_volume());
    let (nx, nfx) = (grid.nx, grid.nfx());
    par::for_rows(&mut out.x, nfx, |j, row| {
        for (i, o) in row.iter_mut().enumerate() {
            if grid.is_boundary_face(Axis::X, i).is_none() {
                let k = j * nfx + i;
                *o = (pre * chi_faces.x[k] * rho_mu_faces.x[k]).max(0.0).sqrt() * w.mass_x[k];
            }
        }
    });
    par::for_rows(&mut out.y, nx, |j, row| {
        if grid.is_boundary_face(Axis::Y, j).is_some() {
            return;
        }
        for (i, o) in row.iter_mut().enumerate() {
            let k = j * nx + i;
            *o = (pre * chi_faces.y[k] * rho_mu_faces.y[k]).max(0.0).sqrt() * w.mass_y[k];
        }
    });
    out
}

/// Stochastic stress `Σ = √(ηk_BT/(δt ΔV))(W + Wᵀ)`: diagonal entries at
/// cells, the single symmetric off-diagonal entry at nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticStress {
    pub sxx: Vec<f64>,
    pub syy: Vec<f64>,
    pub sxy: Vec<f64>,
}

impl StochasticStress {
    /// Divergence onto interior momentum faces.
    pub fn divergence(&self, grid: &Grid2D) -> FaceVecField {
        stress_divergence(&self.sxx, &self.syy, &self.sxy, &self.sxy, grid)
    }
}

/// Builds the stochastic stress. On no-slip boundary nodes the off-diagonal
/// amplitude is scaled by √2 to match the half-cell one-sided viscous
/// difference there; free-slip boundary nodes and corners carry none.
pub fn stochastic_momentum_flux(
    eta_cell: &CellField,
    eta_node: &NodeField,
    dt: f64,
    grid: &Grid2D,
    kbt: f64,
    cfg: &NoiseConfig,
    w: &NoiseDraw,
) -> StochasticStress {
    let (nx, ny, nfx, nfy) = (grid.nx, grid.ny, grid.nfx(), grid.nfy());
    if !cfg.momentum_noise || w.sxx.is_empty() {
        return StochasticStress { sxx: vec![0.0; nx * ny], syy: vec![0.0; nx * ny], sxy: vec![0.0; nfx * nfy] };
    }
    let pre = kbt * cfg.variance_scale / (dt * grid.cell_volume());
    let diag = |src: &[f64]| {
        let mut out = vec![0.0; nx * ny];
        par::for_each_index(&mut out, |k, o| *o = 2.0 * (pre * eta_cell.data[k]).max(0.0).sqrt() * src[k]);
        out
    };
    let sxx = diag(&w.sxx);
    let syy = diag(&w.syy);
    let wall_factor = |axis: Axis, side: Side| match grid.wall(axis, side).map(|w| w.slip) {
        Some(Slip::NoSlip) => std::f64::consts::SQRT_2,
        _ => 0.0,
    };
    let mut sxy = vec![0.0; nfx * nfy];
    par::for_rows(&mut sxy, nfx, |jn, row| {
        let fy = grid.is_boundary_face(Axis::Y, jn);
        for (i, o) in row.iter_mut().enumerate() {
            let fx = grid.is_boundary_face(Axis::X, i);
            let factor = match (fx, fy) {
                (None, None) => 1.0,
                (Some(s), None) => wall_factor(Axis::X, s),
                (None, Some(s)) => wall_factor(Axis::Y, s),
                (Some(_), Some(_)) => 0.0,
            };
            let k = jn * nfx + i;
            *o = factor * (2.0 * pre * eta_node.data[k]).max(0.0).sqrt() * w.sxy[k];
        }
    });
    StochasticStress { sxx, syy, sxy }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AxisBc, Wall};

    #[test]
    fn draws_are_deterministic_and_distinct() {
        let g = Grid2D::periodic(8, 8, 1.0).unwrap();
        let cfg = NoiseConfig::default();
        let a = draw_noise(7, 3, 0, &g, &cfg);
        assert_eq!(a, draw_noise(7, 3, 0, &g, &cfg));
        assert_ne!(a, draw_noise(7, 3, 1, &g, &cfg));
        assert_ne!(a, draw_noise(7, 4, 0, &g, &cfg));
        assert_ne!(a, draw_noise(8, 3, 0, &g, &cfg));
        assert_ne!(a.mass_x, a.mass_y);
    }

    #[test]
    fn normal_moments() {
        let key = stream_key(42, 0, 0, FieldId::MassX);
        let n = 1_000_000;
        let (mut s, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for k in 0..n {
            let x = normal(key, k);
            s += x;
            s2 += x * x;
            s4 += x * x * x * x;
        }
        let nf = n as f64;
        let mean = s / nf;
        let var = s2 / nf - mean * mean;
        assert!(mean.abs() < 0.004, "{mean}");
        assert!((var - 1.0).abs() < 0.006, "{var}");
        assert!((s4 / nf - 3.0).abs() < 0.05);
    }

    #[test]
    fn neighbouring_indices_uncorrelated() {
        let key = stream_key(1, 2, 0, FieldId::StressXY);
        let n = 200_000u64;
        let c: f64 = (0..n).map(|k| normal(key, 2 * k) * normal(key, 2 * k + 1)).sum::<f64>() / n as f64;
        assert!(c.abs() < 0.012, "{c}");
    }

    #[test]
    fn rk3_weights() {
        let s2 = 2f64.sqrt();
        let s3 = 3f64.sqrt();
        let w = crate::integrators::RK3_NOISE_WEIGHTS;
        assert!((w[0] - (2.0 * s2 + s3) / 5.0).abs() < 1e-15);
        assert!((w[1] - (-4.0 * s2 + 3.0 * s3) / 5.0).abs() < 1e-15);
        assert!((w[2] - (s2 - 2.0 * s3) / 10.0).abs() < 1e-15);
    }

    #[test]
    fn filter_weights_sum_to_one() {
        for wf in [2u8, 4] {
            let w = filter_weights(wf);
            let s: f64 = w[0] + 2.0 * w[1..].iter().sum::<f64>();
            assert_eq!(s, 1.0);
        }
        assert_eq!(filter_transfer(2, std::f64::consts::PI), 0.0);
    }

    #[test]
    fn filter_constant_and_nyquist() {
        let (nx, ny) = (8, 6);
        let mut c = vec![2.5; nx * ny];
        apply_filter(&mut c, nx, ny, 2);
        assert!(c.iter().all(|v| (v - 2.5).abs() < 1e-15));
        let mut alt: Vec<f64> = (0..nx * ny).map(|k| if (k % nx) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        apply_filter(&mut alt, nx, ny, 2);
        assert!(alt.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn mass_flux_switch_and_variance() {
        let g = Grid2D::periodic(4, 4, 0.5).unwrap().with_thickness(2.0).unwrap();
        let chi = FaceVecField::constant(&g, 0.3, 0.3);
        let rm = FaceVecField::constant(&g, 0.2, 0.2);
        let off = NoiseConfig { mass_noise: false, ..Default::default() };
        let w = draw_noise(1, 0, 0, &g, &off);
        assert!(stochastic_mass_flux(&chi, &rm, 0.1, &g, &off, &w).max_abs() == 0.0);
        let cfg = NoiseConfig::default();
        let dt = 0.1;
        let expect = 2.0 * 0.3 * 0.2 / (dt * g.cell_volume());
        let n = 100_000 / 16;
        let mut s2 = 0.0;
        for step in 0..n {
            let w = draw_noise(5, step, 0, &g, &cfg);
            let f = stochastic_mass_flux(&chi, &rm, dt, &g, &cfg, &w);
            s2 += f.x.iter().map(|v| v * v).sum::<f64>();
        }
        let var = s2 / (n * 16) as f64;
        assert!((var / expect - 1.0).abs() < 0.03, "{var} vs {expect}");
    }

    #[test]
    fn mass_flux_zero_on_walls() {
        let g = Grid2D::periodic(4, 4, 1.0)
            .unwrap()
            .with_bc(AxisBc::Periodic, AxisBc::Walls { lo: Wall::reservoir(0.2), hi: Wall::no_slip() });
        let one = FaceVecField::constant(&g, 1.0, 1.0);
        let cfg = NoiseConfig::default();
        let f = stochastic_mass_flux(&one, &one, 1.0, &g, &cfg, &draw_noise(3, 0, 0, &g, &cfg));
        for i in 0..4 {
            assert_eq!(f.yat(i, 0), 0.0);
            assert_eq!(f.yat(i, 4), 0.0);
            assert_ne!(f.yat(i, 2), 0.0);
        }
    }

    #[test]
    fn momentum_flux_variances() {
        let g = Grid2D::periodic(4, 4, 1.0).unwrap();
        let cfg = NoiseConfig::default();
        let eta = CellField::constant(&g, 0.7);
        let mut en = NodeField::zeros(&g);
        en.data.iter_mut().for_each(|v| *v = 0.7);
        let (dt, kbt) = (0.5, 2.0);
        let base = 0.7 * kbt / (dt * g.cell_volume());
        let n = 100_000 / 16;
        let (mut d, mut o) = (0.0, 0.0);
        for step in 0..n {
            let s = stochastic_momentum_flux(&eta, &en, dt, &g, kbt, &cfg, &draw_noise(9, step, 0, &g, &cfg));
            d += s.sxx.iter().map(|v| v * v).sum::<f64>();
            o += s.sxy.iter().map(|v| v * v).sum::<f64>();
        }
        let m = (n * 16) as f64;
        assert!((d / m / (4.0 * base) - 1.0).abs() < 0.03);
        assert!((o / m / (2.0 * base) - 1.0).abs() < 0.03);
        let off = NoiseConfig { momentum_noise: false, ..cfg };
        let s = stochastic_momentum_flux(&eta, &en, dt, &g, kbt, &off, &draw_noise(9, 0, 0, &g, &off));
        assert!(s.sxx.iter().chain(&s.sxy).all(|v| *v == 0.0));
    }

    #[test]
    fn filter_requires_periodic() {
        let g = Grid2D::periodic(4, 4, 1.0)
            .unwrap()
            .with_bc(AxisBc::Periodic, AxisBc::Walls { lo: Wall::no_slip(), hi: Wall::no_slip() });
        let cfg = NoiseConfig { filter_width: 2, ..Default::default() };
        assert!(cfg.validate(&g).is_err());
        let bad = NoiseConfig { filter_width: 3, ..Default::default() };
        assert!(bad.validate(&Grid2D::periodic(4, 4, 1.0).unwrap()).is_err());
    }

    #[test]
    fn combine_is_linear() {
        let g = Grid2D::periodic(4, 4, 1.0).unwrap();
        let cfg = NoiseConfig::default();
        let a = draw_noise(1, 0, 0, &g, &cfg);
        let b = draw_noise(1, 0, 1, &g, &cfg);
        let c = a.combine(1.0 / 2f64.sqrt(), &b, 1.0 / 2f64.sqrt());
        assert!((c.sxy[3] - (a.sxy[3] + b.sxy[3]) / 2f64.sqrt()).abs() < 1e-15);
    }
}
