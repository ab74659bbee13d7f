//! Spectral and profile diagnostics.
//!
//! Normalisation: for a field sampled on `N` cells of volume `ΔV`, the
//! static spectrum is `S(k) = ΔV⟨|ĉ(k)|²⟩/N` with `ĉ` the unnormalised
//! DFT. Uncorrelated cell values of variance `σ²` then give `S = σ²ΔV`, which
//! compares directly to the continuum equilibrium value `k_BT/(ρμ_c)`.
//! Line spectra of column-averaged 1D observables use `Δx⟨|ĉ|²⟩/n`.
//! Dynamic spectra use `(ΔV/N)(δt/M)⟨|Σ_t x̂(k,t)e^{-iωt}|²⟩` over batches of
//! `M` samples, so that `∫S(k,ω)dω/2π` recovers the static value.

use crate::error::{Error, Result};
use crate::fields::{CellField, Grid2D};
use crate::par;
pub use crate::theory::effective_wavenumber;
use crate::theory::{noneq_scc_full, simplified_scc, TheoryParams};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

/// Signed DFT wavenumbers `2πm/(nΔx)` in FFT order.
pub fn fft_wavenumbers(n: usize, dx: f64) -> Vec<f64> {
    (0..n)
        .map(|m| {
            let s = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
            2.0 * PI * s / (n as f64 * dx)
        })
        .collect()
}

/// Forward 2D DFT of a row-major `nx` by `ny` array.
pub struct Fft2 {
    nx: usize,
    ny: usize,
    row: Arc<dyn Fft<f64>>,
    col: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut p = FftPlanner::new();
        Fft2 { nx, ny, row: p.plan_fft_forward(nx), col: p.plan_fft_forward(ny) }
    }

    pub fn forward(&self, data: &[f64]) -> Vec<Complex64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut a: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        for r in a.chunks_mut(nx) {
            self.row.process(r);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); ny];
        for i in 0..nx {
            for j in 0..ny {
                col[j] = a[j * nx + i];
            }
            self.col.process(&mut col);
            for j in 0..ny {
                a[j * nx + i] = col[j];
            }
        }
        a
    }
}

fn fft1(data: &[f64]) -> Vec<Complex64> {
    let mut a: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(a.len()).process(&mut a);
    a
}

#[derive(Clone, Debug, Default)]
struct Moments {
    count: usize,
    sum: Vec<Complex64>,
    sum_sq: Vec<f64>,
}

/// Per-batch first and second moments of complex mode amplitudes.
#[derive(Clone, Debug)]
pub struct ModeAccumulator {
    n_modes: usize,
    batches: Vec<Moments>,
}

/// How the mean is removed before forming spectra.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeanRemoval {
    /// Only the spatial mean (the `k = 0` mode) is removed.
    Spatial,
    /// The ensemble mean of every mode over all batches is also removed.
    Ensemble,
}

impl ModeAccumulator {
    pub fn new(n_modes: usize, n_batches: usize) -> Self {
        let m = Moments {
            count: 0,
            sum: vec![Complex64::new(0.0, 0.0); n_modes],
            sum_sq: vec![0.0; n_modes],
        };
        ModeAccumulator { n_modes, batches: vec![m; n_batches.max(1)] }
    }

    pub fn n_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn samples(&self) -> usize {
        self.batches.iter().map(|b| b.count).sum()
    }

    pub fn add(&mut self, batch: usize, modes: &[Complex64]) -> Result<()> {
        if modes.len() != self.n_modes {
            return Err(Error::Dimension(format!("{} modes, expected {}", modes.len(), self.n_modes)));
        }
        let b = self
            .batches
            .get_mut(batch)
            .ok_or_else(|| Error::Usage(format!("batch {batch} out of range")))?;
        b.count += 1;
        for ((s, q), z) in b.sum.iter_mut().zip(&mut b.sum_sq).zip(modes) {
            *s += z;
            *q += z.norm_sqr();
        }
        Ok(())
    }

    /// Per-batch spectra `norm·(⟨|z|²⟩ − |mean|²)`; needs two non-empty batches.
    pub fn batch_spectra(&self, norm: f64, mean: MeanRemoval) -> Result<Vec<Vec<f64>>> {
        let used: Vec<&Moments> = self.batches.iter().filter(|b| b.count > 0).collect();
        if used.len() < 2 {
            return Err(Error::Statistics(format!("{} non-empty batches; at least 2 required", used.len())));
        }
        let total: usize = used.iter().map(|b| b.count).sum();
        let global: Vec<Complex64> = (0..self.n_modes)
            .map(|k| used.iter().map(|b| b.sum[k]).sum::<Complex64>() / total as f64)
            .collect();
        Ok(used
            .iter()
            .map(|b| {
                (0..self.n_modes)
                    .map(|k| {
                        let m2 = b.sum_sq[k] / b.count as f64;
                        let sub = match mean {
                            MeanRemoval::Spatial => 0.0,
                            MeanRemoval::Ensemble => global[k].norm_sqr(),
                        };
                        norm * (m2 - sub)
                    })
                    .collect()
            })
            .collect())
    }
}

/// Mean and standard error over rows of `batches`.
fn batch_stats(batches: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let b = batches.len() as f64;
    let n = batches[0].len();
    let mut mean = vec![0.0; n];
    let mut se = vec![0.0; n];
    for k in 0..n {
        let m = batches.iter().map(|r| r[k]).sum::<f64>() / b;
        let var = batches.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / (b - 1.0);
        mean[k] = m;
        se[k] = (var / b).sqrt();
    }
    (mean, se)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumEstimate {
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
    /// `|k|`.
    pub k: Vec<f64>,
    /// Magnitude of the modified wavenumber.
    pub k_eff: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_samples: usize,
    /// Spectrum of each batch, for derived statistics.
    pub batches: Vec<Vec<f64>>,
}

impl SpectrumEstimate {
    fn build(kx: Vec<f64>, ky: Vec<f64>, k_eff: Vec<f64>, batches: Vec<Vec<f64>>, n_samples: usize) -> Self {
        let (mean, stderr) = batch_stats(&batches);
        let k = kx.iter().zip(&ky).map(|(a, b)| a.hypot(*b)).collect();
        SpectrumEstimate { kx, ky, k, k_eff, mean, stderr, n_samples, batches }
    }

    /// Averages modes into shells `|k| ∈ [(s−½)δk, (s+½)δk)` for `s ≥ 1`,
    /// with standard errors from the per-batch shell means.
    pub fn radial_average(&self, dk: f64) -> Vec<ShellAverage> {
        let mut shells: Vec<Vec<usize>> = Vec::new();
        for (m, &k) in self.k.iter().enumerate() {
            let s = (k / dk).round() as usize;
            if s == 0 {
                continue;
            }
            if shells.len() < s {
                shells.resize(s, Vec::new());
            }
            shells[s - 1].push(m);
        }
        shells
            .iter()
            .enumerate()
            .filter(|(_, idx)| !idx.is_empty())
            .map(|(s, idx)| {
                let per: Vec<Vec<f64>> = self
                    .batches
                    .iter()
                    .map(|b| vec![idx.iter().map(|&m| b[m]).sum::<f64>() / idx.len() as f64])
                    .collect();
                let (mean, se) = batch_stats(&per);
                let k = idx.iter().map(|&m| self.k[m]).sum::<f64>() / idx.len() as f64;
                let k_eff = idx.iter().map(|&m| self.k_eff[m]).sum::<f64>() / idx.len() as f64;
                ShellAverage { shell: s + 1, k, k_eff, modes: idx.len(), mean: mean[0], stderr: se[0] }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShellAverage {
    pub shell: usize,
    pub k: f64,
    pub k_eff: f64,
    pub modes: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Which wavevectors a static spectrum covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// All `(k_x, k_y)` in FFT order.
    Full,
    /// `k_x` at `k_y = 0` (sum over rows).
    AlongX,
    /// `k_y` at `k_x = 0` (sum over columns).
    AlongY,
}

/// Streaming static structure factor of cell fields.
pub struct StaticSpectrum {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    norm: f64,
    direction: Direction,
    fft: Option<Fft2>,
    acc: ModeAccumulator,
}

impl StaticSpectrum {
    pub fn new(grid: &Grid2D, direction: Direction, n_batches: usize) -> Self {
        let n_modes = match direction {
            Direction::Full => grid.n_cells(),
            Direction::AlongX => grid.nx,
            Direction::AlongY => grid.ny,
        };
        StaticSpectrum {
            nx: grid.nx,
            ny: grid.ny,
            dx: grid.dx,
            dy: grid.dy,
            norm: grid.cell_volume() / grid.n_cells() as f64,
            direction,
            fft: (direction == Direction::Full).then(|| Fft2::new(grid.nx, grid.ny)),
            acc: ModeAccumulator::new(n_modes, n_batches),
        }
    }

    pub fn add(&mut self, field: &CellField, batch: usize) -> Result<()> {
        if field.nx != self.nx || field.ny != self.ny {
            return Err(Error::Dimension("field does not match spectrum grid".into()));
        }
        let mean = field.mean();
        let d: Vec<f64> = field.data.iter().map(|v| v - mean).collect();
        let modes = match self.direction {
            Direction::Full => self.fft.as_ref().unwrap().forward(&d),
            Direction::AlongX => {
                let mut s = vec![0.0; self.nx];
                for row in d.chunks(self.nx) {
                    s.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                fft1(&s)
            }
            Direction::AlongY => fft1(&d.chunks(self.nx).map(|r| r.iter().sum()).collect::<Vec<f64>>()),
        };
        self.acc.add(batch, &modes)
    }

    pub fn samples(&self) -> usize {
        self.acc.samples()
    }

    pub fn estimate(&self, mean: MeanRemoval) -> Result<SpectrumEstimate> {
        let batches = self.acc.batch_spectra(self.norm, mean)?;
        let (kxs, kys) = (fft_wavenumbers(self.nx, self.dx), fft_wavenumbers(self.ny, self.dy));
        let (mut kx, mut ky, mut ke) = (vec![], vec![], vec![]);
        let eff = |a: f64, b: f64| effective_wavenumber(a, self.dx).hypot(effective_wavenumber(b, self.dy));
        match self.direction {
            Direction::Full => {
                for &b in &kys {
                    for &a in &kxs {
                        kx.push(a);
                        ky.push(b);
                        ke.push(eff(a, b));
                    }
                }
            }
            Direction::AlongX => {
                for &a in &kxs {
                    kx.push(a);
                    ky.push(0.0);
                    ke.push(eff(a, 0.0));
                }
            }
            Direction::AlongY => {
                for &b in &kys {
                    kx.push(0.0);
                    ky.push(b);
                    ke.push(eff(0.0, b));
                }
            }
        }
        Ok(SpectrumEstimate::build(kx, ky, ke, batches, self.acc.samples()))
    }
}

/// Batch estimate from explicit sample lists, one list per batch.
pub fn static_spectrum(
    batches: &[Vec<CellField>],
    grid: &Grid2D,
    direction: Direction,
) -> Result<SpectrumEstimate> {
    let mut s = StaticSpectrum::new(grid, direction, batches.len());
    for (b, samples) in batches.iter().enumerate() {
        for f in samples {
            s.add(f, b)?;
        }
    }
    s.estimate(MeanRemoval::Spatial)
}

/// Streaming spectrum of a periodic 1D observable with spacing `dx`.
pub struct LineSpectrum {
    n: usize,
    dx: f64,
    acc: ModeAccumulator,
}

impl LineSpectrum {
    pub fn new(n: usize, dx: f64, n_batches: usize) -> Self {
        LineSpectrum { n, dx, acc: ModeAccumulator::new(n, n_batches) }
    }

    pub fn add(&mut self, line: &[f64], batch: usize) -> Result<()> {
        if line.len() != self.n {
            return Err(Error::Dimension(format!("line of {} values, expected {}", line.len(), self.n)));
        }
        let m = line.iter().sum::<f64>() / self.n as f64;
        let d: Vec<f64> = line.iter().map(|v| v - m).collect();
        self.acc.add(batch, &fft1(&d))
    }

    pub fn estimate(&self, mean: MeanRemoval) -> Result<SpectrumEstimate> {
        let batches = self.acc.batch_spectra(self.dx / self.n as f64, mean)?;
        let kx = fft_wavenumbers(self.n, self.dx);
        let ke = kx.iter().map(|&k| effective_wavenumber(k, self.dx).abs()).collect();
        Ok(SpectrumEstimate::build(kx, vec![0.0; self.n], ke, batches, self.acc.samples()))
    }
}

/// Single-sample periodogram `dx·|FFT(δa)|²/n` of a periodic line.
pub fn line_periodogram(line: &[f64], dx: f64) -> Vec<f64> {
    let n = line.len();
    let m = line.iter().sum::<f64>() / n.max(1) as f64;
    let d: Vec<f64> = line.iter().map(|v| v - m).collect();
    fft1(&d).iter().map(|z| z.norm_sqr() * dx / n as f64).collect()
}

/// Row means `ρ₁⁽ʰ⁾(y_j)`.
pub fn horizontal_profile(rho1: &CellField) -> Vec<f64> {
    rho1.data.chunks(rho1.nx).map(|r| r.iter().sum::<f64>() / rho1.nx as f64).collect()
}

/// Accumulates row-mean profiles over samples and batches.
#[derive(Clone, Debug)]
pub struct ProfileAccumulator {
    sums: Vec<(usize, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub y: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl ProfileAccumulator {
    pub fn new(ny: usize, n_batches: usize) -> Self {
        ProfileAccumulator { sums: vec![(0, vec![0.0; ny]); n_batches.max(1)] }
    }

    pub fn add(&mut self, rho1: &CellField, batch: usize) -> Result<()> {
        let p = horizontal_profile(rho1);
        let (n, s) = self.sums.get_mut(batch).ok_or_else(|| Error::Usage(format!("batch {batch} out of range")))?;
        if s.len() != p.len() {
            return Err(Error::Dimension("profile length mismatch".into()));
        }
        *n += 1;
        s.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn estimate(&self, grid: &Grid2D) -> Result<Profile> {
        let rows: Vec<Vec<f64>> =
            self.sums.iter().filter(|(n, _)| *n > 0).map(|(n, s)| s.iter().map(|v| v / *n as f64).collect()).collect();
        if rows.len() < 2 {
            return Err(Error::Statistics("profile needs at least 2 non-empty batches".into()));
        }
        let (mean, stderr) = batch_stats(&rows);
        let y = (0..grid.ny).map(|j| (j as f64 + 0.5) * grid.dy).collect();
        Ok(Profile { y, mean, stderr })
    }
}

/// Column observables: `c_v(x) = L⁻¹∫c dy` and `h_c(x) = L⁻¹∫y c dy` with
/// cell-center `y`.
pub fn interface_observables(c: &CellField, grid: &Grid2D) -> (Vec<f64>, Vec<f64>) {
    let (nx, ny) = (c.nx, c.ny);
    let mut cv = vec![0.0; nx];
    let mut hc = vec![0.0; nx];
    for j in 0..ny {
        let y = (j as f64 + 0.5) * grid.dy;
        for i in 0..nx {
            let v = c.data[j * nx + i];
            cv[i] += v;
            hc[i] += y * v;
        }
    }
    let inv = 1.0 / ny as f64;
    cv.iter_mut().chain(&mut hc).for_each(|v| *v *= inv);
    (cv, hc)
}

/// Interface spectra `S_c(k_x)` and `S_h(k_x)` at raw wavenumbers.
pub struct InterfaceSpectra {
    pub c: LineSpectrum,
    pub h: LineSpectrum,
}

impl InterfaceSpectra {
    pub fn new(grid: &Grid2D, n_batches: usize) -> Self {
        InterfaceSpectra {
            c: LineSpectrum::new(grid.nx, grid.dx, n_batches),
            h: LineSpectrum::new(grid.nx, grid.dx, n_batches),
        }
    }

    pub fn add(&mut self, c: &CellField, grid: &Grid2D, batch: usize) -> Result<()> {
        let (cv, hc) = interface_observables(c, grid);
        self.c.add(&cv, batch)?;
        self.h.add(&hc, batch)
    }
}

/// Least-squares slope and intercept of `ln s` against `ln k`.
pub fn loglog_slope(k: &[f64], s: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> =
        k.iter().zip(s).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::Fit("slope fit needs at least two positive points".into()));
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("degenerate wavenumbers".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Fits `A/(k⁴ + k_g⁴)` to positive data in log space; returns `(A, k_g)`.
pub fn fit_gravity_cutoff(k: &[f64], s: &[f64]) -> Result<(f64, f64)> {
    if k.len() != s.len() || k.len() < 3 || s.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Fit("cutoff fit needs at least 3 positive samples".into()));
    }
    let cost = |kg: f64| {
        let r: Vec<f64> = k.iter().zip(s).map(|(k, s)| s.ln() + (k.powi(4) + kg.powi(4)).ln()).collect();
        let la = r.iter().sum::<f64>() / r.len() as f64;
        (r.iter().map(|v| (v - la).powi(2)).sum::<f64>(), la.exp())
    };
    let kmax = k.iter().cloned().fold(0.0, f64::max);
    let kmin = k.iter().cloned().fold(f64::INFINITY, f64::min);
    // Coarse log-spaced scan, then golden-section refinement.
    let (lo, hi) = ((kmin * 1e-2).ln(), (kmax * 10.0).ln());
    let n = 400;
    let grid: Vec<f64> = (0..=n).map(|m| (lo + (hi - lo) * m as f64 / n as f64).exp()).collect();
    let best = (0..=n).min_by(|&a, &b| cost(grid[a]).0.total_cmp(&cost(grid[b]).0)).unwrap();
    let (mut a, mut b) = (grid[best.saturating_sub(1)].ln(), grid[(best + 1).min(n)].ln());
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if cost(c.exp()).0 < cost(d.exp()).0 {
            b = d;
        } else {
            a = c;
        }
    }
    let kg = (0.5 * (a + b)).exp();
    Ok((cost(kg).1, kg))
}

/// Static concentration spectrum for `k ⊥ ∇c̄`: the full expression
/// (with equilibrium term) or the simplified gradient part.
pub fn theory_scc(k_perp: f64, tp: &TheoryParams, simplified: bool) -> f64 {
    if simplified {
        simplified_scc(k_perp, tp)
    } else {
        noneq_scc_full(k_perp, tp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LorentzianFit {
    pub amplitude: f64,
    /// Half-width `Γ`.
    pub gamma: f64,
    pub offset: f64,
    /// RMS of the log residuals.
    pub residual: f64,
    pub iterations: usize,
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut x = [0.0; 3];
    for (c, xc) in x.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *xc = det(m) / d;
    }
    Some(x)
}

/// Fits `A/(ω² + Γ²) + B` by Levenberg–Marquardt on log residuals. Needs at
/// least 16 positive samples; starts from the half-maximum width.
pub fn lorentzian_fit(omega: &[f64], s: &[f64]) -> Result<LorentzianFit> {
    if omega.len() != s.len() || omega.len() < 16 {
        return Err(Error::Fit(format!("{} frequency bins; at least 16 required", omega.len())));
    }
    if s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Fit("spectrum values must be positive".into()));
    }
    // Peak from the bins nearest ω = 0, half-width from the first crossing.
    let mut order: Vec<usize> = (0..omega.len()).collect();
    order.sort_by(|&a, &b| omega[a].abs().total_cmp(&omega[b].abs()));
    let peak = s[order[0]];
    let mut g0 = omega[*order.last().unwrap()].abs();
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        if s[b] <= 0.5 * peak {
            let (wa, wb) = (omega[a].abs(), omega[b].abs());
            let t = if s[a] > s[b] { (s[a] - 0.5 * peak) / (s[a] - s[b]) } else { 1.0 };
            g0 = wa + t.clamp(0.0, 1.0) * (wb - wa);
            break;
        }
    }
    if !(g0 > 0.0) {
        return Err(Error::Fit("cannot locate the half maximum".into()));
    }
    // Dimensionless problem: ω/Γ₀ and S/peak.
    let x: Vec<f64> = omega.iter().map(|w| w / g0).collect();
    let y: Vec<f64> = s.iter().map(|v| (v / peak).ln()).collect();
    let eval = |p: [f64; 3]| -> Option<(f64, Vec<f64>, Vec<[f64; 3]>)> {
        let mut cost = 0.0;
        let mut r = Vec::with_capacity(x.len());
        let mut j = Vec::with_capacity(x.len());
        for (xi, yi) in x.iter().zip(&y) {
            let d = xi * xi + p[1] * p[1];
            let f = p[0] / d + p[2];
            if !(f > 0.0) {
                return None;
            }
            let ri = f.ln() - yi;
            cost += ri * ri;
            r.push(ri);
            j.push([1.0 / (d * f), -2.0 * p[0] * p[1] / (d * d * f), 1.0 / f]);
        }
        Some((cost, r, j))
    };
    let mut p = [1.0, 1.0, 0.0];
    let (mut cost, mut r, mut jac) = eval(p).ok_or_else(|| Error::Fit("invalid initial guess".into()))?;
    let mut lambda = 1e-3;
    let mut iterations = 0;
    for it in 0..500 {
        iterations = it + 1;
        let mut a = [[0.0; 3]; 3];
        let mut g = [0.0; 3];
        for (ri, ji) in r.iter().zip(&jac) {
            for u in 0..3 {
                g[u] += ji[u] * ri;
                for v in 0..3 {
                    a[u][v] += ji[u] * ji[v];
                }
            }
        }
        if g.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-15 {
            break;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut m = a;
            for u in 0..3 {
                m[u][u] += lambda * a[u][u].max(1e-12);
            }
            let Some(d) = solve3(m, [-g[0], -g[1], -g[2]]) else {
                lambda *= 10.0;
                continue;
            };
            let q = [p[0] + d[0], (p[1] + d[1]).abs(), p[2] + d[2]];
            if let Some((c2, r2, j2)) = eval(q) {
                if c2 <= cost {
                    let rel = (cost - c2) / cost.max(1e-300);
                    let step = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
                    p = q;
                    cost = c2;
                    r = r2;
                    jac = j2;
                    lambda = (lambda * 0.3).max(1e-15);
                    improved = rel > 1e-15 || step > 1e-13;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !(p[0] > 0.0 && p[1] > 0.0) {
        return Err(Error::Fit(format!("fit diverged: amplitude {} width {}", p[0], p[1])));
    }
    Ok(LorentzianFit {
        amplitude: p[0] * peak * g0 * g0,
        gamma: p[1] * g0,
        offset: p[2] * peak,
        residual: (cost / x.len() as f64).sqrt(),
        iterations,
    })
}

/// Batched temporal periodograms of selected spatial Fourier modes.
pub struct DynamicSpectrum {
    nx: usize,
    ny: usize,
    modes: Vec<(usize, usize)>,
    /// Multiplies each mode amplitude before accumulation.
    scale: Vec<f64>,
    k: Vec<f64>,
    k_eff: Vec<f64>,
    batch_len: usize,
    dt: f64,
    norm: f64,
    fft: Fft2,
    tfft: Arc<dyn Fft<f64>>,
    buffer: Vec<Vec<Complex64>>,
    sums: Vec<Vec<f64>>,
    batches: usize,
}

impl DynamicSpectrum {
    /// `modes` are `(m_x, m_y)` FFT indices; samples are `dt_sample` apart.
    pub fn new(grid: &Grid2D, modes: &[(usize, usize)], batch_len: usize, dt_sample: f64) -> Result<Self> {
        if batch_len < 16 || !(dt_sample > 0.0) {
            return Err(Error::Usage("batch length must be at least 16 with positive spacing".into()));
        }
        let (kx, ky) = (fft_wavenumbers(grid.nx, grid.dx), fft_wavenumbers(grid.ny, grid.dy));
        for &(a, b) in modes {
            if a >= grid.nx || b >= grid.ny {
                return Err(Error::Usage(format!("mode ({a}, {b}) outside the grid")));
            }
        }
        let k = modes.iter().map(|&(a, b)| kx[a].hypot(ky[b])).collect();
        let k_eff = modes
            .iter()
            .map(|&(a, b)| effective_wavenumber(kx[a], grid.dx).hypot(effective_wavenumber(ky[b], grid.dy)))
            .collect();
        Ok(DynamicSpectrum {
            nx: grid.nx,
            ny: grid.ny,
            modes: modes.to_vec(),
            scale: vec![1.0; modes.len()],
            k,
            k_eff,
            batch_len,
            dt: dt_sample,
            norm: grid.cell_volume() / grid.n_cells() as f64 * dt_sample / batch_len as f64,
            fft: Fft2::new(grid.nx, grid.ny),
            tfft: FftPlanner::new().plan_fft_forward(batch_len),
            buffer: vec![Vec::with_capacity(batch_len); modes.len()],
            sums: vec![vec![0.0; batch_len]; modes.len()],
            batches: 0,
        })
    }

    /// Divides each mode amplitude by its modified wavenumber, turning
    /// vorticity into transverse velocity.
    pub fn scale_by_inverse_k(mut self) -> Self {
        self.scale = self.k_eff.iter().map(|k| if *k > 0.0 { 1.0 / k } else { 0.0 }).collect();
        self
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn k_eff(&self) -> &[f64] {
        &self.k_eff
    }

    pub fn completed_batches(&self) -> usize {
        self.batches
    }

    /// Adds one time sample of a row-major `nx` by `ny` field.
    pub fn push_field(&mut self, field: &[f64]) -> Result<()> {
        if field.len() != self.nx * self.ny {
            return Err(Error::Dimension("field does not match the dynamic-spectrum grid".into()));
        }
        let f = self.fft.forward(field);
        let z: Vec<Complex64> = self.modes.iter().zip(&self.scale).map(|(&(a, b), s)| f[b * self.nx + a] * *s).collect();
        self.push(&z)
    }

    /// Adds one time sample of the mode amplitudes.
    pub fn push(&mut self, z: &[Complex64]) -> Result<()> {
        if z.len() != self.modes.len() {
            return Err(Error::Dimension("wrong number of mode amplitudes".into()));
        }
        for (b, v) in self.buffer.iter_mut().zip(z) {
            b.push(*v);
        }
        if self.buffer[0].len() == self.batch_len {
            let tfft = &self.tfft;
            let done: Vec<Vec<f64>> = par::map_collect(self.buffer.len(), |m| {
                let mut a = self.buffer[m].clone();
                tfft.process(&mut a);
                a.iter().map(|v| v.norm_sqr()).collect()
            });
            for (s, d) in self.sums.iter_mut().zip(done) {
                s.iter_mut().zip(d).for_each(|(a, b)| *a += b);
            }
            self.buffer.iter_mut().for_each(|b| b.clear());
            self.batches += 1;
        }
        Ok(())
    }

    /// Angular frequencies in FFT order.
    pub fn omegas(&self) -> Vec<f64> {
        fft_wavenumbers(self.batch_len, self.dt)
    }

    /// Batch-averaged `S(k, ω)` of mode `m`.
    pub fn spectrum(&self, m: usize) -> Result<Vec<f64>> {
        if self.batches == 0 {
            return Err(Error::Statistics("no complete batch in the time series".into()));
        }
        let s = self.sums.get(m).ok_or_else(|| Error::Usage(format!("mode {m} out of range")))?;
        Ok(s.iter().map(|v| v * self.norm / self.batches as f64).collect())
    }

    /// Lorentzian fit of mode `m` over `|ω| ≤ window·Γ₀`, with `Γ₀` from the
    /// half-maximum; returns the fit and `ζ = Γ/k_eff²`.
    pub fn fit(&self, m: usize, window: f64) -> Result<(LorentzianFit, f64)> {
        let fit = windowed_lorentzian_fit(&self.omegas(), &self.spectrum(m)?, window)?;
        let k = self.k_eff[m];
        Ok((fit, fit.gamma / (k * k)))
    }

    /// Drops samples of an incomplete batch, e.g. between independent runs.
    pub fn discard_partial(&mut self) {
        self.buffer.iter_mut().for_each(|b| b.clear());
    }
}

/// Lorentzian fit restricted to `|ω| ≤ window·Γ₀`, with `Γ₀` from a fit to
/// the whole spectrum.
pub fn windowed_lorentzian_fit(omega: &[f64], s: &[f64], window: f64) -> Result<LorentzianFit> {
    let pre = lorentzian_fit(omega, s)?;
    let sel: Vec<usize> = (0..omega.len()).filter(|&i| omega[i].abs() <= window * pre.gamma).collect();
    if sel.len() < 16 {
        return Err(Error::Statistics(format!(
            "only {} frequency bins within the peak window; use longer batches",
            sel.len()
        )));
    }
    let w: Vec<f64> = sel.iter().map(|&i| omega[i]).collect();
    let v: Vec<f64> = sel.iter().map(|&i| s[i]).collect();
    lorentzian_fit(&w, &v)
}
