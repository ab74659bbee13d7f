//! Variable-coefficient Poisson solver and the constraint projection.
//!
//! The discrete operator is `L φ = ∇·(b ∇φ)` with `b = 1/ρ` on interior faces
//! and zero on physical-boundary faces, so every problem carries the
//! constant nullspace. We solve the positive semidefinite form `−L`, using a
//! cell-centered geometric multigrid V-cycle either directly or as the
//! preconditioner of conjugate gradients.

use crate::eos::EosParams;
use crate::error::{Error, Result};
use crate::fields::{Axis, CellField, FaceVecField, Grid2D};
use crate::operators::{divergence_cell, gradient_faces};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Maximum CG iterations or V-cycles.
    pub max_iters: usize,
    pub pre_smooth: usize,
    pub post_smooth: usize,
    /// Coarsening stops once a level has at most this many cells.
    pub coarsest_cells: usize,
    /// Wrap the V-cycle in preconditioned conjugate gradients.
    pub use_cg: bool,
}

impl Default for PoissonSettings {
    fn default() -> Self {
        PoissonSettings {
            rel_tol: 1e-11,
            abs_tol: 1e-300,
            max_iters: 100,
            pre_smooth: 2,
            post_smooth: 2,
            coarsest_cells: 16,
            use_cg: true,
        }
    }
}

impl PoissonSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) || self.max_iters == 0 {
            return Err(Error::Config("Poisson tolerances and iteration limit must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoissonStats {
    pub iterations: usize,
    /// Final `‖r‖₂/‖rhs‖₂`.
    pub rel_residual: f64,
    /// Mean removed from the right-hand side for solvability.
    pub removed_mean: f64,
}

/// Largest relative imbalance of `Σ rhs` accepted as roundoff.
const COMPATIBILITY_TOL: f64 = 1e-10;

struct Level {
    n: usize,
    nx: usize,
    ny: usize,
    px: bool,
    py: bool,
    nfx: usize,
    /// Face coefficients divided by h².
    cx: Vec<f64>,
    cy: Vec<f64>,
    diag: Vec<f64>,
}

impl Level {
    fn from_faces(nx: usize, ny: usize, px: bool, py: bool, bx: Vec<f64>, by: Vec<f64>, hx: f64, hy: f64) -> Self {
        let nfx = nx + usize::from(!px);
        let cx: Vec<f64> = bx.iter().map(|b| b / (hx * hx)).collect();
        let cy: Vec<f64> = by.iter().map(|b| b / (hy * hy)).collect();
        let mut lvl = Level { n: nx * ny, nx, ny, px, py, nfx, cx, cy, diag: vec![0.0; nx * ny] };
        let mut diag = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let (fl, fr, fb, ft) = lvl.faces(i, j);
                diag[j * nx + i] = lvl.cx[fl] + lvl.cx[fr] + lvl.cy[fb] + lvl.cy[ft];
            }
        }
        lvl.diag = diag;
        lvl
    }

    #[inline]
    fn faces(&self, i: usize, j: usize) -> (usize, usize, usize, usize) {
        let ir = if self.px && i + 1 == self.nx { 0 } else { i + 1 };
        let jt = if self.py && j + 1 == self.ny { 0 } else { j + 1 };
        (j * self.nfx + i, j * self.nfx + ir, j * self.nx + i, jt * self.nx + i)
    }

    /// Neighbour cell indices; walls clamp to the cell itself (the face
    /// coefficient there is zero).
    #[inline]
    fn neighbours(&self, i: usize, j: usize) -> (usize, usize, usize, usize) {
        let (nx, ny) = (self.nx, self.ny);
        let il = if i == 0 { if self.px { nx - 1 } else { 0 } } else { i - 1 };
        let ir = if i + 1 == nx { if self.px { 0 } else { i } } else { i + 1 };
        let jb = if j == 0 { if self.py { ny - 1 } else { 0 } } else { j - 1 };
        let jt = if j + 1 == ny { if self.py { 0 } else { j } } else { j + 1 };
        (j * nx + il, j * nx + ir, jb * nx + i, jt * nx + i)
    }

    #[inline]
    fn offdiag_sum(&self, phi: &[f64], i: usize, j: usize) -> f64 {
        let (fl, fr, fb, ft) = self.faces(i, j);
        let (l, r, b, t) = self.neighbours(i, j);
        self.cx[fl] * phi[l] + self.cx[fr] * phi[r] + self.cy[fb] * phi[b] + self.cy[ft] * phi[t]
    }

    /// `out = A φ` with `A = −L`.
    fn apply(&self, phi: &[f64], out: &mut [f64]) {
        par::for_rows(out, self.nx, |j, row| {
            for (i, o) in row.iter_mut().enumerate() {
                *o = self.diag[j * self.nx + i] * phi[j * self.nx + i] - self.offdiag_sum(phi, i, j);
            }
        });
    }

    fn residual(&self, phi: &[f64], rhs: &[f64], out: &mut [f64]) {
        par::for_rows(out, self.nx, |j, row| {
            for (i, o) in row.iter_mut().enumerate() {
                let k = j * self.nx + i;
                *o = rhs[k] - (self.diag[k] * phi[k] - self.offdiag_sum(phi, i, j));
            }
        });
    }

    /// One red-black half sweep. New values of the colour are computed from
    /// the current iterate and then written, so the result does not depend
    /// on traversal order even when periodic wrap joins equal colours.
    fn smooth_colour(&self, phi: &mut [f64], rhs: &[f64], colour: usize, scratch: &mut [f64]) {
        {
            let p: &[f64] = phi;
            par::for_rows(scratch, self.nx, |j, row| {
                let start = (colour + j) % 2;
                for i in (start..self.nx).step_by(2) {
                    let k = j * self.nx + i;
                    let d = self.diag[k];
                    row[i] = if d > 0.0 { (rhs[k] + self.offdiag_sum(p, i, j)) / d } else { p[k] };
                }
            });
        }
        for j in 0..self.ny {
            let start = (colour + j) % 2;
            for i in (start..self.nx).step_by(2) {
                let k = j * self.nx + i;
                phi[k] = scratch[k];
            }
        }
    }

    fn can_coarsen(&self) -> bool {
        self.nx.is_multiple_of(2) && self.ny.is_multiple_of(2) && self.nx >= 4 && self.ny >= 4
    }

    fn coarsen(&self, hx: f64, hy: f64) -> Level {
        let (nxc, nyc) = (self.nx / 2, self.ny / 2);
        let nfxc = nxc + usize::from(!self.px);
        let nfyc = nyc + usize::from(!self.py);
        // Undo the h² scaling of this level to average raw coefficients.
        let (sx, sy) = (hx * hx, hy * hy);
        let mut bx = vec![0.0; nfxc * nyc];
        for jc in 0..nyc {
            for ic in 0..nfxc {
                let f = 2 * ic;
                bx[jc * nfxc + ic] =
                    0.5 * sx * (self.cx[2 * jc * self.nfx + f] + self.cx[(2 * jc + 1) * self.nfx + f]);
            }
        }
        let mut by = vec![0.0; nxc * nfyc];
        for jc in 0..nfyc {
            for ic in 0..nxc {
                let f = 2 * jc;
                by[jc * nxc + ic] = 0.5 * sy * (self.cy[f * self.nx + 2 * ic] + self.cy[f * self.nx + 2 * ic + 1]);
            }
        }
        Level::from_faces(nxc, nyc, self.px, self.py, bx, by, 2.0 * hx, 2.0 * hy)
    }

    fn restrict(&self, fine: &[f64], coarse: &mut [f64]) {
        let nxc = self.nx / 2;
        par::for_rows(coarse, nxc, |jc, row| {
            for (ic, o) in row.iter_mut().enumerate() {
                let (i, j) = (2 * ic, 2 * jc);
                *o = 0.25
                    * (fine[j * self.nx + i]
                        + fine[j * self.nx + i + 1]
                        + fine[(j + 1) * self.nx + i]
                        + fine[(j + 1) * self.nx + i + 1]);
            }
        });
    }

    /// Adds the bilinear interpolation of the coarse correction.
    fn prolong_add(&self, coarse: &[f64], fine: &mut [f64]) {
        let (nxc, nyc) = (self.nx / 2, self.ny / 2);
        let (px, py) = (self.px, self.py);
        let nb = |c: usize, odd: bool, n: usize, periodic: bool| -> usize {
            if odd {
                if c + 1 < n { c + 1 } else if periodic { 0 } else { c }
            } else if c > 0 {
                c - 1
            } else if periodic {
                n - 1
            } else {
                c
            }
        };
        par::for_rows(fine, self.nx, |j, row| {
            let jc = j / 2;
            let jn = nb(jc, j % 2 == 1, nyc, py);
            for (i, o) in row.iter_mut().enumerate() {
                let ic = i / 2;
                let inb = nb(ic, i % 2 == 1, nxc, px);
                *o += 0.5625 * coarse[jc * nxc + ic]
                    + 0.1875 * (coarse[jc * nxc + inb] + coarse[jn * nxc + ic])
                    + 0.0625 * coarse[jn * nxc + inb];
            }
        });
    }
}

/// LU factors (partial pivoting) of the coarsest operator with the constant
/// nullspace lifted by a rank-one shift.
struct DenseLu {
    n: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
}

impl DenseLu {
    fn new(l: &Level) -> Result<Self> {
        let n = l.n;
        let mut a = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for c in 0..n {
            e[c] = 1.0;
            l.apply(&e, &mut col);
            for r in 0..n {
                a[r * n + c] = col[r];
            }
            e[c] = 0.0;
        }
        let shift = l.diag.iter().cloned().fold(0.0, f64::max).max(1e-300) / n as f64;
        a.iter_mut().for_each(|v| *v += shift);
        let mut piv = (0..n).collect::<Vec<_>>();
        for k in 0..n {
            let p = (k..n).max_by(|&x, &y| a[x * n + k].abs().total_cmp(&a[y * n + k].abs())).unwrap();
            if a[p * n + k].abs() < 1e-300 {
                return Err(Error::Degenerate("singular coarse-grid operator".into()));
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                piv.swap(k, p);
            }
            let d = a[k * n + k];
            for r in k + 1..n {
                let f = a[r * n + k] / d;
                a[r * n + k] = f;
                for c in k + 1..n {
                    a[r * n + c] -= f * a[k * n + c];
                }
            }
        }
        Ok(DenseLu { n, a, piv })
    }

    fn solve(&self, b: &[f64], x: &mut [f64]) {
        let n = self.n;
        for r in 0..n {
            let mut s = b[self.piv[r]];
            for c in 0..r {
                s -= self.a[r * n + c] * x[c];
            }
            x[r] = s;
        }
        for r in (0..n).rev() {
            let mut s = x[r];
            for c in r + 1..n {
                s -= self.a[r * n + c] * x[c];
            }
            x[r] = s / self.a[r * n + r];
        }
    }
}

/// Multigrid hierarchy for one set of face coefficients.
pub struct Multigrid {
    levels: Vec<Level>,
    coarse: DenseLu,
    settings: PoissonSettings,
}

fn remove_mean(v: &mut [f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
    m
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest coarsest level accepted for the dense solve.
const MAX_DENSE: usize = 2048;

impl Multigrid {
    /// Builds the hierarchy from face coefficients `b` (boundary faces are
    /// ignored and treated as zero).
    pub fn new(b: &FaceVecField, grid: &Grid2D, settings: &PoissonSettings) -> Result<Self> {
        b.check(grid)?;
        let mut bx = b.x.clone();
        let mut by = b.y.clone();
        let (nx, ny, nfx) = (grid.nx, grid.ny, grid.nfx());
        for j in 0..ny {
            for i in 0..nfx {
                if grid.is_boundary_face(Axis::X, i).is_some() {
                    bx[j * nfx + i] = 0.0;
                }
            }
        }
        for j in 0..grid.nfy() {
            if grid.is_boundary_face(Axis::Y, j).is_some() {
                by[j * nx..(j + 1) * nx].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let (px, py) = (grid.is_periodic(Axis::X), grid.is_periodic(Axis::Y));
        let mut levels = vec![Level::from_faces(nx, ny, px, py, bx, by, grid.dx, grid.dy)];
        let (mut hx, mut hy) = (grid.dx, grid.dy);
        while levels.last().unwrap().n > settings.coarsest_cells && levels.last().unwrap().can_coarsen() {
            let next = levels.last().unwrap().coarsen(hx, hy);
            hx *= 2.0;
            hy *= 2.0;
            levels.push(next);
        }
        let last = levels.last().unwrap();
        if last.n > MAX_DENSE {
            return Err(Error::Config(format!(
                "grid {nx}x{ny} coarsens only to {}x{} cells; use dimensions with more factors of two",
                last.nx, last.ny
            )));
        }
        let coarse = DenseLu::new(last)?;
        Ok(Multigrid { levels, coarse, settings: *settings })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    fn vcycle_level(&self, lev: usize, phi: &mut [f64], rhs: &[f64]) {
        let l = &self.levels[lev];
        if lev + 1 == self.levels.len() {
            let mut b = rhs.to_vec();
            remove_mean(&mut b);
            self.coarse.solve(&b, phi);
            return;
        }
        let mut scratch = vec![0.0; l.n];
        for _ in 0..self.settings.pre_smooth {
            l.smooth_colour(phi, rhs, 0, &mut scratch);
            l.smooth_colour(phi, rhs, 1, &mut scratch);
        }
        let mut r = vec![0.0; l.n];
        l.residual(phi, rhs, &mut r);
        let c = &self.levels[lev + 1];
        let mut rc = vec![0.0; c.n];
        l.restrict(&r, &mut rc);
        let mut ec = vec![0.0; c.n];
        self.vcycle_level(lev + 1, &mut ec, &rc);
        l.prolong_add(&ec, phi);
        for _ in 0..self.settings.post_smooth {
            l.smooth_colour(phi, rhs, 1, &mut scratch);
            l.smooth_colour(phi, rhs, 0, &mut scratch);
        }
    }

    /// One V-cycle on `A φ = rhs` (`A = −L`), updating `phi` in place.
    pub fn vcycle(&self, phi: &mut [f64], rhs: &[f64]) {
        self.vcycle_level(0, phi, rhs);
    }

    /// `out = A φ` on the finest level.
    pub fn apply(&self, phi: &[f64], out: &mut [f64]) {
        self.levels[0].apply(phi, out);
    }

    /// Solves `A φ = b` for mean-zero `b`; returns the mean-zero solution.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, PoissonStats)> {
        let n = b.len();
        let bnorm = dot(b, b).sqrt();
        let mut x = vec![0.0; n];
        let mut stats = PoissonStats::default();
        if bnorm <= self.settings.abs_tol {
            return Ok((x, stats));
        }
        let target = (self.settings.rel_tol * bnorm).max(self.settings.abs_tol);
        let mut r = b.to_vec();
        let mut rnorm = bnorm;
        if self.settings.use_cg {
            let mut z = vec![0.0; n];
            self.vcycle(&mut z, &r);
            remove_mean(&mut z);
            let mut p = z.clone();
            let mut rz = dot(&r, &z);
            let mut ap = vec![0.0; n];
            while stats.iterations < self.settings.max_iters {
                self.apply(&p, &mut ap);
                let alpha = rz / dot(&p, &ap);
                for k in 0..n {
                    x[k] += alpha * p[k];
                    r[k] -= alpha * ap[k];
                }
                stats.iterations += 1;
                rnorm = dot(&r, &r).sqrt();
                if rnorm <= target {
                    break;
                }
                z.iter_mut().for_each(|v| *v = 0.0);
                self.vcycle(&mut z, &r);
                remove_mean(&mut z);
                let rz_new = dot(&r, &z);
                let beta = rz_new / rz;
                rz = rz_new;
                for k in 0..n {
                    p[k] = z[k] + beta * p[k];
                }
            }
        } else {
            while stats.iterations < self.settings.max_iters {
                self.vcycle(&mut x, b);
                stats.iterations += 1;
                self.levels[0].residual(&x, b, &mut r);
                rnorm = dot(&r, &r).sqrt();
                if rnorm <= target {
                    break;
                }
            }
        }
        remove_mean(&mut x);
        stats.rel_residual = rnorm / bnorm;
        if !rnorm.is_finite() || rnorm > target {
            return Err(Error::NoConvergence { iterations: stats.iterations, residual: stats.rel_residual });
        }
        Ok((x, stats))
    }
}

/// Solves `∇·(ρ⁻¹∇φ) = rhs` with natural Neumann conditions on physical
/// boundaries; `φ` is returned with zero mean.
pub fn solve_variable_poisson(
    rho_faces: &FaceVecField,
    rhs: &CellField,
    grid: &Grid2D,
    settings: &PoissonSettings,
) -> Result<(CellField, PoissonStats)> {
    rhs.check(grid)?;
    let b = interior_inverse(rho_faces, grid, 0.0)?;
    solve_with_coefficients(&b, rhs, grid, settings, 0.0)
}

fn interior_inverse(rho_faces: &FaceVecField, grid: &Grid2D, floor: f64) -> Result<FaceVecField> {
    rho_faces.check(grid)?;
    let mut b = rho_faces.clone();
    let nfx = grid.nfx();
    for (k, v) in b.x.iter_mut().enumerate() {
        if grid.is_boundary_face(Axis::X, k % nfx).is_some() {
            *v = 0.0;
        } else if !(*v > floor) {
            return Err(Error::Degenerate(format!("face density {v} below floor {floor:e}")));
        } else {
            *v = 1.0 / *v;
        }
    }
    for (k, v) in b.y.iter_mut().enumerate() {
        if grid.is_boundary_face(Axis::Y, k / grid.nx).is_some() {
            *v = 0.0;
        } else if !(*v > floor) {
            return Err(Error::Degenerate(format!("face density {v} below floor {floor:e}")));
        } else {
            *v = 1.0 / *v;
        }
    }
    Ok(b)
}

fn solve_with_coefficients(
    b: &FaceVecField,
    rhs: &CellField,
    grid: &Grid2D,
    settings: &PoissonSettings,
    input_scale: f64,
) -> Result<(CellField, PoissonStats)> {
    settings.validate()?;
    let total: f64 = rhs.data.iter().sum();
    let scale: f64 = rhs.data.iter().map(|v| v.abs()).sum();
    // `input_scale` bounds the roundoff of a right-hand side that cancels
    // almost exactly.
    if total.abs() > COMPATIBILITY_TOL * scale + 64.0 * f64::EPSILON * input_scale {
        return Err(Error::Solvability(total.abs() / scale));
    }
    // Work with A = −L.
    let mut neg: Vec<f64> = rhs.data.iter().map(|v| -v).collect();
    let removed = -remove_mean(&mut neg);
    let mg = Multigrid::new(b, grid, settings)?;
    let (phi, mut stats) = mg.solve(&neg)?;
    stats.removed_mean = removed;
    Ok((CellField { nx: grid.nx, ny: grid.ny, data: phi }, stats))
}

/// `S = (1/ρ̄₁ − 1/ρ̄₂) ∇·F`.
pub fn compute_s(flux: &FaceVecField, grid: &Grid2D, eos: &EosParams) -> CellField {
    let mut s = divergence_cell(flux, grid);
    let k = eos.contrast();
    s.data.iter_mut().for_each(|v| *v *= k);
    s
}

/// Applies `R_F`: returns `m = m̃ − ∇φ` such that `v = m/ρ_face` satisfies
/// `∇·v = S`. Physical-boundary faces of `m_tilde` must already carry the
/// boundary momentum; they are not modified.
pub fn project_rs(
    m_tilde: &FaceVecField,
    rho_faces: &FaceVecField,
    s: &CellField,
    grid: &Grid2D,
    eos: &EosParams,
    settings: &PoissonSettings,
) -> Result<(FaceVecField, PoissonStats)> {
    m_tilde.check(grid)?;
    s.check(grid)?;
    let floor = 1e-12 * eos.rho1_bar.max(eos.rho2_bar);
    let b = interior_inverse(rho_faces, grid, floor)?;
    let v = m_tilde.zip_map(rho_faces, |m, r| m / r);
    let mut rhs = divergence_cell(&v, grid);
    rhs.axpy(-1.0, s);
    let input_scale =
        grid.n_cells() as f64 * (v.max_abs() * (2.0 / grid.dx + 2.0 / grid.dy) + s.max_abs());
    let (phi, stats) = solve_with_coefficients(&b, &rhs, grid, settings, input_scale)?;
    let mut m = m_tilde.clone();
    m.axpy(-1.0, &gradient_faces(&phi, grid));
    Ok((m, stats))
}
