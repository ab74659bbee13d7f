//! Deterministic MAC stencils: divergence, gradient, diffusion, viscous
//! stress, scalar and momentum advection, and reservoir velocities.
//!
//! Face and node coefficients are always passed in pre-interpolated so that
//! the deterministic and stochastic fluxes share them.

use crate::eos::EosParams;
use crate::error::{Error, Result};
use crate::fields::{
    Axis, CellField, FaceBoundary, FaceVecField, Grid2D, NodeField, Side, Slip,
};
use crate::par;

/// MAC divergence of a face field.
pub fn divergence_cell(f: &FaceVecField, grid: &Grid2D) -> CellField {
    let (nx, nfx) = (grid.nx, grid.nfx());
    let mut out = CellField::zeros(grid);
    let (idx, idy) = (1.0 / grid.dx, 1.0 / grid.dy);
    par::for_rows(&mut out.data, nx, |j, row| {
        let (fb, ft) = grid.cell_faces(Axis::Y, j);
        for (i, o) in row.iter_mut().enumerate() {
            let (fl, fr) = grid.cell_faces(Axis::X, i);
            *o = (f.x[j * nfx + fr] - f.x[j * nfx + fl]) * idx
                + (f.y[ft * nx + i] - f.y[fb * nx + i]) * idy;
        }
    });
    out
}

/// Face gradient; zero on physical-boundary faces.
pub fn gradient_faces(phi: &CellField, grid: &Grid2D) -> FaceVecField {
    let (nx, nfx) = (grid.nx, grid.nfx());
    let mut out = FaceVecField::zeros(grid);
    let (idx, idy) = (1.0 / grid.dx, 1.0 / grid.dy);
    par::for_rows(&mut out.x, nfx, |j, row| {
        for (i, o) in row.iter_mut().enumerate() {
            if let (Some(l), Some(r)) = grid.face_cells(Axis::X, i) {
                *o = (phi.data[j * nx + r] - phi.data[j * nx + l]) * idx;
            }
        }
    });
    par::for_rows(&mut out.y, nx, |j, row| {
        if let (Some(b), Some(t)) = grid.face_cells(Axis::Y, j) {
            for (i, o) in row.iter_mut().enumerate() {
                *o = (phi.data[t * nx + i] - phi.data[b * nx + i]) * idy;
            }
        }
    });
    out
}

/// Diffusive mass flux `ρχ∇c` on faces. Reservoir faces use the one-sided
/// difference against the boundary concentration over half a cell; wall
/// faces carry no flux.
pub fn diffusive_flux(
    rho_faces: &FaceVecField,
    chi_faces: &FaceVecField,
    c: &CellField,
    grid: &Grid2D,
) -> FaceVecField {
    let (nx, nfx) = (grid.nx, grid.nfx());
    let mut out = FaceVecField::zeros(grid);
    let conc = |axis, side| grid.wall(axis, side).and_then(|w| w.concentration);
    let (cxl, cxh, cyl, cyh) = (
        conc(Axis::X, Side::Lo),
        conc(Axis::X, Side::Hi),
        conc(Axis::Y, Side::Lo),
        conc(Axis::Y, Side::Hi),
    );
    let (dx, dy) = (grid.dx, grid.dy);
    par::for_rows(&mut out.x, nfx, |j, row| {
        for (i, o) in row.iter_mut().enumerate() {
            let k = j * nfx + i;
            let grad = match grid.face_cells(Axis::X, i) {
                (Some(l), Some(r)) => (c.data[j * nx + r] - c.data[j * nx + l]) / dx,
                (None, Some(r)) => cxl.map_or(0.0, |cb| (c.data[j * nx + r] - cb) / (0.5 * dx)),
                (Some(l), None) => cxh.map_or(0.0, |cb| (cb - c.data[j * nx + l]) / (0.5 * dx)),
                (None, None) => unreachable!(),
            };
            *o = rho_faces.x[k] * chi_faces.x[k] * grad;
        }
    });
    par::for_rows(&mut out.y, nx, |j, row| {
        let cells = grid.face_cells(Axis::Y, j);
        for (i, o) in row.iter_mut().enumerate() {
            let k = j * nx + i;
            let grad = match cells {
                (Some(b), Some(t)) => (c.data[t * nx + i] - c.data[b * nx + i]) / dy,
                (None, Some(t)) => cyl.map_or(0.0, |cb| (c.data[t * nx + i] - cb) / (0.5 * dy)),
                (Some(b), None) => cyh.map_or(0.0, |cb| (cb - c.data[b * nx + i]) / (0.5 * dy)),
                (None, None) => unreachable!(),
            };
            *o = rho_faces.y[k] * chi_faces.y[k] * grad;
        }
    });
    out
}

/// `∇·(s v)` with face values `s_faces` already interpolated.
pub fn advective_flux_div(s_faces: &FaceVecField, v: &FaceVecField, grid: &Grid2D) -> CellField {
    let flux = s_faces.zip_map(v, |s, u| s * u);
    divergence_cell(&flux, grid)
}

/// Centered scalar advection `∇·(s v)`; boundary faces use `boundary`
/// values of `s` where given.
pub fn scalar_advection_div(
    s: &CellField,
    v: &FaceVecField,
    grid: &Grid2D,
    boundary: &FaceBoundary,
) -> Result<CellField> {
    v.check(grid)?;
    let sf = crate::fields::interp_cell_to_faces(s, grid, boundary)?;
    Ok(advective_flux_div(&sf, v, grid))
}

/// `∇·(m v)` for each momentum component on its shifted control volume.
/// Boundary faces are left at zero and fluxes through physical-boundary
/// nodes are not evaluated.
pub fn momentum_advection_div(m: &FaceVecField, v: &FaceVecField, grid: &Grid2D) -> FaceVecField {
    let (nx, ny, nfx, nfy) = (grid.nx, grid.ny, grid.nfx(), grid.nfy());
    // Cell-centered fluxes (m_x u) and (m_y v).
    let mut fxx = vec![0.0; nx * ny];
    let mut fyy = vec![0.0; nx * ny];
    par::for_rows(&mut fxx, nx, |j, row| {
        for (i, o) in row.iter_mut().enumerate() {
            let (l, r) = grid.cell_faces(Axis::X, i);
            let (a, b) = (j * nfx + l, j * nfx + r);
            *o = 0.25 * (m.x[a] + m.x[b]) * (v.x[a] + v.x[b]);
        }
    });
    par::for_rows(&mut fyy, nx, |j, row| {
        let (b, t) = grid.cell_faces(Axis::Y, j);
        for (i, o) in row.iter_mut().enumerate() {
            let (p, q) = (b * nx + i, t * nx + i);
            *o = 0.25 * (m.y[p] + m.y[q]) * (v.y[p] + v.y[q]);
        }
    });
    // Node fluxes (m_x v) and (m_y u); zero on physical-boundary nodes.
    let mut fxy = vec![0.0; nfx * nfy];
    let mut fyx = vec![0.0; nfx * nfy];
    par::for_rows(&mut fxy, nfx, |jn, row| {
        let (Some(b), Some(t)) = grid.face_cells(Axis::Y, jn) else { return };
        for (i, o) in row.iter_mut().enumerate() {
            if let (Some(l), Some(r)) = grid.face_cells(Axis::X, i) {
                let mx = 0.5 * (m.x[b * nfx + i] + m.x[t * nfx + i]);
                let vy = 0.5 * (v.y[jn * nx + l] + v.y[jn * nx + r]);
                *o = mx * vy;
            }
        }
    });
    par::for_rows(&mut fyx, nfx, |jn, row| {
        let (Some(b), Some(t)) = grid.face_cells(Axis::Y, jn) else { return };
        for (i, o) in row.iter_mut().enumerate() {
            if let (Some(l), Some(r)) = grid.face_cells(Axis::X, i) {
                let my = 0.5 * (m.y[jn * nx + l] + m.y[jn * nx + r]);
                let ux = 0.5 * (v.x[b * nfx + i] + v.x[t * nfx + i]);
                *o = my * ux;
            }
        }
    });
    stress_divergence(&fxx, &fyy, &fxy, &fyx, grid)
}

/// Divergence of a staggered tensor onto interior momentum faces: diagonal
/// entries `sxx`, `syy` at cells, off-diagonal `sxy` (x-momentum, y-flux)
/// and `syx` (y-momentum, x-flux) at nodes.
pub fn stress_divergence(
    sxx: &[f64],
    syy: &[f64],
    sxy: &[f64],
    syx: &[f64],
    grid: &Grid2D,
) -> FaceVecField {
    let (nx, nfx) = (grid.nx, grid.nfx());
    let (idx, idy) = (1.0 / grid.dx, 1.0 / grid.dy);
    let mut out = FaceVecField::zeros(grid);
    par::for_rows(&mut out.x, nfx, |j, row| {
        let (nb, nt) = grid.cell_faces(Axis::Y, j);
        for (i, o) in row.iter_mut().enumerate() {
            if let (Some(l), Some(r)) = grid.face_cells(Axis::X, i) {
                *o = (sxx[j * nx + r] - sxx[j * nx + l]) * idx
                    + (sxy[nt * nfx + i] - sxy[nb * nfx + i]) * idy;
            }
        }
    });
    par::for_rows(&mut out.y, nx, |j, row| {
        let (Some(b), Some(t)) = grid.face_cells(Axis::Y, j) else { return };
        for (i, o) in row.iter_mut().enumerate() {
            let (nl, nr) = grid.cell_faces(Axis::X, i);
            *o = (syy[t * nx + i] - syy[b * nx + i]) * idy
                + (syx[j * nfx + nr] - syx[j * nfx + nl]) * idx;
        }
    });
    out
}

/// Node viscosity: mean of the adjacent cells, or the boundary value on
/// physical-boundary nodes where one is supplied.
pub fn interp_eta_to_nodes(eta: &CellField, grid: &Grid2D, boundary: &FaceBoundary) -> Result<NodeField> {
    eta.check(grid)?;
    let nx = grid.nx;
    let mut out = NodeField::zeros(grid);
    let nnx = out.nnx;
    par::for_rows(&mut out.data, nnx, |jn, row| {
        let (b, t) = grid.face_cells(Axis::Y, jn);
        for (i, o) in row.iter_mut().enumerate() {
            let (l, r) = grid.face_cells(Axis::X, i);
            let xb = match (l, r) {
                (None, _) => boundary.x_lo,
                (_, None) => boundary.x_hi,
                _ => None,
            };
            let yb = match (b, t) {
                (None, _) => boundary.y_lo,
                (_, None) => boundary.y_hi,
                _ => None,
            };
            if let Some(v) = yb.or(xb) {
                *o = v;
                continue;
            }
            let (mut s, mut n) = (0.0, 0);
            for jj in [b, t].into_iter().flatten() {
                for ii in [l, r].into_iter().flatten() {
                    s += eta.data[jj * nx + ii];
                    n += 1;
                }
            }
            *o = s / n as f64;
        }
    });
    Ok(out)
}

/// Node shear stress `η_n(∂u/∂y + ∂v/∂x)` with one-sided no-slip closures;
/// zero on free-slip boundary nodes and on corners.
fn node_shear(
    u: &[f64],
    v: &[f64],
    eta_n: &NodeField,
    grid: &Grid2D,
) -> Vec<f64> {
    let (nx, nfx, nfy) = (grid.nx, grid.nfx(), grid.nfy());
    let (dx, dy) = (grid.dx, grid.dy);
    let mut out = vec![0.0; nfx * nfy];
    par::for_rows(&mut out, nfx, |jn, row| {
        let (b, t) = grid.face_cells(Axis::Y, jn);
        for (i, o) in row.iter_mut().enumerate() {
            let (l, r) = grid.face_cells(Axis::X, i);
            let du_dy = match (b, t) {
                (Some(b), Some(t)) => (u[t * nfx + i] - u[b * nfx + i]) / dy,
                (None, Some(t)) => match grid.wall(Axis::Y, Side::Lo).map(|w| w.slip) {
                    Some(Slip::NoSlip) => u[t * nfx + i] / (0.5 * dy),
                    _ => {
                        *o = 0.0;
                        continue;
                    }
                },
                (Some(b), None) => match grid.wall(Axis::Y, Side::Hi).map(|w| w.slip) {
                    Some(Slip::NoSlip) => -u[b * nfx + i] / (0.5 * dy),
                    _ => {
                        *o = 0.0;
                        continue;
                    }
                },
                (None, None) => unreachable!(),
            };
            let dv_dx = match (l, r) {
                (Some(l), Some(r)) => (v[jn * nx + r] - v[jn * nx + l]) / dx,
                (None, Some(r)) => match grid.wall(Axis::X, Side::Lo).map(|w| w.slip) {
                    Some(Slip::NoSlip) => v[jn * nx + r] / (0.5 * dx),
                    _ => {
                        *o = 0.0;
                        continue;
                    }
                },
                (Some(l), None) => match grid.wall(Axis::X, Side::Hi).map(|w| w.slip) {
                    Some(Slip::NoSlip) => -v[jn * nx + l] / (0.5 * dx),
                    _ => {
                        *o = 0.0;
                        continue;
                    }
                },
                (None, None) => unreachable!(),
            };
            if (b.is_none() || t.is_none()) && (l.is_none() || r.is_none()) {
                *o = 0.0;
                continue;
            }
            *o = eta_n.data[jn * nfx + i] * (du_dy + dv_dx);
        }
    });
    out
}

/// `∇·[η(∇v + ∇vᵀ)]` on interior momentum faces.
pub fn viscous_divergence(
    eta_cell: &CellField,
    eta_node: &NodeField,
    v: &FaceVecField,
    grid: &Grid2D,
) -> FaceVecField {
    let (nx, nfx) = (grid.nx, grid.nfx());
    let mut sxx = vec![0.0; grid.n_cells()];
    let mut syy = vec![0.0; grid.n_cells()];
    let (idx, idy) = (1.0 / grid.dx, 1.0 / grid.dy);
    par::for_rows(&mut sxx, nx, |j, row| {
        for (i, o) in row.iter_mut().enumerate() {
            let (l, r) = grid.cell_faces(Axis::X, i);
            *o = 2.0 * eta_cell.data[j * nx + i] * (v.x[j * nfx + r] - v.x[j * nfx + l]) * idx;
        }
    });
    par::for_rows(&mut syy, nx, |j, row| {
        let (b, t) = grid.cell_faces(Axis::Y, j);
        for (i, o) in row.iter_mut().enumerate() {
            *o = 2.0 * eta_cell.data[j * nx + i] * (v.y[t * nx + i] - v.y[b * nx + i]) * idy;
        }
    });
    let sxy = node_shear(&v.x, &v.y, eta_node, grid);
    stress_divergence(&sxx, &syy, &sxy, &sxy, grid)
}

/// Normal velocity `v_n = −(β/ρ) F_n` on a reservoir face.
pub fn reservoir_normal_velocity(f_n: f64, p: &EosParams) -> f64 {
    -p.beta_over_rho() * f_n
}

/// Checked variant of [`reservoir_normal_velocity`] for a given side.
pub fn reservoir_normal_velocity_at(
    grid: &Grid2D,
    axis: Axis,
    side: Side,
    f_n: f64,
    p: &EosParams,
) -> Result<f64> {
    match grid.wall(axis, side) {
        Some(w) if w.concentration.is_some() => Ok(reservoir_normal_velocity(f_n, p)),
        _ => Err(Error::Usage(format!("{axis:?}-{side:?} side is not a reservoir"))),
    }
}

/// Writes the constraint-determined normal velocity into the physical
/// boundary faces of `v`: `−(β/ρ)F_n` on reservoirs, zero on walls.
pub fn set_boundary_normal_velocity(v: &mut FaceVecField, flux: &FaceVecField, grid: &Grid2D, p: &EosParams) {
    let (nx, nfx) = (grid.nx, grid.nfx());
    for side in [Side::Lo, Side::Hi] {
        if let Some(w) = grid.wall(Axis::X, side) {
            let i = if side == Side::Lo { 0 } else { grid.nx };
            for j in 0..grid.ny {
                let k = j * nfx + i;
                v.x[k] = if w.concentration.is_some() { reservoir_normal_velocity(flux.x[k], p) } else { 0.0 };
            }
        }
        if let Some(w) = grid.wall(Axis::Y, side) {
            let j = if side == Side::Lo { 0 } else { grid.ny };
            for i in 0..nx {
                let k = j * nx + i;
                v.y[k] = if w.concentration.is_some() { reservoir_normal_velocity(flux.y[k], p) } else { 0.0 };
            }
        }
    }
}

/// Sets every physical-boundary face of `f` to zero.
pub fn zero_boundary_faces(f: &mut FaceVecField, grid: &Grid2D) {
    let nfx = grid.nfx();
    if !grid.is_periodic(Axis::X) {
        for j in 0..grid.ny {
            f.x[j * nfx] = 0.0;
            f.x[j * nfx + grid.nx] = 0.0;
        }
    }
    if !grid.is_periodic(Axis::Y) {
        let nx = grid.nx;
        f.y[..nx].iter_mut().for_each(|v| *v = 0.0);
        f.y[grid.ny * nx..].iter_mut().for_each(|v| *v = 0.0);
    }
}
