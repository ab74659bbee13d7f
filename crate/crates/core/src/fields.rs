//! Grid geometry, boundary conditions and staggered field containers.
//!
//! Storage is dense and row-major with `i` (x) fastest. Cell `(i, j)` has
//! its center at `((i+½)Δx, (j+½)Δy)`. The x-face with index `i` lies on the
//! left edge of cell `i`, the y-face with index `j` on the bottom edge of
//! cell `j`, and node `(i, j)` on the lower-left corner of cell `(i, j)`.
//! In a periodic direction the redundant last face/node is not stored; in a
//! walled direction there are `n + 1` faces and nodes.

use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Lo,
    Hi,
}

/// Tangential velocity condition on a wall.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slip {
    NoSlip,
    FreeSlip,
}

/// One physical boundary. A `Some` concentration makes the side a reservoir
/// (Dirichlet concentration, normal velocity slaved to the mass flux);
/// `None` is an impermeable zero-flux wall.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wall {
    pub concentration: Option<f64>,
    pub slip: Slip,
}

impl Wall {
    pub fn no_slip() -> Self {
        Wall { concentration: None, slip: Slip::NoSlip }
    }

    pub fn free_slip() -> Self {
        Wall { concentration: None, slip: Slip::FreeSlip }
    }

    /// Reservoir with a no-slip tangential condition.
    pub fn reservoir(c: f64) -> Self {
        Wall { concentration: Some(c), slip: Slip::NoSlip }
    }

    pub fn with_slip(mut self, slip: Slip) -> Self {
        self.slip = slip;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AxisBc {
    Periodic,
    Walls { lo: Wall, hi: Wall },
}

impl AxisBc {
    pub fn is_periodic(&self) -> bool {
        matches!(self, AxisBc::Periodic)
    }

    pub fn wall(&self, side: Side) -> Option<&Wall> {
        match (self, side) {
            (AxisBc::Periodic, _) => None,
            (AxisBc::Walls { lo, .. }, Side::Lo) => Some(lo),
            (AxisBc::Walls { hi, .. }, Side::Hi) => Some(hi),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub thickness: f64,
    pub bc_x: AxisBc,
    pub bc_y: AxisBc,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Config(format!("grid must be at least 2x2, got {nx}x{ny}")));
        }
        if !(dx > 0.0 && dy > 0.0) || !dx.is_finite() || !dy.is_finite() {
            return Err(Error::Config(format!("cell sizes must be positive, got {dx}, {dy}")));
        }
        Ok(Grid2D {
            nx,
            ny,
            dx,
            dy,
            thickness: 1.0,
            bc_x: AxisBc::Periodic,
            bc_y: AxisBc::Periodic,
        })
    }

    /// Fully periodic square-cell grid.
    pub fn periodic(nx: usize, ny: usize, h: f64) -> Result<Self> {
        Self::new(nx, ny, h, h)
    }

    pub fn with_thickness(mut self, thickness: f64) -> Result<Self> {
        if !(thickness > 0.0) {
            return Err(Error::Config(format!("thickness must be positive, got {thickness}")));
        }
        self.thickness = thickness;
        Ok(self)
    }

    pub fn with_bc(mut self, bc_x: AxisBc, bc_y: AxisBc) -> Self {
        self.bc_x = bc_x;
        self.bc_y = bc_y;
        self
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.thickness
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn lx(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn ly(&self) -> f64 {
        self.ny as f64 * self.dy
    }

    pub fn bc(&self, axis: Axis) -> &AxisBc {
        match axis {
            Axis::X => &self.bc_x,
            Axis::Y => &self.bc_y,
        }
    }

    pub fn is_periodic(&self, axis: Axis) -> bool {
        self.bc(axis).is_periodic()
    }

    pub fn all_periodic(&self) -> bool {
        self.bc_x.is_periodic() && self.bc_y.is_periodic()
    }

    pub fn wall(&self, axis: Axis, side: Side) -> Option<&Wall> {
        self.bc(axis).wall(side)
    }

    /// Number of cells along `axis`.
    pub fn n(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.nx,
            Axis::Y => self.ny,
        }
    }

    pub fn h(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.dx,
            Axis::Y => self.dy,
        }
    }

    /// Number of face (or node) positions along `axis`.
    pub fn nf(&self, axis: Axis) -> usize {
        self.n(axis) + usize::from(!self.is_periodic(axis))
    }

    pub fn nfx(&self) -> usize {
        self.nf(Axis::X)
    }

    pub fn nfy(&self) -> usize {
        self.nf(Axis::Y)
    }

    /// Cells below and above face position `f` along `axis`; `None` marks a
    /// physical boundary.
    #[inline]
    pub fn face_cells(&self, axis: Axis, f: usize) -> (Option<usize>, Option<usize>) {
        let n = self.n(axis);
        if self.is_periodic(axis) {
            (Some(if f == 0 { n - 1 } else { f - 1 }), Some(f))
        } else {
            (if f == 0 { None } else { Some(f - 1) }, if f == n { None } else { Some(f) })
        }
    }

    /// Lower and upper face positions of cell `c` along `axis`.
    #[inline]
    pub fn cell_faces(&self, axis: Axis, c: usize) -> (usize, usize) {
        let n = self.n(axis);
        if self.is_periodic(axis) {
            (c, if c + 1 == n { 0 } else { c + 1 })
        } else {
            (c, c + 1)
        }
    }

    /// True if face position `f` along `axis` lies on a physical boundary.
    #[inline]
    pub fn is_boundary_face(&self, axis: Axis, f: usize) -> Option<Side> {
        if self.is_periodic(axis) {
            None
        } else if f == 0 {
            Some(Side::Lo)
        } else if f == self.n(axis) {
            Some(Side::Hi)
        } else {
            None
        }
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellField {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
}

impl CellField {
    pub fn zeros(grid: &Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid2D, v: f64) -> Self {
        CellField { nx: grid.nx, ny: grid.ny, data: vec![v; grid.n_cells()] }
    }

    pub fn from_fn(grid: &Grid2D, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.n_cells());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                data.push(f(i, j));
            }
        }
        CellField { nx: grid.nx, ny: grid.ny, data }
    }

    pub fn from_vec(grid: &Grid2D, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.n_cells() {
            return Err(Error::Dimension(format!(
                "cell field of length {} on a {}x{} grid",
                data.len(),
                grid.nx,
                grid.ny
            )));
        }
        Ok(CellField { nx: grid.nx, ny: grid.ny, data })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nx + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.nx + i] = v;
    }

    pub fn check(&self, grid: &Grid2D) -> Result<()> {
        if self.nx != grid.nx || self.ny != grid.ny || self.data.len() != grid.n_cells() {
            return Err(Error::Dimension(format!(
                "cell field {}x{} on grid {}x{}",
                self.nx, self.ny, grid.nx, grid.ny
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        CellField { nx: self.nx, ny: self.ny, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &CellField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.data.len(), other.data.len());
        CellField {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &CellField) {
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Staggered vector field: `x` on x-faces (`nfx` by `ny`), `y` on y-faces
/// (`nx` by `nfy`).
#[derive(Clone, Debug, PartialEq)]
pub struct FaceVecField {
    pub nx: usize,
    pub ny: usize,
    pub nfx: usize,
    pub nfy: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FaceVecField {
    pub fn zeros(grid: &Grid2D) -> Self {
        Self::constant(grid, 0.0, 0.0)
    }

    pub fn constant(grid: &Grid2D, vx: f64, vy: f64) -> Self {
        let (nfx, nfy) = (grid.nfx(), grid.nfy());
        FaceVecField {
            nx: grid.nx,
            ny: grid.ny,
            nfx,
            nfy,
            x: vec![vx; nfx * grid.ny],
            y: vec![vy; grid.nx * nfy],
        }
    }

    /// Builds a field from functions of the face indices.
    pub fn from_fn(
        grid: &Grid2D,
        fx: impl Fn(usize, usize) -> f64,
        fy: impl Fn(usize, usize) -> f64,
    ) -> Self {
        let mut out = Self::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..out.nfx {
                out.x[j * out.nfx + i] = fx(i, j);
            }
        }
        for j in 0..out.nfy {
            for i in 0..grid.nx {
                out.y[j * grid.nx + i] = fy(i, j);
            }
        }
        out
    }

    #[inline]
    pub fn xat(&self, i: usize, j: usize) -> f64 {
        self.x[j * self.nfx + i]
    }

    #[inline]
    pub fn yat(&self, i: usize, j: usize) -> f64 {
        self.y[j * self.nx + i]
    }

    pub fn component(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
        }
    }

    pub fn check(&self, grid: &Grid2D) -> Result<()> {
        if self.nx != grid.nx
            || self.ny != grid.ny
            || self.nfx != grid.nfx()
            || self.nfy != grid.nfy()
            || self.x.len() != self.nfx * self.ny
            || self.y.len() != self.nx * self.nfy
        {
            return Err(Error::Dimension(format!(
                "face field ({}+{})x({}+{}) on grid {}x{}",
                self.nx,
                self.nfx - self.nx,
                self.ny,
                self.nfy - self.ny,
                grid.nx,
                grid.ny
            )));
        }
        Ok(())
    }

    pub fn axpy(&mut self, a: f64, other: &FaceVecField) {
        for (s, v) in self.x.iter_mut().zip(&other.x) {
            *s += a * v;
        }
        for (s, v) in self.y.iter_mut().zip(&other.y) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.x.iter_mut().chain(self.y.iter_mut()).for_each(|v| *v *= a);
    }

    pub fn zip_map(&self, other: &FaceVecField, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = self.clone();
        for (o, v) in out.x.iter_mut().zip(&other.x) {
            *o = f(*o, *v);
        }
        for (o, v) in out.y.iter_mut().zip(&other.y) {
            *o = f(*o, *v);
        }
        out
    }

    /// Dot product over all stored faces.
    pub fn dot(&self, other: &FaceVecField) -> f64 {
        self.x.iter().zip(&other.x).map(|(a, b)| a * b).sum::<f64>()
            + self.y.iter().zip(&other.y).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.x.iter().chain(&self.y).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Scalar at cell corners, `nfx` by `nfy`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeField {
    pub nnx: usize,
    pub nny: usize,
    pub data: Vec<f64>,
}

impl NodeField {
    pub fn zeros(grid: &Grid2D) -> Self {
        let (nnx, nny) = (grid.nfx(), grid.nfy());
        NodeField { nnx, nny, data: vec![0.0; nnx * nny] }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nnx + i]
    }
}

/// Face-boundary values used by [`interp_cell_to_faces`]. `None` copies the
/// adjacent interior cell.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FaceBoundary {
    pub x_lo: Option<f64>,
    pub x_hi: Option<f64>,
    pub y_lo: Option<f64>,
    pub y_hi: Option<f64>,
}

impl FaceBoundary {
    pub fn get(&self, axis: Axis, side: Side) -> Option<f64> {
        match (axis, side) {
            (Axis::X, Side::Lo) => self.x_lo,
            (Axis::X, Side::Hi) => self.x_hi,
            (Axis::Y, Side::Lo) => self.y_lo,
            (Axis::Y, Side::Hi) => self.y_hi,
        }
    }

    /// Boundary values obtained by evaluating `f` at each reservoir
    /// concentration.
    pub fn from_reservoirs(grid: &Grid2D, f: impl Fn(f64) -> f64) -> Self {
        let val = |axis, side| grid.wall(axis, side).and_then(|w| w.concentration).map(&f);
        FaceBoundary {
            x_lo: val(Axis::X, Side::Lo),
            x_hi: val(Axis::X, Side::Hi),
            y_lo: val(Axis::Y, Side::Lo),
            y_hi: val(Axis::Y, Side::Hi),
        }
    }
}

/// Arithmetic face average of a cell field. Boundary faces take the value
/// supplied in `boundary`, or the adjacent cell value where none is given.
pub fn interp_cell_to_faces(
    a: &CellField,
    grid: &Grid2D,
    boundary: &FaceBoundary,
) -> Result<FaceVecField> {
    a.check(grid)?;
    let mut out = FaceVecField::zeros(grid);
    let (nx, nfx) = (grid.nx, grid.nfx());
    par::for_rows(&mut out.x, nfx, |j, row| {
        for (i, o) in row.iter_mut().enumerate() {
            *o = match grid.face_cells(Axis::X, i) {
                (Some(l), Some(r)) => 0.5 * (a.data[j * nx + l] + a.data[j * nx + r]),
                (None, Some(r)) => boundary.x_lo.unwrap_or(a.data[j * nx + r]),
                (Some(l), None) => boundary.x_hi.unwrap_or(a.data[j * nx + l]),
                (None, None) => unreachable!(),
            };
        }
    });
    par::for_rows(&mut out.y, nx, |j, row| match grid.face_cells(Axis::Y, j) {
        (Some(b), Some(t)) => {
            for (i, o) in row.iter_mut().enumerate() {
                *o = 0.5 * (a.data[b * nx + i] + a.data[t * nx + i]);
            }
        }
        (None, Some(t)) => {
            for (i, o) in row.iter_mut().enumerate() {
                *o = boundary.y_lo.unwrap_or(a.data[t * nx + i]);
            }
        }
        (Some(b), None) => {
            for (i, o) in row.iter_mut().enumerate() {
                *o = boundary.y_hi.unwrap_or(a.data[b * nx + i]);
            }
        }
        (None, None) => unreachable!(),
    });
    Ok(out)
}

/// Componentwise `m / ρ_face`.
pub fn velocity_from_momentum(m: &FaceVecField, rho_faces: &FaceVecField) -> Result<FaceVecField> {
    if m.x.len() != rho_faces.x.len() || m.y.len() != rho_faces.y.len() {
        return Err(Error::Dimension("momentum and face density differ in shape".into()));
    }
    if let Some(r) = rho_faces.x.iter().chain(&rho_faces.y).find(|r| !(**r > 0.0)) {
        return Err(Error::Degenerate(format!("nonpositive face density {r}")));
    }
    Ok(m.zip_map(rho_faces, |a, r| a / r))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub rho: CellField,
    pub rho1: CellField,
    pub m: FaceVecField,
    pub t: f64,
    pub step: u64,
}

impl SimState {
    pub fn rho2(&self) -> CellField {
        self.rho.zip_map(&self.rho1, |r, r1| r - r1)
    }

    pub fn check(&self, grid: &Grid2D) -> Result<()> {
        self.rho.check(grid)?;
        self.rho1.check(grid)?;
        self.m.check(grid)
    }
}

/// `c = ρ₁/ρ` per cell, unclamped.
pub fn concentration(state: &SimState) -> Result<CellField> {
    if let Some(r) = state.rho.data.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::Degenerate(format!("nonpositive density {r}")));
    }
    Ok(state.rho1.zip_map(&state.rho, |a, r| a / r))
}

/// Node vorticity `∂v/∂x − ∂u/∂y` on a fully periodic grid.
pub fn vorticity(v: &FaceVecField, grid: &Grid2D) -> Result<NodeField> {
    v.check(grid)?;
    if !grid.all_periodic() {
        return Err(Error::Usage("vorticity requires a periodic grid".into()));
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = NodeField::zeros(grid);
    par::for_rows(&mut out.data, nx, |j, row| {
        let jm = if j == 0 { ny - 1 } else { j - 1 };
        for (i, o) in row.iter_mut().enumerate() {
            let im = if i == 0 { nx - 1 } else { i - 1 };
            *o = (v.y[j * nx + i] - v.y[j * nx + im]) / grid.dx
                - (v.x[j * nx + i] - v.x[jm * nx + i]) / grid.dy;
        }
    });
    Ok(out)
}
