//! Dense-matrix and closed-form oracles for the discrete operators and the
//! noise filter, shared by the acceptance harness and the integration tests.
//!
//! Every operator is checked by extracting its matrix column by column
//! (affine operators also yield their offset) and comparing it with a matrix
//! assembled independently here from difference and averaging matrices or
//! from a variational form.
#![allow(dead_code)]

use lowmach::eos::EosParams;
use lowmach::fields::{
    AxisBc, CellField, FaceBoundary, FaceVecField, Grid2D, NodeField, Slip, Wall,
};
use lowmach::operators::{
    diffusive_flux, divergence_cell, gradient_faces, momentum_advection_div, scalar_advection_div,
    viscous_divergence,
};
use lowmach::projection::{project_rs, PoissonSettings};
use lowmach::stochastic::{apply_filter, filter_weights};
use nalgebra::{DMatrix, DVector};

/// One oracle comparison: `err` must not exceed `tol`.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub err: f64,
    pub tol: f64,
}

impl Check {
    pub fn ok(&self) -> bool {
        self.err <= self.tol
    }
}

pub const ORACLE_TOL: f64 = 1e-9;

fn check(name: impl Into<String>, err: f64, tol: f64) -> Check {
    Check { name: name.into(), err, tol }
}

/// Deterministic uniform values in `[-1, 1)`.
pub fn noise(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed.wrapping_mul(0x2545F4914F6CDD1D) ^ 0x9E3779B97F4A7C15;
    (0..n)
        .map(|_| {
            s ^= s >> 12;
            s ^= s << 25;
            s ^= s >> 27;
            let r = s.wrapping_mul(0x2545F4914F6CDD1D);
            (r >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}

fn positive(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    noise(seed, n).into_iter().map(|v| lo + (hi - lo) * 0.5 * (v + 1.0)).collect()
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// `max|a − b| / max|b|`.
fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = max_abs(b).max(f64::MIN_POSITIVE);
    max_abs(&(a - b)) / scale
}

/// Test grids: anisotropic spacing, every boundary combination.
pub fn grids() -> Vec<(&'static str, Grid2D)> {
    let base = || Grid2D::new(6, 5, 0.7, 0.4).unwrap();
    let res = |c| Wall::reservoir(c);
    vec![
        ("periodic", base()),
        (
            "y-walls",
            base().with_bc(AxisBc::Periodic, AxisBc::Walls { lo: res(0.3), hi: Wall::free_slip() }),
        ),
        (
            "x-walls",
            base().with_bc(AxisBc::Walls { lo: Wall::no_slip(), hi: res(0.8).with_slip(Slip::FreeSlip) }, AxisBc::Periodic),
        ),
        (
            "box",
            base().with_bc(
                AxisBc::Walls { lo: res(0.1), hi: Wall::no_slip() },
                AxisBc::Walls { lo: Wall::no_slip(), hi: res(0.6) },
            ),
        ),
    ]
}

/// Index bookkeeping for the oracle, written from the storage layout only:
/// cells `j·nx+i`; x-faces `j·nfx+i` with face `i` on the low side of cell
/// `i`; y-faces after all x-faces; nodes `j·nfx+i` at `(i·dx, j·dy)`.
pub struct Layout {
    pub nx: usize,
    pub ny: usize,
    pub nfx: usize,
    pub nfy: usize,
    pub px: bool,
    pub py: bool,
    pub dx: f64,
    pub dy: f64,
}

impl Layout {
    pub fn new(g: &Grid2D) -> Self {
        let px = matches!(g.bc_x, AxisBc::Periodic);
        let py = matches!(g.bc_y, AxisBc::Periodic);
        Layout {
            nx: g.nx,
            ny: g.ny,
            nfx: g.nx + usize::from(!px),
            nfy: g.ny + usize::from(!py),
            px,
            py,
            dx: g.dx,
            dy: g.dy,
        }
    }
    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }
    pub fn faces(&self) -> usize {
        self.nfx * self.ny + self.nx * self.nfy
    }
    pub fn nodes(&self) -> usize {
        self.nfx * self.nfy
    }
    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
    pub fn xf(&self, i: usize, j: usize) -> usize {
        j * self.nfx + i
    }
    pub fn yf(&self, i: usize, j: usize) -> usize {
        self.nfx * self.ny + j * self.nx + i
    }
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.nfx + i
    }
    /// x-face on the high side of cell column `i`.
    fn xr(&self, i: usize) -> usize {
        if self.px { (i + 1) % self.nx } else { i + 1 }
    }
    fn yt(&self, j: usize) -> usize {
        if self.py { (j + 1) % self.ny } else { j + 1 }
    }
    /// Cell columns left and right of x-face `i`.
    fn xcells(&self, i: usize) -> (Option<usize>, Option<usize>) {
        if self.px {
            (Some((i + self.nx - 1) % self.nx), Some(i))
        } else {
            ((i > 0).then(|| i - 1), (i < self.nx).then_some(i))
        }
    }
    fn ycells(&self, j: usize) -> (Option<usize>, Option<usize>) {
        if self.py {
            (Some((j + self.ny - 1) % self.ny), Some(j))
        } else {
            ((j > 0).then(|| j - 1), (j < self.ny).then_some(j))
        }
    }
    pub fn is_boundary_face(&self, f: usize) -> bool {
        let nxf = self.nfx * self.ny;
        if f < nxf {
            let i = f % self.nfx;
            !self.px && (i == 0 || i == self.nx)
        } else {
            let j = (f - nxf) / self.nx;
            !self.py && (j == 0 || j == self.ny)
        }
    }
    pub fn interior_faces(&self) -> Vec<usize> {
        (0..self.faces()).filter(|&f| !self.is_boundary_face(f)).collect()
    }

    /// Divergence: cells by faces.
    pub fn div(&self) -> DMatrix<f64> {
        let mut d = DMatrix::<f64>::zeros(self.cells(), self.faces());
        for j in 0..self.ny {
            for i in 0..self.nx {
                let c = self.cell(i, j);
                d[(c, self.xf(self.xr(i), j))] += 1.0 / self.dx;
                d[(c, self.xf(i, j))] -= 1.0 / self.dx;
                d[(c, self.yf(i, self.yt(j)))] += 1.0 / self.dy;
                d[(c, self.yf(i, j))] -= 1.0 / self.dy;
            }
        }
        d
    }

    /// Gradient as the negative adjoint of the divergence, restricted to
    /// interior faces.
    pub fn grad(&self) -> DMatrix<f64> {
        let mut g = -self.div().transpose();
        for f in 0..self.faces() {
            if self.is_boundary_face(f) {
                g.row_mut(f).fill(0.0);
            }
        }
        g
    }

    /// Cell-to-face averaging with boundary faces copying the adjacent cell
    /// (linear part) and an offset from prescribed boundary values.
    pub fn face_average(&self, bnd: &FaceBoundary) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::<f64>::zeros(self.faces(), self.cells());
        let mut b = DVector::<f64>::zeros(self.faces());
        for j in 0..self.ny {
            for i in 0..self.nfx {
                let f = self.xf(i, j);
                match self.xcells(i) {
                    (Some(l), Some(r)) => {
                        a[(f, self.cell(l, j))] += 0.5;
                        a[(f, self.cell(r, j))] += 0.5;
                    }
                    (None, Some(r)) => match bnd.x_lo {
                        Some(v) => b[f] = v,
                        None => a[(f, self.cell(r, j))] = 1.0,
                    },
                    (Some(l), None) => match bnd.x_hi {
                        Some(v) => b[f] = v,
                        None => a[(f, self.cell(l, j))] = 1.0,
                    },
                    (None, None) => unreachable!(),
                }
            }
        }
        for j in 0..self.nfy {
            for i in 0..self.nx {
                let f = self.yf(i, j);
                match self.ycells(j) {
                    (Some(l), Some(r)) => {
                        a[(f, self.cell(i, l))] += 0.5;
                        a[(f, self.cell(i, r))] += 0.5;
                    }
                    (None, Some(r)) => match bnd.y_lo {
                        Some(v) => b[f] = v,
                        None => a[(f, self.cell(i, r))] = 1.0,
                    },
                    (Some(l), None) => match bnd.y_hi {
                        Some(v) => b[f] = v,
                        None => a[(f, self.cell(i, l))] = 1.0,
                    },
                    (None, None) => unreachable!(),
                }
            }
        }
        (a, b)
    }

    pub fn to_faces(&self, g: &Grid2D, v: &[f64]) -> FaceVecField {
        let n = self.nfx * self.ny;
        let mut f = FaceVecField::zeros(g);
        f.x.copy_from_slice(&v[..n]);
        f.y.copy_from_slice(&v[n..]);
        f
    }

    pub fn from_faces(&self, f: &FaceVecField) -> DVector<f64> {
        DVector::from_iterator(self.faces(), f.x.iter().chain(&f.y).cloned())
    }
}

/// Matrix and offset of an affine map, probed with unit vectors.
fn probe(n_in: usize, n_out: usize, op: impl Fn(&[f64]) -> Vec<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let zero = vec![0.0; n_in];
    let b = DVector::from_vec(op(&zero));
    assert_eq!(b.len(), n_out);
    let mut m = DMatrix::<f64>::zeros(n_out, n_in);
    let mut e = zero;
    for k in 0..n_in {
        e[k] = 1.0;
        let col = DVector::from_vec(op(&e)) - &b;
        m.set_column(k, &col);
        e[k] = 0.0;
    }
    (m, b)
}

fn cell_field(g: &Grid2D, v: &[f64]) -> CellField {
    CellField::from_vec(g, v.to_vec()).unwrap()
}

fn divergence_check(name: &str, g: &Grid2D) -> Check {
    let l = Layout::new(g);
    let (m, _) = probe(l.faces(), l.cells(), |v| divergence_cell(&l.to_faces(g, v), g).data);
    check(format!("divergence/{name}"), rel_err(&m, &l.div()), ORACLE_TOL)
}

fn gradient_check(name: &str, g: &Grid2D) -> Check {
    let l = Layout::new(g);
    let (m, _) = probe(l.cells(), l.faces(), |v| l.from_faces(&gradient_faces(&cell_field(g, v), g)).as_slice().to_vec());
    check(format!("gradient/{name}"), rel_err(&m, &l.grad()), ORACLE_TOL)
}

/// Face gradient with one-sided half-cell differences against reservoir
/// concentrations; affine in `c`.
fn reservoir_gradient(l: &Layout, g: &Grid2D) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = l.grad();
    let mut b = DVector::<f64>::zeros(l.faces());
    let conc = |bc: &AxisBc, lo: bool| match bc {
        AxisBc::Walls { lo: w, .. } if lo => w.concentration,
        AxisBc::Walls { hi: w, .. } if !lo => w.concentration,
        _ => None,
    };
    for j in 0..l.ny {
        for (i, lo) in [(0, true), (l.nx, false)] {
            if l.px {
                continue;
            }
            if let Some(cb) = conc(&g.bc_x, lo) {
                let f = l.xf(i, j);
                let inner = l.cell(if lo { 0 } else { l.nx - 1 }, j);
                let s = if lo { 1.0 } else { -1.0 };
                a[(f, inner)] = s * 2.0 / l.dx;
                b[f] = -s * 2.0 * cb / l.dx;
            }
        }
    }
    for i in 0..l.nx {
        for (j, lo) in [(0, true), (l.ny, false)] {
            if l.py {
                continue;
            }
            if let Some(cb) = conc(&g.bc_y, lo) {
                let f = l.yf(i, j);
                let inner = l.cell(i, if lo { 0 } else { l.ny - 1 });
                let s = if lo { 1.0 } else { -1.0 };
                a[(f, inner)] = s * 2.0 / l.dy;
                b[f] = -s * 2.0 * cb / l.dy;
            }
        }
    }
    (a, b)
}

fn diffusion_checks(name: &str, g: &Grid2D) -> Vec<Check> {
    let l = Layout::new(g);
    let rho = l.to_faces(g, &positive(11, l.faces(), 0.8, 1.3));
    let chi = l.to_faces(g, &positive(12, l.faces(), 0.5, 2.0));
    let k = DMatrix::from_diagonal(&(l.from_faces(&rho).component_mul(&l.from_faces(&chi))));
    let (ga, gb) = reservoir_gradient(&l, g);
    let flux = |v: &[f64]| diffusive_flux(&rho, &chi, &cell_field(g, v), g);
    let (fm, fb) = probe(l.cells(), l.faces(), |v| l.from_faces(&flux(v)).as_slice().to_vec());
    let (om, ob) = (&k * &ga, &k * &gb);
    let (dm, db) = probe(l.cells(), l.cells(), |v| divergence_cell(&flux(v), g).data);
    let d = l.div();
    let (odm, odb) = (&d * &om, &d * &ob);
    let off = |a: &DVector<f64>, b: &DVector<f64>| {
        (a - b).amax() / b.amax().max(max_abs(&om))
    };
    vec![
        check(format!("diffusive flux/{name}"), rel_err(&fm, &om).max(off(&fb, &ob)), ORACLE_TOL),
        check(
            format!("diffusion/{name}"),
            rel_err(&dm, &odm).max((&db - &odb).amax() / max_abs(&odm)),
            ORACLE_TOL,
        ),
    ]
}

/// Tangential slip of the wall on `side` of an axis, if it is a wall.
fn slip(bc: &AxisBc, lo: bool) -> Option<Slip> {
    match bc {
        AxisBc::Periodic => None,
        AxisBc::Walls { lo: w, hi } => Some(if lo { w.slip } else { hi.slip }),
    }
}

/// Viscous operator from its dissipation functional: `−Dᵀ W D` on interior
/// faces, where `D` stacks `∂u/∂x`, `∂v/∂y` on cells and the shear rate on
/// nodes (ghost velocities `∓u` across no-slip and free-slip walls), and `W`
/// holds `2η` on cells and `η` on nodes, halved on no-slip wall nodes and
/// zero on free-slip wall nodes and corners.
fn viscous_oracle(l: &Layout, g: &Grid2D, eta_c: &[f64], eta_n: &[f64]) -> DMatrix<f64> {
    let rows = 2 * l.cells() + l.nodes();
    let mut d = DMatrix::<f64>::zeros(rows, l.faces());
    let mut w = DVector::<f64>::zeros(rows);
    for j in 0..l.ny {
        for i in 0..l.nx {
            let c = l.cell(i, j);
            d[(c, l.xf(l.xr(i), j))] += 1.0 / l.dx;
            d[(c, l.xf(i, j))] -= 1.0 / l.dx;
            w[c] = 2.0 * eta_c[c];
            let r = l.cells() + c;
            d[(r, l.yf(i, l.yt(j)))] += 1.0 / l.dy;
            d[(r, l.yf(i, j))] -= 1.0 / l.dy;
            w[r] = 2.0 * eta_c[c];
        }
    }
    let ghost = |s: Option<Slip>| if s == Some(Slip::NoSlip) { -1.0 } else { 1.0 };
    for jn in 0..l.nfy {
        for i in 0..l.nfx {
            let r = 2 * l.cells() + l.node(i, jn);
            let (b, t) = l.ycells(jn);
            let (lf, rt) = l.xcells(i);
            // ∂u/∂y from the x-faces below and above the node.
            match (b, t) {
                (Some(b), Some(t)) => {
                    d[(r, l.xf(i, t))] += 1.0 / l.dy;
                    d[(r, l.xf(i, b))] -= 1.0 / l.dy;
                }
                (None, Some(t)) => d[(r, l.xf(i, t))] += (1.0 - ghost(slip(&g.bc_y, true))) / l.dy,
                (Some(b), None) => d[(r, l.xf(i, b))] -= (1.0 - ghost(slip(&g.bc_y, false))) / l.dy,
                (None, None) => unreachable!(),
            }
            // ∂v/∂x from the y-faces left and right of the node.
            match (lf, rt) {
                (Some(a), Some(c)) => {
                    d[(r, l.yf(c, jn))] += 1.0 / l.dx;
                    d[(r, l.yf(a, jn))] -= 1.0 / l.dx;
                }
                (None, Some(c)) => d[(r, l.yf(c, jn))] += (1.0 - ghost(slip(&g.bc_x, true))) / l.dx,
                (Some(a), None) => d[(r, l.yf(a, jn))] -= (1.0 - ghost(slip(&g.bc_x, false))) / l.dx,
                (None, None) => unreachable!(),
            }
            let on_y = b.is_none() || t.is_none();
            let on_x = lf.is_none() || rt.is_none();
            let wall = if on_y { Some(slip(&g.bc_y, b.is_none())) } else if on_x { Some(slip(&g.bc_x, lf.is_none())) } else { None };
            let factor = match (on_x && on_y, wall) {
                (true, _) => 0.0,
                (false, None) => 1.0,
                (false, Some(Some(Slip::NoSlip))) => 0.5,
                (false, Some(_)) => 0.0,
            };
            w[r] = factor * eta_n[l.node(i, jn)];
        }
    }
    let wd: DMatrix<f64> = DMatrix::from_diagonal(&w) * &d;
    -(d.transpose() * wd)
}

fn restrict(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

fn viscous_check(name: &str, g: &Grid2D) -> Check {
    let l = Layout::new(g);
    let eta_c = positive(21, l.cells(), 0.5, 2.0);
    let eta_n = positive(22, l.nodes(), 0.5, 2.0);
    let ec = cell_field(g, &eta_c);
    let en = NodeField { nnx: l.nfx, nny: l.nfy, data: eta_n.clone() };
    let inner = l.interior_faces();
    let (m, _) = probe(l.faces(), l.faces(), |v| {
        let mut v = v.to_vec();
        for f in 0..l.faces() {
            if l.is_boundary_face(f) {
                v[f] = 0.0;
            }
        }
        l.from_faces(&viscous_divergence(&ec, &en, &l.to_faces(g, &v), g)).as_slice().to_vec()
    });
    let o = viscous_oracle(&l, g, &eta_c, &eta_n);
    check(format!("viscous/{name}"), rel_err(&restrict(&m, &inner), &restrict(&o, &inner)), ORACLE_TOL)
}

/// Constant-viscosity periodic identity `∇·[η(∇v+∇vᵀ)] = η(∇²v + ∇(∇·v))`,
/// with the staggered Laplacian assembled from one-dimensional second
/// differences of each face component.
fn viscous_identity_check() -> Check {
    let g = Grid2D::new(6, 5, 0.7, 0.4).unwrap();
    let l = Layout::new(&g);
    let eta = 1.7;
    let ec = CellField::constant(&g, eta);
    let en = NodeField { nnx: l.nfx, nny: l.nfy, data: vec![eta; l.nodes()] };
    let (m, _) = probe(l.faces(), l.faces(), |v| l.from_faces(&viscous_divergence(&ec, &en, &l.to_faces(&g, v), &g)).as_slice().to_vec());
    let mut lap = DMatrix::<f64>::zeros(l.faces(), l.faces());
    let (nx, ny) = (l.nx, l.ny);
    let mut second = |f: usize, nb: [usize; 4]| {
        lap[(f, f)] -= 2.0 / (l.dx * l.dx) + 2.0 / (l.dy * l.dy);
        lap[(f, nb[0])] += 1.0 / (l.dx * l.dx);
        lap[(f, nb[1])] += 1.0 / (l.dx * l.dx);
        lap[(f, nb[2])] += 1.0 / (l.dy * l.dy);
        lap[(f, nb[3])] += 1.0 / (l.dy * l.dy);
    };
    for j in 0..ny {
        for i in 0..nx {
            let (il, ir, jb, jt) = ((i + nx - 1) % nx, (i + 1) % nx, (j + ny - 1) % ny, (j + 1) % ny);
            second(l.xf(i, j), [l.xf(il, j), l.xf(ir, j), l.xf(i, jb), l.xf(i, jt)]);
            second(l.yf(i, j), [l.yf(il, j), l.yf(ir, j), l.yf(i, jb), l.yf(i, jt)]);
        }
    }
    let o = (lap + l.grad() * l.div()) * eta;
    check("viscous/constant-eta identity", rel_err(&m, &o), ORACLE_TOL)
}

fn boundary_values(g: &Grid2D) -> FaceBoundary {
    let side = |bc: &AxisBc, v: f64| (!matches!(bc, AxisBc::Periodic)).then_some(v);
    FaceBoundary { x_lo: side(&g.bc_x, 0.25), x_hi: None, y_lo: None, y_hi: side(&g.bc_y, -0.4) }
}

fn scalar_advection_check(name: &str, g: &Grid2D) -> Check {
    let l = Layout::new(g);
    let v = l.to_faces(g, &noise(31, l.faces()));
    let bnd = boundary_values(g);
    let (m, b) = probe(l.cells(), l.cells(), |s| scalar_advection_div(&cell_field(g, s), &v, g, &bnd).unwrap().data);
    let (a, ab) = l.face_average(&bnd);
    let dv = l.div() * DMatrix::from_diagonal(&l.from_faces(&v));
    let (om, ob) = (&dv * a, &dv * ab);
    check(
        format!("scalar advection/{name}"),
        rel_err(&m, &om).max((&b - &ob).amax() / max_abs(&om)),
        ORACLE_TOL,
    )
}

/// Interpolation and difference matrices for momentum advection: face
/// components averaged to cells and to nodes (zero rows on physical-boundary
/// nodes), and node-to-face differences as negative adjoints.
fn momentum_advection_oracle(l: &Layout, v: &DVector<f64>) -> DMatrix<f64> {
    let (nc, nn) = (l.cells(), l.nodes());
    let mut ax = DMatrix::<f64>::zeros(nc, l.faces());
    let mut ay = DMatrix::<f64>::zeros(nc, l.faces());
    let mut dxc = DMatrix::<f64>::zeros(nc, l.faces());
    let mut dyc = DMatrix::<f64>::zeros(nc, l.faces());
    for j in 0..l.ny {
        for i in 0..l.nx {
            let c = l.cell(i, j);
            for (f, s) in [(l.xf(i, j), -1.0), (l.xf(l.xr(i), j), 1.0)] {
                ax[(c, f)] += 0.5;
                dxc[(c, f)] += s / l.dx;
            }
            for (f, s) in [(l.yf(i, j), -1.0), (l.yf(i, l.yt(j)), 1.0)] {
                ay[(c, f)] += 0.5;
                dyc[(c, f)] += s / l.dy;
            }
        }
    }
    // Node averages of u (along y) and v (along x); node differences of
    // node fluxes onto x-faces (along y) and y-faces (along x).
    let mut bu = DMatrix::<f64>::zeros(nn, l.faces());
    let mut bv = DMatrix::<f64>::zeros(nn, l.faces());
    let mut ey = DMatrix::<f64>::zeros(nn, l.faces());
    let mut ex = DMatrix::<f64>::zeros(nn, l.faces());
    for jn in 0..l.nfy {
        for i in 0..l.nfx {
            let n = l.node(i, jn);
            if let ((Some(b), Some(t)), (Some(a), Some(c))) = (l.ycells(jn), l.xcells(i)) {
                for (f, s) in [(l.xf(i, b), -1.0), (l.xf(i, t), 1.0)] {
                    bu[(n, f)] += 0.5;
                    ey[(n, f)] += s / l.dy;
                }
                for (f, s) in [(l.yf(a, jn), -1.0), (l.yf(c, jn), 1.0)] {
                    bv[(n, f)] += 0.5;
                    ex[(n, f)] += s / l.dx;
                }
            }
        }
    }
    let diag = |x: DVector<f64>| -> DMatrix<f64> { DMatrix::from_diagonal(&x) };
    // x-momentum: −Dxcᵀ[(Ax m)(Ax v)] − Eyᵀ[(Bu m)(Bv v)]
    // y-momentum: −Dycᵀ[(Ay m)(Ay v)] − Exᵀ[(Bv m)(Bu v)]
    let mx: DMatrix<f64> = -dxc.transpose() * diag(&ax * v) * &ax - ey.transpose() * diag(&bv * v) * &bu;
    let my: DMatrix<f64> = -dyc.transpose() * diag(&ay * v) * &ay - ex.transpose() * diag(&bu * v) * &bv;
    let mut out: DMatrix<f64> = mx + my;
    for f in 0..l.faces() {
        if l.is_boundary_face(f) {
            out.row_mut(f).fill(0.0);
        }
    }
    out
}

fn momentum_advection_check(name: &str, g: &Grid2D) -> Check {
    let l = Layout::new(g);
    let v = l.to_faces(g, &noise(41, l.faces()));
    let (m, _) = probe(l.faces(), l.faces(), |x| l.from_faces(&momentum_advection_div(&l.to_faces(g, x), &v, g)).as_slice().to_vec());
    let o = momentum_advection_oracle(&l, &l.from_faces(&v));
    let inner = l.interior_faces();
    let mi = DMatrix::from_fn(inner.len(), l.faces(), |r, c| m[(inner[r], c)]);
    let oi = DMatrix::from_fn(inner.len(), l.faces(), |r, c| o[(inner[r], c)]);
    check(format!("momentum advection/{name}"), rel_err(&mi, &oi), ORACLE_TOL)
}

/// Centered advection by a discretely divergence-free periodic velocity is
/// skew-symmetric, for scalars and for momentum.
fn advection_skew_checks() -> Vec<Check> {
    let g = Grid2D::new(6, 5, 0.7, 0.4).unwrap();
    let l = Layout::new(&g);
    // v = curl ψ on faces from a node streamfunction.
    let psi = noise(51, l.nodes());
    let vf = FaceVecField::from_fn(
        &g,
        |i, j| (psi[l.node(i, (j + 1) % l.nfy)] - psi[l.node(i, j)]) / l.dy,
        |i, j| -(psi[l.node((i + 1) % l.nfx, j)] - psi[l.node(i, j)]) / l.dx,
    );
    let div = divergence_cell(&vf, &g).max_abs();
    let (s, _) = probe(l.cells(), l.cells(), |x| scalar_advection_div(&cell_field(&g, x), &vf, &g, &FaceBoundary::default()).unwrap().data);
    let (m, _) = probe(l.faces(), l.faces(), |x| l.from_faces(&momentum_advection_div(&l.to_faces(&g, x), &vf, &g)).as_slice().to_vec());
    let skew = |a: &DMatrix<f64>| max_abs(&(a + a.transpose())) / max_abs(a);
    vec![
        check("divergence-free test velocity", div, 1e-12),
        check("scalar advection skew-symmetry", skew(&s), ORACLE_TOL),
        check("momentum advection skew-symmetry", skew(&m), ORACLE_TOL),
    ]
}

/// Dense projection: solve `D ρ⁻¹ G φ = D(ρ⁻¹m̃) − S` with the constant null
/// space removed by a rank-one shift, then `m = m̃ − Gφ`.
fn dense_projection(l: &Layout, rho: &DVector<f64>, m_tilde: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
    let mut binv = rho.map(|r| 1.0 / r);
    for f in 0..l.faces() {
        if l.is_boundary_face(f) {
            binv[f] = 0.0;
        }
    }
    let d = l.div();
    let gr = l.grad();
    let lap = &d * DMatrix::from_diagonal(&binv) * &gr;
    let n = l.cells();
    let shifted = &lap + DMatrix::from_element(n, n, 1.0 / n as f64);
    let rhs = &d * m_tilde.component_div(rho) - s;
    let phi = shifted.lu().solve(&rhs).expect("shifted Laplacian is nonsingular");
    m_tilde - gr * phi
}

fn projection_inputs(l: &Layout, seed: u64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let rho = DVector::from_vec(positive(seed, l.faces(), 0.9, 1.4));
    let m = DVector::from_vec(noise(seed + 1, l.faces()));
    // S compatible with the boundary fluxes: ΣS = Σ D(m̃/ρ).
    let net = (l.div() * m.component_div(&rho)).sum();
    let mut s = DVector::from_vec(noise(seed + 2, l.cells()));
    let mean = s.mean();
    s.add_scalar_mut(net / l.cells() as f64 - mean);
    (rho, m, s)
}

fn projection_checks(name: &str, g: &Grid2D) -> Vec<Check> {
    let l = Layout::new(g);
    let eos = EosParams::new(1.3, 1.0).unwrap();
    let settings = PoissonSettings::default();
    let (rho, mt, s) = projection_inputs(&l, 61);
    let rho_f = l.to_faces(g, rho.as_slice());
    let s_f = cell_field(g, s.as_slice());
    let project = |m: &DVector<f64>| -> DVector<f64> {
        let (out, _) = project_rs(&l.to_faces(g, m.as_slice()), &rho_f, &s_f, g, &eos, &settings).unwrap();
        l.from_faces(&out)
    };
    let code = project(&mt);
    let dense = dense_projection(&l, &rho, &mt, &s);
    let scale = mt.amax();
    let constraint = (l.div() * dense.component_div(&rho) - &s).amax() / scale;
    let again = project(&code);
    // Gradient annihilation: a pure gradient momentum projects to zero when S = 0.
    let psi = DVector::from_vec(noise(71, l.cells()));
    let gm = l.grad() * psi;
    let zero_s = CellField::zeros(g);
    let (ann, _) = project_rs(&l.to_faces(g, gm.as_slice()), &rho_f, &zero_s, g, &eos, &settings).unwrap();
    let budget = 10.0 * settings.rel_tol;
    vec![
        check(format!("projection/{name}"), (&code - &dense).amax() / scale, ORACLE_TOL),
        check(format!("projection dense constraint/{name}"), constraint, 1e-12),
        check(format!("projection idempotency/{name}"), (&again - &code).amax() / scale, budget),
        check(format!("projection gradient annihilation/{name}"), l.from_faces(&ann).amax() / gm.amax(), budget),
    ]
}

/// Circulant matrix of the symmetric stencil `w` on `n` points.
fn circulant(w: &[f64], n: usize) -> DMatrix<f64> {
    let mut c = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for (m, wm) in w.iter().enumerate() {
            c[(i, (i + m) % n)] += *wm;
            if m > 0 {
                c[(i, (i + n - m) % n)] += *wm;
            }
        }
    }
    c
}

fn filter_check(width: u8) -> Check {
    let (nx, ny) = (8, 7);
    let w = filter_weights(width);
    let oracle = circulant(w, ny).kronecker(&circulant(w, nx));
    let (m, _) = probe(nx * ny, nx * ny, |x| {
        let mut d = x.to_vec();
        apply_filter(&mut d, nx, ny, width);
        d
    });
    check(format!("filter w_F={width}"), rel_err(&m, &oracle), ORACLE_TOL)
}

pub fn operator_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for (name, g) in grids() {
        out.push(divergence_check(name, &g));
        out.push(gradient_check(name, &g));
        out.extend(diffusion_checks(name, &g));
        out.push(viscous_check(name, &g));
        out.push(scalar_advection_check(name, &g));
        out.push(momentum_advection_check(name, &g));
        out.extend(projection_checks(name, &g));
    }
    out.push(viscous_identity_check());
    out.extend(advection_skew_checks());
    out.push(filter_check(2));
    out.push(filter_check(4));
    out
}

/// Closed-form transfer function `1 − sin^{2w}(k/2)` of the width-`w` filter.
pub fn analytic_transfer(width: u8, k: f64) -> f64 {
    1.0 - (0.5 * k).sin().powi(2 * width as i32)
}

/// Measured gain of the filter on every Fourier mode of a periodic line.
pub fn measured_transfer(width: u8, n: usize) -> Vec<(f64, f64)> {
    (0..=n / 2)
        .map(|m| {
            let k = 2.0 * std::f64::consts::PI * m as f64 / n as f64;
            let line: Vec<f64> = (0..n).map(|i| (k * i as f64 + 0.3).cos()).collect();
            let mut out = line.clone();
            apply_filter(&mut out, n, 1, width);
            let num: f64 = out.iter().zip(&line).map(|(a, b)| a * b).sum();
            let den: f64 = line.iter().map(|b| b * b).sum();
            (k, num / den)
        })
        .collect()
}

pub fn filter_transfer_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for width in [2u8, 4] {
        let worst = measured_transfer(width, 64)
            .into_iter()
            .map(|(k, f)| (f - analytic_transfer(width, k)).abs())
            .fold(0.0, f64::max);
        out.push(check(format!("transfer w_F={width}"), worst, 1e-12));
        let w = filter_weights(width);
        let sum = w[0] + 2.0 * w[1..].iter().sum::<f64>();
        out.push(check(format!("weights sum w_F={width}"), (sum - 1.0).abs(), 0.0));
    }
    let at_pi: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let mut f = at_pi.clone();
    apply_filter(&mut f, 8, 1, 2);
    out.push(check("F(pi) w_F=2", f.iter().fold(0.0, |a: f64, v| a.max(v.abs())), 1e-15));
    out
}
