//! Bilinear (Q1) finite elements on the fine mesh: assembly of the a-, s- and
//! Robin forms over any block of coarse elements, load functionals, a
//! Jacobi-preconditioned CG solver, the single-scale reference solve, and norms.

use crate::error::{Error, Result};
use crate::media::{CoefficientField, ProblemData};
use crate::mesh::{Block, BoundaryLabel, GridGeometry, RegionSpace};

// Unit-coefficient local blocks on a square cell, vertices counter-clockwise.
// The Q1 Laplace block does not depend on the cell size in 2D.
const STIFF: [[f64; 4]; 4] = [
    [2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0],
    [-1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0],
    [-1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0],
    [-1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0],
];
// Mass block scaled by 36 / h².
const MASS36: [[f64; 4]; 4] = [
    [4.0, 2.0, 1.0, 2.0],
    [2.0, 4.0, 2.0, 1.0],
    [1.0, 2.0, 4.0, 2.0],
    [2.0, 1.0, 2.0, 4.0],
];

pub fn local_stiffness(kappa: f64) -> [[f64; 4]; 4] {
    STIFF.map(|row| row.map(|v| kappa * v))
}

pub fn local_mass(weight: f64, h: f64) -> [[f64; 4]; 4] {
    let s = weight * h * h / 36.0;
    MASS36.map(|row| row.map(|v| s * v))
}

pub fn local_edge_mass(b: f64, h: f64) -> [[f64; 2]; 2] {
    let s = b * h / 6.0;
    [[2.0 * s, s], [s, 2.0 * s]]
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct Csr {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    data: Vec<f64>,
}

impl Csr {
    /// Sums duplicate entries in the order they were pushed, so symmetric
    /// contributions produce exactly symmetric values.
    pub fn from_triplets(n: usize, mut trips: Vec<(u32, u32, f64)>) -> Self {
        trips.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(trips.len() / 4);
        let mut data: Vec<f64> = Vec::with_capacity(trips.len() / 4);
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in trips {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        Csr {
            n,
            indptr,
            indices,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        Csr::from_triplets(n, (0..n as u32).map(|i| (i, i, 1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let row = self.indptr[r]..self.indptr[r + 1];
        match self.indices[row.clone()].binary_search(&(c as u32)) {
            Ok(k) => self.data[row.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let row = self.indptr[r]..self.indptr[r + 1];
        self.indices[row.clone()].iter().map(|&c| c as usize).zip(self.data[row].iter().copied())
    }

    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in self.indptr[r]..self.indptr[r + 1] {
            s += self.data[k] * x[self.indices[k] as usize];
        }
        s
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        if self.n > 20_000 {
            crate::par::fill_rows(y, |r| self.row_dot(r, x));
        } else {
            for (r, yr) in y.iter_mut().enumerate() {
                *yr = self.row_dot(r, x);
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        (0..self.n).map(|r| x[r] * self.row_dot(r, x)).sum()
    }
}

/// Symmetric operator on a region's DOFs, applied by CG.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for Csr {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
    fn diagonal(&self) -> Vec<f64> {
        Csr::diagonal(self)
    }
}

/// An assembled operator together with the fine nodes its rows refer to.
#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub matrix: Csr,
    pub space: RegionSpace,
}

impl LinearOperator for SparseSystem {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec(x, y)
    }
    fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Form {
    /// `∫ κ ∇w·∇v`.
    Stiffness,
    /// `∫ κ̃ w v`.
    WeightedMass,
    /// `∫_{∂Ω} b w v dσ`.
    RobinBoundary,
    /// `∫ w v`.
    Mass,
}

/// Coefficients that define the bilinear forms on one fine mesh.
#[derive(Clone, Copy, Debug)]
pub struct Forms<'a> {
    pub geom: &'a GridGeometry,
    pub kappa: &'a [f64],
    pub kappa_tilde: &'a [f64],
    /// Robin coefficient per boundary edge. When present it is part of the a-form.
    pub robin_b: Option<&'a [f64]>,
}

impl<'a> Forms<'a> {
    pub fn new(
        geom: &'a GridGeometry,
        field: &'a CoefficientField,
        kappa_tilde: &'a [f64],
        robin_b: Option<&'a [f64]>,
    ) -> Result<Self> {
        field.check_matches(geom)?;
        if kappa_tilde.len() != geom.n_cells() {
            return Err(Error::DimensionMismatch {
                what: "kappa tilde (cells)",
                expected: geom.n_cells(),
                got: kappa_tilde.len(),
            });
        }
        if let Some(b) = robin_b {
            if b.len() != geom.n_boundary_edges() {
                return Err(Error::DimensionMismatch {
                    what: "Robin b (boundary edges)",
                    expected: geom.n_boundary_edges(),
                    got: b.len(),
                });
            }
        }
        Ok(Forms {
            geom,
            kappa: &field.values,
            kappa_tilde,
            robin_b,
        })
    }

    fn push_cells(&self, space: &RegionSpace, block: Block, form: Form, trips: &mut Vec<(u32, u32, f64)>) {
        let g = self.geom;
        let h = g.fine_h();
        for c in g.block_cells(block) {
            let local = match form {
                Form::Stiffness => local_stiffness(self.kappa[c]),
                Form::WeightedMass => local_mass(self.kappa_tilde[c], h),
                Form::Mass => local_mass(1.0, h),
                Form::RobinBoundary => unreachable!(),
            };
            let dofs = g.cell_nodes(c).map(|n| space.local(g, n));
            for a in 0..4 {
                let Some(p) = dofs[a] else { continue };
                for b in 0..4 {
                    if let Some(q) = dofs[b] {
                        trips.push((p as u32, q as u32, local[a][b]));
                    }
                }
            }
        }
    }

    fn push_robin(&self, space: &RegionSpace, block: Block, trips: &mut Vec<(u32, u32, f64)>) {
        let Some(b) = self.robin_b else { return };
        let g = self.geom;
        let h = g.fine_h();
        for (k, e) in g.block_boundary_edges(block) {
            if b[k] == 0.0 {
                continue;
            }
            let local = local_edge_mass(b[k], h);
            let dofs = e.nodes.map(|n| space.local(g, n));
            for a in 0..2 {
                let Some(p) = dofs[a] else { continue };
                for c in 0..2 {
                    if let Some(q) = dofs[c] {
                        trips.push((p as u32, q as u32, local[a][c]));
                    }
                }
            }
        }
    }

    /// Assembles one form over the cells (or boundary edges) of the region's block.
    pub fn assemble(&self, space: &RegionSpace, form: Form) -> SparseSystem {
        let mut trips = Vec::with_capacity(16 * space.len());
        match form {
            Form::RobinBoundary => self.push_robin(space, space.block, &mut trips),
            _ => self.push_cells(space, space.block, form, &mut trips),
        }
        SparseSystem {
            matrix: Csr::from_triplets(space.len(), trips),
            space: space.clone(),
        }
    }

    /// The a-form: stiffness plus the Robin boundary term when present.
    pub fn assemble_energy(&self, space: &RegionSpace) -> SparseSystem {
        let mut trips = Vec::with_capacity(16 * space.len());
        self.push_cells(space, space.block, Form::Stiffness, &mut trips);
        self.push_robin(space, space.block, &mut trips);
        SparseSystem {
            matrix: Csr::from_triplets(space.len(), trips),
            space: space.clone(),
        }
    }

    /// Applies the a-form (cells in `cells`, Robin edges adjacent to them) to a
    /// nodal vector, returning a nodal vector. No DOF constraints.
    pub fn apply_energy_nodal(&self, cells: CellSet, x: &[f64]) -> Vec<f64> {
        let g = self.geom;
        let mut y = vec![0.0; g.n_nodes()];
        for c in 0..g.n_cells() {
            if !cells.contains(g, c) {
                continue;
            }
            let nodes = g.cell_nodes(c);
            let k = self.kappa[c];
            for a in 0..4 {
                let mut s = 0.0;
                for b in 0..4 {
                    s += STIFF[a][b] * x[nodes[b]];
                }
                y[nodes[a]] += k * s;
            }
        }
        if let Some(bv) = self.robin_b {
            let h = g.fine_h();
            for (k, e) in g.boundary_edges().iter().enumerate() {
                if bv[k] == 0.0 || !cells.contains(g, e.cell) {
                    continue;
                }
                let m = local_edge_mass(bv[k], h);
                let [p, q] = e.nodes;
                y[p] += m[0][0] * x[p] + m[0][1] * x[q];
                y[q] += m[1][0] * x[p] + m[1][1] * x[q];
            }
        }
        y
    }

    /// Squared norm of a nodal vector over a set of cells.
    pub fn norm_sq(&self, v: &[f64], which: NormKind, cells: CellSet) -> f64 {
        let g = self.geom;
        let h = g.fine_h();
        let mut total = 0.0;
        for c in 0..g.n_cells() {
            if !cells.contains(g, c) {
                continue;
            }
            let nodes = g.cell_nodes(c);
            let x = nodes.map(|n| v[n]);
            let (blk, w) = match which {
                NormKind::Energy => (&STIFF, self.kappa[c]),
                NormKind::WeightedS => (&MASS36, self.kappa_tilde[c] * h * h / 36.0),
                NormKind::L2 => (&MASS36, h * h / 36.0),
            };
            let mut s = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    s += x[a] * blk[a][b] * x[b];
                }
            }
            total += w * s;
        }
        if which == NormKind::Energy {
            if let Some(bv) = self.robin_b {
                for (k, e) in g.boundary_edges().iter().enumerate() {
                    if bv[k] == 0.0 || !cells.contains(g, e.cell) {
                        continue;
                    }
                    let m = local_edge_mass(bv[k], h);
                    let [p, q] = e.nodes.map(|n| v[n]);
                    total += m[0][0] * p * p + 2.0 * m[0][1] * p * q + m[1][1] * q * q;
                }
            }
        }
        total
    }

    pub fn norm(&self, v: &[f64], which: NormKind) -> f64 {
        self.norm_sq(v, which, CellSet::All).max(0.0).sqrt()
    }

    /// Load vector of a functional over the region's free DOFs. Cells and
    /// boundary edges are taken from `block` (which may be smaller than the
    /// region, e.g. a single element for the Dirichlet correction).
    pub fn assemble_load(&self, space: &RegionSpace, block: Block, kind: LoadKind<'_>) -> Result<Vec<f64>> {
        let g = self.geom;
        let h = g.fine_h();
        let mut out = vec![0.0; space.len()];
        let mut add = |n: usize, v: f64| {
            if let Some(l) = space.local(g, n) {
                out[l] += v;
            }
        };
        match kind {
            LoadKind::Source(f) => {
                expect_len("source f (cells)", g.n_cells(), f.len())?;
                for c in g.block_cells(block) {
                    let v = f[c] * h * h / 4.0;
                    for n in g.cell_nodes(c) {
                        add(n, v);
                    }
                }
            }
            LoadKind::Flux { q, robin } => {
                expect_len("flux q (boundary edges)", g.n_boundary_edges(), q.len())?;
                for (k, e) in g.block_boundary_edges(block) {
                    if !robin && e.label == BoundaryLabel::Dirichlet {
                        continue;
                    }
                    let v = q[k] * h / 2.0;
                    add(e.nodes[0], v);
                    add(e.nodes[1], v);
                }
            }
            LoadKind::DirichletLift(gt) => {
                expect_len("lift g (nodes)", g.n_nodes(), gt.len())?;
                for c in g.block_cells(block) {
                    let nodes = g.cell_nodes(c);
                    let k = self.kappa[c];
                    for a in 0..4 {
                        let s: f64 = (0..4).map(|b| STIFF[a][b] * gt[nodes[b]]).sum();
                        add(nodes[a], k * s);
                    }
                }
            }
            LoadKind::AuxProjection(p) => {
                expect_len("s-weighted function (nodes)", g.n_nodes(), p.len())?;
                for c in g.block_cells(block) {
                    let nodes = g.cell_nodes(c);
                    let w = self.kappa_tilde[c] * h * h / 36.0;
                    for a in 0..4 {
                        let s: f64 = (0..4).map(|b| MASS36[a][b] * p[nodes[b]]).sum();
                        add(nodes[a], w * s);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn expect_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}

/// Functionals `v ↦ ℓ(v)` assembled by [`Forms::assemble_load`].
#[derive(Clone, Copy, Debug)]
pub enum LoadKind<'a> {
    /// `∫ f v`, f cellwise.
    Source(&'a [f64]),
    /// `∫ q v dσ` over boundary edges. With `robin = false` Γ_D edges are skipped.
    Flux { q: &'a [f64], robin: bool },
    /// `∫ κ ∇g̃·∇v`, g̃ nodal.
    DirichletLift(&'a [f64]),
    /// `∫ κ̃ p v`, p nodal.
    AuxProjection(&'a [f64]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Energy,
    WeightedS,
    L2,
}

/// Subsets of fine cells used for restricted norms.
#[derive(Clone, Copy, Debug)]
pub enum CellSet {
    All,
    Inside(Block),
    Outside(Block),
}

impl CellSet {
    pub fn contains(&self, g: &GridGeometry, c: usize) -> bool {
        match self {
            CellSet::All => true,
            CellSet::Inside(b) | CellSet::Outside(b) => {
                let (ex, ey) = g.element_xy(g.cell_element(c));
                b.contains(ex, ey) == matches!(self, CellSet::Inside(_))
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Relative residual target `‖D^{-1/2}(A x − b)‖ ≤ tol ‖D^{-1/2} b‖`, D = diag A.
    pub tol: f64,
    /// Iteration cap; `None` means `50 √n`.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions { tol, max_iter: None }
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients.
///
/// Stops on the diagonally scaled residual `‖D^{-1/2} r‖ ≤ tol ‖D^{-1/2} b‖`,
/// which is invariant under the Jacobi scaling; the unscaled residual of a
/// high-contrast system bottoms out near `ε ‖A‖ ‖x‖ / ‖b‖`. Convergence is
/// accepted only after the true residual is recomputed and meets the target;
/// otherwise iteration restarts from the true residual.
pub fn pcg(op: &impl LinearOperator, rhs: &[f64], opts: SolverOptions) -> Result<SolveOutcome> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            what: "right-hand side",
            expected: n,
            got: rhs.len(),
        });
    }
    let inv_diag: Vec<f64> = op
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let scaled_norm = |r: &[f64]| r.iter().zip(&inv_diag).map(|(a, w)| a * a * w).sum::<f64>().sqrt();
    let bnorm = scaled_norm(rhs);
    if bnorm == 0.0 {
        return Ok(SolveOutcome {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let cap = opts.max_iter.unwrap_or_else(|| ((50.0 * (n as f64).sqrt()).ceil() as usize).max(50));

    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut history = Vec::new();

    for it in 1..=cap {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            // Breakdown: either converged exactly or the operator is not SPD.
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let rel = rz_new.max(0.0).sqrt() / bnorm;
        history.push(rel);
        if rel <= opts.tol {
            op.apply(&x, &mut ap);
            for i in 0..n {
                r[i] = rhs[i] - ap[i];
                z[i] = r[i] * inv_diag[i];
            }
            let true_rel = scaled_norm(&r) / bnorm;
            if true_rel <= opts.tol {
                return Ok(SolveOutcome {
                    x,
                    iterations: it,
                    relative_residual: true_rel,
                });
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    op.apply(&x, &mut ap);
    let resid: Vec<f64> = rhs.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let final_residual = scaled_norm(&resid) / bnorm;
    if final_residual <= opts.tol {
        return Ok(SolveOutcome {
            x,
            iterations: history.len(),
            relative_residual: final_residual,
        });
    }
    Err(Error::SolverDiverged {
        iterations: history.len(),
        final_residual,
        residual_history: history,
    })
}

/// Solves an SPD system to scaled relative residual `tol` (see [`pcg`]).
pub fn solve_spd(system: &impl LinearOperator, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    pcg(system, rhs, SolverOptions::with_tol(tol)).map(|o| o.x)
}

/// Single-scale Q1 Galerkin solution on the fine mesh, used as the reference.
///
/// Mixed problems impose the Dirichlet values strongly: the trace of g̃ on
/// Γ_D is eliminated from the free rows. Robin problems add the boundary term
/// to the a-form and have no constrained nodes.
pub fn fine_reference_solve(forms: &Forms<'_>, data: &ProblemData, opts: SolverOptions) -> Result<Vec<f64>> {
    let g = forms.geom;
    data.validate(g)?;
    if data.is_robin() != forms.robin_b.is_some() {
        return Err(Error::InvalidParameter("Robin coefficient must be given to both the forms and the data".into()));
    }
    let space = RegionSpace::whole(g);
    let system = forms.assemble_energy(&space);
    let all = g.whole_block();
    let mut rhs = forms.assemble_load(&space, all, LoadKind::Source(&data.f))?;
    let flux = forms.assemble_load(
        &space,
        all,
        LoadKind::Flux {
            q: &data.q,
            robin: data.is_robin(),
        },
    )?;
    let boundary_values: Vec<f64> = (0..g.n_nodes())
        .map(|n| if g.is_dirichlet(n) { data.g_tilde[n] } else { 0.0 })
        .collect();
    let lifted = forms.apply_energy_nodal(CellSet::All, &boundary_values);
    for (l, &n) in space.dofs().iter().enumerate() {
        rhs[l] += flux[l] - lifted[n];
    }
    let free = pcg(&system, &rhs, opts)?.x;
    let mut u = boundary_values;
    for (&n, v) in space.dofs().iter().zip(free) {
        u[n] = v;
    }
    Ok(u)
}

/// `‖f‖_{s⁻¹}` for cellwise-constant f and κ̃: `√(Σ_c f_c² |c| / κ̃_c)`.
pub fn source_dual_norm(forms: &Forms<'_>, f: &[f64]) -> f64 {
    let h = forms.geom.fine_h();
    f.iter()
        .zip(forms.kappa_tilde)
        .map(|(fc, kt)| fc * fc * h * h / kt)
        .sum::<f64>()
        .sqrt()
}

/// Energy-norm distance between a discrete solution and a smooth function
/// with gradient `grad`, by 3x3 Gauss quadrature per cell.
pub fn energy_error_vs_exact(forms: &Forms<'_>, u_h: &[f64], grad: impl Fn(f64, f64) -> [f64; 2]) -> f64 {
    let g = forms.geom;
    let h = g.fine_h();
    let gp = [(-(0.6f64).sqrt(), 5.0 / 9.0), (0.0, 8.0 / 9.0), ((0.6f64).sqrt(), 5.0 / 9.0)];
    let mut total = 0.0;
    for c in 0..g.n_cells() {
        let nodes = g.cell_nodes(c);
        let [x0, y0] = g.node_coords(nodes[0]);
        let u = nodes.map(|n| u_h[n]);
        for &(sx, wx) in &gp {
            for &(sy, wy) in &gp {
                let xi = 0.5 * (sx + 1.0);
                let eta = 0.5 * (sy + 1.0);
                let dx = ((u[1] - u[0]) * (1.0 - eta) + (u[2] - u[3]) * eta) / h;
                let dy = ((u[3] - u[0]) * (1.0 - xi) + (u[2] - u[1]) * xi) / h;
                let [ex, ey] = grad(x0 + xi * h, y0 + eta * h);
                let w = wx * wy * 0.25 * h * h;
                total += w * forms.kappa[c] * ((dx - ex).powi(2) + (dy - ey).powi(2));
            }
        }
    }
    total.sqrt()
}
