//! Localized multiscale basis functions and the penalized region solves they
//! share with the boundary corrections.
//!
//! On a region with free DOFs V_R every solve has the form
//! `a(ψ, v) + s(πψ, πv) = ℓ(v)` for all `v ∈ V_R`, where π runs over the
//! elements of the region. With `w_kj = S_k φ_kj` the penalty is `W Wᵀ`, so
//! the operator is applied matrix-free as `A ψ + W (Wᵀ ψ)`.

use std::sync::Arc;

use crate::aux_space::{project_pi, AuxBasis, PiField};
use crate::error::{Error, Result};
use crate::fem::{pcg, CellSet, Forms, LinearOperator, LoadKind, NormKind, SolverOptions, SparseSystem};
use crate::mesh::{Block, RegionSpace};

/// Oversampling: a number of coarse layers, or the whole domain (oracle).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layers {
    Local(usize),
    Global,
}

impl Layers {
    pub fn block(&self, geom: &crate::mesh::GridGeometry, i: usize) -> Result<Block> {
        match *self {
            Layers::Global => Ok(geom.whole_block()),
            Layers::Local(m) => Ok(crate::mesh::oversample_region(geom, i, m)?.block),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Layers::Local(m) => m.to_string(),
            Layers::Global => "glo".into(),
        }
    }
}

/// A function supported on a region, stored on the region's free DOFs.
#[derive(Clone, Debug)]
pub struct RegionVec {
    pub space: Arc<RegionSpace>,
    pub values: Vec<f64>,
}

impl RegionVec {
    pub fn zeros(space: Arc<RegionSpace>) -> Self {
        let values = vec![0.0; space.len()];
        RegionVec { space, values }
    }

    pub fn to_global(&self, n_nodes: usize) -> Vec<f64> {
        self.space.extend(&self.values, n_nodes)
    }

    /// `out += scale * self` on a global nodal vector.
    pub fn add_to(&self, out: &mut [f64], scale: f64) {
        for (&n, &v) in self.space.dofs().iter().zip(&self.values) {
            out[n] += scale * v;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.space.dofs().iter().copied().zip(self.values.iter().copied())
    }
}

/// The penalized operator `A_R + W Wᵀ` on one region.
pub struct PenalizedSystem {
    pub a: SparseSystem,
    /// Elements of the region, ascending; `w` holds `l_m + 1` columns per element.
    pub elements: Vec<usize>,
    per_element: usize,
    w: Vec<Vec<(u32, f64)>>,
    diag: Vec<f64>,
}

impl PenalizedSystem {
    pub fn new(forms: &Forms<'_>, aux: &AuxBasis, space: &RegionSpace) -> Self {
        let g = forms.geom;
        let a = forms.assemble_energy(space);
        let elements = space.block.elements(g.n_coarse());
        let per_element = aux.n_per_element();
        let mut w = Vec::with_capacity(elements.len() * per_element);
        for &e in &elements {
            let ea = &aux.elements[e];
            let locals: Vec<Option<usize>> = ea.nodes.iter().map(|&n| space.local(g, n)).collect();
            for j in 0..per_element {
                let col: Vec<(u32, f64)> = locals
                    .iter()
                    .enumerate()
                    .filter_map(|(k, l)| l.map(|l| (l as u32, ea.w[(k, j)])))
                    .collect();
                w.push(col);
            }
        }
        let mut diag = a.matrix.diagonal();
        for col in &w {
            for &(l, v) in col {
                diag[l as usize] += v * v;
            }
        }
        PenalizedSystem {
            a,
            elements,
            per_element,
            w,
            diag,
        }
    }

    pub fn space(&self) -> &RegionSpace {
        &self.a.space
    }

    /// Right side `s(φ_ij, πv)`, i.e. the column `w_ij` on the region DOFs.
    pub fn basis_rhs(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        let pos = self
            .elements
            .binary_search(&i)
            .map_err(|_| Error::InvalidParameter(format!("element {i} is not in the region")))?;
        let mut rhs = vec![0.0; self.a.space.len()];
        for &(l, v) in &self.w[pos * self.per_element + j] {
            rhs[l as usize] = v;
        }
        Ok(rhs)
    }

    pub fn solve(&self, rhs: &[f64], opts: SolverOptions) -> Result<Vec<f64>> {
        pcg(self, rhs, opts).map(|o| o.x)
    }
}

impl LinearOperator for PenalizedSystem {
    fn dim(&self) -> usize {
        self.a.matrix.dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.a.matrix.matvec(x, y);
        for col in &self.w {
            let c: f64 = col.iter().map(|&(l, v)| v * x[l as usize]).sum();
            if c != 0.0 {
                for &(l, v) in col {
                    y[l as usize] += c * v;
                }
            }
        }
    }
    fn diagonal(&self) -> Vec<f64> {
        self.diag.clone()
    }
}

/// Boundary data whose per-element corrections are solved alongside the basis.
#[derive(Clone, Copy, Debug, Default)]
pub struct CorrectionData<'a> {
    /// Nodal lift g̃ for the Dirichlet correction.
    pub g_tilde: Option<&'a [f64]>,
    /// Edge flux q for the Neumann (or Robin) correction.
    pub q: Option<&'a [f64]>,
    /// Flux over all of ∂Ω rather than Γ_N only.
    pub robin: bool,
}

/// Everything solved on the region of one element.
#[derive(Clone, Debug)]
pub struct ElementSolves {
    pub element: usize,
    pub layers: Layers,
    pub psi: Vec<RegionVec>,
    /// `None` when the right side vanishes identically (not solved).
    pub dirichlet: Option<RegionVec>,
    pub neumann: Option<RegionVec>,
    pub iterations: usize,
}

/// Assembles the region system of element `i` once and solves every
/// requested right side against it.
pub fn solve_element(
    forms: &Forms<'_>,
    aux: &AuxBasis,
    i: usize,
    layers: Layers,
    with_basis: bool,
    data: CorrectionData<'_>,
    opts: SolverOptions,
) -> Result<ElementSolves> {
    let g = forms.geom;
    let block = layers.block(g, i)?;
    let space = Arc::new(RegionSpace::new(g, block));
    let sys = PenalizedSystem::new(forms, aux, &space);
    let own = Block::single(g.element_xy(i));
    let mut iterations = 0;
    let mut run = |rhs: Vec<f64>| -> Result<Option<RegionVec>> {
        if rhs.iter().all(|&v| v == 0.0) {
            return Ok(None);
        }
        let out = pcg(&sys, &rhs, opts)?;
        iterations += out.iterations;
        Ok(Some(RegionVec {
            space: space.clone(),
            values: out.x,
        }))
    };
    let mut psi = Vec::new();
    if with_basis {
        for j in 0..aux.n_per_element() {
            let v = run(sys.basis_rhs(i, j)?)?.unwrap_or_else(|| RegionVec::zeros(space.clone()));
            psi.push(v);
        }
    }
    let dirichlet = match data.g_tilde {
        // ∇g̃ ≡ 0 on K_i: nothing to correct.
        Some(gt) if is_constant_on(gt, &aux.elements[i].nodes) => None,
        Some(gt) => run(forms.assemble_load(&space, own, LoadKind::DirichletLift(gt))?)?,
        None => None,
    };
    let neumann = match data.q {
        Some(q) => run(forms.assemble_load(&space, own, LoadKind::Flux { q, robin: data.robin })?)?,
        None => None,
    };
    Ok(ElementSolves {
        element: i,
        layers,
        psi,
        dirichlet,
        neumann,
        iterations,
    })
}

fn is_constant_on(v: &[f64], nodes: &[usize]) -> bool {
    let first = v[nodes[0]];
    nodes.iter().all(|&n| v[n] == first)
}

/// ψ_i^{j,m} on K_i^m (or the global ψ_i^j for [`Layers::Global`]).
pub fn build_ms_basis(
    forms: &Forms<'_>,
    aux: &AuxBasis,
    i: usize,
    j: usize,
    layers: Layers,
    opts: SolverOptions,
) -> Result<RegionVec> {
    if j > aux.l_m {
        return Err(Error::InvalidParameter(format!("eigenindex {j} exceeds l_m = {}", aux.l_m)));
    }
    if let Layers::Local(0) = layers {
        return Err(Error::InvalidParameter("oversampling layers must be >= 1".into()));
    }
    let g = forms.geom;
    let space = Arc::new(RegionSpace::new(g, layers.block(g, i)?));
    let sys = PenalizedSystem::new(forms, aux, &space);
    let values = sys.solve(&sys.basis_rhs(i, j)?, opts)?;
    Ok(RegionVec { space, values })
}

/// The global oracle basis function ψ_i^j.
pub fn build_global_basis(forms: &Forms<'_>, aux: &AuxBasis, i: usize, j: usize, opts: SolverOptions) -> Result<RegionVec> {
    build_ms_basis(forms, aux, i, j, Layers::Global, opts)
}

/// All basis functions for one oversampling choice, indexed by `aux.index(i, j)`.
#[derive(Clone, Debug)]
pub struct MsBasis {
    pub layers: Layers,
    pub l_m: usize,
    pub functions: Vec<RegionVec>,
}

impl MsBasis {
    pub fn get(&self, i: usize, j: usize) -> &RegionVec {
        &self.functions[i * (self.l_m + 1) + j]
    }
    pub fn len(&self) -> usize {
        self.functions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

/// Builds the whole basis (element-parallel, ordered by (i, j)).
pub fn build_basis_set(forms: &Forms<'_>, aux: &AuxBasis, layers: Layers, opts: SolverOptions) -> Result<MsBasis> {
    let solves = crate::par::try_map_range(forms.geom.n_elements(), |i| {
        solve_element(forms, aux, i, layers, true, CorrectionData::default(), opts)
    })?;
    Ok(MsBasis {
        layers,
        l_m: aux.l_m,
        functions: solves.into_iter().flat_map(|s| s.psi).collect(),
    })
}

/// `(‖ψ‖²_{a(Ω∖K_i^{m'})} + ‖πψ‖²_{s(Ω∖K_i^{m'})}) / (‖ψ‖²_a + ‖πψ‖²_s)` for
/// `m' = 0..n_coarse`, with `K_i^0 = K_i`.
pub fn decay_profile(forms: &Forms<'_>, aux: &AuxBasis, psi: &[f64], i: usize) -> Vec<f64> {
    let g = forms.geom;
    let pi = project_pi(aux, psi, None);
    let total = forms.norm_sq(psi, NormKind::Energy, CellSet::All) + pi.s_norm_sq();
    let center = g.element_xy(i);
    (0..g.n_coarse())
        .map(|m| {
            let block = Block::around(center, m, g.n_coarse());
            if block == g.whole_block() {
                return 0.0;
            }
            let outside = forms.norm_sq(psi, NormKind::Energy, CellSet::Outside(block))
                + pi.s_norm_sq_where(|e| {
                    let (ex, ey) = g.element_xy(e);
                    !block.contains(ex, ey)
                });
            if total > 0.0 {
                outside / total
            } else {
                0.0
            }
        })
        .collect()
}

/// `‖v‖²_a + ‖πv‖²_s` of a global nodal vector.
pub fn combined_norm_sq(forms: &Forms<'_>, aux: &AuxBasis, v: &[f64]) -> f64 {
    forms.norm_sq(v, NormKind::Energy, CellSet::All) + project_pi(aux, v, None).s_norm_sq()
}

/// Objective of the relaxed minimization: `a(ψ,ψ) + ‖πψ − φ_ij‖²_s`.
pub fn relaxed_objective(forms: &Forms<'_>, aux: &AuxBasis, psi: &[f64], i: usize, j: usize) -> f64 {
    let mut pi: PiField = project_pi(aux, psi, None);
    pi.coeffs[aux.index(i, j)] -= 1.0;
    forms.norm_sq(psi, NormKind::Energy, CellSet::All) + pi.s_norm_sq()
}
