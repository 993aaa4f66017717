//! Local spectral problems on each coarse element and the s-orthogonal
//! projection π onto the auxiliary space they span.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::{local_edge_mass, local_mass, local_stiffness, Forms};

/// Relative gap below which the truncation index is flagged as degenerate.
pub const DEGENERATE_GAP: f64 = 1e-8;

/// Eigenpairs of one coarse element.
#[derive(Clone, Debug)]
pub struct ElementAux {
    pub element: usize,
    /// Fine nodes of the closed element, row-major.
    pub nodes: Vec<usize>,
    /// The `l_m + 2` smallest eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Kept eigenvectors φ^0..φ^{l_m} as columns, s-orthonormal.
    pub phi: DMatrix<f64>,
    /// `S_loc φ` for each kept eigenvector; `π_i v` has coefficients `wᵀ v`.
    pub w: DMatrix<f64>,
    /// Local a- and s-matrices of the element.
    pub a_loc: DMatrix<f64>,
    pub s_loc: DMatrix<f64>,
}

impl ElementAux {
    pub fn n_kept(&self) -> usize {
        self.phi.ncols()
    }

    /// Gathers a global nodal vector onto the element nodes.
    pub fn gather(&self, v: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.nodes.len(), self.nodes.iter().map(|&n| v[n]))
    }

    /// Coefficients of `π_i v` in the s-orthonormal basis.
    pub fn coefficients(&self, local: &DVector<f64>) -> DVector<f64> {
        self.w.tr_mul(local)
    }

    /// `‖v‖²_{s(K_i)}` of element-local values.
    pub fn s_norm_sq(&self, local: &DVector<f64>) -> f64 {
        local.dot(&(&self.s_loc * local))
    }

    /// `‖v‖²_{a(K_i)}` of element-local values.
    pub fn a_norm_sq(&self, local: &DVector<f64>) -> f64 {
        local.dot(&(&self.a_loc * local))
    }
}

/// The auxiliary space: per-element eigenpairs plus the global spectral summary.
#[derive(Clone, Debug)]
pub struct AuxBasis {
    pub l_m: usize,
    pub elements: Vec<ElementAux>,
    /// `min_i λ_i^{l_m+1}`.
    pub lambda: f64,
    /// `max_i λ_i^{l_m}`.
    pub lambda_prime: f64,
    /// Elements whose truncation gap is below [`DEGENERATE_GAP`].
    pub degenerate: Vec<usize>,
}

impl AuxBasis {
    pub fn n_per_element(&self) -> usize {
        self.l_m + 1
    }

    /// Dimension of the auxiliary (and multiscale) space.
    pub fn dim(&self) -> usize {
        self.elements.len() * self.n_per_element()
    }

    /// Flat index of (element, eigenindex).
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_per_element() + j
    }

    /// Kept eigenvector φ_i^j as a global nodal vector (zero off K̄_i).
    pub fn phi_global(&self, i: usize, j: usize, n_nodes: usize) -> Vec<f64> {
        let e = &self.elements[i];
        let mut out = vec![0.0; n_nodes];
        for (k, &n) in e.nodes.iter().enumerate() {
            out[n] = e.phi[(k, j)];
        }
        out
    }
}

/// Dense local a- and s-matrices on the closed element, in row-major node order.
fn local_pencil(forms: &Forms<'_>, i: usize) -> (Vec<usize>, DMatrix<f64>, DMatrix<f64>) {
    let g = forms.geom;
    let r = g.refine();
    let h = g.fine_h();
    let nodes = g.element_nodes(i);
    let side = r + 1;
    let n = nodes.len();
    let (ex, ey) = g.element_xy(i);
    let (x0, y0) = (ex * r, ey * r);
    let loc = |node: usize| {
        let (x, y) = g.node_xy(node);
        (y - y0) * side + (x - x0)
    };
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut s = DMatrix::<f64>::zeros(n, n);
    for c in g.element_cells(i) {
        let idx = g.cell_nodes(c).map(loc);
        let ka = local_stiffness(forms.kappa[c]);
        let ms = local_mass(forms.kappa_tilde[c], h);
        for p in 0..4 {
            for q in 0..4 {
                a[(idx[p], idx[q])] += ka[p][q];
                s[(idx[p], idx[q])] += ms[p][q];
            }
        }
    }
    if let Some(b) = forms.robin_b {
        for (k, e) in g.block_boundary_edges(crate::mesh::Block::single((ex, ey))) {
            let m = local_edge_mass(b[k], h);
            let idx = e.nodes.map(loc);
            for p in 0..2 {
                for q in 0..2 {
                    a[(idx[p], idx[q])] += m[p][q];
                }
            }
        }
    }
    (nodes, a, s)
}

/// Flips `v` so its largest-magnitude entry is positive (first such entry on ties).
fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(k) = v.iter().position(|x| x.abs() >= max * (1.0 - 1e-12)) {
        if v[k] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Solves `A φ = λ S φ` on the closed element `i` and keeps the `count`
/// smallest pairs (eigenvalues) with the first `count - 1` eigenvectors.
pub fn local_eigendecomposition(forms: &Forms<'_>, i: usize, count: usize) -> Result<ElementAux> {
    let g = forms.geom;
    if i >= g.n_elements() {
        return Err(Error::InvalidParameter(format!("element index {i} out of range")));
    }
    let (nodes, a, s) = local_pencil(forms, i);
    let n = nodes.len();
    if count < 2 || count > n {
        return Err(Error::InvalidParameter(format!(
            "eigenpair count {count} must lie in 2..={n} for this element"
        )));
    }
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Factorization(format!("local s-matrix of element {i} is not positive definite")))?;
    let l = chol.l();
    // C = L⁻¹ A L⁻ᵀ
    let linv_a = l
        .solve_lower_triangular(&a)
        .ok_or_else(|| Error::Factorization(format!("triangular solve on element {i}")))?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::Factorization(format!("triangular solve on element {i}")))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::try_new(c, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Factorization(format!("eigensolver did not converge on element {i}")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[p].total_cmp(&eig.eigenvalues[q]));
    let eigenvalues: Vec<f64> = order[..count].iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let kept = count - 1;
    let mut phi = DMatrix::<f64>::zeros(n, kept);
    for (j, &k) in order[..kept].iter().enumerate() {
        let y = eig.eigenvectors.column(k).into_owned();
        let mut x = l
            .tr_solve_lower_triangular(&y)
            .ok_or_else(|| Error::Factorization(format!("back substitution on element {i}")))?;
        // Re-normalize in the s-inner product to remove rounding drift.
        let norm = x.dot(&(&s * &x)).sqrt();
        x /= norm;
        fix_sign(x.as_mut_slice());
        phi.set_column(j, &x);
    }
    let w = &s * &phi;
    Ok(ElementAux {
        element: i,
        nodes,
        eigenvalues,
        phi,
        w,
        a_loc: a,
        s_loc: s,
    })
}

/// Builds the auxiliary space with `l_m + 1` modes per element.
pub fn build_aux(forms: &Forms<'_>, l_m: usize) -> Result<AuxBasis> {
    let g = forms.geom;
    let elements = crate::par::try_map_range(g.n_elements(), |i| local_eigendecomposition(forms, i, l_m + 2))?;
    let lambda = elements.iter().map(|e| e.eigenvalues[l_m + 1]).fold(f64::INFINITY, f64::min);
    let lambda_prime = elements.iter().map(|e| e.eigenvalues[l_m]).fold(0.0, f64::max);
    let degenerate = elements
        .iter()
        .filter(|e| {
            let (lo, hi) = (e.eigenvalues[l_m], e.eigenvalues[l_m + 1]);
            (hi - lo) <= DEGENERATE_GAP * hi.abs().max(f64::MIN_POSITIVE)
        })
        .map(|e| e.element)
        .collect();
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Factorization(format!(
            "first excluded eigenvalue is {lambda}; increase the element resolution"
        )));
    }
    Ok(AuxBasis {
        l_m,
        elements,
        lambda,
        lambda_prime,
        degenerate,
    })
}

/// `πv` as elementwise coefficients in the s-orthonormal eigenbasis. The field
/// is discontinuous across element interfaces, so it is kept in this form.
#[derive(Clone, Debug, PartialEq)]
pub struct PiField {
    pub per_element: usize,
    pub coeffs: Vec<f64>,
}

impl PiField {
    pub fn element(&self, i: usize) -> &[f64] {
        &self.coeffs[i * self.per_element..(i + 1) * self.per_element]
    }

    /// `‖πv‖²_s`, exact because the kept modes are s-orthonormal.
    pub fn s_norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// `s(πu, πv)`.
    pub fn s_dot(&self, other: &PiField) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    /// Values of the field on the nodes of element `i`.
    pub fn element_values(&self, aux: &AuxBasis, i: usize) -> DVector<f64> {
        &aux.elements[i].phi * DVector::from_column_slice(self.element(i))
    }

    /// `‖πv‖²_s` restricted to elements accepted by `keep`.
    pub fn s_norm_sq_where(&self, keep: impl Fn(usize) -> bool) -> f64 {
        self.coeffs
            .chunks(self.per_element)
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, c)| c.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }
}

/// s-orthogonal projection `πv = Σ_i Σ_j s_i(φ_i^j, v) φ_i^j`, optionally only
/// on a subset of elements (others get zero coefficients).
pub fn project_pi(aux: &AuxBasis, v: &[f64], region: Option<&[usize]>) -> PiField {
    let per = aux.n_per_element();
    let mut coeffs = vec![0.0; aux.elements.len() * per];
    let mut visit = |i: usize| {
        let e = &aux.elements[i];
        let c = e.coefficients(&e.gather(v));
        coeffs[i * per..(i + 1) * per].copy_from_slice(c.as_slice());
    };
    match region {
        Some(list) => list.iter().copied().for_each(&mut visit),
        None => (0..aux.elements.len()).for_each(&mut visit),
    }
    PiField {
        per_element: per,
        coeffs,
    }
}

/// Projects a broken (per-element) field: each element's values are projected locally.
pub fn project_broken(aux: &AuxBasis, values: &[DVector<f64>]) -> PiField {
    let per = aux.n_per_element();
    let coeffs = aux
        .elements
        .iter()
        .zip(values)
        .flat_map(|(e, v)| e.coefficients(v).iter().copied().collect::<Vec<_>>())
        .collect();
    PiField {
        per_element: per,
        coeffs,
    }
}
