//! The multiscale pipeline: build the localized basis and boundary
//! corrections, solve the coarse Galerkin system, reconstruct on the fine mesh.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::aux_space::AuxBasis;
use crate::boundary_ops::{global_aggregate, BoundaryCorrection, CorrectionKind};
use crate::cem_basis::{solve_element, CorrectionData, Layers, MsBasis};
use crate::error::{Error, Result};
use crate::fem::{CellSet, Forms, LoadKind, NormKind, SolverOptions};
use crate::media::ProblemData;
use crate::mesh::RegionSpace;

/// Basis and corrections for one oversampling choice.
#[derive(Clone, Debug)]
pub struct MsComponents {
    pub basis: MsBasis,
    /// D^m g̃ (mixed problems only).
    pub dirichlet: Option<BoundaryCorrection>,
    /// N^m q.
    pub neumann: BoundaryCorrection,
    /// Total CG iterations spent on region solves.
    pub iterations: usize,
}

/// Builds ψ_i^{j,m}, D^m g̃ and N^m q, sharing one region system per element.
/// For [`Layers::Global`] the corrections are computed in a single solve each.
pub fn build_components(
    forms: &Forms<'_>,
    aux: &AuxBasis,
    data: &ProblemData,
    layers: Layers,
    opts: SolverOptions,
) -> Result<MsComponents> {
    let g = forms.geom;
    data.validate(g)?;
    let robin = data.is_robin();
    if robin != forms.robin_b.is_some() {
        return Err(Error::InvalidParameter("Robin coefficient must be given to both the forms and the data".into()));
    }
    if let Layers::Local(0) = layers {
        return Err(Error::InvalidParameter("oversampling layers must be >= 1".into()));
    }
    let n_kind = if robin {
        CorrectionKind::RobinFlux
    } else {
        CorrectionKind::Neumann
    };
    let local = matches!(layers, Layers::Local(_));
    let corr = CorrectionData {
        g_tilde: (local && !robin).then_some(data.g_tilde.as_slice()),
        q: local.then_some(data.q.as_slice()),
        robin,
    };
    let solves = crate::par::try_map_range(g.n_elements(), |i| solve_element(forms, aux, i, layers, true, corr, opts))?;
    let iterations = solves.iter().map(|s| s.iterations).sum();
    let mut functions = Vec::with_capacity(aux.dim());
    let mut d_pieces = Vec::with_capacity(g.n_elements());
    let mut n_pieces = Vec::with_capacity(g.n_elements());
    for s in solves {
        functions.extend(s.psi);
        d_pieces.push(s.dirichlet);
        n_pieces.push(s.neumann);
    }
    let basis = MsBasis {
        layers,
        l_m: aux.l_m,
        functions,
    };
    let (dirichlet, neumann) = if local {
        let d = (!robin).then(|| BoundaryCorrection::from_pieces(CorrectionKind::Dirichlet, layers, d_pieces, g.n_nodes()));
        (d, BoundaryCorrection::from_pieces(n_kind, layers, n_pieces, g.n_nodes()))
    } else {
        let d = if robin {
            None
        } else {
            Some(global_aggregate(forms, aux, CorrectionKind::Dirichlet, &data.g_tilde, opts)?)
        };
        (d, global_aggregate(forms, aux, n_kind, &data.q, opts)?)
    };
    Ok(MsComponents {
        basis,
        dirichlet,
        neumann,
        iterations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolutionErrors {
    /// `‖u_ms − u_ref‖_a / ‖u_ref‖_a`.
    pub energy: f64,
    /// `‖u_ms − u_ref‖_{L²} / ‖u_ref‖_{L²}`.
    pub l2: f64,
    /// `‖u_ms − u_ref‖_a`.
    pub energy_abs: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub layers: Layers,
    pub l_m: usize,
    pub coarse_dim: usize,
    /// Coefficients over the basis, ordered by (i, j).
    pub coeffs: Vec<f64>,
    pub w: Vec<f64>,
    pub u_ms: Vec<f64>,
    pub errors: Option<SolutionErrors>,
    pub ref_norm_a: Option<f64>,
    pub ref_norm_l2: Option<f64>,
    pub lambda: f64,
    pub lambda_prime: f64,
    /// Relative residual of the coarse solve `‖B c − F‖ / ‖F‖`.
    pub coarse_residual: f64,
    /// Wall time per stage in seconds.
    pub timings: Vec<(&'static str, f64)>,
}

/// Dense `B_kl = a(ψ_k, ψ_l)`, symmetrized.
pub fn coarse_matrix(forms: &Forms<'_>, basis: &MsBasis) -> DMatrix<f64> {
    let g = forms.geom;
    let dim = basis.len();
    // Node -> (basis index, value) for every basis function covering it.
    let mut covering: Vec<Vec<(u32, f64)>> = vec![Vec::new(); g.n_nodes()];
    for (k, f) in basis.functions.iter().enumerate() {
        for (n, v) in f.iter() {
            if v != 0.0 {
                covering[n].push((k as u32, v));
            }
        }
    }
    let rows = crate::par::map_range(dim, |k| {
        let f = &basis.functions[k];
        let y = forms.apply_energy_nodal(CellSet::Inside(f.space.block), &f.to_global(g.n_nodes()));
        let mut row = vec![0.0; dim];
        for (n, &yn) in y.iter().enumerate() {
            if yn != 0.0 {
                for &(l, v) in &covering[n] {
                    row[l as usize] += yn * v;
                }
            }
        }
        row
    });
    let mut b = DMatrix::<f64>::zeros(dim, dim);
    for (k, row) in rows.iter().enumerate() {
        for (l, &v) in row.iter().enumerate() {
            b[(k, l)] = v;
        }
    }
    (&b + b.transpose()) * 0.5
}

/// Nodal residual functional whose pairing with ψ gives the coarse right side.
fn rhs_functional(forms: &Forms<'_>, comps: &MsComponents, data: &ProblemData) -> Result<Vec<f64>> {
    let g = forms.geom;
    let space = RegionSpace::whole(g);
    let all = g.whole_block();
    let robin = data.is_robin();
    let mut r = space.extend(&forms.assemble_load(&space, all, LoadKind::Source(&data.f))?, g.n_nodes());
    let flux = forms.assemble_load(&space, all, LoadKind::Flux { q: &data.q, robin })?;
    for (&n, v) in space.dofs().iter().zip(flux) {
        r[n] += v;
    }
    let an = forms.apply_energy_nodal(CellSet::All, &comps.neumann.aggregate);
    for (rn, a) in r.iter_mut().zip(an) {
        *rn -= a;
    }
    if !robin {
        let d = comps
            .dirichlet
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("mixed solve needs the Dirichlet correction".into()))?;
        let ag = forms.apply_energy_nodal(CellSet::All, &data.g_tilde);
        let ad = forms.apply_energy_nodal(CellSet::All, &d.aggregate);
        for ((rn, a), b) in r.iter_mut().zip(ag).zip(ad) {
            *rn += b - a;
        }
    }
    Ok(r)
}

pub fn coarse_rhs(forms: &Forms<'_>, comps: &MsComponents, data: &ProblemData) -> Result<Vec<f64>> {
    let r = rhs_functional(forms, comps, data)?;
    Ok(comps.basis.functions.iter().map(|f| f.iter().map(|(n, v)| r[n] * v).sum()).collect())
}

/// Index of the first non-positive pivot of a symmetric matrix, if any.
fn failing_pivot(b: &DMatrix<f64>) -> usize {
    let n = b.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let d = b[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if !(d > 0.0) {
            return j;
        }
        l[(j, j)] = d.sqrt();
        for i in j + 1..n {
            let s = b[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / l[(j, j)];
        }
    }
    n
}

fn finish(
    forms: &Forms<'_>,
    aux: &AuxBasis,
    comps: &MsComponents,
    data: &ProblemData,
    u_ref: Option<&[f64]>,
    mut timings: Vec<(&'static str, f64)>,
) -> Result<SolveReport> {
    let g = forms.geom;
    let t = Instant::now();
    let b = coarse_matrix(forms, &comps.basis);
    let f = coarse_rhs(forms, comps, data)?;
    timings.push(("coarse_assembly", t.elapsed().as_secs_f64()));
    let t = Instant::now();
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularCoarseSystem { pivot: failing_pivot(&b) })?;
    let fv = DVector::from_column_slice(&f);
    let c = chol.solve(&fv);
    let fnorm = fv.norm();
    let coarse_residual = if fnorm > 0.0 { (&b * &c - &fv).norm() / fnorm } else { 0.0 };
    timings.push(("coarse_solve", t.elapsed().as_secs_f64()));

    let mut w = vec![0.0; g.n_nodes()];
    for (k, func) in comps.basis.functions.iter().enumerate() {
        func.add_to(&mut w, c[k]);
    }
    let nq = &comps.neumann.aggregate;
    let u_ms: Vec<f64> = match &comps.dirichlet {
        Some(d) => (0..g.n_nodes()).map(|n| w[n] - d.aggregate[n] + nq[n] + data.g_tilde[n]).collect(),
        None => (0..g.n_nodes()).map(|n| w[n] + nq[n]).collect(),
    };
    if u_ms.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("multiscale solution".into()));
    }
    let (errors, ref_norm_a, ref_norm_l2) = match u_ref {
        Some(r) => {
            let diff: Vec<f64> = u_ms.iter().zip(r).map(|(a, b)| a - b).collect();
            let na = forms.norm(r, NormKind::Energy);
            let nl = forms.norm(r, NormKind::L2);
            let ea = forms.norm(&diff, NormKind::Energy);
            let el = forms.norm(&diff, NormKind::L2);
            let rel = |e: f64, n: f64| if n > 0.0 { e / n } else { e };
            (
                Some(SolutionErrors {
                    energy: rel(ea, na),
                    l2: rel(el, nl),
                    energy_abs: ea,
                }),
                Some(na),
                Some(nl),
            )
        }
        None => (None, None, None),
    };
    Ok(SolveReport {
        layers: comps.basis.layers,
        l_m: aux.l_m,
        coarse_dim: comps.basis.len(),
        coeffs: c.iter().copied().collect(),
        w,
        u_ms,
        errors,
        ref_norm_a,
        ref_norm_l2,
        lambda: aux.lambda,
        lambda_prime: aux.lambda_prime,
        coarse_residual,
        timings,
    })
}

/// Mixed Dirichlet/Neumann problem: `u_ms = w − D g̃ + N q + g̃`.
pub fn solve_mixed(
    forms: &Forms<'_>,
    aux: &AuxBasis,
    comps: &MsComponents,
    data: &ProblemData,
    u_ref: Option<&[f64]>,
) -> Result<SolveReport> {
    if data.is_robin() || comps.dirichlet.is_none() {
        return Err(Error::InvalidParameter("solve_mixed needs mixed data and a Dirichlet correction".into()));
    }
    finish(forms, aux, comps, data, u_ref, Vec::new())
}

/// Robin problem: `u_ms = w + N q`.
pub fn solve_robin(
    forms: &Forms<'_>,
    aux: &AuxBasis,
    comps: &MsComponents,
    data: &ProblemData,
    u_ref: Option<&[f64]>,
) -> Result<SolveReport> {
    if !data.is_robin() || forms.robin_b.is_none() {
        return Err(Error::InvalidParameter("solve_robin needs Robin data and forms".into()));
    }
    finish(forms, aux, comps, data, u_ref, Vec::new())
}

/// Builds components for `layers` and solves, choosing mixed or Robin from the data.
pub fn solve(
    forms: &Forms<'_>,
    aux: &AuxBasis,
    data: &ProblemData,
    layers: Layers,
    opts: SolverOptions,
    u_ref: Option<&[f64]>,
) -> Result<(MsComponents, SolveReport)> {
    let t = Instant::now();
    let comps = build_components(forms, aux, data, layers, opts)?;
    let timings = vec![("basis_and_corrections", t.elapsed().as_secs_f64())];
    let report = finish(forms, aux, &comps, data, u_ref, timings)?;
    Ok((comps, report))
}

/// The global (m → ∞) multiscale solution with global basis and corrections.
pub fn solve_oracle_global(
    forms: &Forms<'_>,
    aux: &AuxBasis,
    data: &ProblemData,
    opts: SolverOptions,
    u_ref: Option<&[f64]>,
) -> Result<SolveReport> {
    solve(forms, aux, data, Layers::Global, opts, u_ref).map(|(_, r)| r)
}

/// Smallest `m` with `θ^{(m−1)/2}(m+1) ≤ H²`, capped where K_i^m covers Ω.
pub fn auto_layers(aux: &AuxBasis, geom: &crate::mesh::GridGeometry) -> Result<usize> {
    let t = crate::theory::theory_constants(aux.lambda)?;
    Ok(crate::theory::auto_layers(t.theta, geom.coarse_h(), geom.n_coarse() - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aux_space::build_aux;
    use crate::fem::{fine_reference_solve, source_dual_norm};
    use crate::media::{cellwise, derive_kappa_tilde, edgewise, nodal, robin_b_from_kappa, synth_mask, CoefficientField, SynthStyle};
    use crate::mesh::{build_grids, BoundaryLabel, BoundarySpec, GridGeometry, Side};

    const TIGHT: SolverOptions = SolverOptions {
        tol: 1e-12,
        max_iter: None,
    };

    fn mixed_grid(nc: usize, r: usize) -> GridGeometry {
        use BoundaryLabel::*;
        build_grids(nc, r, &BoundarySpec::Sides([Neumann, Neumann, Dirichlet, Neumann])).unwrap()
    }

    #[test]
    fn zero_data_gives_zero() {
        let g = mixed_grid(4, 4);
        let field = CoefficientField::from_mask(&synth_mask(g.n_fine(), SynthStyle::Channels, 0.08, 1).unwrap(), 1.0, 1e4).unwrap();
        let kt = derive_kappa_tilde(&field, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &field, &kt, None).unwrap();
        let aux = build_aux(&forms, 1).unwrap();
        let data = ProblemData::zeros(&g);
        let (_, rep) = solve(&forms, &aux, &data, Layers::Local(1), TIGHT, None).unwrap();
        assert!(rep.u_ms.iter().all(|&v| v == 0.0));
        assert_eq!(rep.coarse_dim, 32);
    }

    #[test]
    fn harmonic_linear_is_reproduced_once_regions_cover_the_domain() {
        let g = build_grids(4, 4, &BoundarySpec::AllDirichlet).unwrap();
        let field = CoefficientField::uniform(g.n_fine(), 1.0);
        let kt = derive_kappa_tilde(&field, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &field, &kt, None).unwrap();
        let aux = build_aux(&forms, 1).unwrap();
        let mut data = ProblemData::zeros(&g);
        data.g_tilde = nodal(&g, |x, _| x);
        let u_ref = fine_reference_solve(&forms, &data, SolverOptions::default()).unwrap();
        let err = |m| solve(&forms, &aux, &data, Layers::Local(m), TIGHT, Some(&u_ref)).unwrap().1.errors.unwrap().energy;
        let (e1, e2, e3) = (err(1), err(2), err(3));
        // Localized pieces of D g̃ do not cancel as the global ones do, so the
        // error only vanishes when K_i^m = Ω.
        assert!(e2 < e1 && e3 < 1e-6, "{e1} {e2} {e3}");
    }

    #[test]
    fn robin_constant_is_reproduced_once_regions_cover_the_domain() {
        let g = build_grids(4, 4, &BoundarySpec::AllNeumann).unwrap();
        let field = CoefficientField::uniform(g.n_fine(), 1.0);
        let kt = derive_kappa_tilde(&field, &g, Default::default()).unwrap();
        let b = robin_b_from_kappa(&g, &field);
        let forms = Forms::new(&g, &field, &kt, Some(&b)).unwrap();
        let aux = build_aux(&forms, 1).unwrap();
        let mut data = ProblemData::zeros(&g);
        data.robin_b = Some(b.clone());
        data.q = edgewise(&g, |_| 1.0);
        let (_, rep) = solve(&forms, &aux, &data, Layers::Local(3), TIGHT, None).unwrap();
        assert!(rep.u_ms.iter().all(|v| (v - 1.0).abs() < 1e-7));
        let (_, rep2) = solve(&forms, &aux, &data, Layers::Local(2), TIGHT, None).unwrap();
        let (_, rep1) = solve(&forms, &aux, &data, Layers::Local(1), TIGHT, None).unwrap();
        let dev = |r: &SolveReport| r.u_ms.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        assert!(dev(&rep2) < dev(&rep1));
        data.q = vec![0.0; g.n_boundary_edges()];
        let (_, rep) = solve(&forms, &aux, &data, Layers::Local(2), TIGHT, None).unwrap();
        assert!(rep.u_ms.iter().all(|&v| v == 0.0));
    }

    fn model2(g: &GridGeometry) -> ProblemData {
        let mut data = ProblemData::zeros(g);
        data.f = cellwise(g, |x, y| match (x < 0.5, y < 0.5) {
            (true, true) => 1.0,
            (false, true) => 2.0,
            (true, false) => -1.0,
            (false, false) => 0.0,
        });
        data.g_tilde = nodal(g, |x, y| x * x + (x * y).exp());
        data.q = edgewise(g, |e| match e.side {
            Side::Left => -1.0,
            Side::Right => 1.0,
            Side::Bottom if e.midpoint[0] < 0.5 => 1.0,
            _ => 0.0,
        });
        data
    }

    #[test]
    fn full_layers_match_oracle_and_galerkin_holds() {
        let g = mixed_grid(4, 4);
        let field = CoefficientField::from_mask(&synth_mask(g.n_fine(), SynthStyle::Channels, 0.08, 1).unwrap(), 1.0, 1e4).unwrap();
        let kt = derive_kappa_tilde(&field, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &field, &kt, None).unwrap();
        let aux = build_aux(&forms, 2).unwrap();
        let data = model2(&g);
        let u_ref = fine_reference_solve(&forms, &data, SolverOptions::default()).unwrap();
        let (comps, loc) = solve(&forms, &aux, &data, Layers::Local(3), TIGHT, Some(&u_ref)).unwrap();
        let glo = solve_oracle_global(&forms, &aux, &data, TIGHT, Some(&u_ref)).unwrap();
        let d: Vec<f64> = loc.u_ms.iter().zip(&glo.u_ms).map(|(a, b)| a - b).collect();
        assert!(forms.norm(&d, NormKind::Energy) <= 1e-8 * forms.norm(&glo.u_ms, NormKind::Energy));
        assert!(loc.coarse_residual < 1e-8);
        // Coarse Galerkin orthogonality: a(w, ψ_k) equals the right side for every k.
        let f = coarse_rhs(&forms, &comps, &data).unwrap();
        let aw = forms.apply_energy_nodal(CellSet::All, &loc.w);
        let scale = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (k, func) in comps.basis.functions.iter().enumerate() {
            let lhs: f64 = func.iter().map(|(n, v)| aw[n] * v).sum();
            assert!((lhs - f[k]).abs() <= 1e-8 * scale);
        }
        // Reconstruction identity.
        let dg = &comps.dirichlet.as_ref().unwrap().aggregate;
        for n in 0..g.n_nodes() {
            let expect = loc.w[n] - dg[n] + comps.neumann.aggregate[n] + data.g_tilde[n];
            assert_eq!(loc.u_ms[n], expect);
        }
    }

    #[test]
    fn oracle_error_within_source_bound() {
        let g = mixed_grid(4, 4);
        let field = CoefficientField::from_mask(&synth_mask(g.n_fine(), SynthStyle::Inclusions, 0.08, 1).unwrap(), 1.0, 1e4).unwrap();
        let kt = derive_kappa_tilde(&field, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &field, &kt, None).unwrap();
        let aux = build_aux(&forms, 2).unwrap();
        let mut data = model2(&g);
        let u_ref = fine_reference_solve(&forms, &data, SolverOptions::default()).unwrap();
        let rep = solve_oracle_global(&forms, &aux, &data, TIGHT, Some(&u_ref)).unwrap();
        let bound = source_dual_norm(&forms, &data.f) / aux.lambda.sqrt();
        assert!(rep.errors.unwrap().energy_abs <= bound + 1e-6);
        data.f = vec![0.0; g.n_cells()];
        let u_ref = fine_reference_solve(&forms, &data, SolverOptions::default()).unwrap();
        let rep = solve_oracle_global(&forms, &aux, &data, TIGHT, Some(&u_ref)).unwrap();
        assert!(rep.errors.unwrap().energy <= 1e-6, "{:?}", rep.errors);
    }

    #[test]
    fn error_decreases_with_layers() {
        let g = mixed_grid(6, 4);
        let field = CoefficientField::from_mask(&synth_mask(g.n_fine(), SynthStyle::Channels, 0.08, 3).unwrap(), 1.0, 1e4).unwrap();
        let kt = derive_kappa_tilde(&field, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &field, &kt, None).unwrap();
        let aux = build_aux(&forms, 2).unwrap();
        let data = model2(&g);
        let u_ref = fine_reference_solve(&forms, &data, SolverOptions::default()).unwrap();
        let mut prev = f64::INFINITY;
        for m in 1..=3 {
            let (_, rep) = solve(&forms, &aux, &data, Layers::Local(m), TIGHT, Some(&u_ref)).unwrap();
            let e = rep.errors.unwrap().energy;
            assert!(e < prev, "m={m}: {e} !< {prev}");
            prev = e;
        }
    }

    #[test]
    fn mismatched_problem_kind_is_rejected() {
        let g = mixed_grid(3, 4);
        let field = CoefficientField::uniform(g.n_fine(), 1.0);
        let kt = derive_kappa_tilde(&field, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &field, &kt, None).unwrap();
        let aux = build_aux(&forms, 1).unwrap();
        let data = ProblemData::zeros(&g);
        let comps = build_components(&forms, &aux, &data, Layers::Local(1), TIGHT).unwrap();
        assert!(solve_robin(&forms, &aux, &comps, &data, None).is_err());
        assert!(solve_mixed(&forms, &aux, &comps, &data, None).is_ok());
        assert!(build_components(&forms, &aux, &data, Layers::Local(0), TIGHT).is_err());
        assert!(auto_layers(&aux, &g).unwrap() >= 1);
    }
}
