//! Localized boundary corrections: D^m g̃ absorbs the energy of the Dirichlet
//! lift, N^m q the Neumann (or Robin) flux.

use crate::aux_space::AuxBasis;
use crate::cem_basis::{solve_element, CorrectionData, ElementSolves, Layers, PenalizedSystem, RegionVec};
use crate::error::{Error, Result};
use crate::fem::{CellSet, Forms, LoadKind, NormKind, SolverOptions};
use crate::mesh::{Block, RegionSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrectionKind {
    Dirichlet,
    Neumann,
    RobinFlux,
}

#[derive(Clone, Debug)]
pub struct BoundaryCorrection {
    pub kind: CorrectionKind,
    pub layers: Layers,
    /// Per-element pieces; `None` where the right side vanishes. Empty when
    /// only the aggregate was computed (global oracle in one solve).
    pub pieces: Vec<Option<RegionVec>>,
    /// Σ_i piece_i as a global nodal vector, summed in element order.
    pub aggregate: Vec<f64>,
}

impl BoundaryCorrection {
    pub fn is_global(&self) -> bool {
        self.layers == Layers::Global
    }

    pub fn from_pieces(kind: CorrectionKind, layers: Layers, pieces: Vec<Option<RegionVec>>, n_nodes: usize) -> Self {
        let mut aggregate = vec![0.0; n_nodes];
        for p in pieces.iter().flatten() {
            p.add_to(&mut aggregate, 1.0);
        }
        BoundaryCorrection {
            kind,
            layers,
            pieces,
            aggregate,
        }
    }

    /// Number of elements that needed a solve.
    pub fn n_solved(&self) -> usize {
        self.pieces.iter().filter(|p| p.is_some()).count()
    }
}

fn kind_data<'a>(kind: CorrectionKind, input: &'a [f64]) -> CorrectionData<'a> {
    match kind {
        CorrectionKind::Dirichlet => CorrectionData {
            g_tilde: Some(input),
            ..Default::default()
        },
        CorrectionKind::Neumann | CorrectionKind::RobinFlux => CorrectionData {
            q: Some(input),
            robin: kind == CorrectionKind::RobinFlux,
            ..Default::default()
        },
    }
}

fn take_piece(kind: CorrectionKind, s: ElementSolves) -> Option<RegionVec> {
    match kind {
        CorrectionKind::Dirichlet => s.dirichlet,
        _ => s.neumann,
    }
}

fn check_input(forms: &Forms<'_>, kind: CorrectionKind, input: &[f64]) -> Result<()> {
    let g = forms.geom;
    let (what, expected) = match kind {
        CorrectionKind::Dirichlet => ("lift g (nodes)", g.n_nodes()),
        _ => ("flux q (boundary edges)", g.n_boundary_edges()),
    };
    if input.len() != expected {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got: input.len(),
        });
    }
    if kind == CorrectionKind::RobinFlux && forms.robin_b.is_none() {
        return Err(Error::InvalidParameter("Robin flux correction needs the Robin a-form".into()));
    }
    Ok(())
}

/// Per-element pieces on their own regions (element-parallel).
pub fn correction_pieces(
    forms: &Forms<'_>,
    aux: &AuxBasis,
    kind: CorrectionKind,
    input: &[f64],
    layers: Layers,
    opts: SolverOptions,
) -> Result<BoundaryCorrection> {
    check_input(forms, kind, input)?;
    let g = forms.geom;
    let pieces = crate::par::try_map_range(g.n_elements(), |i| {
        solve_element(forms, aux, i, layers, false, kind_data(kind, input), opts).map(|s| take_piece(kind, s))
    })?;
    Ok(BoundaryCorrection::from_pieces(kind, layers, pieces, g.n_nodes()))
}

/// Global correction from a single solve with the summed right side.
pub fn global_aggregate(
    forms: &Forms<'_>,
    aux: &AuxBasis,
    kind: CorrectionKind,
    input: &[f64],
    opts: SolverOptions,
) -> Result<BoundaryCorrection> {
    check_input(forms, kind, input)?;
    let g = forms.geom;
    let space = RegionSpace::whole(g);
    let all = g.whole_block();
    let rhs = match kind {
        CorrectionKind::Dirichlet => forms.assemble_load(&space, all, LoadKind::DirichletLift(input))?,
        _ => forms.assemble_load(
            &space,
            all,
            LoadKind::Flux {
                q: input,
                robin: kind == CorrectionKind::RobinFlux,
            },
        )?,
    };
    let aggregate = if rhs.iter().all(|&v| v == 0.0) {
        vec![0.0; g.n_nodes()]
    } else {
        let sys = PenalizedSystem::new(forms, aux, &space);
        space.extend(&sys.solve(&rhs, opts)?, g.n_nodes())
    };
    Ok(BoundaryCorrection {
        kind,
        layers: Layers::Global,
        pieces: Vec::new(),
        aggregate,
    })
}

/// D^m g̃ (or D^glo g̃ for [`Layers::Global`]).
pub fn dirichlet_correction(
    forms: &Forms<'_>,
    aux: &AuxBasis,
    g_tilde: &[f64],
    layers: Layers,
    opts: SolverOptions,
) -> Result<BoundaryCorrection> {
    match layers {
        Layers::Global => global_aggregate(forms, aux, CorrectionKind::Dirichlet, g_tilde, opts),
        Layers::Local(_) => correction_pieces(forms, aux, CorrectionKind::Dirichlet, g_tilde, layers, opts),
    }
}

/// N^m q (or N^glo q). With `robin` the flux is taken over all of ∂Ω and the
/// forms must carry the Robin coefficient.
pub fn neumann_correction(
    forms: &Forms<'_>,
    aux: &AuxBasis,
    q: &[f64],
    layers: Layers,
    robin: bool,
    opts: SolverOptions,
) -> Result<BoundaryCorrection> {
    let kind = if robin {
        CorrectionKind::RobinFlux
    } else {
        CorrectionKind::Neumann
    };
    match layers {
        Layers::Global => global_aggregate(forms, aux, kind, q, opts),
        Layers::Local(_) => correction_pieces(forms, aux, kind, q, layers, opts),
    }
}

/// Relative errors of a localized correction against the global one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrectionErrors {
    pub energy: f64,
    pub l2: f64,
    /// The oracle has no energy; the ratios are reported as zero.
    pub degenerate: bool,
}

pub fn correction_error_report(
    forms: &Forms<'_>,
    local: &BoundaryCorrection,
    global: &BoundaryCorrection,
) -> Result<CorrectionErrors> {
    if local.kind != global.kind {
        return Err(Error::InvalidParameter("corrections of different kinds".into()));
    }
    let diff: Vec<f64> = local.aggregate.iter().zip(&global.aggregate).map(|(a, b)| a - b).collect();
    let den_a = forms.norm(&global.aggregate, NormKind::Energy);
    let den_l = forms.norm(&global.aggregate, NormKind::L2);
    if den_a == 0.0 || den_l == 0.0 {
        return Ok(CorrectionErrors {
            energy: 0.0,
            l2: 0.0,
            degenerate: true,
        });
    }
    Ok(CorrectionErrors {
        energy: forms.norm(&diff, NormKind::Energy) / den_a,
        l2: forms.norm(&diff, NormKind::L2) / den_l,
        degenerate: false,
    })
}

/// `‖g̃‖_{a(K_i)}`, the stability bound of the global Dirichlet piece of element `i`.
pub fn lift_energy_on_element(forms: &Forms<'_>, g_tilde: &[f64], i: usize) -> f64 {
    let block = Block::single(forms.geom.element_xy(i));
    let stiff = Forms { robin_b: None, ..*forms };
    stiff.norm_sq(g_tilde, NormKind::Energy, CellSet::Inside(block)).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aux_space::build_aux;
    use crate::media::{derive_kappa_tilde, edgewise, nodal, synth_mask, CoefficientField, SynthStyle};
    use crate::mesh::{build_grids, BoundaryLabel, BoundarySpec, GridGeometry, Side};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TIGHT: SolverOptions = SolverOptions {
        tol: 1e-12,
        max_iter: None,
    };

    fn mixed_grid(nc: usize, r: usize) -> GridGeometry {
        use BoundaryLabel::*;
        build_grids(nc, r, &BoundarySpec::Sides([Neumann, Neumann, Dirichlet, Neumann])).unwrap()
    }

    fn field(g: &GridGeometry, contrast: f64) -> CoefficientField {
        let mask = synth_mask(g.n_fine(), SynthStyle::Channels, 0.08, 2).unwrap();
        CoefficientField::from_mask(&mask, 1.0, contrast).unwrap()
    }

    #[test]
    fn trivial_inputs_give_zero() {
        let g = mixed_grid(4, 4);
        let f = field(&g, 1e4);
        let kt = derive_kappa_tilde(&f, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &f, &kt, None).unwrap();
        let aux = build_aux(&forms, 1).unwrap();
        for layers in [Layers::Local(1), Layers::Global] {
            let d0 = dirichlet_correction(&forms, &aux, &vec![0.0; g.n_nodes()], layers, TIGHT).unwrap();
            assert!(d0.aggregate.iter().all(|&v| v == 0.0));
            let dc = dirichlet_correction(&forms, &aux, &vec![3.5; g.n_nodes()], layers, TIGHT).unwrap();
            assert!(dc.aggregate.iter().all(|&v| v.abs() < 1e-12));
            let n0 = neumann_correction(&forms, &aux, &vec![0.0; g.n_boundary_edges()], layers, false, TIGHT).unwrap();
            assert!(n0.aggregate.iter().all(|&v| v == 0.0));
        }
        let dc = dirichlet_correction(&forms, &aux, &vec![3.5; g.n_nodes()], Layers::Local(1), TIGHT).unwrap();
        assert_eq!(dc.n_solved(), 0);
    }

    #[test]
    fn neumann_pieces_only_on_boundary_elements() {
        let g = mixed_grid(4, 4);
        let f = field(&g, 1e4);
        let kt = derive_kappa_tilde(&f, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &f, &kt, None).unwrap();
        let aux = build_aux(&forms, 1).unwrap();
        let q = edgewise(&g, |e| if e.side == Side::Left { -1.0 } else { 1.0 });
        let corr = neumann_correction(&forms, &aux, &q, Layers::Local(1), false, TIGHT).unwrap();
        for (i, p) in corr.pieces.iter().enumerate() {
            let (ex, ey) = g.element_xy(i);
            let touches_neumann = ex == 0 || ex == 3 || ey == 0;
            assert_eq!(p.is_some(), touches_neumann, "element {i}");
        }
        // Top row only touches Γ_D on its top side, but its corners reach the vertical sides.
        assert!(corr.pieces[g.element(1, 3)].is_none());
    }

    #[test]
    fn corrections_are_linear() {
        let g = mixed_grid(4, 4);
        let f = field(&g, 1e3);
        let kt = derive_kappa_tilde(&f, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &f, &kt, None).unwrap();
        let aux = build_aux(&forms, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g1: Vec<f64> = (0..g.n_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g2: Vec<f64> = (0..g.n_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| 2.0 * a - b).collect();
        let d = |v: &[f64]| dirichlet_correction(&forms, &aux, v, Layers::Local(1), TIGHT).unwrap().aggregate;
        let (d1, d2, ds) = (d(&g1), d(&g2), d(&sum));
        let combo: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| 2.0 * a - b).collect();
        let diff: Vec<f64> = combo.iter().zip(&ds).map(|(a, b)| a - b).collect();
        assert!(forms.norm(&diff, NormKind::Energy) <= 1e-9 * forms.norm(&ds, NormKind::Energy));

        let q1: Vec<f64> = (0..g.n_boundary_edges()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q2: Vec<f64> = (0..g.n_boundary_edges()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let qs: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| a + b).collect();
        let n = |v: &[f64]| neumann_correction(&forms, &aux, v, Layers::Local(2), false, TIGHT).unwrap().aggregate;
        let (n1, n2, ns) = (n(&q1), n(&q2), n(&qs));
        let diff: Vec<f64> = n1.iter().zip(&n2).zip(&ns).map(|((a, b), c)| a + b - c).collect();
        assert!(forms.norm(&diff, NormKind::Energy) <= 1e-9 * forms.norm(&ns, NormKind::Energy));
    }

    #[test]
    fn global_pieces_are_stable_and_sum_to_aggregate() {
        let g = mixed_grid(4, 4);
        let f = field(&g, 1e4);
        let kt = derive_kappa_tilde(&f, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &f, &kt, None).unwrap();
        let aux = build_aux(&forms, 2).unwrap();
        let gt = nodal(&g, |x, y| x * x + (x * y).exp());
        let pieces = correction_pieces(&forms, &aux, CorrectionKind::Dirichlet, &gt, Layers::Global, TIGHT).unwrap();
        for (i, p) in pieces.pieces.iter().enumerate() {
            let p = p.as_ref().unwrap().to_global(g.n_nodes());
            assert!(forms.norm(&p, NormKind::Energy) <= lift_energy_on_element(&forms, &gt, i) + 1e-8);
        }
        let agg = global_aggregate(&forms, &aux, CorrectionKind::Dirichlet, &gt, TIGHT).unwrap();
        let rep = correction_error_report(&forms, &pieces, &agg).unwrap();
        assert!(rep.energy < 1e-9, "{rep:?}");
    }

    #[test]
    fn error_report_examples() {
        // With Γ_D = ∂Ω the lift x is discrete harmonic and D^glo x vanishes.
        let g = mixed_grid(4, 4);
        let f = CoefficientField::uniform(g.n_fine(), 1.0);
        let kt = derive_kappa_tilde(&f, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &f, &kt, None).unwrap();
        let aux = build_aux(&forms, 2).unwrap();
        let gt = nodal(&g, |x, _| x);
        let glo = dirichlet_correction(&forms, &aux, &gt, Layers::Global, TIGHT).unwrap();
        let loc = dirichlet_correction(&forms, &aux, &gt, Layers::Local(1), TIGHT).unwrap();
        let same = correction_error_report(&forms, &glo, &glo).unwrap();
        assert_eq!((same.energy, same.l2), (0.0, 0.0));
        let zero = BoundaryCorrection {
            aggregate: vec![0.0; g.n_nodes()],
            ..loc.clone()
        };
        let one = correction_error_report(&forms, &zero, &glo).unwrap();
        assert!((one.energy - 1.0).abs() < 1e-14 && (one.l2 - 1.0).abs() < 1e-14);
        let rep = correction_error_report(&forms, &loc, &glo).unwrap();
        assert!(rep.energy > 0.0 && rep.energy < 1.0 && rep.l2 > 0.0 && rep.l2 < 1.0, "{rep:?}");
        let degen = correction_error_report(&forms, &zero, &BoundaryCorrection { layers: Layers::Global, ..zero.clone() }).unwrap();
        assert!(degen.degenerate);
    }

    #[test]
    fn localization_error_decreases() {
        let g = mixed_grid(6, 4);
        let f = field(&g, 1e4);
        let kt = derive_kappa_tilde(&f, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &f, &kt, None).unwrap();
        let aux = build_aux(&forms, 2).unwrap();
        let gt = nodal(&g, |x, y| x * x + (x * y).exp());
        let q = edgewise(&g, |e| if e.side == Side::Left { -1.0 } else { 1.0 });
        let dglo = dirichlet_correction(&forms, &aux, &gt, Layers::Global, TIGHT).unwrap();
        let nglo = neumann_correction(&forms, &aux, &q, Layers::Global, false, TIGHT).unwrap();
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for m in 1..=3 {
            let d = dirichlet_correction(&forms, &aux, &gt, Layers::Local(m), TIGHT).unwrap();
            let n = neumann_correction(&forms, &aux, &q, Layers::Local(m), false, TIGHT).unwrap();
            let ed = correction_error_report(&forms, &d, &dglo).unwrap().energy;
            let en = correction_error_report(&forms, &n, &nglo).unwrap().energy;
            assert!(ed < prev.0 && en < prev.1, "m={m}: {ed} {en}");
            prev = (ed, en);
        }
    }
}
