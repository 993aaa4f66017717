//! Property tests of mesh indexing, forms, projection, solver and harness invariants.

use std::path::Path;

use nalgebra::DVector;
use proptest::prelude::*;

use cemms::aux_space::{build_aux, project_broken, project_pi};
use cemms::experiments::output::sci;
use cemms::experiments::ExperimentConfig;
use cemms::fem::{pcg, Form, Forms, NormKind, SolverOptions};
use cemms::media::{derive_kappa_tilde, robin_b_from_kappa, synth_mask, CoefficientField, SynthStyle};
use cemms::mesh::{build_grids, oversample_region, BoundarySpec, GridGeometry, RegionSpace};
use cemms::theory::theory_constants;

fn grid(nc: usize, refine: usize) -> GridGeometry {
    build_grids(nc, refine, &BoundarySpec::AllNeumann).unwrap()
}

fn channel_field(g: &GridGeometry, contrast: f64, seed: u64) -> CoefficientField {
    let mask = synth_mask(g.n_fine(), SynthStyle::Channels, 0.05, seed).unwrap();
    CoefficientField::from_mask(&mask, 1.0, contrast).unwrap()
}

fn seeded_vector(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mesh_indices_round_trip(nc in 2usize..7, refine in 2usize..6, m in 1usize..4) {
        let g = grid(nc, refine);
        for n in 0..g.n_nodes() {
            let (x, y) = g.node_xy(n);
            prop_assert_eq!(g.node(x, y), n);
        }
        for e in 0..g.n_elements() {
            let cells: Vec<usize> = g.element_cells(e).collect();
            prop_assert_eq!(cells.len(), refine * refine);
            prop_assert!(cells.iter().all(|&c| g.cell_element(c) == e));
            let region = oversample_region(&g, e, m).unwrap();
            prop_assert!(region.elements.contains(&e));
            prop_assert!(region.elements.len() <= (2 * m + 1) * (2 * m + 1));
        }
    }

    #[test]
    fn energy_matrix_is_symmetric_and_stiffness_kills_constants(
        nc in 4usize..6, contrast in 1.0f64..1e6, seed in 0u64..100, robin in any::<bool>()
    ) {
        let g = grid(nc, 4);
        let f = channel_field(&g, contrast, seed);
        let kt = derive_kappa_tilde(&f, &g, Default::default()).unwrap();
        let b = robin_b_from_kappa(&g, &f);
        let forms = Forms::new(&g, &f, &kt, robin.then_some(b.as_slice())).unwrap();
        let space = RegionSpace::whole(&g);
        let a = forms.assemble_energy(&space).matrix;
        for r in 0..a.dim() {
            for (c, v) in a.row(r) {
                prop_assert!((v - a.get(c, r)).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
        let k = forms.assemble(&space, Form::Stiffness).matrix;
        let ones = vec![1.0; k.dim()];
        let mut y = vec![0.0; k.dim()];
        k.matvec(&ones, &mut y);
        prop_assert!(y.iter().all(|v| v.abs() <= 1e-9 * contrast));
    }

    #[test]
    fn projection_is_linear_idempotent_and_contractive(seed in 0u64..1000, l_m in 0usize..4, alpha in -3.0f64..3.0) {
        let g = grid(4, 4);
        let f = channel_field(&g, 1e4, seed % 7);
        let kt = derive_kappa_tilde(&f, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &f, &kt, None).unwrap();
        let aux = build_aux(&forms, l_m).unwrap();
        let u = seeded_vector(g.n_nodes(), seed);
        let v = seeded_vector(g.n_nodes(), seed + 1);
        let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + b).collect();
        let (pu, pv, pc) = (project_pi(&aux, &u, None), project_pi(&aux, &v, None), project_pi(&aux, &combo, None));
        for k in 0..pc.coeffs.len() {
            prop_assert!((pc.coeffs[k] - alpha * pu.coeffs[k] - pv.coeffs[k]).abs() <= 1e-9 * (1.0 + pc.coeffs[k].abs()));
        }
        let values: Vec<DVector<f64>> = (0..aux.elements.len()).map(|i| pu.element_values(&aux, i)).collect();
        let again = project_broken(&aux, &values);
        let scale = pu.s_norm_sq().sqrt();
        prop_assert!(pu.coeffs.iter().zip(&again.coeffs).all(|(a, b)| (a - b).abs() <= 1e-9 * scale));
        let s_sq: f64 = aux.elements.iter().map(|e| e.s_norm_sq(&e.gather(&u))).sum();
        prop_assert!(pu.s_norm_sq() <= s_sq * (1.0 + 1e-12));
    }

    #[test]
    fn pcg_meets_scaled_residual(seed in 0u64..1000, contrast in 1.0f64..1e6) {
        let g = build_grids(4, 4, &BoundarySpec::AllDirichlet).unwrap();
        let f = channel_field(&g, contrast, seed % 5);
        let kt = derive_kappa_tilde(&f, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &f, &kt, None).unwrap();
        let a = forms.assemble_energy(&RegionSpace::whole(&g)).matrix;
        let rhs = seeded_vector(a.dim(), seed);
        let out = pcg(&a, &rhs, SolverOptions::with_tol(1e-10)).unwrap();
        let mut ax = vec![0.0; a.dim()];
        a.matvec(&out.x, &mut ax);
        let d = a.diagonal();
        let scaled = |v: &mut dyn Iterator<Item = (f64, f64)>| v.map(|(r, d)| r * r / d).sum::<f64>().sqrt();
        let res = scaled(&mut ax.iter().zip(&rhs).zip(&d).map(|((x, b), d)| (b - x, *d)));
        let bn = scaled(&mut rhs.iter().zip(&d).map(|(b, d)| (*b, *d)));
        prop_assert!(res <= 1e-10 * bn * 1.0001);
    }

    #[test]
    fn energy_norm_is_positive_homogeneous(seed in 0u64..1000, t in -5.0f64..5.0) {
        let g = grid(4, 4);
        let f = channel_field(&g, 1e3, seed % 3);
        let kt = derive_kappa_tilde(&f, &g, Default::default()).unwrap();
        let forms = Forms::new(&g, &f, &kt, None).unwrap();
        let v = seeded_vector(g.n_nodes(), seed);
        let tv: Vec<f64> = v.iter().map(|x| t * x).collect();
        for kind in [NormKind::Energy, NormKind::L2] {
            let (a, b) = (forms.norm(&v, kind), forms.norm(&tv, kind));
            prop_assert!((b - t.abs() * a).abs() <= 1e-12 * (1.0 + b));
        }
    }

    #[test]
    fn theta_in_unit_interval_and_monotone(log_l in -6.0f64..6.0, step in 0.01f64..2.0) {
        let lo = theory_constants(10f64.powf(log_l)).unwrap();
        let hi = theory_constants(10f64.powf(log_l + step)).unwrap();
        prop_assert!(lo.theta > 0.0 && lo.theta < 1.0);
        prop_assert!(hi.theta < lo.theta);
        prop_assert!((lo.theta - lo.c_star / (lo.c_star + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn sci_keeps_six_significant_digits(v in -1e12f64..1e12) {
        let back: f64 = sci(v).parse().unwrap();
        prop_assert!((back - v).abs() <= 5e-6 * v.abs());
    }

    #[test]
    fn config_values_survive_parsing(
        nc in 2usize..20, refine in 2usize..10, l_m in 0usize..3, seed in any::<u64>(),
        contrast in 1.0f64..1e8, tol in 1e-14f64..1e-2, ms in proptest::collection::btree_set(1usize..6, 1..4)
    ) {
        let m: Vec<usize> = ms.into_iter().collect();
        let list = m.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let text = format!(
            "problem = model2-mixed\nn_coarse = {nc}\nrefine = {refine}\nl_m = {l_m}\nm = {list}\ncontrast = {contrast:e}\nseed = {seed}\ntol = {tol:e}\noutput = out\n"
        );
        let cfg = ExperimentConfig::parse(&text, Path::new("/base")).unwrap();
        prop_assert_eq!(cfg.n_coarse, nc);
        prop_assert_eq!(cfg.refine, refine);
        prop_assert_eq!(cfg.l_m, l_m);
        prop_assert_eq!(cfg.seed, seed);
        prop_assert_eq!(cfg.contrasts, vec![contrast]);
        prop_assert_eq!(cfg.tol, tol);
        prop_assert_eq!(cfg.output, Path::new("/base/out").to_path_buf());
        let bad = format!("{text}colour = blue\n");
        prop_assert!(ExperimentConfig::parse(&bad, Path::new(".")).is_err());
    }
}
