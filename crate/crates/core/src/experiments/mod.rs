//! Experiment harness: parameter sweeps over layers and contrasts, written as
//! CSV tables, and decay studies of the global basis and boundary corrections.

pub mod config;
pub mod output;
pub mod presets;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use crate::aux_space::{build_aux, AuxBasis};
use crate::boundary_ops::{correction_error_report, correction_pieces, global_aggregate, BoundaryCorrection, CorrectionKind};
use crate::cem_basis::{build_global_basis, decay_profile, Layers};
use crate::error::{at_stage, Error, Result};
use crate::fem::{fine_reference_solve, Forms, SolverOptions};
use crate::media::{derive_kappa_tilde, inclusion_components, CoefficientField, Mask, ProblemData};
use crate::mesh::{build_grids, GridGeometry};
use crate::ms_solver::{auto_layers, solve, MsComponents};
use crate::theory::theory_constants;

pub use config::{ExperimentConfig, LayerSweep, MediumSpec, Preset, ProblemKind};
use output::{write_all, Cell, Table};
use presets::{boundary_spec, field_for, medium_mask, problem_data, SOURCE_NOTE};

/// One line of the sweep table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub m: usize,
    pub coarse_h: f64,
    pub contrast: f64,
    pub l_m: usize,
    /// Relative energy and L² errors of the localized boundary correction.
    pub correction: Option<(f64, f64)>,
    pub e_a: f64,
    pub e_l2: f64,
    pub lambda_prime: f64,
    pub lambda: f64,
    pub ref_norm_a: f64,
    pub ref_norm_l2: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub rows: Vec<SweepRow>,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Tail of one global basis function outside `K_i^layer`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileRow {
    pub contrast: f64,
    pub element: usize,
    pub j: usize,
    pub layer: usize,
    pub tail: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionRow {
    pub contrast: f64,
    pub kind: CorrectionKind,
    pub m: usize,
    pub coarse_h: f64,
    pub l_m: usize,
    pub err_a: f64,
    pub err_l2: f64,
    pub global_norm_a: f64,
    pub global_norm_l2: f64,
    pub lambda_prime: f64,
    pub lambda: f64,
    pub theta: f64,
}

#[derive(Clone, Debug)]
pub struct DecayOutput {
    pub profiles: Vec<ProfileRow>,
    pub corrections: Vec<CorrectionRow>,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

pub fn kind_label(kind: CorrectionKind) -> &'static str {
    match kind {
        CorrectionKind::Dirichlet => "D",
        CorrectionKind::Neumann | CorrectionKind::RobinFlux => "N",
    }
}

/// Everything fixed by the config except the contrast.
struct Setting {
    geom: GridGeometry,
    mask: Option<Mask>,
    opts: SolverOptions,
}

/// The per-contrast problem: medium, weights and data.
struct Instance {
    contrast: f64,
    field: CoefficientField,
    kappa_tilde: Vec<f64>,
    data: ProblemData,
}

impl Setting {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let geom = at_stage("mesh", build_grids(cfg.n_coarse, cfg.refine, &boundary_spec(cfg.problem)))?;
        let mask = at_stage("medium", medium_mask(cfg, geom.n_fine()))?;
        Ok(Setting {
            geom,
            mask,
            opts: SolverOptions::with_tol(cfg.tol),
        })
    }

    fn instance(&self, cfg: &ExperimentConfig, contrast: f64) -> Result<Instance> {
        let field = at_stage("medium", field_for(cfg, self.mask.as_ref(), self.geom.n_fine(), contrast))?;
        let kappa_tilde = at_stage("kappa_tilde", derive_kappa_tilde(&field, &self.geom, cfg.kappa_tilde))?;
        let data = problem_data(cfg.problem, cfg.preset, &self.geom, &field);
        Ok(Instance {
            contrast,
            field,
            kappa_tilde,
            data,
        })
    }

    fn forms<'a>(&'a self, inst: &'a Instance) -> Result<Forms<'a>> {
        at_stage(
            "forms",
            Forms::new(&self.geom, &inst.field, &inst.kappa_tilde, inst.data.robin_b.as_deref()),
        )
    }
}

fn max_pieces(geom: &GridGeometry, inst: &Instance) -> Result<usize> {
    Ok(inclusion_components(&inst.field, geom)?.into_iter().max().unwrap_or(0))
}

fn layer_list(cfg: &ExperimentConfig, aux: &AuxBasis, geom: &GridGeometry) -> Result<Vec<usize>> {
    match &cfg.layers {
        LayerSweep::List(ms) => Ok(ms.clone()),
        LayerSweep::Auto => Ok(vec![at_stage("auto layers", auto_layers(aux, geom))?]),
    }
}

/// The correction reported next to the solution errors.
fn primary_kind(problem: ProblemKind) -> CorrectionKind {
    match problem {
        ProblemKind::Model1Dirichlet => CorrectionKind::Dirichlet,
        ProblemKind::Model2Mixed => CorrectionKind::Neumann,
        ProblemKind::Model3Robin => CorrectionKind::RobinFlux,
    }
}

fn correction_input(kind: CorrectionKind, data: &ProblemData) -> &[f64] {
    match kind {
        CorrectionKind::Dirichlet => &data.g_tilde,
        _ => &data.q,
    }
}

fn local_correction(kind: CorrectionKind, comps: &MsComponents) -> Result<&BoundaryCorrection> {
    match kind {
        CorrectionKind::Dirichlet => comps
            .dirichlet
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("no Dirichlet correction for this problem".into())),
        _ => Ok(&comps.neumann),
    }
}

fn metadata(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "problem = {}", cfg.problem.name());
    let _ = writeln!(s, "preset = {}", cfg.preset.name());
    let _ = writeln!(s, "n_coarse = {}", cfg.n_coarse);
    let _ = writeln!(s, "refine = {}", cfg.refine);
    let _ = writeln!(s, "l_m = {}", cfg.l_m);
    let layers = match &cfg.layers {
        LayerSweep::Auto => "auto".to_string(),
        LayerSweep::List(ms) => ms.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(", "),
    };
    let contrasts: Vec<String> = cfg.contrasts.iter().map(|&c| output::sci(c)).collect();
    let _ = writeln!(s, "m = {layers}");
    let _ = writeln!(s, "contrast = {}", contrasts.join(", "));
    let _ = writeln!(s, "kappa_m = {}", cfg.kappa_matrix);
    let _ = writeln!(s, "medium = {}", cfg.medium.describe());
    let _ = writeln!(s, "kappa_tilde = {}", cfg.kappa_tilde.name());
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "tol = {:e}", cfg.tol);
    if cfg.preset == Preset::Standard {
        let _ = writeln!(s, "source: {SOURCE_NOTE}");
    }
    s
}

/// Runs the (contrast × m) sweep and writes `sweep.csv` and `summary.txt`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let set = Setting::new(cfg)?;
    let g = &set.geom;
    let kind = primary_kind(cfg.problem);
    let mut rows = Vec::new();
    let mut summary = metadata(cfg);
    for &contrast in &cfg.contrasts {
        let inst = set.instance(cfg, contrast)?;
        let forms = set.forms(&inst)?;
        let aux = at_stage("aux_space", build_aux(&forms, cfg.l_m))?;
        let u_ref = at_stage("reference", fine_reference_solve(&forms, &inst.data, SolverOptions::default()))?;
        let oracle = if cfg.oracle {
            let input = correction_input(kind, &inst.data);
            Some(at_stage("global correction", global_aggregate(&forms, &aux, kind, input, set.opts))?)
        } else {
            None
        };
        let _ = writeln!(
            summary,
            "contrast {}: Lambda = {}, Lambda' = {}, degenerate truncations = {}, max inclusion pieces per element = {}",
            output::sci(contrast),
            output::sci(aux.lambda),
            output::sci(aux.lambda_prime),
            aux.degenerate.len(),
            max_pieces(g, &inst)?
        );
        for m in layer_list(cfg, &aux, g)? {
            let t = Instant::now();
            let (comps, rep) = at_stage(
                format!("multiscale solve m={m}"),
                solve(&forms, &aux, &inst.data, Layers::Local(m), set.opts, Some(&u_ref)),
            )?;
            let wall_time = t.elapsed().as_secs_f64();
            let correction = match &oracle {
                Some(glo) => {
                    let r = at_stage("correction report", correction_error_report(&forms, local_correction(kind, &comps)?, glo))?;
                    Some((r.energy, r.l2))
                }
                None => None,
            };
            let errors = rep.errors.ok_or_else(|| Error::NonFinite("solution errors".into()))?;
            let row = SweepRow {
                m,
                coarse_h: g.coarse_h(),
                contrast: inst.contrast,
                l_m: cfg.l_m,
                correction,
                e_a: errors.energy,
                e_l2: errors.l2,
                lambda_prime: aux.lambda_prime,
                lambda: aux.lambda,
                ref_norm_a: rep.ref_norm_a.unwrap_or(0.0),
                ref_norm_l2: rep.ref_norm_l2.unwrap_or(0.0),
                wall_time,
            };
            let _ = write!(summary, "  m = {m}: E_a = {}, E_L2 = {}", output::sci(row.e_a), output::sci(row.e_l2));
            if let Some((a, l)) = row.correction {
                let _ = write!(summary, ", {0}_a = {1}, {0}_L2 = {2}", kind_label(kind), output::sci(a), output::sci(l));
            }
            if cfg.record_time {
                let _ = write!(summary, " ({wall_time:.2} s)");
            }
            summary.push('\n');
            rows.push(row);
        }
    }
    let csv = sweep_table(cfg, kind, &rows)?;
    let files = write_all(&cfg.output, &[("sweep.csv", csv), ("summary.txt", summary.clone())])?;
    Ok(ExperimentOutput { rows, files, summary })
}

fn sweep_table(cfg: &ExperimentConfig, kind: CorrectionKind, rows: &[SweepRow]) -> Result<String> {
    let (ca, cl) = match kind_label(kind) {
        "D" => ("D_a", "D_L"),
        _ => ("N_a", "N_L"),
    };
    let mut header = vec!["m", "H", "contrast", "l_m"];
    if cfg.oracle {
        header.extend([ca, cl]);
    }
    header.extend(["E_a", "E_L", "Lambda_prime", "Lambda", "ref_norm_a", "ref_norm_L2", "wall_time"]);
    let mut t = Table::new(&header);
    for r in rows {
        let mut cells = vec![Cell::Int(r.m), Cell::Float(r.coarse_h), Cell::Float(r.contrast), Cell::Int(r.l_m)];
        if let Some((a, l)) = r.correction {
            cells.extend([Cell::Error(a), Cell::Error(l)]);
        }
        cells.extend([
            Cell::Error(r.e_a),
            Cell::Error(r.e_l2),
            Cell::Float(r.lambda_prime),
            Cell::Float(r.lambda),
            Cell::Float(r.ref_norm_a),
            Cell::Float(r.ref_norm_l2),
            if cfg.record_time { Cell::Float(r.wall_time) } else { Cell::Text("-") },
        ]);
        t.push(&cells)?;
    }
    Ok(t.render())
}

/// Default profiled elements: a corner, a boundary midpoint and the center.
pub fn default_decay_elements(n_coarse: usize) -> Vec<usize> {
    let mid = n_coarse / 2;
    let mut v = vec![0, mid, mid * n_coarse + mid];
    v.dedup();
    v
}

/// Kinds with a nonzero input for this problem, in a fixed order.
fn decay_kinds(problem: ProblemKind, data: &ProblemData) -> Vec<CorrectionKind> {
    let candidates: &[CorrectionKind] = match problem {
        ProblemKind::Model1Dirichlet => &[CorrectionKind::Dirichlet],
        ProblemKind::Model2Mixed => &[CorrectionKind::Dirichlet, CorrectionKind::Neumann],
        ProblemKind::Model3Robin => &[CorrectionKind::RobinFlux],
    };
    candidates
        .iter()
        .copied()
        .filter(|&k| correction_input(k, data).iter().any(|&v| v != 0.0))
        .collect()
}

/// Decay profiles of global basis functions and errors of the localized
/// corrections per `m`; writes `decay_profiles.csv`, `corrections.csv` and
/// `summary.txt`.
pub fn run_decay_study(cfg: &ExperimentConfig) -> Result<DecayOutput> {
    let set = Setting::new(cfg)?;
    let g = &set.geom;
    let elements = if cfg.decay_elements.is_empty() {
        default_decay_elements(cfg.n_coarse)
    } else {
        cfg.decay_elements.clone()
    };
    let mut profiles = Vec::new();
    let mut corrections = Vec::new();
    let mut summary = metadata(cfg);
    for &contrast in &cfg.contrasts {
        let inst = set.instance(cfg, contrast)?;
        let forms = set.forms(&inst)?;
        let aux = at_stage("aux_space", build_aux(&forms, cfg.l_m))?;
        let theta = at_stage("theory", theory_constants(aux.lambda))?.theta;
        let _ = writeln!(
            summary,
            "contrast {}: Lambda = {}, Lambda' = {}, theta = {}, max inclusion pieces per element = {}",
            output::sci(contrast),
            output::sci(aux.lambda),
            output::sci(aux.lambda_prime),
            output::sci(theta),
            max_pieces(g, &inst)?
        );
        for &i in &elements {
            for j in 0..aux.n_per_element() {
                let psi = at_stage(format!("global basis ({i},{j})"), build_global_basis(&forms, &aux, i, j, set.opts))?;
                let profile = decay_profile(&forms, &aux, &psi.to_global(g.n_nodes()), i);
                let worst = profile
                    .windows(2)
                    .filter(|w| w[0] > 0.0)
                    .map(|w| w[1] / w[0])
                    .fold(0.0, f64::max);
                let _ = writeln!(summary, "  psi({i},{j}): max per-layer ratio {}", output::sci(worst));
                profiles.extend(profile.into_iter().enumerate().map(|(layer, tail)| ProfileRow {
                    contrast,
                    element: i,
                    j,
                    layer,
                    tail,
                    theta,
                }));
            }
        }
        for kind in decay_kinds(cfg.problem, &inst.data) {
            let input = correction_input(kind, &inst.data);
            let glo = at_stage("global correction", global_aggregate(&forms, &aux, kind, input, set.opts))?;
            let glo_a = forms.norm(&glo.aggregate, crate::fem::NormKind::Energy);
            let glo_l2 = forms.norm(&glo.aggregate, crate::fem::NormKind::L2);
            for m in layer_list(cfg, &aux, g)? {
                let loc = at_stage(
                    format!("localized correction m={m}"),
                    correction_pieces(&forms, &aux, kind, input, Layers::Local(m), set.opts),
                )?;
                let r = at_stage("correction report", correction_error_report(&forms, &loc, &glo))?;
                let _ = writeln!(
                    summary,
                    "  {}^{m}: energy {}, L2 {}",
                    kind_label(kind),
                    output::sci(r.energy),
                    output::sci(r.l2)
                );
                corrections.push(CorrectionRow {
                    contrast,
                    kind,
                    m,
                    coarse_h: g.coarse_h(),
                    l_m: cfg.l_m,
                    err_a: r.energy,
                    err_l2: r.l2,
                    global_norm_a: glo_a,
                    global_norm_l2: glo_l2,
                    lambda_prime: aux.lambda_prime,
                    lambda: aux.lambda,
                    theta,
                });
            }
        }
    }
    let mut pt = Table::new(&["contrast", "element", "j", "layer", "tail", "theta"]);
    for p in &profiles {
        pt.push(&[
            Cell::Float(p.contrast),
            Cell::Int(p.element),
            Cell::Int(p.j),
            Cell::Int(p.layer),
            Cell::Float(p.tail),
            Cell::Float(p.theta),
        ])?;
    }
    let mut ct = Table::new(&[
        "contrast",
        "kind",
        "m",
        "H",
        "l_m",
        "err_a",
        "err_L",
        "global_norm_a",
        "global_norm_L2",
        "Lambda_prime",
        "Lambda",
        "theta",
    ]);
    for c in &corrections {
        ct.push(&[
            Cell::Float(c.contrast),
            Cell::Text(kind_label(c.kind)),
            Cell::Int(c.m),
            Cell::Float(c.coarse_h),
            Cell::Int(c.l_m),
            Cell::Error(c.err_a),
            Cell::Error(c.err_l2),
            Cell::Float(c.global_norm_a),
            Cell::Float(c.global_norm_l2),
            Cell::Float(c.lambda_prime),
            Cell::Float(c.lambda),
            Cell::Float(c.theta),
        ])?;
    }
    let files = write_all(
        &cfg.output,
        &[
            ("decay_profiles.csv", pt.render()),
            ("corrections.csv", ct.render()),
            ("summary.txt", summary.clone()),
        ],
    )?;
    Ok(DecayOutput {
        profiles,
        corrections,
        files,
        summary,
    })
}
