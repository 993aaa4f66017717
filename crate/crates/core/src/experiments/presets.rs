//! Boundary layouts, media and data of the three model problems.

use crate::error::{Error, Result};
use crate::media::{
    cellwise, edgewise, nodal, robin_b_from_kappa, synth_mask, CoefficientField, Mask, ProblemData,
};
use crate::mesh::{BoundaryLabel, BoundarySpec, GridGeometry, Side};

use super::config::{ExperimentConfig, MediumSpec, Preset, ProblemKind};

/// Recorded in every run's metadata: the quadrant values used for `f`.
pub const SOURCE_NOTE: &str =
    "f = 1 on (0,.5)x(0,.5), 2 on (.5,1)x(0,.5), -1 on (0,.5)x(.5,1), 0 on (.5,1)x(.5,1) (substitute piecewise-constant source)";

pub fn boundary_spec(problem: ProblemKind) -> BoundarySpec {
    use BoundaryLabel::*;
    match problem {
        ProblemKind::Model1Dirichlet => BoundarySpec::AllDirichlet,
        // Bottom, right, top, left.
        ProblemKind::Model2Mixed => BoundarySpec::Sides([Neumann, Neumann, Dirichlet, Neumann]),
        ProblemKind::Model3Robin => BoundarySpec::AllNeumann,
    }
}

pub fn quadrant_source(x: f64, y: f64) -> f64 {
    match (x < 0.5, y < 0.5) {
        (true, true) => 1.0,
        (false, true) => 2.0,
        (true, false) => -1.0,
        (false, false) => 0.0,
    }
}

pub fn lift(x: f64, y: f64) -> f64 {
    x * x + (x * y).exp()
}

/// Boundary flux of the mixed and Robin problems; the top side is Γ_D in the mixed one.
fn side_flux(side: Side, x: f64) -> f64 {
    match side {
        Side::Left => -1.0,
        Side::Right => 1.0,
        Side::Bottom if x < 0.5 => 1.0,
        Side::Bottom => 0.0,
        Side::Top if x < 0.5 => 0.0,
        Side::Top => -1.0,
    }
}

/// The inclusion mask of the configured medium, or `None` for a uniform one.
pub fn medium_mask(cfg: &ExperimentConfig, n_fine: usize) -> Result<Option<Mask>> {
    match &cfg.medium {
        MediumSpec::Uniform => Ok(None),
        MediumSpec::Synth { style, density } => synth_mask(n_fine, *style, *density, cfg.seed).map(Some),
        MediumSpec::File(path) => {
            let mask = Mask::read(path)?;
            if mask.nx != n_fine || mask.ny != n_fine {
                return Err(Error::Config(format!(
                    "mask {} is {}x{}, the fine grid is {n_fine}x{n_fine}",
                    path.display(),
                    mask.nx,
                    mask.ny
                )));
            }
            Ok(Some(mask))
        }
    }
}

pub fn field_for(cfg: &ExperimentConfig, mask: Option<&Mask>, n_fine: usize, contrast: f64) -> Result<CoefficientField> {
    match mask {
        None => Ok(CoefficientField::uniform(n_fine, cfg.kappa_matrix)),
        Some(m) => CoefficientField::from_mask(m, cfg.kappa_matrix, cfg.kappa_matrix * contrast),
    }
}

pub fn problem_data(problem: ProblemKind, preset: Preset, geom: &GridGeometry, field: &CoefficientField) -> ProblemData {
    let mut data = ProblemData::zeros(geom);
    match preset {
        Preset::Standard => {
            data.f = cellwise(geom, quadrant_source);
            match problem {
                ProblemKind::Model1Dirichlet => data.g_tilde = nodal(geom, lift),
                ProblemKind::Model2Mixed => data.q = edgewise(geom, |e| side_flux(e.side, e.midpoint[0])),
                ProblemKind::Model3Robin => {
                    data.q = edgewise(geom, |e| side_flux(e.side, e.midpoint[0]));
                    data.robin_b = Some(robin_b_from_kappa(geom, field));
                }
            }
        }
        Preset::HarmonicLinear => {
            data.g_tilde = nodal(geom, |x, _| x);
            // Outward flux of x₁ with κ ≡ κ_m.
            let k = field.kappa_m;
            data.q = edgewise(geom, |e| match e.side {
                Side::Left => -k,
                Side::Right => k,
                _ => 0.0,
            });
        }
        Preset::Constant => {
            data.q = edgewise(geom, |_| 1.0);
            data.robin_b = Some(robin_b_from_kappa(geom, field));
        }
    }
    data
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grids;

    #[test]
    fn flux_values_by_side() {
        let g = build_grids(2, 4, &BoundarySpec::AllNeumann).unwrap();
        let field = CoefficientField::uniform(g.n_fine(), 1.0);
        let d = problem_data(ProblemKind::Model3Robin, Preset::Standard, &g, &field);
        for (e, &q) in g.boundary_edges().iter().zip(&d.q) {
            let left_half = e.midpoint[0] < 0.5;
            let expect = match e.side {
                Side::Left => -1.0,
                Side::Right => 1.0,
                Side::Bottom if left_half => 1.0,
                Side::Top if !left_half => -1.0,
                _ => 0.0,
            };
            assert_eq!(q, expect);
        }
        assert!(d.robin_b.is_some());
        assert_eq!(d.f.iter().filter(|&&v| v == 2.0).count(), g.n_cells() / 4);
    }

    #[test]
    fn mixed_flux_vanishes_on_dirichlet_side() {
        let g = build_grids(2, 4, &boundary_spec(ProblemKind::Model2Mixed)).unwrap();
        let field = CoefficientField::uniform(g.n_fine(), 1.0);
        let d = problem_data(ProblemKind::Model2Mixed, Preset::Standard, &g, &field);
        d.validate(&g).unwrap();
        assert!(d.g_tilde.iter().all(|&v| v == 0.0));
        for (e, &q) in g.boundary_edges().iter().zip(&d.q) {
            if e.side == Side::Top {
                assert_eq!(q, 0.0);
            }
        }
    }
}
