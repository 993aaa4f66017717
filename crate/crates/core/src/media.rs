//! Two-phase coefficient fields, the weight κ̃, and boundary/source data.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryEdge, BoundaryLabel, GridGeometry};

/// Binary phase mask over a grid of cells, `true` marking the inclusion phase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    pub fn empty(n: usize) -> Self {
        Mask {
            nx: n,
            ny: n,
            cells: vec![false; n * n],
        }
    }

    pub fn fraction(&self) -> f64 {
        self.cells.iter().filter(|&&c| c).count() as f64 / self.cells.len() as f64
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (nx, ny, vals) = read_grid(path)?;
        let mut cells = Vec::with_capacity(vals.len());
        for (k, v) in vals.iter().enumerate() {
            cells.push(match *v {
                0.0 => false,
                1.0 => true,
                other => {
                    return Err(Error::GridFormat {
                        path: path.to_path_buf(),
                        line: 2 + k / nx,
                        msg: format!("mask entry {other} is not 0 or 1"),
                    })
                }
            });
        }
        Ok(Mask { nx, ny, cells })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.nx, self.ny);
        for row in self.cells.chunks(self.nx) {
            let line: Vec<&str> = row.iter().map(|&c| if c { "1" } else { "0" }).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn read_grid(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_grid(&text).map_err(|(line, msg)| Error::GridFormat {
        path: path.to_path_buf(),
        line,
        msg,
    })
}

fn parse_grid(text: &str) -> std::result::Result<(usize, usize, Vec<f64>), (usize, String)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or((1, "empty file".to_string()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| (1, format!("bad dimension {t:?}: {e}"))))
        .collect::<std::result::Result<_, _>>()?;
    let [nx, ny] = dims[..] else {
        return Err((1, "header must be `nx ny`".into()));
    };
    if nx == 0 || ny == 0 {
        return Err((1, "zero dimension".into()));
    }
    let mut vals = Vec::with_capacity(nx * ny);
    for row in 0..ny {
        let line = lines.next().ok_or((row + 2, format!("expected {ny} rows")))?;
        let before = vals.len();
        for t in line.split_whitespace() {
            vals.push(t.parse::<f64>().map_err(|e| (row + 2, format!("bad value {t:?}: {e}")))?);
        }
        if vals.len() - before != nx {
            return Err((row + 2, format!("expected {nx} values, got {}", vals.len() - before)));
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err((ny + 2, "trailing data after last row".into()));
    }
    Ok((nx, ny, vals))
}

/// Writes real values in the grid format (`nx ny` header, rows from y = 0).
pub fn write_real_grid(path: &Path, nx: usize, ny: usize, values: &[f64]) -> Result<()> {
    if values.len() != nx * ny {
        return Err(Error::DimensionMismatch {
            what: "grid values",
            expected: nx * ny,
            got: values.len(),
        });
    }
    let mut s = format!("{nx} {ny}\n");
    for row in values.chunks(nx) {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{v:.12e}");
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_real_grid(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    read_grid(path)
}

/// Cellwise isotropic coefficient κ taking the two values `kappa_m` and `kappa_i`.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    pub n: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub kappa_m: f64,
    pub kappa_i: f64,
}

impl CoefficientField {
    pub fn from_mask(mask: &Mask, kappa_m: f64, kappa_i: f64) -> Result<Self> {
        if mask.nx != mask.ny {
            return Err(Error::DimensionMismatch {
                what: "mask must be square",
                expected: mask.nx,
                got: mask.ny,
            });
        }
        if !(kappa_m > 0.0 && kappa_m <= kappa_i && kappa_i.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < kappa_m <= kappa_I < inf, got ({kappa_m}, {kappa_i})"
            )));
        }
        let values = mask.cells.iter().map(|&c| if c { kappa_i } else { kappa_m }).collect();
        Ok(CoefficientField {
            n: mask.nx,
            values,
            mask: mask.cells.clone(),
            kappa_m,
            kappa_i,
        })
    }

    pub fn uniform(n: usize, kappa: f64) -> Self {
        CoefficientField {
            n,
            values: vec![kappa; n * n],
            mask: vec![false; n * n],
            kappa_m: kappa,
            kappa_i: kappa,
        }
    }

    pub fn contrast(&self) -> f64 {
        self.kappa_i / self.kappa_m
    }

    /// Same geometry with a different inclusion value.
    pub fn with_inclusion_value(&self, kappa_i: f64) -> Result<Self> {
        let mask = Mask {
            nx: self.n,
            ny: self.n,
            cells: self.mask.clone(),
        };
        Self::from_mask(&mask, self.kappa_m, kappa_i)
    }

    pub fn check_matches(&self, geom: &GridGeometry) -> Result<()> {
        if self.n != geom.n_fine() {
            return Err(Error::DimensionMismatch {
                what: "coefficient field cells per axis",
                expected: geom.n_fine(),
                got: self.n,
            });
        }
        Ok(())
    }
}

/// Reads a binary mask file and maps 1 to `kappa_i`, 0 to `kappa_m`.
pub fn load_field(path: &Path, kappa_m: f64, kappa_i: f64) -> Result<CoefficientField> {
    CoefficientField::from_mask(&Mask::read(path)?, kappa_m, kappa_i)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthStyle {
    /// Small square inclusions strictly inside the domain.
    Inclusions,
    /// Thin straight channels strictly inside the domain.
    Channels,
    /// Thin channels, some of them attached to the boundary.
    BoundaryChannels,
}

impl SynthStyle {
    pub fn name(&self) -> &'static str {
        match self {
            SynthStyle::Inclusions => "inclusions",
            SynthStyle::Channels => "channels",
            SynthStyle::BoundaryChannels => "boundary-channels",
        }
    }
}

impl std::str::FromStr for SynthStyle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inclusions" => Ok(SynthStyle::Inclusions),
            "channels" => Ok(SynthStyle::Channels),
            "boundary-channels" | "boundary-touching-channels" => Ok(SynthStyle::BoundaryChannels),
            other => Err(Error::InvalidParameter(format!("unknown medium style {other:?}"))),
        }
    }
}

/// Physical shape parameters of the synthetic media, in unit-square lengths.
const CHANNEL_WIDTH: f64 = 1.0 / 80.0;
const CHANNEL_LEN: (f64, f64) = (0.2, 0.45);
const INCLUSION_SIDE: (f64, f64) = (0.03, 0.06);
const GAP: f64 = 0.03;
const MAX_ATTEMPTS: usize = 20_000;

#[derive(Clone, Copy, Debug)]
struct Rect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Rect {
    fn grow(&self, d: f64) -> Rect {
        Rect {
            x0: self.x0 - d,
            x1: self.x1 + d,
            y0: self.y0 - d,
            y1: self.y1 + d,
        }
    }
    fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] < self.x1 && p[1] >= self.y0 && p[1] < self.y1
    }
}

/// Generates an `n x n` two-phase mask. Deterministic in `seed`.
///
/// Shapes are placed one at a time (rejecting any that come within a fixed
/// gap of an earlier one) until the inclusion fraction reaches `density`, or
/// until no further shape fits.
pub fn synth_mask(n: usize, style: SynthStyle, density: f64, seed: u64) -> Result<Mask> {
    if n == 0 {
        return Err(Error::InvalidParameter("mask size must be positive".into()));
    }
    if !(0.0..1.0).contains(&density) {
        return Err(Error::InvalidParameter(format!("density must lie in [0, 1), got {density}")));
    }
    let mut mask = Mask::empty(n);
    if density == 0.0 {
        return Ok(mask);
    }
    let h = 1.0 / n as f64;
    let width = CHANNEL_WIDTH.max(h);
    let target = (density * (n * n) as f64).ceil() as usize;
    let mut filled = 0usize;
    let mut placed: Vec<Rect> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 2.0 * h + GAP;
    let largest = match style {
        SynthStyle::Inclusions => INCLUSION_SIDE.1.max(h),
        SynthStyle::Channels | SynthStyle::BoundaryChannels => CHANNEL_LEN.1,
    };
    if 1.0 - 2.0 * margin - largest <= 0.0 {
        return Err(Error::InvalidParameter(format!("a {n}x{n} grid is too coarse for {style:?} shapes")));
    }

    for attempt in 0..MAX_ATTEMPTS {
        if filled >= target {
            break;
        }
        let rect = match style {
            SynthStyle::Inclusions => {
                let s = rng.random_range(INCLUSION_SIDE.0..INCLUSION_SIDE.1).max(h);
                let x0 = rng.random_range(margin..1.0 - margin - s);
                let y0 = rng.random_range(margin..1.0 - margin - s);
                Rect {
                    x0,
                    x1: x0 + s,
                    y0,
                    y1: y0 + s,
                }
            }
            SynthStyle::Channels | SynthStyle::BoundaryChannels => {
                let len = rng.random_range(CHANNEL_LEN.0..CHANNEL_LEN.1);
                let horizontal = rng.random_bool(0.5);
                // First channel always anchored, then every other one.
                let anchored = style == SynthStyle::BoundaryChannels && (placed.is_empty() || attempt % 2 == 0);
                let (along0, across0) = if anchored {
                    let start = if rng.random_bool(0.5) { 0.0 } else { 1.0 - len };
                    (start, rng.random_range(margin..1.0 - margin - width))
                } else {
                    (
                        rng.random_range(margin..1.0 - margin - len),
                        rng.random_range(margin..1.0 - margin - width),
                    )
                };
                if horizontal {
                    Rect {
                        x0: along0,
                        x1: along0 + len,
                        y0: across0,
                        y1: across0 + width,
                    }
                } else {
                    Rect {
                        x0: across0,
                        x1: across0 + width,
                        y0: along0,
                        y1: along0 + len,
                    }
                }
            }
        };
        let halo = rect.grow(GAP);
        if placed.iter().any(|p| overlaps(&halo, p)) {
            continue;
        }
        let mut added = 0;
        for cy in 0..n {
            for cx in 0..n {
                let c = [(cx as f64 + 0.5) * h, (cy as f64 + 0.5) * h];
                if rect.contains(c) && !mask.cells[cy * n + cx] {
                    mask.cells[cy * n + cx] = true;
                    added += 1;
                }
            }
        }
        if added > 0 {
            filled += added;
            placed.push(rect);
        }
    }
    Ok(mask)
}

fn overlaps(a: &Rect, b: &Rect) -> bool {
    a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1
}

/// Synthesizes a two-phase field on the fine mesh of `geom`.
pub fn synth_channels(
    geom: &GridGeometry,
    style: SynthStyle,
    density: f64,
    seed: u64,
    kappa_m: f64,
    kappa_i: f64,
) -> Result<CoefficientField> {
    let mask = synth_mask(geom.n_fine(), style, density, seed)?;
    CoefficientField::from_mask(&mask, kappa_m, kappa_i)
}

/// True when some inclusion cell touches ∂Ω.
pub fn touches_boundary(mask: &Mask) -> bool {
    let (nx, ny) = (mask.nx, mask.ny);
    (0..ny).any(|y| {
        (0..nx).any(|x| (x == 0 || y == 0 || x == nx - 1 || y == ny - 1) && mask.cells[y * nx + x])
    })
}

/// Number of inclusion components inside each coarse element, counting cells
/// that share a node as connected. Each one contributes a near-zero local
/// eigenvalue, so `l_m + 1` should exceed the largest count.
pub fn inclusion_components(field: &CoefficientField, geom: &GridGeometry) -> Result<Vec<usize>> {
    field.check_matches(geom)?;
    let (n, r) = (geom.n_fine(), geom.refine());
    let mut label = vec![usize::MAX; n * n];
    Ok((0..geom.n_elements())
        .map(|e| {
            let (ex, ey) = geom.element_xy(e);
            let (x0, y0) = (ex * r, ey * r);
            let mut count = 0;
            for c in geom.element_cells(e) {
                if !field.mask[c] || label[c] != usize::MAX {
                    continue;
                }
                count += 1;
                let mut stack = vec![c];
                label[c] = e;
                while let Some(k) = stack.pop() {
                    let (cx, cy) = geom.cell_xy(k);
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                            if nx < x0 as i64 || ny < y0 as i64 || nx >= (x0 + r) as i64 || ny >= (y0 + r) as i64 {
                                continue;
                            }
                            let nb = geom.cell(nx as usize, ny as usize);
                            if field.mask[nb] && label[nb] == usize::MAX {
                                label[nb] = e;
                                stack.push(nb);
                            }
                        }
                    }
                }
            }
            count
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum KappaConvention {
    /// `(N_v - 1) Σ_j κ |∇η_j|²` with the bilinear coarse Lagrange basis, at fine cell centers.
    LagrangeSum,
    /// `24 κ / H²`.
    #[default]
    Scaled24,
}

impl KappaConvention {
    pub fn name(&self) -> &'static str {
        match self {
            KappaConvention::LagrangeSum => "lagrange-sum",
            KappaConvention::Scaled24 => "scaled-24",
        }
    }
}

/// Fine-cellwise weight κ̃ for the s-form.
pub fn derive_kappa_tilde(field: &CoefficientField, geom: &GridGeometry, convention: KappaConvention) -> Result<Vec<f64>> {
    field.check_matches(geom)?;
    let big_h = geom.coarse_h();
    let inv_h2 = 1.0 / (big_h * big_h);
    Ok(match convention {
        KappaConvention::Scaled24 => field.values.iter().map(|k| 24.0 * k * inv_h2).collect(),
        KappaConvention::LagrangeSum => {
            let r = geom.refine() as f64;
            (0..geom.n_cells())
                .map(|c| {
                    let (cx, cy) = geom.cell_xy(c);
                    // Local coordinates of the cell center inside its coarse element.
                    let xi = ((cx % geom.refine()) as f64 + 0.5) / r;
                    let zeta = ((cy % geom.refine()) as f64 + 0.5) / r;
                    let sum = 2.0 * ((1.0 - xi).powi(2) + xi * xi) + 2.0 * ((1.0 - zeta).powi(2) + zeta * zeta);
                    3.0 * field.values[c] * sum * inv_h2
                })
                .collect()
        }
    })
}

/// Sources and boundary data on the fine mesh.
#[derive(Clone, Debug)]
pub struct ProblemData {
    /// Source, one value per fine cell.
    pub f: Vec<f64>,
    /// Dirichlet lift g̃, one value per fine node.
    pub g_tilde: Vec<f64>,
    /// Flux data, one value per boundary edge (ignored on Γ_D edges).
    pub q: Vec<f64>,
    /// Robin coefficient per boundary edge; `Some` makes this a Robin problem.
    pub robin_b: Option<Vec<f64>>,
}

impl ProblemData {
    /// Homogeneous data (all zero) for a mixed problem.
    pub fn zeros(geom: &GridGeometry) -> Self {
        ProblemData {
            f: vec![0.0; geom.n_cells()],
            g_tilde: vec![0.0; geom.n_nodes()],
            q: vec![0.0; geom.n_boundary_edges()],
            robin_b: None,
        }
    }

    pub fn is_robin(&self) -> bool {
        self.robin_b.is_some()
    }

    pub fn validate(&self, geom: &GridGeometry) -> Result<()> {
        let check = |what, expected: usize, got: usize| {
            if expected != got {
                Err(Error::DimensionMismatch { what, expected, got })
            } else {
                Ok(())
            }
        };
        check("source f (cells)", geom.n_cells(), self.f.len())?;
        check("lift g (nodes)", geom.n_nodes(), self.g_tilde.len())?;
        check("flux q (boundary edges)", geom.n_boundary_edges(), self.q.len())?;
        let all_finite = self.f.iter().chain(&self.g_tilde).chain(&self.q).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::NonFinite("problem data".into()));
        }
        match &self.robin_b {
            Some(b) => {
                check("Robin b (boundary edges)", geom.n_boundary_edges(), b.len())?;
                if geom.has_dirichlet() {
                    return Err(Error::InvalidParameter(
                        "Robin problems take the whole boundary as Γ_N".into(),
                    ));
                }
                if b.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidParameter("Robin b must be finite and nonnegative".into()));
                }
                if robin_lower_bound(b).is_none() {
                    return Err(Error::InvalidParameter("Robin b vanishes on the whole boundary".into()));
                }
            }
            None => {
                if !geom.has_dirichlet() {
                    return Err(Error::InvalidParameter("mixed problems need a nonempty Γ_D".into()));
                }
            }
        }
        Ok(())
    }
}

/// Positive lower bound b_0 of b on the set where b > 0, if any.
pub fn robin_lower_bound(b: &[f64]) -> Option<f64> {
    b.iter().copied().filter(|&v| v > 0.0).reduce(f64::min)
}

/// Evaluates `f` at fine cell centers.
pub fn cellwise(geom: &GridGeometry, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    (0..geom.n_cells())
        .map(|c| {
            let [x, y] = geom.cell_center(c);
            f(x, y)
        })
        .collect()
}

/// Evaluates `g` at fine nodes.
pub fn nodal(geom: &GridGeometry, g: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    (0..geom.n_nodes())
        .map(|n| {
            let [x, y] = geom.node_coords(n);
            g(x, y)
        })
        .collect()
}

/// Evaluates `q` once per boundary edge; Γ_D edges get zero.
pub fn edgewise(geom: &GridGeometry, q: impl Fn(&BoundaryEdge) -> f64) -> Vec<f64> {
    geom.boundary_edges()
        .iter()
        .map(|e| if e.label == BoundaryLabel::Dirichlet { 0.0 } else { q(e) })
        .collect()
}

/// Robin coefficient equal to κ of the cell adjacent to each boundary edge.
pub fn robin_b_from_kappa(geom: &GridGeometry, field: &CoefficientField) -> Vec<f64> {
    geom.boundary_edges().iter().map(|e| field.values[e.cell]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grids, BoundarySpec};

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    fn mask_text(n: usize, f: impl Fn(usize, usize) -> bool) -> String {
        let m = Mask {
            nx: n,
            ny: n,
            cells: (0..n * n).map(|k| f(k % n, k / n)).collect(),
        };
        m.to_text()
    }

    #[test]
    fn load_uniform_and_checkerboard() {
        let zeros = write_tmp(&mask_text(8, |_, _| false));
        let f = load_field(zeros.path(), 1.0, 1e4).unwrap();
        assert!(f.values.iter().all(|&v| v == 1.0));
        let ones = write_tmp(&mask_text(8, |_, _| true));
        let f = load_field(ones.path(), 1.0, 1e4).unwrap();
        assert!(f.values.iter().all(|&v| v == 1e4));
        let cb = write_tmp(&mask_text(4, |x, y| (x + y) % 2 == 1));
        let f = load_field(cb.path(), 1.0, 1e6).unwrap();
        assert_eq!(f.contrast(), 1e6);
        for y in 0..4 {
            for x in 0..4 {
                let want = if (x + y) % 2 == 1 { 1e6 } else { 1.0 };
                assert_eq!(f.values[y * 4 + x], want);
            }
        }
    }

    #[test]
    fn load_rejects_bad_files() {
        let bad = write_tmp("2 2\n0 1\n2 0\n");
        assert!(matches!(load_field(bad.path(), 1.0, 10.0), Err(Error::GridFormat { line: 3, .. })));
        let short = write_tmp("3 2\n0 1 0\n1 0\n");
        assert!(matches!(load_field(short.path(), 1.0, 10.0), Err(Error::GridFormat { .. })));
        assert!(matches!(
            load_field(Path::new("/nonexistent/mask.txt"), 1.0, 10.0),
            Err(Error::Io { .. })
        ));
        let ok = write_tmp(&mask_text(4, |_, _| false));
        let f = load_field(ok.path(), 1.0, 10.0).unwrap();
        let g = build_grids(2, 4, &BoundarySpec::AllDirichlet).unwrap();
        assert!(matches!(f.check_matches(&g), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn real_grid_roundtrip() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let vals = vec![1.5, -2.25e-7, 3.0, 0.0, 1e10, -0.125];
        write_real_grid(f.path(), 3, 2, &vals).unwrap();
        let (nx, ny, back) = read_real_grid(f.path()).unwrap();
        assert_eq!((nx, ny), (3, 2));
        assert_eq!(back, vals);
    }

    #[test]
    fn synth_density_zero_is_uniform() {
        let g = build_grids(4, 8, &BoundarySpec::AllDirichlet).unwrap();
        let f = synth_channels(&g, SynthStyle::Inclusions, 0.0, 3, 1.0, 1e4).unwrap();
        assert!(f.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn synth_is_deterministic_and_touches_boundary() {
        let a = synth_mask(80, SynthStyle::BoundaryChannels, 0.2, 7).unwrap();
        let b = synth_mask(80, SynthStyle::BoundaryChannels, 0.2, 7).unwrap();
        assert_eq!(a, b);
        assert!(touches_boundary(&a));
        let c = synth_mask(80, SynthStyle::Channels, 0.1, 7).unwrap();
        assert!(!touches_boundary(&c));
        let i = synth_mask(80, SynthStyle::Inclusions, 0.1, 7).unwrap();
        assert!(!touches_boundary(&i));
    }

    #[test]
    fn synth_channel_density() {
        let m = synth_mask(80, SynthStyle::Channels, 0.1, 7).unwrap();
        let frac = m.fraction();
        assert!((frac - 0.1).abs() <= 0.02, "fraction {frac}");
    }

    #[test]
    fn inclusion_components_counts_node_connected_pieces() {
        let g = build_grids(2, 4, &BoundarySpec::AllDirichlet).unwrap();
        let mut mask = Mask::empty(8);
        // Element 0: two diagonal cells share a node (one piece), plus a separate cell.
        for (x, y) in [(0, 0), (1, 1), (3, 0)] {
            mask.cells[y * 8 + x] = true;
        }
        // A bar crossing from element 1 into element 3 counts once in each.
        for y in 2..6 {
            mask.cells[y * 8 + 6] = true;
        }
        let field = CoefficientField::from_mask(&mask, 1.0, 10.0).unwrap();
        assert_eq!(inclusion_components(&field, &g).unwrap(), vec![2, 1, 0, 1]);
    }

    #[test]
    fn synth_rejects_bad_input() {
        assert!(synth_mask(10, SynthStyle::Channels, 1.0, 0).is_err());
        assert!(synth_mask(10, SynthStyle::Channels, -0.1, 0).is_err());
        assert!(synth_mask(8, SynthStyle::Channels, 0.1, 0).is_err());
        assert!(synth_mask(16, SynthStyle::Channels, 0.1, 0).is_ok());
    }

    #[test]
    fn kappa_tilde_conventions() {
        let g = build_grids(10, 2, &BoundarySpec::AllDirichlet).unwrap();
        let one = CoefficientField::uniform(g.n_fine(), 1.0);
        let kt = derive_kappa_tilde(&one, &g, KappaConvention::Scaled24).unwrap();
        assert!(kt.iter().all(|&v| (v - 2400.0).abs() < 1e-9));

        let three = CoefficientField::uniform(g.n_fine(), 3.0);
        for conv in [KappaConvention::Scaled24, KappaConvention::LagrangeSum] {
            let a = derive_kappa_tilde(&one, &g, conv).unwrap();
            let b = derive_kappa_tilde(&three, &g, conv).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((3.0 * x - y).abs() <= 1e-12 * y);
            }
        }
    }

    #[test]
    fn lagrange_sum_at_element_center() {
        // H = 1/2 with an odd refinement puts a fine cell center at each element center.
        let g = build_grids(2, 3, &BoundarySpec::AllDirichlet).unwrap();
        let one = CoefficientField::uniform(g.n_fine(), 1.0);
        let kt = derive_kappa_tilde(&one, &g, KappaConvention::LagrangeSum).unwrap();
        let center = g.cell(1, 1);
        // 3 * Σ|∇η_j|² = 3 * 2 / H² at the center.
        assert!((kt[center] - 6.0 * 4.0).abs() < 1e-12);
        let h = g.coarse_h();
        assert!(kt.iter().all(|&v| v >= 6.0 / (h * h) - 1e-12));
    }

    #[test]
    fn lagrange_sum_scales_like_inverse_h_squared() {
        let g1 = build_grids(2, 4, &BoundarySpec::AllDirichlet).unwrap();
        let g2 = build_grids(4, 4, &BoundarySpec::AllDirichlet).unwrap();
        let k1 = derive_kappa_tilde(&CoefficientField::uniform(8, 1.0), &g1, KappaConvention::LagrangeSum).unwrap();
        let k2 = derive_kappa_tilde(&CoefficientField::uniform(16, 1.0), &g2, KappaConvention::LagrangeSum).unwrap();
        // Same relative position inside an element.
        assert!((k2[g2.cell(1, 2)] - 4.0 * k1[g1.cell(1, 2)]).abs() < 1e-9);
    }

    #[test]
    fn problem_validation() {
        let g = build_grids(2, 2, &BoundarySpec::AllNeumann).unwrap();
        let mut d = ProblemData::zeros(&g);
        assert!(d.validate(&g).is_err(), "mixed problem without Γ_D");
        d.robin_b = Some(vec![0.0; g.n_boundary_edges()]);
        assert!(d.validate(&g).is_err(), "b vanishing everywhere");
        let mut b = vec![0.0; g.n_boundary_edges()];
        b[3] = 0.5;
        assert_eq!(robin_lower_bound(&b), Some(0.5));
        d.robin_b = Some(b);
        d.validate(&g).unwrap();
    }
}
