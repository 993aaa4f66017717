//! Line-oriented `key = value` experiment configs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::media::{KappaConvention, SynthStyle};

/// Largest fine-grid resolution per axis accepted without `allow_large`.
pub const DESK_SCALE_CAP: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    /// `u = g̃` on all of ∂Ω.
    Model1Dirichlet,
    /// `u = 0` on the top side, flux `q` on the other three.
    Model2Mixed,
    /// `κ ∂u/∂ν + b u = q` on all of ∂Ω with `b = κ`.
    Model3Robin,
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Model1Dirichlet => "model1-dirichlet",
            ProblemKind::Model2Mixed => "model2-mixed",
            ProblemKind::Model3Robin => "model3-robin",
        }
    }
}

impl FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model1-dirichlet" => Ok(ProblemKind::Model1Dirichlet),
            "model2-mixed" => Ok(ProblemKind::Model2Mixed),
            "model3-robin" => Ok(ProblemKind::Model3Robin),
            other => Err(Error::Config(format!("unknown problem {other:?}"))),
        }
    }
}

/// Named choices of `f`, `g̃`, `q` and `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Quadrant source, `g̃ = x₁² + exp(x₁x₂)`, piecewise constant fluxes.
    Standard,
    /// `u = x₁` with `f = 0`; needs a uniform medium and a Dirichlet part.
    HarmonicLinear,
    /// `u = 1` with `f = 0`, `b = κ = 1`, `q = 1`; Robin only.
    Constant,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Standard => "standard",
            Preset::HarmonicLinear => "harmonic-linear",
            Preset::Constant => "constant",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Preset::Standard),
            "harmonic-linear" => Ok(Preset::HarmonicLinear),
            "constant" => Ok(Preset::Constant),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MediumSpec {
    Uniform,
    Synth { style: SynthStyle, density: f64 },
    /// Binary mask file on the fine grid.
    File(PathBuf),
}

impl MediumSpec {
    /// Parses `uniform`, `<style>:<density>` or `file:<path>`; relative paths
    /// are taken relative to `base`.
    pub fn parse(s: &str, base: &Path) -> Result<Self> {
        if s == "uniform" {
            return Ok(MediumSpec::Uniform);
        }
        if let Some(path) = s.strip_prefix("file:") {
            let p = PathBuf::from(path.trim());
            return Ok(MediumSpec::File(if p.is_relative() { base.join(p) } else { p }));
        }
        let (style, density) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("medium {s:?} is not uniform, file:<path> or <style>:<density>")))?;
        let style = SynthStyle::from_str(style).map_err(|e| Error::Config(e.to_string()))?;
        let density = parse_f64(density.trim())?;
        if !(0.0..1.0).contains(&density) {
            return Err(Error::Config(format!("medium density must lie in [0, 1), got {density}")));
        }
        Ok(MediumSpec::Synth { style, density })
    }

    pub fn describe(&self) -> String {
        match self {
            MediumSpec::Uniform => "uniform".into(),
            MediumSpec::Synth { style, density } => format!("{}:{density}", style.name()),
            MediumSpec::File(p) => format!("file:{}", p.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSweep {
    List(Vec<usize>),
    /// Smallest `m` meeting the `θ^{(m−1)/2}(m+1) ≤ H²` rule, per contrast.
    Auto,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub preset: Preset,
    pub n_coarse: usize,
    pub refine: usize,
    pub l_m: usize,
    pub layers: LayerSweep,
    /// Ratios `κ_I / κ_m`.
    pub contrasts: Vec<f64>,
    pub kappa_matrix: f64,
    pub medium: MediumSpec,
    pub kappa_tilde: KappaConvention,
    pub seed: u64,
    pub output: PathBuf,
    /// Compute the global boundary corrections and report D/N columns.
    pub oracle: bool,
    /// Write measured wall times; when off the column holds `-` so that
    /// reruns are byte-identical.
    pub record_time: bool,
    pub allow_large: bool,
    /// Elements whose global basis functions are profiled by the decay study.
    /// Empty means a corner, an edge midpoint and the center element.
    pub decay_elements: Vec<usize>,
    /// Relative tolerance of the region solves.
    pub tol: f64,
}

const KEYS: &[&str] = &[
    "problem",
    "preset",
    "n_coarse",
    "refine",
    "l_m",
    "m",
    "contrast",
    "kappa_m",
    "medium",
    "kappa_tilde",
    "seed",
    "output",
    "oracle",
    "record_time",
    "allow_large",
    "decay_elements",
    "tol",
];

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Config(format!("expected a finite number, got {s:?}")))
}

fn parse_usize(key: &str, s: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {s:?}")))
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {s:?}"))),
    }
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').map(|t| item(t.trim())).collect()
}

impl ExperimentConfig {
    /// Reads and validates a config file; `allow_large` lifts the desk-scale cap.
    pub fn from_file(path: &Path, allow_large: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse_unchecked(&text, path.parent().unwrap_or(Path::new(".")))?;
        cfg.allow_large |= allow_large;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and validates a config. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let cfg = Self::parse_unchecked(text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_unchecked(text: &str, base: &Path) -> Result<Self> {
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", ln + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key {k:?}", ln + 1)));
            }
            if v.is_empty() {
                return Err(Error::Config(format!("line {}: empty value for {k}", ln + 1)));
            }
            if kv.insert(k, v).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", ln + 1)));
            }
        }
        let req = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Config(format!("missing key {k}")));
        let opt = |k: &str| kv.get(k).copied();

        let layers = match req("m")? {
            "auto" => LayerSweep::Auto,
            s => LayerSweep::List(parse_list(s, |t| parse_usize("m", t))?),
        };
        let kappa_tilde = match opt("kappa_tilde").unwrap_or("scaled-24") {
            "scaled-24" => KappaConvention::Scaled24,
            "lagrange-sum" => KappaConvention::LagrangeSum,
            other => return Err(Error::Config(format!("unknown kappa_tilde {other:?}"))),
        };
        let output = PathBuf::from(req("output")?);
        Ok(ExperimentConfig {
            problem: req("problem")?.parse()?,
            preset: opt("preset").unwrap_or("standard").parse()?,
            n_coarse: parse_usize("n_coarse", req("n_coarse")?)?,
            refine: parse_usize("refine", req("refine")?)?,
            l_m: parse_usize("l_m", req("l_m")?)?,
            layers,
            contrasts: parse_list(opt("contrast").unwrap_or("1e4"), parse_f64)?,
            kappa_matrix: opt("kappa_m").map(parse_f64).transpose()?.unwrap_or(1.0),
            medium: MediumSpec::parse(opt("medium").unwrap_or("uniform"), base)?,
            kappa_tilde,
            seed: opt("seed")
                .map(|s| s.parse::<u64>().map_err(|_| Error::Config(format!("seed: bad value {s:?}"))))
                .transpose()?
                .unwrap_or(0),
            output: if output.is_relative() { base.join(output) } else { output },
            oracle: opt("oracle").map(|s| parse_bool("oracle", s)).transpose()?.unwrap_or(true),
            record_time: opt("record_time").map(|s| parse_bool("record_time", s)).transpose()?.unwrap_or(true),
            allow_large: opt("allow_large").map(|s| parse_bool("allow_large", s)).transpose()?.unwrap_or(false),
            decay_elements: match opt("decay_elements") {
                None | Some("auto") => Vec::new(),
                Some(s) => parse_list(s, |t| parse_usize("decay_elements", t))?,
            },
            tol: opt("tol").map(parse_f64).transpose()?.unwrap_or(1e-12),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_coarse < 2 {
            return bad(format!("n_coarse must be >= 2, got {}", self.n_coarse));
        }
        if self.refine < 2 {
            return bad(format!("refine must be >= 2, got {}", self.refine));
        }
        if !self.allow_large && self.n_coarse * self.refine > DESK_SCALE_CAP {
            return bad(format!(
                "fine grid {} per axis exceeds the desk-scale cap {DESK_SCALE_CAP} (set allow_large or pass --allow-large)",
                self.n_coarse * self.refine
            ));
        }
        if self.l_m + 2 > (self.refine + 1) * (self.refine + 1) {
            return bad(format!("l_m = {} needs more local eigenpairs than an element has nodes", self.l_m));
        }
        if let LayerSweep::List(ms) = &self.layers {
            if ms.is_empty() || ms.contains(&0) {
                return bad("m must list layers >= 1, or be auto".into());
            }
            if has_duplicates(ms.iter().map(|&m| m as f64)) {
                return bad("m lists a layer twice".into());
            }
        }
        if self.contrasts.is_empty() || self.contrasts.iter().any(|&c| c <= 0.0) {
            return bad("contrasts must be positive".into());
        }
        if has_duplicates(self.contrasts.iter().copied()) {
            return bad("contrast lists a value twice".into());
        }
        if self.kappa_matrix <= 0.0 {
            return bad("kappa_m must be positive".into());
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad(format!("tol must lie in (0, 1), got {}", self.tol));
        }
        let n_el = self.n_coarse * self.n_coarse;
        if let Some(&e) = self.decay_elements.iter().find(|&&e| e >= n_el) {
            return bad(format!("decay element {e} out of range (n_coarse² = {n_el})"));
        }
        match (self.preset, self.problem) {
            (Preset::Constant, ProblemKind::Model3Robin) => {}
            (Preset::Constant, p) => return bad(format!("preset constant needs model3-robin, got {}", p.name())),
            (Preset::HarmonicLinear, ProblemKind::Model3Robin) => {
                return bad("preset harmonic-linear needs a Dirichlet boundary part".into())
            }
            _ => {}
        }
        if self.preset != Preset::Standard && self.medium != MediumSpec::Uniform {
            return bad(format!("preset {} is an exact solution only on a uniform medium", self.preset.name()));
        }
        if self.preset == Preset::Constant && self.kappa_matrix != 1.0 {
            return bad("preset constant needs kappa_m = 1".into());
        }
        Ok(())
    }
}

fn has_duplicates(vals: impl Iterator<Item = f64>) -> bool {
    let mut v: Vec<f64> = vals.collect();
    v.sort_by(f64::total_cmp);
    v.windows(2).any(|w| w[0] == w[1])
}
