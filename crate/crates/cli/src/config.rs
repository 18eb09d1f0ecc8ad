//! Experiment configuration files.
//!
//! A config is a TOML document with a top-level `kind` and one block per
//! ingredient. Unknown keys are rejected, and every semantic check reports
//! the key and its line/column.

use std::path::PathBuf;

use serde::Deserialize;
use toml::Spanned;

use sqbsde::bsde::{Ladder, LsmcOptions, Weighting};
use sqbsde::finance::{MarketModel, SDUSpec, Utility, UtilityProblem};
use sqbsde::generators::{Branch, GeneratorSpec};
use sqbsde::pde::{EvalGrid, PDEProblem};
use sqbsde::sde::{ConvexDomain, DiffusionSpec};
use sqbsde::{Error, FieldFn, TimeFn, Terminal, TimeGrid};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Coef {
    Num(f64),
    Expr(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub kind: Spanned<String>,
    pub horizon: Option<Spanned<f64>>,
    pub output: Option<Spanned<String>>,
    pub generator: Option<Spanned<GeneratorBlock>>,
    pub diffusion: Option<Spanned<DiffusionBlock>>,
    pub terminal: Option<Spanned<TerminalBlock>>,
    pub numerics: Option<Spanned<NumericsBlock>>,
    pub ladder: Option<Spanned<LadderBlock>>,
    pub pde: Option<Spanned<PdeBlock>>,
    pub market: Option<Spanned<MarketBlock>>,
    pub utility: Option<Spanned<UtilityBlock>>,
    pub sdu: Option<Spanned<SduBlock>>,
    pub study: Option<Spanned<StudyBlock>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorBlock {
    pub delta: Spanned<f64>,
    pub alpha: Option<Spanned<Coef>>,
    pub beta: Option<Spanned<Coef>>,
    pub gamma: Option<Spanned<Vec<Coef>>>,
    pub custom: Option<Spanned<String>>,
    pub branch: Option<Spanned<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBlock {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub center: Option<Vec<f64>>,
    pub radius: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionBlock {
    pub dim: Option<Spanned<i64>>,
    pub mu: Option<Spanned<Vec<Coef>>>,
    pub sigma: Option<Spanned<Vec<Coef>>>,
    pub x0: Option<Spanned<Vec<f64>>>,
    pub domain: Option<Spanned<DomainBlock>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalBlock {
    pub expr: Option<Spanned<String>>,
    pub catalog: Option<Spanned<String>>,
    pub value: Option<Spanned<f64>>,
    pub scale: Option<Spanned<f64>>,
    pub slope: Option<Spanned<Vec<f64>>>,
    pub coeffs: Option<Spanned<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsBlock {
    pub n_steps: Option<Spanned<i64>>,
    pub n_paths: Option<Spanned<i64>>,
    pub seed: Option<Spanned<i64>>,
    pub degree: Option<Spanned<i64>>,
    pub picard: Option<Spanned<i64>>,
    pub clamp: Option<Spanned<f64>>,
    pub augment_exp: Option<Spanned<bool>>,
    pub weighting: Option<Spanned<String>>,
    pub quadrature: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderBlock {
    pub kind: Spanned<String>,
    pub levels: Spanned<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineBlock {
    pub lo: f64,
    pub hi: f64,
    pub n: i64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeBlock {
    pub method: Spanned<String>,
    pub times: Spanned<Vec<f64>>,
    pub x: Option<Spanned<LineBlock>>,
    pub points: Option<Spanned<Vec<Vec<f64>>>>,
    pub dx: Option<Spanned<f64>>,
    pub padding: Option<Spanned<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketBlock {
    pub b: Option<Spanned<Vec<Coef>>>,
    pub sigma: Option<Spanned<Vec<Coef>>>,
    pub theta: Option<Spanned<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityBlock {
    pub kind: Spanned<String>,
    pub delta: Option<Spanned<f64>>,
    pub wealth: Option<Spanned<f64>>,
    pub strategies: Option<Spanned<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SduBlock {
    pub alpha: Spanned<f64>,
    pub beta: Spanned<f64>,
    pub rho: Spanned<f64>,
    pub consumption: Option<Spanned<Coef>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyLevel {
    pub n_steps: i64,
    pub n_paths: i64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyBlock {
    pub levels: Spanned<Vec<StudyLevel>>,
    pub reps: Option<Spanned<i64>>,
}

#[derive(Debug, Clone)]
pub struct Numerics {
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub lsmc: LsmcOptions,
    pub quadrature: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdeMethod {
    Probabilistic,
    Lsmc,
    TransformExact,
    Fd,
    FdTransformed,
    Series,
}

#[derive(Debug, Clone)]
pub enum Experiment {
    Bsde {
        generator: GeneratorSpec,
        diffusion: Option<DiffusionSpec>,
        x0: Vec<f64>,
        terminal: Terminal,
        ladder: Option<(Ladder, Vec<f64>)>,
    },
    Pde {
        problem: PDEProblem,
        grid: EvalGrid,
        method: PdeMethod,
        dx: f64,
        padding: Option<FieldFn>,
    },
    Utility {
        market: MarketModel,
        problem: UtilityProblem,
        strategies: Vec<f64>,
    },
    Sdu {
        spec: SDUSpec,
    },
    Study {
        generator: GeneratorSpec,
        terminal: Terminal,
        levels: Vec<(usize, usize)>,
        reps: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Config {
    pub kind: String,
    pub horizon: f64,
    pub output: PathBuf,
    pub numerics: Numerics,
    pub experiment: Experiment,
}

pub const KINDS: [&str; 6] = ["bsde", "pde", "neumann", "utility", "sdu", "convergence-study"];

/// Line and column (both 1-based) of a byte offset.
pub fn position(source: &str, offset: usize) -> (usize, usize) {
    let head = &source[..offset.min(source.len())];
    let line = head.matches('\n').count() + 1;
    let col = head.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

struct Ctx<'a> {
    source: &'a str,
}

impl Ctx<'_> {
    fn err(&self, key: &str, span: std::ops::Range<usize>, message: impl Into<String>) -> CliError {
        let (line, column) = position(self.source, span.start);
        CliError::Validation { key: key.to_string(), line, column, message: message.into() }
    }

    fn core<T>(&self, key: &str, span: std::ops::Range<usize>, r: Result<T, Error>) -> Result<T, CliError> {
        r.map_err(|e| self.err(key, span, e.to_string()))
    }

    fn missing(&self, key: &str, message: &str) -> CliError {
        CliError::Validation { key: key.to_string(), line: 1, column: 1, message: message.to_string() }
    }

    fn count(&self, key: &str, v: &Option<Spanned<i64>>, default: usize, min: i64) -> Result<usize, CliError> {
        match v {
            None => Ok(default),
            Some(s) if *s.get_ref() >= min => Ok(*s.get_ref() as usize),
            Some(s) => Err(self.err(key, s.span(), format!("must be at least {min}, got {}", s.get_ref()))),
        }
    }

    fn time_fn(&self, key: &str, c: &Spanned<Coef>) -> Result<TimeFn, CliError> {
        match c.get_ref() {
            Coef::Num(v) => Ok((*v).into()),
            Coef::Expr(s) => self.core(key, c.span(), TimeFn::parse(s)),
        }
    }

    fn field_fns(&self, key: &str, c: &Spanned<Vec<Coef>>, dim: usize) -> Result<Vec<FieldFn>, CliError> {
        c.get_ref()
            .iter()
            .map(|v| match v {
                Coef::Num(x) => Ok((*x).into()),
                Coef::Expr(s) => self.core(key, c.span(), FieldFn::parse(s, dim)),
            })
            .collect()
    }
}

/// Parses and validates a config; nothing is simulated.
pub fn parse(source: &str) -> Result<Config, CliError> {
    let raw: RawConfig = toml::from_str(source).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| position(source, s.start));
        CliError::Validation {
            key: "config".into(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    build(&raw, &Ctx { source })
}

pub fn load(path: &std::path::Path) -> Result<Config, CliError> {
    let source = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse(&source)
}

fn build(raw: &RawConfig, cx: &Ctx<'_>) -> Result<Config, CliError> {
    let kind = raw.kind.get_ref().clone();
    if !KINDS.contains(&kind.as_str()) {
        return Err(cx.err("kind", raw.kind.span(), format!("unknown kind `{kind}`, expected one of {}", KINDS.join(", "))));
    }
    let horizon = match &raw.horizon {
        None => 1.0,
        Some(h) if *h.get_ref() > 0.0 && h.get_ref().is_finite() => *h.get_ref(),
        Some(h) => return Err(cx.err("horizon", h.span(), "must be a positive number")),
    };
    let output = raw.output.as_ref().map_or_else(|| PathBuf::from("out"), |o| PathBuf::from(o.get_ref()));
    let numerics = build_numerics(raw.numerics.as_ref(), cx)?;
    let times = TimeGrid::new(0.0, horizon, numerics.n_steps)
        .map_err(|e| cx.missing("numerics.n_steps", &e.to_string()))?
        .nodes();

    let experiment = match kind.as_str() {
        "bsde" => {
            let generator = build_generator(raw, cx, &times)?;
            let (diffusion, x0) = match &raw.diffusion {
                Some(d) => {
                    let (spec, x0) = build_diffusion(d, cx, &times)?;
                    (Some(spec), x0)
                }
                None => (None, vec![0.0; generator.dim()]),
            };
            let terminal = build_terminal(raw, cx, x0.len())?;
            let ladder = match &raw.ladder {
                None => None,
                Some(l) => {
                    let l = l.get_ref();
                    let kind = match l.kind.get_ref().as_str() {
                        "sup" => Ladder::Sup,
                        "inf-convolution" => Ladder::InfConvolution,
                        other => {
                            return Err(cx.err("ladder.kind", l.kind.span(), format!("unknown ladder `{other}`, expected sup or inf-convolution")))
                        }
                    };
                    let levels = l.levels.get_ref().clone();
                    if levels.is_empty() || levels.windows(2).any(|w| !(w[1] > w[0])) || levels[0] <= 0.0 {
                        return Err(cx.err("ladder.levels", l.levels.span(), "levels must be positive and strictly increasing"));
                    }
                    Some((kind, levels))
                }
            };
            Experiment::Bsde { generator, diffusion, x0, terminal, ladder }
        }
        "pde" | "neumann" => build_pde(raw, cx, &kind, horizon, &times)?,
        "utility" => build_utility(raw, cx, &times)?,
        "sdu" => {
            let Some(s) = &raw.sdu else {
                return Err(cx.missing("sdu", "kind `sdu` needs an [sdu] block"));
            };
            let b = s.get_ref();
            let consumption = match &b.consumption {
                Some(c) => cx.time_fn("sdu.consumption", c)?,
                None => 1.0.into(),
            };
            let terminal = build_terminal(raw, cx, 1)?;
            let spec = SDUSpec::new(*b.alpha.get_ref(), *b.beta.get_ref(), *b.rho.get_ref(), consumption, terminal)
                .map_err(|e| {
                    let msg = e.to_string();
                    let (key, span) = if msg.contains("α") {
                        ("sdu.alpha", b.alpha.span())
                    } else if msg.contains("β") {
                        ("sdu.beta", b.beta.span())
                    } else {
                        ("sdu.rho", b.rho.span())
                    };
                    cx.err(key, span, msg)
                })?;
            let key_span = b.consumption.as_ref().map_or(s.span(), |c| c.span());
            cx.core("sdu.consumption", key_span, spec.validate(&times))?;
            Experiment::Sdu { spec }
        }
        "convergence-study" => {
            let generator = build_generator(raw, cx, &times)?;
            let terminal = build_terminal(raw, cx, generator.dim())?;
            let Some(st) = &raw.study else {
                return Err(cx.missing("study", "kind `convergence-study` needs a [study] block"));
            };
            let st = st.get_ref();
            let mut levels = Vec::new();
            for l in st.levels.get_ref() {
                if l.n_steps < 1 || l.n_paths < 2 {
                    return Err(cx.err("study.levels", st.levels.span(), "each level needs n_steps >= 1 and n_paths >= 2"));
                }
                levels.push((l.n_steps as usize, l.n_paths as usize));
            }
            if levels.is_empty() {
                return Err(cx.err("study.levels", st.levels.span(), "at least one level is required"));
            }
            let reps = cx.count("study.reps", &st.reps, 1, 1)?;
            Experiment::Study { generator, terminal, levels, reps }
        }
        _ => unreachable!("kind checked above"),
    };
    Ok(Config { kind, horizon, output, numerics, experiment })
}

fn build_numerics(b: Option<&Spanned<NumericsBlock>>, cx: &Ctx<'_>) -> Result<Numerics, CliError> {
    let empty = NumericsBlock {
        n_steps: None,
        n_paths: None,
        seed: None,
        degree: None,
        picard: None,
        clamp: None,
        augment_exp: None,
        weighting: None,
        quadrature: None,
    };
    let b = b.map_or(&empty, |s| s.get_ref());
    let mut lsmc = LsmcOptions::default();
    lsmc.degree = cx.count("numerics.degree", &b.degree, lsmc.degree, 1)?;
    lsmc.n_picard = cx.count("numerics.picard", &b.picard, lsmc.n_picard, 0)?;
    if let Some(c) = &b.clamp {
        if !(*c.get_ref() > 0.0) {
            return Err(cx.err("numerics.clamp", c.span(), "positivity floor must be positive"));
        }
        lsmc.clamp_eps = Some(*c.get_ref());
    }
    if let Some(a) = &b.augment_exp {
        lsmc.augment_exp = *a.get_ref();
    }
    if let Some(w) = &b.weighting {
        lsmc.weighting = Weighting::parse(w.get_ref()).ok_or_else(|| {
            cx.err("numerics.weighting", w.span(), format!("unknown weighting `{}`, expected auto, relative or uniform", w.get_ref()))
        })?;
    }
    Ok(Numerics {
        n_steps: cx.count("numerics.n_steps", &b.n_steps, 50, 1)?,
        n_paths: cx.count("numerics.n_paths", &b.n_paths, 20_000, 2)?,
        seed: cx.count("numerics.seed", &b.seed, 1, 0)? as u64,
        lsmc,
        quadrature: cx.count("numerics.quadrature", &b.quadrature, 32, 2)?,
    })
}

fn build_generator(raw: &RawConfig, cx: &Ctx<'_>, times: &[f64]) -> Result<GeneratorSpec, CliError> {
    let Some(g) = &raw.generator else {
        return Err(cx.missing("generator", &format!("kind `{}` needs a [generator] block", raw.kind.get_ref())));
    };
    let b = g.get_ref();
    let alpha = b.alpha.as_ref().map_or(Ok(0.0.into()), |c| cx.time_fn("generator.alpha", c))?;
    let beta = b.beta.as_ref().map_or(Ok(0.0.into()), |c| cx.time_fn("generator.beta", c))?;
    let gamma = match &b.gamma {
        None => vec![0.0.into()],
        Some(v) => {
            let mut out = Vec::new();
            for c in v.get_ref() {
                out.push(match c {
                    Coef::Num(x) => (*x).into(),
                    Coef::Expr(s) => cx.core("generator.gamma", v.span(), TimeFn::parse(s))?,
                });
            }
            out
        }
    };
    let mut spec = GeneratorSpec::gclass(*b.delta.get_ref(), alpha, beta, gamma);
    if let Some(br) = &b.branch {
        spec = spec.with_branch(match br.get_ref().as_str() {
            "positive" => Branch::Positive,
            "negative" => Branch::Negative,
            other => return Err(cx.err("generator.branch", br.span(), format!("unknown branch `{other}`, expected positive or negative"))),
        });
    }
    if let Some(c) = &b.custom {
        spec = cx.core("generator.custom", c.span(), spec.with_custom_expr(c.get_ref()))?;
    }
    if let Err(e) = spec.validate(times) {
        let msg = e.to_string();
        let pick = |name: &str| msg.starts_with(name) || msg.contains(&format!("{name}(")) || msg.contains(&format!("{name} must"));
        let (key, span) = if pick("delta") {
            ("generator.delta", b.delta.span())
        } else if pick("alpha") {
            ("generator.alpha", b.alpha.as_ref().map_or(g.span(), |s| s.span()))
        } else if pick("beta") {
            ("generator.beta", b.beta.as_ref().map_or(g.span(), |s| s.span()))
        } else if pick("gamma") {
            ("generator.gamma", b.gamma.as_ref().map_or(g.span(), |s| s.span()))
        } else if msg.contains("negative branch") {
            ("generator.branch", b.branch.as_ref().map_or(g.span(), |s| s.span()))
        } else if let Some(c) = &b.custom {
            ("generator.custom", c.span())
        } else {
            ("generator", g.span())
        };
        return Err(cx.err(key, span, msg));
    }
    Ok(spec)
}

fn build_diffusion(d: &Spanned<DiffusionBlock>, cx: &Ctx<'_>, times: &[f64]) -> Result<(DiffusionSpec, Vec<f64>), CliError> {
    let b = d.get_ref();
    let dim = match &b.dim {
        None => 1,
        Some(v) if *v.get_ref() >= 1 && *v.get_ref() <= 8 => *v.get_ref() as usize,
        Some(v) => return Err(cx.err("diffusion.dim", v.span(), "dimension must lie in 1..=8")),
    };
    let mut spec = DiffusionSpec::brownian(dim);
    if let Some(mu) = &b.mu {
        spec.drift = cx.field_fns("diffusion.mu", mu, dim)?;
        if spec.drift.len() != dim {
            return Err(cx.err("diffusion.mu", mu.span(), format!("expected {dim} drift entries")));
        }
    }
    if let Some(sig) = &b.sigma {
        spec.vol = cx.field_fns("diffusion.sigma", sig, dim)?;
        if spec.vol.len() != dim * dim {
            return Err(cx.err("diffusion.sigma", sig.span(), format!("expected {} volatility entries (row-major)", dim * dim)));
        }
    }
    if let Some(dom) = &b.domain {
        let db = dom.get_ref();
        let domain = match (db.lo, db.hi, &db.center, db.radius) {
            (Some(lo), Some(hi), None, None) => ConvexDomain::interval(lo, hi),
            (None, None, Some(c), Some(r)) => ConvexDomain::ball(c.clone(), r),
            _ => Err(Error::InvalidArgument("domain needs either lo/hi or center/radius".into())),
        };
        let domain = cx.core("diffusion.domain", dom.span(), domain)?;
        spec = cx.core("diffusion.domain", dom.span(), spec.with_domain(domain))?;
    }
    let sig_span = b.sigma.as_ref().or(b.mu.as_ref()).map_or(d.span(), |s| s.span());
    cx.core("diffusion", sig_span, spec.validate(times))?;
    let x0 = match &b.x0 {
        None => vec![0.0; dim],
        Some(x) if x.get_ref().len() == dim => x.get_ref().clone(),
        Some(x) => return Err(cx.err("diffusion.x0", x.span(), format!("expected {dim} coordinates"))),
    };
    if let Some(dom) = &spec.domain {
        if !dom.contains(&x0) {
            let span = b.x0.as_ref().map_or(d.span(), |s| s.span());
            return Err(cx.err("diffusion.x0", span, "start point lies outside the domain"));
        }
    }
    Ok((spec, x0))
}

fn build_terminal(raw: &RawConfig, cx: &Ctx<'_>, dim: usize) -> Result<Terminal, CliError> {
    let Some(t) = &raw.terminal else {
        return Err(cx.missing("terminal", "a [terminal] block is required"));
    };
    let b = t.get_ref();
    match (&b.expr, &b.catalog) {
        (Some(e), None) => cx.core("terminal.expr", e.span(), Terminal::parse(e.get_ref(), dim)),
        (None, Some(c)) => {
            let need = |v: &Option<Spanned<f64>>, name: &str| -> Result<f64, CliError> {
                v.as_ref().map(|s| *s.get_ref()).ok_or_else(|| cx.err(&format!("terminal.{name}"), c.span(), format!("catalog `{}` needs `{name}`", c.get_ref())))
            };
            let coeffs = || -> Result<Vec<f64>, CliError> {
                match &b.coeffs {
                    Some(v) if !v.get_ref().is_empty() => Ok(v.get_ref().clone()),
                    Some(v) => Err(cx.err("terminal.coeffs", v.span(), "coefficient list is empty")),
                    None => Err(cx.err("terminal.coeffs", c.span(), format!("catalog `{}` needs `coeffs`", c.get_ref()))),
                }
            };
            match c.get_ref().as_str() {
                "constant" => Ok(Terminal::Constant(need(&b.value, "value")?)),
                "exp-affine" => {
                    let slope = match &b.slope {
                        Some(s) if s.get_ref().len() == dim => s.get_ref().clone(),
                        Some(s) => return Err(cx.err("terminal.slope", s.span(), format!("expected {dim} slope entries"))),
                        None => return Err(cx.err("terminal.slope", c.span(), "catalog `exp-affine` needs `slope`")),
                    };
                    Ok(Terminal::ExpAffine { scale: need(&b.scale, "scale")?, slope })
                }
                "polynomial" if dim == 1 => Ok(Terminal::Polynomial(coeffs()?)),
                "cosine" if dim == 1 => Ok(Terminal::Cosine(coeffs()?)),
                "polynomial" | "cosine" => Err(cx.err("terminal.catalog", c.span(), "polynomial and cosine terminals are one-dimensional")),
                other => Err(cx.err("terminal.catalog", c.span(), format!("unknown catalog entry `{other}` (see `sqbsde catalog`)"))),
            }
        }
        (Some(e), Some(_)) => Err(cx.err("terminal", e.span(), "give either `expr` or `catalog`, not both")),
        (None, None) => Err(cx.err("terminal", t.span(), "needs `expr` or `catalog`")),
    }
}

fn build_pde(raw: &RawConfig, cx: &Ctx<'_>, kind: &str, horizon: f64, times: &[f64]) -> Result<Experiment, CliError> {
    let generator = build_generator(raw, cx, times)?;
    let (diffusion, _) = match &raw.diffusion {
        Some(d) => build_diffusion(d, cx, times)?,
        None => (DiffusionSpec::brownian(generator.dim()), vec![]),
    };
    let terminal = build_terminal(raw, cx, diffusion.dim)?;
    let Some(p) = &raw.pde else {
        return Err(cx.missing("pde", &format!("kind `{kind}` needs a [pde] block")));
    };
    let pb = p.get_ref();
    let span = raw.terminal.as_ref().map_or(p.span(), |t| t.span());
    let mut problem = cx.core("terminal", span, PDEProblem::new(diffusion, generator, terminal, horizon))?;
    if kind == "neumann" {
        let dspan = raw.diffusion.as_ref().map_or(p.span(), |d| d.span());
        problem = cx.core("diffusion.domain", dspan, problem.with_neumann())?;
    }
    let method = match pb.method.get_ref().as_str() {
        "probabilistic" => PdeMethod::Probabilistic,
        "lsmc" => PdeMethod::Lsmc,
        "transform-exact" => PdeMethod::TransformExact,
        "fd" => PdeMethod::Fd,
        "fd-transformed" => PdeMethod::FdTransformed,
        "series" if kind == "neumann" => PdeMethod::Series,
        other => {
            return Err(cx.err(
                "pde.method",
                pb.method.span(),
                format!("unknown method `{other}` for kind `{kind}`"),
            ))
        }
    };
    let t_list = pb.times.get_ref().clone();
    if t_list.iter().any(|t| !(*t >= 0.0 && *t <= horizon)) || t_list.is_empty() {
        return Err(cx.err("pde.times", pb.times.span(), format!("times must be a nonempty list in [0, {horizon}]")));
    }
    let grid = match (&pb.x, &pb.points) {
        (Some(l), None) => {
            let lb = l.get_ref();
            if lb.n < 1 {
                return Err(cx.err("pde.x", l.span(), "n must be at least 1"));
            }
            cx.core("pde.x", l.span(), EvalGrid::line(t_list, lb.lo, lb.hi, lb.n as usize))?
        }
        (None, Some(pts)) => cx.core("pde.points", pts.span(), EvalGrid::new(t_list, pts.get_ref().clone()))?,
        _ => return Err(cx.err("pde", p.span(), "give exactly one of `x` (a line) or `points`")),
    };
    if let Some(dom) = &problem.diffusion.domain {
        for x in &grid.points {
            if x.len() != problem.dim() || !dom.contains(x) {
                let s = pb.x.as_ref().map(|s| s.span()).or(pb.points.as_ref().map(|s| s.span())).unwrap_or(p.span());
                return Err(cx.err("pde.x", s, format!("evaluation point {x:?} lies outside the domain")));
            }
        }
    }
    let dx = match &pb.dx {
        None => 0.01,
        Some(d) if *d.get_ref() > 0.0 => *d.get_ref(),
        Some(d) => return Err(cx.err("pde.dx", d.span(), "grid spacing must be positive")),
    };
    let padding = match &pb.padding {
        None => None,
        Some(s) => Some(cx.core("pde.padding", s.span(), FieldFn::parse(s.get_ref(), 1))?),
    };
    if matches!(method, PdeMethod::Fd | PdeMethod::FdTransformed) {
        if problem.dim() != 1 {
            return Err(cx.err("pde.method", pb.method.span(), "finite differences are one-dimensional"));
        }
        if kind == "pde" && padding.is_none() {
            return Err(cx.err("pde.padding", p.span(), "whole-space finite differences need `padding` (boundary values in t, x)"));
        }
    }
    Ok(Experiment::Pde { problem, grid, method, dx, padding })
}

fn build_utility(raw: &RawConfig, cx: &Ctx<'_>, times: &[f64]) -> Result<Experiment, CliError> {
    let Some(m) = &raw.market else {
        return Err(cx.missing("market", "kind `utility` needs a [market] block"));
    };
    let mb = m.get_ref();
    let market = match (&mb.theta, &mb.b, &mb.sigma) {
        (Some(th), None, None) => cx.core("market.theta", th.span(), MarketModel::from_theta(th.get_ref()))?,
        (None, Some(b), Some(s)) => {
            let tf = |key: &str, v: &Spanned<Vec<Coef>>| -> Result<Vec<TimeFn>, CliError> {
                v.get_ref()
                    .iter()
                    .map(|c| match c {
                        Coef::Num(x) => Ok((*x).into()),
                        Coef::Expr(e) => cx.core(key, v.span(), TimeFn::parse(e)),
                    })
                    .collect()
            };
            let drift = tf("market.b", b)?;
            let vol = tf("market.sigma", s)?;
            let m_assets = drift.len().max(1);
            if vol.len() % m_assets != 0 {
                return Err(cx.err("market.sigma", s.span(), "volatility must have a multiple of the number of assets entries"));
            }
            let d = vol.len() / m_assets;
            cx.core("market.sigma", s.span(), MarketModel::new(drift, vol, d))?
        }
        _ => return Err(cx.err("market", m.span(), "give either `theta` or both `b` and `sigma`")),
    };
    let sig_span = mb.sigma.as_ref().map(|s| s.span()).or(mb.theta.as_ref().map(|s| s.span())).unwrap_or(m.span());
    cx.core("market.sigma", sig_span, market.validate(times))?;
    let Some(u) = &raw.utility else {
        return Err(cx.missing("utility", "kind `utility` needs a [utility] block"));
    };
    let ub = u.get_ref();
    let utility = match ub.kind.get_ref().as_str() {
        "log" => Utility::Log,
        "power" => match &ub.delta {
            Some(d) => Utility::Power(*d.get_ref()),
            None => return Err(cx.err("utility.delta", ub.kind.span(), "power utility needs `delta`")),
        },
        other => return Err(cx.err("utility.kind", ub.kind.span(), format!("unknown utility `{other}`, expected power or log"))),
    };
    let endowment = build_terminal(raw, cx, market.dim)?;
    let wealth = ub.wealth.as_ref().map_or(1.0, |w| *w.get_ref());
    let problem = UtilityProblem::new(utility, endowment, wealth).map_err(|e| {
        let msg = e.to_string();
        match (&ub.delta, &ub.wealth) {
            (Some(d), _) if msg.contains("δ") => cx.err("utility.delta", d.span(), msg),
            (_, Some(w)) => cx.err("utility.wealth", w.span(), msg),
            _ => cx.err("utility", u.span(), msg),
        }
    })?;
    let strategies = ub.strategies.as_ref().map_or_else(Vec::new, |s| s.get_ref().clone());
    if market.dim != 1 && !strategies.is_empty() {
        let s = ub.strategies.as_ref().expect("nonempty");
        return Err(cx.err("utility.strategies", s.span(), "constant test strategies are supported for one Brownian motion only"));
    }
    Ok(Experiment::Utility { market, problem, strategies })
}
