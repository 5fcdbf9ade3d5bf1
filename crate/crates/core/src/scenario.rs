//! Scenario files: flat `key = value` lines with `#` comments.
//!
//! Numbers may be arithmetic expressions in `+ - * / ( )` and `pi`. Composite
//! values use a small literal grammar:
//!
//! ```text
//! domain   = disk | rectangle(1, 1) | torus(1, 1)
//! measure  = atomic[(1, 0.5), (-1, 0.5)] | density(uniform, -0.5, 0.75, 33) | liouville | sinh
//! variant  = neri | ss | torus-neri
//! seed     = zero | previous | bump(0, 0, 2, 0.3)
//! vortex   = [(0.4, 0, 1), (-0.4, 0, -1)]
//! lambda_list = [8*pi*0.5/1.5, 8*pi/2]
//! ```

use std::path::{Path, PathBuf};

use crate::blowup::AnalysisOptions;
use crate::error::{Error, Result};
use crate::grid::{Domain, Grid, StencilKind};
use crate::kirchhoff::VortexConfig;
use crate::measure::{Density, IntensityMeasure};
use crate::solver::{ProblemSpec, SeedPolicy, SolveOptions, Variant};

pub const DEFAULT_RNG_SEED: u64 = 42;
pub const DEFAULT_ESTIMATE_SAMPLES: usize = 10_000;

#[derive(Debug, Clone)]
pub struct Scenario {
    pub domain: Option<Domain>,
    pub n: Option<usize>,
    pub stencil: StencilKind,
    pub measure: Option<IntensityMeasure>,
    pub variant: Option<Variant>,
    pub lambda: Option<f64>,
    pub lambda_list: Option<Vec<f64>>,
    pub seed: SeedPolicy,
    pub solve: SolveOptions,
    pub analysis: AnalysisOptions,
    pub estimate_deltas: Vec<f64>,
    pub estimate_samples: usize,
    pub rng_seed: u64,
    pub vortex: Option<VortexConfig>,
    pub critical_tol: f64,
    pub critical_max_iter: usize,
    /// Solution snapshot or continuation output directory to analyze.
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Line on which each key was set, for error messages.
    lines: Vec<(String, usize)>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            domain: None,
            n: None,
            stencil: StencilKind::default(),
            measure: None,
            variant: None,
            lambda: None,
            lambda_list: None,
            seed: SeedPolicy::Zero,
            solve: SolveOptions::default(),
            analysis: AnalysisOptions::default(),
            estimate_deltas: Vec::new(),
            estimate_samples: DEFAULT_ESTIMATE_SAMPLES,
            rng_seed: DEFAULT_RNG_SEED,
            vortex: None,
            critical_tol: 1e-10,
            critical_max_iter: 500,
            input: None,
            out: None,
            lines: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Num(f64),
    Ident(String),
    Call(String, Vec<Val>),
    List(Vec<Val>),
    Tuple(Vec<Val>),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Punct(char),
}

fn tokenize(s: &str) -> std::result::Result<Vec<Tok>, String> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Tok::Num(text.parse().map_err(|_| format!("bad number `{text}`"))?));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric()
                    || chars[i] == '_'
                    || (chars[i] == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_alphabetic())))
            {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect::<String>().to_ascii_lowercase()));
        } else if "()[],+-*/".contains(c) {
            out.push(Tok::Punct(c));
            i += 1;
        } else {
            return Err(format!("unexpected character `{c}`"));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

type PResult<T> = std::result::Result<T, String>;

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> PResult<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(format!("expected `{c}`"))
        }
    }

    fn expr(&mut self) -> PResult<f64> {
        let mut acc = self.term()?;
        loop {
            if self.eat('+') {
                acc += self.term()?;
            } else if self.eat('-') {
                acc -= self.term()?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> PResult<f64> {
        let mut acc = self.factor()?;
        loop {
            if self.eat('*') {
                acc *= self.factor()?;
            } else if self.eat('/') {
                acc /= self.factor()?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn factor(&mut self) -> PResult<f64> {
        if self.eat('-') {
            return Ok(-self.factor()?);
        }
        if self.eat('+') {
            return self.factor();
        }
        if self.eat('(') {
            let x = self.expr()?;
            self.expect(')')?;
            return Ok(x);
        }
        match self.peek().cloned() {
            Some(Tok::Num(x)) => {
                self.pos += 1;
                Ok(x)
            }
            Some(Tok::Ident(name)) if name == "pi" => {
                self.pos += 1;
                Ok(std::f64::consts::PI)
            }
            _ => Err("expected a number".into()),
        }
    }

    fn items(&mut self, close: char) -> PResult<Vec<Val>> {
        let mut out = Vec::new();
        if self.eat(close) {
            return Ok(out);
        }
        loop {
            out.push(self.item()?);
            if self.eat(close) {
                return Ok(out);
            }
            self.expect(',')?;
        }
    }

    fn item(&mut self) -> PResult<Val> {
        let start = self.pos;
        if let Ok(x) = self.expr() {
            if matches!(self.peek(), None | Some(Tok::Punct(',' | ')' | ']'))) {
                return Ok(Val::Num(x));
            }
        }
        self.pos = start;
        if self.eat('[') {
            return Ok(Val::List(self.items(']')?));
        }
        if self.eat('(') {
            return Ok(Val::Tuple(self.items(')')?));
        }
        match self.peek().cloned() {
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match self.peek_at(0) {
                    Some(Tok::Punct('(')) => {
                        self.pos += 1;
                        Ok(Val::Call(name, self.items(')')?))
                    }
                    Some(Tok::Punct('[')) => {
                        self.pos += 1;
                        Ok(Val::Call(name, vec![Val::List(self.items(']')?)]))
                    }
                    _ => Ok(Val::Ident(name)),
                }
            }
            _ => Err("expected a value".into()),
        }
    }
}

fn parse_value(s: &str) -> PResult<Val> {
    let mut p = Parser { toks: tokenize(s)?, pos: 0 };
    let v = p.item()?;
    if p.pos != p.toks.len() {
        return Err("trailing input after value".into());
    }
    Ok(v)
}

fn num(v: &Val) -> PResult<f64> {
    match v {
        Val::Num(x) if x.is_finite() => Ok(*x),
        Val::Num(_) => Err("value is not finite".into()),
        _ => Err("expected a number".into()),
    }
}

fn nums(vals: &[Val], count: usize, what: &str) -> PResult<Vec<f64>> {
    if vals.len() != count {
        return Err(format!("{what} takes {count} arguments, got {}", vals.len()));
    }
    vals.iter().map(num).collect()
}

fn integer(v: &Val) -> PResult<usize> {
    let x = num(v)?;
    if x < 0.0 || x.fract() != 0.0 || x > 1e15 {
        return Err(format!("expected a nonnegative integer, got {x}"));
    }
    Ok(x as usize)
}

fn list(v: &Val) -> PResult<Vec<f64>> {
    match v {
        Val::List(items) => items.iter().map(num).collect(),
        Val::Num(x) => Ok(vec![*x]),
        _ => Err("expected a list `[a, b, ...]`".into()),
    }
}

fn ident(v: &Val) -> PResult<&str> {
    match v {
        Val::Ident(s) => Ok(s),
        _ => Err("expected a name".into()),
    }
}

fn parse_domain(v: &Val) -> PResult<Domain> {
    let d = match v {
        Val::Ident(s) if s == "disk" || s == "unit_disk" || s == "unit-disk" => Domain::UnitDisk,
        Val::Call(s, args) if s == "rectangle" => {
            let a = nums(args, 2, "rectangle")?;
            Domain::Rectangle { width: a[0], height: a[1] }
        }
        Val::Call(s, args) if s == "torus" => {
            let a = nums(args, 2, "torus")?;
            Domain::FlatTorus {
                period_x: a[0],
                period_y: a[1],
            }
        }
        _ => return Err("expected `disk`, `rectangle(w, h)` or `torus(lx, ly)`".into()),
    };
    d.validate().map_err(|e| e.to_string())?;
    Ok(d)
}

fn parse_measure(v: &Val) -> PResult<IntensityMeasure> {
    match v {
        Val::Ident(s) if s == "liouville" => Ok(IntensityMeasure::liouville()),
        Val::Ident(s) if s == "sinh" => Ok(IntensityMeasure::sinh()),
        Val::Call(s, args) if s == "atomic" => {
            let [Val::List(atoms)] = args.as_slice() else {
                return Err("expected `atomic[(alpha, weight), ...]`".into());
            };
            let pairs = atoms
                .iter()
                .map(|a| match a {
                    Val::Tuple(t) => nums(t, 2, "an atom").map(|x| (x[0], x[1])),
                    _ => Err("atoms are `(alpha, weight)` pairs".into()),
                })
                .collect::<PResult<Vec<_>>>()?;
            IntensityMeasure::atomic(&pairs).map_err(|e| e.to_string())
        }
        Val::Call(s, args) if s == "density" => {
            if args.len() != 4 {
                return Err("expected `density(name, a, b, n_nodes)`".into());
            }
            let density = match ident(&args[0])? {
                "uniform" => Density::Uniform,
                "parabolic" => Density::Parabolic,
                other => return Err(format!("unknown density `{other}`")),
            };
            IntensityMeasure::from_density(density, num(&args[1])?, num(&args[2])?, integer(&args[3])?)
                .map_err(|e| e.to_string())
        }
        _ => Err("expected `atomic[...]`, `density(...)`, `liouville` or `sinh`".into()),
    }
}

fn parse_variant(v: &Val) -> PResult<Variant> {
    match ident(v)? {
        "neri" => Ok(Variant::Neri),
        "ss" => Ok(Variant::Ss),
        "torus-neri" | "torus_neri" => Ok(Variant::TorusNeri),
        other => Err(format!("unknown variant `{other}`")),
    }
}

fn parse_seed(v: &Val) -> PResult<SeedPolicy> {
    match v {
        Val::Ident(s) if s == "zero" => Ok(SeedPolicy::Zero),
        Val::Ident(s) if s == "previous" => Ok(SeedPolicy::Previous),
        Val::Call(s, args) if s == "bump" => {
            let a = nums(args, 4, "bump")?;
            if !(a[3] > 0.0) {
                return Err("bump width must be positive".into());
            }
            Ok(SeedPolicy::PreviousPlusBump {
                center: [a[0], a[1]],
                amplitude: a[2],
                width: a[3],
            })
        }
        _ => Err("expected `zero`, `previous` or `bump(x, y, amplitude, width)`".into()),
    }
}

fn parse_vortex(v: &Val) -> PResult<VortexConfig> {
    let Val::List(items) = v else {
        return Err("expected `[(x, y, intensity), ...]`".into());
    };
    let mut points = Vec::new();
    let mut intensities = Vec::new();
    for item in items {
        let Val::Tuple(t) = item else {
            return Err("vortices are `(x, y, intensity)` triples".into());
        };
        let x = nums(t, 3, "a vortex")?;
        points.push([x[0], x[1]]);
        intensities.push(x[2]);
    }
    VortexConfig::new(points, intensities).map_err(|e| e.to_string())
}

fn positive(x: f64) -> PResult<f64> {
    if x > 0.0 {
        Ok(x)
    } else {
        Err(format!("must be positive, got {x}"))
    }
}

/// A bare or double-quoted path.
fn path_value(raw: &str) -> PResult<PathBuf> {
    let unquoted = match raw.strip_prefix('"') {
        Some(rest) => rest.strip_suffix('"').ok_or_else(|| "unterminated quote".to_string())?,
        None => raw,
    };
    if unquoted.is_empty() {
        return Err("empty path".into());
    }
    Ok(PathBuf::from(unquoted))
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut s = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut s.input, &mut s.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Scenario::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config {
                    line,
                    key: content.to_string(),
                    message: "expected `key = value`".into(),
                });
            };
            let (key, value) = (key.trim().to_string(), value.trim());
            let fail = |message: String| Error::Config {
                line,
                key: key.clone(),
                message,
            };
            if s.lines.iter().any(|(k, _)| *k == key) {
                return Err(fail("duplicate key".into()));
            }
            s.set(&key, value).map_err(fail)?;
            s.lines.push((key, line));
        }
        s.check_consistency()?;
        Ok(s)
    }

    fn set(&mut self, key: &str, raw: &str) -> PResult<()> {
        match key {
            "input" => {
                self.input = Some(path_value(raw)?);
                return Ok(());
            }
            "out" => {
                self.out = Some(path_value(raw)?);
                return Ok(());
            }
            _ => {}
        }
        let v = parse_value(raw)?;
        match key {
            "domain" => self.domain = Some(parse_domain(&v)?),
            "n" => self.n = Some(integer(&v)?),
            "stencil" => {
                self.stencil = match ident(&v)? {
                    "shortley-weller" | "shortley_weller" => StencilKind::ShortleyWeller,
                    "symmetric" => StencilKind::Symmetric,
                    other => return Err(format!("unknown stencil `{other}`")),
                }
            }
            "measure" => self.measure = Some(parse_measure(&v)?),
            "variant" => self.variant = Some(parse_variant(&v)?),
            "lambda" => {
                let x = num(&v)?;
                if x < 0.0 {
                    return Err(format!("lambda must be nonnegative, got {x}"));
                }
                self.lambda = Some(x);
            }
            "lambda_list" => {
                let xs = list(&v)?;
                if xs.is_empty() {
                    return Err("lambda_list is empty".into());
                }
                if let Some(x) = xs.iter().find(|x| **x < 0.0) {
                    return Err(format!("lambda must be nonnegative, got {x}"));
                }
                if xs.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err("lambda_list must be strictly increasing".into());
                }
                self.lambda_list = Some(xs);
            }
            "seed" => self.seed = parse_seed(&v)?,
            "tol" => self.solve.tol = positive(num(&v)?)?,
            "max_iter" | "max_newton" => self.solve.max_iter = integer(&v)?,
            "max_halvings" => self.solve.max_halvings = integer(&v)?,
            "peak_threshold" => self.analysis.peak_threshold = positive(num(&v)?)?,
            "min_separation" => self.analysis.min_separation = num(&v)?.max(0.0),
            "ball_radius" => self.analysis.ball_radius = Some(positive(num(&v)?)?),
            "extra_radii" => self.analysis.extra_radii = list(&v)?.into_iter().map(positive).collect::<PResult<_>>()?,
            "rv_radius" => self.analysis.rv_radius = positive(num(&v)?)?,
            "pohozaev_radii" => {
                self.analysis.pohozaev_radii = list(&v)?.into_iter().map(positive).collect::<PResult<_>>()?
            }
            "estimate_deltas" => {
                let xs = list(&v)?;
                if let Some(d) = xs.iter().find(|d| !(**d > 0.0 && **d <= 0.2)) {
                    return Err(format!("estimate deltas must lie in (0, 0.2], got {d}"));
                }
                self.estimate_deltas = xs;
            }
            "estimate_samples" => self.estimate_samples = integer(&v)?,
            "rng_seed" => self.rng_seed = integer(&v)? as u64,
            "vortex" => self.vortex = Some(parse_vortex(&v)?),
            "critical_tol" => self.critical_tol = positive(num(&v)?)?,
            "critical_max_iter" => self.critical_max_iter = integer(&v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn line_of(&self, key: &str) -> usize {
        self.lines.iter().find(|(k, _)| k == key).map_or(0, |(_, l)| *l)
    }

    /// A configuration error attributed to the line that set `key`.
    pub fn error(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            line: self.line_of(key),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn check_consistency(&self) -> Result<()> {
        if let (Some(d), Some(v)) = (&self.domain, self.variant) {
            if d.is_periodic() != (v == Variant::TorusNeri) {
                return Err(self.error("variant", format!("variant `{}` does not fit the domain", v.name())));
            }
        }
        Ok(())
    }

    /// The model variant, defaulting to `torus-neri` on the torus and `neri`
    /// elsewhere.
    pub fn variant(&self) -> Variant {
        self.variant.unwrap_or(match self.domain {
            Some(Domain::FlatTorus { .. }) => Variant::TorusNeri,
            _ => Variant::Neri,
        })
    }

    pub fn require_domain(&self) -> Result<&Domain> {
        self.domain.as_ref().ok_or_else(|| self.error("domain", "missing"))
    }

    pub fn grid(&self) -> Result<std::sync::Arc<Grid>> {
        let domain = self.require_domain()?.clone();
        let n = self.n.ok_or_else(|| self.error("n", "missing"))?;
        Grid::build_with(domain, n, self.stencil).map_err(|e| self.error("n", e.to_string()))
    }

    /// The problem at `lambda` on this scenario's grid.
    pub fn problem(&self, lambda: f64) -> Result<ProblemSpec> {
        let grid = self.grid()?;
        let measure = self.measure.clone().ok_or_else(|| self.error("measure", "missing"))?;
        ProblemSpec::on_grid(grid, measure, lambda, self.variant()).map_err(|e| self.error("variant", e.to_string()))
    }

    pub fn require_lambda(&self) -> Result<f64> {
        self.lambda.ok_or_else(|| self.error("lambda", "missing"))
    }

    pub fn require_lambda_list(&self) -> Result<&[f64]> {
        self.lambda_list.as_deref().ok_or_else(|| self.error("lambda_list", "missing"))
    }

    pub fn require_vortex(&self) -> Result<&VortexConfig> {
        self.vortex.as_ref().ok_or_else(|| self.error("vortex", "missing"))
    }

    pub fn require_input(&self) -> Result<&Path> {
        self.input.as_deref().ok_or_else(|| self.error("input", "missing"))
    }
}
