//! Line-oriented run configuration: `key = value` pairs, `[section]` headers,
//! `#` comments. The grammar is in `docs/config-grammar.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use qnoise_core::feller::{BoundaryRule, DriftKind, DriftSpec, EndVerdict};
use qnoise_core::grid::{GridSpec, WeylLabel};
use qnoise_core::levy::{Atom, Atom2, JumpDensity, JumpMeasure, JumpMeasure2D, LevyTriplet1D, LevyTriplet2D, DEFAULT_TRUNCATION};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    LevySample,
    CharCheck,
    McSemigroup,
    GeneratorCheck,
    CpSuite,
    Dyson,
    GaugeSuite,
    GalileiCompare,
    CovarianceCheck,
    FellerClassify,
    KilledDiffusion,
}

impl Kind {
    pub const ALL: [Kind; 11] = [
        Kind::LevySample,
        Kind::CharCheck,
        Kind::McSemigroup,
        Kind::GeneratorCheck,
        Kind::CpSuite,
        Kind::Dyson,
        Kind::GaugeSuite,
        Kind::GalileiCompare,
        Kind::CovarianceCheck,
        Kind::FellerClassify,
        Kind::KilledDiffusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::LevySample => "levy-sample",
            Kind::CharCheck => "char-check",
            Kind::McSemigroup => "mc-semigroup",
            Kind::GeneratorCheck => "generator-check",
            Kind::CpSuite => "cp-suite",
            Kind::Dyson => "dyson",
            Kind::GaugeSuite => "gauge-suite",
            Kind::GalileiCompare => "galilei-compare",
            Kind::CovarianceCheck => "covariance-check",
            Kind::FellerClassify => "feller-classify",
            Kind::KilledDiffusion => "killed-diffusion",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "both" => Ok(Format::Both),
            _ => Err(format!("format must be csv, json or both, not `{s}`")),
        }
    }
}

/// One- or two-dimensional noise.
#[derive(Debug, Clone)]
pub enum Triplet {
    One(LevyTriplet1D),
    Two(LevyTriplet2D),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSpec {
    pub q0: f64,
    pub p0: f64,
    pub sigma: f64,
}

/// Observables available to `mc-semigroup`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObservableSpec {
    Cos,
    Sin,
    Gauss,
    X,
    X2,
    P2,
    Weyl(WeylLabel),
}

impl ObservableSpec {
    pub fn name(&self) -> String {
        match self {
            ObservableSpec::Cos => "cos".into(),
            ObservableSpec::Sin => "sin".into(),
            ObservableSpec::Gauss => "gauss".into(),
            ObservableSpec::X => "x".into(),
            ObservableSpec::X2 => "x2".into(),
            ObservableSpec::P2 => "p2".into(),
            ObservableSpec::Weyl(l) => format!("weyl:{}:{}", l.x, l.v),
        }
    }

    /// The function `f` for `f(Q)` observables.
    pub fn position_fn(&self) -> Option<fn(f64) -> f64> {
        match self {
            ObservableSpec::Cos => Some(f64::cos),
            ObservableSpec::Sin => Some(f64::sin),
            ObservableSpec::Gauss => Some(|x| (-0.5 * x * x).exp()),
            ObservableSpec::X => Some(|x| x),
            ObservableSpec::X2 => Some(|x| x * x),
            _ => None,
        }
    }
}

impl FromStr for ObservableSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cos" => Ok(ObservableSpec::Cos),
            "sin" => Ok(ObservableSpec::Sin),
            "gauss" => Ok(ObservableSpec::Gauss),
            "x" => Ok(ObservableSpec::X),
            "x2" => Ok(ObservableSpec::X2),
            "p2" => Ok(ObservableSpec::P2),
            _ => {
                let parts: Vec<&str> = s.split(':').collect();
                if parts.len() == 3 && parts[0] == "weyl" {
                    let x = parts[1].trim().parse::<f64>().map_err(|_| format!("bad weyl x in `{s}`"))?;
                    let v = parts[2].trim().parse::<f64>().map_err(|_| format!("bad weyl v in `{s}`"))?;
                    Ok(ObservableSpec::Weyl(WeylLabel::new(x, v)))
                } else {
                    Err(format!("unknown observable `{s}` (cos, sin, gauss, x, x2, p2, weyl:X:V)"))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    Gauss,
    Cos,
    Sech,
}

impl TestFunction {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            TestFunction::Gauss => (-0.5 * x * x).exp(),
            TestFunction::Cos => x.cos(),
            TestFunction::Sech => 1.0 / x.cosh(),
        }
    }
}

impl FromStr for TestFunction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gauss" => Ok(TestFunction::Gauss),
            "cos" => Ok(TestFunction::Cos),
            "sech" => Ok(TestFunction::Sech),
            _ => Err(format!("unknown function `{s}` (gauss, cos, sech)")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Params {
    LevySample {
        triplet: Triplet,
        t: f64,
        steps: usize,
    },
    CharCheck {
        triplet: Triplet,
        t: f64,
        args: Vec<[f64; 2]>,
        n_paths: usize,
    },
    McSemigroup {
        triplet: LevyTriplet1D,
        grid: GridSpec,
        state: StateSpec,
        t: f64,
        observables: Vec<ObservableSpec>,
        n_paths: usize,
    },
    GeneratorCheck {
        triplet: LevyTriplet1D,
        grid: GridSpec,
        t: f64,
        points: Vec<f64>,
        function: TestFunction,
        n_paths: usize,
    },
    CpSuite {
        count: usize,
        max_dim: usize,
        max_jumps: usize,
        t: f64,
    },
    Dyson {
        gamma: f64,
        omega: f64,
        t: f64,
        terms: usize,
        tolerance: f64,
    },
    GaugeSuite {
        count: usize,
        max_dim: usize,
        max_jumps: usize,
    },
    GalileiCompare {
        triplet: LevyTriplet2D,
        free: bool,
        grid: GridSpec,
        state: StateSpec,
        t: f64,
        n_steps: usize,
        labels: Vec<WeylLabel>,
        n_paths: usize,
    },
    CovarianceCheck {
        triplet: LevyTriplet2D,
        free: bool,
        grid: GridSpec,
        state: StateSpec,
        shifts: Vec<[f64; 3]>,
        n_steps: usize,
        n_paths: usize,
    },
    FellerClassify {
        drift: DriftSpec,
        expect_l: Option<EndVerdict>,
        expect_infinity: Option<EndVerdict>,
    },
    KilledDiffusion {
        drift: DriftSpec,
        x_start: f64,
        t: f64,
        dt: f64,
        curve_points: usize,
        rule: BoundaryRule,
        bridge: bool,
        compare_reflecting: bool,
        expect_survival: Option<f64>,
        tolerance: f64,
        n_paths: usize,
    },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kind: Kind,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub threads: Option<usize>,
    pub params: Params,
    /// Sorted `section.key = value` rendering; hashed into the manifest.
    pub canonical: String,
}

impl RunConfig {
    /// Replaces the seed; the canonical text follows.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        let mut lines: Vec<String> = self
            .canonical
            .lines()
            .filter(|l| !l.starts_with("seed = "))
            .map(String::from)
            .collect();
        lines.push(format!("seed = {seed}"));
        lines.sort();
        self.canonical = lines.join("\n") + "\n";
        self
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Sections keyed by name; the top level is `""`.
#[derive(Debug, Default)]
struct Raw {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
    section_lines: BTreeMap<String, usize>,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn tokenize(text: &str, errors: &mut Vec<ConfigError>) -> Raw {
    let mut raw = Raw::default();
    raw.sections.insert(String::new(), BTreeMap::new());
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            match rest.strip_suffix(']').map(str::trim) {
                Some(name) if is_ident(name) => {
                    if raw.section_lines.contains_key(name) {
                        errors.push(err(Some(n), format!("section [{name}] appears twice")));
                    }
                    raw.section_lines.insert(name.to_string(), n);
                    raw.sections.entry(name.to_string()).or_default();
                    current = name.to_string();
                }
                _ => errors.push(err(Some(n), format!("malformed section header `{line}`"))),
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(err(Some(n), format!("expected `key = value`, found `{line}`")));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if !is_ident(key) {
            errors.push(err(Some(n), format!("malformed key `{key}`")));
            continue;
        }
        if value.is_empty() {
            errors.push(err(Some(n), format!("key `{key}` has no value")));
            continue;
        }
        let section = raw.sections.entry(current.clone()).or_default();
        if section.contains_key(key) {
            errors.push(err(Some(n), format!("duplicate key `{}`", qualified(&current, key))));
            continue;
        }
        section.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line: n,
            },
        );
    }
    raw
}

fn err(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

trait Value: Sized {
    const TYPE: &'static str;
    fn parse(s: &str) -> Result<Self, String>;
}

impl Value for f64 {
    const TYPE: &'static str = "number";
    fn parse(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{s}` is not finite"))
        }
    }
}

impl Value for u64 {
    const TYPE: &'static str = "nonnegative integer";
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("`{s}` is not a nonnegative integer"))
    }
}

impl Value for usize {
    const TYPE: &'static str = "nonnegative integer";
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("`{s}` is not a nonnegative integer"))
    }
}

impl Value for bool {
    const TYPE: &'static str = "boolean";
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("`{s}` is not true or false")),
        }
    }
}

impl Value for String {
    const TYPE: &'static str = "string";
    fn parse(s: &str) -> Result<Self, String> {
        Ok(s.to_string())
    }
}

/// `a:b:...` tuples of numbers.
impl<const N: usize> Value for [f64; N] {
    const TYPE: &'static str = "colon-separated tuple";
    fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if parts.len() != N {
            return Err(format!("`{s}` must have {N} colon-separated numbers"));
        }
        let mut out = [0.0; N];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = <f64 as Value>::parse(p)?;
        }
        Ok(out)
    }
}

macro_rules! value_via_fromstr {
    ($($t:ty => $name:expr),*) => {$(
        impl Value for $t {
            const TYPE: &'static str = $name;
            fn parse(s: &str) -> Result<Self, String> {
                s.parse()
            }
        }
    )*};
}

value_via_fromstr!(Kind => "experiment kind", Format => "format", ObservableSpec => "observable", TestFunction => "function");

impl Value for EndVerdict {
    const TYPE: &'static str = "boundary verdict";
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "absorbing" => Ok(EndVerdict::Absorbing),
            "non-absorbing" => Ok(EndVerdict::NonAbsorbing),
            _ => Err(format!("`{s}` must be absorbing or non-absorbing")),
        }
    }
}

impl Value for BoundaryRule {
    const TYPE: &'static str = "boundary rule";
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "absorbing" => Ok(BoundaryRule::Absorbing),
            "reflecting" => Ok(BoundaryRule::Reflecting),
            _ => Err(format!("`{s}` must be absorbing or reflecting")),
        }
    }
}

/// Typed access that records every error and every key consumed.
struct Reader<'a> {
    raw: &'a Raw,
    used: BTreeSet<(String, String)>,
    known_sections: BTreeSet<&'static str>,
    errors: Vec<ConfigError>,
}

impl<'a> Reader<'a> {
    fn entry(&mut self, section: &'static str, key: &str) -> Option<&'a Entry> {
        self.known_sections.insert(section);
        let e = self.raw.sections.get(section)?.get(key)?;
        self.used.insert((section.to_string(), key.to_string()));
        Some(e)
    }

    fn get<T: Value>(&mut self, section: &'static str, key: &str) -> Option<T> {
        let e = self.entry(section, key)?;
        match T::parse(&e.value) {
            Ok(v) => Some(v),
            Err(m) => {
                self.errors.push(err(
                    Some(e.line),
                    format!("`{}` expects a {}: {m}", qualified(section, key), T::TYPE),
                ));
                None
            }
        }
    }

    fn list<T: Value>(&mut self, section: &'static str, key: &str) -> Option<Vec<T>> {
        let e = self.entry(section, key)?;
        let mut out = Vec::new();
        let mut ok = true;
        for item in e.value.split(',').map(str::trim) {
            match T::parse(item) {
                Ok(v) => out.push(v),
                Err(m) => {
                    ok = false;
                    self.errors.push(err(
                        Some(e.line),
                        format!("`{}` expects a list of {}: {m}", qualified(section, key), T::TYPE),
                    ));
                }
            }
        }
        ok.then_some(out)
    }

    fn or<T: Value>(&mut self, section: &'static str, key: &str, default: T) -> T {
        self.get(section, key).unwrap_or(default)
    }

    fn list_or<T: Value>(&mut self, section: &'static str, key: &str, default: Vec<T>) -> Vec<T> {
        self.list(section, key).unwrap_or(default)
    }

    fn required<T: Value>(&mut self, section: &'static str, key: &str) -> Option<T> {
        let present = self.raw.sections.get(section).is_some_and(|s| s.contains_key(key));
        if !present {
            self.known_sections.insert(section);
            self.errors.push(err(None, format!("missing required key `{}`", qualified(section, key))));
            return None;
        }
        self.get(section, key)
    }

    fn required_list<T: Value>(&mut self, section: &'static str, key: &str) -> Option<Vec<T>> {
        let present = self.raw.sections.get(section).is_some_and(|s| s.contains_key(key));
        if !present {
            self.known_sections.insert(section);
            self.errors.push(err(None, format!("missing required key `{}`", qualified(section, key))));
            return None;
        }
        self.list(section, key)
    }

    fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        self.raw.sections.get(section).and_then(|s| s.get(key)).map(|e| e.line)
    }

    fn fail(&mut self, section: &str, key: &str, message: impl Into<String>) {
        let line = self.line_of(section, key).or_else(|| self.raw.section_lines.get(section).copied());
        self.errors.push(err(line, message));
    }

    fn positive(&mut self, section: &'static str, key: &str, default: f64) -> f64 {
        let v = self.or(section, key, default);
        if !(v > 0.0) {
            self.fail(section, key, format!("`{}` must be positive, got {v}", qualified(section, key)));
        }
        v
    }

    fn count(&mut self, section: &'static str, key: &str, default: usize) -> usize {
        let v = self.or(section, key, default);
        if v == 0 {
            self.fail(section, key, format!("`{}` must be at least 1", qualified(section, key)));
        }
        v
    }

    fn unknown_keys(&mut self) {
        for (section, keys) in &self.raw.sections {
            if !section.is_empty() && !self.known_sections.contains(section.as_str()) {
                let line = self.raw.section_lines.get(section).copied();
                self.errors.push(err(line, format!("unknown section [{section}] for this experiment")));
                continue;
            }
            for (key, e) in keys {
                if !self.used.contains(&(section.clone(), key.clone())) {
                    self.errors.push(err(Some(e.line), format!("unknown key `{}`", qualified(section, key))));
                }
            }
        }
    }
}

fn triplet_1d(r: &mut Reader) -> Option<LevyTriplet1D> {
    const S: &str = "triplet";
    let beta = r.or(S, "beta", 0.0);
    let alpha = r.or(S, "alpha", 0.0);
    let h = r.or(S, "h", DEFAULT_TRUNCATION);
    let atoms: Vec<[f64; 2]> = r.list_or(S, "atoms", Vec::new());
    let scale: Option<f64> = r.get(S, "power_law_scale");
    let index = r.or(S, "power_law_index", 1.2);
    let epsilon = r.or(S, "power_law_epsilon", 1e-3);
    let max_jump = r.or(S, "power_law_max_jump", 10.0);
    let correction = r.or(S, "power_law_gaussian_correction", true);
    let atoms = atoms.into_iter().map(|[location, rate]| Atom { location, rate }).collect();
    let built = JumpMeasure::from_atoms(atoms).and_then(|m| match scale {
        Some(s) => Ok(m.with_density(JumpDensity::power_law(s, index, epsilon, max_jump, correction)?)),
        None => Ok(m),
    });
    match built.and_then(|m| LevyTriplet1D::new(beta, alpha, m, h)) {
        Ok(t) => Some(t),
        Err(e) => {
            r.fail(S, "alpha", format!("[triplet] {e}"));
            None
        }
    }
}

fn triplet_2d(r: &mut Reader) -> Option<(LevyTriplet2D, bool)> {
    const S: &str = "triplet2d";
    let beta_p = r.or(S, "beta_p", 0.0);
    let beta_q = r.or(S, "beta_q", 0.0);
    let alpha_pp = r.or(S, "alpha_pp", 0.0);
    let alpha_pq = r.or(S, "alpha_pq", 0.0);
    let alpha_qq = r.or(S, "alpha_qq", 0.0);
    let h = r.or(S, "h", DEFAULT_TRUNCATION);
    let free = r.or(S, "free", true);
    let atoms: Vec<[f64; 3]> = r.list_or(S, "atoms", Vec::new());
    let atoms = atoms
        .into_iter()
        .map(|[x, v, rate]| Atom2 { location: [x, v], rate })
        .collect();
    let built = JumpMeasure2D::from_atoms(atoms)
        .and_then(|m| LevyTriplet2D::new(beta_p, beta_q, alpha_pp, alpha_pq, alpha_qq, m, h));
    match built {
        Ok(t) => Some((t, free)),
        Err(e) => {
            r.fail(S, "alpha_pp", format!("[triplet2d] {e}"));
            None
        }
    }
}

fn either_triplet(r: &mut Reader) -> Option<Triplet> {
    let has1 = r.raw.sections.contains_key("triplet");
    let has2 = r.raw.sections.contains_key("triplet2d");
    match (has1, has2) {
        (true, true) => {
            r.fail("triplet2d", "", "give either [triplet] or [triplet2d], not both");
            None
        }
        (false, true) => triplet_2d(r).map(|(t, _)| Triplet::Two(t)),
        _ => triplet_1d(r).map(Triplet::One),
    }
}

fn grid(r: &mut Reader) -> Option<GridSpec> {
    let n = r.or("grid", "n", 1024usize);
    let half = r.or("grid", "half_width", 40.0);
    match GridSpec::centered(n, half) {
        Ok(g) => Some(g),
        Err(e) => {
            r.fail("grid", "n", format!("[grid] {e}"));
            None
        }
    }
}

fn state(r: &mut Reader) -> StateSpec {
    StateSpec {
        q0: r.or("state", "q0", 0.0),
        p0: r.or("state", "p0", 0.0),
        sigma: r.positive("state", "sigma", 1.0),
    }
}

fn n_paths(r: &mut Reader, default: usize) -> usize {
    r.count("mc", "n_paths", default)
}

fn drift(r: &mut Reader) -> Option<DriftSpec> {
    const S: &str = "drift";
    let kind: Option<String> = r.required(S, "kind");
    let l = r.or(S, "l", 0.0);
    let x0 = r.or(S, "x0", 1.0);
    let kind = match kind.as_deref() {
        Some("zero") => DriftKind::Zero,
        Some("constant") => DriftKind::Constant { c: r.required(S, "c")? },
        Some("bessel3") => DriftKind::Bessel3,
        Some("ou") => DriftKind::OrnsteinUhlenbeck { k: r.or(S, "k", 1.0) },
        Some("quadratic") => DriftKind::Quadratic { c: r.or(S, "c", 1.0) },
        Some("table") => {
            let xs = r.required_list(S, "xs");
            let values = r.required_list(S, "values");
            DriftKind::Table { xs: xs?, values: values? }
        }
        Some(other) => {
            r.fail(S, "kind", format!("unknown drift kind `{other}` (zero, constant, bessel3, ou, quadratic, table)"));
            return None;
        }
        None => return None,
    };
    match DriftSpec::new(kind, l, x0) {
        Ok(d) => Some(d),
        Err(e) => {
            r.fail(S, "kind", format!("[drift] {e}"));
            None
        }
    }
}

const DEFAULT_ARGS: [f64; 8] = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0];

fn params(kind: Kind, r: &mut Reader) -> Option<Params> {
    Some(match kind {
        Kind::LevySample => {
            let triplet = either_triplet(r);
            let t = r.positive("sample", "t", 1.0);
            let steps = r.count("sample", "steps", 100);
            Params::LevySample { triplet: triplet?, t, steps }
        }
        Kind::CharCheck => {
            let triplet = either_triplet(r);
            let t = r.positive("check", "t", 1.0);
            let args = match &triplet {
                Some(Triplet::Two(_)) => {
                    let default = DEFAULT_ARGS.iter().map(|&a| [a, 0.5 * a]).collect();
                    r.list_or("check", "args", default)
                }
                _ => {
                    let a: Vec<f64> = r.list_or("check", "args", DEFAULT_ARGS.to_vec());
                    a.into_iter().map(|x| [x, 0.0]).collect()
                }
            };
            let n_paths = n_paths(r, 100_000);
            Params::CharCheck {
                triplet: triplet?,
                t,
                args,
                n_paths,
            }
        }
        Kind::McSemigroup => {
            let triplet = triplet_1d(r);
            let grid = grid(r);
            let state = state(r);
            let t = r.positive("semigroup", "t", 1.0);
            let observables = r.list_or(
                "semigroup",
                "observables",
                vec![ObservableSpec::Cos, ObservableSpec::Gauss, ObservableSpec::X2],
            );
            let n_paths = n_paths(r, 100_000);
            Params::McSemigroup {
                triplet: triplet?,
                grid: grid?,
                state,
                t,
                observables,
                n_paths,
            }
        }
        Kind::GeneratorCheck => {
            let triplet = triplet_1d(r);
            let grid = grid(r);
            let t = r.positive("generator", "t", 0.01);
            let points = r.list_or("generator", "points", vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
            let function = r.or("generator", "function", TestFunction::Gauss);
            let n_paths = n_paths(r, 100_000);
            Params::GeneratorCheck {
                triplet: triplet?,
                grid: grid?,
                t,
                points,
                function,
                n_paths,
            }
        }
        Kind::CpSuite => Params::CpSuite {
            count: r.count("cp", "count", 20),
            max_dim: r.count("cp", "max_dim", 4),
            max_jumps: r.count("cp", "max_jumps", 3),
            t: r.positive("cp", "t", 1.0),
        },
        Kind::Dyson => Params::Dyson {
            gamma: r.positive("dyson", "gamma", 1.0),
            omega: r.or("dyson", "omega", 1.0),
            t: r.positive("dyson", "t", 1.0),
            terms: r.count("dyson", "terms", 12),
            tolerance: r.positive("dyson", "tolerance", 1e-6),
        },
        Kind::GaugeSuite => Params::GaugeSuite {
            count: r.count("gauge", "count", 20),
            max_dim: r.count("gauge", "max_dim", 4),
            max_jumps: r.count("gauge", "max_jumps", 3),
        },
        Kind::GalileiCompare => {
            let triplet = triplet_2d(r);
            let grid = grid(r);
            let state = state(r);
            let t = r.positive("galilei", "t", 1.0);
            let n_steps = r.count("galilei", "n_steps", 64);
            let labels: Vec<[f64; 2]> = r.list_or("galilei", "labels", vec![[0.5, 0.3]]);
            let n_paths = n_paths(r, 10_000);
            let (triplet, free) = triplet?;
            Params::GalileiCompare {
                triplet,
                free,
                grid: grid?,
                state,
                t,
                n_steps,
                labels: labels.into_iter().map(|[x, v]| WeylLabel::new(x, v)).collect(),
                n_paths,
            }
        }
        Kind::CovarianceCheck => {
            let triplet = triplet_2d(r);
            let grid = grid(r);
            let state = state(r);
            let shifts = r.list_or("covariance", "shifts", vec![[0.7, 0.4, 0.5]]);
            let n_steps = r.count("covariance", "n_steps", 16);
            let n_paths = n_paths(r, 2_000);
            let (triplet, free) = triplet?;
            Params::CovarianceCheck {
                triplet,
                free,
                grid: grid?,
                state,
                shifts,
                n_steps,
                n_paths,
            }
        }
        Kind::FellerClassify => {
            let drift = drift(r);
            let expect_l = r.get("feller", "expect_l");
            let expect_infinity = r.get("feller", "expect_infinity");
            Params::FellerClassify {
                drift: drift?,
                expect_l,
                expect_infinity,
            }
        }
        Kind::KilledDiffusion => {
            let drift = drift(r);
            const S: &str = "killed";
            let x_start = r.or(S, "x_start", drift.as_ref().map_or(1.0, |d| d.x0));
            let t = r.positive(S, "t", 1.0);
            let dt = r.positive(S, "dt", 1e-3);
            let curve_points = r.count(S, "curve_points", 20);
            let rule = r.or(S, "rule", BoundaryRule::Absorbing);
            let bridge = r.or(S, "bridge", true);
            let compare_reflecting = r.or(S, "compare_reflecting", false);
            let expect_survival = r.get(S, "expect_survival");
            let tolerance = r.positive(S, "tolerance", 0.01);
            let n_paths = n_paths(r, 100_000);
            if let Some(d) = &drift {
                if !(x_start > d.l) {
                    r.fail(S, "x_start", format!("`killed.x_start` = {x_start} must lie above l = {}", d.l));
                }
            }
            Params::KilledDiffusion {
                drift: drift?,
                x_start,
                t,
                dt,
                curve_points,
                rule,
                bridge,
                compare_reflecting,
                expect_survival,
                tolerance,
                n_paths,
            }
        }
    })
}

/// Parses and validates a run configuration, reporting every problem found.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let mut errors = Vec::new();
    let raw = tokenize(text, &mut errors);
    let mut r = Reader {
        raw: &raw,
        used: BTreeSet::new(),
        known_sections: BTreeSet::new(),
        errors,
    };
    let kind: Option<Kind> = r.required("", "kind");
    let seed: Option<u64> = r.required("", "seed");
    let out: Option<String> = r.get("", "out");
    let format = r.or("", "format", Format::Both);
    let threads: Option<usize> = r.get("", "threads");
    let params = kind.and_then(|k| params(k, &mut r));
    if kind.is_some() {
        r.unknown_keys();
    }
    let errors = r.errors;
    if !errors.is_empty() {
        return Err(ConfigErrors(errors));
    }
    let (Some(kind), Some(seed), Some(params)) = (kind, seed, params) else {
        return Err(ConfigErrors(vec![err(None, "configuration is incomplete")]));
    };
    let mut lines: Vec<String> = raw
        .sections
        .iter()
        .flat_map(|(s, keys)| keys.iter().map(move |(k, e)| format!("{} = {}", qualified(s, k), e.value)))
        .collect();
    lines.sort();
    Ok(RunConfig {
        kind,
        seed,
        out: out.map(PathBuf::from),
        format,
        threads,
        params,
        canonical: lines.join("\n") + "\n",
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn messages(text: &str) -> Vec<String> {
        parse_config(text).unwrap_err().0.iter().map(|e| e.to_string()).collect()
    }

    #[test]
    fn minimal_levy_sample() {
        let c = parse_config("kind = levy-sample\nseed = 7\n[triplet]\nbeta = 1\n").unwrap();
        assert_eq!(c.kind, Kind::LevySample);
        assert_eq!(c.seed, 7);
        assert_eq!(c.format, Format::Both);
        let Params::LevySample { triplet: Triplet::One(t), t: horizon, steps } = c.params else {
            panic!("wrong params");
        };
        assert_eq!(t.beta, 1.0);
        assert_eq!(t.alpha, 0.0);
        assert_eq!(t.h, 1.0);
        assert_eq!((horizon, steps), (1.0, 100));
    }

    #[test]
    fn missing_seed_is_named() {
        let m = messages("kind = char-check\n[triplet]\nalpha = 1\n");
        assert_eq!(m, vec!["missing required key `seed`".to_string()]);
    }

    #[test]
    fn negative_alpha_cites_invariant() {
        let m = messages("kind = char-check\nseed = 1\n[triplet]\nalpha = -1\n");
        assert_eq!(m.len(), 1);
        assert!(m[0].contains("alpha >= 0"), "{m:?}");
        assert!(m[0].starts_with("line 4"), "{m:?}");
    }

    #[test]
    fn all_errors_reported() {
        let text = "kind = char-check\n[triplet]\nalpha = x\nbogus = 1\n[check]\nt = -1\n[nonsense]\na = 1\nthis is not a pair\n";
        let m = messages(text);
        assert!(m.iter().any(|e| e.contains("missing required key `seed`")), "{m:?}");
        assert!(m.iter().any(|e| e.contains("`triplet.alpha` expects a number")), "{m:?}");
        assert!(m.iter().any(|e| e.contains("unknown key `triplet.bogus`")), "{m:?}");
        assert!(m.iter().any(|e| e.contains("`check.t` must be positive")), "{m:?}");
        assert!(m.iter().any(|e| e.contains("unknown section [nonsense]")), "{m:?}");
        assert!(m.iter().any(|e| e.contains("expected `key = value`")), "{m:?}");
    }

    #[test]
    fn kind_and_lists() {
        assert!(messages("kind = nope\nseed = 1\n")[0].contains("unknown experiment kind"));
        let c = parse_config("kind = galilei-compare\nseed = 3\n[triplet2d]\nalpha_qq = 0.2\natoms = 0.5:0.2:1, -0.5:-0.2:1\n[galilei]\nlabels = 0.4:0.3, 1:0\n").unwrap();
        let Params::GalileiCompare { triplet, labels, free, .. } = c.params else {
            panic!("wrong params");
        };
        assert!(free);
        assert_eq!(triplet.jumps.atoms.len(), 2);
        assert_eq!(labels, vec![WeylLabel::new(0.4, 0.3), WeylLabel::new(1.0, 0.0)]);
    }

    #[test]
    fn duplicate_keys_and_comments() {
        let m = messages("kind = dyson # trailing\nseed = 1\nseed = 2\n");
        assert_eq!(m, vec!["line 3: duplicate key `seed`".to_string()]);
        let c = parse_config("# header\nkind = dyson\nseed = 1\n\n[dyson]\nterms = 8\n").unwrap();
        assert!(matches!(c.params, Params::Dyson { terms: 8, .. }));
    }

    #[test]
    fn seed_override_updates_canonical_text() {
        let a = parse_config("kind = dyson\nseed = 1\n").unwrap().with_seed(5);
        let b = parse_config("seed = 5\nkind = dyson\n").unwrap();
        assert_eq!(a.canonical, b.canonical);
        assert_eq!(a.seed, 5);
    }

    #[test]
    fn drift_sections() {
        let c = parse_config("kind = feller-classify\nseed = 1\n[drift]\nkind = zero\n[feller]\nexpect_l = absorbing\n").unwrap();
        assert!(matches!(
            c.params,
            Params::FellerClassify {
                expect_l: Some(EndVerdict::Absorbing),
                ..
            }
        ));
        let m = messages("kind = killed-diffusion\nseed = 1\n[drift]\nkind = constant\n");
        assert!(m.iter().any(|e| e.contains("missing required key `drift.c`")), "{m:?}");
    }
}
