//! Plain-text run configuration.
//!
//! A configuration is a list of `[section]` headers followed by
//! `key = value` lines. `#` starts a comment. Unknown sections and keys are
//! rejected, and every error names the offending line.
//!
//! ```text
//! [model]
//! kind = lattice        # or `continuum`
//! lambda = 2            # transport rate
//! kappa = 1             # passive rate
//! gamma = 4             # flip rate
//! dimension = 1         # lattice only, default 1
//! field = 0             # continuum only, default 0
//!
//! [kernel]              # lattice only: passive jumps z_k with probability p_k
//! z1 = 1
//! p1 = 0.5
//! z2 = -1
//! p2 = 0.5
//!
//! [velocities]          # lattice only
//! v1 = 1, 0             # velocity vectors, comma-separated integers
//! v2 = -1, 0
//! r1 = 0, 1             # optional row of flip rates out of v1
//! r2 = 1, 0
//!
//! [grids]               # `start:end:points` or a comma list
//! alpha = -3:3:41
//! x = -4:4:33
//! q = 0, 0.5, 1.5707963267948966
//! z = 0.5, 1+2i         # complex values need Re z > 0
//! epsilon = 0.2, 0.1, 0.05, 0.025
//! gamma = 1, 10, 100, 1000
//!
//! [simulation]
//! horizon = 100
//! replicas = 100000
//! seed = 1
//! initial = uniform     # `stationary` or a velocity index
//! endpoints = false     # also write endpoints.csv
//! scgf_alpha = -0.5, 0.5
//!
//! [verify]
//! criteria = 1, 2, 3    # default: all ten
//! feynman_kac_replicas = 100000
//!
//! [tolerances]
//! sigma2 = 1e-6
//!
//! [output]
//! dir = out
//! ```
//!
//! Without `[kernel]` and `[velocities]` a one-dimensional lattice model is
//! the nearest-neighbour two-velocity walk whose passive part
//! `kappa (f(x+1) + f(x-1) - 2 f(x))` has total rate `2 kappa`. With either
//! section, `kappa` is the total rate of the kernel, which defaults to the
//! nearest-neighbour kernel in `dimension` dimensions. Velocities default to
//! `{+1, -1}` in one dimension, and missing flip rates default to
//! `1 / (n - 1)` towards every other velocity.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use tumble_core::linalg::Matrix;
use tumble_core::simulator::InitialVelocity;
use tumble_core::{
    build_1d_two_state, Complex, ContinuumModel, JumpKernel, LatticeModel, Model, VelocityChain,
};

use crate::verify::{Budgets, Tolerances};

/// Parse or validation error, anchored to a line where possible.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.path {
            write!(f, "{}:", p.display())?;
        } else {
            f.write_str("config:")?;
        }
        if let Some(l) = self.line {
            write!(f, "{l}:")?;
        }
        write!(f, " {}", self.message)
    }
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            path: None,
            line: Some(line),
            message: message.into(),
        }
    }

    fn general(message: impl Into<String>) -> Self {
        ConfigError {
            path: None,
            line: None,
            message: message.into(),
        }
    }

    fn in_file(mut self, path: &Path) -> Self {
        self.path = Some(path.to_path_buf());
        self
    }
}

type Parsed<T> = Result<T, ConfigError>;

/// Evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    /// `points` equally spaced values from `start` to `end` inclusive.
    Range { start: f64, end: f64, points: usize },
    List(Vec<f64>),
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Grid::List(v) => v.clone(),
            Grid::Range { start, end, points } => {
                if *points == 1 {
                    return vec![*start];
                }
                let step = (end - start) / (*points - 1) as f64;
                (0..*points)
                    .map(|k| if k + 1 == *points { *end } else { start + step * k as f64 })
                    .collect()
            }
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grid::Range { start, end, points } => {
                write!(f, "{}:{}:{points}", num(*start), num(*end))
            }
            Grid::List(v) => f.write_str(&join(v.iter().map(|x| num(*x)))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    pub lambda: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub dimension: usize,
    /// Empty for the default kernel.
    pub kernel: Vec<(Vec<i64>, f64)>,
    /// Empty for the default velocities.
    pub velocities: Vec<Vec<i64>>,
    /// Empty for the default flip rates.
    pub flip_rates: Vec<Vec<f64>>,
}

impl LatticeSpec {
    fn is_default_walk(&self) -> bool {
        self.dimension == 1 && self.kernel.is_empty() && self.velocities.is_empty()
    }

    pub fn build(&self) -> tumble_core::Result<LatticeModel> {
        if self.is_default_walk() {
            return build_1d_two_state(self.lambda, self.kappa, self.gamma);
        }
        let d = self.dimension;
        let kernel = if self.kernel.is_empty() {
            JumpKernel::nearest_neighbor(d)
        } else {
            JumpKernel::new(d, self.kernel.clone())?
        };
        let velocities = if self.velocities.is_empty() {
            if d != 1 {
                return Err(tumble_core::Error::Parameter {
                    name: "velocities",
                    reason: "a velocity set is required when dimension > 1".into(),
                });
            }
            vec![vec![1], vec![-1]]
        } else {
            self.velocities.clone()
        };
        let n = velocities.len();
        let rates = if self.flip_rates.is_empty() {
            let r = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
            Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { r })
        } else {
            if self.flip_rates.len() != n || self.flip_rates.iter().any(|r| r.len() != n) {
                return Err(tumble_core::Error::Parameter {
                    name: "flip_rates",
                    reason: format!("need {n} rows of {n} rates"),
                });
            }
            Matrix::from_rows(&self.flip_rates)
        };
        let chain = VelocityChain::new(d, velocities, rates)?;
        LatticeModel::new(self.lambda, self.kappa, self.gamma, kernel, chain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuumSpec {
    pub lambda: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub field: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Lattice(LatticeSpec),
    Continuum(ContinuumSpec),
}

impl ModelSpec {
    pub fn build(&self) -> tumble_core::Result<Model> {
        match self {
            ModelSpec::Lattice(s) => s.build().map(Model::from),
            ModelSpec::Continuum(s) => {
                ContinuumModel::new(s.lambda, s.kappa, s.gamma, s.field).map(Model::from)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grids {
    pub alpha: Option<Grid>,
    pub x: Option<Grid>,
    pub q: Option<Grid>,
    pub z: Option<Vec<Complex>>,
    pub epsilon: Option<Grid>,
    pub gamma: Option<Grid>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationSpec {
    pub horizon: Option<f64>,
    pub replicas: Option<usize>,
    pub seed: Option<u64>,
    pub initial: InitialVelocity,
    pub endpoints: bool,
    pub scgf_alpha: Option<Grid>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifySpec {
    /// Criteria to run, `None` for all.
    pub criteria: Option<Vec<u8>>,
    /// Budget overrides by key.
    pub budgets: BTreeMap<String, f64>,
    /// Tolerance overrides by key.
    pub tolerances: BTreeMap<String, f64>,
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub grids: Grids,
    pub simulation: SimulationSpec,
    pub verify: VerifySpec,
    pub output: Option<PathBuf>,
}

struct Entry {
    key: String,
    value: String,
    line: usize,
}

struct Section {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

impl Section {
    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    fn line_of(&self, key: &str) -> usize {
        self.get(key).map_or(self.line, |e| e.line)
    }
}

const SECTIONS: [&str; 8] = [
    "model",
    "kernel",
    "velocities",
    "grids",
    "simulation",
    "verify",
    "tolerances",
    "output",
];

fn tokenize(text: &str) -> Parsed<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::at(line, "unterminated section header"))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::at(line, format!("unknown section [{name}]")));
            }
            if sections.iter().any(|s| s.name == name) {
                return Err(ConfigError::at(line, format!("section [{name}] appears twice")));
            }
            sections.push(Section {
                name: name.to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line, format!("expected `key = value`, found `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::at(line, "empty key"));
        }
        let section = sections
            .last_mut()
            .ok_or_else(|| ConfigError::at(line, format!("key `{key}` outside any section")))?;
        if section.get(key).is_some() {
            return Err(ConfigError::at(
                line,
                format!("key `{key}` repeated in [{}]", section.name),
            ));
        }
        section.entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }
    Ok(sections)
}

fn check_keys(section: &Section, allowed: impl Fn(&str) -> bool) -> Parsed<()> {
    match section.entries.iter().find(|e| !allowed(&e.key)) {
        Some(e) => Err(ConfigError::at(
            e.line,
            format!("unknown key `{}` in [{}]", e.key, section.name),
        )),
        None => Ok(()),
    }
}

fn parse_f64(e: &Entry) -> Parsed<f64> {
    let x: f64 = e
        .value
        .parse()
        .map_err(|_| ConfigError::at(e.line, format!("`{}`: not a number: `{}`", e.key, e.value)))?;
    if !x.is_finite() {
        return Err(ConfigError::at(e.line, format!("`{}` must be finite", e.key)));
    }
    Ok(x)
}

fn parse_count(e: &Entry) -> Parsed<u64> {
    let x = parse_f64(e)?;
    if x < 0.0 || x.fract() != 0.0 || x > 9.007_199_254_740_992e15 {
        return Err(ConfigError::at(
            e.line,
            format!("`{}` must be a non-negative integer, found `{}`", e.key, e.value),
        ));
    }
    Ok(x as u64)
}

fn parse_bool(e: &Entry) -> Parsed<bool> {
    match e.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        v => Err(ConfigError::at(e.line, format!("`{}`: expected true or false, found `{v}`", e.key))),
    }
}

fn split_list(e: &Entry) -> Parsed<Vec<&str>> {
    let items: Vec<&str> = e.value.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::at(e.line, format!("`{}`: empty list item", e.key)));
    }
    Ok(items)
}

fn parse_f64_list(e: &Entry) -> Parsed<Vec<f64>> {
    split_list(e)?
        .into_iter()
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| ConfigError::at(e.line, format!("`{}`: not a finite number: `{s}`", e.key)))
        })
        .collect()
}

fn parse_int_list(e: &Entry) -> Parsed<Vec<i64>> {
    split_list(e)?
        .into_iter()
        .map(|s| {
            s.parse::<i64>()
                .map_err(|_| ConfigError::at(e.line, format!("`{}`: not an integer: `{s}`", e.key)))
        })
        .collect()
}

fn parse_grid(e: &Entry) -> Parsed<Grid> {
    let parts: Vec<&str> = e.value.split(':').map(str::trim).collect();
    match parts.len() {
        1 => {
            let v = parse_f64_list(e)?;
            Ok(Grid::List(v))
        }
        3 => {
            let bad = || ConfigError::at(e.line, format!("`{}`: expected `start:end:points`", e.key));
            let start: f64 = parts[0].parse().map_err(|_| bad())?;
            let end: f64 = parts[1].parse().map_err(|_| bad())?;
            let points: usize = parts[2].parse().map_err(|_| bad())?;
            if !start.is_finite() || !end.is_finite() || points == 0 || (points > 1 && !(end > start)) {
                return Err(ConfigError::at(
                    e.line,
                    format!("`{}`: need start < end and at least one point", e.key),
                ));
            }
            Ok(Grid::Range { start, end, points })
        }
        _ => Err(ConfigError::at(e.line, format!("`{}`: expected `start:end:points` or a list", e.key))),
    }
}

fn indexed(key: &str, prefix: char) -> Option<usize> {
    let rest = key.strip_prefix(prefix)?;
    if rest.starts_with('0') {
        return None;
    }
    rest.parse().ok()
}

/// Collects `prefix1, prefix2, ...` entries, which must be numbered
/// consecutively from 1.
fn numbered(section: &Section, prefix: char) -> Parsed<Vec<&Entry>> {
    let mut found: Vec<(usize, &Entry)> = section
        .entries
        .iter()
        .filter_map(|e| indexed(&e.key, prefix).map(|k| (k, e)))
        .collect();
    found.sort_by_key(|p| p.0);
    for (i, (k, e)) in found.iter().enumerate() {
        if *k != i + 1 {
            return Err(ConfigError::at(
                e.line,
                format!("[{}]: `{prefix}{}` missing", section.name, i + 1),
            ));
        }
    }
    Ok(found.into_iter().map(|p| p.1).collect())
}

fn require<'a>(section: &'a Section, key: &str) -> Parsed<&'a Entry> {
    section
        .get(key)
        .ok_or_else(|| ConfigError::at(section.line, format!("[{}] needs `{key}`", section.name)))
}

fn parse_model(
    model: &Section,
    kernel: Option<&Section>,
    velocities: Option<&Section>,
) -> Parsed<ModelSpec> {
    let kind = require(model, "kind")?;
    let rate = |key: &str| -> Parsed<f64> { parse_f64(require(model, key)?) };
    match kind.value.as_str() {
        "continuum" => {
            check_keys(model, |k| matches!(k, "kind" | "lambda" | "kappa" | "gamma" | "field"))?;
            if let Some(s) = kernel.or(velocities) {
                return Err(ConfigError::at(s.line, format!("[{}] applies to lattice models only", s.name)));
            }
            Ok(ModelSpec::Continuum(ContinuumSpec {
                lambda: rate("lambda")?,
                kappa: rate("kappa")?,
                gamma: rate("gamma")?,
                field: model.get("field").map(parse_f64).transpose()?.unwrap_or(0.0),
            }))
        }
        "lattice" => {
            check_keys(model, |k| matches!(k, "kind" | "lambda" | "kappa" | "gamma" | "dimension"))?;
            let dimension = match model.get("dimension") {
                Some(e) => match parse_count(e)? {
                    0 => return Err(ConfigError::at(e.line, "`dimension` must be at least 1")),
                    d => d as usize,
                },
                None => 1,
            };
            let mut spec = LatticeSpec {
                lambda: rate("lambda")?,
                kappa: rate("kappa")?,
                gamma: rate("gamma")?,
                dimension,
                kernel: Vec::new(),
                velocities: Vec::new(),
                flip_rates: Vec::new(),
            };
            if let Some(s) = kernel {
                check_keys(s, |k| indexed(k, 'z').is_some() || indexed(k, 'p').is_some())?;
                let zs = numbered(s, 'z')?;
                let ps = numbered(s, 'p')?;
                if zs.len() != ps.len() {
                    return Err(ConfigError::at(s.line, "[kernel] needs one `pK` for every `zK`"));
                }
                if zs.is_empty() {
                    return Err(ConfigError::at(s.line, "[kernel] is empty"));
                }
                for (z, p) in zs.iter().zip(&ps) {
                    let jump = parse_int_list(z)?;
                    if jump.len() != dimension {
                        return Err(ConfigError::at(z.line, format!("jump has {} components, expected {dimension}", jump.len())));
                    }
                    spec.kernel.push((jump, parse_f64(p)?));
                }
            }
            if let Some(s) = velocities {
                check_keys(s, |k| indexed(k, 'v').is_some() || indexed(k, 'r').is_some())?;
                let vs = numbered(s, 'v')?;
                let rs = numbered(s, 'r')?;
                if vs.is_empty() {
                    return Err(ConfigError::at(s.line, "[velocities] is empty"));
                }
                if !rs.is_empty() && rs.len() != vs.len() {
                    return Err(ConfigError::at(s.line, "[velocities] needs one `rK` for every `vK`, or none"));
                }
                for v in &vs {
                    let vel = parse_int_list(v)?;
                    if vel.len() != dimension {
                        return Err(ConfigError::at(v.line, format!("velocity has {} components, expected {dimension}", vel.len())));
                    }
                    spec.velocities.push(vel);
                }
                for r in &rs {
                    let row = parse_f64_list(r)?;
                    if row.len() != vs.len() {
                        return Err(ConfigError::at(r.line, format!("flip-rate row has {} entries, expected {}", row.len(), vs.len())));
                    }
                    spec.flip_rates.push(row);
                }
            }
            Ok(ModelSpec::Lattice(spec))
        }
        other => Err(ConfigError::at(
            kind.line,
            format!("`kind` must be `lattice` or `continuum`, found `{other}`"),
        )),
    }
}

/// Line of the key a core validation error refers to.
fn model_error_line(
    err: &tumble_core::Error,
    model: &Section,
    kernel: Option<&Section>,
    velocities: Option<&Section>,
) -> usize {
    use tumble_core::Error as E;
    match err {
        E::Parameter { name, .. } => match *name {
            "lambda" | "kappa" | "gamma" | "field" => model.line_of(name),
            "kernel" => kernel.map_or(model.line, |s| s.line),
            _ => velocities.map_or(model.line, |s| s.line),
        },
        E::Reducible => velocities.map_or(model.line_of("gamma"), |s| s.line),
        E::DimensionMismatch { .. } => model.line_of("dimension"),
        _ => model.line,
    }
}

fn parse_grids(s: &Section) -> Parsed<Grids> {
    check_keys(s, |k| matches!(k, "alpha" | "x" | "q" | "z" | "epsilon" | "gamma"))?;
    let grid = |k: &str| s.get(k).map(parse_grid).transpose();
    let z = match s.get("z") {
        None => None,
        Some(e) => Some(
            split_list(e)?
                .into_iter()
                .map(|v| {
                    let z: Complex = v
                        .parse()
                        .map_err(|_| ConfigError::at(e.line, format!("`z`: not a complex number: `{v}`")))?;
                    if !(z.re > 0.0) || !z.re.is_finite() || !z.im.is_finite() {
                        return Err(ConfigError::at(e.line, format!("`z`: Re z must be positive, found `{v}`")));
                    }
                    Ok(z)
                })
                .collect::<Parsed<Vec<_>>>()?,
        ),
    };
    let grids = Grids {
        alpha: grid("alpha")?,
        x: grid("x")?,
        q: grid("q")?,
        z,
        epsilon: grid("epsilon")?,
        gamma: grid("gamma")?,
    };
    for key in ["epsilon", "gamma"] {
        let g = if key == "epsilon" { &grids.epsilon } else { &grids.gamma };
        if let Some(g) = g {
            if g.values().iter().any(|&v| !(v > 0.0)) {
                return Err(ConfigError::at(s.line_of(key), format!("`{key}` values must be positive")));
            }
        }
    }
    Ok(grids)
}

fn parse_simulation(s: &Section) -> Parsed<SimulationSpec> {
    check_keys(s, |k| {
        matches!(k, "horizon" | "replicas" | "seed" | "initial" | "endpoints" | "scgf_alpha")
    })?;
    let horizon = s.get("horizon").map(parse_f64).transpose()?;
    if let Some(t) = horizon {
        if !(t > 0.0) {
            return Err(ConfigError::at(s.line_of("horizon"), "`horizon` must be positive"));
        }
    }
    let replicas = s.get("replicas").map(parse_count).transpose()?.map(|n| n as usize);
    if replicas == Some(0) {
        return Err(ConfigError::at(s.line_of("replicas"), "`replicas` must be positive"));
    }
    let seed = match s.get("seed") {
        Some(e) => Some(
            e.value
                .parse::<u64>()
                .map_err(|_| ConfigError::at(e.line, format!("`seed` must be an unsigned integer, found `{}`", e.value)))?,
        ),
        None => None,
    };
    let initial = match s.get("initial") {
        None => InitialVelocity::Uniform,
        Some(e) => match e.value.as_str() {
            "uniform" => InitialVelocity::Uniform,
            "stationary" => InitialVelocity::Stationary,
            v => InitialVelocity::Index(v.parse().map_err(|_| {
                ConfigError::at(e.line, format!("`initial` must be uniform, stationary or an index, found `{v}`"))
            })?),
        },
    };
    Ok(SimulationSpec {
        horizon,
        replicas,
        seed,
        initial,
        endpoints: s.get("endpoints").map(parse_bool).transpose()?.unwrap_or(false),
        scgf_alpha: s.get("scgf_alpha").map(parse_grid).transpose()?,
    })
}

fn parse_overrides(s: &Section, known: &[&str]) -> Parsed<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for e in &s.entries {
        if !known.contains(&e.key.as_str()) {
            return Err(ConfigError::at(e.line, format!("unknown key `{}` in [{}]", e.key, s.name)));
        }
        let v = parse_f64(e)?;
        if v < 0.0 {
            return Err(ConfigError::at(e.line, format!("`{}` must not be negative", e.key)));
        }
        out.insert(e.key.clone(), v);
    }
    Ok(out)
}

fn parse_verify(verify: Option<&Section>, tolerances: Option<&Section>) -> Parsed<VerifySpec> {
    let mut spec = VerifySpec::default();
    if let Some(s) = verify {
        let mut budgets = Section {
            name: s.name.clone(),
            line: s.line,
            entries: Vec::new(),
        };
        for e in &s.entries {
            if e.key == "criteria" {
                let ids = parse_int_list(e)?;
                if let Some(bad) = ids.iter().find(|&&c| !(1..=10).contains(&c)) {
                    return Err(ConfigError::at(e.line, format!("no criterion {bad}; criteria are 1 to 10")));
                }
                let mut ids: Vec<u8> = ids.into_iter().map(|c| c as u8).collect();
                ids.sort_unstable();
                ids.dedup();
                spec.criteria = Some(ids);
            } else {
                budgets.entries.push(Entry {
                    key: e.key.clone(),
                    value: e.value.clone(),
                    line: e.line,
                });
            }
        }
        spec.budgets = parse_overrides(&budgets, Budgets::KEYS)?;
        for e in &budgets.entries {
            if spec.budgets[&e.key] == 0.0 {
                return Err(ConfigError::at(e.line, format!("`{}` must be positive", e.key)));
            }
        }
    }
    if let Some(s) = tolerances {
        spec.tolerances = parse_overrides(s, Tolerances::KEYS)?;
    }
    Ok(spec)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let sections = tokenize(text)?;
        let find = |name: &str| sections.iter().find(|s| s.name == name);
        let model_section = find("model").ok_or_else(|| ConfigError::general("missing [model] section"))?;
        let (kernel, velocities) = (find("kernel"), find("velocities"));
        let model = parse_model(model_section, kernel, velocities)?;
        if let Err(e) = model.build() {
            let line = model_error_line(&e, model_section, kernel, velocities);
            return Err(ConfigError::at(line, format!("invalid model: {e}")));
        }
        let grids = find("grids").map(parse_grids).transpose()?.unwrap_or_default();
        let simulation = find("simulation").map(parse_simulation).transpose()?.unwrap_or_default();
        if let (InitialVelocity::Index(k), Some(s)) = (&simulation.initial, find("simulation")) {
            let n = match &model {
                ModelSpec::Lattice(l) if !l.velocities.is_empty() => l.velocities.len(),
                _ => 2,
            };
            if *k >= n {
                return Err(ConfigError::at(s.line_of("initial"), format!("velocity index {k} out of range 0..{n}")));
            }
        }
        let verify = parse_verify(find("verify"), find("tolerances"))?;
        let output = match find("output") {
            Some(s) => {
                check_keys(s, |k| k == "dir")?;
                s.get("dir").map(|e| PathBuf::from(&e.value))
            }
            None => None,
        };
        Ok(RunConfig {
            model,
            grids,
            simulation,
            verify,
            output,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::general(format!("cannot read: {e}")).in_file(path))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    /// The model; cannot fail on a parsed configuration.
    pub fn build_model(&self) -> tumble_core::Result<Model> {
        self.model.build()
    }

    pub fn seed(&self) -> u64 {
        self.simulation.seed.unwrap_or(1)
    }

    /// Text form that parses back to an equal configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let kv = |out: &mut String, k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        out.push_str("[model]\n");
        match &self.model {
            ModelSpec::Continuum(c) => {
                kv(&mut out, "kind", "continuum".into());
                kv(&mut out, "lambda", num(c.lambda));
                kv(&mut out, "kappa", num(c.kappa));
                kv(&mut out, "gamma", num(c.gamma));
                kv(&mut out, "field", num(c.field));
            }
            ModelSpec::Lattice(l) => {
                kv(&mut out, "kind", "lattice".into());
                kv(&mut out, "lambda", num(l.lambda));
                kv(&mut out, "kappa", num(l.kappa));
                kv(&mut out, "gamma", num(l.gamma));
                kv(&mut out, "dimension", l.dimension.to_string());
                if !l.kernel.is_empty() {
                    out.push_str("\n[kernel]\n");
                    for (k, (z, p)) in l.kernel.iter().enumerate() {
                        kv(&mut out, &format!("z{}", k + 1), join(z.iter()));
                        kv(&mut out, &format!("p{}", k + 1), num(*p));
                    }
                }
                if !l.velocities.is_empty() {
                    out.push_str("\n[velocities]\n");
                    for (k, v) in l.velocities.iter().enumerate() {
                        kv(&mut out, &format!("v{}", k + 1), join(v.iter()));
                    }
                    for (k, r) in l.flip_rates.iter().enumerate() {
                        kv(&mut out, &format!("r{}", k + 1), join(r.iter().map(|x| num(*x))));
                    }
                }
            }
        }
        let g = &self.grids;
        if *g != Grids::default() {
            out.push_str("\n[grids]\n");
            for (k, grid) in [("alpha", &g.alpha), ("x", &g.x), ("q", &g.q), ("epsilon", &g.epsilon), ("gamma", &g.gamma)] {
                if let Some(grid) = grid {
                    kv(&mut out, k, grid.to_string());
                }
            }
            if let Some(z) = &g.z {
                kv(&mut out, "z", join(z.iter().map(|c| format!("{}{}i", num(c.re), NumSigned(c.im)))));
            }
        }
        let s = &self.simulation;
        if *s != SimulationSpec::default() {
            out.push_str("\n[simulation]\n");
            if let Some(t) = s.horizon {
                kv(&mut out, "horizon", num(t));
            }
            if let Some(n) = s.replicas {
                kv(&mut out, "replicas", n.to_string());
            }
            if let Some(seed) = s.seed {
                kv(&mut out, "seed", seed.to_string());
            }
            let initial = match &s.initial {
                InitialVelocity::Uniform => "uniform".to_string(),
                InitialVelocity::Stationary => "stationary".to_string(),
                InitialVelocity::Index(k) => k.to_string(),
            };
            kv(&mut out, "initial", initial);
            kv(&mut out, "endpoints", s.endpoints.to_string());
            if let Some(a) = &s.scgf_alpha {
                kv(&mut out, "scgf_alpha", a.to_string());
            }
        }
        let v = &self.verify;
        if v.criteria.is_some() || !v.budgets.is_empty() {
            out.push_str("\n[verify]\n");
            if let Some(c) = &v.criteria {
                kv(&mut out, "criteria", join(c.iter()));
            }
            for (k, x) in &v.budgets {
                kv(&mut out, k, num(*x));
            }
        }
        if !v.tolerances.is_empty() {
            out.push_str("\n[tolerances]\n");
            for (k, x) in &v.tolerances {
                kv(&mut out, k, num(*x));
            }
        }
        if let Some(dir) = &self.output {
            out.push_str("\n[output]\n");
            kv(&mut out, "dir", dir.display().to_string());
        }
        out
    }
}

/// Shortest round-tripping decimal, in exponent form for extreme magnitudes.
fn num(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-4 || x.abs() >= 1e16) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

struct NumSigned(f64);

impl fmt::Display for NumSigned {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = num(self.0);
        if s.starts_with('-') {
            f.write_str(&s)
        } else {
            write!(f, "+{s}")
        }
    }
}

fn join<T: fmt::Display>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}
