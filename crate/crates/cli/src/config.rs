//! INI-style configuration: flat key-value sections, hand-parsed so the
//! binary carries no config-format dependency. Unknown keys are errors, with
//! line numbers in every diagnostic.

use fcascade_core::beam::BeamParams;
use fcascade_core::controller::ControlMode;
use fcascade_core::graph::QuadConfig;
use fcascade_core::sim::{Scheme, SimConfig};
use fcascade_core::wlinalg::Matrix;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug)]
pub struct ConfigError {
    pub message: String,
    pub line: Option<usize>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config error (line {line}): {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(message: impl Into<String>, line: Option<usize>) -> ConfigError {
    ConfigError { message: message.into(), line }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelKind {
    Beam,
    Scalar,
    CustomLinear,
}

/// Matrices of a custom linear cascade, parsed from row-major literals like
/// `"-1 0; 0 -2"`.
#[derive(Debug, Clone)]
pub struct LinearSpec {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub s: Matrix,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitKind {
    /// Physical plant at rest at `theta0` (beam) / zero state (others).
    Rest,
    /// Seeded smooth random state scaled to the target energy.
    Random,
    /// Explicit state coordinates from `init.x0`.
    Values,
}

#[derive(Debug, Clone)]
pub struct InitSpec {
    pub kind: InitKind,
    pub v_target: f64,
    pub x0: Vec<f64>,
    pub z0: Vec<f64>,
    pub theta0: f64,
}

/// Fully resolved run configuration (config file plus CLI overrides).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelKind,
    pub beam: BeamParams,
    pub linear: Option<LinearSpec>,
    pub quad: QuadConfig,
    pub mode: ControlMode,
    pub sample_period: f64,
    pub y_ref: Option<Vec<f64>>,
    pub sim: SimConfig,
    pub init: InitSpec,
    pub seed: u64,
    /// Regulation scenarios exit nonzero when the final output error
    /// exceeds this.
    pub regulation_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Beam,
            beam: BeamParams::default(),
            linear: None,
            quad: QuadConfig {
                step: 5e-3,
                tail_tol: 1e-4,
                max_horizon: 120.0,
                decay_floor: 1e-5,
                smoothing_steps: 8,
            },
            mode: ControlMode::FullNonlinear,
            sample_period: 0.05,
            y_ref: None,
            sim: SimConfig { dt: 1e-3, t_final: 20.0, scheme: Scheme::ImexCn, record_every: 50 },
            init: InitSpec { kind: InitKind::Rest, v_target: 1.0, x0: Vec::new(), z0: vec![0.0], theta0: 0.0 },
            seed: 42,
            regulation_tol: 1e-3,
        }
    }
}

struct RawConfig {
    // (section, key) -> (value, line)
    entries: BTreeMap<(String, String), (String, usize)>,
    consumed: std::cell::RefCell<Vec<(String, String)>>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            // `#` starts a comment; `;` separates matrix rows and stays
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(err(format!("malformed section header `{raw_line}`"), Some(line_no)));
                }
                section = line[1..line.len() - 1].trim().to_lowercase();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(format!("expected `key = value`, got `{raw_line}`"), Some(line_no)));
            };
            let key = key.trim().to_lowercase();
            let value = value.trim().to_string();
            if entries.insert((section.clone(), key.clone()), (value, line_no)).is_some() {
                return Err(err(format!("duplicate key `{key}` in section `[{section}]`"), Some(line_no)));
            }
        }
        Ok(Self { entries, consumed: Default::default() })
    }

    fn get(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.consumed.borrow_mut().push((section.to_string(), key.to_string()));
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(|(v, l)| (v.as_str(), *l))
    }

    fn f64(&self, section: &str, key: &str, into: &mut f64) -> Result<(), ConfigError> {
        if let Some((v, line)) = self.get(section, key) {
            *into = v
                .parse()
                .map_err(|_| err(format!("`{section}.{key}`: expected a number, got `{v}`"), Some(line)))?;
        }
        Ok(())
    }

    fn usize(&self, section: &str, key: &str, into: &mut usize) -> Result<(), ConfigError> {
        if let Some((v, line)) = self.get(section, key) {
            *into = v
                .parse()
                .map_err(|_| err(format!("`{section}.{key}`: expected an integer, got `{v}`"), Some(line)))?;
        }
        Ok(())
    }

    fn u64(&self, section: &str, key: &str, into: &mut u64) -> Result<(), ConfigError> {
        if let Some((v, line)) = self.get(section, key) {
            *into = v
                .parse()
                .map_err(|_| err(format!("`{section}.{key}`: expected an integer, got `{v}`"), Some(line)))?;
        }
        Ok(())
    }

    fn unknown_keys(&self) -> Vec<(String, String, usize)> {
        let consumed = self.consumed.borrow();
        self.entries
            .iter()
            .filter(|((s, k), _)| !consumed.iter().any(|(cs, ck)| cs == s && ck == k))
            .map(|((s, k), (_, l))| (s.clone(), k.clone(), *l))
            .collect()
    }
}

fn parse_matrix(text: &str, line: usize, what: &str) -> Result<Matrix, ConfigError> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| err(format!("{what}: bad number `{tok}`"), Some(line)))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    if rows.is_empty() || rows[0].is_empty() {
        return Err(err(format!("{what}: empty matrix literal"), Some(line)));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(err(format!("{what}: ragged rows in matrix literal"), Some(line)));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_row_slice(rows.len(), cols, &flat))
}

fn parse_vector_list(text: &str, line: usize, what: &str) -> Result<Vec<f64>, ConfigError> {
    text.split([',', ' '])
        .filter(|t| !t.is_empty())
        .map(|tok| tok.parse::<f64>().map_err(|_| err(format!("{what}: bad number `{tok}`"), Some(line))))
        .collect()
}

/// Parse a config file. Every key is optional; defaults are the beam
/// regulation setup documented in `--help`.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw = RawConfig::parse(text)?;
    let mut cfg = RunConfig::default();

    if let Some((v, line)) = raw.get("model", "kind") {
        cfg.model = match v {
            "beam" => ModelKind::Beam,
            "scalar" => ModelKind::Scalar,
            "custom-linear" => ModelKind::CustomLinear,
            other => {
                return Err(err(
                    format!("`model.kind`: expected beam | scalar | custom-linear, got `{other}`"),
                    Some(line),
                ))
            }
        };
    }

    raw.usize("beam", "n", &mut cfg.beam.n)?;
    raw.f64("beam", "length", &mut cfg.beam.length)?;
    raw.f64("beam", "lambda", &mut cfg.beam.lambda)?;
    raw.f64("beam", "theta_ref", &mut cfg.beam.theta_ref)?;

    if cfg.model == ModelKind::CustomLinear {
        let matrix_field = |key: &str| -> Result<Matrix, ConfigError> {
            let Some((v, line)) = raw.get("linear", key) else {
                return Err(err(format!("custom-linear model requires `linear.{key}`"), None));
            };
            parse_matrix(v, line, &format!("linear.{key}"))
        };
        cfg.linear = Some(LinearSpec {
            a: matrix_field("a")?,
            b: matrix_field("b")?,
            c: matrix_field("c")?,
            s: matrix_field("s")?,
        });
    }

    raw.f64("graph", "step", &mut cfg.quad.step)?;
    raw.f64("graph", "tail_tol", &mut cfg.quad.tail_tol)?;
    raw.f64("graph", "max_horizon", &mut cfg.quad.max_horizon)?;
    raw.f64("graph", "decay_floor", &mut cfg.quad.decay_floor)?;
    raw.usize("graph", "smoothing_steps", &mut cfg.quad.smoothing_steps)?;

    if let Some((v, line)) = raw.get("controller", "mode") {
        cfg.mode = match v {
            "full" => ControlMode::FullNonlinear,
            "linear" => ControlMode::LinearM0,
            other => {
                return Err(err(format!("`controller.mode`: expected full | linear, got `{other}`"), Some(line)))
            }
        };
    }
    raw.f64("controller", "sample_period", &mut cfg.sample_period)?;
    if let Some((v, line)) = raw.get("controller", "y_ref") {
        cfg.y_ref = Some(parse_vector_list(v, line, "controller.y_ref")?);
    }

    raw.f64("sim", "dt", &mut cfg.sim.dt)?;
    raw.f64("sim", "t_final", &mut cfg.sim.t_final)?;
    raw.usize("sim", "record_every", &mut cfg.sim.record_every)?;
    if let Some((v, line)) = raw.get("sim", "scheme") {
        cfg.sim.scheme = match v {
            "imex-cn" => Scheme::ImexCn,
            "rk4" => Scheme::Rk4,
            other => return Err(err(format!("`sim.scheme`: expected imex-cn | rk4, got `{other}`"), Some(line))),
        };
    }

    if let Some((v, line)) = raw.get("init", "kind") {
        cfg.init.kind = match v {
            "rest" => InitKind::Rest,
            "random" => InitKind::Random,
            "values" => InitKind::Values,
            other => {
                return Err(err(
                    format!("`init.kind`: expected rest | random | values, got `{other}`"),
                    Some(line),
                ))
            }
        };
    }
    raw.f64("init", "v_target", &mut cfg.init.v_target)?;
    raw.f64("init", "theta0", &mut cfg.init.theta0)?;
    if let Some((v, line)) = raw.get("init", "x0") {
        cfg.init.x0 = parse_vector_list(v, line, "init.x0")?;
    }
    if let Some((v, line)) = raw.get("init", "z0") {
        cfg.init.z0 = parse_vector_list(v, line, "init.z0")?;
    }
    if cfg.init.kind == InitKind::Values && cfg.init.x0.is_empty() {
        return Err(err("`init.kind = values` requires `init.x0`", None));
    }

    raw.u64("run", "seed", &mut cfg.seed)?;
    raw.f64("run", "regulation_tol", &mut cfg.regulation_tol)?;

    if let Some((section, key, line)) = raw.unknown_keys().into_iter().next() {
        return Err(err(format!("unknown key `{key}` in section `[{section}]`"), Some(line)));
    }

    validate_config(&cfg)?;
    Ok(cfg)
}

fn validate_config(cfg: &RunConfig) -> Result<(), ConfigError> {
    let positive = [
        ("graph.step", cfg.quad.step),
        ("graph.tail_tol", cfg.quad.tail_tol),
        ("graph.max_horizon", cfg.quad.max_horizon),
        ("graph.decay_floor", cfg.quad.decay_floor),
        ("controller.sample_period", cfg.sample_period),
        ("sim.dt", cfg.sim.dt),
        ("sim.t_final", cfg.sim.t_final),
        ("run.regulation_tol", cfg.regulation_tol),
    ];
    for (name, value) in positive {
        if !(value > 0.0) {
            return Err(err(format!("`{name}` must be positive, got {value}"), None));
        }
    }
    if cfg.sim.record_every == 0 {
        return Err(err("`sim.record_every` must be at least 1", None));
    }
    if cfg.sim.dt > cfg.sample_period {
        return Err(err("`sim.dt` must not exceed `controller.sample_period`", None));
    }
    Ok(())
}
