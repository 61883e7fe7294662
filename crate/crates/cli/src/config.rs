//! Experiment configuration: a sectioned TOML file parsed strictly.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use elastobcm::boundary::basis::bump;
use elastobcm::forward::DEFAULT_CFL;
use elastobcm::material::{bounds_of, read_field_csv_path, MaterialBounds, MaterialModel};
use elastobcm::mesh::{build_grid, Grid};
use elastobcm::reconstruction::{Regularization, TraceMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: cannot read config: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("`{key}`{}: {message}", line_suffix(*.line))]
    Key { key: String, line: Option<usize>, message: String },
    #[error("override `{0}` is not of the form section.key=value")]
    Override(String),
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" (line {l})")).unwrap_or_default()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub grid: GridSection,
    pub material: MaterialSection,
    pub time: TimeSection,
    #[serde(default)]
    pub basis: BasisSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub regularization: RegularizationSection,
    #[serde(default)]
    pub forward: ForwardSection,
    #[serde(default)]
    pub carleman: CarlemanSection,
    #[serde(default)]
    pub stability: StabilitySection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub d: usize,
    pub n: usize,
    /// `[lo, hi]` per axis.
    pub extents: Vec<[f64; 2]>,
    pub x0: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Constant,
    /// Constant background with `rho · (1 + amplitude · gaussian)`.
    Gaussian,
    /// Constant background with `rho · (1 + amplitude · bump(r / width))`.
    Bump,
    Csv,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSection {
    pub preset: Preset,
    #[serde(default = "one")]
    pub rho: f64,
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    /// Defaults to the centre of the box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centre: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_csv: Option<PathBuf>,
    /// Declared bounds; field extrema when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub rho1: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub lambda0: f64,
    pub lambda1: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub horizon: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    pub atoms: usize,
    pub width: f64,
}

impl Default for BasisSection {
    fn default() -> Self {
        BasisSection { atoms: 6, width: 0.25 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    /// Lattice radius.
    pub gamma: f64,
    pub trace_mode: TraceMode,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection { gamma: 2.0 * PI, trace_mode: TraceMode::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Truncated,
    Tikhonov,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizationSection {
    pub method: Method,
    pub threshold: f64,
    pub alpha: f64,
}

impl Default for RegularizationSection {
    fn default() -> Self {
        RegularizationSection { method: Method::Truncated, threshold: 1e-6, alpha: 1e-6 }
    }
}

impl RegularizationSection {
    pub fn method(&self) -> Regularization {
        match self.method {
            Method::Truncated => Regularization::Truncated { threshold: self.threshold },
            Method::Tikhonov => Regularization::Tikhonov { alpha: self.alpha },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardSection {
    /// Sine modes per axis in the random initial data.
    pub modes: usize,
    /// Write every snapshot to `snapshots.bin`.
    pub snapshots: bool,
}

impl Default for ForwardSection {
    fn default() -> Self {
        ForwardSection { modes: 3, snapshots: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarlemanSection {
    pub tau: f64,
    pub c0: f64,
    pub c1: f64,
    pub rho2: f64,
    pub ensemble: usize,
    /// Time at which the decomposition is evaluated.
    pub t_eval: f64,
}

impl Default for CarlemanSection {
    fn default() -> Self {
        CarlemanSection { tau: 0.5, c0: 1.0, c1: 1.0, rho2: 1.0, ensemble: 8, t_eval: 0.7 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    /// Shape of δρ; only `bump` is offered.
    pub preset: Preset,
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centre: Option<Vec<f64>>,
    pub epsilons: Vec<f64>,
    pub alpha: f64,
    /// Frequencies of the Lipschitz table.
    pub xis: Vec<Vec<f64>>,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection {
            preset: Preset::Bump,
            radius: 0.3,
            centre: None,
            epsilons: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7],
            alpha: 1e-6,
            xis: vec![vec![0.0, 0.0], vec![2.0 * PI, 0.0], vec![PI, PI]],
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_amplitude() -> f64 {
    0.2
}
fn default_width() -> f64 {
    0.15
}
fn default_cfl() -> f64 {
    DEFAULT_CFL
}

/// Reads `path`, applies `section.key=value` overrides, and deserializes strictly.
pub fn load(path: &Path, overrides: &[String]) -> Result<(ExperimentConfig, String), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
    parse(&text, overrides)
}

/// Returns the config and its digest.
pub fn parse(text: &str, overrides: &[String]) -> Result<(ExperimentConfig, String), ConfigError> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let mut key = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.message().to_string();
        // the path stops at the table that lacks the key
        if let Some(field) = quoted(&message, "missing field ") {
            key = if key == "." { field } else { format!("{key}.{field}") };
        }
        ConfigError::Key { line: locate(text, &key), key, message }
    })?;
    let digest = digest(&cfg);
    Ok((cfg, digest))
}

/// SHA-256 of the canonical JSON form of the effective config.
pub fn digest(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    let mut h = Sha256::new();
    h.update(&json);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn quoted(message: &str, prefix: &str) -> Option<String> {
    let rest = message.strip_prefix(prefix)?.strip_prefix('`')?;
    Some(rest[..rest.find('`')?].to_string())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside its section, or of the section header.
fn locate(text: &str, key: &str) -> Option<usize> {
    let (section, field) = match key.rsplit_once('.') {
        Some((s, f)) => (Some(s), f),
        None => (None, key),
    };
    let mut current: Option<String> = None;
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(name.trim().to_string());
            if Some(name.trim()) == section {
                header = Some(i + 1);
            }
            continue;
        }
        let in_section = current.as_deref() == section;
        if in_section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == field {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, value) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(spec.into()));
    }
    // bare words become strings
    let value: toml::Value = match format!("v = {}", value.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(value.trim().to_string()),
    };
    let mut t = table;
    for p in &path[..path.len() - 1] {
        t = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(spec.into()))?;
    }
    t.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn grid(&self) -> elastobcm::Result<Grid> {
        let g = &self.grid;
        let ext: Vec<(f64, f64)> = g.extents.iter().map(|e| (e[0], e[1])).collect();
        build_grid(g.d, g.n, &ext, &g.x0)
    }

    fn box_centre(&self, g: &Grid) -> Vec<f64> {
        g.lower().iter().zip(g.upper()).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn material(&self, g: &Grid) -> elastobcm::Result<MaterialModel> {
        let m = &self.material;
        let centre = m.centre.clone().unwrap_or_else(|| self.box_centre(g));
        if centre.len() != g.dim() {
            return Err(elastobcm::Error::Config(format!("material.centre needs {} entries", g.dim())));
        }
        let dist = |x: &[f64; 3]| (0..g.dim()).map(|k| (x[k] - centre[k]).powi(2)).sum::<f64>().sqrt();
        let mut model = match m.preset {
            Preset::Constant => MaterialModel::constant(g, m.rho, m.mu, m.lambda),
            Preset::Gaussian => MaterialModel::from_fn(g, |x| {
                let r = dist(x) / m.width;
                (m.rho * (1.0 + m.amplitude * (-r * r).exp()), m.mu, m.lambda)
            }),
            Preset::Bump => MaterialModel::from_fn(g, |x| (m.rho * (1.0 + m.amplitude * bump(dist(x) / m.width)), m.mu, m.lambda)),
            Preset::Csv => {
                let field = |p: &Option<PathBuf>, v: f64| match p {
                    Some(p) => read_field_csv_path(g, p),
                    None => Ok(vec![v; g.len()]),
                };
                let rho = field(&m.rho_csv, m.rho)?;
                let mu = field(&m.mu_csv, m.mu)?;
                let lambda = field(&m.lambda_csv, m.lambda)?;
                let b = bounds_of(&rho, &mu, &lambda);
                MaterialModel::new(rho, mu, lambda, b)
            }
        };
        if let Some(b) = m.bounds {
            model.bounds = MaterialBounds { rho1: b.rho1, mu0: b.mu0, mu1: b.mu1, lambda0: b.lambda0, lambda1: b.lambda1 };
        }
        Ok(model)
    }

    /// δρ for the stability experiment.
    pub fn perturbation(&self, g: &Grid) -> elastobcm::Result<Vec<f64>> {
        let s = &self.stability;
        if s.preset != Preset::Bump {
            return Err(elastobcm::Error::Config("stability.preset must be `bump`".into()));
        }
        let centre = s.centre.clone().unwrap_or_else(|| self.box_centre(g));
        Ok((0..g.len())
            .map(|a| {
                let x = g.coords(a);
                let r = (0..g.dim()).map(|k| (x[k] - centre[k]).powi(2)).sum::<f64>().sqrt();
                bump(r / s.radius)
            })
            .collect())
    }
}
