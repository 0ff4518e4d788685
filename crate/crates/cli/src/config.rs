//! Experiment configuration: a TOML document with nested tables.
//!
//! Parsing goes through `serde_path_to_error` so that type errors carry the
//! dotted path of the offending key; semantic checks run afterwards in
//! [`ExperimentConfig::validate`].

use std::fmt;

use moment_core::dynamics::{FieldSpec, LeaderTrack, PairSpec};
use moment_core::expr::Expression;
use moment_core::flow::TauStrategy;
use moment_core::reconstruction::{MassBoundOptions, PdOptions};
use moment_core::reduction::{FitNorm, FitOptions};
use moment_core::{make_basis, BasisSpec, BoxDomain};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub struct ConfigError {
    /// Dotted key path, e.g. `models[1].kappa`.
    pub path: String,
    pub expected: String,
    pub got: String,
    /// Position in the document (TOML syntax errors) or inside an expression.
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() { "<root>" } else { &self.path };
        write!(f, "{path}")?;
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, " ({l}:{c})")?;
        }
        write!(f, ": expected {}, got {}", self.expected, self.got)
    }
}

impl ConfigError {
    pub fn new(path: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            expected: expected.into(),
            got: got.into(),
            line: None,
            column: None,
        }
    }

    fn at(mut self, line: usize, column: usize) -> Self {
        self.line = Some(line);
        self.column = Some(column);
        self
    }
}

/// Single-agent field: an expression in `x` or a catalog table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldMap {
    Expr(String),
    Catalog(FieldSpec),
}

impl FieldMap {
    pub fn spec(&self) -> FieldSpec {
        match self {
            FieldMap::Expr(e) => FieldSpec::Expr { expr: e.clone() },
            FieldMap::Catalog(c) => c.clone(),
        }
    }
}

/// Pair map: an expression in `x, y` or a catalog table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairMap {
    Expr(String),
    Catalog(PairSpec),
}

impl PairMap {
    pub fn spec(&self) -> PairSpec {
        match self {
            PairMap::Expr(e) => PairSpec::Expr { expr: e.clone() },
            PairMap::Catalog(c) => c.clone(),
        }
    }
}

/// Parameters of [`LeaderTrack::traverse_family`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderFamily {
    pub count: usize,
    pub offset: f64,
    pub half_length: f64,
    pub duration: f64,
    pub amplitude: f64,
    #[serde(default = "one")]
    pub frequency: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<PairMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader_influence: Option<PairMap>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub leaders: Vec<LeaderTrack>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader_family: Option<LeaderFamily>,
}

impl DynamicsConfig {
    /// Explicit tracks followed by the generated family.
    pub fn tracks(&self) -> Vec<LeaderTrack> {
        let mut out = self.leaders.clone();
        if let Some(f) = &self.leader_family {
            out.extend(LeaderTrack::traverse_family(
                f.count,
                f.offset,
                f.half_length,
                f.duration,
                f.amplitude,
                f.frequency,
            ));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Box the agents are drawn from uniformly.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub agents: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub t_end: f64,
    pub h: f64,
    /// Keep every `record_every`-th RK4 step.
    #[serde(default = "one_usize")]
    pub record_every: usize,
    /// Fractional domain inflation tolerated before an agent counts as escaped.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn one_usize() -> usize {
    1
}

fn default_margin() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Trapezoid points per axis for linear fits.
    pub grid: usize,
    /// Points per axis of each factor of the pair grid.
    pub pair_grid: usize,
    pub max_iter: usize,
    pub tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linf_points: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        let o = FitOptions::default();
        Self {
            grid: 401,
            pair_grid: 101,
            max_iter: o.max_iter,
            tol: o.tol,
            linf_points: None,
        }
    }
}

/// `kappa0 = "auto"` or a number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Kappa0 {
    Value(f64),
    Keyword(String),
}

/// One bound for every matrix, or one per matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaSpec {
    Uniform(f64),
    PerMatrix(Vec<f64>),
}

impl KappaSpec {
    pub fn expand(&self, n: usize) -> Vec<f64> {
        match self {
            KappaSpec::Uniform(v) => vec![*v; n],
            KappaSpec::PerMatrix(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub norm: FitNorm,
    /// Bound on `nu_2[A]`; `"auto"` means `min(0, nu_2[A_unconstrained])`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa0: Option<Kappa0>,
    /// Bounds on the quadratic matrices `B~_l`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<KappaSpec>,
    /// Bounds on the leader matrices `Gamma_r`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_leader: Option<KappaSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub t_end: f64,
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundConfig {
    /// Relative inflation of the moment box used for `beta` and the exit time.
    pub box_inflation: f64,
    /// Multiplier on the grid-sup residuals.
    pub eps_inflation: f64,
    pub tau: TauStrategy,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            box_inflation: 0.05,
            eps_inflation: 1.0,
            tau: TauStrategy::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoMethod {
    #[default]
    PrimalDual,
    Lp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub lambda: f64,
    pub cells: Vec<usize>,
    pub times: Vec<f64>,
    /// `"true"` and/or model names.
    #[serde(default = "true_source")]
    pub sources: Vec<String>,
    #[serde(default)]
    pub method: RecoMethod,
    #[serde(default)]
    pub solver: PdOptions,
}

fn true_source() -> Vec<String> {
    vec!["true".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassBoundsConfig {
    pub cells: Vec<usize>,
    pub times: Vec<f64>,
    #[serde(default = "true_source")]
    pub sources: Vec<String>,
    pub regions: Vec<BoxDomain>,
    #[serde(default)]
    pub options: MassBoundOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    /// One-dimensional field on `[-1, 1]`, as an expression in `x`.
    pub field: String,
    pub m_max: u32,
    #[serde(default)]
    pub ell: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropositionConfig {
    pub ell: u32,
    pub m_max: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceConfig {
    pub interval: [f64; 2],
    pub n_max: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowellConfig {
    pub field: String,
    pub k: u32,
    /// `sup |f^(k)|` on `[-1, 1]`.
    pub derivative_sup: f64,
    pub n_min: u32,
    pub n_max: u32,
}

/// Which convergence-lab checks to run; absent parts are skipped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sandwich_k_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chebyshev_n_max: Option<u32>,
    /// `[k_max, n_max]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub properties: Option<[u32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identities_k_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposition: Option<PropositionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<DivergenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub powell: Option<PowellConfig>,
}

impl ConvergenceConfig {
    /// Every check at the ranges the test-suite uses.
    pub fn full() -> Self {
        Self {
            sandwich_k_max: Some(15),
            chebyshev_n_max: Some(12),
            properties: Some([15, 12]),
            identities_k_max: Some(60),
            decay: Some(DecayConfig {
                field: "exp(x)".into(),
                m_max: 5,
                ell: 2,
            }),
            proposition: Some(PropositionConfig { ell: 2, m_max: 30 }),
            divergence: Some(DivergenceConfig {
                interval: [-3.0, 3.0],
                n_max: 10,
            }),
            powell: Some(PowellConfig {
                field: "exp(x)".into(),
                k: 3,
                derivative_sup: std::f64::consts::E,
                n_min: 3,
                n_max: 12,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Comparisons against the simulated moments stop here (default: the
    /// shorter of the two horizons).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare_until: Option<f64>,
    /// Window of the peak-to-peak oscillation metric.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oscillation_window: Option<[f64; 2]>,
    /// End of the reference window for the growth ratio `sup ||m|| / sup_{t <= end} ||m||`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_end: Option<f64>,
    pub oscillation_ratio: f64,
    pub histogram_bins: usize,
    /// Minimum prominence of a histogram mode relative to the tallest bin.
    pub mode_prominence: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            compare_until: None,
            oscillation_window: None,
            reference_end: None,
            oscillation_ratio: 5.0,
            histogram_bins: 40,
            mode_prominence: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Keep every `decimation`-th row of trajectory and moment tables.
    pub decimation: usize,
    /// Agent columns written to `trajectory.csv`.
    pub max_agents: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            decimation: 1,
            max_agents: 500,
        }
    }
}

/// What `--scale` shrinks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    pub agents: bool,
    pub grids: bool,
    /// Scales every horizon and referenced time together.
    pub horizon: bool,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            agents: true,
            grids: true,
            horizon: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub domain: BoxDomain,
    pub basis: BasisSpec,
    /// Leader-side kernels; the main basis when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_basis: Option<BasisSpec>,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<ReconstructionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub massbounds: Option<MassBoundsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceConfig>,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
}

/// Splits serde's "invalid type: X, expected Y" style messages.
fn split_message(msg: &str) -> (String, String) {
    let first = msg.lines().next().unwrap_or(msg).trim();
    if let Some(rest) = first.strip_prefix("invalid type: ").or_else(|| first.strip_prefix("invalid value: ")) {
        if let Some((got, expected)) = rest.split_once(", expected ") {
            return (expected.to_string(), got.to_string());
        }
    }
    if let Some(rest) = first.strip_prefix("unknown field ") {
        if let Some((got, expected)) = rest.split_once(", expected ") {
            return (expected.to_string(), format!("unknown field {got}"));
        }
        if let Some((got, _)) = rest.split_once(", there are no fields") {
            return ("no fields".into(), format!("unknown field {got}"));
        }
    }
    if let Some(rest) = first.strip_prefix("unknown variant ") {
        if let Some((got, expected)) = rest.split_once(", expected ") {
            return (expected.to_string(), format!("variant {got}"));
        }
    }
    if let Some(field) = first.strip_prefix("missing field ") {
        return (format!("field {field}"), "nothing".into());
    }
    if first.starts_with("data did not match any variant") {
        return ("an expression string or a catalog table with a known `kind`".into(), "neither".into());
    }
    ("a valid value".into(), first.to_string())
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

/// Parses and validates a TOML experiment document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    let cfg: ExperimentConfig = match serde_path_to_error::deserialize(de) {
        Ok(c) => c,
        Err(e) => {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let (expected, got) = split_message(inner.message());
            let mut err = ConfigError::new(if path == "." { String::new() } else { path }, expected, got);
            if let Some(span) = inner.span() {
                let (l, c) = line_col(text, span.start);
                err = err.at(l, c);
            }
            return Err(err);
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_toml(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("configs serialize to TOML")
}

fn expr_error(path: &str, e: moment_core::Error) -> ConfigError {
    match e {
        moment_core::Error::Expression { line, column, message } => {
            ConfigError::new(path, "a valid expression", message).at(line, column)
        }
        other => ConfigError::new(path, "a valid map", other.to_string()),
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(path, "a positive number", v.to_string()))
    }
}

fn time_in(path: &str, t: f64, horizon: f64, what: &str) -> Result<(), ConfigError> {
    if t.is_finite() && t >= 0.0 && t <= horizon + 1e-9 * horizon.max(1.0) {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("a time in [0, {horizon}] ({what})"), t.to_string()))
    }
}

impl ExperimentConfig {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Horizon of the data behind `source` (`"true"` or a model name).
    fn source_horizon(&self, path: &str, source: &str) -> Result<f64, ConfigError> {
        if source == "true" {
            self.simulation
                .as_ref()
                .map(|s| s.t_end)
                .ok_or_else(|| ConfigError::new(path, "a [simulation] table for source \"true\"", "none"))
        } else if self.models.iter().any(|m| m.name == source) {
            self.flow
                .as_ref()
                .map(|f| f.t_end)
                .ok_or_else(|| ConfigError::new(path, format!("a [flow] table for model source {source:?}"), "none"))
        } else {
            let names: Vec<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
            Err(ConfigError::new(
                path,
                format!("\"true\" or one of the model names {names:?}"),
                format!("{source:?}"),
            ))
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.dim();
        if !(1..=2).contains(&d) {
            return Err(ConfigError::new("domain", "a box of dimension 1 or 2", format!("dimension {d}")));
        }
        let basis = make_basis(&self.basis, &self.domain)
            .map_err(|e| ConfigError::new("basis", "a basis valid on the domain", e.to_string()))?;
        let psi = match &self.psi_basis {
            Some(spec) => make_basis(spec, &self.domain)
                .map_err(|e| ConfigError::new("psi_basis", "a basis valid on the domain", e.to_string()))?,
            None => basis.clone(),
        };

        let dy = &self.dynamics;
        if let Some(f) = &dy.field {
            f.spec().build(d).map_err(|e| expr_error("dynamics.field", e))?;
            if let FieldMap::Expr(t) = f {
                Expression::field(t, d).map_err(|e| expr_error("dynamics.field", e))?;
            }
        }
        for (path, map) in [
            ("dynamics.interaction", &dy.interaction),
            ("dynamics.leader_influence", &dy.leader_influence),
        ] {
            if let Some(g) = map {
                g.spec().build(d).map_err(|e| expr_error(path, e))?;
            }
        }
        let tracks = dy.tracks();
        if dy.leader_influence.is_some() != !tracks.is_empty() {
            return Err(ConfigError::new(
                "dynamics",
                "leader_influence together with leaders or leader_family",
                if tracks.is_empty() { "an influence map without leaders" } else { "leaders without an influence map" },
            ));
        }
        if let Some(f) = &dy.leader_family {
            if d != 2 || f.count == 0 {
                return Err(ConfigError::new(
                    "dynamics.leader_family",
                    "a planar domain and count >= 1",
                    format!("dimension {d}, count {}", f.count),
                ));
            }
            positive("dynamics.leader_family.duration", f.duration)?;
        }
        for (j, tr) in tracks.iter().enumerate() {
            tr.validate(&self.domain, tr_horizon(self), 1000, j).map_err(|e| {
                ConfigError::new(format!("dynamics.leaders[{j}]"), "a track inside the domain", e.to_string())
            })?;
        }
        if dy.field.is_none() && dy.interaction.is_none() && dy.leader_influence.is_none() {
            return Err(ConfigError::new("dynamics", "at least one of field, interaction, leader_influence", "none"));
        }

        if let Some(init) = &self.initial {
            let b = BoxDomain::new(init.lower.clone(), init.upper.clone())
                .map_err(|e| ConfigError::new("initial", "a valid box", e.to_string()))?;
            if !b.is_subset_of(&self.domain) {
                return Err(ConfigError::new("initial", "a box inside the domain", format!("{b:?}")));
            }
            if init.agents == 0 {
                return Err(ConfigError::new("initial.agents", "a positive count", "0"));
            }
        }
        if let Some(sim) = &self.simulation {
            if self.initial.is_none() {
                return Err(ConfigError::new("initial", "an [initial] table for the simulation", "none"));
            }
            positive("simulation.t_end", sim.t_end)?;
            positive("simulation.h", sim.h)?;
            if sim.record_every == 0 {
                return Err(ConfigError::new("simulation.record_every", "a positive step count", "0"));
            }
        }
        if self.fit.grid < 2 || self.fit.pair_grid < 2 {
            return Err(ConfigError::new(
                "fit",
                "at least 2 grid points per axis",
                format!("grid {}, pair_grid {}", self.fit.grid, self.fit.pair_grid),
            ));
        }

        let mut names = std::collections::BTreeSet::new();
        for (i, m) in self.models.iter().enumerate() {
            let p = format!("models[{i}]");
            if m.name.is_empty() || m.name == "true" || !m.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(ConfigError::new(format!("{p}.name"), "a name of [A-Za-z0-9_-] other than \"true\"", format!("{:?}", m.name)));
            }
            if !names.insert(m.name.clone()) {
                return Err(ConfigError::new(format!("{p}.name"), "a unique model name", format!("{:?}", m.name)));
            }
            if let Some(Kappa0::Keyword(k)) = &m.kappa0 {
                if k != "auto" {
                    return Err(ConfigError::new(format!("{p}.kappa0"), "a number or \"auto\"", format!("{k:?}")));
                }
            }
            if let Some(k) = &m.kappa {
                check_kappa(&format!("{p}.kappa"), k, basis.size())?;
                if dy.interaction.is_none() {
                    return Err(ConfigError::new(format!("{p}.kappa"), "an interaction to constrain", "none"));
                }
            }
            if let Some(k) = &m.kappa_leader {
                check_kappa(&format!("{p}.kappa_leader"), k, psi.size())?;
                if dy.leader_influence.is_none() {
                    return Err(ConfigError::new(format!("{p}.kappa_leader"), "a leader influence to constrain", "none"));
                }
            }
        }

        if let Some(flow) = &self.flow {
            positive("flow.t_end", flow.t_end)?;
            positive("flow.h", flow.h)?;
            if self.models.is_empty() {
                return Err(ConfigError::new("models", "at least one model for [flow]", "none"));
            }
            if self.initial.is_none() {
                return Err(ConfigError::new("initial", "an [initial] table for the initial moments", "none"));
            }
            if let Some(sim) = &self.simulation {
                let ratio = sim.h * sim.record_every as f64 / flow.h;
                if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
                    return Err(ConfigError::new(
                        "flow.h",
                        format!("a step dividing the recording interval {}", sim.h * sim.record_every as f64),
                        flow.h.to_string(),
                    ));
                }
            }
            let horizon = tr_horizon(self);
            for (j, tr) in tracks.iter().enumerate() {
                tr.validate(&self.domain, horizon.max(flow.t_end), 1000, j).map_err(|e| {
                    ConfigError::new(format!("dynamics.leaders[{j}]"), "a track inside the domain", e.to_string())
                })?;
            }
        }
        if let Some(b) = &self.bound {
            if self.flow.is_none() || self.simulation.is_none() {
                return Err(ConfigError::new("bound", "[flow] and [simulation] tables", "missing"));
            }
            if !(b.box_inflation >= 0.0) || !(b.eps_inflation >= 1.0) {
                return Err(ConfigError::new(
                    "bound",
                    "box_inflation >= 0 and eps_inflation >= 1",
                    format!("{} and {}", b.box_inflation, b.eps_inflation),
                ));
            }
        }
        if let Some(r) = &self.reconstruction {
            positive("reconstruction.lambda", r.lambda)?;
            if r.cells.len() != d || r.cells.iter().any(|&c| c < 2) {
                return Err(ConfigError::new("reconstruction.cells", format!("{d} counts >= 2"), format!("{:?}", r.cells)));
            }
            for (i, s) in r.sources.iter().enumerate() {
                let h = self.source_horizon(&format!("reconstruction.sources[{i}]"), s)?;
                for (j, &t) in r.times.iter().enumerate() {
                    time_in(&format!("reconstruction.times[{j}]"), t, h, s)?;
                }
            }
        }
        if let Some(mb) = &self.massbounds {
            if mb.cells.len() != d || mb.cells.iter().any(|&c| c < 2) {
                return Err(ConfigError::new("massbounds.cells", format!("{d} counts >= 2"), format!("{:?}", mb.cells)));
            }
            for (i, r) in mb.regions.iter().enumerate() {
                if r.dim() != d {
                    return Err(ConfigError::new(format!("massbounds.regions[{i}]"), format!("a {d}-dimensional box"), format!("dimension {}", r.dim())));
                }
            }
            for (i, s) in mb.sources.iter().enumerate() {
                let h = self.source_horizon(&format!("massbounds.sources[{i}]"), s)?;
                for (j, &t) in mb.times.iter().enumerate() {
                    time_in(&format!("massbounds.times[{j}]"), t, h, s)?;
                }
            }
        }
        if let Some(c) = &self.convergence {
            if let Some(dc) = &c.decay {
                Expression::field(&dc.field, 1).map_err(|e| expr_error("convergence.decay.field", e))?;
                if dc.m_max == 0 || dc.m_max > 12 {
                    return Err(ConfigError::new("convergence.decay.m_max", "1..=12", dc.m_max.to_string()));
                }
            }
            if let Some(p) = &c.powell {
                Expression::field(&p.field, 1).map_err(|e| expr_error("convergence.powell.field", e))?;
                if p.n_min < p.k || p.n_max < p.n_min {
                    return Err(ConfigError::new("convergence.powell", "k <= n_min <= n_max", format!("k {}, n {}..={}", p.k, p.n_min, p.n_max)));
                }
            }
            if let Some([k, n]) = c.properties {
                if k > 20 || n > 12 {
                    return Err(ConfigError::new("convergence.properties", "[k_max <= 20, n_max <= 12]", format!("[{k}, {n}]")));
                }
            }
        }
        if let Some(w) = self.report.oscillation_window {
            if !(w[0] < w[1]) {
                return Err(ConfigError::new("report.oscillation_window", "[start, end] with start < end", format!("{w:?}")));
            }
        }
        if self.outputs.decimation == 0 {
            return Err(ConfigError::new("outputs.decimation", "a positive row stride", "0"));
        }
        Ok(())
    }

    /// Shrinks agent counts, grids and (optionally) horizons by `s` in `(0, 1]`.
    pub fn scaled(&self, s: f64) -> Result<Self, ConfigError> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(ConfigError::new("--scale", "a factor in (0, 1]", s.to_string()));
        }
        let mut c = self.clone();
        if s == 1.0 {
            return Ok(c);
        }
        let grid = |n: usize, min: usize| ((n as f64 * s).round() as usize).max(min).min(n);
        if c.scaling.agents {
            if let Some(init) = &mut c.initial {
                init.agents = grid(init.agents, 10);
            }
        }
        if c.scaling.grids {
            c.fit.grid = grid(c.fit.grid, 21);
            c.fit.pair_grid = grid(c.fit.pair_grid, 21);
            if let Some(r) = &mut c.reconstruction {
                r.cells = r.cells.iter().map(|&n| grid(n, 10)).collect();
            }
            if let Some(m) = &mut c.massbounds {
                m.cells = m.cells.iter().map(|&n| grid(n, 10)).collect();
            }
        }
        if c.scaling.horizon {
            if let Some(sim) = &mut c.simulation {
                sim.t_end *= s;
            }
            if let Some(f) = &mut c.flow {
                f.t_end *= s;
            }
            if let Some(r) = &mut c.reconstruction {
                r.times.iter_mut().for_each(|t| *t *= s);
            }
            if let Some(m) = &mut c.massbounds {
                m.times.iter_mut().for_each(|t| *t *= s);
            }
            if let Some(t) = &mut c.report.compare_until {
                *t *= s;
            }
            if let Some(w) = &mut c.report.oscillation_window {
                w[0] *= s;
                w[1] *= s;
            }
            if let Some(t) = &mut c.report.reference_end {
                *t *= s;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// Longest horizon that leader tracks must cover.
fn tr_horizon(cfg: &ExperimentConfig) -> f64 {
    let sim = cfg.simulation.as_ref().map_or(0.0, |s| s.t_end);
    let flow = cfg.flow.as_ref().map_or(0.0, |f| f.t_end);
    sim.max(flow)
}

fn check_kappa(path: &str, k: &KappaSpec, n: usize) -> Result<(), ConfigError> {
    let values = match k {
        KappaSpec::Uniform(v) => vec![*v],
        KappaSpec::PerMatrix(v) => {
            if v.len() != n {
                return Err(ConfigError::new(path, format!("{n} entries (one per matrix)"), format!("{} entries", v.len())));
            }
            v.clone()
        }
    };
    if let Some(bad) = values.iter().find(|v| !(**v >= 0.0)) {
        return Err(ConfigError::new(path, "nonnegative bounds", bad.to_string()));
    }
    Ok(())
}

/// Converts the fit table to solver options for one model.
pub fn fit_options(fit: &FitConfig, model: &ModelConfig) -> FitOptions {
    FitOptions {
        norm: model.norm,
        max_iter: fit.max_iter,
        tol: fit.tol,
        linf_points: fit.linf_points,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "toy"
seed = 3

[domain]
lower = [-2.0]
upper = [2.0]

[basis]
kind = "monomial"
degree = 4

[dynamics]
field = "-x"
interaction = "2*exp(-0.6*(x-y)^2)*(x-y)"

[initial]
lower = [-1.5]
upper = [1.5]
agents = 50

[simulation]
t_end = 1.0
h = 0.05

[[models]]
name = "l2"

[flow]
t_end = 1.0
h = 0.05
"#;

    #[test]
    fn minimal_document_parses() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.models[0].norm, FitNorm::L2);
        assert_eq!(c.dynamics.field, Some(FieldMap::Expr("-x".into())));
        assert_eq!(c.fit, FitConfig::default());
    }

    #[test]
    fn round_trip() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(parse_config(&to_toml(&c)).unwrap(), c);
    }

    #[test]
    fn type_errors_carry_paths() {
        let bad = MINIMAL.replace("agents = 50", "agents = \"many\"");
        let e = parse_config(&bad).unwrap_err();
        assert_eq!(e.path, "initial.agents");
        assert!(e.got.contains("many"), "{e}");
        assert!(e.line.is_some());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("h = 0.05\n\n[[models]]", "h = 0.05\nstep = 2\n\n[[models]]");
        let e = parse_config(&bad).unwrap_err();
        assert_eq!(e.path, "simulation.step");
        assert!(e.got.contains("step"), "{e}");
    }

    #[test]
    fn expression_errors_carry_positions() {
        let bad = MINIMAL.replace("field = \"-x\"", "field = \"-x + foo\"");
        let e = parse_config(&bad).unwrap_err();
        assert_eq!(e.path, "dynamics.field");
        assert_eq!((e.line, e.column), (Some(1), Some(6)), "{e}");
        let bad = MINIMAL.replace("field = \"-x\"", "field = \"exp(x, x)\"");
        assert_eq!(parse_config(&bad).unwrap_err().path, "dynamics.field");
        let bad = MINIMAL.replace("field = \"-x\"", "field = \"(x\"");
        assert!(parse_config(&bad).unwrap_err().line.is_some());
    }

    #[test]
    fn times_beyond_horizon_are_rejected() {
        let bad = format!("{MINIMAL}\n[reconstruction]\nlambda = 100.0\ncells = [40]\ntimes = [2.0]\n");
        let e = parse_config(&bad).unwrap_err();
        assert_eq!(e.path, "reconstruction.times[0]");
        let ok = format!("{MINIMAL}\n[reconstruction]\nlambda = 100.0\ncells = [40]\ntimes = [1.0]\nsources = [\"true\", \"l2\"]\n");
        parse_config(&ok).unwrap();
        let bad = ok.replace("\"l2\"]", "\"l3\"]");
        assert_eq!(parse_config(&bad).unwrap_err().path, "reconstruction.sources[1]");
    }

    #[test]
    fn kappa_arrays_must_match_the_basis() {
        let bad = MINIMAL.replace("name = \"l2\"", "name = \"l2\"\nkappa = [1.0, 2.0]");
        let e = parse_config(&bad).unwrap_err();
        assert_eq!(e.path, "models[0].kappa");
        assert!(e.expected.contains("5 entries"), "{e}");
        let ok = MINIMAL.replace("name = \"l2\"", "name = \"l2\"\nkappa = [1.0, 2.0, 3.0, 4.0, 5.0]\nkappa0 = \"auto\"");
        parse_config(&ok).unwrap();
        let bad = MINIMAL.replace("name = \"l2\"", "name = \"l2\"\nkappa0 = \"big\"");
        assert_eq!(parse_config(&bad).unwrap_err().path, "models[0].kappa0");
    }

    #[test]
    fn catalog_tables_are_accepted() {
        let text = MINIMAL.replace(
            "interaction = \"2*exp(-0.6*(x-y)^2)*(x-y)\"",
            "interaction = { kind = \"gaussian_repulsion\", amplitude = 2.0, rate = 0.6 }",
        );
        let c = parse_config(&text).unwrap();
        assert_eq!(
            c.dynamics.interaction.unwrap().spec(),
            PairSpec::GaussianRepulsion {
                amplitude: 2.0,
                rate: 0.6
            }
        );
        let bad = text.replace("gaussian_repulsion", "gravity");
        assert_eq!(parse_config(&bad).unwrap_err().path, "dynamics.interaction");
    }

    #[test]
    fn flow_step_must_divide_recording_interval() {
        let bad = MINIMAL.replace("[flow]\nt_end = 1.0\nh = 0.05", "[flow]\nt_end = 1.0\nh = 0.03");
        assert_eq!(parse_config(&bad).unwrap_err().path, "flow.h");
    }

    #[test]
    fn scaling_shrinks_agents_and_grids() {
        let c = parse_config(MINIMAL).unwrap();
        let s = c.scaled(0.5).unwrap();
        assert_eq!(s.initial.as_ref().unwrap().agents, 25);
        assert_eq!(s.fit.grid, 201);
        assert_eq!(s.simulation, c.simulation);
        assert!(c.scaled(0.0).is_err() && c.scaled(2.0).is_err());
    }
}
