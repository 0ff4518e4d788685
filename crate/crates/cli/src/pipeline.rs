//! Stage orchestration: simulate, fit, flow, bound, reconstruct, massbounds,
//! convergence. Stages run in dependency order; a failed stage is recorded in
//! the manifest and everything downstream of it is skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use moment_convergence as conv;
use moment_core::dynamics::DynamicsSpec;
use moment_core::expr::Expression;
use moment_core::flow::{estimate_beta, estimate_tau, ErrorBound, MomentBox, MomentTrajectory, ReducedSystem};
use moment_core::io::{write_bound_csv, write_csv, write_json, write_moment_csv, write_trajectory_csv};
use moment_core::linalg::log_norm_2;
use moment_core::reconstruction::{
    mass_bounds, reconstruct_tv, reconstruct_tv_lp, CellGrid, GridMeasure, MassBoundResult,
};
use moment_core::reduction::{
    fit_leader, fit_linear, fit_quadratic, FitReport, LeaderModel, LinearModel, ModelDocument, QuadraticModel,
};
use moment_core::simulator::{moment_series, sample_uniform_box, simulate, AgentEnsemble, SimOptions, Trajectory};
use moment_core::{make_basis, BoxDomain, KernelBasis, PairGrid, PointSet, QuadratureGrid};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{fit_options, ConfigError, ExperimentConfig, Kappa0, ModelConfig, RecoMethod};
use crate::dominance::combined_eps;
use crate::manifest::{RunManifest, StageRecord, StageStatus};
use crate::metrics::{max_peak_to_peak, normalized_l1, sup_norm, Histogram, Mode, Paired};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Simulate,
    Fit,
    Flow,
    Bound,
    Reconstruct,
    Massbounds,
    Convergence,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Simulate,
        Stage::Fit,
        Stage::Flow,
        Stage::Bound,
        Stage::Reconstruct,
        Stage::Massbounds,
        Stage::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Fit => "fit",
            Stage::Flow => "flow",
            Stage::Bound => "bound",
            Stage::Reconstruct => "reconstruct",
            Stage::Massbounds => "massbounds",
            Stage::Convergence => "convergence",
        }
    }

    fn configured(self, cfg: &ExperimentConfig) -> bool {
        match self {
            Stage::Simulate => cfg.simulation.is_some(),
            Stage::Fit => !cfg.models.is_empty(),
            Stage::Flow => cfg.flow.is_some(),
            Stage::Bound => cfg.bound.is_some(),
            Stage::Reconstruct => cfg.reconstruction.is_some(),
            Stage::Massbounds => cfg.massbounds.is_some(),
            Stage::Convergence => cfg.convergence.is_some(),
        }
    }

    fn table(self) -> &'static str {
        match self {
            Stage::Simulate => "simulation",
            Stage::Fit => "models",
            Stage::Flow => "flow",
            Stage::Bound => "bound",
            Stage::Reconstruct => "reconstruction",
            Stage::Massbounds => "massbounds",
            Stage::Convergence => "convergence",
        }
    }

    fn deps(self, cfg: &ExperimentConfig) -> Vec<Stage> {
        let by_sources = |sources: &[String]| {
            let mut d = Vec::new();
            if sources.iter().any(|s| s == "true") {
                d.push(Stage::Simulate);
            }
            if sources.iter().any(|s| s != "true") {
                d.push(Stage::Flow);
            }
            d
        };
        match self {
            Stage::Simulate | Stage::Fit | Stage::Convergence => vec![],
            Stage::Flow => vec![Stage::Fit],
            Stage::Bound => vec![Stage::Simulate, Stage::Flow],
            Stage::Reconstruct => cfg.reconstruction.as_ref().map_or(vec![], |r| by_sources(&r.sources)),
            Stage::Massbounds => cfg.massbounds.as_ref().map_or(vec![], |m| by_sources(&m.sources)),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("did not converge: {0}")]
    Nonconvergence(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numeric(_) => 3,
            RunError::Nonconvergence(_) => 4,
            RunError::Io(_) => 1,
        }
    }
}

impl From<moment_core::Error> for RunError {
    fn from(e: moment_core::Error) -> Self {
        match e {
            moment_core::Error::Io(_) | moment_core::Error::Json(_) => RunError::Io(e.to_string()),
            other => RunError::Numeric(other.to_string()),
        }
    }
}

impl From<conv::Error> for RunError {
    fn from(e: conv::Error) -> Self {
        match e {
            conv::Error::Nonconvergence(_) => RunError::Nonconvergence(e.to_string()),
            conv::Error::InvalidArgument(_) => RunError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

type StageResult<T = ()> = Result<T, RunError>;

/// Fitted parts of one named model.
#[derive(Clone, Debug, Default)]
pub struct FittedModel {
    pub linear: Option<(LinearModel, FitReport)>,
    pub quadratic: Option<(QuadraticModel, FitReport)>,
    pub leader: Option<(LeaderModel, FitReport)>,
    /// Resolved `kappa0` (after `"auto"`).
    pub kappa0: Option<f64>,
}

impl FittedModel {
    fn system(&self, tracks: &[moment_core::dynamics::LeaderTrack]) -> ReducedSystem {
        ReducedSystem {
            linear: self.linear.as_ref().map(|p| p.0.clone()),
            quadratic: self.quadratic.as_ref().map(|p| p.0.clone()),
            leader: self.leader.as_ref().map(|p| (p.0.clone(), tracks.to_vec())),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct PartSummary {
    pub eps_total: f64,
    pub max_log_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub constraint_violation: f64,
    /// `max_i (log_norm_i - kappa_i)`; absent for unconstrained parts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_constraint_excess: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct FitSummary {
    pub constrained: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa0: Option<f64>,
    pub parts: BTreeMap<String, PartSummary>,
    /// Every fitted bound holds within 1e-8 (true when unconstrained).
    pub constraints_hold: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct FlowSummary {
    pub t_end: f64,
    pub sup_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare_until: Option<f64>,
    /// `max_k sup_t |m_k - m̄_k| / (1 + sup_t |m_k|)` against the simulation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_relative_error: Option<f64>,
    /// Per kernel `RMS |m_k - m̄_k| / (1 + RMS |m_k|)`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub rms_ratios: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rms_ratio: Option<f64>,
    /// `sup ||m̄||` over `t <= reference_end`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_sup_norm: Option<f64>,
    /// `sup ||m̄||` over `[reference_end, t_end]` divided by the reference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_to_peak: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OscillationFlag {
    pub unconstrained: String,
    pub constrained: String,
    pub peak_to_peak_unconstrained: f64,
    pub peak_to_peak_constrained: f64,
    pub ratio: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundSummary {
    pub rate_name: String,
    pub rate: f64,
    pub eps_total: f64,
    pub valid_until: f64,
    pub checked: usize,
    pub violations: usize,
    pub worst_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulationSummary {
    pub agents: usize,
    pub snapshots: usize,
    pub t_end: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal_modes: Option<Vec<Mode>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_count: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RecoSummary {
    pub source: String,
    pub time: f64,
    pub file: String,
    pub epsilon: f64,
    pub tv: f64,
    pub mass: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Normalized L1 distance to the reconstruction from true moments.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1_to_true: Option<f64>,
    /// Normalized L1 distance to the agent histogram on the same cells.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1_to_agents: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MassBoundRecord {
    pub source: String,
    pub time: f64,
    #[serde(flatten)]
    pub result: MassBoundResult,
    /// Fraction of agents in the region (true source only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent_fraction: Option<f64>,
}

/// Numeric results gathered across stages; written to `report.json`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Report {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSummary>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub fits: BTreeMap<String, FitSummary>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub flows: BTreeMap<String, FlowSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub oscillation: Vec<OscillationFlag>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub bounds: BTreeMap<String, BoundSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub reconstructions: Vec<RecoSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub massbounds: Option<usize>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub convergence: BTreeMap<String, bool>,
}

struct SimData {
    traj: Trajectory,
    moments: Vec<DVector<f64>>,
}

/// In-memory results of a run, kept for callers that inspect them directly.
pub struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    basis: KernelBasis,
    psi: KernelBasis,
    sim: Option<SimData>,
    pub fits: BTreeMap<String, FittedModel>,
    pub flows: BTreeMap<String, MomentTrajectory>,
    pub report: Report,
    pub manifest: RunManifest,
}

fn time_tag(t: f64) -> String {
    format!("t{t}")
}

fn decimate<T>(items: impl IntoIterator<Item = T>, every: usize) -> impl Iterator<Item = T> {
    items.into_iter().enumerate().filter(move |(i, _)| i % every == 0).map(|(_, v)| v)
}

fn json_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report values serialize")
}

/// Stages to run for a filter (empty = everything configured), closed under
/// dependencies and sorted into execution order.
pub fn plan(cfg: &ExperimentConfig, filter: &[Stage]) -> Result<Vec<Stage>, ConfigError> {
    let requested: Vec<Stage> = if filter.is_empty() {
        Stage::ALL.into_iter().filter(|s| s.configured(cfg)).collect()
    } else {
        filter.to_vec()
    };
    let mut set = BTreeSet::new();
    let mut stack = requested;
    while let Some(s) = stack.pop() {
        if !s.configured(cfg) {
            return Err(ConfigError::new(
                s.table(),
                format!("a [{}] table for the {} stage", s.table(), s.name()),
                "none",
            ));
        }
        if set.insert(s) {
            stack.extend(s.deps(cfg));
        }
    }
    Ok(set.into_iter().collect())
}

/// Runs the planned stages and writes `config.toml`, `report.json` and
/// `manifest.json` to `out`.
pub fn run(cfg: &ExperimentConfig, filter: &[Stage], out: &Path, scale: f64) -> Result<RunManifest, RunError> {
    let mut runner = Runner::new(cfg, out, scale)?;
    runner.execute(filter)?;
    Ok(runner.manifest)
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ExperimentConfig, out: &Path, scale: f64) -> Result<Self, RunError> {
        cfg.validate()?;
        std::fs::create_dir_all(out)?;
        let basis = make_basis(&cfg.basis, &cfg.domain)?;
        let psi = match &cfg.psi_basis {
            Some(s) => make_basis(s, &cfg.domain)?,
            None => basis.clone(),
        };
        Ok(Self {
            cfg,
            out: out.to_path_buf(),
            basis,
            psi,
            sim: None,
            fits: BTreeMap::new(),
            flows: BTreeMap::new(),
            report: Report {
                name: cfg.name.clone(),
                ..Default::default()
            },
            manifest: RunManifest::new(cfg, scale),
        })
    }

    pub fn execute(&mut self, filter: &[Stage]) -> Result<(), RunError> {
        let stages = plan(self.cfg, filter)?;
        std::fs::write(self.out.join("config.toml"), crate::config::to_toml(self.cfg))?;
        let mut failed: BTreeSet<Stage> = BTreeSet::new();
        for stage in stages {
            let blocked: Vec<&str> = stage
                .deps(self.cfg)
                .into_iter()
                .filter(|d| failed.contains(d))
                .map(Stage::name)
                .collect();
            if !blocked.is_empty() {
                failed.insert(stage);
                self.manifest.stages.push(StageRecord {
                    stage: stage.name().into(),
                    status: StageStatus::Skipped,
                    files: vec![],
                    diagnostics: vec![format!("upstream stage failed: {}", blocked.join(", "))],
                    wall_time_s: 0.0,
                    exit_code: 0,
                });
                continue;
            }
            let start = Instant::now();
            let mut files = Vec::new();
            let mut diagnostics = Vec::new();
            log::info!("stage {}", stage.name());
            let result = self.run_stage(stage, &mut files, &mut diagnostics);
            let (status, exit_code) = match result {
                Ok(StageStatus::Partial) => (StageStatus::Partial, 3),
                Ok(s) => (s, 0),
                Err(e) => {
                    log::error!("stage {} failed: {e}", stage.name());
                    diagnostics.push(e.to_string());
                    failed.insert(stage);
                    (StageStatus::Failed, e.exit_code())
                }
            };
            self.manifest.stages.push(StageRecord {
                stage: stage.name().into(),
                status,
                files,
                diagnostics,
                wall_time_s: start.elapsed().as_secs_f64(),
                exit_code,
            });
        }
        self.summarize_flows();
        write_json(&self.out.join("report.json"), &self.report)?;
        write_json(&self.out.join("manifest.json"), &self.manifest)?;
        Ok(())
    }

    fn run_stage(&mut self, stage: Stage, files: &mut Vec<String>, diag: &mut Vec<String>) -> StageResult<StageStatus> {
        match stage {
            Stage::Simulate => self.stage_simulate(files),
            Stage::Fit => self.stage_fit(files, diag),
            Stage::Flow => self.stage_flow(files, diag),
            Stage::Bound => self.stage_bound(files, diag),
            Stage::Reconstruct => self.stage_reconstruct(files, diag),
            Stage::Massbounds => self.stage_massbounds(files),
            Stage::Convergence => self.stage_convergence(files),
        }
    }

    fn path(&self, name: &str, files: &mut Vec<String>) -> PathBuf {
        files.push(name.to_string());
        self.out.join(name)
    }

    fn dynamics(&self) -> StageResult<DynamicsSpec> {
        let d = self.cfg.dim();
        let dy = &self.cfg.dynamics;
        let mut spec = DynamicsSpec::default();
        if let Some(f) = &dy.field {
            spec = spec.with_field(f.spec().build(d)?);
        }
        if let Some(g) = &dy.interaction {
            spec = spec.with_interaction(g.spec().build(d)?);
        }
        if let Some(eta) = &dy.leader_influence {
            spec = spec.with_leaders(eta.spec().build(d)?, dy.tracks());
        }
        Ok(spec)
    }

    fn initial_ensemble(&self) -> StageResult<AgentEnsemble> {
        let init = self
            .cfg
            .initial
            .as_ref()
            .ok_or_else(|| ConfigError::new("initial", "an [initial] table", "none"))?;
        let sample_box = BoxDomain::new(init.lower.clone(), init.upper.clone())?;
        Ok(sample_uniform_box(init.agents, &sample_box, &self.cfg.domain, self.cfg.seed)?)
    }

    fn stage_simulate(&mut self, files: &mut Vec<String>) -> StageResult<StageStatus> {
        let sim = self.cfg.simulation.as_ref().expect("planned stage has its table");
        let ens = self.initial_ensemble()?;
        let dynamics = self.dynamics()?;
        let opts = SimOptions {
            record_every: sim.record_every,
            margin: sim.margin,
        };
        let traj = simulate(&ens, &dynamics, sim.t_end, sim.h, &opts)?;
        let moments = moment_series(&traj, &self.basis)?;
        let every = self.cfg.outputs.decimation;

        let keep = self.cfg.outputs.max_agents.min(ens.len());
        let d = self.cfg.dim();
        let subset = Trajectory {
            times: decimate(traj.times.iter().copied(), every).collect(),
            snapshots: decimate(traj.snapshots.iter(), every)
                .map(|s| PointSet::new(d, s.coords()[..keep * d].to_vec()))
                .collect::<Result<_, _>>()?,
        };
        write_trajectory_csv(&self.path("trajectory.csv", files), &subset)?;

        let mut header = vec!["t".to_string()];
        header.extend(self.basis.labels());
        let rows = decimate(traj.times.iter().zip(&moments), every).map(|(t, m)| {
            let mut r = vec![*t];
            r.extend(m.iter());
            r
        });
        write_csv(&self.path("moments_true.csv", files), &header, rows)?;

        let tracks = self.cfg.dynamics.tracks();
        if !tracks.is_empty() {
            let mut header = vec!["t".to_string(), "leader".to_string()];
            header.extend((1..=d).map(|c| format!("y_{c}")));
            let mut pos = vec![0.0; d];
            let mut rows = Vec::new();
            for &t in decimate(traj.times.iter(), every) {
                for (j, tr) in tracks.iter().enumerate() {
                    tr.position(t, &mut pos);
                    let mut r = vec![t, j as f64];
                    r.extend_from_slice(&pos);
                    rows.push(r);
                }
            }
            write_csv(&self.path("leaders.csv", files), &header, rows)?;
        }

        let mut summary = SimulationSummary {
            agents: ens.len(),
            snapshots: traj.times.len(),
            t_end: sim.t_end,
            terminal_modes: None,
            mode_count: None,
        };
        if d == 1 {
            let rc = &self.cfg.report;
            let hist = Histogram::new(
                traj.last().coords().iter().copied(),
                self.cfg.domain.lower()[0],
                self.cfg.domain.upper()[0],
                rc.histogram_bins,
            );
            let header = vec!["x".to_string(), "count".to_string(), "density".to_string()];
            let rows = hist
                .centers()
                .into_iter()
                .zip(&hist.counts)
                .zip(hist.density())
                .map(|((x, c), p)| vec![x, *c as f64, p]);
            write_csv(&self.path("histogram.csv", files), &header, rows)?;
            let modes = hist.modes(rc.mode_prominence);
            summary.mode_count = Some(modes.len());
            summary.terminal_modes = Some(modes);
        }
        self.report.simulation = Some(summary);
        self.sim = Some(SimData { traj, moments });
        Ok(StageStatus::Ok)
    }

    fn fit_model(&self, m: &ModelConfig, diag: &mut Vec<String>) -> StageResult<FittedModel> {
        let cfg = self.cfg;
        let d = cfg.dim();
        let opts = fit_options(&cfg.fit, m);
        let mut fitted = FittedModel::default();
        if let Some(f) = &cfg.dynamics.field {
            let field = f.spec().build(d)?;
            let grid = QuadratureGrid::trapezoid(&cfg.domain, cfg.fit.grid);
            let kappa0 = match &m.kappa0 {
                None => None,
                Some(Kappa0::Value(v)) => Some(*v),
                Some(Kappa0::Keyword(_)) => {
                    let (unc, _) = fit_linear(&self.basis, field.as_ref(), &grid, &opts, None)?;
                    Some(log_norm_2(&unc.a)?.min(0.0))
                }
            };
            fitted.kappa0 = kappa0;
            fitted.linear = Some(fit_linear(&self.basis, field.as_ref(), &grid, &opts, kappa0)?);
        }
        let pair_grid = || PairGrid::square(&cfg.domain, cfg.fit.pair_grid);
        if let Some(g) = &cfg.dynamics.interaction {
            let g = g.spec().build(d)?;
            let kappa = m.kappa.as_ref().map(|k| k.expand(self.basis.size()));
            fitted.quadratic = Some(fit_quadratic(&self.basis, g.as_ref(), &pair_grid(), &opts, kappa.as_deref())?);
        }
        if let Some(eta) = &cfg.dynamics.leader_influence {
            let eta = eta.spec().build(d)?;
            let kappa = m.kappa_leader.as_ref().map(|k| k.expand(self.psi.size()));
            fitted.leader = Some(fit_leader(
                &self.basis,
                &self.psi,
                eta.as_ref(),
                &pair_grid(),
                &opts,
                kappa.as_deref(),
            )?);
        }
        for (part, rep) in [
            ("linear", fitted.linear.as_ref().map(|p| &p.1)),
            ("quadratic", fitted.quadratic.as_ref().map(|p| &p.1)),
            ("leader", fitted.leader.as_ref().map(|p| &p.1)),
        ] {
            if let Some(r) = rep {
                if !r.converged {
                    diag.push(format!(
                        "model {} {part}: solver stopped after {} iterations (constraint violation {:e})",
                        m.name, r.iterations, r.constraint_violation
                    ));
                }
            }
        }
        Ok(fitted)
    }

    fn fit_summary(&self, m: &ModelConfig, f: &FittedModel) -> FitSummary {
        let part = |r: &FitReport, kappa: Option<Vec<f64>>| PartSummary {
            eps_total: r.eps_total,
            max_log_norm: r.log_norms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            iterations: r.iterations,
            converged: r.converged,
            constraint_violation: r.constraint_violation,
            max_constraint_excess: kappa.map(|k| {
                r.log_norms
                    .iter()
                    .zip(&k)
                    .map(|(l, k)| l - k)
                    .fold(f64::NEG_INFINITY, f64::max)
            }),
        };
        let mut parts = BTreeMap::new();
        if let Some((_, r)) = &f.linear {
            parts.insert("linear".into(), part(r, f.kappa0.map(|k| vec![k])));
        }
        if let Some((_, r)) = &f.quadratic {
            parts.insert("quadratic".into(), part(r, m.kappa.as_ref().map(|k| k.expand(self.basis.size()))));
        }
        if let Some((_, r)) = &f.leader {
            parts.insert("leader".into(), part(r, m.kappa_leader.as_ref().map(|k| k.expand(self.psi.size()))));
        }
        let constraints_hold = parts
            .values()
            .all(|p| p.max_constraint_excess.is_none_or(|e| e <= 1e-8) && p.constraint_violation <= 1e-8);
        FitSummary {
            constrained: parts.values().any(|p| p.max_constraint_excess.is_some()),
            kappa0: f.kappa0,
            parts,
            constraints_hold,
        }
    }

    fn stage_fit(&mut self, files: &mut Vec<String>, diag: &mut Vec<String>) -> StageResult<StageStatus> {
        for m in &self.cfg.models {
            let start = Instant::now();
            let fitted = self.fit_model(m, diag)?;
            log::info!("fitted model {} in {:.1} s", m.name, start.elapsed().as_secs_f64());
            if let Some((model, r)) = &fitted.linear {
                let p = self.path(&format!("model_{}_linear.json", m.name), files);
                write_json(&p, &ModelDocument::linear(model, &self.basis, r))?;
            }
            if let Some((model, r)) = &fitted.quadratic {
                let p = self.path(&format!("model_{}_quadratic.json", m.name), files);
                write_json(&p, &ModelDocument::quadratic(model, &self.basis, r))?;
            }
            if let Some((model, r)) = &fitted.leader {
                let p = self.path(&format!("model_{}_leader.json", m.name), files);
                write_json(&p, &ModelDocument::leader(model, &self.basis, r))?;
            }
            let summary = self.fit_summary(m, &fitted);
            self.report.fits.insert(m.name.clone(), summary);
            self.fits.insert(m.name.clone(), fitted);
        }
        Ok(StageStatus::Ok)
    }

    fn initial_moments(&self) -> StageResult<DVector<f64>> {
        match &self.sim {
            Some(s) => Ok(s.moments[0].clone()),
            None => Ok(moment_core::simulator::empirical_moments(
                &self.initial_ensemble()?.states,
                &self.basis,
            )?),
        }
    }

    fn stage_flow(&mut self, files: &mut Vec<String>, diag: &mut Vec<String>) -> StageResult<StageStatus> {
        let flow = self.cfg.flow.as_ref().expect("planned stage has its table");
        let m0 = self.initial_moments()?;
        let tracks = self.cfg.dynamics.tracks();
        let labels = self.basis.labels();
        let mut failures = 0;
        for m in &self.cfg.models {
            let sys = self.fits[&m.name].system(&tracks);
            match sys.integrate(m0.as_slice(), flow.t_end, flow.h, None) {
                Ok(traj) => {
                    let every = self.cfg.outputs.decimation;
                    let kept: Vec<usize> = decimate(0..traj.len(), every).collect();
                    let slim = MomentTrajectory {
                        times: kept.iter().map(|&i| traj.times[i]).collect(),
                        values: traj.values.select_rows(kept.iter()),
                        exit_time: None,
                    };
                    write_moment_csv(&self.path(&format!("moments_{}.csv", m.name), files), &slim, &labels)?;
                    self.flows.insert(m.name.clone(), traj);
                }
                Err(e) => {
                    failures += 1;
                    diag.push(format!("model {}: {e}", m.name));
                }
            }
        }
        match failures {
            0 => Ok(StageStatus::Ok),
            n if n == self.cfg.models.len() => Err(RunError::Numeric("every model diverged".into())),
            _ => Ok(StageStatus::Partial),
        }
    }

    /// Flow rows at the simulation's record times within `[0, until]`.
    fn paired(&self, traj: &MomentTrajectory, until: f64) -> (Vec<f64>, Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let sim = self.sim.as_ref().expect("paired needs a simulation");
        let dt = if traj.len() > 1 { traj.times[1] - traj.times[0] } else { 1.0 };
        let mut times = Vec::new();
        let mut truth = Vec::new();
        let mut model = Vec::new();
        for (t, m) in sim.traj.times.iter().zip(&sim.moments) {
            if *t > until + 1e-9 {
                break;
            }
            let i = (t / dt).round() as usize;
            if i >= traj.len() || (traj.times[i] - t).abs() > 1e-6 * dt.max(1.0) {
                continue;
            }
            times.push(*t);
            truth.push(m.clone());
            model.push(traj.row(i));
        }
        (times, truth, model)
    }

    fn stage_bound(&mut self, files: &mut Vec<String>, diag: &mut Vec<String>) -> StageResult<StageStatus> {
        let bc = self.cfg.bound.clone().expect("planned stage has its table");
        let t_flow = self.cfg.flow.as_ref().expect("bound needs flow").t_end;
        let tracks = self.cfg.dynamics.tracks();
        for m in &self.cfg.models {
            let Some(traj) = self.flows.get(&m.name) else {
                diag.push(format!("model {}: no flow, bound skipped", m.name));
                continue;
            };
            let fitted = &self.fits[&m.name];
            let d = MomentBox::of_trajectory(traj)?.inflate(bc.box_inflation, 0.0);
            let mut rate = 0.0;
            let mut names = Vec::new();
            if let Some((lin, _)) = &fitted.linear {
                rate += log_norm_2(&lin.a)?;
                names.push("nu");
            }
            if let Some((q, _)) = &fitted.quadratic {
                rate += estimate_beta(q, &d)?;
                names.push("beta");
            }
            if let Some((l, _)) = &fitted.leader {
                rate += estimate_tau(l, &tracks, t_flow, bc.tau)?;
                names.push("tau");
            }
            let eps = combined_eps(
                fitted.linear.as_ref().map(|p| &p.1),
                fitted.quadratic.as_ref().map(|p| &p.1),
                fitted.leader.as_ref().map(|p| (&p.1, tracks.len())),
                bc.eps_inflation,
            );
            let (times, truth, model) = self.paired(traj, t_flow);
            let errors = Paired {
                times: &times,
                truth: &truth,
                model: &model,
            }
            .errors();
            // validity window: both trajectories inside the box, when beta is used
            let mut valid_until = times.last().copied().unwrap_or(0.0);
            if fitted.quadratic.is_some() {
                if let Some(i) = truth
                    .iter()
                    .zip(&model)
                    .position(|(a, b)| !d.contains(a.as_slice()) || !d.contains(b.as_slice()))
                {
                    valid_until = times[i.saturating_sub(1)];
                }
            }
            let dm0 = errors.first().copied().unwrap_or(0.0);
            let bound = ErrorBound::evaluate(&names.join("+"), rate, eps, 1.0, dm0, &times).truncate(Some(valid_until));
            write_bound_csv(&self.path(&format!("bound_{}.csv", m.name), files), &bound)?;
            let header = vec!["t".to_string(), "error".to_string()];
            write_csv(
                &self.path(&format!("error_{}.csv", m.name), files),
                &header,
                times.iter().zip(&errors).map(|(t, e)| vec![*t, *e]),
            )?;
            let mut violations = 0;
            let mut worst: f64 = 0.0;
            for (b, e) in bound.values.iter().zip(&errors) {
                if e > b {
                    violations += 1;
                }
                if *b > 0.0 {
                    worst = worst.max(e / b);
                }
            }
            self.report.bounds.insert(
                m.name.clone(),
                BoundSummary {
                    rate_name: bound.rate_name.clone(),
                    rate,
                    eps_total: eps,
                    valid_until,
                    checked: bound.values.len(),
                    violations,
                    worst_ratio: worst,
                },
            );
        }
        Ok(StageStatus::Ok)
    }

    fn moments_for(&self, source: &str, t: f64) -> StageResult<DVector<f64>> {
        if source == "true" {
            let sim = self.sim.as_ref().ok_or_else(|| RunError::Numeric("no simulation data".into()))?;
            let i = nearest(&sim.traj.times, t);
            Ok(sim.moments[i].clone())
        } else {
            let traj = self
                .flows
                .get(source)
                .ok_or_else(|| RunError::Numeric(format!("no flow for model {source}")))?;
            Ok(traj.at(t))
        }
    }

    fn agent_histogram(&self, grid: &CellGrid, t: f64) -> Option<GridMeasure> {
        let sim = self.sim.as_ref()?;
        let pts = sim.traj.at(t);
        let d = grid.shape.len();
        let mut counts = vec![0.0; grid.len()];
        for p in pts.iter() {
            let mut c = 0;
            for a in 0..d {
                let i = ((p[a] - grid.domain.lower()[a]) / grid.spacing(a)).floor();
                let i = (i.max(0.0) as usize).min(grid.shape[a] - 1);
                c = c * grid.shape[a] + i;
            }
            counts[c] += 1.0;
        }
        let scale = 1.0 / (pts.len() as f64 * grid.cell_volume());
        Some(GridMeasure {
            grid: grid.clone(),
            density: counts.into_iter().map(|c| c * scale).collect(),
        })
    }

    fn stage_reconstruct(&mut self, files: &mut Vec<String>, diag: &mut Vec<String>) -> StageResult<StageStatus> {
        let rc = self.cfg.reconstruction.clone().expect("planned stage has its table");
        let grid = CellGrid::new(&self.cfg.domain, &rc.cells)?;
        let mut sources = rc.sources.clone();
        sources.sort_by_key(|s| s != "true");
        for &t in &rc.times {
            let hist = self.agent_histogram(&grid, t);
            if let Some(h) = &hist {
                h.write_csv(&self.path(&format!("hist_{}.csv", time_tag(t)), files))?;
            }
            let mut true_density: Option<Vec<f64>> = None;
            for src in &sources {
                let m = self.moments_for(src, t)?;
                let res = match rc.method {
                    RecoMethod::Lp => reconstruct_tv_lp(m.as_slice(), &self.basis, &grid, rc.lambda)?,
                    RecoMethod::PrimalDual => reconstruct_tv(m.as_slice(), &self.basis, &grid, rc.lambda, &rc.solver)?,
                };
                if !res.converged {
                    diag.push(format!(
                        "{src} at t = {t}: stopped after {} iterations, gap {:e}",
                        res.iterations, res.duality_gap
                    ));
                }
                let file = format!("reco_{src}_{}.csv", time_tag(t));
                res.measure.write_csv(&self.path(&file, files))?;
                let vol = grid.cell_volume();
                let l1_to_true = true_density
                    .as_ref()
                    .filter(|_| src != "true")
                    .map(|td| normalized_l1(&res.measure.density, td, vol));
                let l1_to_agents = hist.as_ref().map(|h| normalized_l1(&res.measure.density, &h.density, vol));
                if src == "true" {
                    true_density = Some(res.measure.density.clone());
                }
                self.report.reconstructions.push(RecoSummary {
                    source: src.clone(),
                    time: t,
                    file,
                    epsilon: res.epsilon,
                    tv: res.tv_value,
                    mass: res.measure.total_mass(),
                    converged: res.converged,
                    iterations: res.iterations,
                    l1_to_true,
                    l1_to_agents,
                });
            }
        }
        Ok(StageStatus::Ok)
    }

    fn stage_massbounds(&mut self, files: &mut Vec<String>) -> StageResult<StageStatus> {
        let mc = self.cfg.massbounds.clone().expect("planned stage has its table");
        let grid = CellGrid::new(&self.cfg.domain, &mc.cells)?;
        let mut records = Vec::new();
        for src in &mc.sources {
            for &t in &mc.times {
                let m = self.moments_for(src, t)?;
                for omega in &mc.regions {
                    let result = mass_bounds(m.as_slice(), &self.basis, &grid, omega, &mc.options)?;
                    let agent_fraction = (src == "true").then(|| {
                        let pts = self.sim.as_ref().expect("true source has a simulation").traj.at(t);
                        pts.iter().filter(|p| omega.contains(p, 0.0)).count() as f64 / pts.len() as f64
                    });
                    records.push(MassBoundRecord {
                        source: src.clone(),
                        time: t,
                        result,
                        agent_fraction,
                    });
                }
            }
        }
        write_json(&self.path("massbounds.json", files), &records)?;
        self.report.massbounds = Some(records.len());
        Ok(StageStatus::Ok)
    }

    fn stage_convergence(&mut self, files: &mut Vec<String>) -> StageResult<StageStatus> {
        let cc = self.cfg.convergence.clone().expect("planned stage has its table");
        let mut doc = serde_json::Map::new();
        let mut pass = BTreeMap::new();
        let field = |text: &str| -> StageResult<Box<dyn Fn(f64) -> f64>> {
            let e = Expression::field(text, 1).map_err(RunError::from)?;
            Ok(Box::new(move |x: f64| {
                let mut out = [0.0];
                e.eval(&[x], &mut out);
                out[0]
            }))
        };
        if let Some(k_max) = cc.sandwich_k_max {
            let mut reports = Vec::new();
            for k in 1..=k_max {
                for n in 0..k {
                    reports.push(conv::verify_sandwich(k, n)?);
                }
            }
            pass.insert("sandwich".into(), reports.iter().all(|r| r.pass));
            doc.insert("sandwich".into(), json_value(&reports));
        }
        if let Some(n_max) = cc.chebyshev_n_max {
            let checks = conv::verify_chebyshev(n_max, 1e-8)?;
            pass.insert("chebyshev".into(), checks.iter().all(|c| c.pass));
            doc.insert("chebyshev".into(), json_value(&checks));
        }
        if let Some([k_max, n_max]) = cc.properties {
            let r = conv::verify_en_properties(k_max, n_max)?;
            pass.insert("properties".into(), r.pass);
            doc.insert("properties".into(), json_value(&r));
        }
        if let Some(k_max) = cc.identities_k_max {
            let checks = conv::verify_p_identities(k_max);
            pass.insert("identities".into(), checks.iter().all(|c| c.pass));
            doc.insert("identities".into(), json_value(&checks));
        }
        if let Some(dc) = &cc.decay {
            let f = field(&dc.field)?;
            let s = conv::theorem3_decay(f, 1..=dc.m_max, dc.ell)?;
            pass.insert("decay".into(), s.majorant_decreasing && !s.partial);
            doc.insert("decay".into(), json_value(&s));
        }
        if let Some(pc) = &cc.proposition {
            let terms = conv::proposition_decay(pc.ell, 2..=pc.m_max)?;
            let from3 = terms.iter().position(|t| t.m == 3).map_or(&terms[..0], |i| &terms[i..]);
            let decreasing = conv::strictly_decreasing(from3);
            pass.insert("proposition".into(), decreasing);
            doc.insert(
                "proposition".into(),
                serde_json::json!({ "terms": json_value(&terms), "strictly_decreasing_from_3": decreasing }),
            );
        }
        if let Some(dc) = &cc.divergence {
            let terms = conv::interval_divergence(0..=dc.n_max, dc.interval)?;
            pass.insert("divergence".into(), terms.iter().all(|t| t.converged && t.rel_diff <= 1e-6));
            doc.insert("divergence".into(), json_value(&terms));
        }
        if let Some(pc) = &cc.powell {
            let f = field(&pc.field)?;
            let checks = conv::verify_powell(f, pc.k, pc.derivative_sup, pc.n_min..=pc.n_max)?;
            pass.insert("powell".into(), checks.iter().all(|c| c.pass));
            doc.insert("powell".into(), json_value(&checks));
        }
        write_json(&self.path("convergence.json", files), &doc)?;
        self.report.convergence = pass;
        Ok(StageStatus::Ok)
    }

    /// Comparison and stability metrics for every integrated model.
    fn summarize_flows(&mut self) {
        let rc = self.cfg.report.clone();
        let mut summaries = BTreeMap::new();
        for (name, traj) in &self.flows {
            let t_end = *traj.times.last().unwrap_or(&0.0);
            let rows: Vec<DVector<f64>> = (0..traj.len()).map(|i| traj.row(i)).collect();
            let mut s = FlowSummary {
                t_end,
                sup_norm: sup_norm(&traj.times, &rows, 0.0, t_end).unwrap_or(0.0),
                ..Default::default()
            };
            if let Some(sim) = &self.sim {
                let until = rc
                    .compare_until
                    .unwrap_or_else(|| t_end.min(*sim.traj.times.last().unwrap_or(&0.0)));
                let (times, truth, model) = self.paired(traj, until);
                let p = Paired {
                    times: &times,
                    truth: &truth,
                    model: &model,
                };
                s.compare_until = Some(until);
                s.max_relative_error = Some(p.max_relative_error());
                s.rms_ratios = p.rms_ratios();
                s.max_rms_ratio = s.rms_ratios.iter().copied().reduce(f64::max);
            }
            if let Some(r) = rc.reference_end {
                s.reference_sup_norm = sup_norm(&traj.times, &rows, 0.0, r);
                let later = sup_norm(&traj.times, &rows, r, t_end);
                s.growth_ratio = s.reference_sup_norm.zip(later).map(|(a, b)| b / a);
            }
            if let Some([lo, hi]) = rc.oscillation_window {
                s.peak_to_peak = max_peak_to_peak(&traj.times, &rows, lo, hi);
            }
            summaries.insert(name.clone(), s);
        }
        let mut flags = Vec::new();
        for u in &self.cfg.models {
            if !self.report.fits.get(&u.name).is_some_and(|f| !f.constrained) {
                continue;
            }
            for c in &self.cfg.models {
                if !self.report.fits.get(&c.name).is_some_and(|f| f.constrained) {
                    continue;
                }
                let pu = summaries.get(&u.name).and_then(|s: &FlowSummary| s.peak_to_peak);
                let pc = summaries.get(&c.name).and_then(|s: &FlowSummary| s.peak_to_peak);
                if let (Some(pu), Some(pc)) = (pu, pc) {
                    let ratio = pu / pc;
                    flags.push(OscillationFlag {
                        unconstrained: u.name.clone(),
                        constrained: c.name.clone(),
                        peak_to_peak_unconstrained: pu,
                        peak_to_peak_constrained: pc,
                        ratio,
                        flagged: ratio > rc.oscillation_ratio,
                    });
                }
            }
        }
        self.report.flows = summaries;
        self.report.oscillation = flags;
    }

    pub fn true_moments(&self) -> Option<(&[f64], &[DVector<f64>])> {
        self.sim.as_ref().map(|s| (s.traj.times.as_slice(), s.moments.as_slice()))
    }

    pub fn basis(&self) -> &KernelBasis {
        &self.basis
    }
}

fn nearest(times: &[f64], t: f64) -> usize {
    times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .map_or(0, |(i, _)| i)
}
