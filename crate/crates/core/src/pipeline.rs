//! End-to-end runs shared by the CLI and the Python bindings.
//!
//! The pieces below the fold — training ([`crate::icnn`]), model building
//! ([`crate::compile`]), search ([`crate::solve`]), and exact-physics
//! restoration ([`crate::physics`]) — are glued together here into three
//! verbs: train a network's surrogate nets to files, plan operations, and
//! plan expansion. Each run produces a [`RunReport`] whose every number
//! traces to a solver or physics result.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::compile::{
    build_icnn_expansion, build_icnn_operational, build_miqp_relaxation, extract_solution,
    BuildOptions, CompileError, EnvelopePair, MipModel,
};
use crate::icnn::{
    enumerate_hyperplanes, screen_supporting, train_pair, Envelope, IcnnError, ReluNet,
    TargetKind, TrainConfig,
};
use crate::netmodel::{Mode, NetModelError, PlanningProblem};
use crate::physics::{residuals, restore_and_score, FlowState, PhysicsError};
use crate::report::{ExpansionSummary, RunReport, StateSummary};
use crate::solve::{solve_mip, MipConfig, MipStatus, SolveError};

/// Which MIP formulation a planning run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    /// Envelope indicator model (exact on the surrogate).
    Icnn,
    /// Tangent-cut relaxation with direction binaries.
    Miqp,
}

impl Formulation {
    pub fn as_str(self) -> &'static str {
        match self {
            Formulation::Icnn => "icnn",
            Formulation::Miqp => "miqp",
        }
    }
}

impl std::str::FromStr for Formulation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "icnn" => Ok(Formulation::Icnn),
            "miqp" => Ok(Formulation::Miqp),
            other => Err(format!("unknown formulation {other:?}; expected icnn or miqp")),
        }
    }
}

/// How a run sets the emission cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CapSetting {
    /// Keep whatever the network file says.
    FromNetwork,
    /// Drop any cap.
    Uncapped,
    /// Cap at this many kT/day.
    Value(f64),
}

impl CapSetting {
    /// Parse a CLI-style cap string: "inf" (any case) or a number.
    pub fn parse(text: &str) -> Result<Self, String> {
        let t = text.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(CapSetting::Uncapped);
        }
        match t.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(CapSetting::Value(v)),
            _ => Err(format!("cap must be a non-negative number or \"inf\", got {text:?}")),
        }
    }

    fn apply(self, cap: Option<f64>) -> Option<f64> {
        match self {
            CapSetting::FromNetwork => cap.filter(|c| c.is_finite()),
            CapSetting::Uncapped => None,
            CapSetting::Value(v) => Some(v),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("network model: {0}")]
    Model(#[from] NetModelError),
    #[error("training: {0}")]
    Train(#[from] IcnnError),
    #[error("compile: {0}")]
    Compile(#[from] CompileError),
    #[error("solve: {0}")]
    Solve(#[from] SolveError),
    #[error("physics: {0}")]
    Physics(#[from] PhysicsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("net file {path}: {reason}")]
    NetFile { path: String, reason: String },
    #[error("no trained net for {class}; retrain with matching domains")]
    MissingNet { class: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("the MIP admits no feasible point (solver status: {status})")]
    NoFeasiblePoint { status: String },
    #[error("feasibility restoration failed: {reason}")]
    RestorationFailed {
        reason: String,
        /// The report of everything up to the failed restoration, so callers
        /// can still show the solver's side of the run.
        report: Box<RunReport>,
    },
}

impl PipelineError {
    /// Process exit code for scripted use: 2 training divergence, 3 the MIP
    /// admits no feasible point, 4 restoration failure, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Train(IcnnError::TrainDiverged(_)) => 2,
            PipelineError::NoFeasiblePoint { .. } => 3,
            PipelineError::RestorationFailed { .. } => 4,
            _ => 1,
        }
    }
}

/// Training knobs exposed by the CLI; everything else follows
/// [`TrainConfig::new`] defaults.
#[derive(Debug, Clone, Copy)]
pub struct TrainSettings {
    /// Hidden-layer width, 1..=15.
    pub neurons: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let base = TrainConfig::new(vec![(0.0, 1.0)]);
        TrainSettings { neurons: base.hidden, epochs: base.epochs, seed: base.seed }
    }
}

/// Settings for one plan/expand run.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub formulation: Formulation,
    pub cap: CapSetting,
    /// Run Newton restoration on the MIP candidate and require an
    /// exact-physics feasible point.
    pub restore: bool,
    pub build: BuildOptions,
    pub mip: MipConfig,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            formulation: Formulation::Icnn,
            cap: CapSetting::FromNetwork,
            restore: true,
            build: BuildOptions::default(),
            mip: MipConfig::default(),
        }
    }
}

/// The solver configuration runs start from: library defaults, with the
/// `GASPLAN_TIME_LIMIT` environment variable (seconds) overriding the time
/// limit when set.
pub fn default_mip_config() -> Result<MipConfig, PipelineError> {
    let mut cfg = MipConfig::default();
    if let Ok(text) = std::env::var("GASPLAN_TIME_LIMIT") {
        let secs: f64 = text.trim().parse().map_err(|_| {
            PipelineError::Config(format!("GASPLAN_TIME_LIMIT must be seconds, got {text:?}"))
        })?;
        if !(secs > 0.0) {
            return Err(PipelineError::Config(format!(
                "GASPLAN_TIME_LIMIT must be positive, got {text:?}"
            )));
        }
        cfg.time_limit_secs = secs;
    }
    Ok(cfg)
}

/// Restoration (and validation) feasibility tolerance.
pub const RESTORE_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Trained-net sets
// ---------------------------------------------------------------------------

/// An ordered f64 pair usable as a BTreeSet key (bounds are finite by
/// network validation).
fn key(b: (f64, f64)) -> (u64, u64) {
    (b.0.to_bits(), b.1.to_bits())
}

/// Distinct pipe flow boxes, ascending.
pub fn scalar_domain_classes(problem: &PlanningProblem) -> Vec<(f64, f64)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut boxes: Vec<(f64, f64)> =
        problem.network.pipelines.iter().map(|p| (p.flow_min, p.flow_max)).collect();
    boxes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for b in boxes {
        if seen.insert(key(b)) {
            out.push(b);
        }
    }
    out
}

/// Distinct (flow box, diameter box) pairs, ascending.
pub fn dyn_domain_classes(problem: &PlanningProblem) -> Vec<[(f64, f64); 2]> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut boxes: Vec<[(f64, f64); 2]> = problem
        .network
        .pipelines
        .iter()
        .map(|p| [(p.flow_min, p.flow_max), (p.d_min(), p.d_max())])
        .collect();
    boxes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for b in boxes {
        if seen.insert((key(b[0]), key(b[1]))) {
            out.push(b);
        }
    }
    out
}

/// A set of trained nets, loaded from or destined for a directory of JSON
/// documents. Nets are matched to pipes by (target kind, exact domain box);
/// pipes with identical boxes share one net pair.
#[derive(Debug, Clone)]
pub struct NetSet {
    pub nets: Vec<ReluNet>,
}

impl NetSet {
    /// Train the full net set a problem needs: a convex/concave pair per
    /// distinct flow box, plus (expansion mode) a diameter-normalized pair
    /// per distinct (flow, diameter) box.
    pub fn train(problem: &PlanningProblem, s: &TrainSettings) -> Result<Self, PipelineError> {
        let mut nets = Vec::new();
        let train_one = |target: TargetKind,
                             domain: Vec<(f64, f64)>|
         -> Result<ReluNet, PipelineError> {
            let mut cfg = TrainConfig::new(domain);
            cfg.hidden = s.neurons;
            cfg.epochs = s.epochs;
            cfg.seed = s.seed;
            Ok(train_pair(target, &cfg)?)
        };
        for (lo, hi) in scalar_domain_classes(problem) {
            nets.push(train_one(TargetKind::ConvexPart, vec![(lo, hi)])?);
            nets.push(train_one(TargetKind::ConcavePart, vec![(lo, hi)])?);
        }
        if problem.mode == Mode::Expansion {
            for [fb, db] in dyn_domain_classes(problem) {
                nets.push(train_one(TargetKind::DynConvex, vec![fb, db])?);
                nets.push(train_one(TargetKind::DynConcave, vec![fb, db])?);
            }
        }
        Ok(NetSet { nets })
    }

    /// File name for a net: `{scalar|dyn}_{convex|concave}_c{class}.json`,
    /// where the class index counts domains of the same target kind in this
    /// set's order.
    fn file_name(target: TargetKind, class: usize) -> String {
        let stem = match target {
            TargetKind::ConvexPart => "scalar_convex",
            TargetKind::ConcavePart => "scalar_concave",
            TargetKind::DynConvex => "dyn_convex",
            TargetKind::DynConcave => "dyn_concave",
        };
        format!("{stem}_c{class}.json")
    }

    /// Write every net as pretty JSON into `dir` (created if needed);
    /// returns the paths written, in set order.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, PipelineError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut class_counter: std::collections::HashMap<&'static str, usize> =
            std::collections::HashMap::new();
        let mut paths = Vec::with_capacity(self.nets.len());
        for net in &self.nets {
            let kind_tag = match net.meta.target {
                TargetKind::ConvexPart => "sc+",
                TargetKind::ConcavePart => "sc-",
                TargetKind::DynConvex => "dy+",
                TargetKind::DynConcave => "dy-",
            };
            let class = class_counter.entry(kind_tag).or_insert(0);
            let path = dir.join(Self::file_name(net.meta.target, *class));
            *class += 1;
            let text = serde_json::to_string_pretty(net).map_err(|e| PipelineError::NetFile {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            std::fs::write(&path, text)?;
            paths.push(path);
        }
        Ok(paths)
    }

    /// Load every `*.json` in `dir` as a trained net (name-sorted for
    /// determinism).
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let dir = dir.as_ref();
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(PipelineError::Config(format!(
                "no net files (*.json) found in {}",
                dir.display()
            )));
        }
        let mut nets = Vec::with_capacity(files.len());
        for path in files {
            let text = std::fs::read_to_string(&path)?;
            let net: ReluNet =
                serde_json::from_str(&text).map_err(|e| PipelineError::NetFile {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
            nets.push(net);
        }
        Ok(NetSet { nets })
    }

    /// The net trained for exactly this target and domain box, if present.
    pub fn find(&self, target: TargetKind, domain: &[(f64, f64)]) -> Option<&ReluNet> {
        self.nets.iter().find(|n| n.meta.target == target && n.domain == domain)
    }

    fn envelope_for(
        &self,
        target: TargetKind,
        domain: &[(f64, f64)],
        pipe_id: &str,
    ) -> Result<Envelope, PipelineError> {
        let net = self.find(target, domain).ok_or_else(|| PipelineError::MissingNet {
            class: format!("pipe {pipe_id}: {target:?} on {domain:?}"),
        })?;
        let planes = enumerate_hyperplanes(net)?;
        Ok(screen_supporting(&planes, net.orientation, &net.domain))
    }

    /// Envelope pairs over each pipe's flow box, in pipe order.
    pub fn pairs_operational(
        &self,
        problem: &PlanningProblem,
    ) -> Result<Vec<EnvelopePair>, PipelineError> {
        problem
            .network
            .pipelines
            .iter()
            .map(|p| {
                let dom = [(p.flow_min, p.flow_max)];
                Ok(EnvelopePair {
                    convex: self.envelope_for(TargetKind::ConvexPart, &dom, &p.id)?,
                    concave: self.envelope_for(TargetKind::ConcavePart, &dom, &p.id)?,
                })
            })
            .collect()
    }

    /// Diameter-normalized envelope pairs over each pipe's (flow, diameter)
    /// box, in pipe order.
    pub fn pairs_expansion(
        &self,
        problem: &PlanningProblem,
    ) -> Result<Vec<EnvelopePair>, PipelineError> {
        problem
            .network
            .pipelines
            .iter()
            .map(|p| {
                let dom = [(p.flow_min, p.flow_max), (p.d_min(), p.d_max())];
                Ok(EnvelopePair {
                    convex: self.envelope_for(TargetKind::DynConvex, &dom, &p.id)?,
                    concave: self.envelope_for(TargetKind::DynConcave, &dom, &p.id)?,
                })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Plan / expand runs
// ---------------------------------------------------------------------------

/// Everything a run returns: the report plus the raw states behind it.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    /// The state decoded straight from the MIP assignment.
    pub candidate: FlowState,
    /// The Newton-restored exact-physics state, when restoration succeeded.
    pub restored: Option<FlowState>,
}

/// Operational planning: dispatch supplies under the (possibly overridden)
/// emission cap with fixed diameters.
pub fn run_plan(
    problem: &PlanningProblem,
    nets: &NetSet,
    settings: &RunSettings,
) -> Result<RunOutcome, PipelineError> {
    if problem.mode != Mode::Operational {
        return Err(PipelineError::Config(
            "plan requires an operational-mode network; use expand for expansion networks"
                .to_string(),
        ));
    }
    let problem = with_cap(problem, settings.cap)?;
    let model = build_for(&problem, nets, settings)?;
    run_model(&problem, &model, settings)
}

/// Expansion planning: choose diameters and dispatch together; the objective
/// adds the diameter cost. Only the envelope formulation supports the
/// diameter-normalized coupling.
pub fn run_expand(
    problem: &PlanningProblem,
    nets: &NetSet,
    settings: &RunSettings,
) -> Result<RunOutcome, PipelineError> {
    if problem.mode != Mode::Expansion {
        return Err(PipelineError::Config(
            "expand requires an expansion-mode network (diameter bounds on every pipe)"
                .to_string(),
        ));
    }
    let problem = with_cap(problem, settings.cap)?;
    let model = build_for(&problem, nets, settings)?;
    run_model(&problem, &model, settings)
}

/// Build (without solving) exactly the MIP a plan or expand run would solve,
/// with the cap override applied — the entry point for exporting models to
/// external solvers.
pub fn build_model(
    problem: &PlanningProblem,
    nets: &NetSet,
    settings: &RunSettings,
) -> Result<MipModel, PipelineError> {
    let problem = with_cap(problem, settings.cap)?;
    build_for(&problem, nets, settings)
}

/// Model construction for a problem that already carries its effective cap.
fn build_for(
    problem: &PlanningProblem,
    nets: &NetSet,
    settings: &RunSettings,
) -> Result<MipModel, PipelineError> {
    match (problem.mode, settings.formulation) {
        (Mode::Operational, Formulation::Icnn) => {
            let pairs = nets.pairs_operational(problem)?;
            Ok(build_icnn_operational(problem, &pairs, &settings.build)?)
        }
        (Mode::Operational, Formulation::Miqp) => {
            Ok(build_miqp_relaxation(problem, &settings.build)?)
        }
        (Mode::Expansion, Formulation::Icnn) => {
            let pairs = nets.pairs_expansion(problem)?;
            Ok(build_icnn_expansion(problem, &pairs, &settings.build)?)
        }
        (Mode::Expansion, Formulation::Miqp) => Err(PipelineError::Config(
            "the tangent-cut relaxation has no diameter-normalized form; \
             expansion runs require the envelope formulation"
                .to_string(),
        )),
    }
}

fn with_cap(
    problem: &PlanningProblem,
    cap: CapSetting,
) -> Result<PlanningProblem, PipelineError> {
    let mut p = problem.clone();
    p.emission_cap = cap.apply(p.emission_cap);
    Ok(p)
}

fn status_str(status: MipStatus) -> &'static str {
    match status {
        MipStatus::Optimal => "optimal",
        MipStatus::Infeasible => "infeasible",
        MipStatus::NodeLimit => "node_limit",
        MipStatus::TimeLimit => "time_limit",
    }
}

/// Diameter-change statistics and total build cost for one diameter vector.
fn expansion_summary(problem: &PlanningProblem, ds: &[f64]) -> ExpansionSummary {
    let deltas: Vec<f64> = ds
        .iter()
        .zip(&problem.network.pipelines)
        .map(|(d, p)| d - p.diameter)
        .collect();
    let mean = deltas.iter().sum::<f64>() / deltas.len().max(1) as f64;
    let max = deltas
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0);
    let cost = ds
        .iter()
        .zip(&problem.network.pipelines)
        .map(|(d, p)| d * p.expansion_cost)
        .sum::<f64>();
    ExpansionSummary {
        mean_diameter_change: mean,
        max_diameter_change: max,
        expansion_cost: cost,
    }
}

/// Solve a built model, decode, optionally restore, and assemble the report.
fn run_model(
    problem: &PlanningProblem,
    model: &MipModel,
    settings: &RunSettings,
) -> Result<RunOutcome, PipelineError> {
    let t0 = Instant::now();
    let sol = solve_mip(model, &settings.mip)?;
    let solve_seconds = t0.elapsed().as_secs_f64();

    let (Some(objective), Some(assignment)) = (sol.objective, sol.assignment.as_ref()) else {
        return Err(PipelineError::NoFeasiblePoint {
            status: status_str(sol.status).to_string(),
        });
    };
    let candidate = extract_solution(problem, model, assignment)?;
    let candidate_score = residuals(&problem.network, &candidate)?;

    let mode_str = match problem.mode {
        Mode::Operational => "operational",
        Mode::Expansion => "expansion",
    };
    let expansion =
        candidate.diameters.as_ref().map(|ds| expansion_summary(problem, ds));

    let mut report = RunReport {
        formulation: settings.formulation.as_str().to_string(),
        mode: mode_str.to_string(),
        emission_cap: problem.emission_cap,
        status: status_str(sol.status).to_string(),
        mip_objective: objective,
        best_bound: sol.best_bound,
        gap: sol.gap,
        nodes: sol.nodes_processed,
        solve_seconds,
        candidate: StateSummary::from(&candidate_score),
        restored: None,
        expansion,
        notes: Vec::new(),
    };

    if !settings.restore {
        return Ok(RunOutcome { report, candidate, restored: None });
    }

    match restore_and_score(problem, &candidate) {
        Ok((restored, score)) if score.is_feasible(RESTORE_TOL) => {
            report.restored = Some(StateSummary::from(&score));
            // Expansion restoration may widen diameters to fit the boxes;
            // report the build that would actually be installed.
            if let Some(ds) = restored.diameters.as_ref() {
                report.expansion = Some(expansion_summary(problem, ds));
            }
            Ok(RunOutcome { report, candidate, restored: Some(restored) })
        }
        Ok((_, score)) => Err(PipelineError::RestorationFailed {
            reason: format!(
                "restored point violates tolerances (mass {:.3e}, coupling {:.3e}, bounds {:.3e} > {RESTORE_TOL:.0e})",
                score.mass_residual_inf, score.weymouth_residual_inf, score.bound_violation_inf
            ),
            report: Box::new(report),
        }),
        Err(e) => Err(PipelineError::RestorationFailed {
            reason: e.to_string(),
            report: Box::new(report),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::load_problem;

    fn fixture(name: &str) -> PlanningProblem {
        load_problem(format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
    }

    fn quick_settings() -> TrainSettings {
        // Small nets keep MILPs tiny; approximation quality is tested
        // elsewhere at the real defaults.
        TrainSettings { neurons: 5, epochs: 150, seed: 3 }
    }

    #[test]
    fn cap_parsing_accepts_numbers_and_inf_only() {
        assert_eq!(CapSetting::parse("inf").unwrap(), CapSetting::Uncapped);
        assert_eq!(CapSetting::parse("Infinity").unwrap(), CapSetting::Uncapped);
        assert_eq!(CapSetting::parse(" 48.9 ").unwrap(), CapSetting::Value(48.9));
        assert!(CapSetting::parse("-3").is_err());
        assert!(CapSetting::parse("NaN").is_err());
        assert!(CapSetting::parse("sixty").is_err());
    }

    #[test]
    fn cap_setting_overrides_the_network_cap() {
        assert_eq!(CapSetting::FromNetwork.apply(Some(60.0)), Some(60.0));
        assert_eq!(CapSetting::FromNetwork.apply(Some(f64::INFINITY)), None);
        assert_eq!(CapSetting::Uncapped.apply(Some(60.0)), None);
        assert_eq!(CapSetting::Value(50.0).apply(None), Some(50.0));
    }

    #[test]
    fn training_covers_each_domain_class_once() {
        let problem = fixture("toy7.json");
        let set = NetSet::train(&problem, &quick_settings()).unwrap();
        // toy7 pipes share one flow box, so one convex/concave pair.
        assert_eq!(set.nets.len(), 2);
        assert_eq!(set.nets[0].meta.target, TargetKind::ConvexPart);
        assert_eq!(set.nets[1].meta.target, TargetKind::ConcavePart);

        let expansion = fixture("toy7_expansion.json");
        let set = NetSet::train(&expansion, &quick_settings()).unwrap();
        // Expansion adds the diameter-normalized pair: 2 scalar + 2 dyn.
        assert_eq!(set.nets.len(), 4);
        let dyn_count = set
            .nets
            .iter()
            .filter(|n| matches!(n.meta.target, TargetKind::DynConvex | TargetKind::DynConcave))
            .count();
        assert_eq!(dyn_count, 2);
    }

    #[test]
    fn save_then_load_round_trips_every_net() {
        let problem = fixture("toy7_expansion.json");
        let set = NetSet::train(&problem, &quick_settings()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = set.save_dir(dir.path()).unwrap();
        assert_eq!(paths.len(), 4);
        assert!(paths.iter().all(|p| p.exists()));
        let names: Vec<String> =
            paths.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert!(names.contains(&"scalar_convex_c0.json".to_string()));
        assert!(names.contains(&"dyn_concave_c0.json".to_string()));

        let loaded = NetSet::load_dir(dir.path()).unwrap();
        assert_eq!(loaded.nets.len(), 4);
        for net in &set.nets {
            let twin = loaded.find(net.meta.target, &net.domain).expect("net round-trips");
            assert_eq!(twin, net, "exact float round-trip through JSON");
        }
    }

    #[test]
    fn load_dir_rejects_foreign_json_and_empty_dirs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            NetSet::load_dir(dir.path()),
            Err(PipelineError::Config(msg)) if msg.contains("no net files")
        ));
        std::fs::write(dir.path().join("junk.json"), "{\"not\": \"a net\"}").unwrap();
        assert!(matches!(
            NetSet::load_dir(dir.path()),
            Err(PipelineError::NetFile { path, .. }) if path.contains("junk.json")
        ));
    }

    #[test]
    fn missing_nets_name_the_pipe_and_class() {
        let problem = fixture("toy7.json");
        let set = NetSet { nets: Vec::new() };
        let err = set.pairs_operational(&problem).unwrap_err();
        assert!(matches!(err, PipelineError::MissingNet { ref class } if class.contains("ConvexPart")));
    }

    #[test]
    fn plan_rejects_wrong_mode_and_expand_rejects_the_relaxation() {
        let operational = fixture("toy7.json");
        let expansion = fixture("toy7_expansion.json");
        let nets = NetSet { nets: Vec::new() };

        let err = run_plan(&expansion, &nets, &RunSettings::default()).unwrap_err();
        assert!(matches!(err, PipelineError::Config(ref m) if m.contains("operational-mode")));

        let err = run_expand(&operational, &nets, &RunSettings::default()).unwrap_err();
        assert!(matches!(err, PipelineError::Config(ref m) if m.contains("expansion-mode")));

        let miqp = RunSettings { formulation: Formulation::Miqp, ..RunSettings::default() };
        let err = run_expand(&expansion, &nets, &miqp).unwrap_err();
        assert!(matches!(err, PipelineError::Config(ref m) if m.contains("tangent-cut")));
    }

    #[test]
    fn time_limit_env_overrides_the_solver_config() {
        // Serialize access to the process environment within this test.
        std::env::set_var("GASPLAN_TIME_LIMIT", "12.5");
        let cfg = default_mip_config().unwrap();
        assert_eq!(cfg.time_limit_secs, 12.5);

        std::env::set_var("GASPLAN_TIME_LIMIT", "zero");
        assert!(matches!(default_mip_config(), Err(PipelineError::Config(_))));
        std::env::set_var("GASPLAN_TIME_LIMIT", "-1");
        assert!(matches!(default_mip_config(), Err(PipelineError::Config(_))));

        std::env::remove_var("GASPLAN_TIME_LIMIT");
        let cfg = default_mip_config().unwrap();
        assert_eq!(cfg.time_limit_secs, MipConfig::default().time_limit_secs);
    }

    #[test]
    fn plan_restores_toy7_within_tolerance_for_both_formulations() {
        let problem = fixture("toy7.json");
        let nets = NetSet::train(&problem, &quick_settings()).unwrap();
        for formulation in [Formulation::Icnn, Formulation::Miqp] {
            let settings = RunSettings { formulation, ..RunSettings::default() };
            let out = run_plan(&problem, &nets, &settings).unwrap();
            let restored = out.report.restored.as_ref().expect("restoration succeeds");
            assert!(restored.weymouth_residual_inf <= RESTORE_TOL);
            assert!(restored.mass_residual_inf <= RESTORE_TOL);
            assert!(restored.bound_violation_inf <= RESTORE_TOL);
            assert_eq!(out.report.formulation, formulation.as_str());
            assert_eq!(out.report.status, "optimal");
            // Dispatch optimum: 30 units at 45 plus 6 units at 85.
            assert!((out.report.mip_objective - 1860.0).abs() < 1.0);
            // Restoration keeps injections, so cost carries over exactly.
            assert!((restored.cost - out.report.candidate.cost).abs() < 1e-9);
            assert!(out.restored.is_some());
        }
    }

    #[test]
    fn infeasible_cap_reports_no_feasible_point() {
        let problem = fixture("toy7.json");
        let nets = NetSet::train(&problem, &quick_settings()).unwrap();
        // Total demand is 36 and the cleanest-possible mix still emits well
        // above 10 kT/day, so this cap is unreachable.
        let settings = RunSettings {
            cap: CapSetting::Value(10.0),
            formulation: Formulation::Miqp,
            ..RunSettings::default()
        };
        let err = run_plan(&problem, &nets, &settings).unwrap_err();
        assert!(matches!(
            err,
            PipelineError::NoFeasiblePoint { ref status } if status == "infeasible"
        ));
    }
}
