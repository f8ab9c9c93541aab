//! Config-driven front end: a TOML problem description plus the
//! `solve`, `superiorize` and `verify` commands.
//!
//! # Config format
//!
//! ```toml
//! ambient_dim = 2
//! seed = 7
//! start = [1.0, 1.0]
//! monitored = [0, 1]
//!
//! [family]
//! witness = [0.0, 0.0]
//! tail = "none"            # or "identity", "implied"
//! sets = [
//!   { type = "halfspace", a = [1.0, 0.0], b = 0.0 },
//!   { type = "ball", center = [0.0, 0.0], radius = 2.0, gamma = 0.8 },
//! ]
//!
//! [schedule]
//! kind = "cyclic"          # explicit | cyclic | power-of-two | gdsa | msa
//!
//! [[schedule.plans]]
//! steps = [{ n = 1, c = 0, J = [0], P = 1, alpha = 1.0 }]
//!
//! [relaxation]
//! eps = 0.5
//! sweep = 8                # or: lambda = 1.0
//!
//! [stop]
//! max_iters = 1000
//!
//! [output]
//! trace = "trace.csv"
//! ```
//!
//! Plan steps use the fields `n`, `c`, `J`, `P` and exactly one of `alpha`
//! (`c = 0`), `weights` (`c = 1`, aligned with `J` sorted ascending) or
//! `order` (`c = 2`). An entry `j <= 0` of `J` names the family operator
//! `-j`; a positive entry names an earlier step.
//!
//! `stop.patience` is how many consecutive iterations the residual or step
//! test must hold before stopping. It defaults to the cycle length for
//! cyclic schedules and to 1 otherwise.
//!
//! Other tables: `[schedule]` also takes `shape`, `alpha`, `anchors` (power
//! of two), `stages = [{ strings = [[0, 1], [2]], weights = [0.5, 0.5] }]`
//! (gdsa) and `windows = { uniform = 3, power_of_two_from = 4, explicit = [[n, M]] }`.
//! `[perturbation]` takes `c`, `p`, `direction` (`away-from-witness`,
//! `random`, `fixed`) and `vector`. `[objective]` is a tagged record
//! (`linear`, `squared-distance`, `max-affine`, `constant`) with an optional
//! `argmin` list; `[superiorization]` takes `inner`, `form`, `c`, `p` and
//! `zero_tol`; `[verify]` takes `samples`, `radius`, `rho_scale`, `plans`,
//! `horizon` and `indices`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::control::{verify_admissible, ControlSchedule, PowerShape};
use crate::dsa::{gdsa_to_gmsa, msa_embed, StringSpec, StringStage};
use crate::error::{Error, Result};
use crate::gmsa::{
    fne_bound, output_operator, sqne_bound, validate_plan, IterationPlan, LemmaHypotheses, StepSpec,
};
use crate::numeric::{Tolerance, Vector};
use crate::operators::{check_fne, check_nonexpansive, check_sqne, SampleBudget};
use crate::sets::{implied_halfspace_family, Leaf, OperatorFamily, ProjectableSet, SetKind};
use crate::solver::{
    check_fejer, run, run_perturbed, BetaRule, DirectionRule, LambdaRule, PerturbationSchedule,
    RelaxationSchedule, RunOptions, StopReason, StopRule, Trace,
};
use crate::superiorize::{
    alternatives_diagnostic, run_superiorized, Alternative, AlternativesOptions, BetaForm,
    BetaGrid, Builtin, ObjectiveOracle, ZERO_TOL,
};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Error = 1,
    IterationCap = 2,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    fn of(reason: StopReason) -> Self {
        match reason {
            StopReason::MaxIters => ExitStatus::IterationCap,
            _ => ExitStatus::Success,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    ambient_dim: usize,
    #[serde(default)]
    seed: u64,
    start: Option<Vec<f64>>,
    #[serde(default)]
    monitored: Vec<usize>,
    family: RawFamily,
    schedule: RawSchedule,
    relaxation: RawRelaxation,
    perturbation: Option<RawPerturbation>,
    objective: Option<RawObjective>,
    superiorization: Option<RawGrid>,
    #[serde(default)]
    stop: RawStop,
    #[serde(default)]
    output: RawOutput,
    #[serde(default)]
    verify: RawVerify,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFamily {
    witness: Vec<f64>,
    sets: Vec<RawSet>,
    #[serde(default)]
    tail: Tail,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Tail {
    #[default]
    None,
    Identity,
    Implied,
}

#[derive(Debug, Deserialize)]
struct RawSet {
    #[serde(flatten)]
    kind: SetKind,
    gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ScheduleKind {
    Explicit,
    Cyclic,
    PowerOfTwo,
    Gdsa,
    Msa,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    kind: ScheduleKind,
    #[serde(default)]
    plans: Vec<RawPlan>,
    shape: Option<RawShape>,
    alpha: Option<f64>,
    #[serde(default)]
    anchors: Vec<usize>,
    #[serde(default)]
    stages: Vec<RawStage>,
    windows: Option<RawWindows>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    eps: Option<f64>,
    steps: Vec<StepSpec>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawShape {
    Relax,
    Average,
    Compose,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    strings: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWindows {
    uniform: Option<usize>,
    power_of_two_from: Option<usize>,
    #[serde(default)]
    explicit: Vec<(usize, usize)>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRelaxation {
    eps: f64,
    rho: Option<f64>,
    lambda: Option<f64>,
    sweep: Option<usize>,
    #[serde(default)]
    permissive: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerturbation {
    c: f64,
    #[serde(default = "two")]
    p: f64,
    #[serde(default)]
    direction: RawDirection,
    vector: Option<Vec<f64>>,
}

#[derive(Debug, Default, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawDirection {
    #[default]
    AwayFromWitness,
    Random,
    Fixed,
}

#[derive(Debug, Deserialize)]
struct RawObjective {
    #[serde(flatten)]
    builtin: Builtin,
    #[serde(default)]
    argmin: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(default = "one")]
    inner: usize,
    #[serde(default)]
    form: RawForm,
    #[serde(default = "onef")]
    c: f64,
    #[serde(default = "two")]
    p: f64,
    zero_tol: Option<f64>,
}

#[derive(Debug, Default, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawForm {
    #[default]
    Geometric,
    Polynomial,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStop {
    #[serde(default = "max_iters")]
    max_iters: usize,
    #[serde(default = "residual_tol")]
    residual_tol: Option<f64>,
    #[serde(default = "step_tol")]
    step_tol: Option<f64>,
    patience: Option<usize>,
}

impl Default for RawStop {
    fn default() -> Self {
        let s = StopRule::default();
        RawStop {
            max_iters: s.max_iters,
            residual_tol: s.residual_tol,
            step_tol: s.step_tol,
            patience: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    trace: Option<PathBuf>,
    #[serde(default = "one")]
    stride: usize,
}

impl Default for RawOutput {
    fn default() -> Self {
        RawOutput {
            trace: None,
            stride: 1,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVerify {
    #[serde(default = "samples")]
    samples: usize,
    #[serde(default = "radius")]
    radius: f64,
    #[serde(default = "onef")]
    rho_scale: f64,
    #[serde(default = "plans")]
    plans: usize,
    #[serde(default = "horizon")]
    horizon: usize,
    indices: Option<Vec<usize>>,
}

impl Default for RawVerify {
    fn default() -> Self {
        RawVerify {
            samples: samples(),
            radius: radius(),
            rho_scale: 1.0,
            plans: plans(),
            horizon: horizon(),
            indices: None,
        }
    }
}

fn one() -> usize {
    1
}
fn onef() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn max_iters() -> usize {
    StopRule::default().max_iters
}
fn residual_tol() -> Option<f64> {
    StopRule::default().residual_tol
}
fn step_tol() -> Option<f64> {
    StopRule::default().step_tol
}
fn samples() -> usize {
    500
}
fn radius() -> f64 {
    10.0
}
fn plans() -> usize {
    16
}
fn horizon() -> usize {
    200
}

/// Settings for `verify`.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifySettings {
    pub samples: usize,
    pub radius: f64,
    /// Multiplies the plan-derived moduli before checking; values above 1
    /// should make the checks fail.
    pub rho_scale: f64,
    /// How many leading plans to check for the operator constants.
    pub plans: usize,
    pub horizon: usize,
    pub indices: Vec<usize>,
}

/// A fully built and validated problem.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub ambient_dim: usize,
    pub seed: u64,
    pub start: Vector,
    pub family: OperatorFamily,
    pub schedule: ControlSchedule,
    pub relaxation: RelaxationSchedule,
    pub perturbation: Option<PerturbationSchedule>,
    pub objective: Option<ObjectiveOracle>,
    pub grid: BetaGrid,
    pub zero_tol: f64,
    pub stop: StopRule,
    pub monitored: Vec<usize>,
    pub trace_path: Option<PathBuf>,
    pub stride: usize,
    pub verify: VerifySettings,
}

impl RunConfig {
    pub fn run_options(&self) -> RunOptions {
        RunOptions::new(self.stop.clone())
            .monitor(self.monitored.iter().copied())
            .stride(self.stride)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub stride: Option<usize>,
    pub horizon: Option<usize>,
    pub indices: Option<Vec<usize>>,
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &Overrides::default())
}

/// Parses and validates a config. Syntax errors carry a line and column;
/// semantic errors are collected and reported together, one per line, each
/// prefixed by its field path.
pub fn parse_config_with(text: &str, over: &Overrides) -> Result<RunConfig> {
    let mut raw: RawConfig = toml::from_str(text).map_err(|e| syntax_error(text, &e))?;
    if let Some(s) = over.seed {
        raw.seed = s;
    }
    let mut errs = Errors::default();
    let built = build(&raw, over, &mut errs);
    match (built, errs.0.is_empty()) {
        (Some(cfg), true) => Ok(cfg),
        _ => Err(Error::Config(errs.0.join("\n"))),
    }
}

fn syntax_error(text: &str, e: &toml::de::Error) -> Error {
    let msg = e.message().trim().to_string();
    match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            Error::Config(format!("syntax error at line {line}, column {col}: {msg}"))
        }
        None => Error::Config(format!("syntax error: {msg}")),
    }
}

#[derive(Default)]
struct Errors(Vec<String>);

impl Errors {
    fn push(&mut self, path: impl AsRef<str>, msg: impl std::fmt::Display) {
        self.0.push(format!("{}: {msg}", path.as_ref()));
    }

    fn check<T>(&mut self, path: impl AsRef<str>, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.push(path, e);
                None
            }
        }
    }

    fn vector(&mut self, path: &str, coords: &[f64], dim: usize) -> Option<Vector> {
        let v = self.check(path, Vector::new(coords.to_vec()))?;
        if v.dim() != dim {
            self.push(
                path,
                format!("expected {dim} coordinates, found {}", v.dim()),
            );
            return None;
        }
        Some(v)
    }
}

fn build(raw: &RawConfig, over: &Overrides, errs: &mut Errors) -> Option<RunConfig> {
    let dim = raw.ambient_dim;
    if dim == 0 {
        errs.push("ambient_dim", "must be positive");
        return None;
    }
    let eps = raw.relaxation.eps;
    if !(eps > 0.0 && eps <= 1.0) {
        errs.push("relaxation.eps", format!("{eps} outside (0, 1]"));
    }
    let witness = errs.vector("family.witness", &raw.family.witness, dim);
    let leaves = build_leaves(&raw.family, witness.as_ref(), dim, errs);
    let start = match &raw.start {
        Some(s) => errs.vector("start", s, dim),
        None => Some(Vector::zeros(dim)),
    };
    let plans = build_plans(&raw.schedule, eps, errs);

    let (family, schedule) = match (witness, leaves, plans) {
        (Some(w), Some(leaves), Some(plans)) => {
            build_problem(raw, w, leaves, plans, eps, errs).unzip()
        }
        _ => (None, None),
    };
    let relaxation = schedule
        .as_ref()
        .and_then(|s| build_relaxation(&raw.relaxation, s, errs));
    let perturbation = raw
        .perturbation
        .as_ref()
        .and_then(|p| build_perturbation(p, raw.seed, dim, errs).map(Some))
        .unwrap_or(None);
    let objective = raw
        .objective
        .as_ref()
        .and_then(|o| build_objective(o, dim, errs));
    let (grid, zero_tol) = build_grid(raw.superiorization.as_ref(), errs)?;

    if raw.stop.max_iters == 0 {
        errs.push("stop.max_iters", "must be positive");
    }
    if raw.stop.patience == Some(0) {
        errs.push("stop.patience", "must be positive");
    }
    for (name, t) in [
        ("stop.residual_tol", raw.stop.residual_tol),
        ("stop.step_tol", raw.stop.step_tol),
    ] {
        if t.is_some_and(|t| !(t >= 0.0 && t.is_finite())) {
            errs.push(name, "must be a finite nonnegative number");
        }
    }
    let patience = raw
        .stop
        .patience
        .or_else(|| schedule.as_ref()?.cycle_len())
        .unwrap_or(1);
    let stride = over.stride.unwrap_or(raw.output.stride);
    if stride == 0 {
        errs.push("output.stride", "must be positive");
    }
    let v = &raw.verify;
    if !(v.radius > 0.0 && v.radius.is_finite()) {
        errs.push("verify.radius", "must be positive");
    }
    if !(v.rho_scale >= 0.0 && v.rho_scale.is_finite()) {
        errs.push("verify.rho_scale", "must be nonnegative");
    }
    if v.samples == 0 {
        errs.push("verify.samples", "must be positive");
    }
    let verify = VerifySettings {
        samples: v.samples,
        radius: v.radius,
        rho_scale: v.rho_scale,
        plans: v.plans.max(1),
        horizon: over.horizon.unwrap_or(v.horizon),
        indices: over
            .indices
            .clone()
            .or_else(|| v.indices.clone())
            .unwrap_or_else(|| (0..raw.family.sets.len()).collect()),
    };

    let family = family?;
    for (i, &n) in raw.monitored.iter().enumerate() {
        if let Err(e) = family.operator(n) {
            errs.push(format!("monitored[{i}]"), e);
        }
    }
    Some(RunConfig {
        ambient_dim: dim,
        seed: raw.seed,
        start: start?,
        family,
        schedule: schedule?,
        relaxation: relaxation?,
        perturbation,
        objective: if raw.objective.is_some() {
            Some(objective?)
        } else {
            None
        },
        grid,
        zero_tol,
        stop: StopRule {
            max_iters: raw.stop.max_iters,
            residual_tol: raw.stop.residual_tol,
            step_tol: raw.stop.step_tol,
            patience,
        },
        monitored: raw.monitored.clone(),
        trace_path: over.out.clone().or_else(|| raw.output.trace.clone()),
        stride,
        verify,
    })
}

fn build_leaves(
    raw: &RawFamily,
    witness: Option<&Vector>,
    dim: usize,
    errs: &mut Errors,
) -> Option<Vec<Leaf>> {
    if raw.sets.is_empty() {
        errs.push("family.sets", "at least one set is required");
        return None;
    }
    let tol = Tolerance::default();
    let mut out = Vec::new();
    let mut ok = true;
    for (i, s) in raw.sets.iter().enumerate() {
        let path = format!("family.sets[{i}]");
        let Some(set) = errs.check(&path, ProjectableSet::from_kind(s.kind.clone())) else {
            ok = false;
            continue;
        };
        if set.dim() != dim {
            errs.push(
                &path,
                format!("set lives in dimension {}, expected {dim}", set.dim()),
            );
            ok = false;
            continue;
        }
        if let Some(w) = witness {
            if !set.contains(w, &tol).unwrap_or(false) {
                errs.push(&path, "the witness lies outside this set");
                ok = false;
            }
        }
        let gamma = s.gamma.unwrap_or(1.0);
        if !(gamma > 0.0 && gamma <= crate::sets::MAX_LEAF_GAMMA) {
            errs.push(format!("{path}.gamma"), format!("{gamma} outside (0, 4/3]"));
            ok = false;
            continue;
        }
        out.push(Leaf::relaxed(set, gamma));
    }
    ok.then_some(out)
}

fn build_plans(raw: &RawSchedule, eps: f64, errs: &mut Errors) -> Option<Vec<IterationPlan>> {
    let mut out = Vec::new();
    let mut ok = true;
    for (i, p) in raw.plans.iter().enumerate() {
        let plan = IterationPlan {
            k: i,
            eps: p.eps.unwrap_or(eps),
            steps: p.steps.clone(),
            hypotheses: LemmaHypotheses::default(),
        };
        let report = validate_plan(&plan);
        for v in &report.violations {
            errs.push(format!("schedule.plans[{i}]"), v);
        }
        ok &= report.is_valid();
        out.push(plan);
    }
    ok.then_some(out)
}

fn build_problem(
    raw: &RawConfig,
    witness: Vector,
    leaves: Vec<Leaf>,
    plans: Vec<IterationPlan>,
    eps: f64,
    errs: &mut Errors,
) -> Option<(OperatorFamily, ControlSchedule)> {
    let s = &raw.schedule;
    let needs_plans = matches!(
        s.kind,
        ScheduleKind::Explicit | ScheduleKind::Cyclic | ScheduleKind::Msa
    );
    if needs_plans && plans.is_empty() {
        errs.push(
            "schedule.plans",
            "this schedule kind needs at least one plan",
        );
        return None;
    }
    if s.kind == ScheduleKind::Msa {
        if raw.family.tail != Tail::None {
            errs.push(
                "family.tail",
                "msa schedules pad the family with identities themselves",
            );
            return None;
        }
        let (fam, sched) = errs.check("schedule", msa_embed(leaves, witness, plans))?;
        return Some((fam, with_windows(sched, s.windows.as_ref())));
    }
    let family = match raw.family.tail {
        Tail::None => OperatorFamily::finite(leaves, witness),
        Tail::Identity => OperatorFamily::padded_with_identity(leaves, witness),
        Tail::Implied => {
            let mut base = Vec::new();
            for (i, l) in leaves.iter().enumerate() {
                match (l.set().map(ProjectableSet::kind), l.gamma()) {
                    (Some(SetKind::Halfspace { a, b }), Some(1.0)) => base.push((a.clone(), *b)),
                    _ => errs.push(
                        format!("family.sets[{i}]"),
                        "an implied tail needs unrelaxed halfspaces only",
                    ),
                }
            }
            if base.len() != leaves.len() {
                return None;
            }
            errs.check("family", implied_halfspace_family(base, witness, raw.seed))?
        }
    };
    let schedule = match s.kind {
        ScheduleKind::Explicit => ControlSchedule::explicit(plans),
        ScheduleKind::Cyclic => ControlSchedule::cyclic(plans),
        ScheduleKind::PowerOfTwo => {
            let shape = match s.shape.unwrap_or(RawShape::Relax) {
                RawShape::Relax => PowerShape::Relax {
                    alpha: s.alpha.unwrap_or(1.0),
                },
                RawShape::Average => PowerShape::Average {
                    anchors: s.anchors.clone(),
                },
                RawShape::Compose => PowerShape::Compose {
                    anchors: s.anchors.clone(),
                },
            };
            ControlSchedule::power_of_two(shape, eps)
        }
        ScheduleKind::Gdsa => {
            if s.stages.is_empty() {
                errs.push("schedule.stages", "gdsa schedules need at least one stage");
                return None;
            }
            let mut plans = Vec::new();
            for (i, st) in s.stages.iter().enumerate() {
                let path = format!("schedule.stages[{i}]");
                if st.strings.len() != st.weights.len() {
                    errs.push(&path, "strings and weights differ in length");
                    continue;
                }
                let stage = st
                    .strings
                    .iter()
                    .zip(&st.weights)
                    .map(|(t, &w)| Ok((StringSpec::new(t.clone())?, w)))
                    .collect::<Result<Vec<_>>>()
                    .and_then(|strings| StringStage::new(i, eps, strings))
                    .and_then(|stage| gdsa_to_gmsa(&stage));
                if let Some(p) = errs.check(&path, stage) {
                    plans.push(p);
                }
            }
            if plans.len() != s.stages.len() {
                return None;
            }
            ControlSchedule::cyclic(plans)
        }
        ScheduleKind::Msa => unreachable!("handled above"),
    };
    let schedule = errs.check("schedule", schedule)?;
    Some((family, with_windows(schedule, s.windows.as_ref())))
}

fn with_windows(schedule: ControlSchedule, raw: Option<&RawWindows>) -> ControlSchedule {
    let Some(w) = raw else {
        return schedule;
    };
    let mut bounds = schedule.windows.clone();
    bounds.explicit.extend(w.explicit.iter().copied());
    if w.uniform.is_some() {
        bounds.uniform = w.uniform;
    }
    if w.power_of_two_from.is_some() {
        bounds.power_of_two_from = w.power_of_two_from;
    }
    schedule.with_windows(bounds)
}

fn build_relaxation(
    raw: &RawRelaxation,
    schedule: &ControlSchedule,
    errs: &mut Errors,
) -> Option<RelaxationSchedule> {
    let rule = match (raw.lambda, raw.sweep) {
        (Some(l), None) => LambdaRule::Constant(l),
        (None, Some(period)) => LambdaRule::Sweep { period },
        _ => {
            errs.push("relaxation", "set exactly one of lambda or sweep");
            return None;
        }
    };
    let r = if raw.permissive {
        RelaxationSchedule::permissive(rule, raw.eps)
    } else if let Some(rho) = raw.rho {
        RelaxationSchedule::new(rule, raw.eps, rho)
    } else {
        RelaxationSchedule::for_schedule(rule, raw.eps, schedule)
    };
    errs.check("relaxation", r)
}

fn build_perturbation(
    raw: &RawPerturbation,
    seed: u64,
    dim: usize,
    errs: &mut Errors,
) -> Option<PerturbationSchedule> {
    let direction = match raw.direction {
        RawDirection::AwayFromWitness => DirectionRule::AwayFromWitness,
        RawDirection::Random => DirectionRule::SeededRandom { seed },
        RawDirection::Fixed => match &raw.vector {
            Some(v) => DirectionRule::Fixed(errs.vector("perturbation.vector", v, dim)?),
            None => {
                errs.push("perturbation.vector", "a fixed direction needs a vector");
                return None;
            }
        },
    };
    errs.check(
        "perturbation",
        PerturbationSchedule::new(BetaRule::Summable { c: raw.c, p: raw.p }, direction),
    )
}

fn build_objective(raw: &RawObjective, dim: usize, errs: &mut Errors) -> Option<ObjectiveOracle> {
    let oracle = errs.check("objective", ObjectiveOracle::builtin(raw.builtin.clone()))?;
    let bad_dim = match &raw.builtin {
        Builtin::Linear { c } => c.dim() != dim,
        Builtin::SquaredDistance { target } => target.dim() != dim,
        Builtin::MaxAffine { slopes, .. } => slopes.iter().any(|a| a.dim() != dim),
        Builtin::Constant { .. } => false,
    };
    if bad_dim {
        errs.push(
            "objective",
            format!("coefficients must have {dim} coordinates"),
        );
        return None;
    }
    let mut argmin = Vec::new();
    for (i, z) in raw.argmin.iter().enumerate() {
        argmin.push(errs.vector(&format!("objective.argmin[{i}]"), z, dim)?);
    }
    Some(oracle.with_argmin(argmin))
}

fn build_grid(raw: Option<&RawGrid>, errs: &mut Errors) -> Option<(BetaGrid, f64)> {
    let default = RawGrid {
        inner: 1,
        form: RawForm::Geometric,
        c: 1.0,
        p: 2.0,
        zero_tol: None,
    };
    let g = raw.unwrap_or(&default);
    let form = match g.form {
        RawForm::Geometric => BetaForm::Geometric { c: g.c },
        RawForm::Polynomial => BetaForm::Polynomial { c: g.c, p: g.p },
    };
    let zero_tol = g.zero_tol.unwrap_or(ZERO_TOL);
    if zero_tol.is_nan() || zero_tol < 0.0 {
        errs.push("superiorization.zero_tol", "must be nonnegative");
    }
    match BetaGrid::new(g.inner, form) {
        Ok(grid) => Some((grid, zero_tol)),
        Err(e) => {
            errs.push("superiorization", e);
            // keep validating the rest of the document
            Some((
                BetaGrid {
                    inner: 1,
                    form: BetaForm::Geometric { c: 0.0 },
                },
                zero_tol,
            ))
        }
    }
}

fn line(out: &mut dyn Write, key: &str, value: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{key}: {value}")?;
    Ok(())
}

fn fmt_point(v: &Vector) -> String {
    let parts: Vec<String> = v.as_slice().iter().map(|x| format!("{x:e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn report_run(cfg: &RunConfig, trace: &Trace, out: &mut dyn Write) -> Result<()> {
    line(out, "iterations", trace.iterations())?;
    line(out, "stop_reason", trace.stop_reason)?;
    line(
        out,
        "final_residual",
        format!("{:e}", trace.last().residual),
    )?;
    line(out, "final_point", fmt_point(&trace.final_point))?;
    for (n, d) in cfg.monitored.iter().zip(&trace.last().set_distances) {
        line(out, &format!("distance_{n}"), format!("{d:e}"))?;
    }
    match cfg.relaxation.fejer_constant() {
        // the estimate governs unperturbed steps only
        _ if trace.perturbed => line(out, "fejer", "skipped (perturbed run)")?,
        Some(c) => {
            let tol = Tolerance::absolute(1e-9);
            let r = check_fejer(trace, &cfg.family, &trace.witness, c, &tol)?;
            let verdict = match r.first_violation {
                None => "pass".to_string(),
                Some(k) => format!("fail at k = {k}"),
            };
            line(out, "fejer", verdict)?;
            line(out, "fejer_min_slack", format!("{:e}", r.min_slack))?;
        }
        None => line(out, "fejer", "skipped (permissive relaxation)")?,
    }
    Ok(())
}

fn write_trace(cfg: &RunConfig, trace: &Trace, out: &mut dyn Write) -> Result<()> {
    match &cfg.trace_path {
        Some(p) => {
            trace.write_csv(p)?;
            line(out, "trace", p.display())
        }
        None => line(out, "trace", "(not written)"),
    }
}

/// Runs the feasibility iteration, with the configured perturbations if any.
pub fn cmd_solve(cfg: &RunConfig, out: &mut dyn Write) -> Result<ExitStatus> {
    let opts = cfg.run_options();
    let trace = match &cfg.perturbation {
        Some(p) => run_perturbed(
            &cfg.family,
            &cfg.schedule,
            &cfg.relaxation,
            p,
            &cfg.start,
            &opts,
        )?,
        None => run(
            &cfg.family,
            &cfg.schedule,
            &cfg.relaxation,
            &cfg.start,
            &opts,
        )?,
    };
    line(out, "command", "solve")?;
    report_run(cfg, &trace, out)?;
    write_trace(cfg, &trace, out)?;
    Ok(ExitStatus::of(trace.stop_reason))
}

/// Runs the superiorized iteration next to the plain one from the same start
/// and compares the objective at both end points.
pub fn cmd_superiorize(cfg: &RunConfig, out: &mut dyn Write) -> Result<ExitStatus> {
    let oracle = cfg
        .objective
        .as_ref()
        .ok_or_else(|| Error::Config("objective: superiorize needs an [objective] table".into()))?;
    let opts = cfg.run_options();
    let sup = run_superiorized(
        &cfg.family,
        &cfg.schedule,
        &cfg.relaxation,
        oracle,
        &cfg.grid,
        &cfg.start,
        &opts,
        cfg.zero_tol,
    )?;
    let plain = run(
        &cfg.family,
        &cfg.schedule,
        &cfg.relaxation,
        &cfg.start,
        &opts,
    )?;
    let (fs, fp) = (
        oracle.value(&sup.final_point)?,
        oracle.value(&plain.final_point)?,
    );
    line(out, "command", "superiorize")?;
    report_run(cfg, &sup, out)?;
    line(out, "phi_superiorized", format!("{fs:e}"))?;
    line(out, "phi_plain", format!("{fp:e}"))?;
    line(out, "phi_gain", format!("{:e}", fp - fs))?;
    line(out, "plain_iterations", plain.iterations())?;
    line(
        out,
        "limit_gap",
        format!("{:e}", sup.final_point.dist(&plain.final_point)),
    )?;
    if !oracle.argmin_witnesses.is_empty() {
        let verdict = match sup.points() {
            Ok(_) => {
                match alternatives_diagnostic(&sup, oracle, &AlternativesOptions::default())? {
                    Alternative::Alternative1 { witness, .. } => {
                        format!("alternative-1 (witness {witness})")
                    }
                    Alternative::Alternative2 { k0 } => format!("alternative-2 (k0 = {k0})"),
                    Alternative::Inconclusive { reason, .. } => format!("inconclusive ({reason})"),
                }
            }
            Err(_) => "unavailable (trace thinned by stride)".into(),
        };
        line(out, "alternatives", verdict)?;
    }
    write_trace(cfg, &sup, out)?;
    Ok(ExitStatus::of(sup.stop_reason))
}

/// Scans the control windows and samples the operator inequalities at the
/// moduli the plans promise. Exits with [`ExitStatus::Error`] when a check fails.
pub fn cmd_verify(cfg: &RunConfig, out: &mut dyn Write) -> Result<ExitStatus> {
    let v = &cfg.verify;
    let mut all = true;
    line(out, "command", "verify")?;
    line(out, "horizon", v.horizon)?;
    let indices: BTreeSet<usize> = v.indices.iter().copied().collect();
    line(out, "indices", format!("{:?}", indices))?;
    match verify_admissible(&cfg.schedule, v.horizon, &indices) {
        Ok(r) => {
            let windows: usize = r.checked.iter().map(|c| c.2).sum();
            line(out, "windows_checked", windows)?;
            match r.first_violation {
                None => line(out, "admissible", "pass")?,
                Some((n, i)) => {
                    all = false;
                    let m = cfg.schedule.windows.bound(n).unwrap_or(0);
                    line(
                        out,
                        "admissible",
                        format!(
                            "fail (index {n} missing from iterations {i}..={})",
                            i + m - 1
                        ),
                    )?;
                }
            }
        }
        Err(e) => {
            all = false;
            line(out, "admissible", format!("fail ({e})"))?;
        }
    }

    let tol = Tolerance::absolute(1e-9);
    let witness = cfg.family.witness().clone();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for k in 0..v.plans.min(v.horizon + 1) {
        let plan = cfg.schedule.plan_at(k)?;
        let key = format!("{:?}", plan.steps);
        if seen.insert(key, k).is_some() {
            continue;
        }
        let hyp = LemmaHypotheses::infer(&plan, &cfg.family)?;
        let plan = plan.with_hypotheses(hyp);
        let node = output_operator(&plan, &cfg.family)?;
        let budget = SampleBudget::new(v.samples, cfg.seed.wrapping_add(k as u64), v.radius);
        if hyp.sqne {
            let rho = sqne_bound(&plan)? * v.rho_scale;
            let r = check_sqne(
                &node,
                rho,
                &witness,
                &budget.clone().centered_at(witness.clone()),
                &tol,
            )?;
            all &= r.passed;
            line(
                out,
                &format!("sqne_{k}"),
                verdict(r.passed, rho, r.max_violation),
            )?;
        } else {
            line(out, &format!("sqne_{k}"), "skipped (hypotheses unmet)")?;
        }
        if hyp.fne {
            let rho = fne_bound(&plan)? * v.rho_scale;
            let b = budget.centered_at(witness.clone());
            let r = check_fne(&node, rho, &b, &tol)?;
            all &= r.passed;
            line(
                out,
                &format!("fne_{k}"),
                verdict(r.passed, rho, r.max_violation),
            )?;
            let r = check_nonexpansive(&node, &b, &tol)?;
            all &= r.passed;
            line(
                out,
                &format!("nonexpansive_{k}"),
                format!(
                    "{} (max violation {:e})",
                    if r.passed { "pass" } else { "fail" },
                    r.max_violation
                ),
            )?;
        } else {
            line(out, &format!("fne_{k}"), "skipped (hypotheses unmet)")?;
        }
    }
    line(out, "result", if all { "pass" } else { "fail" })?;
    Ok(if all {
        ExitStatus::Success
    } else {
        ExitStatus::Error
    })
}

fn verdict(passed: bool, rho: f64, worst: f64) -> String {
    format!(
        "{} (rho {rho:e}, max violation {worst:e})",
        if passed { "pass" } else { "fail" }
    )
}

#[derive(Debug, Parser)]
#[command(
    name = "gmsa",
    version,
    about = "Modular string-averaging feasibility solver"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the feasibility iteration and write its trace.
    Solve(CommonArgs),
    /// Run the superiorized iteration against the plain one.
    Superiorize(CommonArgs),
    /// Check control admissibility and the operator constants.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Last iteration to scan.
        #[arg(long)]
        horizon: Option<usize>,
        /// Comma-separated operator indices, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',')]
        indices: Option<Vec<usize>>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Trace CSV path; overrides `output.trace`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep every N-th iterate in memory.
    #[arg(long)]
    pub stride: Option<usize>,
}

fn load(
    common: &CommonArgs,
    horizon: Option<usize>,
    indices: Option<Vec<usize>>,
) -> Result<RunConfig> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Error::Io(format!("{}: {e}", common.config.display())))?;
    parse_config_with(
        &text,
        &Overrides {
            seed: common.seed,
            out: common.out.clone(),
            stride: common.stride,
            horizon,
            indices,
        },
    )
}

/// Parses `args` (including the program name) and runs the command. Errors
/// go to `err` as `error[code]: message`.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() {
                ExitStatus::Error
            } else {
                ExitStatus::Success
            };
        }
    };
    let result = match &cli.command {
        Command::Solve(c) => load(c, None, None).and_then(|cfg| cmd_solve(&cfg, out)),
        Command::Superiorize(c) => load(c, None, None).and_then(|cfg| cmd_superiorize(&cfg, out)),
        Command::Verify {
            common,
            horizon,
            indices,
        } => load(common, *horizon, indices.clone()).and_then(|cfg| cmd_verify(&cfg, out)),
    };
    match result {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {e}", e.code());
            ExitStatus::Error
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
