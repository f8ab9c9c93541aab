//! The relaxed iteration `x_{k+1} = x_k + lambda_k (T_k x_k - x_k)`, its
//! perturbed variant, and trace diagnostics.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::control::ControlSchedule;
use crate::error::{Error, Result};
use crate::gmsa::{output_operator, rho_uniform};
use crate::numeric::{Tolerance, Vector};
use crate::sets::OperatorFamily;

const NORM_SLACK: f64 = 1e-9;

type LambdaFn = dyn Fn(usize) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum LambdaRule {
    Constant(f64),
    /// Sawtooth from `eps` up to the upper end of the admissible interval,
    /// `period` iterations per tooth.
    Sweep {
        period: usize,
    },
    Custom(Arc<LambdaFn>),
}

impl fmt::Debug for LambdaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaRule::Constant(l) => write!(f, "Constant({l})"),
            LambdaRule::Sweep { period } => write!(f, "Sweep({period})"),
            LambdaRule::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Relaxation parameters `lambda_k`.
///
/// In the default mode every `lambda_k` must lie in `[eps, 1 + rho - eps]`,
/// where `rho` is a common strong quasi-nonexpansiveness modulus of the
/// `T_k`; this is what the strong Fejér estimate needs. The permissive mode
/// allows `[eps, 2 - eps]` and gives up that estimate.
#[derive(Debug, Clone)]
pub struct RelaxationSchedule {
    pub rule: LambdaRule,
    pub eps: f64,
    pub rho: f64,
    pub permissive: bool,
}

impl RelaxationSchedule {
    pub fn new(rule: LambdaRule, eps: f64, rho: f64) -> Result<Self> {
        Self::build(rule, eps, rho, false)
    }

    pub fn permissive(rule: LambdaRule, eps: f64) -> Result<Self> {
        Self::build(rule, eps, 1.0, true)
    }

    /// Uses the uniform modulus `eps_plan / (2 M^K)` of the schedule's plans,
    /// where `eps_plan` is the smallest plan `eps`; `eps` here only bounds
    /// `lambda_k`.
    pub fn for_schedule(rule: LambdaRule, eps: f64, schedule: &ControlSchedule) -> Result<Self> {
        let unknown = || {
            Error::InvalidRelaxation("schedule has no plan metadata; supply rho explicitly".into())
        };
        let (k, m) = schedule.metadata().ok_or_else(unknown)?;
        let plan_eps = schedule.plan_eps().ok_or_else(unknown)?;
        Self::new(rule, eps, rho_uniform(k, m, plan_eps))
    }

    fn build(rule: LambdaRule, eps: f64, rho: f64, permissive: bool) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::InvalidRelaxation(format!(
                "eps = {eps} outside (0, 1]"
            )));
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidRelaxation(format!(
                "rho = {rho} outside [0, 1]"
            )));
        }
        let s = RelaxationSchedule {
            rule,
            eps,
            rho,
            permissive,
        };
        if s.eps > s.upper() {
            return Err(Error::InvalidRelaxation(format!(
                "empty interval: eps = {eps} exceeds {}",
                s.upper()
            )));
        }
        if let LambdaRule::Constant(_) = s.rule {
            s.lambda(0)?;
        }
        if let LambdaRule::Sweep { period: 0 } = s.rule {
            return Err(Error::InvalidRelaxation(
                "sweep period must be positive".into(),
            ));
        }
        Ok(s)
    }

    /// Upper end of the admissible interval.
    pub fn upper(&self) -> f64 {
        if self.permissive {
            2.0 - self.eps
        } else {
            1.0 + self.rho - self.eps
        }
    }

    pub fn lambda(&self, k: usize) -> Result<f64> {
        let (lo, hi) = (self.eps, self.upper());
        let l = match &self.rule {
            LambdaRule::Constant(l) => *l,
            LambdaRule::Sweep { period } if *period <= 1 => lo,
            LambdaRule::Sweep { period } => {
                let phase = (k % period) as f64 / (period - 1) as f64;
                (lo + (hi - lo) * phase).clamp(lo, hi)
            }
            LambdaRule::Custom(f) => f(k),
        };
        if !(l >= lo && l <= hi) {
            return Err(Error::InvalidRelaxation(format!(
                "lambda_{k} = {l} outside [{lo}, {hi}]"
            )));
        }
        Ok(l)
    }

    /// `eps / (1 + rho - eps)`, or `None` in permissive mode.
    pub fn fejer_constant(&self) -> Option<f64> {
        (!self.permissive).then(|| self.eps / (1.0 + self.rho - self.eps))
    }
}

/// Stop at the first of: iteration cap, small residual, small step.
///
/// The residual is measured against the current `T_k` only. Under a cyclic
/// control where `T_k` touches one set, an iterate that happens to lie in
/// that set has zero residual and zero step while still infeasible, so the
/// tolerance tests must then hold for `patience` consecutive iterations
/// (the cycle length is the natural choice).
#[derive(Debug, Clone, PartialEq)]
pub struct StopRule {
    pub max_iters: usize,
    pub residual_tol: Option<f64>,
    pub step_tol: Option<f64>,
    pub patience: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_iters: 100_000,
            residual_tol: Some(1e-10),
            step_tol: Some(1e-12),
            patience: 1,
        }
    }
}

impl StopRule {
    /// Exactly `n` iterations.
    pub fn iterations(n: usize) -> Self {
        StopRule {
            max_iters: n,
            residual_tol: None,
            step_tol: None,
            patience: 1,
        }
    }

    pub fn patience(mut self, n: usize) -> Self {
        self.patience = n.max(1);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    Residual,
    Step,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxIters => "max-iters",
            StopReason::Residual => "residual",
            StopReason::Step => "step",
        })
    }
}

/// What to record besides the scalar diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub stop: StopRule,
    /// Family indices whose distances are logged at every iteration.
    pub monitored: Vec<usize>,
    /// Store the iterate every `stride` iterations (and always the last one).
    pub stride: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            stop: StopRule::default(),
            monitored: Vec::new(),
            stride: 1,
        }
    }
}

impl RunOptions {
    pub fn new(stop: StopRule) -> Self {
        RunOptions {
            stop,
            ..Self::default()
        }
    }

    pub fn monitor(mut self, indices: impl IntoIterator<Item = usize>) -> Self {
        self.monitored = indices.into_iter().collect();
        self
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }
}

#[derive(Debug, Clone)]
pub enum BetaRule {
    /// `c / (k + 1)^p` with `p > 1`; `c = 0` switches perturbations off.
    Summable {
        c: f64,
        p: f64,
    },
    Table(Vec<f64>),
}

type DirectionFn = dyn Fn(usize, &Vector) -> Vector + Send + Sync;

#[derive(Clone)]
pub enum DirectionRule {
    Fixed(Vector),
    /// Unit vector from the witness towards the current point.
    AwayFromWitness,
    /// Uniform unit vectors, reproducible per `(seed, k)`.
    SeededRandom {
        seed: u64,
    },
    Table(Vec<Vector>),
    Custom(Arc<DirectionFn>),
}

impl fmt::Debug for DirectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DirectionRule::Fixed(v) => write!(f, "Fixed({v:?})"),
            DirectionRule::AwayFromWitness => f.write_str("AwayFromWitness"),
            DirectionRule::SeededRandom { seed } => write!(f, "SeededRandom({seed})"),
            DirectionRule::Table(t) => write!(f, "Table({} entries)", t.len()),
            DirectionRule::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Bounded perturbations `beta_k v_k` with summable `beta_k` and `|v_k| <= 1`.
#[derive(Debug, Clone)]
pub struct PerturbationSchedule {
    pub beta: BetaRule,
    pub direction: DirectionRule,
}

impl PerturbationSchedule {
    pub fn new(beta: BetaRule, direction: DirectionRule) -> Result<Self> {
        match &beta {
            BetaRule::Summable { c, p } => {
                if !(c.is_finite() && *c >= 0.0) {
                    return Err(Error::InvalidPerturbation(format!(
                        "scale c = {c} must be >= 0"
                    )));
                }
                if !(p.is_finite() && *p > 1.0) {
                    return Err(Error::InvalidPerturbation(format!(
                        "exponent p = {p} must exceed 1 for a summable series"
                    )));
                }
            }
            BetaRule::Table(t) => {
                if let Some(b) = t.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
                    return Err(Error::InvalidPerturbation(format!(
                        "beta entry {b} is not >= 0"
                    )));
                }
            }
        }
        let unit = |v: &Vector| {
            if v.norm() > 1.0 + NORM_SLACK {
                Err(Error::InvalidPerturbation(format!(
                    "direction norm {} exceeds 1",
                    v.norm()
                )))
            } else {
                Ok(())
            }
        };
        match &direction {
            DirectionRule::Fixed(v) => unit(v)?,
            DirectionRule::Table(t) => t.iter().try_for_each(unit)?,
            _ => {}
        }
        Ok(PerturbationSchedule { beta, direction })
    }

    /// Replays recorded `(beta_k, v_k)` pairs.
    pub fn replay(pairs: &[(f64, Vector)]) -> Result<Self> {
        Self::new(
            BetaRule::Table(pairs.iter().map(|(b, _)| *b).collect()),
            DirectionRule::Table(pairs.iter().map(|(_, v)| v.clone()).collect()),
        )
    }

    pub fn beta(&self, k: usize) -> Result<f64> {
        match &self.beta {
            BetaRule::Summable { c, p } => Ok(c / ((k + 1) as f64).powf(*p)),
            BetaRule::Table(t) => t.get(k).copied().ok_or_else(|| {
                Error::InvalidPerturbation(format!("no beta recorded for iteration {k}"))
            }),
        }
    }

    pub fn direction(&self, k: usize, y: &Vector, witness: &Vector) -> Result<Vector> {
        let v = match &self.direction {
            DirectionRule::Fixed(v) => v.clone(),
            DirectionRule::AwayFromWitness => {
                let d = y.sub(witness);
                let n = d.norm();
                if n == 0.0 {
                    Vector::zeros(y.dim())
                } else {
                    d.scale(1.0 / n)
                }
            }
            DirectionRule::SeededRandom { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                let g = Vector::from_raw(
                    (0..y.dim())
                        .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng))
                        .collect(),
                );
                let n = g.norm();
                if n == 0.0 {
                    g
                } else {
                    g.scale(1.0 / n)
                }
            }
            DirectionRule::Table(t) => t.get(k).cloned().ok_or_else(|| {
                Error::InvalidPerturbation(format!("no direction recorded for iteration {k}"))
            })?,
            DirectionRule::Custom(f) => f(k, y),
        };
        v.check_dim(y.dim())?;
        if !v.is_finite() || v.norm() > 1.0 + NORM_SLACK {
            return Err(Error::InvalidPerturbation(format!(
                "direction at iteration {k} has norm {}",
                v.norm()
            )));
        }
        Ok(v)
    }
}

/// Diagnostics of one iterate `x_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    /// `x_k`, if this row falls on the storage stride.
    pub point: Option<Vector>,
    /// `|T_k x_k - x_k|` at the unperturbed iterate.
    pub residual: f64,
    /// `|x_{k+1} - x_k|`; zero on the final row.
    pub step: f64,
    pub dist_witness: f64,
    /// `|x_k - z|^2 - |x_{k+1} - z|^2 - c |x_{k+1} - x_k|^2`; zero on the final row.
    pub fejer_slack: f64,
    /// `lambda_k`; zero on the final row.
    pub lambda: f64,
    /// `d(x_k, C_n)` for each monitored `n`, in monitor order.
    pub set_distances: Vec<f64>,
    pub phi: Option<f64>,
    /// `beta_k` for perturbed runs.
    pub pert_mag: Option<f64>,
}

/// Record of a run: one row per iterate `x_0, ..., x_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub stop_reason: StopReason,
    pub final_point: Vector,
    pub witness: Vector,
    pub monitored: Vec<usize>,
    /// The constant `c` used in `fejer_slack`.
    pub fejer_constant: f64,
    /// `(beta_k, v_k)` actually applied, for perturbed runs.
    pub perturbations: Vec<(f64, Vector)>,
    pub perturbed: bool,
}

impl Trace {
    /// Number of executed iterations `K`.
    pub fn iterations(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("a trace has at least one row")
    }

    /// Every stored iterate, or an error if the trace was thinned.
    pub fn points(&self) -> Result<Vec<&Vector>> {
        self.rows
            .iter()
            .map(|r| {
                r.point
                    .as_ref()
                    .ok_or_else(|| Error::Trace(format!("iterate {} was not stored", r.k)))
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,residual,step,dist_witness,fejer_slack");
        for i in 0..self.monitored.len() {
            write!(out, ",d{i}").unwrap();
        }
        let with_phi = self.rows.iter().any(|r| r.phi.is_some());
        if with_phi {
            out.push_str(",phi");
        }
        if self.perturbed {
            out.push_str(",pert_mag");
        }
        out.push('\n');
        for r in &self.rows {
            write!(
                out,
                "{},{:?},{:?},{:?},{:?}",
                r.k, r.residual, r.step, r.dist_witness, r.fejer_slack
            )
            .unwrap();
            for d in &r.set_distances {
                write!(out, ",{d:?}").unwrap();
            }
            if with_phi {
                write!(out, ",{:?}", r.phi.unwrap_or(f64::NAN)).unwrap();
            }
            if self.perturbed {
                write!(out, ",{:?}", r.pert_mag.unwrap_or(0.0)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

type Perturber<'a> = dyn FnMut(usize, &Vector) -> Result<(f64, Vector)> + 'a;
type PhiFn<'a> = dyn Fn(&Vector) -> Result<f64> + 'a;

/// The shared iteration loop behind every run variant.
pub(crate) fn drive(
    family: &OperatorFamily,
    schedule: &ControlSchedule,
    relax: &RelaxationSchedule,
    x0: &Vector,
    opts: &RunOptions,
    mut perturb: Option<&mut Perturber<'_>>,
    phi: Option<&PhiFn<'_>>,
) -> Result<Trace> {
    x0.check_dim(family.dim())?;
    if !x0.is_finite() {
        return Err(Error::NumericalDivergence { k: 0 });
    }
    let z = family.witness();
    let c = relax.fejer_constant().unwrap_or(0.0);
    let stride = opts.stride.max(1);
    let stop = &opts.stop;
    let distances = |y: &Vector| -> Result<Vec<f64>> {
        opts.monitored
            .iter()
            .map(|&n| family.distance(n, y))
            .collect()
    };
    let operator_at = |k: usize| {
        schedule
            .plan_at(k)
            .and_then(|p| output_operator(&p, family))
    };

    let mut rows = Vec::new();
    let mut applied = Vec::new();
    let mut y = x0.clone();
    let mut k = 0;
    let patience = stop.patience.max(1);
    let (mut small_residuals, mut small_steps) = (0, 0);
    let (reason, final_residual) = loop {
        if k >= stop.max_iters {
            let r = operator_at(k)
                .map(|t| t.apply_unchecked(&y).dist(&y))
                .unwrap_or(f64::NAN);
            break (StopReason::MaxIters, r);
        }
        let t = operator_at(k)?;
        let ty = t.apply_unchecked(&y);
        let residual = ty.dist(&y);
        if stop.residual_tol.is_some_and(|tol| residual <= tol) {
            small_residuals += 1;
            if small_residuals >= patience {
                break (StopReason::Residual, residual);
            }
        } else {
            small_residuals = 0;
        }
        let lambda = relax.lambda(k)?;
        let mut pert_mag = None;
        let mut base = None;
        if let Some(p) = perturb.as_mut() {
            let (beta, v) = p(k, &y)?;
            if beta != 0.0 {
                base = Some(y.axpy(beta, &v));
            }
            pert_mag = Some(beta);
            applied.push((beta, v));
        }
        let next = match &base {
            None if lambda == 1.0 => ty,
            None => y.toward(lambda, &ty),
            Some(b) => {
                let tb = t.apply_unchecked(b);
                if lambda == 1.0 {
                    tb
                } else {
                    b.toward(lambda, &tb)
                }
            }
        };
        if !next.is_finite() {
            return Err(Error::NumericalDivergence { k });
        }
        let step = next.dist(&y);
        let dist_witness = y.dist(z);
        let dist_next = next.dist(z);
        rows.push(TraceRow {
            k,
            point: (k % stride == 0).then(|| y.clone()),
            residual,
            step,
            dist_witness,
            fejer_slack: dist_witness * dist_witness - dist_next * dist_next - c * step * step,
            lambda,
            set_distances: distances(&y)?,
            phi: phi.map(|f| f(&y)).transpose()?,
            pert_mag,
        });
        y = next;
        k += 1;
        if stop.step_tol.is_some_and(|tol| step <= tol) {
            small_steps += 1;
        } else {
            small_steps = 0;
        }
        if small_steps >= patience {
            let r = operator_at(k)
                .map(|t| t.apply_unchecked(&y).dist(&y))
                .unwrap_or(f64::NAN);
            break (StopReason::Step, r);
        }
    };
    rows.push(TraceRow {
        k,
        point: Some(y.clone()),
        residual: final_residual,
        step: 0.0,
        dist_witness: y.dist(z),
        fejer_slack: 0.0,
        lambda: 0.0,
        set_distances: distances(&y)?,
        phi: phi.map(|f| f(&y)).transpose()?,
        pert_mag: perturb.as_ref().map(|_| 0.0),
    });
    Ok(Trace {
        rows,
        stop_reason: reason,
        final_point: y,
        witness: z.clone(),
        monitored: opts.monitored.clone(),
        fejer_constant: c,
        perturbations: applied,
        perturbed: perturb.is_some(),
    })
}

/// Runs the relaxed iteration from `x0`.
pub fn run(
    family: &OperatorFamily,
    schedule: &ControlSchedule,
    relax: &RelaxationSchedule,
    x0: &Vector,
    opts: &RunOptions,
) -> Result<Trace> {
    drive(family, schedule, relax, x0, opts, None, None)
}

/// Runs `y_{k+1} = S_k(y_k + beta_k v_k)` with `S_k` the `lambda_k`-relaxation of `T_k`.
pub fn run_perturbed(
    family: &OperatorFamily,
    schedule: &ControlSchedule,
    relax: &RelaxationSchedule,
    perturb: &PerturbationSchedule,
    y0: &Vector,
    opts: &RunOptions,
) -> Result<Trace> {
    let z = family.witness().clone();
    let mut p = |k: usize, y: &Vector| -> Result<(f64, Vector)> {
        Ok((perturb.beta(k)?, perturb.direction(k, y, &z)?))
    };
    drive(family, schedule, relax, y0, opts, Some(&mut p), None)
}

fn check_witness(family: &OperatorFamily, z: &Vector, tol: &Tolerance) -> Result<()> {
    z.check_dim(family.dim())?;
    for n in family.materialized() {
        let residual = family.distance(n, z)?;
        if residual > tol.abs_eps {
            return Err(Error::WitnessNotFixed { residual });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FejerReport {
    pub constant: f64,
    pub transitions: usize,
    /// Most negative slack seen (`+inf` for a trace without transitions).
    pub min_slack: f64,
    pub first_violation: Option<usize>,
}

impl FejerReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Evaluates `|x_k - z|^2 - |x_{k+1} - z|^2 - c |x_{k+1} - x_k|^2 >= -abs_eps`
/// along the trace.
///
/// `z` must be fixed by every operator the run touched. When `z` is the
/// trace's own witness the stored scalars suffice; otherwise every iterate has
/// to be stored.
pub fn check_fejer(
    trace: &Trace,
    family: &OperatorFamily,
    z: &Vector,
    constant: f64,
    tol: &Tolerance,
) -> Result<FejerReport> {
    check_witness(family, z, tol)?;
    let dists: Vec<f64> = if *z == trace.witness {
        trace.rows.iter().map(|r| r.dist_witness).collect()
    } else {
        trace.points()?.iter().map(|p| p.dist(z)).collect()
    };
    let mut min_slack = f64::INFINITY;
    let mut first_violation = None;
    for (i, w) in dists.windows(2).enumerate() {
        let step = trace.rows[i].step;
        let slack = w[0] * w[0] - w[1] * w[1] - constant * step * step;
        min_slack = min_slack.min(slack);
        if slack < -tol.abs_eps && first_violation.is_none() {
            first_violation = Some(trace.rows[i].k);
        }
    }
    Ok(FejerReport {
        constant,
        transitions: dists.len() - 1,
        min_slack,
        first_violation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// `(n, d(x_K, C_n))` for each monitored index.
    pub distances: Vec<(usize, f64)>,
    pub max_distance: f64,
    /// Last nonzero-length step taken.
    pub final_step: f64,
    /// The largest step in the last quarter is below the largest in the first.
    pub step_tail_decreasing: bool,
    /// Sum of the steps over the second half of the run, which bounds how far
    /// the iterates moved there.
    pub cauchy_tail: f64,
    pub within_tol: bool,
}

pub fn convergence_report(
    trace: &Trace,
    family: &OperatorFamily,
    monitored: &[usize],
    tol: &Tolerance,
) -> Result<ConvergenceReport> {
    let x = &trace.final_point;
    let distances = monitored
        .iter()
        .map(|&n| Ok((n, family.distance(n, x)?)))
        .collect::<Result<Vec<_>>>()?;
    let max_distance = distances.iter().map(|d| d.1).fold(0.0, f64::max);
    let steps: Vec<f64> = trace.rows[..trace.rows.len() - 1]
        .iter()
        .map(|r| r.step)
        .collect();
    let q = steps.len() / 4;
    let step_tail_decreasing = if q == 0 {
        true
    } else {
        let head = steps[..q].iter().copied().fold(0.0, f64::max);
        let tail = steps[steps.len() - q..].iter().copied().fold(0.0, f64::max);
        tail < head || tail == 0.0
    };
    Ok(ConvergenceReport {
        max_distance,
        final_step: steps.last().copied().unwrap_or(0.0),
        step_tail_decreasing,
        cauchy_tail: steps[steps.len() / 2..].iter().sum(),
        within_tol: max_distance <= tol.abs_eps,
        distances,
    })
}
