//! Superiorization: feasibility iterations steered by normalized negative
//! subgradient steps of a convex objective, and the alternatives diagnostic.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::ControlSchedule;
use crate::error::{Error, Result};
use crate::numeric::{Tolerance, Vector};
use crate::operators::{CheckReport, SampleBudget};
use crate::sets::OperatorFamily;
use crate::solver::{drive, RelaxationSchedule, RunOptions, Trace};

/// A convex, continuous objective with a subgradient selection.
pub trait Objective: Send + Sync {
    fn value(&self, x: &Vector) -> Result<f64>;
    fn subgradient(&self, x: &Vector) -> Result<Vector>;
}

/// Objectives with closed-form subgradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Builtin {
    /// `<c, x>`
    Linear {
        c: Vector,
    },
    /// `|x - target|^2`
    SquaredDistance {
        target: Vector,
    },
    /// `max_i <a_i, x> + b_i`; the first maximizing slope is the subgradient.
    MaxAffine {
        slopes: Vec<Vector>,
        offsets: Vec<f64>,
    },
    Constant {
        value: f64,
    },
}

impl Builtin {
    fn dim(&self) -> Option<usize> {
        match self {
            Builtin::Linear { c } => Some(c.dim()),
            Builtin::SquaredDistance { target } => Some(target.dim()),
            Builtin::MaxAffine { slopes, .. } => slopes.first().map(Vector::dim),
            Builtin::Constant { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Builtin::MaxAffine { slopes, offsets } = self {
            if slopes.is_empty() || slopes.len() != offsets.len() {
                return Err(Error::Oracle(format!(
                    "max-affine needs matching nonempty slopes/offsets, got {}/{}",
                    slopes.len(),
                    offsets.len()
                )));
            }
            let d = slopes[0].dim();
            for a in slopes {
                a.check_dim(d)?;
            }
        }
        Ok(())
    }
}

impl Objective for Builtin {
    fn value(&self, x: &Vector) -> Result<f64> {
        Ok(match self {
            Builtin::Linear { c } => c.dot(x),
            Builtin::SquaredDistance { target } => x.sub(target).norm_sq(),
            Builtin::MaxAffine { slopes, offsets } => slopes
                .iter()
                .zip(offsets)
                .map(|(a, b)| a.dot(x) + b)
                .fold(f64::NEG_INFINITY, f64::max),
            Builtin::Constant { value } => *value,
        })
    }

    fn subgradient(&self, x: &Vector) -> Result<Vector> {
        Ok(match self {
            Builtin::Linear { c } => c.clone(),
            Builtin::SquaredDistance { target } => x.sub(target).scale(2.0),
            Builtin::MaxAffine { slopes, offsets } => {
                let mut best = 0;
                let mut top = f64::NEG_INFINITY;
                for (i, (a, b)) in slopes.iter().zip(offsets).enumerate() {
                    let v = a.dot(x) + b;
                    if v > top {
                        top = v;
                        best = i;
                    }
                }
                slopes[best].clone()
            }
            Builtin::Constant { .. } => Vector::zeros(x.dim()),
        })
    }
}

/// An objective plus, optionally, known minimizers over the feasible set.
#[derive(Clone)]
pub struct ObjectiveOracle {
    objective: Arc<dyn Objective>,
    dim: Option<usize>,
    pub argmin_witnesses: Vec<Vector>,
}

impl fmt::Debug for ObjectiveOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectiveOracle")
            .field("dim", &self.dim)
            .field("argmin_witnesses", &self.argmin_witnesses)
            .finish()
    }
}

impl ObjectiveOracle {
    pub fn builtin(b: Builtin) -> Result<Self> {
        b.validate()?;
        Ok(ObjectiveOracle {
            dim: b.dim(),
            objective: Arc::new(b),
            argmin_witnesses: Vec::new(),
        })
    }

    pub fn linear(c: Vector) -> Self {
        Self::builtin(Builtin::Linear { c }).expect("linear objectives are always valid")
    }

    pub fn squared_distance(target: Vector) -> Self {
        Self::builtin(Builtin::SquaredDistance { target }).expect("always valid")
    }

    pub fn constant(value: f64) -> Self {
        Self::builtin(Builtin::Constant { value }).expect("always valid")
    }

    pub fn custom(objective: impl Objective + 'static) -> Self {
        ObjectiveOracle {
            objective: Arc::new(objective),
            dim: None,
            argmin_witnesses: Vec::new(),
        }
    }

    pub fn with_argmin(mut self, witnesses: Vec<Vector>) -> Self {
        self.argmin_witnesses = witnesses;
        self
    }

    fn check(&self, x: &Vector) -> Result<()> {
        match self.dim {
            Some(d) => x.check_dim(d),
            None => Ok(()),
        }
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        self.check(x)?;
        let v = self.objective.value(x)?;
        if !v.is_finite() {
            return Err(Error::Oracle(format!("objective value {v} is not finite")));
        }
        Ok(v)
    }

    pub fn subgradient(&self, x: &Vector) -> Result<Vector> {
        self.check(x)?;
        let s = self.objective.subgradient(x)?;
        s.check_dim(x.dim())
            .map_err(|e| Error::Oracle(format!("subgradient: {e}")))?;
        if !s.is_finite() {
            return Err(Error::Oracle("subgradient is not finite".into()));
        }
        Ok(s)
    }
}

/// Samples `phi(x) + <s(x), y - x> - phi(y)` over pairs in a ball; it must
/// stay `<= abs_eps` for `s` to be a subgradient selection.
pub fn check_subgradient(
    oracle: &ObjectiveOracle,
    dim: usize,
    budget: &SampleBudget,
    tol: &Tolerance,
) -> Result<CheckReport> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let center = budget.center.clone().unwrap_or_else(|| Vector::zeros(dim));
    let point = |rng: &mut ChaCha8Rng| {
        Vector::from_raw(
            center
                .as_slice()
                .iter()
                .map(|c| c + rng.random_range(-budget.radius..=budget.radius))
                .collect(),
        )
    };
    let mut worst = f64::NEG_INFINITY;
    let mut at = Vec::new();
    for _ in 0..budget.count {
        let (x, y) = (point(&mut rng), point(&mut rng));
        let v = oracle.value(&x)? + oracle.subgradient(&x)?.dot(&y.sub(&x)) - oracle.value(&y)?;
        if v > worst {
            worst = v;
            at = vec![x, y];
        }
    }
    Ok(CheckReport {
        samples: budget.count,
        max_violation: worst,
        worst: at,
        passed: worst <= tol.abs_eps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum BetaForm {
    /// `c 2^-k / M`
    Geometric { c: f64 },
    /// `c / ((k + 1)^p M)` with `p > 1`; decays slowly enough to stay visible
    /// over thousands of iterations.
    Polynomial { c: f64, p: f64 },
    /// Explicit rows; row `k` has length `M_k`.
    Table(Vec<Vec<f64>>),
}

/// Inner step sizes `beta_{k,n}`, `n = 1..M_k`, with a summable double series.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaGrid {
    /// `M` for the closed forms.
    pub inner: usize,
    pub form: BetaForm,
}

impl BetaGrid {
    pub fn new(inner: usize, form: BetaForm) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidPerturbation(m));
        match &form {
            BetaForm::Geometric { c } | BetaForm::Polynomial { c, .. }
                if !(c.is_finite() && *c >= 0.0) =>
            {
                return bad(format!("scale c = {c} must be >= 0"));
            }
            BetaForm::Polynomial { p, .. } if !(p.is_finite() && *p > 1.0) => {
                return bad(format!("exponent p = {p} must exceed 1"));
            }
            BetaForm::Table(rows) => {
                if rows.iter().any(|r| r.is_empty()) {
                    return bad("every table row needs at least one entry".into());
                }
                if rows.iter().flatten().any(|b| !(b.is_finite() && *b >= 0.0)) {
                    return bad("table entries must be finite and >= 0".into());
                }
            }
            _ => {}
        }
        if inner == 0 && !matches!(form, BetaForm::Table(_)) {
            return bad("inner loop length must be positive".into());
        }
        Ok(BetaGrid { inner, form })
    }

    pub fn betas(&self, k: usize) -> Result<Vec<f64>> {
        let m = self.inner as f64;
        Ok(match &self.form {
            BetaForm::Geometric { c } => {
                vec![c * 0.5f64.powi(k.min(i32::MAX as usize) as i32) / m; self.inner]
            }
            BetaForm::Polynomial { c, p } => vec![c / (((k + 1) as f64).powf(*p) * m); self.inner],
            BetaForm::Table(rows) => rows.get(k).cloned().ok_or_else(|| {
                Error::InvalidPerturbation(format!("no inner step sizes for iteration {k}"))
            })?,
        })
    }
}

/// Default threshold on `|s|` below which `0` is taken to be a subgradient.
pub const ZERO_TOL: f64 = 1e-12;

/// `v_{n+1} = -s / |s|` with `s` a subgradient at `y + sum_{i <= n} beta_i v_i`,
/// or `0` when `|s| <= zero_tol`.
pub fn inner_directions(
    oracle: &ObjectiveOracle,
    y: &Vector,
    betas: &[f64],
    zero_tol: f64,
) -> Result<Vec<Vector>> {
    let mut shifted = y.clone();
    let mut out = Vec::with_capacity(betas.len());
    for &beta in betas {
        let s = oracle.subgradient(&shifted)?;
        let n = s.norm();
        let v = if n <= zero_tol {
            Vector::zeros(y.dim())
        } else {
            s.scale(-1.0 / n)
        };
        shifted = shifted.axpy(beta, &v);
        out.push(v);
    }
    Ok(out)
}

/// `(beta, v)` with `beta = sum beta_n` and `v = sum (beta_n / beta) v_n`.
pub fn aggregate(betas: &[f64], directions: &[Vector], dim: usize) -> (f64, Vector) {
    let beta: f64 = betas.iter().sum();
    if beta == 0.0 {
        return (0.0, Vector::zeros(dim));
    }
    let mut v = Vector::zeros(dim);
    for (b, d) in betas.iter().zip(directions) {
        v = v.axpy(b / beta, d);
    }
    (beta, v)
}

/// Runs the superiorized iteration
/// `y_{k+1} = S_k(y_k + sum_n beta_{k,n} v_{k,n})`.
///
/// The inner perturbations are folded into a single `beta_k v_k` (see
/// [`aggregate`]) and handed to the same loop as
/// [`crate::solver::run_perturbed`], so replaying `trace.perturbations`
/// through that function reproduces the iterates bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn run_superiorized(
    family: &OperatorFamily,
    schedule: &ControlSchedule,
    relax: &RelaxationSchedule,
    oracle: &ObjectiveOracle,
    grid: &BetaGrid,
    y0: &Vector,
    opts: &RunOptions,
    zero_tol: f64,
) -> Result<Trace> {
    let dim = family.dim();
    let mut perturb = |k: usize, y: &Vector| -> Result<(f64, Vector)> {
        let betas = grid.betas(k)?;
        let dirs = inner_directions(oracle, y, &betas, zero_tol)?;
        Ok(aggregate(&betas, &dirs, dim))
    };
    let phi = |x: &Vector| oracle.value(x);
    drive(
        family,
        schedule,
        relax,
        y0,
        opts,
        Some(&mut perturb),
        Some(&phi),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum Alternative {
    /// The final iterate sits on argmin witness `witness`.
    Alternative1 { witness: usize, distance: f64 },
    /// From `k0` on every step strictly decreased the distance to every witness.
    Alternative2 { k0: usize },
    /// Neither could be established; `violation` is the last `(k, witness)`
    /// where strict decrease failed.
    Inconclusive {
        violation: Option<(usize, usize)>,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlternativesOptions {
    pub tol: Tolerance,
    /// Required decrease per step; `0` means plain strict inequality.
    pub strictness_margin: f64,
    /// Minimum number of transitions after `k0` for a verdict.
    pub min_transitions: usize,
}

impl Default for AlternativesOptions {
    fn default() -> Self {
        AlternativesOptions {
            tol: Tolerance::default(),
            strictness_margin: 0.0,
            min_transitions: 10,
        }
    }
}

/// Classifies a superiorized run against the known minimizers.
pub fn alternatives_diagnostic(
    trace: &Trace,
    oracle: &ObjectiveOracle,
    opts: &AlternativesOptions,
) -> Result<Alternative> {
    let zs = &oracle.argmin_witnesses;
    if zs.is_empty() {
        return Err(Error::NoArgminWitness);
    }
    let y = &trace.final_point;
    let fy = oracle.value(y)?;
    for (i, z) in zs.iter().enumerate() {
        let d = y.dist(z);
        if d <= opts.tol.abs_eps && opts.tol.close(fy, oracle.value(z)?) {
            return Ok(Alternative::Alternative1 {
                witness: i,
                distance: d,
            });
        }
    }
    let pts = trace.points()?;
    let transitions = pts.len() - 1;
    let mut last_bad = None;
    for k in (0..transitions).rev() {
        if let Some(i) = zs.iter().position(|z| {
            pts[k + 1].dist(z) >= pts[k].dist(z) - opts.strictness_margin
                || pts[k + 1].dist(z).is_nan()
        }) {
            last_bad = Some((k, i));
            break;
        }
    }
    let k0 = last_bad.map_or(0, |(k, _)| k + 1);
    if transitions - k0 < opts.min_transitions.max(1) {
        return Ok(Alternative::Inconclusive {
            violation: last_bad,
            reason: format!(
                "only {} strictly decreasing transitions at the end of a {transitions}-step trace",
                transitions - k0
            ),
        });
    }
    Ok(Alternative::Alternative2 { k0 })
}
