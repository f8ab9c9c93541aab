//! Dynamic string averaging and its two embeddings into GMSA plans.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::control::{f_value, ControlSchedule, WindowBounds};
use crate::error::{Error, Result};
use crate::gmsa::{index_set, validate_plan, IterationPlan, StepSpec};
use crate::numeric::Vector;
use crate::sets::{Leaf, OperatorFamily};

const WEIGHT_SUM_EPS: f64 = 1e-9;

/// An ordered list of operator indices; position 0 acts first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct StringSpec(Vec<usize>);

impl StringSpec {
    pub fn new(t: Vec<usize>) -> Result<Self> {
        if t.is_empty() {
            return Err(Error::InvalidSchedule(
                "a string needs at least one index".into(),
            ));
        }
        Ok(StringSpec(t))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<Vec<usize>> for StringSpec {
    type Error = Error;

    fn try_from(t: Vec<usize>) -> Result<Self> {
        StringSpec::new(t)
    }
}

impl From<StringSpec> for Vec<usize> {
    fn from(s: StringSpec) -> Self {
        s.0
    }
}

/// Weighted strings used at iteration `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringStage {
    pub k: usize,
    pub eps: f64,
    pub strings: Vec<(StringSpec, f64)>,
}

impl StringStage {
    pub fn new(k: usize, eps: f64, strings: Vec<(StringSpec, f64)>) -> Result<Self> {
        let stage = StringStage { k, eps, strings };
        stage.validate()?;
        Ok(stage)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "eps = {} outside (0, 1]",
                self.eps
            )));
        }
        if self.strings.is_empty() {
            return Err(Error::InvalidSchedule(
                "a stage needs at least one string".into(),
            ));
        }
        if let Some((_, w)) = self
            .strings
            .iter()
            .find(|(_, w)| !(*w >= self.eps && *w <= 1.0))
        {
            return Err(Error::InvalidSchedule(format!(
                "string weight {w} outside [eps, 1] = [{}, 1]",
                self.eps
            )));
        }
        let sum: f64 = self.strings.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_EPS {
            return Err(Error::InvalidSchedule(format!(
                "string weights sum to {sum}, not 1"
            )));
        }
        Ok(())
    }

    /// Longest string length `q`.
    pub fn max_len(&self) -> usize {
        self.strings.iter().map(|(t, _)| t.len()).max().unwrap_or(1)
    }

    /// Union of the string images.
    pub fn indices(&self) -> BTreeSet<usize> {
        self.strings
            .iter()
            .flat_map(|(t, _)| t.indices().iter().copied())
            .collect()
    }
}

/// Evaluates the stage operator `sum_t w_t U_{t(q)} ... U_{t(1)} x` directly
/// from the family.
pub fn direct_eval(stage: &StringStage, family: &OperatorFamily, x: &Vector) -> Result<Vector> {
    stage.validate()?;
    x.check_dim(family.dim())?;
    let mut acc = Vector::zeros(x.dim());
    for (t, w) in &stage.strings {
        let mut y = x.clone();
        for &i in t.indices() {
            y = family.operator(i)?.apply_unchecked(&y);
        }
        acc = acc.axpy(*w, &y);
    }
    Ok(acc)
}

/// One composition step per string, then an average over those steps.
///
/// Strings are taken in stage order, so step `n` holds the `n`-th string.
pub fn gdsa_to_gmsa(stage: &StringStage) -> Result<IterationPlan> {
    stage.validate()?;
    let mut steps: Vec<StepSpec> = stage
        .strings
        .iter()
        .enumerate()
        .map(|(i, (t, _))| {
            StepSpec::composition(i + 1, t.indices().iter().map(|&u| -(u as i64)).collect())
        })
        .collect();
    let n = steps.len() + 1;
    let terms: Vec<(i64, f64)> = stage
        .strings
        .iter()
        .enumerate()
        .map(|(i, (_, w))| (i as i64 + 1, *w))
        .collect();
    steps.push(StepSpec::convex(n, &terms));
    IterationPlan::new(stage.k, stage.eps, steps)
}

/// `min(inf_n (2 - gamma_n) gamma_n / q, 1)`, the uniform modulus written for
/// string averaging.
///
/// For `gamma > 1` the product exceeds the modulus the composition calculus
/// can certify; use [`rho_gdsa_certified`] when the value feeds a relaxation
/// schedule.
pub fn rho_gdsa(gammas: impl IntoIterator<Item = f64>, q: usize) -> f64 {
    let inf = gammas
        .into_iter()
        .map(|g| (2.0 - g) * g)
        .fold(f64::INFINITY, f64::min);
    (inf / q.max(1) as f64).min(1.0)
}

/// Like [`rho_gdsa`] but with `min((2 - g) g, (2 - g) / g)` per leaf, which is
/// a valid firm-nonexpansiveness modulus of each leaf for every `g` in `(0, 4/3]`.
pub fn rho_gdsa_certified(gammas: impl IntoIterator<Item = f64>, q: usize) -> f64 {
    let inf = gammas
        .into_iter()
        .map(|g| ((2.0 - g) * g).min((2.0 - g) / g))
        .fold(f64::INFINITY, f64::min);
    (inf / q.max(1) as f64).min(1.0)
}

/// Embeds a finite-family MSA method with cyclic control into the infinite
/// setting.
///
/// The family is padded with identities beyond the last leaf. Plan `k` is
/// `msa_plans[k mod len]`, followed, when `f_k` exceeds the last index, by a
/// composition with the (identity) operator `U_{f_k}`; that extra step makes
/// the control admissible for every index without changing any output.
pub fn msa_embed(
    leaves: Vec<Leaf>,
    witness: Vector,
    msa_plans: Vec<IterationPlan>,
) -> Result<(OperatorFamily, ControlSchedule)> {
    if leaves.is_empty() || msa_plans.is_empty() {
        return Err(Error::InvalidSchedule(
            "MSA embedding needs leaves and plans".into(),
        ));
    }
    let top = leaves.len() - 1;
    let mut windows = BTreeMap::new();
    for p in &msa_plans {
        validate_plan(p).into_result()?;
        for i in index_set(p, p.n() as i64)? {
            if i > top {
                return Err(Error::MsaIndex { index: i, max: top });
            }
            windows.insert(i, msa_plans.len());
        }
    }
    let family = OperatorFamily::padded_with_identity(leaves, witness);
    let rule = move |k: usize| {
        let mut plan = msa_plans[k % msa_plans.len()].clone().at(k);
        let f = f_value(k);
        if f > top {
            let last = plan.n() as i64;
            plan.steps
                .push(StepSpec::composition(plan.n() + 1, vec![last, -(f as i64)]));
        }
        Ok(plan)
    };
    let bounds = WindowBounds {
        explicit: windows,
        power_of_two_from: Some(top + 1),
        uniform: None,
    };
    Ok((family, ControlSchedule::custom(rule, bounds)))
}
