//! Control schedules: the rule `k -> plan_k`, plus a finite-horizon checker for
//! the admissible-control window condition.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::dsa::StringSpec;
use crate::error::{Error, Result};
use crate::gmsa::{index_set, validate_plan, IterationPlan, LemmaHypotheses, StepSpec};

/// 2-adic valuation of `i + 1`: the sequence 0, 1, 0, 2, 0, 1, 0, 3, ...
///
/// Every `n` occurs exactly at `i = 2^n (2m + 1) - 1`, i.e. once in every
/// window of `2^(n + 1)` consecutive iterations.
pub fn f_value(i: usize) -> usize {
    (i + 1).trailing_zeros() as usize
}

/// How each power-of-two plan uses the operator `U_{f_k}`.
#[derive(Debug, Clone, PartialEq)]
pub enum PowerShape {
    /// One step: relax `U_{f_k}` by `alpha`.
    Relax { alpha: f64 },
    /// Equal-weight average of `U_{f_k}` and the anchor operators.
    Average { anchors: Vec<usize> },
    /// Compose the anchors (in order) and then `U_{f_k}`.
    Compose { anchors: Vec<usize> },
}

type PlanRule = dyn Fn(usize) -> Result<IterationPlan> + Send + Sync;

#[derive(Clone)]
pub enum ControlRule {
    Explicit(Vec<IterationPlan>),
    /// `plan_k = templates[k mod len]`.
    Cyclic(Vec<IterationPlan>),
    PowerOfTwo {
        shape: PowerShape,
        eps: f64,
    },
    Custom(Arc<PlanRule>),
}

impl fmt::Debug for ControlRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlRule::Explicit(p) => write!(f, "Explicit({} plans)", p.len()),
            ControlRule::Cyclic(p) => write!(f, "Cyclic({} plans)", p.len()),
            ControlRule::PowerOfTwo { shape, eps } => write!(f, "PowerOfTwo({shape:?}, eps={eps})"),
            ControlRule::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Claimed window lengths `M_n`.
///
/// Lookup order: the explicit table, then `2^(n+1)` for `n >= power_of_two_from`,
/// then the uniform value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowBounds {
    pub explicit: BTreeMap<usize, usize>,
    pub power_of_two_from: Option<usize>,
    pub uniform: Option<usize>,
}

impl WindowBounds {
    pub fn unspecified() -> Self {
        Self::default()
    }

    pub fn power_of_two() -> Self {
        WindowBounds {
            power_of_two_from: Some(0),
            ..Self::default()
        }
    }

    pub fn uniform(m: usize) -> Self {
        WindowBounds {
            uniform: Some(m),
            ..Self::default()
        }
    }

    pub fn explicit(map: BTreeMap<usize, usize>) -> Self {
        WindowBounds {
            explicit: map,
            ..Self::default()
        }
    }

    pub fn bound(&self, n: usize) -> Option<usize> {
        if let Some(&m) = self.explicit.get(&n) {
            return Some(m);
        }
        if self.power_of_two_from.is_some_and(|from| n >= from) {
            return Some(1usize.checked_shl(n as u32 + 1).unwrap_or(usize::MAX));
        }
        self.uniform
    }
}

/// A control rule together with its claimed window bounds.
#[derive(Debug, Clone)]
pub struct ControlSchedule {
    pub rule: ControlRule,
    pub windows: WindowBounds,
    /// Stamped onto generated plans; explicit and cyclic plans keep their own.
    pub hypotheses: LemmaHypotheses,
}

impl ControlSchedule {
    pub fn explicit(plans: Vec<IterationPlan>) -> Result<Self> {
        check_plans(&plans)?;
        Ok(ControlSchedule {
            rule: ControlRule::Explicit(plans),
            windows: WindowBounds::unspecified(),
            hypotheses: LemmaHypotheses::default(),
        })
    }

    /// Cycles through `templates`; every index used in the cycle gets the
    /// cycle length as its window bound.
    pub fn cyclic(templates: Vec<IterationPlan>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::InvalidSchedule(
                "cyclic control needs at least one plan".into(),
            ));
        }
        check_plans(&templates)?;
        let mut explicit = BTreeMap::new();
        for p in &templates {
            for i in index_set(p, p.n() as i64)? {
                explicit.insert(i, templates.len());
            }
        }
        Ok(ControlSchedule {
            rule: ControlRule::Cyclic(templates),
            windows: WindowBounds::explicit(explicit),
            hypotheses: LemmaHypotheses::default(),
        })
    }

    /// Plain cyclic projections: iteration `k` relaxes `U_{indices[k mod len]}`.
    pub fn cyclic_relaxations(indices: &[usize], alpha: f64, eps: f64) -> Result<Self> {
        let plans = indices
            .iter()
            .enumerate()
            .map(|(k, &i)| IterationPlan::new(k, eps, vec![StepSpec::relaxation(1, i, alpha)]))
            .collect::<Result<Vec<_>>>()?;
        Self::cyclic(plans)
    }

    /// The power-of-two control: plan `k` always uses `U_{f_k}`.
    pub fn power_of_two(shape: PowerShape, eps: f64) -> Result<Self> {
        let s = ControlSchedule {
            rule: ControlRule::PowerOfTwo { shape, eps },
            windows: WindowBounds::power_of_two(),
            hypotheses: LemmaHypotheses::default(),
        };
        s.plan_at(0)?;
        Ok(s)
    }

    pub fn custom<F>(rule: F, windows: WindowBounds) -> Self
    where
        F: Fn(usize) -> Result<IterationPlan> + Send + Sync + 'static,
    {
        ControlSchedule {
            rule: ControlRule::Custom(Arc::new(rule)),
            windows,
            hypotheses: LemmaHypotheses::default(),
        }
    }

    pub fn with_windows(mut self, windows: WindowBounds) -> Self {
        self.windows = windows;
        self
    }

    pub fn with_hypotheses(mut self, h: LemmaHypotheses) -> Self {
        self.hypotheses = h;
        self
    }

    /// The validated plan for iteration `k`.
    pub fn plan_at(&self, k: usize) -> Result<IterationPlan> {
        let plan = match &self.rule {
            ControlRule::Explicit(plans) => {
                return plans.get(k).cloned().ok_or(Error::HorizonExceeded {
                    k,
                    len: plans.len(),
                })
            }
            ControlRule::Cyclic(plans) => return Ok(plans[k % plans.len()].clone().at(k)),
            ControlRule::PowerOfTwo { shape, eps } => power_plan(shape, *eps, k)?,
            ControlRule::Custom(rule) => rule(k)?,
        };
        validate_plan(&plan).into_result()?;
        Ok(plan.with_hypotheses(self.hypotheses))
    }

    /// Number of plans in one cycle, for cyclic rules.
    pub fn cycle_len(&self) -> Option<usize> {
        match &self.rule {
            ControlRule::Cyclic(p) => Some(p.len()),
            _ => None,
        }
    }

    /// Smallest plan `eps`, when the rule makes it knowable.
    pub fn plan_eps(&self) -> Option<f64> {
        match &self.rule {
            ControlRule::Explicit(p) | ControlRule::Cyclic(p) => {
                p.iter().map(|p| p.eps).reduce(f64::min)
            }
            ControlRule::PowerOfTwo { eps, .. } => Some(*eps),
            ControlRule::Custom(_) => None,
        }
    }

    /// `(K, M)` for the uniform modulus, when the rule makes them knowable.
    pub fn metadata(&self) -> Option<(usize, usize)> {
        match &self.rule {
            ControlRule::Explicit(p) | ControlRule::Cyclic(p) => {
                Some(crate::gmsa::plan_metadata(p))
            }
            ControlRule::PowerOfTwo { shape, .. } => Some(match shape {
                PowerShape::Relax { .. } => (1, 1),
                PowerShape::Average { anchors } | PowerShape::Compose { anchors } => {
                    (1, anchors.iter().collect::<BTreeSet<_>>().len() + 1)
                }
            }),
            ControlRule::Custom(_) => None,
        }
    }
}

fn check_plans(plans: &[IterationPlan]) -> Result<()> {
    for p in plans {
        validate_plan(p).into_result()?;
    }
    Ok(())
}

fn power_plan(shape: &PowerShape, eps: f64, k: usize) -> Result<IterationPlan> {
    let f = f_value(k);
    let step = match shape {
        PowerShape::Relax { alpha } => StepSpec::relaxation(1, f, *alpha),
        PowerShape::Average { anchors } => {
            let idx: BTreeSet<usize> = anchors.iter().copied().chain([f]).collect();
            let w = 1.0 / idx.len() as f64;
            let terms: Vec<(i64, f64)> = idx.iter().map(|&i| (-(i as i64), w)).collect();
            StepSpec::convex(1, &terms)
        }
        PowerShape::Compose { anchors } => {
            let mut order: Vec<i64> = Vec::new();
            for &a in anchors.iter().chain([&f]) {
                let j = -(a as i64);
                if !order.contains(&j) {
                    order.push(j);
                }
            }
            StepSpec::composition(1, order)
        }
    };
    IterationPlan::new(k, eps, vec![step])
}

/// Result of a window scan.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    /// Last iteration whose plan was inspected.
    pub horizon: usize,
    /// `(n, M_n, windows checked)` for every requested index.
    pub checked: Vec<(usize, usize, usize)>,
    /// First `(n, i)` such that `n` is missing from iterations `i..i + M_n`.
    pub first_violation: Option<(usize, usize)>,
}

impl AdmissibilityReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Checks that every `n` in `indices` occurs in `I_{N_k}` for some `k` in every
/// window `i..=i + M_n - 1` lying inside `0..=horizon`.
pub fn verify_admissible(
    schedule: &ControlSchedule,
    horizon: usize,
    indices: &BTreeSet<usize>,
) -> Result<AdmissibilityReport> {
    let sets = (0..=horizon)
        .map(|k| {
            let p = schedule.plan_at(k)?;
            index_set(&p, p.n() as i64)
        })
        .collect::<Result<Vec<_>>>()?;
    scan_windows(&sets, &schedule.windows, indices)
}

/// The same window scan for dynamic string averaging, with `I_k` the union of
/// the images of the strings in `omega[k]`.
pub fn fit_check(
    omega: &[Vec<StringSpec>],
    windows: &WindowBounds,
    indices: &BTreeSet<usize>,
) -> Result<AdmissibilityReport> {
    let sets: Vec<BTreeSet<usize>> = omega
        .iter()
        .map(|strings| {
            strings
                .iter()
                .flat_map(|t| t.indices().iter().copied())
                .collect()
        })
        .collect();
    scan_windows(&sets, windows, indices)
}

fn scan_windows(
    sets: &[BTreeSet<usize>],
    windows: &WindowBounds,
    indices: &BTreeSet<usize>,
) -> Result<AdmissibilityReport> {
    if sets.is_empty() {
        return Err(Error::InvalidSchedule("empty horizon".into()));
    }
    let horizon = sets.len() - 1;
    let mut checked = Vec::new();
    let mut first_violation = None;
    for &n in indices {
        let m = windows.bound(n).ok_or_else(|| {
            Error::InvalidSchedule(format!("no window bound M_{n} declared for index {n}"))
        })?;
        if m == 0 || m - 1 > horizon {
            return Err(Error::InvalidSchedule(format!(
                "horizon {horizon} is shorter than the window M_{n} = {m}"
            )));
        }
        // next[i] = first k >= i with n in I_k
        let mut next = vec![usize::MAX; sets.len() + 1];
        for k in (0..sets.len()).rev() {
            next[k] = if sets[k].contains(&n) { k } else { next[k + 1] };
        }
        let starts = horizon + 2 - m;
        if first_violation.is_none() {
            if let Some(i) = (0..starts).find(|&i| next[i] > i + m - 1) {
                first_violation = Some((n, i));
            }
        }
        checked.push((n, m, starts));
    }
    Ok(AdmissibilityReport {
        horizon,
        checked,
        first_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_sequence_prefix() {
        let expected = [0, 1, 0, 2, 0, 1, 0, 3, 0, 1, 0, 2, 0, 1, 0, 4, 0, 1, 0, 2];
        let got: Vec<usize> = (0..20).map(f_value).collect();
        assert_eq!(got, expected);
        assert_eq!(f_value(7), 3);
        assert_eq!(f_value(15), 4);
    }

    #[test]
    fn f_value_hits_each_index_at_odd_multiples() {
        for n in 0..8 {
            for m in 0..20 {
                assert_eq!(f_value((1 << n) * (2 * m + 1) - 1), n);
            }
        }
    }

    #[test]
    fn power_of_two_plans_use_f() {
        let s = ControlSchedule::power_of_two(PowerShape::Relax { alpha: 1.0 }, 0.5).unwrap();
        for k in 0..64 {
            let p = s.plan_at(k).unwrap();
            assert_eq!(p.steps[0].j, BTreeSet::from([-(f_value(k) as i64)]));
        }
        assert_eq!(s.windows.bound(3), Some(16));
    }

    #[test]
    fn anchored_shapes_contain_f() {
        for shape in [
            PowerShape::Average {
                anchors: vec![0, 1],
            },
            PowerShape::Compose {
                anchors: vec![1, 0],
            },
        ] {
            let s = ControlSchedule::power_of_two(shape, 0.3).unwrap();
            for k in 0..32 {
                let p = s.plan_at(k).unwrap();
                let i = index_set(&p, 1).unwrap();
                assert!(i.contains(&f_value(k)) && i.contains(&0) && i.contains(&1));
            }
        }
        assert!(ControlSchedule::power_of_two(
            PowerShape::Average {
                anchors: vec![0, 1, 2]
            },
            0.5
        )
        .is_err());
    }

    #[test]
    fn cyclic_and_explicit() {
        let s = ControlSchedule::cyclic_relaxations(&[0, 1, 2], 1.0, 0.5).unwrap();
        for k in 0..10 {
            let p = s.plan_at(k).unwrap();
            assert_eq!(p.k, k);
            assert_eq!(index_set(&p, 1).unwrap(), BTreeSet::from([k % 3]));
        }
        let plans = (0..5)
            .map(|k| IterationPlan::new(k, 0.5, vec![StepSpec::relaxation(1, 0, 1.0)]).unwrap())
            .collect();
        let e = ControlSchedule::explicit(plans).unwrap();
        assert_eq!(e.plan_at(7).unwrap_err().code(), "horizon-exceeded");
        assert!(e.plan_at(4).is_ok());
    }

    #[test]
    fn verify_examples() {
        let p2 = ControlSchedule::power_of_two(PowerShape::Relax { alpha: 1.0 }, 0.5).unwrap();
        let rep = verify_admissible(&p2, 200, &(0..=4).collect()).unwrap();
        assert!(rep.passed());
        let cyc = ControlSchedule::cyclic_relaxations(&[0, 1, 2], 1.0, 0.5).unwrap();
        assert!(verify_admissible(&cyc, 50, &(0..=2).collect())
            .unwrap()
            .passed());
        let never = cyc.clone().with_windows(WindowBounds::uniform(3));
        let rep = verify_admissible(&never, 50, &BTreeSet::from([5])).unwrap();
        assert_eq!(rep.first_violation, Some((5, 0)));
    }

    #[test]
    fn verify_refuses_missing_bounds() {
        let cyc = ControlSchedule::cyclic_relaxations(&[0, 1], 1.0, 0.5).unwrap();
        assert_eq!(
            verify_admissible(&cyc, 20, &BTreeSet::from([4]))
                .unwrap_err()
                .code(),
            "invalid-schedule"
        );
        let p2 = ControlSchedule::power_of_two(PowerShape::Relax { alpha: 1.0 }, 0.5).unwrap();
        assert!(verify_admissible(&p2, 10, &BTreeSet::from([5])).is_err());
    }

    #[test]
    fn too_tight_bound_is_caught_at_first_gap() {
        // U_1 appears at k = 1, 5, 9, ...; a claimed M_1 = 3 fails first at i = 2
        let p2 = ControlSchedule::power_of_two(PowerShape::Relax { alpha: 1.0 }, 0.5)
            .unwrap()
            .with_windows(WindowBounds::uniform(3));
        let rep = verify_admissible(&p2, 40, &BTreeSet::from([1])).unwrap();
        assert_eq!(rep.first_violation, Some((1, 2)));
    }

    #[test]
    fn fit_check_examples() {
        let omega: Vec<Vec<StringSpec>> = (0..64)
            .map(|k| vec![StringSpec::new(vec![0, f_value(k)]).unwrap()])
            .collect();
        let rep = fit_check(&omega, &WindowBounds::power_of_two(), &(0..=4).collect()).unwrap();
        assert!(rep.passed());
        let constant: Vec<Vec<StringSpec>> = (0..16)
            .map(|_| vec![StringSpec::new(vec![0]).unwrap()])
            .collect();
        let rep = fit_check(&constant, &WindowBounds::uniform(4), &BTreeSet::from([1])).unwrap();
        assert_eq!(rep.first_violation, Some((1, 0)));
    }

    #[test]
    fn power_of_two_exhaustive_small() {
        let p2 = ControlSchedule::power_of_two(PowerShape::Relax { alpha: 1.0 }, 0.5).unwrap();
        let horizon = 300;
        for n in 0..=6usize {
            let m = 1usize << (n + 1);
            for i in 0..=(horizon + 1 - m) {
                assert!((i..i + m).any(|k| f_value(k) == n), "n={n} i={i}");
            }
        }
        assert!(verify_admissible(&p2, horizon, &(0..=6).collect())
            .unwrap()
            .passed());
    }
}
