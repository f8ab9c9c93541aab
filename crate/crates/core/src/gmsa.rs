//! Per-iteration GMSA plans: validation, index sets and module construction.
//!
//! A plan describes how the output operator `T_k = V_N` is assembled from the
//! input family. Step `n` (for `n = 1..=N`) draws its inputs from `J`, a set of
//! integers `<= n - 1`: an entry `j <= 0` names the input operator `U_{-j}`,
//! a positive entry names the module built by an earlier step.
//!
//! * `c = 0`: relax a single input operator by `alpha`;
//! * `c = 1`: weighted average over `J`;
//! * `c = 2`: compose along `order`, where `order[0]` acts first.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::OperatorNode;
use crate::sets::{Leaf, OperatorFamily};

const WEIGHT_SUM_EPS: f64 = 1e-9;

/// One recursive step of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub n: usize,
    pub c: u8,
    #[serde(rename = "J")]
    pub j: BTreeSet<i64>,
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Aligned with `j` in ascending order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<i64>>,
}

impl StepSpec {
    /// `c = 0`: `Id + alpha (U_index - Id)`.
    pub fn relaxation(n: usize, index: usize, alpha: f64) -> Self {
        StepSpec {
            n,
            c: 0,
            j: BTreeSet::from([-(index as i64)]),
            p: 1,
            alpha: Some(alpha),
            weights: None,
            order: None,
        }
    }

    /// `c = 1`: weighted average; pairs may come in any order.
    pub fn convex(n: usize, terms: &[(i64, f64)]) -> Self {
        let mut sorted = terms.to_vec();
        sorted.sort_by_key(|(j, _)| *j);
        StepSpec {
            n,
            c: 1,
            j: sorted.iter().map(|(j, _)| *j).collect(),
            p: sorted.len(),
            alpha: None,
            weights: Some(sorted.iter().map(|(_, w)| *w).collect()),
            order: None,
        }
    }

    /// `c = 2`: composition applying `order[0]` first.
    pub fn composition(n: usize, order: Vec<i64>) -> Self {
        StepSpec {
            n,
            c: 2,
            j: order.iter().copied().collect(),
            p: order.len(),
            alpha: None,
            weights: None,
            order: Some(order),
        }
    }
}

/// Hypotheses of the modulus lemmas, asserted by whoever builds the plan.
///
/// `sqne`: leaves are 1/2-strongly quasi-nonexpansive and each `c = 0` step
/// relaxes a cutter or uses `alpha = 1`. `fne`: the same with firm
/// nonexpansiveness in place of both properties.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaHypotheses {
    #[serde(default)]
    pub sqne: bool,
    #[serde(default)]
    pub fne: bool,
}

impl LemmaHypotheses {
    pub const BOTH: LemmaHypotheses = LemmaHypotheses {
        sqne: true,
        fne: true,
    };

    /// Checks the hypotheses against the leaves the plan actually uses.
    ///
    /// This is only meaningful for families of known primitives; for opaque
    /// operators the caller has to assert the flags directly.
    pub fn infer(plan: &IterationPlan, family: &OperatorFamily) -> Result<Self> {
        let used = index_set(plan, plan.n() as i64)?;
        let mut half = true;
        for &i in &used {
            let node = family.operator(i)?;
            half &= node.fne_constant().is_some_and(|r| r >= 0.5);
        }
        let (mut cutter_ok, mut firm_ok) = (half, half);
        for step in plan.steps.iter().filter(|s| s.c == 0) {
            if step.alpha == Some(1.0) {
                continue;
            }
            let leaf = family.operator((-step.j.first().copied().unwrap_or(0)) as usize)?;
            cutter_ok &= leaf.is_cutter();
            firm_ok &= leaf.fne_constant().is_some_and(|r| r >= 1.0);
        }
        Ok(LemmaHypotheses {
            sqne: cutter_ok,
            fne: firm_ok,
        })
    }
}

/// The recursive recipe for the output operator of iteration `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationPlan {
    pub k: usize,
    pub eps: f64,
    pub steps: Vec<StepSpec>,
    #[serde(default)]
    pub hypotheses: LemmaHypotheses,
}

impl IterationPlan {
    /// Builds and validates a plan.
    pub fn new(k: usize, eps: f64, steps: Vec<StepSpec>) -> Result<Self> {
        let plan = IterationPlan {
            k,
            eps,
            steps,
            hypotheses: LemmaHypotheses::default(),
        };
        validate_plan(&plan).into_result()?;
        Ok(plan)
    }

    pub fn with_hypotheses(mut self, h: LemmaHypotheses) -> Self {
        self.hypotheses = h;
        self
    }

    /// Re-labels the plan for another iteration; the steps are untouched.
    pub fn at(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    /// Number of recursive steps `N`.
    pub fn n(&self) -> usize {
        self.steps.len()
    }

    /// `max P_n` over the steps.
    pub fn max_p(&self) -> usize {
        self.steps.iter().map(|s| s.p).max().unwrap_or(1)
    }

    fn step(&self, n: usize) -> &StepSpec {
        &self.steps[n - 1]
    }
}

/// A single failed structural constraint; `step = 0` marks plan-level issues.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanViolation {
    pub step: usize,
    pub message: String,
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.step == 0 {
            f.write_str(&self.message)
        } else {
            write!(f, "step {}: {}", self.step, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<PlanViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidPlan(self.violations))
        }
    }
}

/// Checks every structural constraint and reports all failures.
pub fn validate_plan(plan: &IterationPlan) -> ValidationReport {
    let mut out = Vec::new();
    let mut bad = |step: usize, message: String| out.push(PlanViolation { step, message });
    let eps = plan.eps;
    if !(eps > 0.0 && eps <= 1.0) {
        bad(0, format!("eps = {eps} outside (0, 1]"));
    }
    if plan.steps.is_empty() {
        bad(0, "a plan needs at least one step".into());
    }
    for (i, s) in plan.steps.iter().enumerate() {
        let n = i + 1;
        if s.n != n {
            bad(n, format!("step labelled {} stored at position {n}", s.n));
        }
        if s.j.is_empty() {
            bad(n, "J must be nonempty".into());
        }
        if let Some(j) = s.j.iter().find(|&&j| j > n as i64 - 1) {
            bad(n, format!("J entry {j} exceeds n - 1 = {}", n - 1));
        }
        let extra = |field: &str, present: bool| {
            present.then(|| format!("{field} is not allowed when c = {}", s.c))
        };
        match s.c {
            0 => {
                if s.j.len() != 1 {
                    bad(n, format!("|J| must be 1 when c=0, got {}", s.j.len()));
                } else if s.j.iter().any(|&j| j > 0) {
                    bad(
                        n,
                        "J must reference an input operator (j <= 0) when c=0".into(),
                    );
                }
                if s.p != 1 {
                    bad(n, format!("P must be 1 when c=0, got {}", s.p));
                }
                match s.alpha {
                    None => bad(n, "alpha is required when c=0".into()),
                    Some(a) if !(a >= eps && a <= 2.0 - eps) => bad(
                        n,
                        format!(
                            "alpha = {a} outside [eps, 2 - eps] = [{eps}, {}]",
                            2.0 - eps
                        ),
                    ),
                    _ => {}
                }
                if let Some(m) = extra("weights", s.weights.is_some()) {
                    bad(n, m);
                }
                if let Some(m) = extra("order", s.order.is_some()) {
                    bad(n, m);
                }
            }
            1 => {
                match &s.weights {
                    None => bad(n, "weights are required when c=1".into()),
                    Some(w) if w.len() != s.j.len() => {
                        bad(n, format!("{} weights for |J| = {}", w.len(), s.j.len()))
                    }
                    Some(w) => {
                        if let Some(x) = w.iter().find(|&&x| !(x >= eps && x <= 1.0)) {
                            bad(n, format!("weight {x} outside [eps, 1] = [{eps}, 1]"));
                        }
                        let sum: f64 = w.iter().sum();
                        if (sum - 1.0).abs() > WEIGHT_SUM_EPS {
                            bad(n, format!("weights sum to {sum}, not 1"));
                        }
                    }
                }
                if s.p != s.j.len() {
                    bad(
                        n,
                        format!("P must equal |J| = {} when c=1, got {}", s.j.len(), s.p),
                    );
                }
                if let Some(m) = extra("alpha", s.alpha.is_some()) {
                    bad(n, m);
                }
                if let Some(m) = extra("order", s.order.is_some()) {
                    bad(n, m);
                }
            }
            2 => {
                match &s.order {
                    None => bad(n, "order is required when c=2".into()),
                    Some(o) => {
                        if o.len() != s.p {
                            bad(n, format!("order has length {}, P = {}", o.len(), s.p));
                        }
                        if let Some(x) = o.iter().find(|x| !s.j.contains(x)) {
                            bad(n, format!("order entry {x} is not in J"));
                        }
                        let image: BTreeSet<i64> = o.iter().copied().collect();
                        if let Some(x) = s.j.iter().find(|x| !image.contains(x)) {
                            bad(n, format!("order is not onto J: {x} never used"));
                        }
                    }
                }
                if s.p < s.j.len() {
                    bad(
                        n,
                        format!("P = {} is smaller than |J| = {}", s.p, s.j.len()),
                    );
                }
                if let Some(m) = extra("alpha", s.alpha.is_some()) {
                    bad(n, m);
                }
                if let Some(m) = extra("weights", s.weights.is_some()) {
                    bad(n, m);
                }
            }
            c => bad(n, format!("c = {c} is not one of 0, 1, 2")),
        }
    }
    ValidationReport { violations: out }
}

fn check_step_ref(plan: &IterationPlan, n: i64) -> Result<()> {
    if n > plan.n() as i64 {
        return Err(Error::InvalidPlan(vec![PlanViolation {
            step: 0,
            message: format!("module {n} requested from a plan with N = {}", plan.n()),
        }]));
    }
    Ok(())
}

/// Indices of the input operators that module `n` is built from.
pub fn index_set(plan: &IterationPlan, n: i64) -> Result<BTreeSet<usize>> {
    check_step_ref(plan, n)?;
    if n <= 0 {
        return Ok(BTreeSet::from([(-n) as usize]));
    }
    validate_plan(plan).into_result()?;
    let mut memo: HashMap<usize, BTreeSet<usize>> = HashMap::new();
    Ok(index_set_rec(plan, n as usize, &mut memo))
}

fn index_set_rec(
    plan: &IterationPlan,
    n: usize,
    memo: &mut HashMap<usize, BTreeSet<usize>>,
) -> BTreeSet<usize> {
    if let Some(s) = memo.get(&n) {
        return s.clone();
    }
    let mut out = BTreeSet::new();
    for &j in &plan.step(n).j {
        if j <= 0 {
            out.insert((-j) as usize);
        } else {
            out.extend(index_set_rec(plan, j as usize, memo));
        }
    }
    memo.insert(n, out.clone());
    out
}

/// Builds `V_n`, reusing each intermediate module once per call.
pub fn build_module(plan: &IterationPlan, n: i64, family: &OperatorFamily) -> Result<OperatorNode> {
    check_step_ref(plan, n)?;
    if n <= 0 {
        return family.operator((-n) as usize);
    }
    validate_plan(plan).into_result()?;
    let mut memo = HashMap::new();
    build_rec(plan, n, family, &mut memo)
}

fn build_rec(
    plan: &IterationPlan,
    n: i64,
    family: &OperatorFamily,
    memo: &mut HashMap<i64, OperatorNode>,
) -> Result<OperatorNode> {
    if n <= 0 {
        return family.operator((-n) as usize);
    }
    if let Some(node) = memo.get(&n) {
        return Ok(node.clone());
    }
    let step = plan.step(n as usize);
    let node = match step.c {
        0 => {
            let child = build_rec(plan, *step.j.first().expect("validated"), family, memo)?;
            OperatorNode::relaxation(child, step.alpha.expect("validated"))?
        }
        1 => {
            let children = step
                .j
                .iter()
                .map(|&j| build_rec(plan, j, family, memo))
                .collect::<Result<Vec<_>>>()?;
            OperatorNode::convex_comb(children, step.weights.clone().expect("validated"))?
        }
        _ => {
            let children = step
                .order
                .as_ref()
                .expect("validated")
                .iter()
                .map(|&j| build_rec(plan, j, family, memo))
                .collect::<Result<Vec<_>>>()?;
            OperatorNode::composition(children)?
        }
    };
    memo.insert(n, node.clone());
    Ok(node)
}

/// `T_k = V_N`.
pub fn output_operator(plan: &IterationPlan, family: &OperatorFamily) -> Result<OperatorNode> {
    build_module(plan, plan.n() as i64, family)
}

fn lemma_bound(plan: &IterationPlan) -> Result<f64> {
    validate_plan(plan).into_result()?;
    let prod: f64 = plan.steps.iter().map(|s| s.p as f64).product();
    Ok(plan.eps / (2.0 * prod))
}

/// `eps / (2 prod P_n)`, the guaranteed strong quasi-nonexpansiveness modulus.
pub fn sqne_bound(plan: &IterationPlan) -> Result<f64> {
    lemma_bound(plan)
}

/// Same value as [`sqne_bound`], but only under the firm-nonexpansiveness hypotheses.
pub fn fne_bound(plan: &IterationPlan) -> Result<f64> {
    let rho = lemma_bound(plan)?;
    if !plan.hypotheses.fne {
        return Err(Error::FneHypothesesUnmet);
    }
    Ok(rho)
}

/// `eps / (2 M^K)`: a modulus valid for every plan with `N <= K` and `P <= M`.
pub fn rho_uniform(k_max: usize, m_max: usize, eps: f64) -> f64 {
    eps / (2.0 * (m_max.max(1) as f64).powi(k_max.max(1) as i32))
}

/// `(K, M)` over a batch of plans, for [`rho_uniform`].
pub fn plan_metadata<'a>(plans: impl IntoIterator<Item = &'a IterationPlan>) -> (usize, usize) {
    plans
        .into_iter()
        .fold((1, 1), |(k, m), p| (k.max(p.n()), m.max(p.max_p())))
}

/// Leaves a plan references, in ascending index order.
pub fn leaves(plan: &IterationPlan, family: &OperatorFamily) -> Result<Vec<(usize, Leaf)>> {
    index_set(plan, plan.n() as i64)?
        .into_iter()
        .map(|i| Ok((i, family.leaf(i)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{Tolerance, Vector};
    use crate::operators::{check_fne, check_nonexpansive, check_sqne, SampleBudget};
    use crate::sets::ProjectableSet;
    use crate::vector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane_family() -> OperatorFamily {
        let leaves = vec![
            Leaf::projection(ProjectableSet::halfspace(vector![1, 0], 0.0).unwrap()),
            Leaf::projection(ProjectableSet::halfspace(vector![0, 1], 0.0).unwrap()),
            Leaf::projection(ProjectableSet::halfspace(vector![1, 1], 0.0).unwrap()),
            Leaf::relaxed(ProjectableSet::ball(vector![-1, -1], 2.0).unwrap(), 0.5),
        ];
        OperatorFamily::finite(leaves, vector![-0.5, -0.5])
    }

    fn plan(steps: Vec<StepSpec>) -> IterationPlan {
        IterationPlan {
            k: 0,
            eps: 0.2,
            steps,
            hypotheses: LemmaHypotheses::default(),
        }
    }

    #[test]
    fn validate_examples() {
        let p = plan(vec![StepSpec::relaxation(1, 3, 1.0)]);
        assert!(validate_plan(&p).is_valid());
        let p = plan(vec![StepSpec::convex(1, &[(0, 0.5), (-1, 0.5)])]);
        assert!(validate_plan(&p).is_valid());
        let mut s = StepSpec::relaxation(1, 0, 1.0);
        s.j.insert(-1);
        let rep = validate_plan(&plan(vec![s]));
        assert!(!rep.is_valid());
        assert!(rep.violations[0]
            .to_string()
            .contains("|J| must be 1 when c=0"));
    }

    #[test]
    fn validate_catches_each_constraint() {
        let bad = |steps: Vec<StepSpec>| !validate_plan(&plan(steps)).is_valid();
        assert!(bad(vec![]));
        assert!(bad(vec![StepSpec::relaxation(1, 0, 1.9)]));
        assert!(bad(vec![StepSpec::convex(1, &[(0, 0.6), (-1, 0.3)])]));
        assert!(bad(vec![StepSpec::convex(1, &[(0, 0.9), (-1, 0.1)])]));
        assert!(bad(vec![StepSpec::composition(1, vec![1])]));
        assert!(bad(vec![StepSpec::relaxation(2, 0, 1.0)]));
        let mut s = StepSpec::composition(1, vec![0, -1]);
        s.order = Some(vec![0, 0]);
        assert!(bad(vec![s]));
        let mut s = StepSpec::relaxation(1, 0, 1.0);
        s.c = 3;
        assert!(bad(vec![s]));
        let mut p = plan(vec![StepSpec::relaxation(1, 0, 1.0)]);
        p.eps = 0.0;
        assert!(!validate_plan(&p).is_valid());
    }

    #[test]
    fn validate_reports_all_violations() {
        let mut s = StepSpec::relaxation(1, 0, 1.0);
        s.j.insert(-1);
        s.p = 2;
        s.alpha = None;
        let rep = validate_plan(&plan(vec![s, StepSpec::composition(5, vec![7])]));
        assert!(rep.violations.len() >= 5, "{:?}", rep.violations);
        assert_eq!(rep.into_result().unwrap_err().code(), "invalid-plan");
    }

    #[test]
    fn index_set_examples() {
        let p = plan(vec![
            StepSpec::convex(1, &[(0, 0.5), (-2, 0.5)]),
            StepSpec::composition(2, vec![1, -7]),
        ]);
        assert_eq!(index_set(&p, -5).unwrap(), BTreeSet::from([5]));
        assert_eq!(index_set(&p, 1).unwrap(), BTreeSet::from([0, 2]));
        assert_eq!(index_set(&p, 2).unwrap(), BTreeSet::from([0, 2, 7]));
        assert_eq!(index_set(&p, 3).unwrap_err().code(), "invalid-plan");
    }

    #[test]
    fn build_examples() {
        let fam = plane_family();
        let p = plan(vec![StepSpec::relaxation(1, 1, 1.0)]);
        assert_eq!(build_module(&p, 0, &fam).unwrap(), fam.operator(0).unwrap());
        let out = output_operator(&p, &fam).unwrap();
        let u1 = fam.operator(1).unwrap();
        let comp = plan(vec![StepSpec::composition(1, vec![-1, 0])]);
        let comp = output_operator(&comp, &fam).unwrap();
        let u0 = fam.operator(0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = Vector::new(vec![
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ])
            .unwrap();
            assert_eq!(out.apply(&x).unwrap(), u1.apply(&x).unwrap());
            let direct = u0.apply(&u1.apply(&x).unwrap()).unwrap();
            assert_eq!(comp.apply(&x).unwrap(), direct);
        }
    }

    #[test]
    fn output_fixes_witness() {
        let fam = plane_family();
        let p = plan(vec![
            StepSpec::relaxation(1, 3, 1.5),
            StepSpec::convex(2, &[(1, 0.5), (-2, 0.5)]),
            StepSpec::composition(3, vec![2, 0, -1, 2]),
        ]);
        let t = output_operator(&p, &fam).unwrap();
        assert!(t.residual(fam.witness()).unwrap() <= 1e-12);
    }

    #[test]
    fn bounds_examples() {
        let p = IterationPlan::new(
            0,
            0.5,
            vec![
                StepSpec::convex(1, &[(0, 0.5), (-1, 0.5)]),
                StepSpec::composition(2, vec![1, -2, 1]),
            ],
        )
        .unwrap();
        assert!((sqne_bound(&p).unwrap() - 1.0 / 24.0).abs() < 1e-15);
        assert_eq!(fne_bound(&p).unwrap_err().code(), "fne-hypotheses-unmet");
        let p = p.with_hypotheses(LemmaHypotheses::BOTH);
        assert!((fne_bound(&p).unwrap() - 1.0 / 24.0).abs() < 1e-15);
        let single = IterationPlan::new(0, 1.0, vec![StepSpec::relaxation(1, 0, 1.0)]).unwrap();
        assert_eq!(sqne_bound(&single).unwrap(), 0.5);
        assert_eq!(rho_uniform(1, 1, 1.0), 0.5);
        assert!((rho_uniform(2, 3, 0.5) - 1.0 / 36.0).abs() < 1e-15);
        assert_eq!(plan_metadata([&p, &single]), (2, 3));
    }

    #[test]
    fn hypotheses_inference() {
        let fam = plane_family();
        let p = plan(vec![StepSpec::relaxation(1, 0, 1.7)]);
        assert_eq!(
            LemmaHypotheses::infer(&p, &fam).unwrap(),
            LemmaHypotheses::BOTH
        );
        let ball_half = plan(vec![StepSpec::relaxation(1, 3, 1.2)]);
        // a 1/2-relaxed projection is 3-regular, hence a cutter and firm
        assert_eq!(
            LemmaHypotheses::infer(&ball_half, &fam).unwrap(),
            LemmaHypotheses::BOTH
        );
        let over = OperatorFamily::finite(
            vec![Leaf::relaxed(
                ProjectableSet::halfspace(vector![1, 0], 0.0).unwrap(),
                4.0 / 3.0,
            )],
            vector![0, 0],
        );
        let relaxed = plan(vec![StepSpec::relaxation(1, 0, 1.2)]);
        let h = LemmaHypotheses::infer(&relaxed, &over).unwrap();
        assert!(!h.sqne && !h.fne);
        let unit = plan(vec![StepSpec::relaxation(1, 0, 1.0)]);
        assert_eq!(
            LemmaHypotheses::infer(&unit, &over).unwrap(),
            LemmaHypotheses::BOTH
        );
    }

    #[test]
    fn relabelling_keeps_operators() {
        let fam = plane_family();
        let p = plan(vec![
            StepSpec::convex(1, &[(0, 0.25), (-3, 0.75)]),
            StepSpec::composition(2, vec![-1, 1]),
        ]);
        let a = output_operator(&p, &fam).unwrap();
        let b = output_operator(&p.clone().at(17), &fam).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shared_submodules_build_once() {
        let fam = plane_family();
        let p = plan(vec![
            StepSpec::relaxation(1, 2, 0.8),
            StepSpec::composition(2, vec![1, 1, 1]),
        ]);
        let t = output_operator(&p, &fam).unwrap();
        match t.kind() {
            crate::operators::NodeKind::Composition { children } => {
                assert!(children.windows(2).all(|w| w[0] == w[1]));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bound_is_sound_on_example_plan() {
        let fam = plane_family();
        let p = IterationPlan::new(
            0,
            0.5,
            vec![
                StepSpec::relaxation(1, 0, 1.5),
                StepSpec::convex(2, &[(1, 0.5), (-3, 0.5)]),
                StepSpec::composition(3, vec![2, -1, 2]),
            ],
        )
        .unwrap();
        let h = LemmaHypotheses::infer(&p, &fam).unwrap();
        let p = p.with_hypotheses(h);
        let t = output_operator(&p, &fam).unwrap();
        let tol = Tolerance::default();
        let b = SampleBudget::new(500, 9, 6.0);
        let rho = sqne_bound(&p).unwrap();
        assert!(t.sqne_constant().unwrap() >= rho);
        assert!(check_sqne(&t, rho, fam.witness(), &b, &tol).unwrap().passed);
        let rho = fne_bound(&p).unwrap();
        assert!(check_fne(&t, rho, &b, &tol).unwrap().passed);
        assert!(check_nonexpansive(&t, &b, &tol).unwrap().passed);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        /// Plans over input indices 0..6 with up to 3 steps.
        fn any_plan() -> impl Strategy<Value = IterationPlan> {
            let eps = prop_oneof![Just(0.1), Just(0.25), Just(0.5)];
            (eps, prop::collection::vec((0u8..3, any::<u64>()), 1..4)).prop_map(|(eps, raw)| {
                let mut steps = Vec::new();
                for (i, (c, seed)) in raw.into_iter().enumerate() {
                    let n = i + 1;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let pick = |rng: &mut ChaCha8Rng| rng.random_range(-5..n as i64);
                    steps.push(match c {
                        0 => StepSpec::relaxation(
                            n,
                            rng.random_range(0..6),
                            rng.random_range(eps..=2.0 - eps),
                        ),
                        1 => {
                            let a = pick(&mut rng);
                            let b = pick(&mut rng);
                            if a == b {
                                StepSpec::convex(n, &[(a, 1.0)])
                            } else {
                                StepSpec::convex(n, &[(a, 0.5), (b, 0.5)])
                            }
                        }
                        _ => {
                            let len = rng.random_range(1..4);
                            StepSpec::composition(n, (0..len).map(|_| pick(&mut rng)).collect())
                        }
                    });
                }
                IterationPlan {
                    k: 0,
                    eps,
                    steps,
                    hypotheses: LemmaHypotheses::default(),
                }
            })
        }

        fn naive_index_set(plan: &IterationPlan, n: i64) -> BTreeSet<usize> {
            if n <= 0 {
                return BTreeSet::from([(-n) as usize]);
            }
            plan.steps[n as usize - 1]
                .j
                .iter()
                .flat_map(|&j| naive_index_set(plan, j))
                .collect()
        }

        proptest! {
            #[test]
            fn generated_plans_are_valid(p in any_plan()) {
                prop_assert!(validate_plan(&p).is_valid(), "{:?}", validate_plan(&p));
            }

            #[test]
            fn index_set_matches_naive(p in any_plan()) {
                for n in -3..=p.n() as i64 {
                    prop_assert_eq!(index_set(&p, n).unwrap(), naive_index_set(&p, n));
                }
            }

            #[test]
            fn rho_uniform_lower_bounds_plans(p in any_plan()) {
                let (k, m) = plan_metadata([&p]);
                prop_assert!(rho_uniform(k, m, p.eps) <= sqne_bound(&p).unwrap() * (1.0 + 1e-12));
            }

            #[test]
            fn calculus_dominates_lemma_bound(p in any_plan()) {
                let leaves: Vec<Leaf> = (0..6)
                    .map(|i| {
                        let a = Vector::basis(2, i % 2).scale(if i < 2 { 1.0 } else { -1.0 });
                        Leaf::projection(ProjectableSet::halfspace(a.add(&vector![0.1, 0.2]), 0.0).unwrap())
                    })
                    .collect();
                let fam = OperatorFamily::finite(leaves, vector![0, 0]);
                let h = LemmaHypotheses::infer(&p, &fam).unwrap();
                prop_assert!(h.sqne);
                let t = output_operator(&p, &fam).unwrap();
                prop_assert!(t.sqne_constant().unwrap() >= sqne_bound(&p).unwrap() * (1.0 - 1e-12));
                prop_assert!(t.residual(fam.witness()).unwrap() <= 1e-12);
            }
        }
    }
}
