//! Operator trees over relaxed projections, with derived regularity moduli.
//!
//! Each node caches two moduli computed bottom-up when it is built:
//!
//! * `sqne`: a `rho` such that `|T x - z|^2 <= |x - z|^2 - rho |T x - x|^2`
//!   for every `x` and every common fixed point `z`;
//! * `fne`: a `rho` such that
//!   `|T x - T y|^2 <= |x - y|^2 - rho |(x - T x) - (y - T y)|^2`.
//!
//! `None` means the calculus gives no guarantee. `f64::INFINITY` marks a node
//! that is the identity map, which satisfies both inequalities for every `rho`.
//!
//! Rules, for child moduli `r_i`:
//!
//! * relaxation by `alpha` of a `r`-regular child: `(1 + r - alpha) / alpha`
//!   when `0 < alpha <= 1 + r`, none otherwise (a projection is `1`-regular,
//!   so a `gamma`-relaxed projection gets `(2 - gamma) / gamma`);
//! * convex combination: `min r_i`;
//! * composition of `m` non-identity factors: `min r_i / m`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numeric::{Tolerance, Vector};
use crate::sets::{Leaf, ProjectableSet, MAX_LEAF_GAMMA};

/// Shape of an [`OperatorNode`].
#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Identity,
    /// `(1 - gamma) Id + gamma P_C`
    Primitive {
        set: ProjectableSet,
        gamma: f64,
    },
    /// `Id + alpha (T - Id)`
    Relaxation {
        child: OperatorNode,
        alpha: f64,
    },
    ConvexComb {
        children: Vec<OperatorNode>,
        weights: Vec<f64>,
    },
    /// Children are stored in application order: `children[0]` acts first.
    Composition {
        children: Vec<OperatorNode>,
    },
}

#[derive(PartialEq)]
struct Node {
    kind: NodeKind,
    dim: usize,
    sqne: Option<f64>,
    fne: Option<f64>,
}

/// Immutable, cheaply clonable operator tree.
#[derive(Clone, PartialEq)]
pub struct OperatorNode(Arc<Node>);

impl fmt::Debug for OperatorNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0.kind {
            NodeKind::Identity => write!(f, "Id"),
            NodeKind::Primitive { gamma, .. } => write!(f, "P[gamma={gamma}]"),
            NodeKind::Relaxation { child, alpha } => write!(f, "Relax({alpha}, {child:?})"),
            NodeKind::ConvexComb { children, weights } => {
                f.write_str("Avg(")?;
                for (i, (c, w)) in children.iter().zip(weights).enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{w}*{c:?}")?;
                }
                f.write_str(")")
            }
            NodeKind::Composition { children } => {
                f.write_str("Seq(")?;
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" -> ")?;
                    }
                    write!(f, "{c:?}")?;
                }
                f.write_str(")")
            }
        }
    }
}

const WEIGHT_SUM_EPS: f64 = 1e-9;

fn relaxed_modulus(child: Option<f64>, alpha: f64) -> Option<f64> {
    let r = child?;
    if alpha == 0.0 || r.is_infinite() {
        return Some(f64::INFINITY);
    }
    (alpha <= 1.0 + r).then(|| ((1.0 + r - alpha) / alpha).max(0.0))
}

fn min_modulus(mut mods: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    mods.try_fold(f64::INFINITY, |acc, m| Some(acc.min(m?)))
}

fn composed_modulus(mods: &[Option<f64>]) -> Option<f64> {
    let finite: Vec<Option<f64>> = mods
        .iter()
        .copied()
        .filter(|m| !matches!(m, Some(r) if r.is_infinite()))
        .collect();
    if finite.is_empty() {
        return Some(f64::INFINITY);
    }
    let m = finite.len() as f64;
    min_modulus(finite.into_iter()).map(|r| r / m)
}

impl OperatorNode {
    fn build(kind: NodeKind, dim: usize) -> Self {
        let (sqne, fne) = match &kind {
            NodeKind::Identity => (Some(f64::INFINITY), Some(f64::INFINITY)),
            NodeKind::Primitive { gamma, .. } => {
                let r = relaxed_modulus(Some(1.0), *gamma);
                (r, r)
            }
            NodeKind::Relaxation { child, alpha } => (
                relaxed_modulus(child.0.sqne, *alpha),
                relaxed_modulus(child.0.fne, *alpha),
            ),
            NodeKind::ConvexComb { children, .. } => (
                min_modulus(children.iter().map(|c| c.0.sqne)),
                min_modulus(children.iter().map(|c| c.0.fne)),
            ),
            NodeKind::Composition { children } => {
                let s: Vec<_> = children.iter().map(|c| c.0.sqne).collect();
                let f: Vec<_> = children.iter().map(|c| c.0.fne).collect();
                (composed_modulus(&s), composed_modulus(&f))
            }
        };
        // a rho-FNE operator is rho-SQNE
        let sqne = match (sqne, fne) {
            (Some(s), Some(f)) => Some(s.max(f)),
            (s, f) => s.or(f),
        };
        OperatorNode(Arc::new(Node {
            kind,
            dim,
            sqne,
            fne,
        }))
    }

    pub fn identity(dim: usize) -> Self {
        Self::build(NodeKind::Identity, dim)
    }

    /// `gamma`-relaxed metric projection onto `set`, `gamma` in `(0, 4/3]`.
    pub fn primitive(set: ProjectableSet, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= MAX_LEAF_GAMMA) {
            return Err(Error::InvalidOperator(format!(
                "leaf relaxation {gamma} outside (0, 4/3]"
            )));
        }
        let dim = set.dim();
        Ok(Self::build(NodeKind::Primitive { set, gamma }, dim))
    }

    pub fn projection(set: ProjectableSet) -> Self {
        Self::primitive(set, 1.0).expect("unit relaxation is admissible")
    }

    pub(crate) fn from_leaf(leaf: &Leaf, dim: usize) -> Result<Self> {
        match leaf {
            Leaf::Projection { set, gamma } => Self::primitive(set.clone(), *gamma),
            Leaf::Identity => Ok(Self::identity(dim)),
        }
    }

    /// `Id + alpha (child - Id)` with `alpha` in `[0, 2]`.
    pub fn relaxation(child: OperatorNode, alpha: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&alpha) {
            return Err(Error::InvalidOperator(format!(
                "relaxation parameter {alpha} outside [0, 2]"
            )));
        }
        let dim = child.dim();
        Ok(Self::build(NodeKind::Relaxation { child, alpha }, dim))
    }

    pub fn convex_comb(children: Vec<OperatorNode>, weights: Vec<f64>) -> Result<Self> {
        if children.is_empty() || children.len() != weights.len() {
            return Err(Error::InvalidOperator(format!(
                "convex combination needs matching nonempty children/weights, got {}/{}",
                children.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
            return Err(Error::InvalidOperator(format!("weight {w} outside (0, 1]")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_EPS {
            return Err(Error::InvalidOperator(format!(
                "weights sum to {sum}, not 1"
            )));
        }
        let dim = same_dim(&children)?;
        Ok(Self::build(NodeKind::ConvexComb { children, weights }, dim))
    }

    /// Composition applying `children` in list order.
    pub fn composition(children: Vec<OperatorNode>) -> Result<Self> {
        if children.is_empty() {
            return Err(Error::InvalidOperator(
                "composition needs at least one factor".into(),
            ));
        }
        let dim = same_dim(&children)?;
        Ok(Self::build(NodeKind::Composition { children }, dim))
    }

    pub fn kind(&self) -> &NodeKind {
        &self.0.kind
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    /// Guaranteed strong quasi-nonexpansiveness modulus, if any.
    pub fn sqne_constant(&self) -> Option<f64> {
        self.0.sqne
    }

    /// Guaranteed firm nonexpansiveness modulus, if any.
    pub fn fne_constant(&self) -> Option<f64> {
        self.0.fne
    }

    /// A `1`-strongly quasi-nonexpansive operator is a cutter.
    pub fn is_cutter(&self) -> bool {
        self.0.sqne.is_some_and(|r| r >= 1.0 - 1e-12)
    }

    pub fn is_nonexpansive(&self) -> bool {
        self.0.fne.is_some()
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.0.kind, NodeKind::Identity)
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        x.check_dim(self.dim())?;
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, x: &Vector) -> Vector {
        match &self.0.kind {
            NodeKind::Identity => x.clone(),
            NodeKind::Primitive { set, gamma } => {
                let p = set.project_unchecked(x);
                if *gamma == 1.0 {
                    p
                } else {
                    x.toward(*gamma, &p)
                }
            }
            NodeKind::Relaxation { child, alpha } => {
                let t = child.apply_unchecked(x);
                if *alpha == 1.0 {
                    t
                } else {
                    x.toward(*alpha, &t)
                }
            }
            NodeKind::ConvexComb { children, weights } => {
                let mut acc = Vector::zeros(x.dim());
                for (c, w) in children.iter().zip(weights) {
                    acc = acc.axpy(*w, &c.apply_unchecked(x));
                }
                acc
            }
            NodeKind::Composition { children } => {
                let mut y = children[0].apply_unchecked(x);
                for c in &children[1..] {
                    y = c.apply_unchecked(&y);
                }
                y
            }
        }
    }

    /// `|T x - x|`.
    pub fn residual(&self, x: &Vector) -> Result<f64> {
        Ok(self.apply(x)?.dist(x))
    }
}

fn same_dim(children: &[OperatorNode]) -> Result<usize> {
    let dim = children[0].dim();
    for c in children {
        if c.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: c.dim(),
            });
        }
    }
    Ok(dim)
}

/// How many points to sample for a property check, and where.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBudget {
    pub count: usize,
    pub seed: u64,
    /// Radius of the sampling ball.
    pub radius: f64,
    /// Centre for pair sampling in [`check_fne`] and [`check_nonexpansive`];
    /// the origin when unset. [`check_sqne`] always centres on its witness.
    pub center: Option<Vector>,
}

impl SampleBudget {
    pub fn new(count: usize, seed: u64, radius: f64) -> Self {
        SampleBudget {
            count: count.max(1),
            seed,
            radius,
            center: None,
        }
    }

    pub fn centered_at(mut self, center: Vector) -> Self {
        self.center = Some(center);
        self
    }
}

/// Outcome of a sampled inequality check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub samples: usize,
    /// Largest value of `lhs - rhs` seen; the inequality holds where it is `<= 0`.
    pub max_violation: f64,
    /// The sample (or pair) attaining `max_violation`.
    pub worst: Vec<Vector>,
    pub passed: bool,
}

fn ball_point(rng: &mut ChaCha8Rng, center: &Vector, radius: f64) -> Vector {
    let d = center.dim();
    let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let dir = Vector::from_raw(dir);
    let n = dir.norm();
    if n == 0.0 {
        return center.clone();
    }
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    center.axpy(r / n, &dir)
}

/// `rho * sq` with the convention `inf * 0 = 0`.
fn weighted(rho: f64, sq: f64) -> f64 {
    if sq == 0.0 {
        0.0
    } else {
        rho * sq
    }
}

struct Worst {
    value: f64,
    at: Vec<Vector>,
}

impl Worst {
    fn new() -> Self {
        Worst {
            value: f64::NEG_INFINITY,
            at: Vec::new(),
        }
    }

    fn offer(&mut self, value: f64, at: impl FnOnce() -> Vec<Vector>) {
        if value > self.value || value.is_nan() {
            self.value = value;
            self.at = at();
        }
    }

    fn report(self, samples: usize, tol: &Tolerance) -> CheckReport {
        CheckReport {
            samples,
            passed: self.value <= tol.abs_eps,
            max_violation: self.value,
            worst: self.at,
        }
    }
}

/// Samples `|T x - z|^2 - |x - z|^2 + rho |T x - x|^2` over the ball around `z`.
pub fn check_sqne(
    node: &OperatorNode,
    rho: f64,
    z: &Vector,
    budget: &SampleBudget,
    tol: &Tolerance,
) -> Result<CheckReport> {
    let residual = node.residual(z)?;
    if residual > tol.abs_eps {
        return Err(Error::WitnessNotFixed { residual });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut worst = Worst::new();
    for _ in 0..budget.count {
        let x = ball_point(&mut rng, z, budget.radius);
        let tx = node.apply_unchecked(&x);
        let v = tx.sub(z).norm_sq() - x.sub(z).norm_sq() + weighted(rho, tx.sub(&x).norm_sq());
        worst.offer(v, || vec![x]);
    }
    Ok(worst.report(budget.count, tol))
}

fn sample_pair(rng: &mut ChaCha8Rng, budget: &SampleBudget, dim: usize) -> (Vector, Vector) {
    let center = budget.center.clone().unwrap_or_else(|| Vector::zeros(dim));
    (
        ball_point(rng, &center, budget.radius),
        ball_point(rng, &center, budget.radius),
    )
}

/// Samples `|T x - T y|^2 - |x - y|^2 + rho |(x - T x) - (y - T y)|^2` over pairs.
pub fn check_fne(
    node: &OperatorNode,
    rho: f64,
    budget: &SampleBudget,
    tol: &Tolerance,
) -> Result<CheckReport> {
    if let Some(c) = &budget.center {
        c.check_dim(node.dim())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut worst = Worst::new();
    for _ in 0..budget.count {
        let (x, y) = sample_pair(&mut rng, budget, node.dim());
        let (tx, ty) = (node.apply_unchecked(&x), node.apply_unchecked(&y));
        let gap = x.sub(&tx).sub(&y.sub(&ty));
        let v = tx.sub(&ty).norm_sq() - x.sub(&y).norm_sq() + weighted(rho, gap.norm_sq());
        worst.offer(v, || vec![x, y]);
    }
    Ok(worst.report(budget.count, tol))
}

/// Samples `|T x - T y| - |x - y|` over pairs.
pub fn check_nonexpansive(
    node: &OperatorNode,
    budget: &SampleBudget,
    tol: &Tolerance,
) -> Result<CheckReport> {
    if let Some(c) = &budget.center {
        c.check_dim(node.dim())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut worst = Worst::new();
    for _ in 0..budget.count {
        let (x, y) = sample_pair(&mut rng, budget, node.dim());
        let v = node.apply_unchecked(&x).dist(&node.apply_unchecked(&y)) - x.dist(&y);
        worst.offer(v, || vec![x, y]);
    }
    Ok(worst.report(budget.count, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector;

    fn halfspace(a: Vector, b: f64) -> ProjectableSet {
        ProjectableSet::halfspace(a, b).unwrap()
    }

    fn proj(set: ProjectableSet, gamma: f64) -> OperatorNode {
        OperatorNode::primitive(set, gamma).unwrap()
    }

    fn budget() -> SampleBudget {
        SampleBudget::new(2000, 42, 5.0)
    }

    #[test]
    fn relaxation_examples() {
        let p = proj(halfspace(vector![1, 1], 0.5), 1.0);
        let x = vector![3, -1.5];
        let r1 = OperatorNode::relaxation(p.clone(), 1.0).unwrap();
        assert_eq!(r1.apply(&x).unwrap(), p.apply(&x).unwrap());
        let r0 = OperatorNode::relaxation(p, 0.0).unwrap();
        assert_eq!(r0.apply(&x).unwrap(), x);
        let refl = OperatorNode::relaxation(proj(halfspace(vector![1, 0], 0.0), 1.0), 2.0).unwrap();
        assert_eq!(refl.apply(&vector![2, 0]).unwrap(), vector![-2, 0]);
        assert!(OperatorNode::relaxation(refl, 2.5).is_err());
    }

    #[test]
    fn residual_examples() {
        let h = halfspace(vector![1, 0], 1.0);
        assert_eq!(proj(h.clone(), 1.0).residual(&vector![3, 0]).unwrap(), 2.0);
        assert_eq!(proj(h.clone(), 0.5).residual(&vector![3, 0]).unwrap(), 1.0);
        let tree =
            OperatorNode::composition(vec![proj(h, 1.0), proj(halfspace(vector![0, 1], 0.0), 0.7)])
                .unwrap();
        assert_eq!(tree.residual(&vector![0, 0]).unwrap(), 0.0);
        assert_eq!(tree.apply(&vector![1]).unwrap_err().code(), "dim-mismatch");
    }

    #[test]
    fn sqne_constant_examples() {
        let a = proj(halfspace(vector![1, 0], 0.0), 4.0 / 3.0);
        let b = proj(halfspace(vector![0, 1], 0.0), 4.0 / 3.0);
        assert!((a.sqne_constant().unwrap() - 0.5).abs() < 1e-15);
        let comp = OperatorNode::composition(vec![a.clone(), b.clone()]).unwrap();
        assert!((comp.sqne_constant().unwrap() - 0.25).abs() < 1e-15);
        let avg = OperatorNode::convex_comb(vec![a, b], vec![0.5, 0.5]).unwrap();
        assert!((avg.sqne_constant().unwrap() - 0.5).abs() < 1e-15);
        let p = proj(halfspace(vector![1, 0], 0.0), 1.0);
        assert_eq!(p.sqne_constant(), Some(1.0));
        assert!(p.is_cutter());
    }

    #[test]
    fn fne_constant_examples() {
        let p = proj(halfspace(vector![1, 0], 0.0), 2.0 / 3.0);
        assert!((p.fne_constant().unwrap() - 2.0).abs() < 1e-15);
        let half = || proj(halfspace(vector![1, 2], 0.0), 4.0 / 3.0);
        let comp = OperatorNode::composition(vec![half(), half(), half()]).unwrap();
        assert!((comp.fne_constant().unwrap() - 1.0 / 6.0).abs() < 1e-15);
        let firm = proj(halfspace(vector![1, 0], 0.0), 1.0);
        let r = OperatorNode::relaxation(firm, 1.0).unwrap();
        assert_eq!(r.fne_constant(), Some(1.0));
    }

    #[test]
    fn relaxation_beyond_guarantee_has_no_modulus() {
        // child is exactly 1/2-regular, so alpha may go up to 3/2
        let child = proj(halfspace(vector![1, 0], 0.0), 4.0 / 3.0);
        let ok = OperatorNode::relaxation(child.clone(), 1.5).unwrap();
        assert_eq!(ok.sqne_constant(), Some(0.0));
        let none = OperatorNode::relaxation(child, 1.8).unwrap();
        assert_eq!(none.sqne_constant(), None);
        assert_eq!(none.fne_constant(), None);
        assert!(!none.is_nonexpansive());
        let comp = OperatorNode::composition(vec![none, OperatorNode::identity(2)]).unwrap();
        assert_eq!(comp.sqne_constant(), None);
    }

    #[test]
    fn identity_does_not_degrade_constants() {
        let p = proj(halfspace(vector![1, 0], 0.0), 1.0);
        let id = OperatorNode::identity(2);
        assert_eq!(id.sqne_constant(), Some(f64::INFINITY));
        let comp = OperatorNode::composition(vec![p.clone(), id.clone()]).unwrap();
        assert_eq!(comp.fne_constant(), Some(1.0));
        let ids = OperatorNode::composition(vec![id.clone(), id]).unwrap();
        assert_eq!(ids.fne_constant(), Some(f64::INFINITY));
    }

    #[test]
    fn construction_invariants() {
        let p = proj(halfspace(vector![1, 0], 0.0), 1.0);
        assert!(OperatorNode::primitive(halfspace(vector![1, 0], 0.0), 1.5).is_err());
        assert!(OperatorNode::primitive(halfspace(vector![1, 0], 0.0), 0.0).is_err());
        assert!(OperatorNode::convex_comb(vec![p.clone(), p.clone()], vec![0.5, 0.4]).is_err());
        assert!(OperatorNode::convex_comb(vec![p.clone()], vec![]).is_err());
        assert!(OperatorNode::composition(vec![]).is_err());
        let q = proj(halfspace(vector![1, 0, 0], 0.0), 1.0);
        assert_eq!(
            OperatorNode::composition(vec![p, q]).unwrap_err().code(),
            "dim-mismatch"
        );
    }

    #[test]
    fn check_sqne_examples() {
        let tol = Tolerance::default();
        let z = vector![1, 0];
        let id = OperatorNode::identity(2);
        assert!(check_sqne(&id, 1e6, &z, &budget(), &tol).unwrap().passed);
        let p = proj(halfspace(vector![1, 0], 1.0), 1.0);
        assert!(check_sqne(&p, 1.0, &z, &budget(), &tol).unwrap().passed);
        let rep = check_sqne(&p, 10.0, &z, &budget(), &tol).unwrap();
        assert!(!rep.passed);
        // the violation is attained outside the halfspace
        assert!(rep.worst[0][0] > 1.0);
        let off = vector![3, 0];
        assert_eq!(
            check_sqne(&p, 1.0, &off, &budget(), &tol)
                .unwrap_err()
                .code(),
            "witness-not-fixed"
        );
    }

    #[test]
    fn check_sqne_detects_boundary_case_constructed_by_hand() {
        // x at distance 1 outside: |Tx - z|^2 = |x - z|^2 - |Tx - x|^2 exactly,
        // so any rho > 1 is violated there.
        let p = proj(halfspace(vector![1, 0], 0.0), 1.0);
        let (x, z) = (vector![1, 0], vector![0, 0]);
        let tx = p.apply(&x).unwrap();
        let lhs = tx.sub(&z).norm_sq();
        assert_eq!(lhs, x.sub(&z).norm_sq() - 1.0 * tx.sub(&x).norm_sq());
        assert!(lhs > x.sub(&z).norm_sq() - 10.0 * tx.sub(&x).norm_sq());
    }

    #[test]
    fn check_fne_examples() {
        let tol = Tolerance::default();
        let id = OperatorNode::identity(2);
        assert!(check_fne(&id, 1e3, &budget(), &tol).unwrap().passed);
        let h = halfspace(vector![1, -1], 0.0);
        let p = proj(h.clone(), 1.0);
        assert!(check_fne(&p, 1.0, &budget(), &tol).unwrap().passed);
        let refl = OperatorNode::relaxation(p, 2.0).unwrap();
        assert!(check_fne(&refl, 0.0, &budget(), &tol).unwrap().passed);
        assert!(!check_fne(&refl, 0.5, &budget(), &tol).unwrap().passed);
    }

    #[test]
    fn check_nonexpansive_examples() {
        let tol = Tolerance::default();
        assert!(
            check_nonexpansive(&OperatorNode::identity(3), &budget(), &tol)
                .unwrap()
                .passed
        );
        for gamma in [0.1, 0.5, 1.0, 4.0 / 3.0] {
            let p = proj(halfspace(vector![1, 2, 3], 0.5), gamma);
            assert!(check_nonexpansive(&p, &budget(), &tol).unwrap().passed);
        }
        let ball = ProjectableSet::ball(vector![1, 0, 0], 1.5).unwrap();
        let refl = OperatorNode::relaxation(proj(ball, 1.0), 2.0).unwrap();
        let twice = OperatorNode::composition(vec![refl.clone(), refl]).unwrap();
        assert!(check_nonexpansive(&twice, &budget(), &tol).unwrap().passed);
    }

    #[test]
    fn fixed_points_survive_relaxation() {
        let tol = Tolerance::default();
        let p = proj(halfspace(vector![2, 1], 1.0), 1.0);
        let inside = vector![0, 0];
        let outside = vector![3, 3];
        for alpha in [0.1, 0.5, 1.0, 1.5, 2.0] {
            let r = OperatorNode::relaxation(p.clone(), alpha).unwrap();
            assert!(r.residual(&inside).unwrap() <= tol.abs_eps);
            assert!(r.residual(&outside).unwrap() > tol.abs_eps);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn leaf(dim: usize) -> impl Strategy<Value = OperatorNode> {
            (prop::collection::vec(-1.0..1.0f64, dim), 0.05..=(4.0 / 3.0))
                .prop_filter("nonzero normal", |(a, _)| a.iter().any(|c| c.abs() > 1e-3))
                .prop_map(|(a, g)| {
                    // every boundary passes through the origin
                    proj(halfspace(Vector::new(a).unwrap(), 0.0), g)
                })
        }

        fn tree() -> impl Strategy<Value = OperatorNode> {
            leaf(3).prop_recursive(3, 16, 3, |inner| {
                prop_oneof![
                    (inner.clone(), 0.0..=2.0f64)
                        .prop_map(|(c, a)| OperatorNode::relaxation(c, a).unwrap()),
                    prop::collection::vec((inner.clone(), 0.1..1.0f64), 1..4).prop_map(|v| {
                        let total: f64 = v.iter().map(|(_, w)| w).sum();
                        let (c, w): (Vec<_>, Vec<_>) =
                            v.into_iter().map(|(c, w)| (c, w / total)).unzip();
                        let mut w = w;
                        let head: f64 = w[1..].iter().sum();
                        w[0] = 1.0 - head;
                        OperatorNode::convex_comb(c, w).unwrap()
                    }),
                    prop::collection::vec(inner, 1..4)
                        .prop_map(|c| OperatorNode::composition(c).unwrap()),
                ]
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn derived_constants_are_sound(node in tree(), seed in any::<u64>()) {
                let tol = Tolerance::default();
                let z = Vector::zeros(3);
                prop_assert!(node.residual(&z).unwrap() <= tol.abs_eps);
                let b = SampleBudget::new(300, seed, 4.0);
                if let Some(rho) = node.sqne_constant() {
                    let rep = check_sqne(&node, rho, &z, &b, &tol).unwrap();
                    prop_assert!(rep.passed, "sqne {rho}: {rep:?} {node:?}");
                }
                if let Some(rho) = node.fne_constant() {
                    let rep = check_fne(&node, rho, &b, &tol).unwrap();
                    prop_assert!(rep.passed, "fne {rho}: {rep:?} {node:?}");
                    prop_assert!(check_nonexpansive(&node, &b, &tol).unwrap().passed);
                    prop_assert!(node.sqne_constant().unwrap() >= rho);
                }
            }

            #[test]
            fn apply_is_deterministic(node in tree(), x in prop::collection::vec(-5.0..5.0f64, 3)) {
                let x = Vector::new(x).unwrap();
                let a = node.apply(&x).unwrap();
                let b = node.apply(&x).unwrap();
                prop_assert_eq!(a.as_slice(), b.as_slice());
            }
        }
    }
}
