//! Closed convex sets with exact metric projections, and lazily generated
//! operator families built from them.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Tolerance, Vector};
use crate::operators::OperatorNode;

/// Largest admissible relaxation of a projection leaf. Leaves relaxed within
/// `(0, 4/3]` stay `1/2`-firmly nonexpansive.
pub const MAX_LEAF_GAMMA: f64 = 4.0 / 3.0;

/// The geometry of a [`ProjectableSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SetKind {
    /// `{x : <a, x> <= b}`
    Halfspace {
        a: Vector,
        b: f64,
    },
    /// `{x : <a, x> = b}`
    Hyperplane {
        a: Vector,
        b: f64,
    },
    Ball {
        center: Vector,
        radius: f64,
    },
    /// `{x : lo <= x <= hi}` coordinatewise.
    Box {
        lo: Vector,
        hi: Vector,
    },
    /// `offset + span(basis)` with an orthonormal basis (possibly empty).
    AffineSubspace {
        basis: Vec<Vector>,
        offset: Vector,
    },
}

/// A nonempty closed convex set with an exact nearest-point map.
#[derive(Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProjectableSet {
    kind: SetKind,
    #[serde(skip)]
    a_norm_sq: f64,
}

impl fmt::Debug for ProjectableSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind.fmt(f)
    }
}

impl<'de> Deserialize<'de> for ProjectableSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let kind = SetKind::deserialize(d)?;
        ProjectableSet::from_kind(kind).map_err(serde::de::Error::custom)
    }
}

const ORTHONORMAL_EPS: f64 = 1e-9;

impl ProjectableSet {
    pub fn from_kind(kind: SetKind) -> Result<Self> {
        let a_norm_sq = match &kind {
            SetKind::Halfspace { a, b } | SetKind::Hyperplane { a, b } => {
                let nsq = a.norm_sq();
                if nsq == 0.0 {
                    return Err(Error::InvalidSet("normal vector must be nonzero".into()));
                }
                if !b.is_finite() {
                    return Err(Error::InvalidSet("offset must be finite".into()));
                }
                nsq
            }
            SetKind::Ball { radius, .. } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidSet(format!(
                        "ball radius must be positive, got {radius}"
                    )));
                }
                0.0
            }
            SetKind::Box { lo, hi } => {
                hi.check_dim(lo.dim())?;
                if let Some(i) = (0..lo.dim()).find(|&i| lo[i] > hi[i]) {
                    return Err(Error::InvalidSet(format!(
                        "box bounds inverted at coordinate {i}"
                    )));
                }
                0.0
            }
            SetKind::AffineSubspace { basis, offset } => {
                for (i, u) in basis.iter().enumerate() {
                    u.check_dim(offset.dim())?;
                    for (j, w) in basis.iter().enumerate().skip(i) {
                        let target = if i == j { 1.0 } else { 0.0 };
                        if (u.dot(w) - target).abs() > ORTHONORMAL_EPS {
                            return Err(Error::InvalidSet(format!(
                                "affine basis vectors {i} and {j} are not orthonormal"
                            )));
                        }
                    }
                }
                0.0
            }
        };
        Ok(ProjectableSet { kind, a_norm_sq })
    }

    pub fn halfspace(a: Vector, b: f64) -> Result<Self> {
        Self::from_kind(SetKind::Halfspace { a, b })
    }

    pub fn hyperplane(a: Vector, b: f64) -> Result<Self> {
        Self::from_kind(SetKind::Hyperplane { a, b })
    }

    pub fn ball(center: Vector, radius: f64) -> Result<Self> {
        Self::from_kind(SetKind::Ball { center, radius })
    }

    pub fn boxed(lo: Vector, hi: Vector) -> Result<Self> {
        Self::from_kind(SetKind::Box { lo, hi })
    }

    pub fn affine(basis: Vec<Vector>, offset: Vector) -> Result<Self> {
        Self::from_kind(SetKind::AffineSubspace { basis, offset })
    }

    pub fn kind(&self) -> &SetKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SetKind::Halfspace { a, .. } | SetKind::Hyperplane { a, .. } => a.dim(),
            SetKind::Ball { center, .. } => center.dim(),
            SetKind::Box { lo, .. } => lo.dim(),
            SetKind::AffineSubspace { offset, .. } => offset.dim(),
        }
    }

    /// Nearest point of the set to `x`.
    pub fn project(&self, x: &Vector) -> Result<Vector> {
        x.check_dim(self.dim())?;
        Ok(self.project_unchecked(x))
    }

    pub(crate) fn project_unchecked(&self, x: &Vector) -> Vector {
        match &self.kind {
            SetKind::Halfspace { a, b } => {
                let excess = a.dot(x) - b;
                if excess <= 0.0 {
                    x.clone()
                } else {
                    x.axpy(-excess / self.a_norm_sq, a)
                }
            }
            SetKind::Hyperplane { a, b } => {
                let excess = a.dot(x) - b;
                x.axpy(-excess / self.a_norm_sq, a)
            }
            SetKind::Ball { center, radius } => {
                let d = x.dist(center);
                if d <= *radius {
                    x.clone()
                } else {
                    center.toward(radius / d, x)
                }
            }
            SetKind::Box { lo, hi } => Vector::from_raw(
                x.as_slice()
                    .iter()
                    .zip(lo.as_slice().iter().zip(hi.as_slice()))
                    .map(|(v, (l, h))| v.clamp(*l, *h))
                    .collect(),
            ),
            SetKind::AffineSubspace { basis, offset } => {
                let rel = x.sub(offset);
                basis
                    .iter()
                    .fold(offset.clone(), |acc, u| acc.axpy(rel.dot(u), u))
            }
        }
    }

    /// `d(x, C)`.
    pub fn distance(&self, x: &Vector) -> Result<f64> {
        x.check_dim(self.dim())?;
        Ok(self.distance_unchecked(x))
    }

    pub(crate) fn distance_unchecked(&self, x: &Vector) -> f64 {
        x.dist(&self.project_unchecked(x))
    }

    pub fn contains(&self, x: &Vector, tol: &Tolerance) -> Result<bool> {
        Ok(self.distance(x)? <= tol.abs_eps)
    }
}

/// An input operator of a family: a relaxed metric projection or the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "leaf", rename_all = "kebab-case")]
pub enum Leaf {
    /// `(1 - gamma) Id + gamma P_C`
    Projection {
        set: ProjectableSet,
        gamma: f64,
    },
    Identity,
}

impl Leaf {
    pub fn projection(set: ProjectableSet) -> Self {
        Leaf::Projection { set, gamma: 1.0 }
    }

    pub fn relaxed(set: ProjectableSet, gamma: f64) -> Self {
        Leaf::Projection { set, gamma }
    }

    pub fn set(&self) -> Option<&ProjectableSet> {
        match self {
            Leaf::Projection { set, .. } => Some(set),
            Leaf::Identity => None,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            Leaf::Projection { gamma, .. } => Some(*gamma),
            Leaf::Identity => None,
        }
    }
}

type Generator = dyn Fn(usize) -> Result<Leaf> + Send + Sync;

/// The sequence `U_0, U_1, ...` of input operators, generated on demand.
///
/// Every materialized leaf is checked against the declared common point and
/// cached, so each index is built at most once per family.
#[derive(Clone)]
pub struct OperatorFamily {
    dim: usize,
    witness: Vector,
    tol: Tolerance,
    generator: Arc<Generator>,
    memo: Arc<RwLock<HashMap<usize, (Leaf, OperatorNode)>>>,
}

impl fmt::Debug for OperatorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorFamily")
            .field("dim", &self.dim)
            .field("witness", &self.witness)
            .field("materialized", &self.materialized())
            .finish()
    }
}

impl OperatorFamily {
    /// A family from an arbitrary index rule. `witness` must lie in every
    /// generated set; this is spot-checked whenever an index is materialized.
    pub fn new<F>(witness: Vector, generator: F) -> Self
    where
        F: Fn(usize) -> Result<Leaf> + Send + Sync + 'static,
    {
        OperatorFamily {
            dim: witness.dim(),
            witness,
            tol: Tolerance::default(),
            generator: Arc::new(generator),
            memo: Arc::new(RwLock::new(HashMap::new())),
        }
    }

    /// A finite family; indices past the end are an error.
    pub fn finite(leaves: Vec<Leaf>, witness: Vector) -> Self {
        let len = leaves.len();
        Self::new(witness, move |n| {
            leaves
                .get(n)
                .cloned()
                .ok_or_else(|| Error::Family(format!("index {n} outside finite family of {len}")))
        })
    }

    /// A finite family padded with the identity beyond its last index.
    pub fn padded_with_identity(leaves: Vec<Leaf>, witness: Vector) -> Self {
        Self::new(witness, move |n| {
            Ok(leaves.get(n).cloned().unwrap_or(Leaf::Identity))
        })
    }

    pub fn with_tolerance(mut self, tol: Tolerance) -> Self {
        self.tol = tol;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn witness(&self) -> &Vector {
        &self.witness
    }

    pub fn tolerance(&self) -> &Tolerance {
        &self.tol
    }

    fn materialize(&self, n: usize) -> Result<(Leaf, OperatorNode)> {
        if let Some(hit) = self.memo.read().expect("family memo poisoned").get(&n) {
            return Ok(hit.clone());
        }
        let leaf = (self.generator)(n)?;
        if let Leaf::Projection { set, .. } = &leaf {
            if set.dim() != self.dim {
                return Err(Error::Family(format!(
                    "operator {n} lives in dimension {}, family in {}",
                    set.dim(),
                    self.dim
                )));
            }
            let d = set.distance_unchecked(&self.witness);
            if d > self.tol.abs_eps {
                return Err(Error::Family(format!(
                    "declared common point is at distance {d:e} from set {n}"
                )));
            }
        }
        let node = OperatorNode::from_leaf(&leaf, self.dim)
            .map_err(|e| Error::Family(format!("operator {n}: {e}")))?;
        let mut memo = self.memo.write().expect("family memo poisoned");
        let entry = memo.entry(n).or_insert((leaf, node));
        Ok(entry.clone())
    }

    /// The primitive operator node `U_n`.
    pub fn operator(&self, n: usize) -> Result<OperatorNode> {
        Ok(self.materialize(n)?.1)
    }

    pub fn leaf(&self, n: usize) -> Result<Leaf> {
        Ok(self.materialize(n)?.0)
    }

    /// `d(x, Fix U_n)`; zero for identity members.
    pub fn distance(&self, n: usize, x: &Vector) -> Result<f64> {
        x.check_dim(self.dim)?;
        Ok(match self.materialize(n)?.0 {
            Leaf::Projection { set, .. } => set.distance_unchecked(x),
            Leaf::Identity => 0.0,
        })
    }

    /// Indices built so far, sorted.
    pub fn materialized(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .memo
            .read()
            .expect("family memo poisoned")
            .keys()
            .copied()
            .collect();
        v.sort_unstable();
        v
    }
}

/// Halfspace family whose members past the first `base.len()` are nonnegative
/// combinations of the base halfspaces, normalised to unit normals.
///
/// Every generated constraint is implied by the base ones, so the intersection
/// of the whole infinite family equals the intersection of the base sets.
/// Combination weights for index `n` are drawn from a generator seeded by
/// `(seed, n)`, which keeps materialization order-independent.
pub fn implied_halfspace_family(
    base: Vec<(Vector, f64)>,
    witness: Vector,
    seed: u64,
) -> Result<OperatorFamily> {
    if base.is_empty() {
        return Err(Error::Family(
            "implied family needs at least one base halfspace".into(),
        ));
    }
    let sets = base
        .iter()
        .map(|(a, b)| ProjectableSet::halfspace(a.clone(), *b))
        .collect::<Result<Vec<_>>>()?;
    for s in &sets {
        if s.dim() != witness.dim() {
            return Err(Error::DimMismatch {
                expected: witness.dim(),
                found: s.dim(),
            });
        }
    }
    Ok(OperatorFamily::new(witness, move |n| {
        if let Some(s) = sets.get(n) {
            return Ok(Leaf::projection(s.clone()));
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        loop {
            let weights: Vec<f64> = (0..base.len())
                .map(|_| rng.random_range(0.0..1.0))
                .collect();
            let dim = base[0].0.dim();
            let mut a = Vector::zeros(dim);
            let mut b = 0.0;
            for (w, (ai, bi)) in weights.iter().zip(&base) {
                a = a.axpy(*w, ai);
                b += w * bi;
            }
            let na = a.norm();
            if na > 1e-6 {
                return Ok(Leaf::projection(ProjectableSet::halfspace(
                    a.scale(1.0 / na),
                    b / na,
                )?));
            }
        }
    }))
}
