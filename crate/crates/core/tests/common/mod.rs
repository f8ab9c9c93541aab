#![allow(dead_code)]

use std::collections::BTreeSet;

use gmsa::control::{ControlSchedule, PowerShape};
use gmsa::gmsa::{IterationPlan, StepSpec};
use gmsa::sets::{implied_halfspace_family, Leaf, OperatorFamily, ProjectableSet};
use gmsa::solver::{LambdaRule, RelaxationSchedule};
use gmsa::Vector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    Vector::new(
        (0..dim)
            .map(|_| Distribution::<f64>::sample(&StandardNormal, rng))
            .collect(),
    )
    .unwrap()
}

/// `count` halfspaces whose boundaries all pass through `witness`.
pub fn halfspaces_through(
    rng: &mut ChaCha8Rng,
    witness: &Vector,
    count: usize,
) -> Vec<ProjectableSet> {
    (0..count)
        .map(|_| {
            let a = gaussian(rng, witness.dim());
            let b = a.dot(witness);
            ProjectableSet::halfspace(a, b).unwrap()
        })
        .collect()
}

/// Weights in `[eps, 1]` summing to one.
pub fn weights(rng: &mut ChaCha8Rng, count: usize, eps: f64) -> Vec<f64> {
    if count == 1 {
        return vec![1.0];
    }
    let free = 1.0 - count as f64 * eps;
    let raw: Vec<f64> = (0..count).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| eps + free * r / total).collect()
}

/// A random valid plan with at most `max_n` steps and `P <= max_p`.
///
/// `gammas[i]` is the relaxation of family leaf `i`. Relaxation steps on a
/// leaf with `gamma > 1` use `alpha = 1`, the only choice under which the
/// firm-nonexpansiveness lemma applies to such a leaf.
pub fn random_plan(
    rng: &mut ChaCha8Rng,
    eps: f64,
    gammas: &[f64],
    max_n: usize,
    max_p: usize,
) -> IterationPlan {
    let big_n = rng.random_range(1..=max_n);
    let max_avg = ((1.0 / eps + 1e-9).floor() as usize).min(max_p);
    let mut steps = Vec::new();
    for n in 1..=big_n {
        let pool: Vec<i64> = (1..n as i64)
            .chain((0..gammas.len() as i64).map(|i| -i))
            .collect();
        let c = rng.random_range(0..3u8);
        let pick = |rng: &mut ChaCha8Rng, k: usize| -> Vec<i64> {
            let mut s = BTreeSet::new();
            while s.len() < k.min(pool.len()) {
                s.insert(pool[rng.random_range(0..pool.len())]);
            }
            s.into_iter().collect()
        };
        let step = match c {
            0 => {
                let i = rng.random_range(0..gammas.len());
                let alpha = if gammas[i] > 1.0 || eps == 1.0 {
                    1.0
                } else {
                    rng.random_range(eps..=2.0 - eps)
                };
                StepSpec::relaxation(n, i, alpha)
            }
            1 => {
                let k = rng.random_range(1..=max_avg);
                let j = pick(rng, k);
                let w = weights(rng, j.len(), eps);
                let terms: Vec<(i64, f64)> = j.into_iter().zip(w).collect();
                StepSpec::convex(n, &terms)
            }
            _ => {
                let p = rng.random_range(1..=max_p);
                let k = rng.random_range(1..=p);
                let j = pick(rng, k);
                let mut order = j.clone();
                while order.len() < p {
                    order.push(j[rng.random_range(0..j.len())]);
                }
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
                StepSpec::composition(n, order)
            }
        };
        steps.push(step);
    }
    IterationPlan::new(0, eps, steps).unwrap()
}

/// Eight halfspaces through a random witness in R^5, each relaxed by the
/// matching entry of `gammas`.
pub fn halfspace_family(seed: u64, gammas: &[f64]) -> (OperatorFamily, Vector) {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = gaussian(&mut rng, 5);
    let leaves = halfspaces_through(&mut rng, &z, gammas.len())
        .into_iter()
        .zip(gammas)
        .map(|(s, &g)| Leaf::relaxed(s, g))
        .collect();
    (OperatorFamily::finite(leaves, z.clone()), z)
}

pub const INFINITE_EPS: f64 = 0.1;
pub const ANCHORS: [usize; 5] = [0, 1, 2, 3, 4];

/// Lazily generated halfspaces in R^5 that all contain the origin: five base
/// constraints with `b > 0` and, past them, implied combinations.
pub fn infinite_family(seed: u64) -> OperatorFamily {
    let base = vec![
        (Vector::new(vec![1.0, 0.2, 0.0, -0.3, 0.1]).unwrap(), 1.0),
        (Vector::new(vec![-0.4, 1.0, 0.3, 0.0, 0.0]).unwrap(), 0.5),
        (Vector::new(vec![0.0, -0.5, 1.0, 0.2, -0.2]).unwrap(), 0.8),
        (Vector::new(vec![0.3, 0.0, -0.6, 1.0, 0.4]).unwrap(), 0.3),
        (Vector::new(vec![-0.2, -0.2, 0.0, -0.5, 1.0]).unwrap(), 0.6),
    ];
    implied_halfspace_family(base, Vector::zeros(5), seed).unwrap()
}

/// Power-of-two control: plan `k` averages the anchors with `U_{f_k}`.
pub fn power_schedule() -> ControlSchedule {
    ControlSchedule::power_of_two(
        PowerShape::Average {
            anchors: ANCHORS.to_vec(),
        },
        INFINITE_EPS,
    )
    .unwrap()
}

/// `lambda_k` sweeping `[eps, 1 + rho - eps]` with the uniform `rho`.
pub fn sweep(schedule: &ControlSchedule) -> RelaxationSchedule {
    RelaxationSchedule::for_schedule(LambdaRule::Sweep { period: 7 }, INFINITE_EPS, schedule)
        .unwrap()
}

pub fn far_start() -> Vector {
    Vector::new(vec![8.0, -6.0, 5.0, 9.0, -7.0]).unwrap()
}

/// `[0, 1]^3` cut by `x1 + x2 + x3 <= 2.5`; the linear objective with
/// `c = (1, 1, 1)` is minimized only at the origin.
pub fn box_family() -> OperatorFamily {
    let b = ProjectableSet::boxed(Vector::zeros(3), Vector::new(vec![1.0; 3]).unwrap()).unwrap();
    let h = ProjectableSet::halfspace(Vector::new(vec![1.0; 3]).unwrap(), 2.5).unwrap();
    OperatorFamily::finite(
        vec![Leaf::projection(b), Leaf::projection(h)],
        Vector::new(vec![0.2; 3]).unwrap(),
    )
}

/// Every iteration applies the cut and then the box, so each iterate lands
/// in the box.
pub fn box_schedule() -> ControlSchedule {
    let plan = IterationPlan::new(0, 0.5, vec![StepSpec::composition(1, vec![-1, 0])]).unwrap();
    ControlSchedule::cyclic(vec![plan]).unwrap()
}

/// A composition of two projections is `1/2`-strongly quasi-nonexpansive,
/// so `rho = 1/2` is a valid common modulus and `lambda = 1` is admissible.
pub fn box_relaxation() -> RelaxationSchedule {
    RelaxationSchedule::new(LambdaRule::Constant(1.0), 0.5, 0.5).unwrap()
}

/// `x1 <= 0` and `x2 <= 0` in the plane.
pub fn two_halfspaces() -> (OperatorFamily, ControlSchedule, RelaxationSchedule) {
    let e = |i| Vector::basis(2, i);
    let fam = OperatorFamily::finite(
        vec![
            Leaf::projection(ProjectableSet::halfspace(e(0), 0.0).unwrap()),
            Leaf::projection(ProjectableSet::halfspace(e(1), 0.0).unwrap()),
        ],
        Vector::zeros(2),
    );
    let sched = ControlSchedule::cyclic_relaxations(&[0, 1], 1.0, 0.5).unwrap();
    let relax = RelaxationSchedule::new(LambdaRule::Constant(1.0), 0.5, 1.0).unwrap();
    (fam, sched, relax)
}
