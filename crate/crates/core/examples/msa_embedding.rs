//! Embedding a finite modular string-averaging method into an admissible
//! control over an identity-padded family.

use std::collections::BTreeSet;

use gmsa::control::verify_admissible;
use gmsa::dsa::msa_embed;
use gmsa::gmsa::{output_operator, IterationPlan, StepSpec};
use gmsa::sets::{Leaf, OperatorFamily, ProjectableSet};
use gmsa::{vector, Result};

fn main() -> Result<()> {
    let leaves = vec![
        Leaf::projection(ProjectableSet::halfspace(vector![1, 0], 1.0)?),
        Leaf::projection(ProjectableSet::ball(vector![0, 0], 2.0)?),
        Leaf::projection(ProjectableSet::halfspace(vector![0, 1], 0.5)?),
    ];
    let plans = vec![
        IterationPlan::new(
            0,
            0.2,
            vec![
                StepSpec::composition(1, vec![0, -1]),
                StepSpec::convex(2, &[(1, 0.5), (-2, 0.5)]),
            ],
        )?,
        IterationPlan::new(1, 0.2, vec![StepSpec::relaxation(1, 2, 1.5)])?,
    ];
    let original = OperatorFamily::finite(leaves.clone(), vector![0, 0]);
    let (family, sched) = msa_embed(leaves, vector![0, 0], plans.clone())?;

    let x = vector![3, 3];
    for k in [0, 1, 2, 3, 7, 15] {
        let p = sched.plan_at(k)?;
        let a = output_operator(&p, &family)?.apply(&x)?;
        let b = output_operator(&plans[k % 2], &original)?.apply(&x)?;
        println!(
            "k = {k:>2}: {} steps, embedded {a:?}, original {b:?}",
            p.n()
        );
    }
    let r = verify_admissible(&sched, 300, &BTreeSet::from([0, 1, 2, 3, 4, 5, 6]))?;
    println!("admissible for indices 0..=6 up to k = 300: {}", r.passed());
    Ok(())
}
