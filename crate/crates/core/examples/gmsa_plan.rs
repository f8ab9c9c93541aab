//! A three-step plan: validation, the resulting tree and its bounds.

use gmsa::gmsa::{
    fne_bound, index_set, output_operator, sqne_bound, validate_plan, IterationPlan,
    LemmaHypotheses, StepSpec,
};
use gmsa::sets::{Leaf, OperatorFamily, ProjectableSet};
use gmsa::{vector, Result};

fn main() -> Result<()> {
    let family = OperatorFamily::finite(
        vec![
            Leaf::projection(ProjectableSet::halfspace(vector![1, 0], 1.0)?),
            Leaf::projection(ProjectableSet::halfspace(vector![0, 1], 1.0)?),
            Leaf::relaxed(ProjectableSet::ball(vector![0, 0], 2.0)?, 0.9),
        ],
        vector![0, 0],
    );
    let eps = 0.2;
    let plan = IterationPlan::new(
        0,
        eps,
        vec![
            StepSpec::relaxation(1, 2, 1.6),
            StepSpec::composition(2, vec![0, 1, -1]),
            StepSpec::convex(3, &[(1, 0.25), (2, 0.75)]),
        ],
    )?;
    let plan = plan
        .clone()
        .with_hypotheses(LemmaHypotheses::infer(&plan, &family)?);
    println!("operators used: {:?}", index_set(&plan, plan.n() as i64)?);
    println!(
        "sqne bound {:.5}, fne bound {:.5}",
        sqne_bound(&plan)?,
        fne_bound(&plan)?
    );

    let t = output_operator(&plan, &family)?;
    println!(
        "calculus gives sqne {:?}, fne {:?}",
        t.sqne_constant(),
        t.fne_constant()
    );
    println!("T(3, 4) = {:?}", t.apply(&vector![3, 4])?);

    let mut broken = plan.clone();
    broken.steps[0].j.insert(-1);
    for v in validate_plan(&broken).violations {
        println!("rejected: {v}");
    }
    Ok(())
}
