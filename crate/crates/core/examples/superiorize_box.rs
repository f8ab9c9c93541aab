//! Superiorization of a linear objective over a cut cube, with the
//! alternatives diagnostic.

use gmsa::control::ControlSchedule;
use gmsa::gmsa::{IterationPlan, StepSpec};
use gmsa::sets::{Leaf, OperatorFamily, ProjectableSet};
use gmsa::solver::{run, LambdaRule, RelaxationSchedule, RunOptions, StopRule};
use gmsa::superiorize::{
    alternatives_diagnostic, run_superiorized, AlternativesOptions, BetaForm, BetaGrid,
    ObjectiveOracle, ZERO_TOL,
};
use gmsa::{vector, Result};

fn main() -> Result<()> {
    let family = OperatorFamily::finite(
        vec![
            Leaf::projection(ProjectableSet::boxed(vector![0, 0, 0], vector![1, 1, 1])?),
            Leaf::projection(ProjectableSet::halfspace(vector![1, 1, 1], 2.5)?),
        ],
        vector![0.2, 0.2, 0.2],
    );
    let plan = IterationPlan::new(0, 0.5, vec![StepSpec::composition(1, vec![-1, 0])])?;
    let sched = ControlSchedule::cyclic(vec![plan])?;
    let relax = RelaxationSchedule::new(LambdaRule::Constant(1.0), 0.5, 0.5)?;
    let oracle = ObjectiveOracle::linear(vector![1, 1, 1]).with_argmin(vec![vector![0, 0, 0]]);
    let opts = RunOptions::new(StopRule::iterations(2000));
    let y0 = vector![5, 5, 5];

    for c in [10.0, 0.5] {
        let grid = BetaGrid::new(1, BetaForm::Polynomial { c, p: 2.0 })?;
        let sup = run_superiorized(
            &family, &sched, &relax, &oracle, &grid, &y0, &opts, ZERO_TOL,
        )?;
        let verdict = alternatives_diagnostic(&sup, &oracle, &AlternativesOptions::default())?;
        println!(
            "c = {c:>4}: phi = {:.4}, end {:?}, {verdict:?}",
            oracle.value(&sup.final_point)?,
            sup.final_point
        );
    }
    let plain = run(&family, &sched, &relax, &y0, &opts)?;
    println!(
        "plain:     phi = {:.4}, end {:?}",
        oracle.value(&plain.final_point)?,
        plain.final_point
    );
    Ok(())
}
