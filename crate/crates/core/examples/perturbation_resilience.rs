//! Summable perturbations do not change where the iteration ends up.

use gmsa::control::ControlSchedule;
use gmsa::sets::{Leaf, OperatorFamily, ProjectableSet};
use gmsa::solver::{
    run, run_perturbed, BetaRule, DirectionRule, LambdaRule, PerturbationSchedule,
    RelaxationSchedule, RunOptions, StopRule,
};
use gmsa::{vector, Result};

fn main() -> Result<()> {
    let family = OperatorFamily::finite(
        vec![
            Leaf::projection(ProjectableSet::ball(vector![0, 0, 0], 2.0)?),
            Leaf::projection(ProjectableSet::halfspace(vector![1, 1, 1], 1.0)?),
            Leaf::projection(ProjectableSet::boxed(
                vector![-1, -1, -1],
                vector![3, 3, 3],
            )?),
        ],
        vector![0, 0, 0],
    );
    let sched = ControlSchedule::cyclic_relaxations(&[0, 1, 2], 1.0, 0.5)?;
    let relax = RelaxationSchedule::new(LambdaRule::Constant(1.0), 0.5, 1.0)?;
    // each T_k touches one set, so a small residual must last a full cycle
    let stop = StopRule {
        residual_tol: Some(1e-8),
        ..StopRule::default()
    };
    let opts = RunOptions::new(stop.patience(3)).monitor([0, 1, 2]);
    let x0 = vector![6, 5, -4];

    let plain = run(&family, &sched, &relax, &x0, &opts)?;
    let worst = plain
        .last()
        .set_distances
        .iter()
        .copied()
        .fold(0.0, f64::max);
    println!(
        "{:<20} {:>5} iterations, max d(x, C_n) = {worst:.2e}",
        "plain",
        plain.iterations()
    );
    for dir in [
        DirectionRule::AwayFromWitness,
        DirectionRule::SeededRandom { seed: 3 },
    ] {
        let name = format!("{dir:?}");
        let p = PerturbationSchedule::new(BetaRule::Summable { c: 0.5, p: 2.0 }, dir)?;
        let t = run_perturbed(&family, &sched, &relax, &p, &x0, &opts)?;
        let worst = t.last().set_distances.iter().copied().fold(0.0, f64::max);
        println!(
            "{name:<20} {:>5} iterations, max d(x, C_n) = {worst:.2e}",
            t.iterations()
        );
    }
    Ok(())
}
