//! Solving over infinitely many halfspaces with a relaxation sweep, then
//! checking strong Fejer monotonicity and convergence.

use gmsa::control::{ControlSchedule, PowerShape};
use gmsa::sets::implied_halfspace_family;
use gmsa::solver::{
    check_fejer, convergence_report, run, LambdaRule, RelaxationSchedule, RunOptions, StopRule,
};
use gmsa::{vector, Result, Tolerance, Vector};

fn main() -> Result<()> {
    let base = vec![
        (vector![1.0, 0.2, 0.0, -0.3], 1.0),
        (vector![-0.4, 1.0, 0.3, 0.0], 0.5),
        (vector![0.0, -0.5, 1.0, 0.2], 0.8),
        (vector![0.3, 0.0, -0.6, 1.0], 0.3),
    ];
    let family = implied_halfspace_family(base, Vector::zeros(4), 11)?;
    let eps = 0.1;
    let sched = ControlSchedule::power_of_two(
        PowerShape::Average {
            anchors: vec![0, 1, 2, 3],
        },
        eps,
    )?;
    let relax = RelaxationSchedule::for_schedule(LambdaRule::Sweep { period: 5 }, eps, &sched)?;
    println!(
        "rho = {:.5}, lambda in [{eps}, {:.5}]",
        relax.rho,
        relax.upper()
    );

    let opts = RunOptions::new(StopRule::default()).monitor(0..12);
    let trace = run(&family, &sched, &relax, &vector![9, -4, 6, 7], &opts)?;
    println!(
        "{} iterations, stopped by {}",
        trace.iterations(),
        trace.stop_reason
    );

    let tol = Tolerance::absolute(1e-9);
    let fejer = check_fejer(
        &trace,
        &family,
        &Vector::zeros(4),
        relax.fejer_constant().unwrap(),
        &tol,
    )?;
    println!(
        "strong Fejer: passed = {}, min slack {:.2e}",
        fejer.passed(),
        fejer.min_slack
    );
    let conv = convergence_report(&trace, &family, &opts.monitored, &Tolerance::absolute(1e-6))?;
    println!("max distance to C_0..C_11 = {:.2e}", conv.max_distance);
    Ok(())
}
