mod common;

use std::collections::BTreeSet;

use gmsa::control::{verify_admissible, ControlSchedule};
use gmsa::gmsa::{index_set, LemmaHypotheses};
use gmsa::solver::{check_fejer, run, LambdaRule, RelaxationSchedule, RunOptions, StopRule};
use gmsa::Tolerance;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

fn cyclic_problem(
    seed: u64,
    eps: f64,
    plans: usize,
) -> (gmsa::sets::OperatorFamily, ControlSchedule, gmsa::Vector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fam, z) = halfspace_family(seed, &[1.0; 8]);
    let templates = (0..plans)
        .map(|k| {
            let p = random_plan(&mut rng, eps, &[1.0; 8], 3, 4).at(k);
            let h = LemmaHypotheses::infer(&p, &fam).unwrap();
            p.with_hypotheses(h)
        })
        .collect();
    (fam, ControlSchedule::cyclic(templates).unwrap(), z)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn random_cyclic_runs_are_strongly_fejer(seed in 0u64..10_000, e in 0usize..3, period in 1usize..9) {
        let eps = [0.1, 0.5, 1.0][e];
        let (fam, sched, z) = cyclic_problem(seed, eps, 3);
        let relax = RelaxationSchedule::for_schedule(LambdaRule::Sweep { period }, eps.min(0.25), &sched).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xFEED);
        let x0 = z.add(&gaussian(&mut rng, 5).scale(20.0));
        let trace = run(&fam, &sched, &relax, &x0, &RunOptions::new(StopRule::iterations(150))).unwrap();
        let report = check_fejer(&trace, &fam, &z, relax.fejer_constant().unwrap(), &Tolerance::absolute(1e-9)).unwrap();
        prop_assert!(report.passed(), "slack {:e} at {:?}", report.min_slack, report.first_violation);
        for w in trace.rows.windows(2) {
            prop_assert!(w[1].dist_witness <= w[0].dist_witness + 1e-9);
        }
    }

    #[test]
    fn cyclic_control_is_admissible_for_its_indices(seed in 0u64..10_000, plans in 1usize..5) {
        let (_, sched, _) = cyclic_problem(seed, 0.1, plans);
        let used: BTreeSet<usize> = (0..plans)
            .flat_map(|k| {
                let p = sched.plan_at(k).unwrap();
                index_set(&p, p.n() as i64).unwrap()
            })
            .collect();
        let r = verify_admissible(&sched, 40, &used).unwrap();
        prop_assert!(r.passed());
        for (_, m, _) in r.checked {
            prop_assert_eq!(m, plans);
        }
    }

    #[test]
    fn thinning_keeps_the_scalars(seed in 0u64..1000, stride in 2usize..10) {
        let (fam, sched, z) = cyclic_problem(seed, 0.5, 2);
        let relax = RelaxationSchedule::for_schedule(LambdaRule::Sweep { period: 3 }, 0.5, &sched).unwrap();
        let x0 = z.add(&gmsa::Vector::new(vec![3.0; 5]).unwrap());
        let stop = StopRule::iterations(40);
        let full = run(&fam, &sched, &relax, &x0, &RunOptions::new(stop.clone())).unwrap();
        let thin = run(&fam, &sched, &relax, &x0, &RunOptions::new(stop).stride(stride)).unwrap();
        prop_assert_eq!(full.to_csv(), thin.to_csv());
        prop_assert_eq!(&full.final_point, &thin.final_point);
        prop_assert!(thin.points().is_err());
    }
}
