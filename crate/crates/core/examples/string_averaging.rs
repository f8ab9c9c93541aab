//! Dynamic string averaging written as a single plan.

use gmsa::dsa::{direct_eval, gdsa_to_gmsa, rho_gdsa, rho_gdsa_certified, StringSpec, StringStage};
use gmsa::gmsa::output_operator;
use gmsa::sets::{Leaf, OperatorFamily, ProjectableSet};
use gmsa::{vector, Result};

fn main() -> Result<()> {
    let gammas = [1.0, 0.7, 1.2];
    let family = OperatorFamily::finite(
        vec![
            Leaf::relaxed(
                ProjectableSet::halfspace(vector![1, 0.5, 0], 1.0)?,
                gammas[0],
            ),
            Leaf::relaxed(ProjectableSet::ball(vector![0, 0, 0], 2.0)?, gammas[1]),
            Leaf::relaxed(
                ProjectableSet::boxed(vector![-1, -1, -1], vector![1, 1, 1.5])?,
                gammas[2],
            ),
        ],
        vector![0, 0, 0],
    );
    let stage = StringStage::new(
        0,
        0.2,
        vec![
            (StringSpec::new(vec![0, 1, 2])?, 0.6),
            (StringSpec::new(vec![2, 2])?, 0.4),
        ],
    )?;
    let plan = gdsa_to_gmsa(&stage)?;
    println!("plan has {} steps:", plan.n());
    for s in &plan.steps {
        println!("  n = {} c = {} J = {:?}", s.n, s.c, s.j);
    }
    let t = output_operator(&plan, &family)?;
    let x = vector![4, -3, 6];
    println!("as a plan:  {:?}", t.apply(&x)?);
    println!("direct:     {:?}", direct_eval(&stage, &family, &x)?);
    let q = stage.max_len();
    println!(
        "fne modulus: product form {:.4}, certified {:.4}",
        rho_gdsa(gammas, q),
        rho_gdsa_certified(gammas, q)
    );
    Ok(())
}
