//! Building operator trees and checking the moduli the calculus assigns.

use gmsa::operators::{check_fne, check_sqne, OperatorNode, SampleBudget};
use gmsa::sets::ProjectableSet;
use gmsa::{vector, Result, Tolerance};

fn main() -> Result<()> {
    let a = OperatorNode::projection(ProjectableSet::halfspace(vector![1, 0], 0.0)?);
    let b = OperatorNode::primitive(ProjectableSet::ball(vector![-1, 0], 1.0)?, 0.8)?;
    let c = OperatorNode::projection(ProjectableSet::hyperplane(vector![1, -1], 0.0)?);

    let avg = OperatorNode::convex_comb(vec![a.clone(), b.clone()], vec![0.3, 0.7])?;
    let tree = OperatorNode::composition(vec![OperatorNode::relaxation(avg, 1.4)?, c])?;

    let z = vector![0, 0];
    let budget = SampleBudget::new(2000, 1, 5.0);
    let tol = Tolerance::absolute(1e-9);
    for (name, node) in [("P_a", &a), ("relaxed P_b", &b), ("tree", &tree)] {
        let rho = node.sqne_constant().unwrap_or(0.0);
        let sq = check_sqne(node, rho, &z, &budget, &tol)?;
        println!(
            "{name:<12} sqne {rho:.4} (max violation {:+.2e})",
            sq.max_violation
        );
        if let Some(f) = node.fne_constant() {
            let r = check_fne(node, f, &budget, &tol)?;
            println!(
                "{:<12} fne  {f:.4} (max violation {:+.2e})",
                "", r.max_violation
            );
        }
    }
    // doubling the modulus of a tight operator must be caught
    let r = check_sqne(&b, 2.0 * b.sqne_constant().unwrap(), &z, &budget, &tol)?;
    println!("relaxed P_b at twice its modulus: passed = {}", r.passed);
    Ok(())
}
