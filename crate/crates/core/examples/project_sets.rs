//! Metric projections onto the built-in convex sets.

use gmsa::sets::ProjectableSet;
use gmsa::{vector, Result, Tolerance};

fn main() -> Result<()> {
    let x = vector![3.0, -1.0, 2.0];
    let sets = [
        (
            "halfspace x1 + x2 <= 1",
            ProjectableSet::halfspace(vector![1, 1, 0], 1.0)?,
        ),
        (
            "hyperplane x3 = 0",
            ProjectableSet::hyperplane(vector![0, 0, 1], 0.0)?,
        ),
        ("unit ball", ProjectableSet::ball(vector![0, 0, 0], 1.0)?),
        (
            "box [0, 1]^3",
            ProjectableSet::boxed(vector![0, 0, 0], vector![1, 1, 1])?,
        ),
        (
            "line through (0, 0, 1) along e1",
            ProjectableSet::affine(vec![vector![1, 0, 0]], vector![0, 0, 1])?,
        ),
    ];
    let tol = Tolerance::default();
    println!("x = {x:?}");
    for (name, set) in &sets {
        let p = set.project(&x)?;
        assert!(set.contains(&p, &tol)?);
        println!(
            "{name:<34} P(x) = {p:?}  d(x, C) = {:.6}",
            set.distance(&x)?
        );
    }
    Ok(())
}
