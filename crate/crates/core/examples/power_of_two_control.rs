//! The power-of-two control and an exhaustive window scan.

use std::collections::BTreeSet;

use gmsa::control::{f_value, verify_admissible, ControlSchedule, PowerShape};
use gmsa::Result;

fn main() -> Result<()> {
    let f: Vec<usize> = (0..20).map(f_value).collect();
    println!("f(0..20) = {f:?}");

    let sched = ControlSchedule::power_of_two(PowerShape::Relax { alpha: 1.0 }, 0.5)?;
    let indices: BTreeSet<usize> = (0..=6).collect();
    let report = verify_admissible(&sched, 999, &indices)?;
    for (n, m, windows) in &report.checked {
        println!("n = {n}: M_n = {m:>3}, {windows} windows");
    }
    println!(
        "admissible up to k = {}: {}",
        report.horizon,
        report.passed()
    );

    // a window shorter than the gap between visits is caught
    let tight = sched
        .clone()
        .with_windows(gmsa::control::WindowBounds::uniform(3));
    let r = verify_admissible(&tight, 99, &BTreeSet::from([1]))?;
    println!("with M_1 = 3: first violation {:?}", r.first_violation);
    Ok(())
}
