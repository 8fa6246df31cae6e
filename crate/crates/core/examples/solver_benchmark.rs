//! Levenberg–Marquardt on a few standard residual problems.
//!
//! `cargo run --example solver_benchmark`

use ventmech::nls_solver::{lm_minimize, LmOptions, LmReport};

fn show(name: &str, rep: &LmReport) {
    println!(
        "{name:<14} {:?} after {} iterations, cost {:.3e}, theta {:?}",
        rep.status, rep.iters, rep.cost, rep.theta
    );
}

fn main() -> ventmech::Result<()> {
    let t: Vec<f64> = (0..60).map(|k| k as f64 * 0.05).collect();
    let y: Vec<f64> = t.iter().map(|t| 3.0 * (-1.5 * t).exp() + 0.2).collect();
    let rep = lm_minimize(
        |th: &[f64]| {
            Ok(t.iter()
                .zip(&y)
                .map(|(t, y)| th[0] * (-th[1] * t).exp() + th[2] - y)
                .collect())
        },
        &[1.0, 0.5, 0.0],
        &LmOptions::unbounded(3),
    )?;
    show("exp decay", &rep);

    let rep = lm_minimize(
        |th: &[f64]| Ok(vec![10.0 * (th[1] - th[0] * th[0]), 1.0 - th[0]]),
        &[-1.2, 1.0],
        &LmOptions::unbounded(2),
    )?;
    show("rosenbrock", &rep);

    // The unconstrained optimum (2, -1) lies outside the box.
    let rep = lm_minimize(
        |th: &[f64]| Ok(vec![th[0] - 2.0, th[1] + 1.0]),
        &[0.5, 0.5],
        &LmOptions::with_bounds(vec![0.0, 0.0], vec![1.0, 1.0]),
    )?;
    show("bounded", &rep);
    Ok(())
}
