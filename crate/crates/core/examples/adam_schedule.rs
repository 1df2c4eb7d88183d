//! Learning-rate schedules and Adam on a small least-squares problem.
//!
//! cargo run --release --example adam_schedule

use semsplat::optimizer::{adam_step, exp_lr, AdamState, GaussianLr, LrSchedule};

fn main() -> semsplat::Result<()> {
    let total = 40_000u64;
    let deform = LrSchedule::deformation(total);
    let gaussians = GaussianLr::with_total_steps(total);
    println!("{:>7}  {:>10}  {:>10}", "step", "field", "positions");
    for step in [0, 1_000, 10_000, 20_000, 30_000, 40_000] {
        println!(
            "{step:>7}  {:>10.3e}  {:>10.3e}",
            exp_lr(&deform, step),
            gaussians.at(step)[0]
        );
    }

    let target = [3.0, -1.0, 0.5];
    let mut x = vec![0.0; 3];
    let mut state = AdamState::new(3);
    let schedule = LrSchedule::new(0.1, 1e-3, 500)?;
    for step in 0..500 {
        let grad: Vec<f64> = x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        adam_step(&mut state, &mut x, &grad, exp_lr(&schedule, step))?;
    }
    println!("Adam after 500 steps: {x:.4?} (target {target:?})");
    Ok(())
}
