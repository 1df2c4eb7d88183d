//! Compares analytic gradients with central finite differences.
//!
//! cargo run --release --example gradcheck -- [tiny|small]

use semsplat::train::{gradcheck, GradcheckProblem};

fn main() {
    let size = std::env::args().nth(1).unwrap_or_else(|| "tiny".into());
    for deformed in [false, true] {
        let problem = match size.as_str() {
            "small" => GradcheckProblem::small(deformed),
            _ => GradcheckProblem::tiny(deformed),
        };
        let report = gradcheck(&problem, 1e-5);
        println!(
            "== {} ==\n{}",
            if deformed { "deformed" } else { "static" },
            report.to_text()
        );
    }
}
