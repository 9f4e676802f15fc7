//! Checks every differentiable primitive and loss against central finite
//! differences.
//!
//! `cargo run --release --example gradcheck -- [instances]`

use advreg::gradcheck::{run_suite, SuiteConfig};

fn main() -> advreg::Result<()> {
    let instances = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let report = run_suite(&SuiteConfig {
        instances,
        ..SuiteConfig::default()
    })?;
    for case in &report.cases {
        let status = if case.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<24} {:.2e}", case.name, case.max_relative_error);
    }
    println!("{} cases, worst relative error {:.2e}", report.cases.len(), report.max_relative_error());
    Ok(())
}
