//! `verify [--seed S]`.

use polycascade::verify::{self, Fault, VerifyOptions};

use crate::error::CliError;

pub fn run(seed: u64, fault: Option<Fault>) -> Result<(), CliError> {
    let opts = VerifyOptions {
        seed,
        fault,
        ..VerifyOptions::default()
    };
    let report = verify::run(&opts);
    println!("{report}");
    if report.all_passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failed().map(|o| o.name).collect();
        Err(CliError::Failed(format!(
            "invariants failed: {}",
            names.join(", ")
        )))
    }
}
