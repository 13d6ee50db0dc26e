//! Prints the finite-difference gradient check for every standard fragment.

use std::time::Instant;

use homonmt_nnet::gradcheck::standard_fragments;

fn main() -> homonmt_nnet::Result<()> {
    for mut fragment in standard_fragments(17) {
        let start = Instant::now();
        let report = fragment.check(1e-5)?;
        println!(
            "{:<36} params {:>6}  max rel err {:.3e}  ({:.2?})",
            fragment.name,
            report.checked,
            report.max_relative_error,
            start.elapsed()
        );
    }
    Ok(())
}
