//! Finite-difference gradient checks for every layer kind and for the
//! reversal routing of the two-head model.
//!
//!     cargo run --release --example gradcheck -- [trials]

use grl_forge::check::gradcheck_suite;

fn main() -> grl_forge::Result<()> {
    let trials = std::env::args().nth(1).map_or(20, |s| s.parse().expect("trials"));
    let start = std::time::Instant::now();
    for line in gradcheck_suite(trials, 1, None)? {
        println!("{:<28} {:.3e} {}", line.component, line.max_error, if line.passed() { "ok" } else { "FAIL" });
    }
    println!("{:.1?}", start.elapsed());
    Ok(())
}
