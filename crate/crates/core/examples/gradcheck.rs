//! Runs the finite-difference gradient suites and prints per-tensor errors.
//!
//! ```text
//! cargo run --release --example gradcheck -- blocks 3
//! ```

use vast::gradcheck::{render_reports, run_scope, Scope};

fn main() -> vast::Result<()> {
    let mut args = std::env::args().skip(1);
    let scopes = match args.next() {
        Some(s) => vec![s.parse::<Scope>()?],
        None => vec![Scope::Ops, Scope::Blocks, Scope::Model],
    };
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut failed = false;
    for scope in scopes {
        let reports = run_scope(scope, seed)?;
        println!("== {scope} (seed {seed})");
        print!("{}", render_reports(&reports));
        failed |= reports.iter().any(|r| !r.passed());
    }
    if failed {
        std::process::exit(1);
    }
    Ok(())
}
