//! Parameter and MAC counts for every named model at its default input.
//!
//! ```text
//! cargo run --release --example describe_models
//! cargo run --release --example describe_models -- vast-ti 16
//! ```

use vast::analysis::{analyze, report, ReportFormat};
use vast::ModelSpec;

fn main() -> vast::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Some(name) = args.first() {
        let mut spec = ModelSpec::named(name)?;
        if let Some(frames) = args.get(1) {
            let frames = frames
                .parse()
                .map_err(|_| vast::Error::Usage(format!("bad frame count {frames:?}")))?;
            let (h, w) = (spec.input.height, spec.input.width);
            spec = spec.with_input(frames, h, w);
        }
        print!("{}", report(&analyze(&spec, 1)?, ReportFormat::Table)?);
        return Ok(());
    }
    println!("{:<10} {:>12} {:>10} {:>14}", "model", "params (M)", "MACs (G)", "input");
    for name in ["ast-ti", "ast-s", "ast-m", "vast-ti", "vast-s", "vast-m"] {
        let spec = ModelSpec::named(name)?;
        let stats = analyze(&spec, 1)?;
        println!(
            "{:<10} {:>12.2} {:>10.2} {:>14}",
            name,
            stats.params as f64 / 1e6,
            stats.macs as f64 / 1e9,
            format!("{:?}", stats.input_shape),
        );
    }
    Ok(())
}
