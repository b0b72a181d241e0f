//! Trains two micro video models on the temporal-order task: one whose
//! shift includes the time axis and one whose shift is purely spatial.
//! Only the first can tell a clip from its frame-reversed twin.
//!
//! ```text
//! cargo run --release --example temporal_order -- [samples] [epochs]
//! ```

use std::time::Instant;

use vast::harness::{gen_toy_dataset, train, Split, ToyTask, TrainConfig};
use vast::{build_model, ModelSpec, ShiftAxis};

fn main() -> vast::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let samples = args.next().flatten().unwrap_or(320);
    let epochs = args.next().flatten().unwrap_or(15);
    let data = gen_toy_dataset(&ToyTask::temporal_order(samples, 0))?;
    println!("train {} clips, val {} clips", data.train.len(), data.val.len());

    let with_time = ModelSpec::named("vast-micro")?.with_input(8, 32, 32).with_classes(2);
    let mut spatial_only = with_time.clone();
    spatial_only.shift = spatial_only.shift.without_axis(ShiftAxis::Time);

    let cfg = TrainConfig {
        epochs,
        lr: 5e-3,
        ..TrainConfig::default()
    };
    for (label, spec) in [("time+space shift", with_time), ("space-only shift", spatial_only)] {
        let start = Instant::now();
        let mut model = build_model(&spec, 0)?;
        let log = train(&mut model, &data, &cfg)?;
        for row in log.rows.iter().filter(|r| r.split == Split::Val) {
            println!("{label:>18} epoch {:>2} val loss {:.4} acc {:.3}", row.epoch, row.loss, row.acc);
        }
        println!("{label}: {:.1}s", start.elapsed().as_secs_f64());
    }
    Ok(())
}
