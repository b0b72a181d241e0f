//! Trains a micro model on the static-pattern task, writes the checkpoint,
//! config and dataset to a directory, reloads them and checks the logits.
//!
//! ```text
//! cargo run --release --example checkpoint -- [out_dir]
//! ```

use std::path::PathBuf;

use vast::cli::{load_model, toy_model_config, CHECKPOINT_FILE, CONFIG_FILE, DATASET_FILE};
use vast::harness::{evaluate, gen_toy_dataset, train, ToyDataset, ToyTask, TrainConfig};
use vast::{build_model, tnsr};

fn main() -> vast::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "vast-checkpoint".into()));
    std::fs::create_dir_all(&dir)?;

    let task = ToyTask { frames: 4, height: 16, width: 16, ..ToyTask::static_pattern(4, 96, 0) };
    let data = gen_toy_dataset(&task)?;
    let config = toy_model_config(&task);
    let mut model = build_model(&config.to_spec()?, config.seed)?;
    let cfg = TrainConfig { epochs: 8, lr: 5e-3, ..TrainConfig::default() };
    train(&mut model, &data, &cfg)?;
    println!("val accuracy {:.3}", evaluate(&model, &data.val)?.accuracy);

    tnsr::write_tree(dir.join(CHECKPOINT_FILE), &model.params.named_values())?;
    std::fs::write(dir.join(CONFIG_FILE), config.to_json()?)?;
    data.save(dir.join(DATASET_FILE))?;
    println!("wrote {}", dir.display());

    let reloaded = load_model(&dir.join(CHECKPOINT_FILE), None)?;
    let cached = ToyDataset::load(dir.join(DATASET_FILE), task)?;
    let same = model.predict(&data.val.inputs)?.bitwise_eq(&reloaded.predict(&cached.val.inputs)?);
    println!("reloaded logits bitwise identical: {same}");
    println!(
        "try: vast infer --model-file {} --input-tensor <clip.tnsr>",
        dir.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}
