//! Synthetic spatio-temporal tasks and a small AdamW training loop.
//!
//! The temporal-order task shows a red square for the first frames of a clip
//! and a blue one for the rest (class 0), or the other way round (class 1).
//! Every clip is generated together with its frame-reversed twin, which
//! carries the opposite label. A model that cannot tell frames apart in time
//! sees the same set of frames in both twins, so it must give them the same
//! prediction and is right on exactly half of them.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::blocks::Mode;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::optim::{AdamW, WarmupCosine};
use crate::tensor::Tensor;
use crate::tnsr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    TemporalOrder,
    StaticPattern,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal-order" => Ok(TaskKind::TemporalOrder),
            "static-pattern" => Ok(TaskKind::StaticPattern),
            _ => Err(Error::Usage(format!(
                "unknown task {s:?}, expected temporal-order or static-pattern"
            ))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::TemporalOrder => "temporal-order",
            TaskKind::StaticPattern => "static-pattern",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyTask {
    pub kind: TaskKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    pub num_classes: usize,
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_channels() -> usize {
    3
}

impl ToyTask {
    /// `T = 8`, `32 x 32` RGB clips, two classes.
    pub fn temporal_order(samples: usize, seed: u64) -> Self {
        Self {
            kind: TaskKind::TemporalOrder,
            frames: 8,
            height: 32,
            width: 32,
            channels: 3,
            num_classes: 2,
            samples,
            seed,
        }
    }

    pub fn static_pattern(num_classes: usize, samples: usize, seed: u64) -> Self {
        Self {
            kind: TaskKind::StaticPattern,
            num_classes,
            ..Self::temporal_order(samples, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 || self.frames == 0 {
            return Err(Error::Config(format!(
                "toy clips need T >= 1 and H, W >= 4, got {}x{}x{}",
                self.frames, self.height, self.width
            )));
        }
        if self.channels != 3 {
            return Err(Error::Config("toy clips are RGB (3 channels)".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.kind == TaskKind::TemporalOrder {
            if self.num_classes != 2 {
                return Err(Error::Config("the temporal-order task has exactly two classes".into()));
            }
            if self.frames < 2 {
                return Err(Error::Config("the temporal-order task needs T >= 2".into()));
            }
        }
        if self.samples < self.num_classes {
            return Err(Error::Config(format!(
                "{} samples cannot cover {} classes",
                self.samples, self.num_classes
            )));
        }
        Ok(())
    }

    fn clip_shape(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }
}

/// Clips `[N, T, H, W, C]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    fn from_clips(clip_shape: [usize; 4], clips: &[Vec<f32>], labels: Vec<usize>) -> Result<Self> {
        let mut shape = vec![clips.len()];
        shape.extend_from_slice(&clip_shape);
        Ok(Self {
            inputs: Tensor::from_vec(&shape, clips.concat())?,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample input shape, without the batch axis.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn sample(&self, i: usize) -> Result<Tensor> {
        self.batch(&[i]).map(|(x, _)| x)
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let per: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Usage(format!("sample {i} out of range ({})", self.len())));
            }
            data.extend_from_slice(&self.inputs.data()[i * per..(i + 1) * per]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::from_vec(&shape, data)?, labels))
    }

    pub fn class_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub task: ToyTask,
    pub train: Dataset,
    pub val: Dataset,
}

const RED: [f32; 3] = [1.0, -0.5, -0.5];
const BLUE: [f32; 3] = [-0.5, -0.5, 1.0];
const NOISE: f32 = 0.1;

fn palette(class: usize, num_classes: usize) -> [f32; 3] {
    let angle = std::f32::consts::TAU * class as f32 / num_classes as f32;
    [angle.cos(), angle.sin(), (2.0 * angle).cos() * 0.5]
}

struct Painter<'a> {
    task: &'a ToyTask,
    rng: &'a mut ChaCha8Rng,
}

impl Painter<'_> {
    fn noise_clip(&mut self) -> Vec<f32> {
        let len: usize = self.task.clip_shape().iter().product();
        (0..len).map(|_| self.rng.gen_range(-NOISE..NOISE)).collect()
    }

    /// Square of side about a quarter of the frame, at a random position.
    fn square(&mut self) -> (usize, usize, usize) {
        let side = (self.task.height.min(self.task.width) / 4).max(2);
        let y = self.rng.gen_range(0..=self.task.height - side);
        let x = self.rng.gen_range(0..=self.task.width - side);
        (y, x, side)
    }

    fn paint(&self, clip: &mut [f32], frame: usize, (y, x, side): (usize, usize, usize), color: [f32; 3]) {
        let [_, h, w, c] = self.task.clip_shape();
        for yy in y..y + side {
            for xx in x..x + side {
                let at = ((frame * h + yy) * w + xx) * c;
                for (ch, v) in color.iter().enumerate() {
                    clip[at + ch] += v;
                }
            }
        }
    }
}

fn reverse_frames(clip: &[f32], frames: usize) -> Vec<f32> {
    let per = clip.len() / frames;
    clip.chunks(per).rev().flatten().copied().collect()
}

/// Deterministic dataset for `task`; classes are balanced to within one
/// sample and 20% of the samples (rounded) go to validation.
pub fn gen_toy_dataset(task: &ToyTask) -> Result<ToyDataset> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    // Groups are kept together across the split: twins for the temporal task.
    let mut groups: Vec<Vec<(Vec<f32>, usize)>> = Vec::new();
    match task.kind {
        TaskKind::TemporalOrder => {
            for i in 0..task.samples.div_ceil(2) {
                let mut p = Painter { task, rng: &mut rng };
                let mut clip = p.noise_clip();
                let square = p.square();
                let switch = p.rng.gen_range(task.frames / 4..=task.frames - task.frames.div_ceil(4));
                let switch = switch.clamp(1, task.frames - 1);
                for f in 0..task.frames {
                    p.paint(&mut clip, f, square, if f < switch { RED } else { BLUE });
                }
                let twin = reverse_frames(&clip, task.frames);
                // An odd count leaves the last clip without its twin.
                if 2 * i + 1 < task.samples {
                    groups.push(vec![(clip, 0), (twin, 1)]);
                } else {
                    groups.push(vec![(clip, 0)]);
                }
            }
        }
        TaskKind::StaticPattern => {
            for i in 0..task.samples {
                let class = i % task.num_classes;
                let mut p = Painter { task, rng: &mut rng };
                let mut clip = p.noise_clip();
                for f in 0..task.frames {
                    let square = p.square();
                    p.paint(&mut clip, f, square, palette(class, task.num_classes));
                }
                groups.push(vec![(clip, class)]);
            }
        }
    }
    groups.shuffle(&mut rng);
    let val_target = (task.samples as f64 * 0.2).round() as usize;
    let mut val_count = 0;
    let (mut train_clips, mut train_labels) = (Vec::new(), Vec::new());
    let (mut val_clips, mut val_labels) = (Vec::new(), Vec::new());
    for group in groups {
        let to_val = val_count + group.len() <= val_target;
        for (clip, label) in group {
            if to_val {
                val_count += 1;
                val_clips.push(clip);
                val_labels.push(label);
            } else {
                train_clips.push(clip);
                train_labels.push(label);
            }
        }
    }
    Ok(ToyDataset {
        task: task.clone(),
        train: Dataset::from_clips(task.clip_shape(), &train_clips, train_labels)?,
        val: Dataset::from_clips(task.clip_shape(), &val_clips, val_labels)?,
    })
}

impl ToyDataset {
    /// Stores both splits in one TNSR tree: `{train,val}.{inputs,labels}`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let labels = |d: &Dataset| {
            Tensor::from_vec(&[d.len().max(1)], {
                let mut v: Vec<f32> = d.labels.iter().map(|&l| l as f32).collect();
                if v.is_empty() {
                    v.push(-1.0);
                }
                v
            })
        };
        let mut entries = vec![
            ("train.inputs".to_string(), self.train.inputs.clone()),
            ("train.labels".to_string(), labels(&self.train)?),
        ];
        if !self.val.is_empty() {
            entries.push(("val.inputs".to_string(), self.val.inputs.clone()));
            entries.push(("val.labels".to_string(), labels(&self.val)?));
        }
        tnsr::write_tree(path, &entries)
    }

    pub fn load(path: impl AsRef<Path>, task: ToyTask) -> Result<Self> {
        let mut entries = tnsr::read_tree(path)?;
        let mut take = |name: &str| -> Option<Tensor> {
            let i = entries.iter().position(|(n, _)| n == name)?;
            Some(entries.swap_remove(i).1)
        };
        let mut split = |prefix: &str| -> Result<Dataset> {
            let inputs = take(&format!("{prefix}.inputs"));
            let labels = take(&format!("{prefix}.labels"));
            match (inputs, labels) {
                (Some(inputs), Some(labels)) => {
                    let labels: Vec<usize> = labels.data().iter().map(|&l| l as usize).collect();
                    if labels.len() != inputs.shape()[0] {
                        return Err(Error::Shape(format!(
                            "{prefix}: {} labels for {} clips",
                            labels.len(),
                            inputs.shape()[0]
                        )));
                    }
                    Ok(Dataset { inputs, labels })
                }
                _ => Err(Error::Shape(format!("missing {prefix} split"))),
            }
        };
        let train = split("train")?;
        let val = split("val")?;
        Ok(Self { task, train, val })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    #[serde(default)]
    pub min_lr: f64,
    #[serde(default)]
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_weight_decay() -> f64 {
    0.05
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            min_lr: 1e-5,
            warmup_steps: 10,
            epochs: 20,
            batch_size: 16,
            weight_decay: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, train_len: usize) -> usize {
        train_len.div_ceil(self.batch_size.max(1))
    }

    pub fn schedule(&self, train_len: usize) -> Result<WarmupCosine> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        let total = self.epochs * self.steps_per_epoch(train_len);
        WarmupCosine::new(self.lr, self.min_lr.min(self.lr), self.warmup_steps, total)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    /// Mean loss of every optimizer step's batch, in order.
    pub step_losses: Vec<f32>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Usage(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn last(&self, split: Split) -> Option<&LogRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }
}

fn check_dims(model: &Model, data: &Dataset) -> Result<()> {
    let expected = model.spec.input_shape(1);
    let got = data.sample_shape();
    let expected = &expected[1..];
    let matches = expected == got || (expected.len() == 3 && got.len() == 4 && got[0] == 1 && &got[1..] == expected);
    if !matches {
        return Err(Error::Shape(format!(
            "dataset clips are {got:?} but the model expects {expected:?}"
        )));
    }
    if let Some(&max) = data.labels.iter().max() {
        if max >= model.spec.num_classes {
            return Err(Error::Config(format!(
                "label {max} but the model has {} classes",
                model.spec.num_classes
            )));
        }
    }
    Ok(())
}

/// Reshapes a `[N, T, H, W, C]` batch to what the model expects.
fn model_batch(model: &Model, x: Tensor) -> Result<Tensor> {
    let n = x.shape()[0];
    x.reshape(&model.spec.input_shape(n))
}

struct BatchResult {
    loss: f32,
    correct: usize,
}

fn run_batch(
    model: &Model,
    x: Tensor,
    labels: &[usize],
    mode: &mut Mode,
) -> Result<(Tape, Var, BatchResult)> {
    let x = model_batch(model, x)?;
    let mut tape = Tape::new();
    let input = tape.constant(x);
    let logits = model.forward(&mut tape, input, mode)?;
    let predictions = tape.value(logits).argmax_rows();
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    let loss = tape.cross_entropy(logits, labels)?;
    let value = tape.value(loss).data()[0];
    Ok((
        tape,
        loss,
        BatchResult {
            loss: value,
            correct,
        },
    ))
}

/// AdamW with warmup + cosine decay; one train row and (when a validation
/// split exists) one val row per epoch. Deterministic for a fixed seed.
pub fn train(model: &mut Model, data: &ToyDataset, cfg: &TrainConfig) -> Result<TrainingLog> {
    check_dims(model, &data.train)?;
    if data.train.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    let schedule = cfg.schedule(data.train.len())?;
    let mut opt = AdamW::with_weight_decay(cfg.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut step = 0;
    model.params.zero_grad();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = data.train.batch(chunk)?;
            let (tape, loss, result) = run_batch(model, x, &labels, &mut Mode::Train(&mut rng))?;
            if !result.loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    loss: result.loss,
                });
            }
            tape.backward(loss, &mut model.params)?;
            let lr = schedule.lr(step);
            if lr > 0.0 {
                opt.step(&mut model.params, lr)?;
            }
            model.params.zero_grad();
            log.step_losses.push(result.loss);
            loss_sum += result.loss as f64 * chunk.len() as f64;
            correct += result.correct;
            step += 1;
        }
        let n = data.train.len() as f64;
        log.rows.push(LogRow {
            epoch,
            split: Split::Train,
            loss: loss_sum / n,
            acc: correct as f64 / n,
        });
        if !data.val.is_empty() {
            let eval = evaluate(model, &data.val)?;
            log.rows.push(LogRow {
                epoch,
                split: Split::Val,
                loss: eval.loss,
                acc: eval.accuracy,
            });
        }
    }
    Ok(log)
}

/// Repeated AdamW steps on one fixed batch at a constant learning rate.
/// Returns the loss before each step.
pub fn overfit_batch(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    lr: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<f32>> {
    let mut opt = AdamW::with_weight_decay(0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses = Vec::with_capacity(steps);
    model.params.zero_grad();
    for step in 0..steps {
        let (tape, loss, result) = run_batch(model, x.clone(), labels, &mut Mode::Train(&mut rng))?;
        if !result.loss.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: result.loss,
            });
        }
        losses.push(result.loss);
        tape.backward(loss, &mut model.params)?;
        opt.step(&mut model.params, lr)?;
        model.params.zero_grad();
    }
    Ok(losses)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    /// `confusion[label][prediction]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }
}

const EVAL_BATCH: usize = 32;

/// Eval-mode accuracy, mean cross-entropy and confusion counts.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<Evaluation> {
    check_dims(model, data)?;
    let k = model.spec.num_classes;
    let mut confusion = vec![vec![0; k]; k];
    let mut loss_sum = 0.0f64;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, labels) = data.batch(chunk)?;
        let x = model_batch(model, x)?;
        let mut tape = Tape::new();
        let input = tape.constant(x);
        let logits = model.forward(&mut tape, input, &mut Mode::Eval)?;
        for (p, &l) in tape.value(logits).argmax_rows().iter().zip(&labels) {
            confusion[l][*p] += 1;
        }
        let loss = tape.cross_entropy(logits, &labels)?;
        loss_sum += tape.value(loss).data()[0] as f64 * chunk.len() as f64;
    }
    let n = data.len();
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        loss: if n == 0 { 0.0 } else { loss_sum / n as f64 },
        confusion,
    })
}

/// Argmax class per sample in eval mode.
pub fn predict_labels(model: &Model, x: &Tensor) -> Result<Vec<usize>> {
    let n = x.shape()[0];
    let x = x.clone().reshape(&model.spec.input_shape(n))?;
    Ok(model.predict(&x)?.argmax_rows())
}
