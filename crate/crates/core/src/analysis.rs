//! Static parameter and multiply-accumulate accounting.
//!
//! One multiply-accumulate is one counted unit, the convention behind
//! "FLOPs" columns in vision model tables. Convolutions, linear layers, the
//! depthwise convolution and the squeeze-excitation MLP contribute MACs.
//! Norms, activations, gating, bias and residual adds are tallied separately
//! as `aux_ops` (one per output element) and kept out of the headline. The
//! shift moves data only and costs nothing.
//!
//! Counts are per view; multiply by the number of views externally.

use serde::{Deserialize, Serialize};

use crate::blocks::BlockConfig;
use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpStats {
    pub op: String,
    pub params: u64,
    pub macs: u64,
    pub aux_ops: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerStats {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    pub aux_ops: u64,
    pub output_shape: Vec<usize>,
    pub parts: Vec<OpStats>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeStats {
    pub model: String,
    pub input_shape: Vec<usize>,
    pub params: u64,
    pub macs: u64,
    pub aux_ops: u64,
    pub rows: Vec<LayerStats>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FlopConvention {
    /// One multiply-accumulate counts once.
    #[default]
    Mac,
    /// One multiply-accumulate counts as two floating-point operations.
    TwoFlopsPerMac,
}

impl ComputeStats {
    pub fn flops(&self, convention: FlopConvention) -> u64 {
        match convention {
            FlopConvention::Mac => self.macs,
            FlopConvention::TwoFlopsPerMac => 2 * self.macs,
        }
    }

    pub fn row(&self, name: &str) -> Option<&LayerStats> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Sum of one part kind (e.g. `"shift"`, `"se_mlp"`) across all rows.
    pub fn part_macs(&self, op: &str) -> u64 {
        self.rows
            .iter()
            .flat_map(|r| &r.parts)
            .filter(|p| p.op == op)
            .map(|p| p.macs)
            .sum()
    }

    fn push(&mut self, name: String, output_shape: Vec<usize>, parts: Vec<OpStats>) {
        let row = LayerStats {
            name,
            params: parts.iter().map(|p| p.params).sum(),
            macs: parts.iter().map(|p| p.macs).sum(),
            aux_ops: parts.iter().map(|p| p.aux_ops).sum(),
            output_shape,
            parts,
        };
        self.params += row.params;
        self.macs += row.macs;
        self.aux_ops += row.aux_ops;
        self.rows.push(row);
    }
}

fn part(op: &str, params: usize, macs: usize, aux_ops: usize) -> OpStats {
    OpStats {
        op: op.to_string(),
        params: params as u64,
        macs: macs as u64,
        aux_ops: aux_ops as u64,
    }
}

/// Exact learnable-scalar count of a built model.
pub fn count_params(model: &Model) -> u64 {
    model.num_params() as u64
}

/// Headline MACs of `spec` on a batch of `batch` inputs of the spec's size.
pub fn count_macs(spec: &ModelSpec, batch: usize) -> Result<u64> {
    Ok(analyze(spec, batch)?.macs)
}

fn conv_parts(
    kernel: [usize; 3],
    c_in: usize,
    c_out: usize,
    out_positions: usize,
) -> Vec<OpStats> {
    let kvol: usize = kernel.iter().product();
    let elems = out_positions * c_out;
    vec![
        part("conv", kvol * c_in * c_out + c_out, out_positions * kvol * c_in * c_out, elems),
        part("norm", 2 * c_out, 0, elems),
    ]
}

fn block_rows(cfg: &BlockConfig, batch: usize, positions: usize) -> (Vec<OpStats>, Vec<OpStats>) {
    let d = cfg.dim;
    let tokens = batch * positions;
    let elems = tokens * d;
    let mut mixer = Vec::new();
    if cfg.only_shift {
        mixer.push(part("shift", 0, 0, 0));
        mixer.push(part("residual", 0, 0, elems));
    } else if let Some(m) = cfg.mhsa {
        mixer.push(part("norm", 2 * d, 0, elems));
        mixer.push(part("qkv", 3 * d * d, 3 * tokens * d * d, 0));
        let scores = batch * m.heads * positions * positions;
        mixer.push(part("attention_scores", 0, batch * positions * positions * d, scores));
        mixer.push(part("softmax", 0, 0, scores));
        mixer.push(part("attention_values", 0, batch * positions * positions * d, 0));
        mixer.push(part("w_h", d * d + d, tokens * d * d, elems));
        mixer.push(part("residual", 0, 0, elems));
    } else {
        mixer.push(part("norm", 2 * d, 0, elems));
        mixer.push(part("w_v", d * d, tokens * d * d, 0));
        mixer.push(part("shift", 0, 0, 0));
        if cfg.use_scale {
            let r = cfg.se_hidden();
            mixer.push(part("pool", 0, 0, batch * d));
            mixer.push(part(
                "se_mlp",
                d * r + r + r * d + d,
                batch * (d * r + r * d),
                batch * (2 * r + 2 * d),
            ));
            mixer.push(part("gate", 0, 0, elems));
        }
        if cfg.use_bias {
            let k2 = cfg.dwconv_kernel * cfg.dwconv_kernel;
            mixer.push(part("dwconv", k2 * d + d, tokens * k2 * d, elems));
            mixer.push(part("add", 0, 0, elems));
        }
        mixer.push(part("w_h", d * d + d, tokens * d * d, elems));
        mixer.push(part("residual", 0, 0, elems));
    }
    let e = cfg.mlp_hidden();
    let mut mlp = vec![part("norm", 2 * d, 0, elems)];
    if cfg.extra_mlp_shift {
        mlp.push(part("shift", 0, 0, 0));
    }
    mlp.push(part("fc1", d * e + e, tokens * d * e, tokens * e));
    mlp.push(part("gelu", 0, 0, tokens * e));
    mlp.push(part("fc2", e * d + d, tokens * e * d, elems));
    mlp.push(part("residual", 0, 0, elems));
    (mixer, mlp)
}

/// Per-layer breakdown for a batch of `batch` inputs.
///
/// Rows, in network order: `stem`; for every stage, `stageI.downsample`
/// (stages after the first) and `stageI.blockJ.mixer` / `stageI.blockJ.mlp`
/// for each block; finally `head` (final norm, mean pool and classifier).
pub fn analyze(spec: &ModelSpec, batch: usize) -> Result<ComputeStats> {
    spec.validate()?;
    if batch == 0 {
        return Err(Error::Config("batch must be positive".into()));
    }
    let mut stats = ComputeStats {
        model: spec.to_string(),
        input_shape: spec.input_shape(batch),
        ..ComputeStats::default()
    };
    let resolutions = spec.stage_resolutions()?;
    let c_in = spec.input.channels;
    let c1 = spec.stages[0].channels;
    let [t, h1, w1] = resolutions[0];
    let (stem_kernel, _) = spec.stem.geometry();
    stats.push(
        "stem".into(),
        vec![batch, t, h1, w1, c1],
        conv_parts(stem_kernel, c_in, c1, batch * t * h1 * w1),
    );

    let rates = spec.drop_path_schedule();
    let mut block_index = 0;
    for (i, s) in spec.stages.iter().enumerate() {
        let [t, h, w] = resolutions[i];
        let positions = t * h * w;
        let shape = vec![batch, t, h, w, s.channels];
        if i > 0 {
            let (kernel, _) = spec.downsample_geometry();
            stats.push(
                format!("stage{}.downsample", i + 1),
                shape.clone(),
                conv_parts(kernel, spec.stages[i - 1].channels, s.channels, batch * positions),
            );
        }
        for b in 0..s.depth {
            let cfg = spec.block_config(i, rates[block_index])?;
            block_index += 1;
            let (mixer, mlp) = block_rows(&cfg, batch, positions);
            let prefix = format!("stage{}.block{}", i + 1, b + 1);
            stats.push(format!("{prefix}.mixer"), shape.clone(), mixer);
            stats.push(format!("{prefix}.mlp"), shape.clone(), mlp);
        }
    }

    let last = spec.stages.last().expect("validated");
    let [t, h, w] = *resolutions.last().expect("validated");
    let k = spec.num_classes;
    stats.push(
        "head".into(),
        vec![batch, k],
        vec![
            part("norm", 2 * last.channels, 0, batch * t * h * w * last.channels),
            part("pool", 0, 0, batch * last.channels),
            part("classifier", last.channels * k + k, batch * last.channels * k, batch * k),
        ],
    );
    Ok(stats)
}

/// Parameter count of one block config, as used by [`analyze`].
pub fn block_params(cfg: &BlockConfig) -> u64 {
    let (mixer, mlp) = block_rows(cfg, 1, 1);
    mixer.iter().chain(&mlp).map(|p| p.params).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Table,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "table" => Ok(ReportFormat::Table),
            other => Err(Error::Config(format!(
                "unknown report format {other:?}, expected json, csv or table"
            ))),
        }
    }
}

fn shape_string(shape: &[usize]) -> String {
    shape
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

/// CSV columns: `name,params,macs,aux_ops,output_shape`; the last line is
/// the `total` row.
pub fn report(stats: &ComputeStats, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(stats)? + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
            w.write_record(["name", "params", "macs", "aux_ops", "output_shape"])
                .map_err(io)?;
            for r in &stats.rows {
                w.write_record([
                    r.name.clone(),
                    r.params.to_string(),
                    r.macs.to_string(),
                    r.aux_ops.to_string(),
                    shape_string(&r.output_shape),
                ])
                .map_err(io)?;
            }
            w.write_record([
                "total".to_string(),
                stats.params.to_string(),
                stats.macs.to_string(),
                stats.aux_ops.to_string(),
                String::new(),
            ])
            .map_err(io)?;
            let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Table => {
            let mut out = format!(
                "model {} input {}\n{:<28} {:>12} {:>16} {:>14}  {}\n",
                stats.model,
                shape_string(&stats.input_shape),
                "layer",
                "params",
                "macs",
                "aux_ops",
                "output"
            );
            for r in &stats.rows {
                out.push_str(&format!(
                    "{:<28} {:>12} {:>16} {:>14}  {}\n",
                    r.name,
                    r.params,
                    r.macs,
                    r.aux_ops,
                    shape_string(&r.output_shape)
                ));
            }
            out.push_str(&format!(
                "{:<28} {:>12} {:>16} {:>14}\n",
                "total", stats.params, stats.macs, stats.aux_ops
            ));
            out.push_str(&format!(
                "params {:.2}M  macs {:.2}G\n",
                stats.params as f64 / 1e6,
                stats.macs as f64 / 1e9
            ));
            Ok(out)
        }
    }
}
