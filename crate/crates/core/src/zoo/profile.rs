//! Parameter, FLOP, layer, memory and latency accounting.
//!
//! FLOPs count one multiply-accumulate as one operation, plus one per bias
//! add, two per batch-norm element and one per activation element. Pooling,
//! flatten and dropout are free. Multiplications are half the FLOPs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ActShape, LayerKind, ModelConfig};
use super::model::{se_width, Model};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor};

/// Trainable scalar count (running statistics excluded).
pub fn count_parameters<T: Scalar>(model: &Model<T>) -> usize {
    model.params().numel()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopCount {
    pub flops: u64,
    pub multiplications: f64,
}

#[derive(Default)]
struct Tally {
    macs: u64,
    elementwise: u64,
}

impl Tally {
    /// Convolution with optional bias, batch norm and activation.
    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, cin_per_group: usize, cout: usize, k: usize, out_hw: usize, bias: bool, bn: bool, act: bool) {
        let elems = (cout * out_hw) as u64;
        self.macs += elems * (cin_per_group * k * k) as u64;
        self.elementwise += elems * (bias as u64 + 2 * bn as u64 + act as u64);
    }
}

/// FLOPs of `config` evaluated on a single input of `input_shape`.
pub fn count_flops(config: &ModelConfig, input_shape: [usize; 3]) -> Result<FlopCount> {
    if input_shape.contains(&0) {
        return Err(Error::Unsupported(format!("dynamic input shape {input_shape:?}")));
    }
    let mut cfg = config.clone();
    cfg.input_shape = input_shape;
    let shapes = cfg.infer_shapes()?;
    let mut t = Tally::default();
    for (i, layer) in cfg.layers.iter().enumerate() {
        let out = shapes[i];
        let hw = match out {
            ActShape::Map { h, w, .. } => h * w,
            ActShape::Vector(_) => 1,
        };
        match &layer.kind {
            LayerKind::Conv(s) => t.conv(s.in_channels, s.out_channels, s.kernel, hw, s.bias, s.batch_norm, s.activation.is_some()),
            LayerKind::Pointwise(s) => t.conv(s.in_channels, s.out_channels, 1, hw, true, false, s.activation.is_some()),
            LayerKind::Linear(s) => t.conv(s.in_channels, s.out_channels, 1, 1, true, false, s.activation.is_some()),
            LayerKind::Bneck(s) => {
                let exp = s.expansion_ratio.apply(s.in_channels).expect("validated");
                let in_hw = match if i == 0 { input_map(input_shape) } else { shapes[i - 1] } {
                    ActShape::Map { h, w, .. } => h * w,
                    ActShape::Vector(_) => unreachable!("validated"),
                };
                if exp != s.in_channels {
                    t.conv(s.in_channels, exp, 1, in_hw, false, true, true);
                }
                t.conv(1, exp, s.kernel, hw, false, true, true);
                if s.se {
                    let sq = se_width(exp);
                    t.conv(exp, sq, 1, 1, true, false, true);
                    t.conv(sq, exp, 1, 1, true, false, true);
                    t.elementwise += (exp * hw) as u64;
                }
                t.conv(exp, s.out_channels, 1, hw, false, true, false);
                if s.stride == 1 && s.in_channels == s.out_channels {
                    t.elementwise += (s.out_channels * hw) as u64;
                }
            }
            LayerKind::Pool | LayerKind::AdaptivePool { .. } | LayerKind::Flatten | LayerKind::Dropout { .. } => {}
        }
    }
    let flops = t.macs + t.elementwise;
    Ok(FlopCount { flops, multiplications: flops as f64 / 2.0 })
}

fn input_map([c, h, w]: [usize; 3]) -> ActShape {
    ActShape::Map { c, h, w }
}

/// Primitive count: every conv, BN, activation, pool, flatten, linear,
/// dropout and the SE and residual sub-operations of each bottleneck.
pub fn count_layers(config: &ModelConfig) -> usize {
    config
        .layers
        .iter()
        .map(|l| match &l.kind {
            LayerKind::Conv(s) => 1 + s.batch_norm as usize + s.activation.is_some() as usize,
            LayerKind::Pointwise(s) => 1 + s.activation.is_some() as usize,
            LayerKind::Linear(s) => 1 + s.activation.is_some() as usize + s.dropout_p.is_some_and(|p| p > 0.0) as usize,
            LayerKind::Bneck(s) => {
                let exp = s.expansion_ratio.apply(s.in_channels).unwrap_or(s.in_channels);
                let expand = if exp != s.in_channels { 3 } else { 0 };
                let se = if s.se { 6 } else { 0 };
                let residual = (s.stride == 1 && s.in_channels == s.out_channels) as usize;
                expand + 3 + se + 2 + residual
            }
            LayerKind::Pool | LayerKind::AdaptivePool { .. } | LayerKind::Flatten | LayerKind::Dropout { .. } => 1,
        })
        .sum()
}

/// Weight storage in MiB at 4 bytes per parameter.
pub fn memory_mib(parameters: usize) -> f64 {
    parameters as f64 * 4.0 / (1024.0 * 1024.0)
}

/// Memory truncated to the table's printed precision: whole MiB from 10 up,
/// two decimals below.
pub fn memory_mib_truncated(parameters: usize) -> f64 {
    let m = memory_mib(parameters);
    if m >= 10.0 {
        m.trunc()
    } else {
        (m * 100.0).trunc() / 100.0
    }
}

/// Wall-clock timing summary in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub median_s: f64,
    pub iqr_s: f64,
}

/// Median single-input eval-mode forward time after `warmup` discarded runs.
pub fn measure_latency<T: Scalar>(model: &Model<T>, repetitions: usize, warmup: usize) -> Result<Latency> {
    if repetitions == 0 {
        return Err(Error::invalid("repetitions must be >= 1"));
    }
    let [c, h, w] = model.config().input_shape;
    let x = Tensor::<T>::zeros(vec![1, c, h, w]);
    let run = || -> Result<f64> {
        let start = Instant::now();
        let tape = Tape::no_grad();
        let fwd = model.forward_eval(&tape, tape.constant(&x))?;
        std::hint::black_box(fwd.logits.item());
        Ok(start.elapsed().as_secs_f64())
    };
    for _ in 0..warmup {
        run()?;
    }
    let mut times = (0..repetitions).map(|_| run()).collect::<Result<Vec<_>>>()?;
    times.sort_by(f64::total_cmp);
    let q = |p: f64| times[((times.len() - 1) as f64 * p).round() as usize];
    Ok(Latency { median_s: q(0.5).max(f64::MIN_POSITIVE), iqr_s: q(0.75) - q(0.25) })
}

/// Reference characteristics of one model, for comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub parameters: usize,
    pub layers: usize,
    pub flops: u64,
    pub multiplications: u64,
    pub memory_mib: f64,
    pub inference_time_s: f64,
}

pub const REFERENCE_ROWS: [(&str, ReferenceRow); 5] = [
    ("teacher", ReferenceRow { parameters: 59_568_769, layers: 20, flops: 2_485_390_000, multiplications: 1_242_700_000, memory_mib: 227.0, inference_time_s: 0.17 }),
    ("student1", ReferenceRow { parameters: 4_662_017, layers: 215, flops: 388_459_000, multiplications: 194_230_000, memory_mib: 17.0, inference_time_s: 0.038 }),
    ("student2", ReferenceRow { parameters: 2_930_177, layers: 179, flops: 337_257_000, multiplications: 168_628_000, memory_mib: 11.0, inference_time_s: 0.042 }),
    ("student3", ReferenceRow { parameters: 502_793, layers: 179, flops: 27_353_400, multiplications: 13_676_700, memory_mib: 1.91, inference_time_s: 0.0087 }),
    ("student4", ReferenceRow { parameters: 52_253, layers: 114, flops: 8_648_350, multiplications: 4_324_170, memory_mib: 0.19, inference_time_s: 0.0050 }),
];

pub fn reference_row(name: &str) -> Option<ReferenceRow> {
    REFERENCE_ROWS.iter().find(|(n, _)| *n == name).map(|(_, r)| *r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub model: String,
    pub parameters: usize,
    pub layers: usize,
    pub flops: u64,
    pub multiplications: f64,
    pub memory_mib: f64,
    pub inference_time_s: f64,
    pub inference_iqr_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceRow>,
}

impl EfficiencyReport {
    pub fn measure<T: Scalar>(model: &Model<T>, repetitions: usize, warmup: usize) -> Result<Self> {
        let cfg = model.config();
        let parameters = count_parameters(model);
        let fc = count_flops(cfg, cfg.input_shape)?;
        let lat = measure_latency(model, repetitions, warmup)?;
        Ok(EfficiencyReport {
            model: cfg.name.clone(),
            parameters,
            layers: count_layers(cfg),
            flops: fc.flops,
            multiplications: fc.multiplications,
            memory_mib: memory_mib(parameters),
            inference_time_s: lat.median_s,
            inference_iqr_s: lat.iqr_s,
            reference: reference_row(&cfg.name),
        })
    }

    /// Relative deviation `(measured - reference) / reference` for the
    /// parameter, FLOP and memory columns.
    pub fn deviation(&self) -> Option<[(&'static str, f64); 3]> {
        let r = self.reference?;
        let rel = |m: f64, p: f64| (m - p) / p;
        Some([
            ("parameters", rel(self.parameters as f64, r.parameters as f64)),
            ("flops", rel(self.flops as f64, r.flops as f64)),
            ("memory_mib", rel(memory_mib_truncated(self.parameters), r.memory_mib)),
        ])
    }
}

/// Plain-text table of reports with deviations from the reference rows.
pub fn render_table(reports: &[EfficiencyReport]) -> String {
    let mut s = format!(
        "{:<10} {:>12} {:>6} {:>15} {:>15} {:>10} {:>10} {:>9} {:>9}\n",
        "model", "parameters", "layers", "flops", "mults", "mem_mib", "time_s", "d_params", "d_flops"
    );
    for r in reports {
        let (dp, df) = match r.deviation() {
            Some(d) => (format!("{:+.1}%", d[0].1 * 100.0), format!("{:+.1}%", d[1].1 * 100.0)),
            None => ("-".into(), "-".into()),
        };
        s.push_str(&format!(
            "{:<10} {:>12} {:>6} {:>15} {:>15.0} {:>10} {:>10.5} {:>9} {:>9}\n",
            r.model,
            r.parameters,
            r.layers,
            r.flops,
            r.multiplications,
            memory_mib_truncated(r.parameters),
            r.inference_time_s,
            dp,
            df
        ));
    }
    s
}
