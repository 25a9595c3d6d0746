//! The comparison harness: per-inference latency, parameter/memory/FLOP
//! estimates, trend flags, and the rendered report.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{AnyModel, Descriptor, ModelCheckpoint};
use crate::cnn3d::Cnn3dConfig;
use crate::error::{Error, Result};
use crate::lstm::{lstm_param_count, LstmConfig};
use crate::tensor::Tensor;

pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_WARMUP: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub trials: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
}

impl LatencyStats {
    fn from_samples(mut ms: Vec<f64>) -> Self {
        let trials = ms.len();
        let mean = ms.iter().sum::<f64>() / trials as f64;
        ms.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
        // Nearest-rank percentile: ceil(p * n) - 1 on the sorted samples.
        let rank = |p: f64| -> f64 {
            let idx = ((p * trials as f64).ceil() as usize).max(1) - 1;
            ms[idx.min(trials - 1)]
        };
        LatencyStats {
            trials,
            mean_ms: mean,
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
            min_ms: ms[0],
        }
    }
}

/// A representative single input for latency measurement.
pub enum BenchInput {
    /// `[T, 63]` landmark window.
    Window(Tensor),
    /// `[T, H, W, C]` frame volume.
    Volume(Tensor),
}

impl BenchInput {
    pub fn frames(&self) -> usize {
        match self {
            BenchInput::Window(t) | BenchInput::Volume(t) => t.shape()[0],
        }
    }
}

/// Time single-input inference: `warmup` untimed runs, then `trials` runs
/// each timed with the monotonic clock. Must be called from a single
/// execution thread with no concurrent load from the harness itself.
pub fn measure_latency(
    checkpoint: &ModelCheckpoint,
    input: &BenchInput,
    trials: usize,
    warmup: usize,
) -> Result<LatencyStats> {
    if trials == 0 {
        return Err(Error::InvalidConfig("latency trials must be >= 1".into()));
    }
    let model = AnyModel::from_checkpoint(checkpoint)?;
    let run = |model: &AnyModel| -> Result<Tensor> {
        match (model, input) {
            (AnyModel::Lstm(m), BenchInput::Window(w)) => m.infer(w),
            (AnyModel::Cnn3d(m), BenchInput::Volume(v)) => m.infer(v),
            (AnyModel::Lstm(_), BenchInput::Volume(_)) => Err(Error::ModalityMismatch {
                expected: "landmark sequences",
                got: "frame volumes",
            }),
            (AnyModel::Cnn3d(_), BenchInput::Window(_)) => Err(Error::ModalityMismatch {
                expected: "frame volumes",
                got: "landmark sequences",
            }),
        }
    };
    for _ in 0..warmup {
        run(&model)?;
    }
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        let out = run(&model)?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    Ok(LatencyStats::from_samples(samples))
}

/// Analytic cost model: exact parameter byte counts at two precisions, the
/// largest single activation tensor from shape propagation, and multiply-add
/// FLOP counts (2 per multiply-add) for the conv, dense, and LSTM-step
/// matrix work. Pooling, normalization, and activations are excluded as
/// lower-order terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub param_count: u64,
    pub param_bytes_f64: u64,
    pub param_bytes_f32: u64,
    pub peak_activation_elems: u64,
    pub memory_bytes_f64: u64,
    pub memory_bytes_f32: u64,
    pub flop_estimate: u64,
}

fn lstm_cost(config: &LstmConfig, seq_len: usize) -> CostEstimate {
    let params = lstm_param_count(config) as u64;
    let mut flops: u64 = 0;
    let mut input = config.input_size;
    let mut peak = (seq_len * config.input_size) as u64;
    for &h in &config.hidden_sizes {
        // 2 * 4h * (in + h) per step.
        flops += 2 * (4 * h * (input + h)) as u64 * seq_len as u64;
        peak = peak.max((seq_len * h) as u64).max(4 * h as u64);
        input = h;
    }
    let last = *config.hidden_sizes.last().expect("validated");
    flops += 2 * (last * config.dense_size) as u64;
    flops += 2 * (config.dense_size * config.num_classes) as u64;
    peak = peak
        .max(config.dense_size as u64)
        .max(config.num_classes as u64);
    finish_cost(params, peak, flops)
}

fn cnn_cost(config: &Cnn3dConfig) -> Result<CostEstimate> {
    let chain = config.shape_chain()?;
    let params = crate::cnn3d::cnn3d_param_count(config)? as u64;
    let mut peak: u64 = chain
        .iter()
        .map(|d| d.iter().product::<usize>() as u64)
        .max()
        .unwrap_or(0);
    let mut flops: u64 = 0;
    let mut channels = config.input_dims[3];
    let mut stage = 1; // chain[0] is the input
    for block in &config.blocks {
        let conv_dims = chain[stage];
        let voxels = (conv_dims[0] * conv_dims[1] * conv_dims[2]) as u64;
        let (kt, kh, kw) = block.kernel;
        // 2 * K * kt * kh * kw * Cin per output voxel.
        flops += voxels * 2 * (block.out_channels * kt * kh * kw * channels) as u64;
        stage += if block.pool { 2 } else { 1 };
        channels = block.out_channels;
    }
    let flat = config.flattened_size()? as u64;
    flops += 2 * flat * config.dense_size as u64;
    flops += 2 * (config.dense_size * config.num_classes) as u64;
    peak = peak
        .max(config.dense_size as u64)
        .max(config.num_classes as u64);
    Ok(finish_cost(params, peak, flops))
}

fn finish_cost(params: u64, peak: u64, flops: u64) -> CostEstimate {
    CostEstimate {
        param_count: params,
        param_bytes_f64: params * 8,
        param_bytes_f32: params * 4,
        peak_activation_elems: peak,
        memory_bytes_f64: (params + peak) * 8,
        memory_bytes_f32: (params + peak) * 4,
        flop_estimate: flops,
    }
}

/// Memory and FLOP estimate for a checkpoint. `seq_len` sets the window
/// length assumed for landmark models (volume models read their input dims
/// from the config).
pub fn estimate_cost(checkpoint: &ModelCheckpoint, seq_len: usize) -> Result<CostEstimate> {
    match &checkpoint.descriptor {
        Descriptor::Lstm(config) => {
            config.validate()?;
            if seq_len == 0 {
                return Err(Error::InvalidConfig("seq_len must be >= 1".into()));
            }
            Ok(lstm_cost(config, seq_len))
        }
        Descriptor::Cnn3d(config) => cnn_cost(config),
    }
}

/// Everything the report records for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub input: String,
    pub input_frames: usize,
    pub accuracy: f64,
    pub latency: LatencyStats,
    pub latency_per_frame_ms: f64,
    pub param_count: u64,
    pub memory_bytes_f64: u64,
    pub memory_bytes_f32: u64,
    pub peak_activation_elems: u64,
    pub flop_estimate: u64,
}

impl ModelMetrics {
    pub fn assemble(
        input: String,
        input_frames: usize,
        accuracy: f64,
        latency: LatencyStats,
        cost: &CostEstimate,
    ) -> Self {
        ModelMetrics {
            input,
            input_frames,
            accuracy,
            latency_per_frame_ms: latency.mean_ms / input_frames.max(1) as f64,
            latency,
            param_count: cost.param_count,
            memory_bytes_f64: cost.memory_bytes_f64,
            memory_bytes_f32: cost.memory_bytes_f32,
            peak_activation_elems: cost.peak_activation_elems,
            flop_estimate: cost.flop_estimate,
        }
    }
}

/// Whether the expected qualitative orderings hold: the 3D CNN is the
/// larger, slower, and (at full scale) slightly more accurate model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendFlags {
    /// cnn accuracy >= lstm accuracy
    pub accuracy: bool,
    /// cnn latency strictly greater
    pub latency: bool,
    /// cnn parameter count strictly greater
    pub params: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedMetrics {
    /// cnn mean latency / lstm mean latency
    pub latency_ratio: f64,
    /// (cnn accuracy - lstm accuracy) in percentage points
    pub accuracy_delta: f64,
    /// cnn params / lstm params
    pub param_ratio: f64,
    pub trends: TrendFlags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub lstm: ModelMetrics,
    pub cnn3d: ModelMetrics,
    pub derived: DerivedMetrics,
}

/// Fill in the derived ratios and trend flags.
pub fn compare(lstm: ModelMetrics, cnn3d: ModelMetrics) -> ComparisonReport {
    let derived = DerivedMetrics {
        latency_ratio: cnn3d.latency.mean_ms / lstm.latency.mean_ms,
        accuracy_delta: (cnn3d.accuracy - lstm.accuracy) * 100.0,
        param_ratio: cnn3d.param_count as f64 / lstm.param_count as f64,
        trends: TrendFlags {
            accuracy: cnn3d.accuracy >= lstm.accuracy,
            latency: cnn3d.latency.mean_ms > lstm.latency.mean_ms,
            params: cnn3d.param_count > lstm.param_count,
        },
    };
    ComparisonReport {
        lstm,
        cnn3d,
        derived,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

/// Render the report. JSON is stable-key-ordered (struct declaration order)
/// and byte-deterministic for identical input; text is an aligned
/// three-column table.
pub fn render_report(report: &ComparisonReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).expect("report serializes") + "\n"
        }
        ReportFormat::Text => render_text(report),
    }
}

pub fn parse_report(json: &str) -> Result<ComparisonReport> {
    serde_json::from_str(json).map_err(|e| Error::parse("<report>", e.to_string()))
}

fn render_text(report: &ComparisonReport) -> String {
    let l = &report.lstm;
    let c = &report.cnn3d;
    let rows: Vec<(String, String, String)> = vec![
        ("Input".into(), l.input.clone(), c.input.clone()),
        (
            "Accuracy".into(),
            format!("{:.4}", l.accuracy),
            format!("{:.4}", c.accuracy),
        ),
        (
            "Latency mean (ms)".into(),
            format!("{:.3}", l.latency.mean_ms),
            format!("{:.3}", c.latency.mean_ms),
        ),
        (
            "Latency p50 (ms)".into(),
            format!("{:.3}", l.latency.p50_ms),
            format!("{:.3}", c.latency.p50_ms),
        ),
        (
            "Latency p95 (ms)".into(),
            format!("{:.3}", l.latency.p95_ms),
            format!("{:.3}", c.latency.p95_ms),
        ),
        (
            "Latency min (ms)".into(),
            format!("{:.3}", l.latency.min_ms),
            format!("{:.3}", c.latency.min_ms),
        ),
        (
            "Latency per frame (ms)".into(),
            format!("{:.4}", l.latency_per_frame_ms),
            format!("{:.4}", c.latency_per_frame_ms),
        ),
        (
            "Model size (params)".into(),
            l.param_count.to_string(),
            c.param_count.to_string(),
        ),
        (
            "Memory, 64-bit (bytes)".into(),
            l.memory_bytes_f64.to_string(),
            c.memory_bytes_f64.to_string(),
        ),
        (
            "Memory, 32-bit (bytes)".into(),
            l.memory_bytes_f32.to_string(),
            c.memory_bytes_f32.to_string(),
        ),
        (
            "Peak activation (elems)".into(),
            l.peak_activation_elems.to_string(),
            c.peak_activation_elems.to_string(),
        ),
        (
            "Computation (FLOPs/inference)".into(),
            l.flop_estimate.to_string(),
            c.flop_estimate.to_string(),
        ),
    ];
    let w0 = rows
        .iter()
        .map(|r| r.0.len())
        .max()
        .unwrap_or(0)
        .max("Parameters".len());
    let w1 = rows
        .iter()
        .map(|r| r.1.len())
        .max()
        .unwrap_or(0)
        .max("LSTM Model".len());
    let w2 = rows
        .iter()
        .map(|r| r.2.len())
        .max()
        .unwrap_or(0)
        .max("3D CNN Model".len());
    let mut out = String::new();
    out.push_str(&format!(
        "{:<w0$}  {:<w1$}  {:<w2$}\n",
        "Parameters", "LSTM Model", "3D CNN Model"
    ));
    out.push_str(&format!(
        "{}  {}  {}\n",
        "-".repeat(w0),
        "-".repeat(w1),
        "-".repeat(w2)
    ));
    for (name, lv, cv) in &rows {
        out.push_str(&format!("{name:<w0$}  {lv:<w1$}  {cv:<w2$}\n"));
    }
    let d = &report.derived;
    out.push_str(&format!(
        "\nDerived: latency_ratio={:.3} accuracy_delta={:+.2}pts param_ratio={:.3}\n",
        d.latency_ratio, d.accuracy_delta, d.param_ratio
    ));
    out.push_str(&format!(
        "Trends:  accuracy={} latency={} params={}\n",
        d.trends.accuracy, d.trends.latency, d.trends.params
    ));
    out
}
