//! Adam optimization, the mini-batch training loop shared by both model
//! families, and evaluation metrics.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{AnyModel, ModelCheckpoint};
use crate::cnn3d::{Cnn3dConfig, Cnn3dModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lstm::{LstmConfig, LstmModel};
use crate::ops::dropout::dropout_mask;
use crate::ops::norm::{BnCache, DEFAULT_MOMENTUM};
use crate::rng::{child_seed, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub early_stop_patience: usize,
    /// Worker threads for per-sample gradients within a batch; 0 = auto.
    /// Gradients are reduced in sample order, so the result is bit-identical
    /// to sequential execution at any thread count.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            epochs: 30,
            seed: 42,
            early_stop_patience: 5,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < beta && beta < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be in (0, 1), got {beta}"
                )));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "eps must be > 0, got {}",
                self.eps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// Equality over everything except the wall-clock column.
    pub fn same_numbers(&self, other: &TrainHistory) -> bool {
        self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.train_loss == b.train_loss
                    && a.train_accuracy == b.train_accuracy
                    && a.val_loss == b.val_loss
                    && a.val_accuracy == b.val_accuracy
            })
    }
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(shapes: &[&[usize]]) -> Self {
        AdamState {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }
}

/// One Adam update with bias correction. `t` is the 1-based step count.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    t: u64,
    config: &TrainConfig,
) -> Result<()> {
    config.validate()?;
    if t == 0 {
        return Err(Error::InvalidConfig("adam step count starts at 1".into()));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidConfig(format!(
            "adam: {} params, {} grads, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let bias1 = 1.0 - config.beta1.powi(t as i32);
    let bias2 = 1.0 - config.beta2.powi(t as i32);
    for ((param, grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if param.shape() != grad.shape() {
            return Err(Error::InvalidConfig(format!(
                "adam: gradient shape {:?} does not match parameter shape {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        let pd = param.data_mut();
        let gd = grad.data();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..pd.len() {
            md[i] = config.beta1 * md[i] + (1.0 - config.beta1) * gd[i];
            vd[i] = config.beta2 * vd[i] + (1.0 - config.beta2) * gd[i] * gd[i];
            let m_hat = md[i] / bias1;
            let v_hat = vd[i] / bias2;
            pd[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

/// Which model family to train, with its architecture config.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Lstm(LstmConfig),
    Cnn3d(Cnn3dConfig),
}

impl ModelSpec {
    fn expects(&self) -> &'static str {
        match self {
            ModelSpec::Lstm(_) => "landmark sequences",
            ModelSpec::Cnn3d(_) => "frame volumes",
        }
    }

    fn matches(&self, data: &Dataset) -> bool {
        matches!(
            (self, data),
            (ModelSpec::Lstm(_), Dataset::Landmarks(_))
                | (ModelSpec::Cnn3d(_), Dataset::Volumes(_))
        )
    }

    fn num_classes(&self) -> usize {
        match self {
            ModelSpec::Lstm(c) => c.num_classes,
            ModelSpec::Cnn3d(c) => c.num_classes,
        }
    }
}

struct SampleResult {
    loss: f64,
    correct: bool,
    grads: Vec<Tensor>,
    bn_stats: Vec<BnCache>,
}

fn model_sample_pass(
    model: &AnyModel,
    input: &Tensor,
    label: usize,
    dropout_seed: u64,
) -> Result<SampleResult> {
    let mut tape = crate::tape::GradTape::new();
    match model {
        AnyModel::Lstm(m) => {
            let (vars, flat) = m.tape_params(&mut tape);
            let keep = if m.config.dropout_rate > 0.0 {
                let last = *m.config.hidden_sizes.last().expect("non-empty");
                Some(dropout_mask(
                    last,
                    m.config.dropout_rate,
                    &mut Rng::seed_from(dropout_seed),
                ))
            } else {
                None
            };
            let loss = m.build_loss(&mut tape, &vars, input, label, keep.as_deref())?;
            let probs = tape.softmax_probs(loss).expect("loss node").to_vec();
            let loss_value = tape.scalar_value(loss);
            let grads_all = tape.backward(loss)?;
            let grads = flat
                .iter()
                .zip(m.named_params())
                .map(|(v, (_, p))| {
                    grads_all
                        .get(*v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(p.shape()))
                })
                .collect();
            Ok(SampleResult {
                loss: loss_value,
                correct: argmax(&probs) == label,
                grads,
                bn_stats: Vec::new(),
            })
        }
        AnyModel::Cnn3d(m) => {
            let (vars, flat) = m.tape_params(&mut tape);
            let keep = if m.config.dropout_rate > 0.0 {
                Some(dropout_mask(
                    m.config.dense_size,
                    m.config.dropout_rate,
                    &mut Rng::seed_from(dropout_seed),
                ))
            } else {
                None
            };
            let (loss, bn_stats) = m.build_loss(&mut tape, &vars, input, label, keep.as_deref())?;
            let probs = tape.softmax_probs(loss).expect("loss node").to_vec();
            let loss_value = tape.scalar_value(loss);
            let grads_all = tape.backward(loss)?;
            let grads = flat
                .iter()
                .zip(m.named_params())
                .map(|(v, (_, p))| {
                    grads_all
                        .get(*v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(p.shape()))
                })
                .collect();
            Ok(SampleResult {
                loss: loss_value,
                correct: argmax(&probs) == label,
                grads,
                bn_stats,
            })
        }
    }
}

fn model_infer(model: &AnyModel, input: &Tensor) -> Result<Tensor> {
    match model {
        AnyModel::Lstm(m) => m.infer(input),
        AnyModel::Cnn3d(m) => m.infer(input),
    }
}

fn model_params_mut(model: &mut AnyModel) -> Vec<&mut Tensor> {
    match model {
        AnyModel::Lstm(m) => m.params_mut(),
        AnyModel::Cnn3d(m) => m.params_mut(),
    }
}

/// Lowest index wins ties, so evaluation is deterministic.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn dataset_inputs(data: &Dataset) -> (Vec<Tensor>, Vec<usize>) {
    match data {
        Dataset::Landmarks(set) => (
            set.iter().map(|s| s.to_tensor()).collect(),
            set.iter().map(|s| s.label).collect(),
        ),
        Dataset::Volumes(set) => (
            set.samples.iter().map(|v| v.to_tensor()).collect(),
            set.samples.iter().map(|v| v.label).collect(),
        ),
    }
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    for &label in labels {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
    }
    Ok(())
}

/// Train a freshly initialized model. Shuffles per epoch with a seeded
/// generator, accumulates batch-mean gradients, early-stops on validation
/// loss, and returns the best-validation checkpoint. Fully deterministic
/// per (spec, data, config).
pub fn train(
    spec: &ModelSpec,
    train_data: &Dataset,
    val_data: &Dataset,
    config: &TrainConfig,
) -> Result<(ModelCheckpoint, TrainHistory)> {
    config.validate()?;
    for data in [train_data, val_data] {
        if !spec.matches(data) {
            return Err(Error::ModalityMismatch {
                expected: spec.expects(),
                got: data.modality(),
            });
        }
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
    }
    let classes = spec.num_classes();
    let (train_inputs, train_labels) = dataset_inputs(train_data);
    let (val_inputs, val_labels) = dataset_inputs(val_data);
    check_labels(&train_labels, classes)?;
    check_labels(&val_labels, classes)?;

    let mut model = match spec {
        ModelSpec::Lstm(c) => {
            AnyModel::Lstm(LstmModel::init(c.clone(), child_seed(config.seed, 1))?)
        }
        ModelSpec::Cnn3d(c) => {
            AnyModel::Cnn3d(Cnn3dModel::init(c.clone(), child_seed(config.seed, 1))?)
        }
    };
    let shapes: Vec<Vec<usize>> = model_params_mut(&mut model)
        .iter()
        .map(|p| p.shape().to_vec())
        .collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut adam = AdamState::new(&shape_refs);
    let mut step: u64 = 0;

    let mut shuffle_rng = Rng::seed_from(child_seed(config.seed, 2));
    let dropout_root = child_seed(config.seed, 3);
    let threads = effective_threads(config.threads, config.batch_size);

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, AnyModel)> = None;
    let mut epochs_since_improve = 0usize;

    for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        let mut order: Vec<usize> = (0..train_inputs.len()).collect();
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let jobs: Vec<(usize, u64)> = chunk
                .iter()
                .map(|&idx| {
                    let seed = child_seed(
                        dropout_root,
                        epoch as u64 * train_inputs.len() as u64 + idx as u64,
                    );
                    (idx, seed)
                })
                .collect();
            let results = run_batch(&model, &train_inputs, &train_labels, &jobs, threads)?;

            let mut grad_sum: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
            for result in &results {
                loss_sum += result.loss;
                correct += result.correct as usize;
                for (sum, g) in grad_sum.iter_mut().zip(&result.grads) {
                    let sd = sum.data_mut();
                    for (d, s) in sd.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                // Running batch-norm statistics advance once per sample, in
                // sample order, exactly as a sequential pass would.
                if let AnyModel::Cnn3d(m) = &mut model {
                    for (state, cache) in m.bn_states.iter_mut().zip(&result.bn_stats) {
                        state.update(cache, DEFAULT_MOMENTUM);
                    }
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            for g in &mut grad_sum {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            step += 1;
            let mut params = model_params_mut(&mut model);
            adam_step(&mut params, &grad_sum, &mut adam, step, config)?;
        }

        let (val_loss, val_accuracy) = eval_pass(&model, &val_inputs, &val_labels)?;
        history.epochs.push(EpochStats {
            train_loss: loss_sum / train_inputs.len() as f64,
            train_accuracy: correct as f64 / train_inputs.len() as f64,
            val_loss,
            val_accuracy,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });

        let improved = best
            .as_ref()
            .map_or(true, |(best_loss, _)| val_loss < *best_loss);
        if improved {
            best = Some((val_loss, model.clone()));
            epochs_since_improve = 0;
        } else {
            epochs_since_improve += 1;
            if epochs_since_improve >= config.early_stop_patience {
                break;
            }
        }
    }

    let final_model = best.map(|(_, m)| m).unwrap_or(model);
    Ok((final_model.to_checkpoint(), history))
}

fn effective_threads(config_threads: usize, batch_size: usize) -> usize {
    let auto = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let n = if config_threads == 0 {
        auto
    } else {
        config_threads
    };
    n.clamp(1, batch_size)
}

fn run_batch(
    model: &AnyModel,
    inputs: &[Tensor],
    labels: &[usize],
    jobs: &[(usize, u64)],
    threads: usize,
) -> Result<Vec<SampleResult>> {
    if threads <= 1 || jobs.len() <= 1 {
        return jobs
            .iter()
            .map(|&(idx, seed)| model_sample_pass(model, &inputs[idx], labels[idx], seed))
            .collect();
    }
    let per_thread = jobs.len().div_ceil(threads);
    let chunks: Vec<&[(usize, u64)]> = jobs.chunks(per_thread).collect();
    let outcomes: Vec<Result<Vec<SampleResult>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| {
                scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|&(idx, seed)| {
                            model_sample_pass(model, &inputs[idx], labels[idx], seed)
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    // Threads own contiguous chunks in batch order, so concatenation keeps
    // the sequential reduction order.
    let mut out = Vec::with_capacity(jobs.len());
    for outcome in outcomes {
        out.extend(outcome?);
    }
    Ok(out)
}

fn eval_pass(model: &AnyModel, inputs: &[Tensor], labels: &[usize]) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (input, &label) in inputs.iter().zip(labels) {
        let probs = model_infer(model, input)?;
        loss_sum += -probs.data()[label].max(f64::MIN_POSITIVE).ln();
        correct += (argmax(probs.data()) == label) as usize;
    }
    Ok((
        loss_sum / inputs.len() as f64,
        correct as f64 / inputs.len() as f64,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    /// `confusion[true_class][predicted_class]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Inference-mode evaluation of a checkpoint; the checkpoint (and its
/// running statistics) is read-only.
pub fn evaluate(checkpoint: &ModelCheckpoint, data: &Dataset) -> Result<EvalMetrics> {
    let model = AnyModel::from_checkpoint(checkpoint)?;
    let expected = match model {
        AnyModel::Lstm(_) => "landmark sequences",
        AnyModel::Cnn3d(_) => "frame volumes",
    };
    let compatible = matches!(
        (&model, data),
        (AnyModel::Lstm(_), Dataset::Landmarks(_)) | (AnyModel::Cnn3d(_), Dataset::Volumes(_))
    );
    if !compatible {
        return Err(Error::ModalityMismatch {
            expected,
            got: data.modality(),
        });
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.num_classes();
    let (inputs, labels) = dataset_inputs(data);
    check_labels(&labels, classes)?;

    let mut confusion = vec![vec![0usize; classes]; classes];
    for (input, &label) in inputs.iter().zip(&labels) {
        let probs = model_infer(&model, input)?;
        confusion[label][argmax(probs.data())] += 1;
    }
    let total: usize = labels.len();
    let trace: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let mut precision = vec![0.0; classes];
    let mut recall = vec![0.0; classes];
    for c in 0..classes {
        let predicted: usize = (0..classes).map(|r| confusion[r][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        precision[c] = if predicted > 0 {
            confusion[c][c] as f64 / predicted as f64
        } else {
            0.0
        };
        recall[c] = if actual > 0 {
            confusion[c][c] as f64 / actual as f64
        } else {
            0.0
        };
    }
    Ok(EvalMetrics {
        accuracy: trace as f64 / total as f64,
        confusion,
        precision,
        recall,
    })
}
