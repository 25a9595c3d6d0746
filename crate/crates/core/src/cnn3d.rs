//! Frame-volume classifier: stacked (conv3d -> batch norm -> relu ->
//! max-pool) blocks, flatten, dense head with dropout, softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::conv::{self, Conv3dSpec, Padding};
use crate::ops::dense::{self, Activation};
use crate::ops::dropout;
use crate::ops::norm::{self, BnCache, RunningStats, DEFAULT_EPS};
use crate::ops::pool;
use crate::rng::Rng;
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor;

/// One conv block: convolution spec plus an optional trailing max-pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub out_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: (usize, usize, usize),
    #[serde(default = "default_stride")]
    pub stride: (usize, usize, usize),
    #[serde(default = "default_pool")]
    pub pool: bool,
    #[serde(default = "default_pool_window")]
    pub pool_window: (usize, usize, usize),
}

fn default_kernel() -> (usize, usize, usize) {
    (3, 3, 3)
}
fn default_stride() -> (usize, usize, usize) {
    (1, 1, 1)
}
fn default_pool() -> bool {
    true
}
fn default_pool_window() -> (usize, usize, usize) {
    pool::DEFAULT_WINDOW
}

impl BlockSpec {
    pub fn new(out_channels: usize) -> Self {
        BlockSpec {
            out_channels,
            kernel: default_kernel(),
            stride: default_stride(),
            pool: default_pool(),
            pool_window: default_pool_window(),
        }
    }

    fn conv_spec(&self, in_channels: usize) -> Conv3dSpec {
        Conv3dSpec {
            in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: Padding::Valid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cnn3dConfig {
    pub input_dims: [usize; 4],
    pub blocks: Vec<BlockSpec>,
    pub dense_size: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
}

impl Default for Cnn3dConfig {
    /// Desk-scale default: grayscale 16x32x32 clips through two blocks.
    fn default() -> Self {
        Cnn3dConfig {
            input_dims: [16, 32, 32, 1],
            blocks: vec![BlockSpec::new(8), BlockSpec::new(32)],
            dense_size: 64,
            dropout_rate: 0.4,
            num_classes: 36,
        }
    }
}

impl Cnn3dConfig {
    /// Full-scale variant: 30 RGB frames of 128x128 through three blocks.
    pub fn full_scale() -> Self {
        Cnn3dConfig {
            input_dims: [30, 128, 128, 3],
            blocks: vec![BlockSpec::new(8), BlockSpec::new(16), BlockSpec::new(32)],
            dense_size: 64,
            dropout_rate: 0.4,
            num_classes: 36,
        }
    }

    /// Validate and propagate shapes through every block. Returns the stage
    /// chain: input dims, then dims after each conv and each pool. Any
    /// intermediate dim < 1 is a configuration error here, not at forward
    /// time.
    pub fn shape_chain(&self) -> Result<Vec<[usize; 4]>> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidConfig(
                "cnn3d needs at least one block".into(),
            ));
        }
        if self.dense_size == 0 {
            return Err(Error::InvalidConfig("cnn3d dense_size must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "cnn3d num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        dropout::validate_rate(self.dropout_rate)?;
        if self.input_dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "cnn3d input dims must be positive, got {:?}",
                self.input_dims
            )));
        }
        let mut chain = vec![self.input_dims];
        let mut dims = self.input_dims;
        let mut channels = self.input_dims[3];
        for block in &self.blocks {
            let spec = block.conv_spec(channels);
            dims = spec.output_dims(&dims)?;
            chain.push(dims);
            if block.pool {
                let (pt, ph, pw) = block.pool_window;
                for (axis, extent, win) in [
                    ("time", dims[0], pt),
                    ("height", dims[1], ph),
                    ("width", dims[2], pw),
                ] {
                    if extent < win {
                        return Err(Error::KernelTooLarge {
                            op: "maxpool3d",
                            axis,
                            input: extent,
                            kernel: win,
                        });
                    }
                }
                dims = [dims[0] / pt, dims[1] / ph, dims[2] / pw, dims[3]];
                chain.push(dims);
            }
            channels = block.out_channels;
        }
        Ok(chain)
    }

    /// Product of the final block output dims.
    pub fn flattened_size(&self) -> Result<usize> {
        let chain = self.shape_chain()?;
        Ok(chain.last().expect("chain non-empty").iter().product())
    }
}

/// `sum of conv kernels (K*kt*kh*kw*Cin + K) + 2C per bn layer + dense head`.
pub fn cnn3d_param_count(config: &Cnn3dConfig) -> Result<usize> {
    let flat = config.flattened_size()?;
    let mut total = 0;
    let mut channels = config.input_dims[3];
    for block in &config.blocks {
        let (kt, kh, kw) = block.kernel;
        total += block.out_channels * kt * kh * kw * channels + block.out_channels;
        total += 2 * block.out_channels; // gamma + beta
        channels = block.out_channels;
    }
    total += flat * config.dense_size + config.dense_size;
    total += config.dense_size * config.num_classes + config.num_classes;
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub weights: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cnn3dModel {
    pub config: Cnn3dConfig,
    pub blocks: Vec<BlockParams>,
    pub bn_states: Vec<RunningStats>,
    pub dense_w: Tensor,
    pub dense_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

pub struct Cnn3dVars {
    pub blocks: Vec<(Var, Var, Var, Var)>,
    pub dense_w: Var,
    pub dense_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

impl Cnn3dModel {
    pub fn init(config: Cnn3dConfig, seed: u64) -> Result<Self> {
        config.shape_chain()?; // validates
        let mut rng = Rng::seed_from(seed);
        let mut blocks = Vec::new();
        let mut bn_states = Vec::new();
        let mut channels = config.input_dims[3];
        for block in &config.blocks {
            let spec = block.conv_spec(channels);
            let (kt, kh, kw) = block.kernel;
            let fan_in = kt * kh * kw * channels;
            let bound = 1.0 / (fan_in as f64).sqrt();
            blocks.push(BlockParams {
                weights: Tensor::uniform(&spec.weight_shape(), -bound, bound, &mut rng),
                bias: Tensor::zeros(&[block.out_channels]),
                gamma: Tensor::full(&[block.out_channels], 1.0),
                beta: Tensor::zeros(&[block.out_channels]),
            });
            bn_states.push(RunningStats::new(block.out_channels));
            channels = block.out_channels;
        }
        let flat = config.flattened_size()?;
        let bound = 1.0 / (flat as f64).sqrt();
        let dense_w = Tensor::uniform(&[flat, config.dense_size], -bound, bound, &mut rng);
        let dense_b = Tensor::zeros(&[config.dense_size]);
        let bound = 1.0 / (config.dense_size as f64).sqrt();
        let out_w = Tensor::uniform(
            &[config.dense_size, config.num_classes],
            -bound,
            bound,
            &mut rng,
        );
        let out_b = Tensor::zeros(&[config.num_classes]);
        Ok(Cnn3dModel {
            config,
            blocks,
            bn_states,
            dense_w,
            dense_b,
            out_w,
            out_b,
        })
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Trainable parameters in canonical order (running stats excluded).
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            out.push((format!("block.{i}.w"), &block.weights));
            out.push((format!("block.{i}.b"), &block.bias));
            out.push((format!("block.{i}.gamma"), &block.gamma));
            out.push((format!("block.{i}.beta"), &block.beta));
        }
        out.push(("head.dense.w".to_string(), &self.dense_w));
        out.push(("head.dense.b".to_string(), &self.dense_b));
        out.push(("head.out.w".to_string(), &self.out_w));
        out.push(("head.out.b".to_string(), &self.out_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            out.push(&mut block.weights);
            out.push(&mut block.bias);
            out.push(&mut block.gamma);
            out.push(&mut block.beta);
        }
        out.push(&mut self.dense_w);
        out.push(&mut self.dense_b);
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }

    /// Running-statistics tensors in canonical order, appended to
    /// checkpoints after the trainable parameters.
    pub fn named_state(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, state) in self.bn_states.iter().enumerate() {
            out.push((
                format!("block.{i}.running_mean"),
                Tensor::new(vec![state.mean.len()], state.mean.clone()).expect("state shape"),
            ));
            out.push((
                format!("block.{i}.running_var"),
                Tensor::new(vec![state.var.len()], state.var.clone()).expect("state shape"),
            ));
            out.push((
                format!("block.{i}.bn_steps"),
                Tensor::scalar(state.steps as f64),
            ));
        }
        out
    }

    pub fn from_named(config: Cnn3dConfig, tensors: &[(String, Tensor)]) -> Result<Self> {
        let mut model = Cnn3dModel::init(config, 0)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .named_params()
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .chain(
                model
                    .named_state()
                    .iter()
                    .map(|(n, t)| (n.clone(), t.shape().to_vec())),
            )
            .collect();
        if tensors.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "cnn3d expects {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, shape), (got_name, got)) in expected.iter().zip(tensors) {
            if name != got_name {
                return Err(Error::Checkpoint(format!(
                    "tensor {got_name:?} out of order, expected {name:?}"
                )));
            }
            if got.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} has shape {:?}, expected {shape:?}",
                    got.shape()
                )));
            }
        }
        let param_len = model.named_params().len();
        for (slot, (_, got)) in model.params_mut().into_iter().zip(&tensors[..param_len]) {
            *slot = got.clone();
        }
        let mut rest = tensors[param_len..].iter();
        for state in &mut model.bn_states {
            let (_, mean) = rest.next().expect("validated length");
            let (_, var) = rest.next().expect("validated length");
            let (_, steps) = rest.next().expect("validated length");
            state.mean = mean.data().to_vec();
            state.var = var.data().to_vec();
            state.steps = steps.data()[0] as u64;
        }
        Ok(model)
    }

    fn check_volume(&self, volume: &Tensor) -> Result<()> {
        if volume.shape() != self.config.input_dims {
            return Err(Error::InvalidConfig(format!(
                "cnn3d input must have dims {:?}, got {:?}",
                self.config.input_dims,
                volume.shape()
            )));
        }
        Ok(())
    }

    /// Inference-mode class probabilities. Side-effect free: running batch
    /// norm statistics are read, never written.
    pub fn infer(&self, volume: &Tensor) -> Result<Tensor> {
        self.check_volume(volume)?;
        let mut x = volume.clone();
        let mut channels = self.config.input_dims[3];
        for (spec_block, (params, state)) in self
            .config
            .blocks
            .iter()
            .zip(self.blocks.iter().zip(&self.bn_states))
        {
            let spec = spec_block.conv_spec(channels);
            x = conv::conv3d(&x, &spec, &params.weights, &params.bias)?;
            x = norm::batchnorm_infer(&x, &params.gamma, &params.beta, state, DEFAULT_EPS)?;
            x = x.map(|v| if v > 0.0 { v } else { 0.0 });
            if spec_block.pool {
                x = pool::maxpool3d(&x, spec_block.pool_window)?.0;
            }
            channels = spec_block.out_channels;
        }
        let flat = x.reshape(&[x.numel()])?;
        let dense1 = dense::dense(&flat, &self.dense_w, &self.dense_b, Activation::Relu)?;
        // Dropout is the identity at inference.
        let logits = dense::dense(&dense1, &self.out_w, &self.out_b, Activation::None)?;
        Tensor::new(vec![self.config.num_classes], dense::softmax(logits.data()))
    }

    pub fn tape_params(&self, tape: &mut GradTape) -> (Cnn3dVars, Vec<Var>) {
        let mut flat = Vec::new();
        let mut blocks = Vec::new();
        for block in &self.blocks {
            let w = tape.param(block.weights.clone());
            let b = tape.param(block.bias.clone());
            let gamma = tape.param(block.gamma.clone());
            let beta = tape.param(block.beta.clone());
            blocks.push((w, b, gamma, beta));
            flat.extend([w, b, gamma, beta]);
        }
        let dense_w = tape.param(self.dense_w.clone());
        let dense_b = tape.param(self.dense_b.clone());
        let out_w = tape.param(self.out_w.clone());
        let out_b = tape.param(self.out_b.clone());
        flat.extend([dense_w, dense_b, out_w, out_b]);
        (
            Cnn3dVars {
                blocks,
                dense_w,
                dense_b,
                out_w,
                out_b,
            },
            flat,
        )
    }

    /// Train-mode loss graph for one volume. Batch-norm layers normalize
    /// with this volume's statistics; the per-block batch stats are returned
    /// so the trainer can update the running statistics afterwards.
    pub fn build_loss(
        &self,
        tape: &mut GradTape,
        vars: &Cnn3dVars,
        volume: &Tensor,
        label: usize,
        dropout_keep: Option<&[bool]>,
    ) -> Result<(Var, Vec<BnCache>)> {
        self.check_volume(volume)?;
        if label >= self.config.num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.config.num_classes,
            });
        }
        let mut x = tape.input(volume.clone());
        let mut batch_stats = Vec::new();
        let mut channels = self.config.input_dims[3];
        for (spec_block, &(w, b, gamma, beta)) in self.config.blocks.iter().zip(&vars.blocks) {
            let spec = spec_block.conv_spec(channels);
            x = tape.conv3d(x, w, b, &spec)?;
            let (bn, stats) = tape.batchnorm_train(x, gamma, beta, DEFAULT_EPS)?;
            batch_stats.push(stats);
            x = tape.relu(bn);
            if spec_block.pool {
                x = tape.maxpool3d(x, spec_block.pool_window)?;
            }
            channels = spec_block.out_channels;
        }
        let flat = tape.flatten(x)?;
        let mut dense1 = tape.dense(flat, vars.dense_w, vars.dense_b, Activation::Relu)?;
        if let Some(keep) = dropout_keep {
            dense1 = tape.dropout(dense1, keep.to_vec(), self.config.dropout_rate)?;
        }
        let logits = tape.dense(dense1, vars.out_w, vars.out_b, Activation::None)?;
        let loss = tape.softmax_xent(logits, label)?;
        Ok((loss, batch_stats))
    }
}
