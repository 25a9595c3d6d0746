//! Landmark-sequence classifier: stacked LSTM layers, dropout on the final
//! hidden state, then a two-layer dense head with softmax over the gesture
//! classes.
//!
//! Cell formulation (gate order i, f, g, o):
//!   i = sigmoid(W_i x + U_i h + b_i)
//!   f = sigmoid(W_f x + U_f h + b_f)
//!   g = tanh   (W_g x + U_g h + b_g)
//!   o = sigmoid(W_o x + U_o h + b_o)
//!   c_t = f * c_prev + i * g
//!   h_t = o * tanh(c_t)

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::dense::{self, sigmoid, Activation};
use crate::ops::dropout;
use crate::ops::norm::Mode;
use crate::rng::Rng;
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmConfig {
    pub input_size: usize,
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub dense_size: usize,
    pub num_classes: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            input_size: 63,
            hidden_sizes: vec![64, 128],
            dropout_rate: 0.3,
            dense_size: 64,
            num_classes: 36,
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(Error::InvalidConfig("lstm input_size must be >= 1".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "lstm hidden_sizes must be non-empty positive ints, got {:?}",
                self.hidden_sizes
            )));
        }
        if self.dense_size == 0 {
            return Err(Error::InvalidConfig("lstm dense_size must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "lstm num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        dropout::validate_rate(self.dropout_rate)
    }
}

/// One layer's weights: `w` is `[4h, in]`, `u` is `[4h, h]`, `b` is `[4h]`,
/// rows ordered by gate (i, f, g, o) blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub layers: Vec<LayerParams>,
    pub dense_w: Tensor,
    pub dense_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmModel {
    pub config: LstmConfig,
    pub params: LstmParams,
}

/// Tape handles for every parameter tensor, in `named_params` order.
pub struct LstmVars {
    pub layers: Vec<(Var, Var, Var)>,
    pub dense_w: Var,
    pub dense_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

/// `sum over layers of 4h(in + h + 1)` plus the dense head.
pub fn lstm_param_count(config: &LstmConfig) -> usize {
    let mut total = 0;
    let mut input = config.input_size;
    for &h in &config.hidden_sizes {
        total += 4 * h * (input + h + 1);
        input = h;
    }
    let last = *config.hidden_sizes.last().expect("validated non-empty");
    total += last * config.dense_size + config.dense_size;
    total += config.dense_size * config.num_classes + config.num_classes;
    total
}

fn init_matrix(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

impl LstmModel {
    /// Seeded initialization: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per
    /// matrix, biases zero except the forget-gate slice at 1.0.
    pub fn init(config: LstmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from(seed);
        let mut layers = Vec::new();
        let mut input = config.input_size;
        for &h in &config.hidden_sizes {
            let w = init_matrix(&[4 * h, input], input, &mut rng);
            let u = init_matrix(&[4 * h, h], h, &mut rng);
            let mut b = Tensor::zeros(&[4 * h]);
            for v in &mut b.data_mut()[h..2 * h] {
                *v = 1.0;
            }
            layers.push(LayerParams { w, u, b });
            input = h;
        }
        let last = *config.hidden_sizes.last().expect("non-empty");
        let dense_w = init_matrix(&[last, config.dense_size], last, &mut rng);
        let dense_b = Tensor::zeros(&[config.dense_size]);
        let out_w = init_matrix(
            &[config.dense_size, config.num_classes],
            config.dense_size,
            &mut rng,
        );
        let out_b = Tensor::zeros(&[config.num_classes]);
        Ok(LstmModel {
            config,
            params: LstmParams {
                layers,
                dense_w,
                dense_b,
                out_w,
                out_b,
            },
        })
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Parameter tensors in canonical (checkpoint) order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.params.layers.iter().enumerate() {
            out.push((format!("lstm.{i}.w"), &layer.w));
            out.push((format!("lstm.{i}.u"), &layer.u));
            out.push((format!("lstm.{i}.b"), &layer.b));
        }
        out.push(("head.dense.w".to_string(), &self.params.dense_w));
        out.push(("head.dense.b".to_string(), &self.params.dense_b));
        out.push(("head.out.w".to_string(), &self.params.out_w));
        out.push(("head.out.b".to_string(), &self.params.out_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.params.layers {
            out.push(&mut layer.w);
            out.push(&mut layer.u);
            out.push(&mut layer.b);
        }
        out.push(&mut self.params.dense_w);
        out.push(&mut self.params.dense_b);
        out.push(&mut self.params.out_w);
        out.push(&mut self.params.out_b);
        out
    }

    /// Rebuild from named tensors (checkpoint load). Names and shapes must
    /// match the canonical layout exactly.
    pub fn from_named(config: LstmConfig, tensors: &[(String, Tensor)]) -> Result<Self> {
        config.validate()?;
        let mut model = LstmModel::init(config, 0)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .named_params()
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect();
        if tensors.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "lstm expects {} tensors, got {}",
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
        for (slot, (_, got)) in model.params_mut().into_iter().zip(tensors) {
            *slot = got.clone();
        }
        Ok(model)
    }

    /// One cell step. `x` has `input` width for the layer, `h_prev` and
    /// `c_prev` have the layer's hidden width.
    pub fn cell_step(
        layer: &LayerParams,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let h = h_prev.len();
        let input = x.len();
        debug_assert_eq!(layer.w.shape(), &[4 * h, input]);
        debug_assert_eq!(layer.u.shape(), &[4 * h, h]);
        let wd = layer.w.data();
        let ud = layer.u.data();
        let bd = layer.b.data();
        let mut pre = vec![0.0; 4 * h];
        for (r, p) in pre.iter_mut().enumerate() {
            let wx: f64 = wd[r * input..(r + 1) * input]
                .iter()
                .zip(x)
                .map(|(&a, &b)| a * b)
                .sum();
            let uh: f64 = ud[r * h..(r + 1) * h]
                .iter()
                .zip(h_prev)
                .map(|(&a, &b)| a * b)
                .sum();
            // Same association as the taped graph: (Wx + Uh) + b.
            *p = (wx + uh) + bd[r];
        }
        let mut h_t = vec![0.0; h];
        let mut c_t = vec![0.0; h];
        for k in 0..h {
            let i = sigmoid(pre[k]);
            let f = sigmoid(pre[h + k]);
            let g = pre[2 * h + k].tanh();
            let o = sigmoid(pre[3 * h + k]);
            c_t[k] = f * c_prev[k] + i * g;
            h_t[k] = o * c_t[k].tanh();
        }
        (h_t, c_t)
    }

    fn check_seq(&self, seq: &Tensor) -> Result<usize> {
        if seq.rank() != 2 {
            return Err(Error::InvalidConfig(format!(
                "lstm input must be a [T, features] matrix, got {:?}",
                seq.shape()
            )));
        }
        let (t_len, width) = (seq.shape()[0], seq.shape()[1]);
        if t_len == 0 {
            return Err(Error::EmptySequence);
        }
        if width != self.config.input_size {
            return Err(Error::DimMismatch {
                op: "lstm_forward",
                axis: "features",
                expected: self.config.input_size,
                got: width,
            });
        }
        Ok(t_len)
    }

    /// Run every layer over all T steps and return the final hidden state of
    /// the top layer.
    fn final_hidden(&self, seq: &Tensor) -> Result<Vec<f64>> {
        let t_len = self.check_seq(seq)?;
        let width = self.config.input_size;
        let mut inputs: Vec<Vec<f64>> = (0..t_len)
            .map(|t| seq.data()[t * width..(t + 1) * width].to_vec())
            .collect();
        for (li, layer) in self.params.layers.iter().enumerate() {
            let h = self.config.hidden_sizes[li];
            let mut h_state = vec![0.0; h];
            let mut c_state = vec![0.0; h];
            let mut outputs = Vec::with_capacity(t_len);
            for x in &inputs {
                let (h_t, c_t) = Self::cell_step(layer, x, &h_state, &c_state);
                h_state = h_t;
                c_state = c_t;
                outputs.push(h_state.clone());
            }
            inputs = outputs;
        }
        Ok(inputs.pop().expect("t_len >= 1"))
    }

    fn head(&self, hidden: Vec<f64>, mode: Mode, rng: Option<&mut Rng>) -> Result<Tensor> {
        let mut hidden = Tensor::new(vec![hidden.len()], hidden)?;
        if mode == Mode::Train {
            let rng = rng.ok_or_else(|| {
                Error::InvalidConfig("train-mode forward needs a dropout generator".into())
            })?;
            hidden = dropout::dropout(&hidden, self.config.dropout_rate, Mode::Train, rng)?;
        }
        let dense1 = dense::dense(
            &hidden,
            &self.params.dense_w,
            &self.params.dense_b,
            Activation::Relu,
        )?;
        let logits = dense::dense(
            &dense1,
            &self.params.out_w,
            &self.params.out_b,
            Activation::None,
        )?;
        Tensor::new(vec![self.config.num_classes], dense::softmax(logits.data()))
    }

    /// Inference-mode class probabilities for a `[T, input_size]` sequence.
    pub fn infer(&self, seq: &Tensor) -> Result<Tensor> {
        let hidden = self.final_hidden(seq)?;
        self.head(hidden, Mode::Infer, None)
    }

    /// Train-mode forward (dropout active, drawn from `rng`).
    pub fn forward_train(&self, seq: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        let hidden = self.final_hidden(seq)?;
        self.head(hidden, Mode::Train, Some(rng))
    }

    /// Record parameters on a tape; the returned flat list is in
    /// `named_params` order.
    pub fn tape_params(&self, tape: &mut GradTape) -> (LstmVars, Vec<Var>) {
        let mut flat = Vec::new();
        let mut layers = Vec::new();
        for layer in &self.params.layers {
            let w = tape.param(layer.w.clone());
            let u = tape.param(layer.u.clone());
            let b = tape.param(layer.b.clone());
            layers.push((w, u, b));
            flat.extend([w, u, b]);
        }
        let dense_w = tape.param(self.params.dense_w.clone());
        let dense_b = tape.param(self.params.dense_b.clone());
        let out_w = tape.param(self.params.out_w.clone());
        let out_b = tape.param(self.params.out_b.clone());
        flat.extend([dense_w, dense_b, out_w, out_b]);
        (
            LstmVars {
                layers,
                dense_w,
                dense_b,
                out_w,
                out_b,
            },
            flat,
        )
    }

    /// Build the full BPTT loss graph for one sequence. `dropout_keep` of
    /// `None` runs the head without dropout (inference-mode graph, used by
    /// gradient checks); `Some(mask)` applies the fixed keep mask.
    pub fn build_loss(
        &self,
        tape: &mut GradTape,
        vars: &LstmVars,
        seq: &Tensor,
        label: usize,
        dropout_keep: Option<&[bool]>,
    ) -> Result<Var> {
        let t_len = self.check_seq(seq)?;
        if label >= self.config.num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.config.num_classes,
            });
        }
        let width = self.config.input_size;
        let mut inputs: Vec<Var> = (0..t_len)
            .map(|t| {
                let frame = seq.data()[t * width..(t + 1) * width].to_vec();
                Tensor::new(vec![width], frame).map(|f| tape.input(f))
            })
            .collect::<Result<_>>()?;

        for (li, &(w, u, b)) in vars.layers.iter().enumerate() {
            let h = self.config.hidden_sizes[li];
            let mut h_state = tape.input(Tensor::zeros(&[h]));
            let mut c_state = tape.input(Tensor::zeros(&[h]));
            let mut outputs = Vec::with_capacity(t_len);
            for &x in &inputs {
                let wx = tape.matvec(w, x)?;
                let uh = tape.matvec(u, h_state)?;
                let lin = tape.add(wx, uh)?;
                let pre = tape.add(lin, b)?;
                let i_pre = tape.slice(pre, 0, h)?;
                let f_pre = tape.slice(pre, h, h)?;
                let g_pre = tape.slice(pre, 2 * h, h)?;
                let o_pre = tape.slice(pre, 3 * h, h)?;
                let i_gate = tape.sigmoid(i_pre);
                let f_gate = tape.sigmoid(f_pre);
                let g_gate = tape.tanh(g_pre);
                let o_gate = tape.sigmoid(o_pre);
                let keep = tape.mul(f_gate, c_state)?;
                let write = tape.mul(i_gate, g_gate)?;
                c_state = tape.add(keep, write)?;
                let c_tanh = tape.tanh(c_state);
                h_state = tape.mul(o_gate, c_tanh)?;
                outputs.push(h_state);
            }
            inputs = outputs;
        }

        let mut hidden = *inputs.last().expect("t_len >= 1");
        if let Some(keep) = dropout_keep {
            hidden = tape.dropout(hidden, keep.to_vec(), self.config.dropout_rate)?;
        }
        let dense1 = tape.dense(hidden, vars.dense_w, vars.dense_b, Activation::Relu)?;
        let logits = tape.dense(dense1, vars.out_w, vars.out_b, Activation::None)?;
        tape.softmax_xent(logits, label)
    }
}
