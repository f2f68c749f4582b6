//! From-scratch feedforward networks over spectrogram frames: dense
//! layers in three input topologies, sigmoid outputs over the 128-note
//! space, binary cross-entropy loss and exact backpropagation, trained
//! with minibatch SGD plus momentum.
//!
//! Model A maps one spectrogram frame straight through a dense stack.
//! Model B flattens a context window of frames into one wide input.
//! Model C pushes each frame of the window through a shared dense layer
//! first, then concatenates the per-frame features into a dense head.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::matrix::Matrix;
use crate::mnpm::NUM_NOTES;

const MAGIC: &[u8; 8] = b"MNET0001";
const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("empty dataset")]
    EmptyInput,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub model: ModelKind,
    pub input_bins: usize,
    /// Frame-window width; model A is fixed at 1.
    pub context: usize,
    /// Hidden widths. For model C the first entry is the shared
    /// per-frame layer width and the rest form the head.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_bins == 0 {
            return Err(NnError::Config("input_bins must be > 0".into()));
        }
        if self.hidden.contains(&0) {
            return Err(NnError::Config("zero-width hidden layer".into()));
        }
        match self.model {
            ModelKind::A => {
                if self.context != 1 {
                    return Err(NnError::Config(format!(
                        "model A requires context 1, got {}",
                        self.context
                    )));
                }
            }
            ModelKind::B | ModelKind::C => {
                if self.context < 3 || self.context % 2 == 0 {
                    return Err(NnError::Config(format!(
                        "models B and C require odd context >= 3, got {}",
                        self.context
                    )));
                }
            }
        }
        if self.model == ModelKind::C && self.hidden.is_empty() {
            return Err(NnError::Config(
                "model C needs at least the shared layer width".into(),
            ));
        }
        Ok(())
    }

    /// Width of one input row: bins for model A, context * bins for B
    /// and C.
    pub fn input_width(&self) -> usize {
        self.input_bins * self.context
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DenseLayer {
    /// out x in, row-major: row j holds the weights of output unit j.
    weights: Matrix,
    biases: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    /// activations = act(X W^T + b), parallel over batch rows.
    fn forward(&self, input: &Matrix) -> Matrix {
        let out_dim = self.out_dim();
        let mut out = Matrix::zeros(input.rows(), out_dim);
        out.data_mut()
            .par_chunks_mut(out_dim)
            .zip(input.data().par_chunks(self.in_dim()))
            .for_each(|(out_row, x)| {
                for (j, out) in out_row.iter_mut().enumerate() {
                    let w = self.weights.row(j);
                    let z: f64 = self.biases[j]
                        + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    *out = self.activation.apply(z);
                }
            });
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Topology {
    Stack(Vec<DenseLayer>),
    SharedFrame {
        shared: DenseLayer,
        head: Vec<DenseLayer>,
    },
}

/// A trained (or trainable) feedforward network; the final layer is
/// always a 128-unit sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    topology: Topology,
}

/// Per-parameter gradients (or momentum velocities), in the same layer
/// order as the network's parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    layers: Vec<(Matrix, Vec<f64>)>,
}

/// Glorot-uniform initialization from the given seed; biases start at
/// zero. Identical seeds give identical parameters.
pub fn init_network(cfg: &NetworkConfig, seed: u64) -> Result<Network, NnError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make_layer = |fan_in: usize, fan_out: usize, act: Activation| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        DenseLayer {
            weights: Matrix::from_vec(fan_out, fan_in, data),
            biases: vec![0.0; fan_out],
            activation: act,
        }
    };

    let topology = match cfg.model {
        ModelKind::A | ModelKind::B => {
            let mut dims = vec![cfg.input_width()];
            dims.extend(&cfg.hidden);
            dims.push(NUM_NOTES);
            let layers = (0..dims.len() - 1)
                .map(|i| {
                    let act = if i == dims.len() - 2 {
                        Activation::Sigmoid
                    } else {
                        cfg.activation
                    };
                    make_layer(dims[i], dims[i + 1], act)
                })
                .collect();
            Topology::Stack(layers)
        }
        ModelKind::C => {
            let shared_width = cfg.hidden[0];
            let shared = make_layer(cfg.input_bins, shared_width, cfg.activation);
            let mut dims = vec![cfg.context * shared_width];
            dims.extend(&cfg.hidden[1..]);
            dims.push(NUM_NOTES);
            let head = (0..dims.len() - 1)
                .map(|i| {
                    let act = if i == dims.len() - 2 {
                        Activation::Sigmoid
                    } else {
                        cfg.activation
                    };
                    make_layer(dims[i], dims[i + 1], act)
                })
                .collect();
            Topology::SharedFrame { shared, head }
        }
    };
    Ok(Network {
        config: cfg.clone(),
        topology,
    })
}

impl Network {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn check_input(&self, batch: &Matrix) -> Result<(), NnError> {
        if batch.cols() != self.config.input_width() {
            return Err(NnError::Shape(format!(
                "input width {} does not match network input width {}",
                batch.cols(),
                self.config.input_width()
            )));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<&DenseLayer> {
        match &self.topology {
            Topology::Stack(layers) => layers.iter().collect(),
            Topology::SharedFrame { shared, head } => {
                let mut v = vec![shared];
                v.extend(head.iter());
                v
            }
        }
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        match &mut self.topology {
            Topology::Stack(layers) => layers.iter_mut().collect(),
            Topology::SharedFrame { shared, head } => {
                let mut v = vec![shared];
                v.extend(head.iter_mut());
                v
            }
        }
    }

    /// All parameters flattened in layer order (weights row-major, then
    /// biases, per layer).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in self.layers() {
            out.extend_from_slice(layer.weights.data());
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let mut pos = 0;
        for layer in self.layers_mut() {
            let w = layer.weights.data_mut();
            w.copy_from_slice(&params[pos..pos + w.len()]);
            pos += w.len();
            let n = layer.biases.len();
            layer.biases.copy_from_slice(&params[pos..pos + n]);
            pos += n;
        }
        assert_eq!(pos, params.len(), "parameter count mismatch");
    }

    /// Shared-frame input expansion for model C: each row's `context`
    /// chunks pass through the shared layer and are re-concatenated.
    fn shared_forward(&self, shared: &DenseLayer, batch: &Matrix) -> Matrix {
        let context = self.config.context;
        let bins = self.config.input_bins;
        let width = shared.out_dim();
        let mut out = Matrix::zeros(batch.rows(), context * width);
        out.data_mut()
            .par_chunks_mut(context * width)
            .zip(batch.data().par_chunks(context * bins))
            .for_each(|(out_row, in_row)| {
                for c in 0..context {
                    let x = &in_row[c * bins..(c + 1) * bins];
                    let dst = &mut out_row[c * width..(c + 1) * width];
                    for (j, out) in dst.iter_mut().enumerate() {
                        let w = shared.weights.row(j);
                        let z: f64 = shared.biases[j]
                            + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                        *out = shared.activation.apply(z);
                    }
                }
            });
        out
    }

    /// Batch forward pass: one (0,1)-valued 128-vector per input row.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix, NnError> {
        Ok(self.forward_trace(batch)?.pop().unwrap())
    }

    /// Forward pass keeping every layer's post-activations. The first
    /// entry is the (possibly shared-expanded) stack input, the last is
    /// the network output.
    fn forward_trace(&self, batch: &Matrix) -> Result<Vec<Matrix>, NnError> {
        self.check_input(batch)?;
        let (stack_input, stack): (Matrix, &[DenseLayer]) = match &self.topology {
            Topology::Stack(layers) => (batch.clone(), layers),
            Topology::SharedFrame { shared, head } => {
                (self.shared_forward(shared, batch), head)
            }
        };
        let mut acts = vec![stack_input];
        for layer in stack {
            let next = layer.forward(acts.last().unwrap());
            acts.push(next);
        }
        Ok(acts)
    }

    /// Loss and exact parameter gradients of [`bce_loss`] on a batch.
    pub fn backward(
        &self,
        batch: &Matrix,
        targets: &Matrix,
    ) -> Result<(f64, Gradients), NnError> {
        self.check_input(batch)?;
        if targets.rows() != batch.rows() || targets.cols() != NUM_NOTES {
            return Err(NnError::Shape(format!(
                "targets {}x{} do not match batch {}x{}",
                targets.rows(),
                targets.cols(),
                batch.rows(),
                NUM_NOTES
            )));
        }
        let acts = self.forward_trace(batch)?;
        let output = acts.last().unwrap();
        let loss = bce_loss(output, targets)?;

        let batch_n = batch.rows();
        let scale = 1.0 / (batch_n as f64 * NUM_NOTES as f64);

        // sigmoid + BCE collapse to (p - t) at the output pre-activation
        let mut delta = Matrix::zeros(batch_n, NUM_NOTES);
        for ((d, p), t) in delta
            .data_mut()
            .iter_mut()
            .zip(output.data())
            .zip(targets.data())
        {
            *d = (p - t) * scale;
        }

        let stack: &[DenseLayer] = match &self.topology {
            Topology::Stack(layers) => layers,
            Topology::SharedFrame { head, .. } => head,
        };

        let mut stack_grads: Vec<(Matrix, Vec<f64>)> = Vec::with_capacity(stack.len());
        for l in (0..stack.len()).rev() {
            let layer = &stack[l];
            let input = &acts[l];
            stack_grads.push(layer_param_grads(layer, input, &delta));
            if l > 0 {
                // the input came out of stack[l-1], so its activation
                // derivative belongs to that layer
                delta = propagate_delta(layer, input, &delta, Some(stack[l - 1].activation));
            } else if matches!(self.topology, Topology::SharedFrame { .. }) {
                // the shared fold below applies its own derivative
                delta = propagate_delta(layer, input, &delta, None);
            }
        }
        stack_grads.reverse();

        let layers = match &self.topology {
            Topology::Stack(_) => stack_grads,
            Topology::SharedFrame { shared, .. } => {
                // delta now sits on the concatenated shared outputs;
                // fold the per-frame chunks back through the one shared
                // layer, accumulating over all context positions
                let context = self.config.context;
                let bins = self.config.input_bins;
                let width = shared.out_dim();
                let shared_out = &acts[0];

                let mut gw = Matrix::zeros(width, bins);
                let mut gb = vec![0.0; width];
                for b in 0..batch_n {
                    let d_row = delta.row(b);
                    let a_row = shared_out.row(b);
                    let x_row = batch.row(b);
                    for c in 0..context {
                        for j in 0..width {
                            let a = a_row[c * width + j];
                            let dz = d_row[c * width + j]
                                * shared.activation.derivative_from_output(a);
                            if dz != 0.0 {
                                gb[j] += dz;
                                let g = gw.row_mut(j);
                                let x = &x_row[c * bins..(c + 1) * bins];
                                for (gv, xv) in g.iter_mut().zip(x) {
                                    *gv += dz * xv;
                                }
                            }
                        }
                    }
                }
                let mut all = vec![(gw, gb)];
                all.extend(stack_grads);
                all
            }
        };
        Ok((loss, Gradients { layers }))
    }
}

/// Parameter gradients of one dense layer given its input activations
/// and the delta at its pre-activation.
fn layer_param_grads(layer: &DenseLayer, input: &Matrix, delta: &Matrix) -> (Matrix, Vec<f64>) {
    let out_dim = layer.out_dim();
    let in_dim = layer.in_dim();
    let mut gw = Matrix::zeros(out_dim, in_dim);
    let mut gb = vec![0.0; out_dim];
    gw.data_mut()
        .par_chunks_mut(in_dim)
        .zip(gb.par_iter_mut())
        .enumerate()
        .for_each(|(j, (g_row, g_bias))| {
            for b in 0..input.rows() {
                let d = delta.get(b, j);
                if d != 0.0 {
                    *g_bias += d;
                    for (g, x) in g_row.iter_mut().zip(input.row(b)) {
                        *g += d * x;
                    }
                }
            }
        });
    (gw, gb)
}

/// Delta at the layer's input: (delta W), times the producing layer's
/// activation derivative when one is given.
fn propagate_delta(
    layer: &DenseLayer,
    prev_output: &Matrix,
    delta: &Matrix,
    prev_activation: Option<Activation>,
) -> Matrix {
    let in_dim = layer.in_dim();
    let out_dim = layer.out_dim();
    let mut prev = Matrix::zeros(delta.rows(), in_dim);
    prev.data_mut()
        .par_chunks_mut(in_dim)
        .enumerate()
        .for_each(|(b, row)| {
            let d_row = delta.row(b);
            for (j, &d) in d_row.iter().enumerate().take(out_dim) {
                if d != 0.0 {
                    for (acc, w) in row.iter_mut().zip(layer.weights.row(j)) {
                        *acc += d * w;
                    }
                }
            }
            if let Some(act) = prev_activation {
                for (acc, a) in row.iter_mut().zip(prev_output.row(b)) {
                    *acc *= act.derivative_from_output(*a);
                }
            }
        });
    prev
}

/// Mean binary cross-entropy over all entries; predictions are clamped
/// to [1e-7, 1 - 1e-7] first.
pub fn bce_loss(pred: &Matrix, target: &Matrix) -> Result<f64, NnError> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(NnError::Shape(format!(
            "prediction {}x{} vs target {}x{}",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    let n = pred.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        // zero is permitted as an explicit null update
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(NnError::Config("learning_rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NnError::Config("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("batch_size must be > 0".into()));
        }
        if !(0.0 < self.validation_fraction && self.validation_fraction < 1.0) {
            return Err(NnError::Config(
                "validation_fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            validation_fraction: 0.2,
        }
    }
}

/// Frame-level training data: row i of `inputs` pairs with row i of
/// `targets`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self, NnError> {
        if inputs.rows() != targets.rows() {
            return Err(NnError::Shape(format!(
                "{} input rows vs {} target rows",
                inputs.rows(),
                targets.rows()
            )));
        }
        if targets.cols() != NUM_NOTES {
            return Err(NnError::Shape(format!(
                "targets must have {} columns, got {}",
                NUM_NOTES,
                targets.cols()
            )));
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Minibatch SGD with momentum; owns the velocity state so momentum
/// carries across epochs.
pub struct Trainer {
    cfg: TrainConfig,
    velocity: Vec<(Matrix, Vec<f64>)>,
}

impl Trainer {
    pub fn new(net: &Network, cfg: TrainConfig) -> Result<Self, NnError> {
        cfg.validate()?;
        let velocity = net
            .layers()
            .iter()
            .map(|l| {
                (
                    Matrix::zeros(l.out_dim(), l.in_dim()),
                    vec![0.0; l.out_dim()],
                )
            })
            .collect();
        Ok(Trainer { cfg, velocity })
    }

    /// One pass over the dataset in a freshly shuffled order; returns
    /// the mean training loss. Parameters update in place.
    pub fn train_epoch(
        &mut self,
        net: &mut Network,
        data: &Dataset,
        rng: &mut impl Rng,
    ) -> Result<f64, NnError> {
        if data.is_empty() {
            return Err(NnError::EmptyInput);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);

        let width = data.inputs.cols();
        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let mut x = Matrix::zeros(chunk.len(), width);
            let mut y = Matrix::zeros(chunk.len(), NUM_NOTES);
            for (row, &idx) in chunk.iter().enumerate() {
                x.row_mut(row).copy_from_slice(data.inputs.row(idx));
                y.row_mut(row).copy_from_slice(data.targets.row(idx));
            }
            let (loss, grads) = net.backward(&x, &y)?;
            loss_sum += loss * chunk.len() as f64;

            let lr = self.cfg.learning_rate;
            let momentum = self.cfg.momentum;
            for (layer, ((vw, vb), (gw, gb))) in net
                .layers_mut()
                .into_iter()
                .zip(self.velocity.iter_mut().zip(&grads.layers))
            {
                for (v, g) in vw.data_mut().iter_mut().zip(gw.data()) {
                    *v = momentum * *v - lr * g;
                }
                for (w, v) in layer.weights.data_mut().iter_mut().zip(vw.data()) {
                    *w += v;
                }
                for (v, g) in vb.iter_mut().zip(gb) {
                    *v = momentum * *v - lr * g;
                }
                for (b, v) in layer.biases.iter_mut().zip(vb.iter()) {
                    *b += v;
                }
            }
        }
        Ok(loss_sum / data.len() as f64)
    }
}

impl Gradients {
    /// Flattened in the same order as [`Network::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }
}

fn model_tag(m: ModelKind) -> u8 {
    match m {
        ModelKind::A => 0,
        ModelKind::B => 1,
        ModelKind::C => 2,
    }
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Sigmoid => 1,
        Activation::Tanh => 2,
    }
}

/// Checkpoint layout: magic, model and activation tags, input_bins,
/// context, hidden widths, then per layer its dimensions and f64
/// little-endian parameters.
pub fn save_checkpoint(net: &Network, path: &Path) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    let cfg = &net.config;
    w.write_all(MAGIC)?;
    w.write_all(&[model_tag(cfg.model), activation_tag(cfg.activation)])?;
    w.write_all(&(cfg.input_bins as u32).to_le_bytes())?;
    w.write_all(&(cfg.context as u32).to_le_bytes())?;
    w.write_all(&(cfg.hidden.len() as u32).to_le_bytes())?;
    for &h in &cfg.hidden {
        w.write_all(&(h as u32).to_le_bytes())?;
    }
    let layers = net.layers();
    w.write_all(&(layers.len() as u32).to_le_bytes())?;
    for layer in layers {
        w.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
        w.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
        for &v in layer.weights.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        for &v in &layer.biases {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct ByteReader {
    bytes: Vec<u8>,
    pos: usize,
}

impl ByteReader {
    fn take(&mut self, n: usize) -> Result<&[u8], NnError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Format("checkpoint is truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Network, NnError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = ByteReader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(NnError::Format("bad checkpoint magic".into()));
    }
    let model = match r.take(1)?[0] {
        0 => ModelKind::A,
        1 => ModelKind::B,
        2 => ModelKind::C,
        t => return Err(NnError::Format(format!("unknown model tag {}", t))),
    };
    let activation = match r.take(1)?[0] {
        0 => Activation::Relu,
        1 => Activation::Sigmoid,
        2 => Activation::Tanh,
        t => return Err(NnError::Format(format!("unknown activation tag {}", t))),
    };
    let input_bins = r.u32()? as usize;
    let context = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(r.u32()? as usize);
    }
    let cfg = NetworkConfig {
        model,
        input_bins,
        context,
        hidden,
        activation,
    };
    cfg.validate().map_err(|e| NnError::Format(e.to_string()))?;

    // rebuild the expected shape, then overwrite parameters from the file
    let mut net = init_network(&cfg, 0)?;
    let n_layers = r.u32()? as usize;
    {
        let mut layers = net.layers_mut();
        if n_layers != layers.len() {
            return Err(NnError::Format(format!(
                "{} layers in file, config implies {}",
                n_layers,
                layers.len()
            )));
        }
        for layer in layers.iter_mut() {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            if rows != layer.out_dim() || cols != layer.in_dim() {
                return Err(NnError::Format(format!(
                    "layer is {}x{} in file but {}x{} per config",
                    rows,
                    cols,
                    layer.out_dim(),
                    layer.in_dim()
                )));
            }
            for v in layer.weights.data_mut() {
                *v = r.f64()?;
            }
            for v in layer.biases.iter_mut() {
                *v = r.f64()?;
            }
        }
    }
    if r.pos != r.bytes.len() {
        return Err(NnError::Format("trailing bytes in checkpoint".into()));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(model: ModelKind) -> NetworkConfig {
        match model {
            ModelKind::A => NetworkConfig {
                model,
                input_bins: 12,
                context: 1,
                hidden: vec![9, 7],
                activation: Activation::Relu,
            },
            ModelKind::B => NetworkConfig {
                model,
                input_bins: 6,
                context: 3,
                hidden: vec![10],
                activation: Activation::Tanh,
            },
            ModelKind::C => NetworkConfig {
                model,
                input_bins: 6,
                context: 3,
                hidden: vec![5, 8],
                activation: Activation::Sigmoid,
            },
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    fn random_targets(rng: &mut ChaCha8Rng, rows: usize) -> Matrix {
        Matrix::from_vec(
            rows,
            NUM_NOTES,
            (0..rows * NUM_NOTES)
                .map(|_| if rng.gen_bool(0.1) { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    /// Central finite differences over every parameter.
    fn finite_difference_check(cfg: &NetworkConfig, seed: u64) {
        let mut net = init_network(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let batch = random_batch(&mut rng, 4, cfg.input_width());
        let targets = random_targets(&mut rng, 4);

        let (_, grads) = net.backward(&batch, &targets).unwrap();
        let analytic = grads.flat();
        let base = net.flat_params();
        assert_eq!(analytic.len(), base.len());

        let h = 1e-5;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            net.set_flat_params(&plus);
            let loss_plus = bce_loss(&net.forward(&batch).unwrap(), &targets).unwrap();

            let mut minus = base.clone();
            minus[i] -= h;
            net.set_flat_params(&minus);
            let loss_minus = bce_loss(&net.forward(&batch).unwrap(), &targets).unwrap();

            let numeric = (loss_plus - loss_minus) / (2.0 * h);
            let denom = numeric.abs().max(analytic[i].abs()).max(1e-8);
            let rel = (numeric - analytic[i]).abs() / denom;
            assert!(
                rel < 1e-4,
                "param {}: analytic {} vs numeric {} (rel {})",
                i,
                analytic[i],
                numeric,
                rel
            );
        }
        net.set_flat_params(&base);
    }

    #[test]
    fn gradients_match_finite_differences_model_a() {
        finite_difference_check(&small_cfg(ModelKind::A), 10);
    }

    #[test]
    fn gradients_match_finite_differences_model_b() {
        finite_difference_check(&small_cfg(ModelKind::B), 20);
    }

    #[test]
    fn gradients_match_finite_differences_model_c() {
        finite_difference_check(&small_cfg(ModelKind::C), 30);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = small_cfg(ModelKind::A);
        let a = init_network(&cfg, 7).unwrap();
        let b = init_network(&cfg, 7).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        let c = init_network(&cfg, 8).unwrap();
        assert_ne!(a.flat_params(), c.flat_params());

        for layer in a.layers() {
            let bound = (6.0 / (layer.in_dim() + layer.out_dim()) as f64).sqrt();
            assert!(layer
                .weights
                .data()
                .iter()
                .all(|w| w.abs() <= bound));
            assert!(layer.biases.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn zero_network_outputs_half() {
        let cfg = small_cfg(ModelKind::A);
        let mut net = init_network(&cfg, 1).unwrap();
        let zeros = vec![0.0; net.flat_params().len()];
        net.set_flat_params(&zeros);
        let out = net
            .forward(&Matrix::zeros(3, cfg.input_width()))
            .unwrap();
        assert_eq!(out.rows(), 3);
        assert_eq!(out.cols(), NUM_NOTES);
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_is_pure_and_shape_checked() {
        let cfg = small_cfg(ModelKind::B);
        let net = init_network(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = random_batch(&mut rng, 5, cfg.input_width());
        let a = net.forward(&batch).unwrap();
        let b = net.forward(&batch).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));

        let bad = Matrix::zeros(5, cfg.input_width() + 1);
        assert!(matches!(net.forward(&bad), Err(NnError::Shape(_))));
    }

    #[test]
    fn bce_closed_forms() {
        let half = Matrix::zeros(2, 4).map(|_| 0.5);
        let target = Matrix::from_vec(2, 4, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let loss = bce_loss(&half, &target).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);

        // perfect prediction after clamping
        let loss = bce_loss(&target, &target).unwrap();
        assert!(loss <= -(1.0 - BCE_EPS).ln() + 1e-12);

        // label-flip symmetry
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pred = Matrix::from_vec(3, 5, (0..15).map(|_| rng.gen_range(0.01..0.99)).collect());
        let t = Matrix::from_vec(
            3,
            5,
            (0..15).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect(),
        );
        let flipped_pred = pred.map(|v| 1.0 - v);
        let flipped_t = t.map(|v| 1.0 - v);
        let a = bce_loss(&pred, &t).unwrap();
        let b = bce_loss(&flipped_pred, &flipped_t).unwrap();
        assert!((a - b).abs() < 1e-12);

        assert!(bce_loss(&pred, &Matrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn output_bias_gradient_closed_form_on_zero_net() {
        let cfg = small_cfg(ModelKind::A);
        let mut net = init_network(&cfg, 1).unwrap();
        let zeros = vec![0.0; net.flat_params().len()];
        net.set_flat_params(&zeros);

        let batch = Matrix::zeros(4, cfg.input_width());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let targets = random_targets(&mut rng, 4);
        let (_, grads) = net.backward(&batch, &targets).unwrap();

        // with all-zero input and weights, hidden gradients vanish and
        // the output bias gradient is the mean output delta
        // (p - t) / (batch * outputs) summed over the batch
        let n_layers = grads.layers.len();
        for (w, _) in &grads.layers[..n_layers - 1] {
            assert!(w.data().iter().all(|&g| g == 0.0));
        }
        let (ref gw_out, ref gb_out) = grads.layers[n_layers - 1];
        assert!(gw_out.data().iter().all(|&g| g == 0.0));
        for (j, &g) in gb_out.iter().enumerate() {
            let mean_t: f64 =
                (0..4).map(|b| targets.get(b, j)).sum::<f64>() / 4.0;
            let expected = (0.5 - mean_t) / NUM_NOTES as f64;
            assert!((g - expected).abs() < 1e-12, "bias {}: {} vs {}", j, g, expected);
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_item_gradients() {
        let cfg = small_cfg(ModelKind::A);
        let net = init_network(&cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batch = random_batch(&mut rng, 3, cfg.input_width());
        let targets = random_targets(&mut rng, 3);

        let (_, whole) = net.backward(&batch, &targets).unwrap();
        let whole = whole.flat();

        let mut summed = vec![0.0; whole.len()];
        for b in 0..3 {
            let x = batch.slice_rows(b, b + 1);
            let y = targets.slice_rows(b, b + 1);
            let (_, g) = net.backward(&x, &y).unwrap();
            for (acc, v) in summed.iter_mut().zip(g.flat()) {
                *acc += v / 3.0;
            }
        }
        for (a, b) in whole.iter().zip(&summed) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = small_cfg(ModelKind::A);
        let mut net = init_network(&cfg, 2).unwrap();
        let before = net.flat_params();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Dataset::new(
            random_batch(&mut rng, 10, cfg.input_width()),
            random_targets(&mut rng, 10),
        )
        .unwrap();
        let null = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&net, null).unwrap();
        trainer
            .train_epoch(&mut net, &data, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        assert_eq!(net.flat_params(), before);
    }

    #[test]
    fn tiny_overfit_converges() {
        let cfg = NetworkConfig {
            model: ModelKind::A,
            input_bins: 16,
            context: 1,
            hidden: vec![16],
            activation: Activation::Relu,
        };
        let mut net = init_network(&cfg, 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let x = random_batch(&mut rng, 1, 16);
        let mut y = Matrix::zeros(1, NUM_NOTES);
        y.set(0, 60, 1.0);
        y.set(0, 64, 1.0);
        let data = Dataset::new(x, y).unwrap();

        let train_cfg = TrainConfig {
            learning_rate: 0.5,
            momentum: 0.9,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&net, train_cfg).unwrap();
        let mut loss = f64::INFINITY;
        for _ in 0..200 {
            loss = trainer
                .train_epoch(&mut net, &data, &mut rng)
                .unwrap();
        }
        assert!(loss < 0.01, "final loss {}", loss);
    }

    #[test]
    fn loss_strictly_decreases_early() {
        let cfg = NetworkConfig {
            model: ModelKind::A,
            input_bins: 16,
            context: 1,
            hidden: vec![16],
            activation: Activation::Relu,
        };
        let mut net = init_network(&cfg, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_batch(&mut rng, 1, 16);
        let mut y = Matrix::zeros(1, NUM_NOTES);
        y.set(0, 69, 1.0);
        let data = Dataset::new(x, y).unwrap();

        let train_cfg = TrainConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&net, train_cfg).unwrap();
        let mut last = f64::INFINITY;
        for epoch in 0..10 {
            let loss = trainer.train_epoch(&mut net, &data, &mut rng).unwrap();
            assert!(loss < last, "epoch {}: {} !< {}", epoch, loss, last);
            last = loss;
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = small_cfg(ModelKind::A);
        let run = || {
            let mut net = init_network(&cfg, 9).unwrap();
            let mut data_rng = ChaCha8Rng::seed_from_u64(10);
            let data = Dataset::new(
                random_batch(&mut data_rng, 30, cfg.input_width()),
                random_targets(&mut data_rng, 30),
            )
            .unwrap();
            let mut trainer = Trainer::new(&net, TrainConfig::default()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut losses = Vec::new();
            for _ in 0..3 {
                losses.push(trainer.train_epoch(&mut net, &data, &mut rng).unwrap());
            }
            (net.flat_params(), losses)
        };
        let (params_a, losses_a) = run();
        let (params_b, losses_b) = run();
        assert_eq!(params_a, params_b);
        assert_eq!(losses_a, losses_b);
    }

    #[test]
    fn empty_dataset_rejected() {
        let cfg = small_cfg(ModelKind::A);
        let mut net = init_network(&cfg, 1).unwrap();
        let data = Dataset::new(
            Matrix::zeros(0, cfg.input_width()),
            Matrix::zeros(0, NUM_NOTES),
        )
        .unwrap();
        let mut trainer = Trainer::new(&net, TrainConfig::default()).unwrap();
        assert!(matches!(
            trainer.train_epoch(&mut net, &data, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(NnError::EmptyInput)
        ));
    }

    #[test]
    fn checkpoint_round_trip_all_models() {
        let dir = tempfile::tempdir().unwrap();
        for (i, model) in [ModelKind::A, ModelKind::B, ModelKind::C]
            .into_iter()
            .enumerate()
        {
            let cfg = small_cfg(model);
            let net = init_network(&cfg, 50 + i as u64).unwrap();
            let path = dir.path().join(format!("net{}.ckpt", i));
            save_checkpoint(&net, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back.config(), net.config());
            assert_eq!(back.flat_params(), net.flat_params());

            let mut rng = ChaCha8Rng::seed_from_u64(60);
            let batch = random_batch(&mut rng, 4, cfg.input_width());
            assert_eq!(
                net.forward(&batch).unwrap(),
                back.forward(&batch).unwrap()
            );
        }
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(ModelKind::A);
        let net = init_network(&cfg, 1).unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&net, &path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let mut truncated = bytes.clone();
        truncated.truncate(bytes.len() - 9);
        std::fs::write(&path, &truncated).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(NnError::Format(_))));

        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(NnError::Format(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg(ModelKind::A);
        cfg.context = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg(ModelKind::B);
        cfg.context = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg(ModelKind::C);
        cfg.hidden.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg(ModelKind::A);
        cfg.hidden = vec![8, 0];
        assert!(init_network(&cfg, 0).is_err());
    }
}
