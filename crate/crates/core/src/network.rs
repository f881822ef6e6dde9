//! Feed-forward fusion network with a bias-free softmax head.
//!
//! The trunk is `fused_layers` affine + ReLU layers of `fused_units` each
//! (identity when `fused_layers == 0`). The head holds one weight row per
//! leaf category and produces logits `head · f(x)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HCMFLNET";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub fused_layers: usize,
    pub fused_units: usize,
    pub num_leaves: usize,
}

impl NetworkShape {
    /// Dimension of `f(x)`, i.e. of every head row.
    pub fn head_dim(&self) -> usize {
        if self.fused_layers == 0 {
            self.input_dim
        } else {
            self.fused_units
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_leaves == 0 || (self.fused_layers > 0 && self.fused_units == 0) {
            return Err(Error::Invalid(format!("degenerate network shape {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionNetwork {
    shape: NetworkShape,
    seed: u64,
    layers: Vec<DenseLayer>,
    head: Array2<f64>,
}

/// Output of a single forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub features: Array1<f64>,
    pub probs: Array1<f64>,
}

/// Same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
    pub head: Array2<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &FusionNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| DenseLayer { weights: Array2::zeros(l.weights.raw_dim()), bias: Array1::zeros(l.bias.len()) })
                .collect(),
            head: Array2::zeros(net.head.raw_dim()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// Flattened in parameter declaration order.
    pub fn to_vec(&self) -> Vec<f64> {
        self.iter().collect()
    }

    fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .chain(self.head.iter())
            .copied()
    }
}

struct Trace {
    /// activations[k] is the input of layer k; the last entry is f(x).
    activations: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

impl FusionNetwork {
    /// Hidden weights ~ N(0, 1/fan_in), biases and head zero.
    pub fn init(shape: NetworkShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(shape.fused_layers);
        let mut fan_in = shape.input_dim;
        for _ in 0..shape.fused_layers {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            let weights = Array2::from_shape_simple_fn((shape.fused_units, fan_in), || normal.sample(&mut rng));
            layers.push(DenseLayer { weights, bias: Array1::zeros(shape.fused_units) });
            fan_in = shape.fused_units;
        }
        let head = Array2::zeros((shape.num_leaves, shape.head_dim()));
        Ok(Self { shape, seed, layers, head })
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// `num_leaves × head_dim`; row `t` is the weight vector of leaf `t`.
    pub fn head(&self) -> &Array2<f64> {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Array2<f64> {
        &mut self.head
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardPass> {
        let input = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let trace = self.trace(input)?;
        let features = trace.activations.last().expect("at least the input").row(0).to_owned();
        let probs = softmax(trace.logits.row(0));
        Ok(ForwardPass { features, probs })
    }

    /// Class probabilities for each row of `inputs`.
    pub fn predict_proba(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let trace = self.trace(inputs)?;
        let mut probs = trace.logits;
        for mut row in probs.rows_mut() {
            let p = softmax(row.view());
            row.assign(&p);
        }
        Ok(probs)
    }

    fn trace(&self, inputs: ArrayView2<f64>) -> Result<Trace> {
        if inputs.ncols() != self.shape.input_dim {
            return Err(Error::DimensionMismatch { expected: self.shape.input_dim, got: inputs.ncols() });
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let mut activations = vec![inputs.to_owned()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = activations.last().expect("nonempty").dot(&layer.weights.t()) + &layer.bias;
            activations.push(z.mapv(|v| v.max(0.0)));
            pre.push(z);
        }
        let logits = activations.last().expect("nonempty").dot(&self.head.t());
        Ok(Trace { activations, pre, logits })
    }

    /// Mean negative log-likelihood of `labels` under the network.
    pub fn mean_nll(&self, inputs: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
        self.check_labels(inputs.nrows(), labels)?;
        if labels.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let trace = self.trace(inputs)?;
        let total: f64 = trace
            .logits
            .rows()
            .into_iter()
            .zip(labels)
            .map(|(z, &t)| log_sum_exp(z) - z[t])
            .sum();
        Ok(total / labels.len() as f64)
    }

    /// Gradient of the mean NLL over the batch, plus `head_prior_grads` on the
    /// head rows.
    pub fn backward(
        &self,
        inputs: ArrayView2<f64>,
        labels: &[usize],
        head_prior_grads: Option<ArrayView2<f64>>,
    ) -> Result<Gradients> {
        self.backward_weighted(inputs, labels, head_prior_grads, 1.0)
    }

    /// As [`backward`](Self::backward) with the data term multiplied by
    /// `data_weight` (use the dataset size for a summed likelihood).
    pub fn backward_weighted(
        &self,
        inputs: ArrayView2<f64>,
        labels: &[usize],
        head_prior_grads: Option<ArrayView2<f64>>,
        data_weight: f64,
    ) -> Result<Gradients> {
        self.check_labels(inputs.nrows(), labels)?;
        if labels.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let trace = self.trace(inputs)?;
        let scale = data_weight / labels.len() as f64;

        // dL/dlogits = (softmax - onehot) * scale
        let mut delta = trace.logits;
        for (mut row, &t) in delta.rows_mut().into_iter().zip(labels) {
            let p = softmax(row.view());
            row.assign(&p);
            row[t] -= 1.0;
            row *= scale;
        }

        let features = trace.activations.last().expect("nonempty");
        let mut head = delta.t().dot(features);
        if let Some(prior) = head_prior_grads {
            if prior.raw_dim() != head.raw_dim() {
                return Err(Error::DimensionMismatch { expected: head.len(), got: prior.len() });
            }
            head += &prior;
        }

        let mut grad_act = delta.dot(&self.head);
        let mut layers = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate().rev() {
            Zip::from(&mut grad_act).and(&trace.pre[k]).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            let weights = grad_act.t().dot(&trace.activations[k]);
            let bias = grad_act.sum_axis(Axis(0));
            if k > 0 {
                grad_act = grad_act.dot(&layer.weights);
            }
            layers.push(DenseLayer { weights, bias });
        }
        layers.reverse();
        Ok(Gradients { layers, head })
    }

    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Invalid(format!("learning rate must be > 0, got {lr}")));
        }
        if grads.layers.len() != self.layers.len() || grads.head.raw_dim() != self.head.raw_dim() {
            return Err(Error::Inconsistent("gradient layout does not match network".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.scaled_add(-lr, &g.weights);
            layer.bias.scaled_add(-lr, &g.bias);
        }
        self.head.scaled_add(-lr, &grads.head);
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum::<usize>() + self.head.len()
    }

    /// All parameters flattened in declaration order (layer weights, layer
    /// bias, ..., head), row-major.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .chain(self.head.iter())
            .copied()
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::DimensionMismatch { expected: self.num_parameters(), got: params.len() });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = it.next().expect("len checked"));
        }
        self.head.iter_mut().for_each(|p| *p = it.next().expect("len checked"));
        Ok(())
    }

    fn check_labels(&self, rows: usize, labels: &[usize]) -> Result<()> {
        if rows != labels.len() {
            return Err(Error::LengthMismatch(rows, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&t| t >= self.shape.num_leaves) {
            return Err(Error::LabelOutOfRange { label: bad, num_classes: self.shape.num_leaves });
        }
        Ok(())
    }

    /// Binary checkpoint: magic, version (u32), input_dim, fused_layers,
    /// fused_units, num_leaves, seed (u64 each), then every parameter as a
    /// little-endian f64 in declaration order.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let s = &self.shape;
        for v in [s.input_dim, s.fused_layers, s.fused_units, s.num_leaves] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        for p in self.parameters() {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut read_u64 = || -> Result<u64> {
            let mut b8 = [0u8; 8];
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let to_usize = |v: u64| usize::try_from(v).map_err(|_| Error::Checkpoint("dimension overflow".into()));
        let shape = NetworkShape {
            input_dim: to_usize(read_u64()?)?,
            fused_layers: to_usize(read_u64()?)?,
            fused_units: to_usize(read_u64()?)?,
            num_leaves: to_usize(read_u64()?)?,
        };
        let seed = read_u64()?;
        let mut net = Self::init(shape, seed)?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != net.num_parameters() * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                net.num_parameters() * 8,
                bytes.len()
            )));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        net.set_parameters(&params)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_checkpoint(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}

pub fn log_sum_exp(z: ArrayView1<f64>) -> f64 {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(z);
    z.mapv(|v| (v - lse).exp())
}
