//! Tree-structured Gaussian prior over softmax-head weights and its
//! alternating MAP optimizer.
//!
//! Every node `n` of the venue tree owns a weight vector `β_n`; leaves are the
//! rows of the network head, internal nodes live in [`HeadState`], and the
//! root is pinned to zero. The objective is
//!
//! ```text
//! L(β, w) = data(w, β_T) + Σ_{n ≠ root} λ_{l(π(n))}/2 · ‖β_n − β_{π(n)}‖²
//! ```
//!
//! where `data` is the mean (or, optionally, summed) negative log-likelihood.
//! Training alternates (i) SGD over the network and leaf rows with the
//! internal nodes fixed and (ii) an exact minimization over the internal
//! nodes, done by Gauss-Seidel sweeps of the per-node stationarity solution
//!
//! ```text
//! β_n = (λ_{l(n)} Σ_{c∈C_n} β_c + λ_{l(π(n))} β_{π(n)}) / (|C_n| λ_{l(n)} + λ_{l(π(n))})
//! ```

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{NodeId, VenueHierarchy};
use crate::metrics::{argmax, evaluate};
use crate::network::FusionNetwork;

/// How the likelihood enters the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataTerm {
    /// Average over samples; λ acts per sample.
    #[default]
    Mean,
    /// Literal sum over samples.
    Sum,
}

/// When step (ii) runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InternalSchedule {
    #[default]
    PerEpoch,
    PerBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierPriorConfig {
    /// Precision per parent layer; layers past the end reuse the last value.
    pub lambdas: Vec<f64>,
    pub sweep_tol: f64,
    pub max_sweeps: usize,
    pub data_term: DataTerm,
    pub schedule: InternalSchedule,
}

impl Default for HierPriorConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![1.0, 5.0, 10.0],
            sweep_tol: 1e-8,
            max_sweeps: 100,
            data_term: DataTerm::Mean,
            schedule: InternalSchedule::PerEpoch,
        }
    }
}

impl HierPriorConfig {
    pub fn lambda(&self, layer: usize) -> f64 {
        let i = layer.min(self.lambdas.len().saturating_sub(1));
        self.lambdas.get(i).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() {
            return Err(Error::Invalid("at least one λ is required".into()));
        }
        if let Some(bad) = self.lambdas.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(Error::Invalid(format!("λ must be positive and finite, got {bad}")));
        }
        if !(self.sweep_tol > 0.0) {
            return Err(Error::Invalid("sweep_tol must be positive".into()));
        }
        Ok(())
    }

    fn edge_lambda(&self, h: &VenueHierarchy, child: NodeId) -> f64 {
        let parent = h.parent(child).expect("edge has a parent");
        self.lambda(h.layer(parent))
    }
}

/// One weight vector per hierarchy node, root fixed at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadState {
    betas: Array2<f64>,
}

impl HeadState {
    pub fn zeros(h: &VenueHierarchy, dim: usize) -> Self {
        Self { betas: Array2::zeros((h.len(), dim)) }
    }

    /// Rows indexed by [`NodeId::index`]; the root row must be zero.
    pub fn from_rows(h: &VenueHierarchy, betas: Array2<f64>) -> Result<Self> {
        if betas.nrows() != h.len() {
            return Err(Error::DimensionMismatch { expected: h.len(), got: betas.nrows() });
        }
        if betas.row(h.root().index()).iter().any(|&v| v != 0.0) {
            return Err(Error::Inconsistent("root beta must be zero".into()));
        }
        Ok(Self { betas })
    }

    /// Leaves copied from the network head, internal nodes zero.
    pub fn from_network(h: &VenueHierarchy, net: &FusionNetwork) -> Result<Self> {
        let mut s = Self::zeros(h, net.shape().head_dim());
        s.sync_leaves(h, net)?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.betas.ncols()
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.betas
    }

    pub fn beta(&self, n: NodeId) -> ArrayView1<'_, f64> {
        self.betas.row(n.index())
    }

    pub fn set_beta(&mut self, h: &VenueHierarchy, n: NodeId, v: ArrayView1<f64>) -> Result<()> {
        if n == h.root() {
            return Err(Error::Invalid("the root beta is fixed at zero".into()));
        }
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        self.betas.row_mut(n.index()).assign(&v);
        Ok(())
    }

    fn check(&self, h: &VenueHierarchy) -> Result<()> {
        if self.betas.nrows() != h.len() {
            return Err(Error::Inconsistent(format!(
                "state has {} nodes, hierarchy has {}",
                self.betas.nrows(),
                h.len()
            )));
        }
        Ok(())
    }

    pub fn sync_leaves(&mut self, h: &VenueHierarchy, net: &FusionNetwork) -> Result<()> {
        self.check(h)?;
        let head = net.head();
        if head.nrows() != h.num_leaves() || head.ncols() != self.dim() {
            return Err(Error::Inconsistent("network head does not match the hierarchy leaves".into()));
        }
        for (t, &leaf) in h.leaves().iter().enumerate() {
            self.betas.row_mut(leaf.index()).assign(&head.row(t));
        }
        Ok(())
    }

    pub fn check_mirror(&self, h: &VenueHierarchy, net: &FusionNetwork) -> Result<()> {
        self.check(h)?;
        let head = net.head();
        if head.nrows() != h.num_leaves() || head.ncols() != self.dim() {
            return Err(Error::Inconsistent("network head does not match the hierarchy leaves".into()));
        }
        for (t, &leaf) in h.leaves().iter().enumerate() {
            if self.betas.row(leaf.index()) != head.row(t) {
                return Err(Error::Inconsistent(format!("leaf `{}` differs from head row {t}", h.name(leaf))));
            }
        }
        Ok(())
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn prior_penalty(state: &HeadState, h: &VenueHierarchy, cfg: &HierPriorConfig) -> Result<f64> {
    state.check(h)?;
    Ok(h.nodes()
        .filter_map(|n| h.parent(n).map(|p| (n, p)))
        .map(|(n, p)| 0.5 * cfg.edge_lambda(h, n) * sq_dist(state.beta(n), state.beta(p)))
        .sum())
}

/// `λ_{l(π(n))} (β_n − β_{π(n)})`
pub fn leaf_prior_gradient(
    state: &HeadState,
    h: &VenueHierarchy,
    cfg: &HierPriorConfig,
    n: NodeId,
) -> Result<Array1<f64>> {
    state.check(h)?;
    if !h.is_leaf(n) {
        return Err(Error::NotALeaf(h.name(n).to_string()));
    }
    let p = h.parent(n).ok_or_else(|| Error::NotALeaf(h.name(n).to_string()))?;
    Ok((&state.beta(n) - &state.beta(p)) * cfg.edge_lambda(h, n))
}

/// Prior gradient for every head row, laid out like the network head.
pub fn leaf_prior_gradients(state: &HeadState, h: &VenueHierarchy, cfg: &HierPriorConfig) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((h.num_leaves(), state.dim()));
    for (t, &leaf) in h.leaves().iter().enumerate() {
        out.row_mut(t).assign(&leaf_prior_gradient(state, h, cfg, leaf)?);
    }
    Ok(out)
}

/// Gradient of the penalty with respect to an internal node's beta.
pub fn internal_gradient(state: &HeadState, h: &VenueHierarchy, cfg: &HierPriorConfig, n: NodeId) -> Array1<f64> {
    let own = state.beta(n);
    let lam_down = cfg.lambda(h.layer(n));
    let mut g = Array1::zeros(state.dim());
    for &c in h.children(n) {
        g.scaled_add(-lam_down, &(&state.beta(c) - &own));
    }
    if let Some(p) = h.parent(n) {
        g.scaled_add(cfg.edge_lambda(h, n), &(&own - &state.beta(p)));
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepReport {
    pub sweeps: usize,
    pub max_change: f64,
    pub converged: bool,
}

/// One deepest-first pass of closed-form coordinate updates over the
/// non-root internal nodes. Returns the largest elementwise change.
pub fn internal_sweep(state: &mut HeadState, h: &VenueHierarchy, cfg: &HierPriorConfig) -> f64 {
    let mut max_change: f64 = 0.0;
    let root = h.root();
    for n in h.internal_nodes() {
        if n == root {
            continue;
        }
        let lam_down = cfg.lambda(h.layer(n));
        let lam_up = cfg.edge_lambda(h, n);
        let parent = h.parent(n).expect("non-root");
        let mut num = state.beta(parent).to_owned() * lam_up;
        for &c in h.children(n) {
            num.scaled_add(lam_down, &state.beta(c));
        }
        num /= h.children(n).len() as f64 * lam_down + lam_up;
        let change = num.iter().zip(state.beta(n).iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        max_change = max_change.max(change);
        state.betas.row_mut(n.index()).assign(&num);
    }
    max_change
}

/// Step (ii): sweep until the largest change drops below `sweep_tol` or
/// `max_sweeps` is reached. Leaves and root are never touched.
pub fn update_internal(state: &mut HeadState, h: &VenueHierarchy, cfg: &HierPriorConfig) -> Result<SweepReport> {
    state.check(h)?;
    let mut report = SweepReport { sweeps: 0, max_change: 0.0, converged: true };
    if h.internal_nodes().len() <= 1 {
        return Ok(report);
    }
    report.converged = false;
    while report.sweeps < cfg.max_sweeps {
        report.max_change = internal_sweep(state, h, cfg);
        report.sweeps += 1;
        if report.max_change < cfg.sweep_tol {
            report.converged = true;
            break;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub prior: f64,
    pub total: f64,
}

/// Objective value; `state` leaf rows must mirror the network head.
pub fn total_loss(
    net: &FusionNetwork,
    state: &HeadState,
    inputs: ArrayView2<f64>,
    labels: &[usize],
    h: &VenueHierarchy,
    cfg: &HierPriorConfig,
) -> Result<LossBreakdown> {
    state.check_mirror(h, net)?;
    let mean = net.mean_nll(inputs, labels)?;
    let data = match cfg.data_term {
        DataTerm::Mean => mean,
        DataTerm::Sum => mean * labels.len() as f64,
    };
    let prior = prior_penalty(state, h, cfg)?;
    Ok(LossBreakdown { data, prior, total: data + prior })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 32, learning_rate: 0.01, lr_decay: 0.5, decay_every: 10, seed: 0 }
    }
}

impl TrainConfig {
    /// Learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = epoch.checked_div(self.decay_every).unwrap_or(0);
        self.learning_rate * self.lr_decay.powi(steps as i32)
    }
}

/// Seeded mini-batch order, shared by every trainer that must reproduce the
/// same batches.
pub struct BatchSchedule {
    rng: ChaCha8Rng,
    batch_size: usize,
}

impl BatchSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(cfg.seed), batch_size: cfg.batch_size }
    }

    pub fn next_epoch(&mut self, m: usize) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..m).collect();
        if self.batch_size == 0 || self.batch_size >= m {
            return vec![idx];
        }
        idx.shuffle(&mut self.rng);
        idx.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Loss components after an epoch (epoch 0 is the initial state).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub data_loss: f64,
    pub prior_penalty: f64,
    pub total_loss: f64,
    pub macro_f1_val: Option<f64>,
    pub micro_f1_val: Option<f64>,
}

pub fn training_log_csv(history: &[EpochLog]) -> String {
    let mut out = String::from("epoch,data_loss,prior_penalty,total_loss,macro_f1_val,micro_f1_val\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for e in history {
        let _ = writeln!(
            out,
            "{},{:.9},{:.9},{:.9},{},{}",
            e.epoch,
            e.data_loss,
            e.prior_penalty,
            e.total_loss,
            opt(e.macro_f1_val),
            opt(e.micro_f1_val)
        );
    }
    out
}

/// A fusion network together with the hierarchy its head is tied to.
#[derive(Debug, Clone, PartialEq)]
pub struct HierClassifier {
    pub net: FusionNetwork,
    pub state: HeadState,
    pub hierarchy: VenueHierarchy,
    pub prior: HierPriorConfig,
}

impl HierClassifier {
    /// Internal betas start at their optimum given the current leaves.
    pub fn new(net: FusionNetwork, hierarchy: VenueHierarchy, prior: HierPriorConfig) -> Result<Self> {
        prior.validate()?;
        if net.shape().num_leaves != hierarchy.num_leaves() {
            return Err(Error::Inconsistent(format!(
                "network has {} classes, hierarchy has {} leaves",
                net.shape().num_leaves,
                hierarchy.num_leaves()
            )));
        }
        let mut state = HeadState::from_network(&hierarchy, &net)?;
        update_internal(&mut state, &hierarchy, &prior)?;
        Ok(Self { net, state, hierarchy, prior })
    }

    pub fn loss(&self, inputs: ArrayView2<f64>, labels: &[usize]) -> Result<LossBreakdown> {
        total_loss(&self.net, &self.state, inputs, labels, &self.hierarchy, &self.prior)
    }

    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Vec<usize>> {
        let probs = self.net.predict_proba(inputs)?;
        Ok(probs.rows().into_iter().map(argmax).collect())
    }

    fn log_entry(
        &self,
        epoch: usize,
        inputs: ArrayView2<f64>,
        labels: &[usize],
        val: Option<(ArrayView2<f64>, &[usize])>,
    ) -> Result<EpochLog> {
        let loss = self.loss(inputs, labels)?;
        let (macro_f1_val, micro_f1_val) = match val {
            Some((x, y)) if !y.is_empty() => {
                let r = evaluate(&self.predict(x)?, y, self.hierarchy.num_leaves())?;
                (Some(r.macro_f1), Some(r.micro_f1))
            }
            _ => (None, None),
        };
        Ok(EpochLog {
            epoch,
            data_loss: loss.data,
            prior_penalty: loss.prior,
            total_loss: loss.total,
            macro_f1_val,
            micro_f1_val,
        })
    }

    /// Alternating optimization: per mini-batch an SGD step on the network
    /// and leaf rows (prior gradient added to the head), then step (ii) over
    /// the internal nodes. Returns one log entry per epoch, preceded by the
    /// initial state.
    pub fn train(
        &mut self,
        inputs: ArrayView2<f64>,
        labels: &[usize],
        cfg: &TrainConfig,
        val: Option<(ArrayView2<f64>, &[usize])>,
    ) -> Result<Vec<EpochLog>> {
        if labels.is_empty() {
            return Err(Error::Empty("training data"));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::LengthMismatch(inputs.nrows(), labels.len()));
        }
        let num_classes = self.hierarchy.num_leaves();
        if let Some(&bad) = labels.iter().find(|&&t| t >= num_classes) {
            return Err(Error::LabelOutOfRange { label: bad, num_classes });
        }
        let data_weight = match self.prior.data_term {
            DataTerm::Mean => 1.0,
            DataTerm::Sum => labels.len() as f64,
        };
        let mut schedule = BatchSchedule::new(cfg);
        let mut history = vec![self.log_entry(0, inputs, labels, val)?];
        for epoch in 0..cfg.epochs {
            let lr = cfg.lr_at(epoch);
            for batch in schedule.next_epoch(labels.len()) {
                let x = inputs.select(Axis(0), &batch);
                let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let prior = leaf_prior_gradients(&self.state, &self.hierarchy, &self.prior)?;
                let grads = self.net.backward_weighted(x.view(), &y, Some(prior.view()), data_weight)?;
                self.net.sgd_step(&grads, lr)?;
                self.state.sync_leaves(&self.hierarchy, &self.net)?;
                if self.prior.schedule == InternalSchedule::PerBatch {
                    update_internal(&mut self.state, &self.hierarchy, &self.prior)?;
                }
            }
            let report = update_internal(&mut self.state, &self.hierarchy, &self.prior)?;
            if !report.converged {
                log::debug!("epoch {}: internal sweeps stopped at max change {:.3e}", epoch + 1, report.max_change);
            }
            history.push(self.log_entry(epoch + 1, inputs, labels, val)?);
        }
        Ok(history)
    }
}

/// Train `net` under the hierarchical prior from scratch.
pub fn fit(
    net: FusionNetwork,
    inputs: ArrayView2<f64>,
    labels: &[usize],
    h: &VenueHierarchy,
    cfg: &HierPriorConfig,
    train: &TrainConfig,
) -> Result<(HierClassifier, Vec<EpochLog>)> {
    let mut model = HierClassifier::new(net, h.clone(), cfg.clone())?;
    let history = model.train(inputs, labels, train, None)?;
    Ok((model, history))
}
