//! Synthetic two-platform, two-view datasets with planted hierarchical class
//! structure.
//!
//! Each view draws its own node means top-down: the root mean is zero and a
//! node's mean is its parent's plus an isotropic Gaussian perturbation whose
//! scale depends on the node's layer. Siblings therefore share more of their
//! mean than cousins. A sample of leaf `t` in view `v` is
//! `sqrt(ρ_v) · μ_v(t) + ε`, `ε ~ N(0, I)`, where `ρ_v` is the view's share of
//! the class signal. Target-platform samples are offset by a fixed vector of
//! norm `domain_shift` and have their labels flipped to a different,
//! uniformly drawn leaf with probability `target_noise_rate`.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Dataset, MultiViewSample, Platform, View};
use crate::hierarchy::VenueHierarchy;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub hierarchy: VenueHierarchy,
    pub dim_per_view: usize,
    pub source_per_leaf: Vec<usize>,
    pub target_per_leaf: Vec<usize>,
    /// Share of the class signal carried by the object and scene views.
    pub view_informativeness: [f64; 2],
    /// Perturbation std for nodes at layer 1, 2, ...; deeper layers reuse the
    /// last entry.
    pub layer_scales: Vec<f64>,
    pub target_noise_rate: f64,
    pub domain_shift: f64,
    /// Draw leaf means independently (no hierarchy) with matching marginal
    /// scale.
    pub misspecified: bool,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let t = self.hierarchy.num_leaves();
        if self.source_per_leaf.len() != t || self.target_per_leaf.len() != t {
            return Err(Error::Invalid(format!("per-leaf counts must have {t} entries")));
        }
        if self.dim_per_view == 0 {
            return Err(Error::Invalid("dim_per_view must be positive".into()));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.target_noise_rate) || !self.view_informativeness.iter().all(|&v| unit(v)) {
            return Err(Error::Invalid("rates must lie in [0, 1]".into()));
        }
        if !(self.domain_shift >= 0.0) || self.layer_scales.is_empty() || self.layer_scales.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Invalid("shift and layer scales must be non-negative".into()));
        }
        if self.target_noise_rate > 0.0 && t < 2 {
            return Err(Error::Invalid("label noise needs at least two leaves".into()));
        }
        Ok(())
    }

    fn scale(&self, layer: usize) -> f64 {
        let i = layer.saturating_sub(1).min(self.layer_scales.len() - 1);
        self.layer_scales[i]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: String,
    pub platform: Platform,
    pub true_label: usize,
    pub observed_label: usize,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub source: Dataset,
    pub target: Dataset,
    pub ground_truth: Vec<GroundTruth>,
    /// Per view, one row per leaf label (before informativeness scaling).
    pub leaf_means: [Array2<f64>; 2],
}

impl SynthData {
    pub fn leaf_mean(&self, view: View, label: usize) -> Array1<f64> {
        let means = match view {
            View::Object => &self.leaf_means[0],
            View::Scene => &self.leaf_means[1],
        };
        means.row(label).to_owned()
    }

    /// Fraction of target samples whose observed label is wrong.
    pub fn target_noise_fraction(&self) -> f64 {
        let target: Vec<&GroundTruth> = self.ground_truth.iter().filter(|g| g.platform == Platform::Target).collect();
        if target.is_empty() {
            return 0.0;
        }
        target.iter().filter(|g| g.true_label != g.observed_label).count() as f64 / target.len() as f64
    }
}

/// Complete tree with `branching[l]` children per node at layer `l`. Node ids
/// are `c<i>`, `c<i>.<j>`, ... so sibling leaves have consecutive labels.
pub fn balanced_hierarchy(branching: &[usize]) -> Result<VenueHierarchy> {
    if branching.is_empty() || branching.contains(&0) {
        return Err(Error::Invalid("branching factors must be positive".into()));
    }
    let mut edges = Vec::new();
    let mut frontier = vec![crate::hierarchy::ROOT.to_string()];
    for &b in branching {
        let mut next = Vec::new();
        for parent in &frontier {
            for i in 0..b {
                let child = if parent == crate::hierarchy::ROOT { format!("c{i}") } else { format!("{parent}.{i}") };
                edges.push((child.clone(), parent.clone()));
                next.push(child);
            }
        }
        frontier = next;
    }
    VenueHierarchy::from_edges(edges)
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(d, || scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let h = &spec.hierarchy;
    let d = spec.dim_per_view;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut order: Vec<_> = h.nodes().collect();
    order.sort_by_key(|&n| (h.layer(n), n));
    let mut node_means = [Array2::zeros((h.len(), d)), Array2::zeros((h.len(), d))];
    let mut leaf_means = [Array2::zeros((h.num_leaves(), d)), Array2::zeros((h.num_leaves(), d))];
    for v in 0..2 {
        for &n in &order {
            let Some(p) = h.parent(n) else { continue };
            let mean = if spec.misspecified {
                let var: f64 = (1..=h.layer(n)).map(|l| spec.scale(l).powi(2)).sum();
                gaussian(&mut rng, d, var.sqrt())
            } else {
                &node_means[v].row(p.index()) + &gaussian(&mut rng, d, spec.scale(h.layer(n)))
            };
            node_means[v].row_mut(n.index()).assign(&mean);
        }
        for (t, &leaf) in h.leaves().iter().enumerate() {
            leaf_means[v].row_mut(t).assign(&node_means[v].row(leaf.index()));
        }
    }
    let shift: [Array1<f64>; 2] = std::array::from_fn(|_| {
        let u = gaussian(&mut rng, d, 1.0);
        let norm = u.dot(&u).sqrt().max(f64::MIN_POSITIVE);
        u * (spec.domain_shift / norm)
    });
    let signal = spec.view_informativeness.map(f64::sqrt);

    let mut ground_truth = Vec::new();
    let mut draw = |rng: &mut ChaCha8Rng, t: usize, platform: Platform, k: usize| {
        let mut views = [Array1::zeros(d), Array1::zeros(d)];
        for v in 0..2 {
            let mut x = &leaf_means[v].row(t) * signal[v] + gaussian(rng, d, 1.0);
            if platform == Platform::Target {
                x += &shift[v];
            }
            views[v] = x;
        }
        let (prefix, n_frames) = match platform {
            Platform::Source => ("src", rng.gen_range(1..=8)),
            Platform::Target => ("tgt", 1),
        };
        let mut observed = t;
        if platform == Platform::Target && rng.gen::<f64>() < spec.target_noise_rate {
            let other = rng.gen_range(0..h.num_leaves() - 1);
            observed = if other >= t { other + 1 } else { other };
        }
        let id = format!("{prefix}-{k:06}");
        ground_truth.push(GroundTruth { id: id.clone(), platform, true_label: t, observed_label: observed });
        let [object_vec, scene_vec] = views.map(|a| a.to_vec());
        MultiViewSample { id, label: observed, platform, object_vec, scene_vec, n_frames }
    };

    let mut source = Vec::new();
    for (t, &count) in spec.source_per_leaf.iter().enumerate() {
        for _ in 0..count {
            let k = source.len();
            source.push(draw(&mut rng, t, Platform::Source, k));
        }
    }
    let mut target = Vec::new();
    for (t, &count) in spec.target_per_leaf.iter().enumerate() {
        for _ in 0..count {
            let k = target.len();
            target.push(draw(&mut rng, t, Platform::Target, k));
        }
    }
    Ok(SynthData {
        source: Dataset { dim_object: d, dim_scene: d, samples: source },
        target: Dataset { dim_object: d, dim_scene: d, samples: target },
        ground_truth,
        leaf_means,
    })
}
