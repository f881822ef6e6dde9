//! Cross-platform two-phase training.
//!
//! Phase 1 trains on the source platform. The phase-1 model then scores every
//! target-platform sample by the probability it assigns to the sample's own
//! label, and only the `K` best-ranked samples of each category are kept.
//! Phase 2 continues training the same parameters on the kept samples.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Dataset, InputView, MultiViewSample};
use crate::hier_prior::{EpochLog, HierClassifier, HierPriorConfig, TrainConfig};
use crate::hierarchy::VenueHierarchy;
use crate::metrics::inputs_matrix;
use crate::network::{FusionNetwork, NetworkShape};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterScope {
    /// Rank the samples of each category by `p_m(t_m)` and keep the top K.
    #[default]
    PerCategory,
    /// Keep a sample when its own label is among the K most probable classes
    /// of its predicted distribution.
    PerDistribution,
}

impl std::str::FromStr for FilterScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-category" | "per_category" => Ok(Self::PerCategory),
            "per-distribution" | "per_distribution" => Ok(Self::PerDistribution),
            other => Err(Error::Invalid(format!("unknown filter scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// `None` keeps everything.
    pub k: Option<usize>,
    pub scope: FilterScope,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { k: Some(100), scope: FilterScope::PerCategory }
    }
}

impl FilterConfig {
    pub fn unfiltered() -> Self {
        Self { k: None, scope: FilterScope::PerCategory }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == Some(0) {
            return Err(Error::Invalid("K must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CategoryFilterRow {
    pub category: usize,
    pub total: usize,
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Indices into the scored sample list, ascending.
    pub kept: Vec<usize>,
    pub report: Vec<CategoryFilterRow>,
}

impl FilterOutcome {
    pub fn report_csv(&self, names: Option<&[String]>) -> String {
        let mut out = String::from("category,total,kept,dropped\n");
        for r in &self.report {
            let name = names.and_then(|n| n.get(r.category)).cloned().unwrap_or_else(|| r.category.to_string());
            let _ = writeln!(out, "{name},{},{},{}", r.total, r.kept, r.dropped);
        }
        out
    }
}

/// Top-`k` per category by descending score; ties broken by id, then position.
pub fn select_per_category(ids: &[&str], labels: &[usize], scores: &[f64], num_classes: usize, k: Option<usize>) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &t) in labels.iter().enumerate() {
        by_class[t].push(i);
    }
    let mut kept = Vec::new();
    for mut members in by_class {
        members.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(ids[b])).then(a.cmp(&b)));
        members.truncate(k.unwrap_or(usize::MAX));
        kept.extend(members);
    }
    kept.sort_unstable();
    kept
}

/// Rank of class `t` inside `probs`: the number of classes that beat it,
/// lower index winning ties.
fn rank_within(probs: &[f64], t: usize) -> usize {
    probs
        .iter()
        .enumerate()
        .filter(|&(j, &p)| p > probs[t] || (p == probs[t] && j < t))
        .count()
}

pub fn filter_topk(
    net: &FusionNetwork,
    view: InputView,
    target: &[MultiViewSample],
    cfg: &FilterConfig,
) -> Result<FilterOutcome> {
    cfg.validate()?;
    let num_classes = net.shape().num_leaves;
    if let Some(bad) = target.iter().find(|s| s.label >= num_classes) {
        return Err(Error::LabelOutOfRange { label: bad.label, num_classes });
    }
    let kept = if target.is_empty() {
        Vec::new()
    } else {
        let probs = net.predict_proba(inputs_matrix(target, view)?.view())?;
        let labels: Vec<usize> = target.iter().map(|s| s.label).collect();
        match cfg.scope {
            FilterScope::PerCategory => {
                let ids: Vec<&str> = target.iter().map(|s| s.id.as_str()).collect();
                let scores: Vec<f64> = labels.iter().enumerate().map(|(m, &t)| probs[[m, t]]).collect();
                select_per_category(&ids, &labels, &scores, num_classes, cfg.k)
            }
            FilterScope::PerDistribution => {
                let k = cfg.k.unwrap_or(usize::MAX);
                (0..target.len())
                    .filter(|&m| rank_within(probs.row(m).as_slice().expect("standard layout"), labels[m]) < k)
                    .collect()
            }
        }
    };

    let mut report: Vec<CategoryFilterRow> =
        (0..num_classes).map(|category| CategoryFilterRow { category, total: 0, kept: 0, dropped: 0 }).collect();
    for s in target {
        report[s.label].total += 1;
    }
    for &m in &kept {
        report[target[m].label].kept += 1;
    }
    for r in &mut report {
        r.dropped = r.total - r.kept;
    }
    Ok(FilterOutcome { kept, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub view: InputView,
    pub fused_layers: usize,
    pub fused_units: usize,
    pub init_seed: u64,
    pub phase1: TrainConfig,
    pub phase2: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct TwoPhaseOutcome {
    pub model: HierClassifier,
    pub phase1_model: HierClassifier,
    /// `None` when no target data was supplied.
    pub filter: Option<FilterOutcome>,
    pub phase1_history: Vec<EpochLog>,
    pub phase2_history: Vec<EpochLog>,
}

pub fn labels_of(samples: &[MultiViewSample]) -> Vec<usize> {
    samples.iter().map(|s| s.label).collect()
}

/// Phase 1 on `source`, filter `target`, phase 2 on the kept subset. Phase 2
/// restarts the learning-rate schedule from `plan.phase2`.
pub fn two_phase_train(
    source: &Dataset,
    target: Option<&Dataset>,
    h: &VenueHierarchy,
    plan: &PhasePlan,
    prior: &HierPriorConfig,
    filter: &FilterConfig,
    val: Option<&Dataset>,
) -> Result<TwoPhaseOutcome> {
    if source.is_empty() {
        return Err(Error::Empty("source dataset"));
    }
    let input_dim = source.input_dim(plan.view);
    for other in target.iter().chain(val.iter()) {
        if other.dim_object != source.dim_object || other.dim_scene != source.dim_scene {
            return Err(Error::DimensionMismatch { expected: input_dim, got: other.input_dim(plan.view) });
        }
    }
    let shape = NetworkShape {
        input_dim,
        fused_layers: plan.fused_layers,
        fused_units: plan.fused_units,
        num_leaves: h.num_leaves(),
    };
    let net = FusionNetwork::init(shape, plan.init_seed)?;
    let mut model = HierClassifier::new(net, h.clone(), prior.clone())?;

    let val_x = match val {
        Some(v) if !v.is_empty() => Some((inputs_matrix(&v.samples, plan.view)?, labels_of(&v.samples))),
        _ => None,
    };
    let val_ref = val_x.as_ref().map(|(x, y)| (x.view(), y.as_slice()));

    let x = inputs_matrix(&source.samples, plan.view)?;
    let phase1_history = model.train(x.view(), &labels_of(&source.samples), &plan.phase1, val_ref)?;
    let phase1_model = model.clone();

    let Some(target) = target else {
        return Ok(TwoPhaseOutcome { model, phase1_model, filter: None, phase1_history, phase2_history: Vec::new() });
    };
    let outcome = filter_topk(&model.net, plan.view, &target.samples, filter)?;
    let mut phase2_history = Vec::new();
    if outcome.kept.is_empty() {
        log::warn!("no target samples survived filtering; skipping phase 2");
    } else if plan.phase2.epochs > 0 {
        let kept = target.select(&outcome.kept);
        let x = inputs_matrix(&kept.samples, plan.view)?;
        phase2_history = model.train(x.view(), &labels_of(&kept.samples), &plan.phase2, val_ref)?;
    }
    Ok(TwoPhaseOutcome { model, phase1_model, filter: Some(outcome), phase1_history, phase2_history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Platform;

    fn sample(id: &str, label: usize) -> MultiViewSample {
        MultiViewSample {
            id: id.into(),
            label,
            platform: Platform::Target,
            object_vec: vec![0.0; 2],
            scene_vec: vec![0.0; 2],
            n_frames: 1,
        }
    }

    #[test]
    fn sort_oracle_top_two() {
        let ids = ["a", "b", "c", "d", "e"];
        let scores = [0.3, 0.9, 0.1, 0.7, 0.5];
        let kept = select_per_category(&ids, &[0; 5], &scores, 1, Some(2));
        assert_eq!(kept, vec![1, 3]);
    }

    #[test]
    fn k_exceeding_count_keeps_all() {
        let kept = select_per_category(&["x", "y", "z"], &[1, 1, 1], &[0.1, 0.2, 0.3], 2, Some(100));
        assert_eq!(kept, vec![0, 1, 2]);
        assert_eq!(select_per_category(&["x", "y"], &[0, 1], &[0.1, 0.2], 2, None), vec![0, 1]);
    }

    #[test]
    fn uniform_model_keeps_id_order() {
        let net = FusionNetwork::init(NetworkShape { input_dim: 4, fused_layers: 0, fused_units: 0, num_leaves: 3 }, 0)
            .unwrap();
        let target: Vec<MultiViewSample> =
            ["s4", "s1", "s3", "s0", "s2", "t0"].iter().enumerate().map(|(i, id)| sample(id, if i < 5 { 0 } else { 2 })).collect();
        let cfg = FilterConfig { k: Some(2), scope: FilterScope::PerCategory };
        let out = filter_topk(&net, InputView::Fused, &target, &cfg).unwrap();
        let kept: Vec<&str> = out.kept.iter().map(|&i| target[i].id.as_str()).collect();
        assert_eq!(kept, vec!["s1", "s0", "t0"]);
        assert_eq!(out.report[0], CategoryFilterRow { category: 0, total: 5, kept: 2, dropped: 3 });
        assert_eq!(out.report[1], CategoryFilterRow { category: 1, total: 0, kept: 0, dropped: 0 });
        assert_eq!(out.report_csv(None).lines().nth(1), Some("0,5,2,3"));
    }

    #[test]
    fn per_distribution_rank() {
        assert_eq!(rank_within(&[0.2, 0.5, 0.3], 1), 0);
        assert_eq!(rank_within(&[0.2, 0.5, 0.3], 0), 2);
        assert_eq!(rank_within(&[0.25; 4], 2), 2);
    }

    #[test]
    fn zero_k_rejected() {
        assert!(FilterConfig { k: Some(0), scope: FilterScope::PerCategory }.validate().is_err());
    }
}
