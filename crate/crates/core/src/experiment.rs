//! Seeded experiment runner shared by the `ablation` subcommand and the
//! acceptance suite.
//!
//! One run draws a synthetic instance, splits the source platform into
//! train/val/test, trains one method and scores it on the held-out videos.
//! Every run is seeded from a single `u64`, so a report depends only on the
//! configuration and the base seed.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cptdl::{two_phase_train, FilterConfig, FilterScope, PhasePlan};
use crate::error::{Error, Result};
use crate::features::{Dataset, InputView};
use crate::hier_prior::{DataTerm, HierPriorConfig, InternalSchedule, TrainConfig};
use crate::hierarchy::VenueHierarchy;
use crate::metrics::{comparison_markdown, evaluate, inputs_matrix};
use crate::synth::{balanced_hierarchy, generate, SynthData, SynthSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle cut 80/10/10. Each part keeps ascending index order.
pub fn split_indices(n: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let mut parts = [idx[..n_train].to_vec(), idx[n_train..n_train + n_val].to_vec(), idx[n_train + n_val..].to_vec()];
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train, val, test] = parts;
    Split { train, val, test }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Children per node at each layer; the product is the number of leaves.
    pub branching: Vec<usize>,
    pub dim_per_view: usize,
    pub source_per_leaf: usize,
    /// Leaf labels that get only `rare_count` source samples.
    pub rare_leaves: Vec<usize>,
    pub rare_count: usize,
    /// Extra i.i.d. source samples per leaf reserved as a balanced test set.
    /// When positive, the remaining source videos are cut 90/10 into
    /// train/val instead of 80/10/10.
    pub holdout_per_leaf: usize,
    pub target_per_leaf: usize,
    pub view_informativeness: [f64; 2],
    pub layer_scales: Vec<f64>,
    pub target_noise_rate: f64,
    pub domain_shift: f64,
    pub misspecified: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            branching: vec![3, 2, 2],
            dim_per_view: 16,
            source_per_leaf: 40,
            rare_leaves: Vec::new(),
            rare_count: 4,
            holdout_per_leaf: 0,
            target_per_leaf: 60,
            view_informativeness: [0.5, 0.5],
            layer_scales: vec![2.0, 1.0, 0.5],
            target_noise_rate: 0.4,
            domain_shift: 0.0,
            misspecified: false,
        }
    }
}

impl SynthConfig {
    pub fn hierarchy(&self) -> Result<VenueHierarchy> {
        balanced_hierarchy(&self.branching)
    }

    pub fn train_count(&self, leaf: usize) -> usize {
        if self.rare_leaves.contains(&leaf) {
            self.rare_count
        } else {
            self.source_per_leaf
        }
    }

    pub fn spec(&self, seed: u64) -> Result<SynthSpec> {
        let hierarchy = self.hierarchy()?;
        let t = hierarchy.num_leaves();
        Ok(SynthSpec {
            dim_per_view: self.dim_per_view,
            source_per_leaf: (0..t).map(|l| self.train_count(l) + self.holdout_per_leaf).collect(),
            target_per_leaf: vec![self.target_per_leaf; t],
            view_informativeness: self.view_informativeness,
            layer_scales: self.layer_scales.clone(),
            target_noise_rate: self.target_noise_rate,
            domain_shift: self.domain_shift,
            misspecified: self.misspecified,
            seed,
            hierarchy,
        })
    }
}

/// `Option<usize>` written as an integer or the string `"inf"`.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(usize),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(k) => Repr::Finite(*k),
            None => Repr::Word("inf".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(k) => Ok(Some(k)),
            Repr::Word(w) if w == "inf" || w == "all" => Ok(None),
            Repr::Word(w) => Err(serde::de::Error::custom(format!("expected an integer or \"inf\", got `{w}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub fused_layers: usize,
    pub fused_units: usize,
    pub lambdas: Vec<f64>,
    pub data_term: DataTerm,
    pub schedule: InternalSchedule,
    /// Hierarchy depth kept by the hierarchical prior; `None` keeps all.
    #[serde(with = "unbounded")]
    pub hier_layers: Option<usize>,
    /// Per-category budget; `None` keeps every target sample.
    #[serde(with = "unbounded")]
    pub topk: Option<usize>,
    pub filter_scope: FilterScope,
    pub phase1: TrainConfig,
    pub phase2: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let phase = TrainConfig { epochs: 40, batch_size: 32, learning_rate: 0.002, lr_decay: 0.5, decay_every: 10, seed: 0 };
        Self {
            fused_layers: 1,
            fused_units: 32,
            lambdas: HierPriorConfig::default().lambdas,
            data_term: DataTerm::Sum,
            schedule: InternalSchedule::PerEpoch,
            hier_layers: None,
            topk: Some(20),
            filter_scope: FilterScope::PerCategory,
            phase1: phase.clone(),
            phase2: TrainConfig { epochs: 20, learning_rate: 0.0005, ..phase },
        }
    }
}

impl ModelConfig {
    pub fn prior(&self) -> HierPriorConfig {
        HierPriorConfig {
            lambdas: self.lambdas.clone(),
            data_term: self.data_term,
            schedule: self.schedule,
            ..HierPriorConfig::default()
        }
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig { k: self.topk, scope: self.filter_scope }
    }

    /// The hierarchy the prior is tied to: the full tree cut to
    /// `hier_layers`, or a flat tree when `hierarchical` is false.
    pub fn prior_hierarchy(&self, h: &VenueHierarchy, hierarchical: bool) -> VenueHierarchy {
        match (hierarchical, self.hier_layers) {
            (false, _) => h.truncate(0),
            (true, Some(depth)) => h.truncate(depth),
            (true, None) => h.clone(),
        }
    }

    pub fn plan(&self, view: InputView, seed: u64) -> PhasePlan {
        PhasePlan {
            view,
            fused_layers: self.fused_layers,
            fused_units: self.fused_units,
            init_seed: seed,
            phase1: TrainConfig { seed, ..self.phase1.clone() },
            phase2: TrainConfig { seed: seed.wrapping_add(1), ..self.phase2.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Independent runs per method; run `r` uses seed `seed + r`.
    pub runs: usize,
    pub synth: SynthConfig,
    pub model: ModelConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { seed: 7, runs: 3, synth: SynthConfig::default(), model: ModelConfig::default() }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Invalid(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// How a method uses the target platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetUse {
    /// Source videos only.
    Ignore,
    /// Phase 2 on every target sample.
    All,
    /// Phase 2 on the top-K filtered target samples.
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MethodSpec {
    pub name: String,
    pub view: InputView,
    pub target: TargetUse,
    pub hierarchical: bool,
}

impl MethodSpec {
    pub fn new(name: &str, view: InputView, target: TargetUse, hierarchical: bool) -> Self {
        Self { name: name.to_string(), view, target, hierarchical }
    }
}

/// Video-O, CPTDL-O, Video-S, CPTDL-S, MVFL, HCM-FL.
pub fn ablation_methods() -> Vec<MethodSpec> {
    use InputView::*;
    use TargetUse::*;
    vec![
        MethodSpec::new("Video-O", Object, Ignore, false),
        MethodSpec::new("CPTDL-O", Object, Filtered, false),
        MethodSpec::new("Video-S", Scene, Ignore, false),
        MethodSpec::new("CPTDL-S", Scene, Filtered, false),
        MethodSpec::new("MVFL", Fused, Filtered, false),
        MethodSpec::new("HCM-FL", Fused, Filtered, true),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub method: String,
    pub seed: u64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub target_total: usize,
    pub target_kept: usize,
    /// Fraction of wrong observed labels among the target samples offered
    /// to phase 2, before and after filtering.
    pub noise_before: Option<f64>,
    pub noise_after: Option<f64>,
}

/// Source partitions for one run.
#[derive(Debug, Clone)]
pub struct SourceSplit {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn split_source(data: &SynthData, cfg: &SynthConfig, seed: u64) -> Result<SourceSplit> {
    let source = &data.source;
    if cfg.holdout_per_leaf == 0 {
        let s = split_indices(source.len(), seed);
        return Ok(SourceSplit { train: source.select(&s.train), val: source.select(&s.val), test: source.select(&s.test) });
    }
    let t = cfg.hierarchy()?.num_leaves();
    let mut pool = Vec::new();
    let mut test = Vec::new();
    let mut start = 0;
    for leaf in 0..t {
        let n = cfg.train_count(leaf);
        pool.extend(start..start + n);
        test.extend(start + n..start + n + cfg.holdout_per_leaf);
        start += n + cfg.holdout_per_leaf;
    }
    let mut shuffled = pool;
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = shuffled.len() / 10;
    let (val, train) = shuffled.split_at(n_val);
    let (mut train, mut val) = (train.to_vec(), val.to_vec());
    train.sort_unstable();
    val.sort_unstable();
    Ok(SourceSplit { train: source.select(&train), val: source.select(&val), test: source.select(&test) })
}

fn noise_rate(ds: &Dataset, idx: &[usize], truth: &HashMap<&str, usize>) -> Option<f64> {
    if idx.is_empty() {
        return None;
    }
    let wrong = idx.iter().filter(|&&i| truth.get(ds.samples[i].id.as_str()) != Some(&ds.samples[i].label)).count();
    Some(wrong as f64 / idx.len() as f64)
}

/// Train and score one method on an already generated instance.
pub fn run_on(
    data: &SynthData,
    split: &SourceSplit,
    h: &VenueHierarchy,
    method: &MethodSpec,
    model: &ModelConfig,
    seed: u64,
) -> Result<RunResult> {
    let prior_h = model.prior_hierarchy(h, method.hierarchical);
    let filter = match method.target {
        TargetUse::Filtered => model.filter(),
        _ => FilterConfig::unfiltered(),
    };
    let target = (method.target != TargetUse::Ignore).then_some(&data.target);
    let plan = model.plan(method.view, seed);
    let out = two_phase_train(&split.train, target, &prior_h, &plan, &model.prior(), &filter, Some(&split.val))?;

    let x = inputs_matrix(&split.test.samples, method.view)?;
    let truths: Vec<usize> = split.test.samples.iter().map(|s| s.label).collect();
    let report = evaluate(&out.model.predict(x.view())?, &truths, h.num_leaves())?;

    let truth: HashMap<&str, usize> = data.ground_truth.iter().map(|g| (g.id.as_str(), g.true_label)).collect();
    let (target_total, target_kept, noise_before, noise_after) = match (&out.filter, target) {
        (Some(f), Some(t)) => {
            let all: Vec<usize> = (0..t.len()).collect();
            (t.len(), f.kept.len(), noise_rate(t, &all, &truth), noise_rate(t, &f.kept, &truth))
        }
        _ => (0, 0, None, None),
    };
    Ok(RunResult {
        method: method.name.clone(),
        seed,
        macro_f1: report.macro_f1,
        micro_f1: report.micro_f1,
        target_total,
        target_kept,
        noise_before,
        noise_after,
    })
}

/// Generate the instance for `seed` and run every method on it.
pub fn run_methods(cfg: &ExperimentConfig, methods: &[MethodSpec], seed: u64) -> Result<Vec<RunResult>> {
    let data = generate(&cfg.synth.spec(seed)?)?;
    let h = cfg.synth.hierarchy()?;
    let split = split_source(&data, &cfg.synth, seed)?;
    methods.iter().map(|m| run_on(&data, &split, &h, m, &cfg.model, seed)).collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: MethodSpec,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub summaries: Vec<MethodSummary>,
    pub runs: Vec<RunResult>,
}

pub fn ablation(cfg: &ExperimentConfig) -> Result<AblationReport> {
    run_grid(cfg, &ablation_methods())
}

/// Medians over `cfg.runs` seeds for each method.
pub fn run_grid(cfg: &ExperimentConfig, methods: &[MethodSpec]) -> Result<AblationReport> {
    if cfg.runs == 0 {
        return Err(Error::Invalid("runs must be positive".into()));
    }
    let mut runs = Vec::new();
    for r in 0..cfg.runs {
        let seed = cfg.seed.wrapping_add(r as u64);
        log::info!("run {}/{} (seed {seed})", r + 1, cfg.runs);
        runs.extend(run_methods(cfg, methods, seed)?);
    }
    let summaries = methods
        .iter()
        .map(|m| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.method == m.name).collect();
            let macro_f1 = median(&mine.iter().map(|r| r.macro_f1).collect::<Vec<_>>());
            let micro_f1 = median(&mine.iter().map(|r| r.micro_f1).collect::<Vec<_>>());
            MethodSummary { method: m.clone(), macro_f1, micro_f1 }
        })
        .collect();
    Ok(AblationReport { summaries, runs })
}

impl AblationReport {
    pub fn summary(&self, name: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,view,target,prior,macro_f1,micro_f1\n");
        for s in &self.summaries {
            let target = serde_json::to_value(s.method.target).expect("enum serializes");
            let prior = if s.method.hierarchical { "hier" } else { "flat" };
            let _ = writeln!(
                out,
                "{},{},{},{prior},{:.6},{:.6}",
                s.method.name,
                s.method.view,
                target.as_str().unwrap_or_default(),
                s.macro_f1,
                s.micro_f1
            );
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let mut out = String::from("method,seed,macro_f1,micro_f1,target_total,target_kept,noise_before,noise_after\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{},{},{},{}",
                r.method,
                r.seed,
                r.macro_f1,
                r.micro_f1,
                r.target_total,
                r.target_kept,
                opt(r.noise_before),
                opt(r.noise_after)
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let rows: Vec<(String, f64, f64)> =
            self.summaries.iter().map(|s| (s.method.name.clone(), s.macro_f1, s.micro_f1)).collect();
        comparison_markdown(&rows)
    }
}
