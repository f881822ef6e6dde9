mod common;

use std::collections::BTreeSet;

use hcmfl::cptdl::select_per_category;
use hcmfl::features::{pool, read_dataset, write_dataset, FrameFeature, PoolMode};
use hcmfl::hier_prior::{prior_penalty, update_internal};
use hcmfl::keyframes::{rgb_histogram, select_from_distances, KeyframeConfig, Raster};
use hcmfl::metrics::evaluate;
use hcmfl::{Dataset, FusionNetwork, HeadState, HierPriorConfig, MultiViewSample, NetworkShape, Platform, VenueHierarchy, View};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tree(seed: u64) -> VenueHierarchy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = rng.gen_range(1..=4);
    common::random_tree(&mut rng, layers, 4, 0.6)
}

fn labels_and_preds() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..8).prop_flat_map(|c| (Just(c), prop::collection::vec((0..c, 0..c), 1..120)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hierarchy_text_round_trip(seed in any::<u64>()) {
        let h = tree(seed);
        let back = VenueHierarchy::parse(&h.serialize()).unwrap();
        prop_assert_eq!(&back, &h);
    }

    #[test]
    fn normalization_makes_labeled_nodes_leaves(seed in any::<u64>(), picks in prop::collection::vec(any::<prop::sample::Index>(), 1..6)) {
        let h = tree(seed);
        let names: Vec<String> = h.nodes().filter(|&n| n != h.root()).map(|n| h.name(n).to_string()).collect();
        let labeled: BTreeSet<&str> = picks.iter().map(|i| names[i.index(names.len())].as_str()).collect();
        let norm = h.normalize_leaves(&labeled).unwrap();
        let g = &norm.hierarchy;
        for name in &labeled {
            let id = g.node(norm.target_of(name)).unwrap();
            prop_assert!(g.is_leaf(id));
        }
        for &leaf in h.leaves() {
            prop_assert!(g.is_leaf(g.node(h.name(leaf)).unwrap()));
        }
        prop_assert_eq!(g.num_leaves(), h.num_leaves() + norm.remap.len());
        prop_assert_eq!(g.len(), h.len() + norm.remap.len());
    }

    #[test]
    fn truncation_keeps_leaf_order(seed in any::<u64>(), depth in 0usize..4) {
        let h = tree(seed);
        let t = h.truncate(depth);
        prop_assert_eq!(t.leaf_names(), h.leaf_names());
        for n in t.internal_nodes() {
            prop_assert!(t.layer(n) <= depth);
        }
    }

    #[test]
    fn keyframe_selection_shape(
        spikes in prop::collection::btree_map(0usize..2000, 50.0f64..60.0, 1..45),
        noise_seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let mut d: Vec<f64> = (0..2000).map(|_| rng.gen_range(0.0..0.01)).collect();
        for (&i, &v) in &spikes {
            d[i] = v;
        }
        let cfg = KeyframeConfig::default();
        let picked = select_from_distances(&d, &cfg);
        prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(picked.len() <= cfg.candidate_cap);
        let frames: Vec<usize> = spikes.keys().map(|&i| i + 1).collect();
        if spikes.len() > cfg.candidate_cap {
            prop_assert_eq!(picked.len(), cfg.keep_top);
            let mut by_height: Vec<(f64, usize)> = spikes.iter().map(|(&i, &v)| (v, i + 1)).collect();
            by_height.sort_by(|a, b| b.0.total_cmp(&a.0));
            let top: BTreeSet<usize> = by_height.iter().take(cfg.keep_top).map(|p| p.1).collect();
            prop_assert_eq!(picked.iter().copied().collect::<BTreeSet<_>>(), top);
        } else {
            prop_assert_eq!(&picked, &frames);
        }
        let doubled: Vec<f64> = d.iter().map(|x| 2.0 * x).collect();
        prop_assert_eq!(select_from_distances(&doubled, &cfg), picked);
    }

    #[test]
    fn histogram_channels_are_distributions(w in 1usize..9, h in 1usize..9, bins in 1usize..33, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<u8> = (0..w * h * 3).map(|_| rng.gen()).collect();
        let cfg = KeyframeConfig { bins_per_channel: bins, ..KeyframeConfig::default() };
        let hist = rgb_histogram(&Raster::new(w, h, data).unwrap(), &cfg).unwrap();
        for c in 0..3 {
            let s: f64 = hist.channel(c).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(hist.channel(c).iter().all(|&b| b >= 0.0));
        }
    }

    #[test]
    fn mean_pool_is_order_free_and_bounded(
        rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 4), 1..12),
        shuffle_seed in any::<u64>(),
    ) {
        let frames: Vec<FrameFeature> = rows
            .iter()
            .enumerate()
            .map(|(i, v)| FrameFeature { video_id: "v".into(), frame_index: i, view: View::Object, vector: v.clone() })
            .collect();
        let pooled = pool(&frames, PoolMode::Mean).unwrap();
        let mut shuffled = frames.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let again = pool(&shuffled, PoolMode::Mean).unwrap();
        for j in 0..4 {
            prop_assert!((pooled[j] - again[j]).abs() < 1e-12);
            let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(pooled[j] >= lo - 1e-12 && pooled[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn micro_f1_is_accuracy((c, pairs) in labels_and_preds()) {
        let (preds, truths): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let r = evaluate(&preds, &truths, c).unwrap();
        let acc = pairs.iter().filter(|(p, t)| p == t).count() as f64 / pairs.len() as f64;
        prop_assert!((r.micro_f1 - acc).abs() <= 1e-15);
        prop_assert!((0.0..=1.0).contains(&r.macro_f1));
    }

    #[test]
    fn metrics_ignore_sample_order_and_label_names((c, pairs) in labels_and_preds(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (preds, truths): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let r = evaluate(&preds, &truths, c).unwrap();

        let mut shuffled = pairs.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let (sp, st): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        prop_assert_eq!(&evaluate(&sp, &st, c).unwrap(), &r);

        let mut perm: Vec<usize> = (0..c).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let pp: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
        let pt: Vec<usize> = truths.iter().map(|&t| perm[t]).collect();
        let q = evaluate(&pp, &pt, c).unwrap();
        prop_assert_eq!(q.micro_f1, r.micro_f1);
        prop_assert!((q.macro_f1 - r.macro_f1).abs() < 1e-12);
        for t in 0..c {
            prop_assert_eq!(q.per_class[perm[t]], r.per_class[t]);
        }
    }

    #[test]
    fn filter_depends_only_on_score_ranks(
        items in prop::collection::vec((0usize..5, 0.0f64..1.0), 0..80),
        k in 1usize..12,
    ) {
        let ids: Vec<String> = (0..items.len()).map(|i| format!("t{i:03}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let labels: Vec<usize> = items.iter().map(|p| p.0).collect();
        let scores: Vec<f64> = items.iter().map(|p| p.1).collect();
        let kept = select_per_category(&id_refs, &labels, &scores, 5, Some(k));
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(&select_per_category(&id_refs, &labels, &warped, 5, Some(k)), &kept);
        for t in 0..5 {
            let total = labels.iter().filter(|&&l| l == t).count();
            let mine = kept.iter().filter(|&&i| labels[i] == t).count();
            prop_assert_eq!(mine, total.min(k));
        }
        prop_assert_eq!(select_per_category(&id_refs, &labels, &scores, 5, None).len(), items.len());
    }

    #[test]
    fn prior_is_rotation_invariant(seed in any::<u64>(), angle in 0.0f64..std::f64::consts::TAU) {
        let h = tree(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let d = 3;
        let mut rows = Array2::from_shape_simple_fn((h.len(), d), || rng.gen_range(-2.0..2.0));
        rows.row_mut(h.root().index()).fill(0.0);
        let (s, c) = angle.sin_cos();
        let q = ndarray::array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let cfg = HierPriorConfig { sweep_tol: 1e-14, max_sweeps: 10_000, ..HierPriorConfig::default() };

        let mut plain = HeadState::from_rows(&h, rows.clone()).unwrap();
        let mut turned = HeadState::from_rows(&h, rows.dot(&q.t())).unwrap();
        let p0 = prior_penalty(&plain, &h, &cfg).unwrap();
        let p1 = prior_penalty(&turned, &h, &cfg).unwrap();
        prop_assert!((p0 - p1).abs() <= 1e-9 * p0.max(1.0));

        update_internal(&mut plain, &h, &cfg).unwrap();
        update_internal(&mut turned, &h, &cfg).unwrap();
        let expected = plain.rows().dot(&q.t());
        for (a, b) in expected.iter().zip(turned.rows().iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(d in 1usize..10, layers in 0usize..3, units in 1usize..9, t in 1usize..7, seed in any::<u64>()) {
        let net = FusionNetwork::init(NetworkShape { input_dim: d, fused_layers: layers, fused_units: units, num_leaves: t }, seed).unwrap();
        let mut tweaked = net.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<f64> = net.parameters().iter().map(|p| p + rng.gen_range(-1.0..1.0) * 1e-3).collect();
        tweaked.set_parameters(&params).unwrap();
        let mut bytes = Vec::new();
        tweaked.write_checkpoint(&mut bytes).unwrap();
        let back = FusionNetwork::read_checkpoint(bytes.as_slice()).unwrap();
        let a: Vec<u64> = tweaked.parameters().iter().map(|p| p.to_bits()).collect();
        let b: Vec<u64> = back.parameters().iter().map(|p| p.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back.shape(), tweaked.shape());
    }

    #[test]
    fn dataset_round_trip_is_bit_exact(
        rows in prop::collection::vec((0usize..6, prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 5)), 1..20),
    ) {
        let samples: Vec<MultiViewSample> = rows
            .iter()
            .enumerate()
            .map(|(i, (label, v))| MultiViewSample {
                id: format!("s{i}"),
                label: *label,
                platform: if i % 2 == 0 { Platform::Source } else { Platform::Target },
                object_vec: v[..2].to_vec(),
                scene_vec: v[2..].to_vec(),
                n_frames: i + 1,
            })
            .collect();
        let ds = Dataset::from_samples(samples).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        let back = read_dataset(buf.as_slice(), 6).unwrap();
        prop_assert_eq!(back.samples.len(), ds.samples.len());
        for (a, b) in back.samples.iter().zip(&ds.samples) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(a.label, b.label);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.object_vec), bits(&b.object_vec));
            prop_assert_eq!(bits(&a.scene_vec), bits(&b.scene_vec));
        }
    }
}
