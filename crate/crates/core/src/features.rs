//! Video-level multi-view features and the JSON-lines dataset format.
//!
//! A dataset file starts with a header line `{"dim_object":..,"dim_scene":..}`
//! followed by one [`MultiViewSample`] per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Object,
    Scene,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Source,
    Target,
}

/// Which part of a sample feeds the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputView {
    Object,
    Scene,
    Fused,
}

impl std::str::FromStr for InputView {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "object" => Ok(Self::Object),
            "scene" => Ok(Self::Scene),
            "fused" => Ok(Self::Fused),
            other => Err(Error::Invalid(format!("unknown view `{other}`"))),
        }
    }
}

impl std::fmt::Display for InputView {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Object => "object",
            Self::Scene => "scene",
            Self::Fused => "fused",
        })
    }
}

/// Per-frame descriptor from one view's backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeature {
    pub video_id: String,
    pub frame_index: usize,
    pub view: View,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiViewSample {
    pub id: String,
    pub label: usize,
    pub platform: Platform,
    #[serde(rename = "object")]
    pub object_vec: Vec<f64>,
    #[serde(rename = "scene")]
    pub scene_vec: Vec<f64>,
    pub n_frames: usize,
}

impl MultiViewSample {
    /// Network input for `view`; fused input is `object ‖ scene`.
    pub fn input(&self, view: InputView) -> Vec<f64> {
        match view {
            InputView::Object => self.object_vec.clone(),
            InputView::Scene => self.scene_vec.clone(),
            InputView::Fused => {
                let mut v = Vec::with_capacity(self.object_vec.len() + self.scene_vec.len());
                v.extend_from_slice(&self.object_vec);
                v.extend_from_slice(&self.scene_vec);
                v
            }
        }
    }
}

/// How frame vectors are combined. `Sum` is the literal bare sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Mean,
    Sum,
}

pub fn mean_pool(frames: &[FrameFeature]) -> Result<Vec<f64>> {
    pool(frames, PoolMode::Mean)
}

pub fn pool(frames: &[FrameFeature], mode: PoolMode) -> Result<Vec<f64>> {
    let first = frames.first().ok_or(Error::Empty("frame features"))?;
    let dim = first.vector.len();
    let mut acc = vec![0.0; dim];
    for f in frames {
        if f.vector.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: f.vector.len() });
        }
        if f.video_id != first.video_id || f.view != first.view {
            return Err(Error::Invalid(format!(
                "pooling mixes `{}`/{:?} with `{}`/{:?}",
                first.video_id, first.view, f.video_id, f.view
            )));
        }
        if f.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frame feature"));
        }
        for (a, v) in acc.iter_mut().zip(&f.vector) {
            *a += v;
        }
    }
    if mode == PoolMode::Mean {
        let n = frames.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(acc)
}

/// Label and platform assigned to a video before pooling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoLabel {
    pub video_id: String,
    pub label: usize,
    pub platform: Platform,
}

/// Group frame features by video and view, pool each group, and attach labels.
/// Videos come out in id order.
pub fn pool_videos(
    frames: &[FrameFeature],
    labels: &[VideoLabel],
    mode: PoolMode,
) -> Result<Vec<MultiViewSample>> {
    let mut groups: BTreeMap<(&str, View), Vec<FrameFeature>> = BTreeMap::new();
    for f in frames {
        groups.entry((f.video_id.as_str(), f.view)).or_default().push(f.clone());
    }
    let by_id: BTreeMap<&str, &VideoLabel> = labels.iter().map(|l| (l.video_id.as_str(), l)).collect();
    let mut videos: Vec<&str> = groups.keys().map(|(v, _)| *v).collect();
    videos.dedup();
    videos
        .into_iter()
        .map(|vid| {
            let label = by_id.get(vid).ok_or_else(|| Error::Invalid(format!("no label for video `{vid}`")))?;
            let object = groups.get(&(vid, View::Object)).ok_or_else(|| Error::Invalid(format!("`{vid}` has no object frames")))?;
            let scene = groups.get(&(vid, View::Scene)).ok_or_else(|| Error::Invalid(format!("`{vid}` has no scene frames")))?;
            let mut n = object.iter().map(|f| f.frame_index).collect::<Vec<_>>();
            n.sort_unstable();
            n.dedup();
            Ok(MultiViewSample {
                id: vid.to_string(),
                label: label.label,
                platform: label.platform,
                object_vec: pool(object, mode)?,
                scene_vec: pool(scene, mode)?,
                n_frames: n.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    dim_object: usize,
    dim_scene: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim_object: usize,
    pub dim_scene: usize,
    pub samples: Vec<MultiViewSample>,
}

impl Dataset {
    /// Build from samples, taking dimensions from the first one.
    pub fn from_samples(samples: Vec<MultiViewSample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("dataset"))?;
        let ds = Self { dim_object: first.object_vec.len(), dim_scene: first.scene_vec.len(), samples };
        ds.check(None)?;
        Ok(ds)
    }

    pub fn input_dim(&self, view: InputView) -> usize {
        match view {
            InputView::Object => self.dim_object,
            InputView::Scene => self.dim_scene,
            InputView::Fused => self.dim_object + self.dim_scene,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Subset by indices, keeping dimensions.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            dim_object: self.dim_object,
            dim_scene: self.dim_scene,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    fn check(&self, num_labels: Option<usize>) -> Result<()> {
        for s in &self.samples {
            check_sample(s, self.dim_object, self.dim_scene, num_labels)?;
        }
        Ok(())
    }
}

fn check_sample(s: &MultiViewSample, dim_object: usize, dim_scene: usize, num_labels: Option<usize>) -> Result<()> {
    if s.object_vec.len() != dim_object {
        return Err(Error::DimensionMismatch { expected: dim_object, got: s.object_vec.len() });
    }
    if s.scene_vec.len() != dim_scene {
        return Err(Error::DimensionMismatch { expected: dim_scene, got: s.scene_vec.len() });
    }
    if let Some(n) = num_labels {
        if s.label >= n {
            return Err(Error::LabelOutOfRange { label: s.label, num_classes: n });
        }
    }
    if s.n_frames == 0 {
        return Err(Error::Invalid(format!("sample `{}` has n_frames = 0", s.id)));
    }
    if s.object_vec.iter().chain(&s.scene_vec).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sample features"));
    }
    Ok(())
}

pub fn write_dataset<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    serde_json::to_writer(&mut w, &Header { dim_object: ds.dim_object, dim_scene: ds.dim_scene })?;
    w.write_all(b"\n")?;
    for s in &ds.samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a dataset, rejecting labels `>= num_labels`.
pub fn read_dataset<R: BufRead>(r: R, num_labels: usize) -> Result<Dataset> {
    let mut lines = r.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
    let (_, header) = lines.next().ok_or(Error::Empty("dataset file"))?;
    let header: Header = serde_json::from_str(&header?)
        .map_err(|e| Error::Parse { line: 1, msg: format!("bad header: {e}") })?;
    let mut samples = Vec::new();
    for (i, line) in lines {
        let s: MultiViewSample =
            serde_json::from_str(&line?).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        check_sample(&s, header.dim_object, header.dim_scene, Some(num_labels))?;
        samples.push(s);
    }
    Ok(Dataset { dim_object: header.dim_object, dim_scene: header.dim_scene, samples })
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), ds)
}

pub fn load_dataset(path: &Path, num_labels: usize) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?), num_labels)
}

/// Read any JSON-lines file of `T`, skipping blank lines.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(v: &[f64]) -> FrameFeature {
        FrameFeature { video_id: "v".into(), frame_index: 0, view: View::Object, vector: v.to_vec() }
    }

    fn sample(rng: &mut ChaCha8Rng, i: usize) -> MultiViewSample {
        MultiViewSample {
            id: format!("s{i}"),
            label: rng.gen_range(0..4),
            platform: if rng.gen() { Platform::Source } else { Platform::Target },
            object_vec: (0..3).map(|_| rng.gen::<f64>() * 1e3 - 5e2).collect(),
            scene_vec: (0..2).map(|_| rng.gen::<f64>().powi(7) * 1e-8).collect(),
            n_frames: rng.gen_range(1..10),
        }
    }

    #[test]
    fn pooling_cases() {
        assert_eq!(mean_pool(&[frame(&[1.0, -2.0])]).unwrap(), vec![1.0, -2.0]);
        assert_eq!(mean_pool(&[frame(&[1.5, -2.0]), frame(&[-1.5, 2.0])]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(mean_pool(&[]), Err(Error::Empty(_))));
        assert!(matches!(mean_pool(&[frame(&[1.0]), frame(&[1.0, 2.0])]), Err(Error::DimensionMismatch { .. })));
        assert_eq!(pool(&[frame(&[1.0]), frame(&[2.0])], PoolMode::Sum).unwrap(), vec![3.0]);
    }

    #[test]
    fn pooling_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vs: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let frames: Vec<FrameFeature> = vs.iter().map(|v| frame(v)).collect();
        let pooled = mean_pool(&frames).unwrap();
        for k in 0..8 {
            let direct = (vs[0][k] + vs[1][k] + vs[2][k] + vs[3][k] + vs[4][k]) / 5.0;
            assert!((pooled[k] - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn pool_videos_groups_by_id() {
        let mk = |vid: &str, j, view, v: f64| FrameFeature { video_id: vid.into(), frame_index: j, view, vector: vec![v] };
        let frames = vec![
            mk("b", 0, View::Object, 1.0),
            mk("a", 0, View::Scene, 4.0),
            mk("a", 0, View::Object, 2.0),
            mk("a", 1, View::Object, 4.0),
            mk("b", 0, View::Scene, 8.0),
            mk("a", 1, View::Scene, 6.0),
        ];
        let labels = vec![
            VideoLabel { video_id: "a".into(), label: 1, platform: Platform::Source },
            VideoLabel { video_id: "b".into(), label: 0, platform: Platform::Target },
        ];
        let out = pool_videos(&frames, &labels, PoolMode::Mean).unwrap();
        assert_eq!(out[0].id, "a");
        assert_eq!(out[0].object_vec, vec![3.0]);
        assert_eq!(out[0].scene_vec, vec![5.0]);
        assert_eq!(out[0].n_frames, 2);
        assert_eq!(out[1].platform, Platform::Target);
        assert!(pool_videos(&frames, &labels[..1], PoolMode::Mean).is_err());
    }

    #[test]
    fn small_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = Dataset::from_samples((0..3).map(|i| sample(&mut rng, i)).collect()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        assert_eq!(read_dataset(&buf[..], 4).unwrap(), ds);
    }

    #[test]
    fn label_overflow_rejected() {
        let text = "{\"dim_object\":1,\"dim_scene\":1}\n{\"id\":\"x\",\"label\":4,\"platform\":\"source\",\"object\":[0.0],\"scene\":[1.0],\"n_frames\":1}\n";
        assert!(matches!(read_dataset(text.as_bytes(), 4), Err(Error::LabelOutOfRange { label: 4, .. })));
        assert!(read_dataset(text.as_bytes(), 5).is_ok());
    }

    #[test]
    fn malformed_and_inconsistent_records() {
        let bad = "{\"dim_object\":1,\"dim_scene\":1}\n{\"id\":\"x\",\"label\":0}\n";
        assert!(matches!(read_dataset(bad.as_bytes(), 4), Err(Error::Parse { line: 2, .. })));
        let dims = "{\"dim_object\":2,\"dim_scene\":1}\n{\"id\":\"x\",\"label\":0,\"platform\":\"source\",\"object\":[0.0],\"scene\":[1.0],\"n_frames\":1}\n";
        assert!(matches!(read_dataset(dims.as_bytes(), 4), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn thousand_sample_round_trip_on_disk() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let ds = Dataset::from_samples((0..1000).map(|i| sample(&mut rng, i)).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&path, &ds).unwrap();
        let back = load_dataset(&path, 4).unwrap();
        assert_eq!(back.len(), 1000);
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.label, b.label);
            assert_eq!(a.platform, b.platform);
            assert_eq!(a.n_frames, b.n_frames);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.object_vec), bits(&b.object_vec));
            assert_eq!(bits(&a.scene_vec), bits(&b.scene_vec));
        }
    }
}
