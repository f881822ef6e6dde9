//! Key-frame selection from color-histogram differences.
//!
//! Consecutive frames are compared by the L1 distance of their per-channel
//! RGB histograms. A frame is a candidate when its distance to the previous
//! frame exceeds `mean + sigma_multiplier * std` of all distances in the
//! video. When there are more than `candidate_cap` candidates only the
//! `keep_top` with the largest distance survive.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeConfig {
    pub bins_per_channel: usize,
    pub sigma_multiplier: f64,
    pub candidate_cap: usize,
    pub keep_top: usize,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self { bins_per_channel: 16, sigma_multiplier: 3.0, candidate_cap: 20, keep_top: 10 }
    }
}

impl KeyframeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins_per_channel == 0 || self.bins_per_channel > 256 {
            return Err(Error::Invalid(format!("bins_per_channel must be in 1..=256, got {}", self.bins_per_channel)));
        }
        if !(self.sigma_multiplier > 0.0) || !self.sigma_multiplier.is_finite() {
            return Err(Error::Invalid(format!("sigma_multiplier must be > 0, got {}", self.sigma_multiplier)));
        }
        if self.keep_top > self.candidate_cap {
            return Err(Error::Invalid(format!(
                "keep_top ({}) must not exceed candidate_cap ({})",
                self.keep_top, self.candidate_cap
            )));
        }
        Ok(())
    }
}

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty("raster"));
        }
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch { expected: width * height * 3, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// Per-channel histograms stored channel-major (`R` bins, then `G`, then `B`).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameHistogram {
    bins_per_channel: usize,
    bins: Vec<f64>,
}

impl FrameHistogram {
    pub fn bins_per_channel(&self) -> usize {
        self.bins_per_channel
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.bins[c * self.bins_per_channel..(c + 1) * self.bins_per_channel]
    }
}

/// Equal-width bins over `0..=255`, normalized by pixel count.
pub fn rgb_histogram(frame: &Raster, cfg: &KeyframeConfig) -> Result<FrameHistogram> {
    let b = cfg.bins_per_channel;
    if b == 0 || b > 256 {
        return Err(Error::Invalid(format!("bins_per_channel must be in 1..=256, got {b}")));
    }
    let pixels = frame.width * frame.height;
    if pixels == 0 {
        return Err(Error::Empty("raster"));
    }
    let mut counts = vec![0u64; 3 * b];
    for px in frame.data.chunks_exact(3) {
        for (c, &v) in px.iter().enumerate() {
            counts[c * b + (v as usize * b) / 256] += 1;
        }
    }
    let bins = counts.into_iter().map(|n| n as f64 / pixels as f64).collect();
    Ok(FrameHistogram { bins_per_channel: b, bins })
}

pub fn l1_distance(a: &FrameHistogram, b: &FrameHistogram) -> Result<f64> {
    if a.bins.len() != b.bins.len() {
        return Err(Error::DimensionMismatch { expected: a.bins.len(), got: b.bins.len() });
    }
    Ok(a.bins.iter().zip(&b.bins).map(|(x, y)| (x - y).abs()).sum())
}

pub fn select_keyframes(frames: &[Raster], cfg: &KeyframeConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let hists = frames.iter().map(|f| rgb_histogram(f, cfg)).collect::<Result<Vec<_>>>()?;
    select_from_histograms(&hists, cfg)
}

pub fn select_from_histograms(hists: &[FrameHistogram], cfg: &KeyframeConfig) -> Result<Vec<usize>> {
    if hists.is_empty() {
        return Err(Error::Empty("frame sequence"));
    }
    let distances = hists
        .windows(2)
        .map(|w| l1_distance(&w[0], &w[1]))
        .collect::<Result<Vec<_>>>()?;
    Ok(select_from_distances(&distances, cfg))
}

/// `distances[i - 1]` is the distance between frames `i - 1` and `i`, so the
/// returned indices lie in `1..=distances.len()`. With no candidate the
/// middle frame `(n_frames) / 2` is returned.
pub fn select_from_distances(distances: &[f64], cfg: &KeyframeConfig) -> Vec<usize> {
    let n_frames = distances.len() + 1;
    let fallback = vec![n_frames / 2];
    if distances.is_empty() {
        return fallback;
    }
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let threshold = mean + cfg.sigma_multiplier * var.sqrt();
    // Margin absorbs rounding in the mean when all distances are equal.
    let margin = 1e-12 * (1.0 + threshold.abs());

    let mut candidates: Vec<(usize, f64)> = distances
        .iter()
        .enumerate()
        .filter(|(_, &d)| d - threshold > margin)
        .map(|(i, &d)| (i + 1, d))
        .collect();
    if candidates.is_empty() {
        return fallback;
    }
    if candidates.len() > cfg.candidate_cap {
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        candidates.truncate(cfg.keep_top);
    }
    let mut idx: Vec<usize> = candidates.into_iter().map(|(i, _)| i).collect();
    idx.sort_unstable();
    idx
}

/// One line of the key-frame JSON-lines output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeRecord {
    pub video_id: String,
    pub keyframes: Vec<usize>,
}

/// Decode a binary PPM (`P6`, maxval 255).
pub fn parse_ppm(bytes: &[u8]) -> Result<Raster> {
    let bad = |msg: &str| Error::Parse { line: 0, msg: format!("ppm: {msg}") };
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if tokens[0] != "P6" {
        return Err(bad("only binary P6 is supported"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("invalid header number"));
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(bad("truncated raster"));
    }
    Raster::new(w, h, bytes[pos..pos + need].to_vec())
}

pub fn encode_ppm(frame: &Raster) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.data);
    out
}

pub fn write_ppm(path: &Path, frame: &Raster) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_ppm(frame))?;
    Ok(())
}

/// `.ppm` files in `dir`, ordered by the number embedded in their file name.
pub fn numbered_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<(u64, String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("ppm")) != Some(true) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let digits: String = stem.chars().filter(char::is_ascii_digit).collect();
        let number = digits.parse::<u64>().map_err(|_| Error::Parse {
            line: 0,
            msg: format!("frame file `{}` has no frame number", path.display()),
        })?;
        frames.push((number, stem, path));
    }
    frames.sort();
    Ok(frames.into_iter().map(|(_, _, p)| p).collect())
}

pub fn load_video_dir(dir: &Path) -> Result<Vec<Raster>> {
    numbered_frames(dir)?
        .iter()
        .map(|p| parse_ppm(&fs::read(p)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg4() -> KeyframeConfig {
        KeyframeConfig { bins_per_channel: 4, ..Default::default() }
    }

    #[test]
    fn black_frame_single_bin() {
        let h = rgb_histogram(&Raster::filled(2, 2, [0, 0, 0]).unwrap(), &cfg4()).unwrap();
        for c in 0..3 {
            assert_eq!(h.channel(c), &[1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn white_frame_last_bin() {
        let h = rgb_histogram(&Raster::filled(3, 1, [255, 255, 255]).unwrap(), &cfg4()).unwrap();
        for c in 0..3 {
            assert_eq!(h.channel(c), &[0.0, 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn random_frame_matches_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<u8> = (0..8 * 8 * 3).map(|_| rng.gen()).collect();
        let frame = Raster::new(8, 8, data.clone()).unwrap();
        let h = rgb_histogram(&frame, &cfg4()).unwrap();
        for c in 0..3 {
            for bin in 0..4 {
                let lo = bin * 64;
                let count = data
                    .iter()
                    .skip(c)
                    .step_by(3)
                    .filter(|&&v| (v as usize) >= lo && (v as usize) < lo + 64)
                    .count();
                assert_eq!(h.channel(c)[bin], count as f64 / 64.0);
            }
        }
    }

    #[test]
    fn zero_sized_raster_rejected() {
        assert!(matches!(Raster::new(0, 3, vec![]), Err(Error::Empty(_))));
    }

    #[test]
    fn distance_cases() {
        let black = rgb_histogram(&Raster::filled(2, 2, [0, 0, 0]).unwrap(), &cfg4()).unwrap();
        let grey = rgb_histogram(&Raster::filled(2, 2, [64, 64, 64]).unwrap(), &cfg4()).unwrap();
        assert_eq!(l1_distance(&black, &black).unwrap(), 0.0);
        assert_eq!(l1_distance(&black, &grey).unwrap(), 6.0);
        let other = rgb_histogram(&Raster::filled(2, 2, [0, 0, 0]).unwrap(), &KeyframeConfig::default()).unwrap();
        assert!(l1_distance(&black, &other).is_err());
    }

    #[test]
    fn constant_video_falls_back_to_middle() {
        let frames = vec![Raster::filled(4, 4, [10, 20, 30]).unwrap(); 9];
        assert_eq!(select_keyframes(&frames, &KeyframeConfig::default()).unwrap(), vec![4]);
        assert_eq!(select_keyframes(&frames[..1], &KeyframeConfig::default()).unwrap(), vec![0]);
        assert!(select_keyframes(&[], &KeyframeConfig::default()).is_err());
    }

    #[test]
    fn equal_nonzero_distances_do_not_trigger() {
        let d = vec![0.3; 40];
        assert_eq!(select_from_distances(&d, &KeyframeConfig::default()), vec![20]);
    }

    #[test]
    fn single_cut_is_found() {
        let mut frames = vec![Raster::filled(4, 4, [0, 0, 0]).unwrap(); 50];
        for f in frames.iter_mut().skip(17) {
            *f = Raster::filled(4, 4, [250, 250, 250]).unwrap();
        }
        assert_eq!(select_keyframes(&frames, &KeyframeConfig::default()).unwrap(), vec![17]);
    }

    #[test]
    fn cap_keeps_largest() {
        // 25 jumps of distinct magnitude among 400 frames
        let mut d = vec![0.0; 399];
        let jumps: Vec<usize> = (0..25).map(|k| 7 + 15 * k).collect();
        for (k, &j) in jumps.iter().enumerate() {
            d[j - 1] = 1.0 + k as f64 * 0.01;
        }
        let out = select_from_distances(&d, &KeyframeConfig::default());
        assert_eq!(out, jumps[15..].to_vec());
    }

    #[test]
    fn ppm_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frame = Raster::new(5, 3, (0..45).map(|_| rng.gen()).collect()).unwrap();
        assert_eq!(parse_ppm(&encode_ppm(&frame)).unwrap(), frame);
        let with_comment = b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03";
        assert_eq!(parse_ppm(with_comment).unwrap().data(), &[1, 2, 3]);
        assert!(parse_ppm(b"P3\n1 1\n255\n1 2 3").is_err());
    }
}
