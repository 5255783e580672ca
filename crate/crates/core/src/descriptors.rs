//! Per-utterance acoustic descriptors and percentile binning.
//!
//! Mean F0 comes from a deterministic YIN-style estimator (cumulative mean
//! normalized difference function, absolute threshold, parabolic
//! refinement). Mean spectral centroid is averaged over Hann-windowed STFT
//! frames. Both scalars are discretized into five classes with corpus-level
//! cutoffs at the 10th/30th/70th/90th nearest-rank percentiles; pitch
//! cutoffs are fitted per gender, brightness cutoffs on the pooled corpus.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::taxonomy::{BrightnessClass, ClosedClass, Gender, PitchClass};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YinConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub threshold: f64,
    pub fmin: f64,
    pub fmax: f64,
    /// Frames with RMS below this are treated as unvoiced.
    pub min_rms: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        YinConfig {
            frame_len: 2048,
            hop: 512,
            threshold: 0.15,
            fmin: 50.0,
            fmax: 600.0,
            min_rms: 1e-4,
        }
    }
}

/// Period (in samples, fractional) of one frame, or `None` when unvoiced.
fn yin_period(frame: &[f64], tau_min: usize, tau_max: usize, cfg: &YinConfig) -> Option<f64> {
    let width = frame.len() - tau_max;
    let rms = (frame[..width].iter().map(|x| x * x).sum::<f64>() / width as f64).sqrt();
    if rms < cfg.min_rms {
        return None;
    }
    let mut diff = vec![0.0f64; tau_max + 2];
    for (tau, d) in diff.iter_mut().enumerate().take(tau_max + 1).skip(1) {
        *d = frame[..width]
            .iter()
            .zip(&frame[tau..tau + width])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
    }
    // cumulative mean normalized difference
    let mut cmnd = vec![1.0f64; tau_max + 1];
    let mut running = 0.0;
    for tau in 1..=tau_max {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }
    let mut tau = tau_min.max(1);
    while tau <= tau_max {
        if cmnd[tau] < cfg.threshold {
            while tau < tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            break;
        }
        tau += 1;
    }
    if tau > tau_max {
        return None;
    }
    if tau > 1 && tau < tau_max {
        let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > f64::EPSILON {
            let shift = 0.5 * (a - c) / denom;
            if shift.abs() < 1.0 {
                return Some(tau as f64 + shift);
            }
        }
    }
    Some(tau as f64)
}

/// Per-frame F0 estimates (Hz) for voiced frames only.
pub fn voiced_f0_track(w: &Waveform, cfg: &YinConfig) -> Vec<f64> {
    let sr = w.sample_rate() as f64;
    let tau_min = (sr / cfg.fmax).floor() as usize;
    let tau_max = (sr / cfg.fmin).ceil() as usize;
    let frame_len = cfg.frame_len.max(2 * tau_max);
    let x: Vec<f64> = w.samples().iter().map(|&s| s as f64).collect();
    let mut bounds = Vec::new();
    if x.len() >= frame_len {
        let mut start = 0;
        while start + frame_len <= x.len() {
            bounds.push((start, start + frame_len));
            start += cfg.hop;
        }
    } else if x.len() >= 2 * tau_max {
        bounds.push((0, x.len()));
    }
    bounds
        .into_iter()
        .filter_map(|(s, e)| yin_period(&x[s..e], tau_min, tau_max, cfg))
        .map(|period| sr / period)
        .filter(|f| (cfg.fmin..=cfg.fmax).contains(f))
        .collect()
}

/// Mean F0 over voiced frames; `None` when no frame is voiced.
pub fn estimate_mean_f0(w: &Waveform) -> Option<f64> {
    estimate_mean_f0_with(w, &YinConfig::default())
}

pub fn estimate_mean_f0_with(w: &Waveform, cfg: &YinConfig) -> Option<f64> {
    let track = voiced_f0_track(w, cfg);
    if track.is_empty() {
        None
    } else {
        Some(track.iter().sum::<f64>() / track.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            frame_len: 1024,
            hop: 512,
        }
    }
}

pub fn mean_spectral_centroid(w: &Waveform) -> Result<f64> {
    mean_spectral_centroid_with(w, &StftConfig::default())
}

pub fn mean_spectral_centroid_with(w: &Waveform, cfg: &StftConfig) -> Result<f64> {
    if w.is_silent() {
        return Err(Error::DegenerateSignal("all-zero waveform has no spectral centroid".into()));
    }
    let n = cfg.frame_len;
    let sr = w.sample_rate() as f64;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let x = w.samples();
    let mut starts = Vec::new();
    let mut start = 0;
    while start + n <= x.len() {
        starts.push(start);
        start += cfg.hop;
    }
    if starts.is_empty() {
        starts.push(0);
    }
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut sum = 0.0;
    let mut frames = 0usize;
    for s in starts {
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = x.get(s + i).copied().unwrap_or(0.0) as f64;
            *slot = Complex::new(v * window[i], 0.0);
        }
        fft.process(&mut buf);
        let (mut weighted, mut total) = (0.0, 0.0);
        for (k, c) in buf.iter().take(n / 2 + 1).enumerate() {
            let mag = c.norm();
            weighted += k as f64 * sr / n as f64 * mag;
            total += mag;
        }
        if total > 0.0 {
            sum += weighted / total;
            frames += 1;
        }
    }
    if frames == 0 {
        return Err(Error::DegenerateSignal("no frame carries energy".into()));
    }
    Ok(sum / frames as f64)
}

/// Descriptor pair for one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorResult {
    pub mean_f0: Option<f64>,
    pub mean_centroid: f64,
    pub f0_failed: bool,
}

pub fn extract_descriptors(w: &Waveform) -> Result<DescriptorResult> {
    let mean_centroid = mean_spectral_centroid(w)?;
    let nyquist = w.sample_rate() as f64 / 2.0;
    if !(mean_centroid > 0.0 && mean_centroid < nyquist) {
        return Err(Error::DegenerateSignal(format!(
            "centroid {mean_centroid} Hz outside (0, {nyquist})"
        )));
    }
    let mean_f0 = estimate_mean_f0(w);
    Ok(DescriptorResult {
        mean_f0,
        mean_centroid,
        f0_failed: mean_f0.is_none(),
    })
}

/// 10/30/70/90 percentile cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileCutoffs {
    pub c10: f64,
    pub c30: f64,
    pub c70: f64,
    pub c90: f64,
}

pub const CUTOFF_PERCENTS: [u32; 4] = [10, 30, 70, 90];

impl PercentileCutoffs {
    pub fn new(c10: f64, c30: f64, c70: f64, c90: f64) -> Result<Self> {
        let ok = [c10, c30, c70, c90].iter().all(|c| c.is_finite())
            && c10 <= c30
            && c30 <= c70
            && c70 <= c90;
        if !ok {
            return Err(Error::Config(format!(
                "cutoffs must be finite and non-decreasing: {c10}, {c30}, {c70}, {c90}"
            )));
        }
        Ok(PercentileCutoffs { c10, c30, c70, c90 })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.c10, self.c30, self.c70, self.c90]
    }

    /// Five-way bin index with half-open intervals `[lo, hi)`; the top bin is
    /// closed above.
    pub fn bin_index(&self, value: f64) -> usize {
        self.as_array().iter().take_while(|&&c| value >= c).count()
    }
}

/// Nearest-rank percentile: the value at 1-based rank `ceil(p/100 * n)`.
pub fn nearest_rank(sorted: &[f64], percent: u32) -> f64 {
    let n = sorted.len();
    let rank = ((percent as usize * n).div_ceil(100)).max(1);
    sorted[rank - 1]
}

pub fn fit_cutoffs(values: &[f64]) -> Result<PercentileCutoffs> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.len() < 10 {
        return Err(Error::InsufficientData {
            needed: 10,
            got: sorted.len(),
        });
    }
    sorted.sort_by(f64::total_cmp);
    let [a, b, c, d] = CUTOFF_PERCENTS.map(|p| nearest_rank(&sorted, p));
    PercentileCutoffs::new(a, b, c, d)
}

/// Pitch cutoffs keyed by gender.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PitchCutoffs(pub BTreeMap<Gender, PercentileCutoffs>);

impl PitchCutoffs {
    pub fn insert(&mut self, gender: Gender, cutoffs: PercentileCutoffs) {
        self.0.insert(gender, cutoffs);
    }

    pub fn get(&self, gender: Gender) -> Option<&PercentileCutoffs> {
        self.0.get(&gender)
    }
}

pub fn bin_pitch(f0: f64, gender: Gender, cutoffs: &PitchCutoffs) -> Result<PitchClass> {
    let c = cutoffs
        .get(gender)
        .ok_or_else(|| Error::Config(format!("no pitch cutoffs for gender {gender}")))?;
    Ok(PitchClass::all()[c.bin_index(f0)])
}

pub fn bin_brightness(centroid: f64, cutoffs: &PercentileCutoffs) -> BrightnessClass {
    BrightnessClass::all()[cutoffs.bin_index(centroid)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorKind {
    F0,
    Centroid,
}

impl DescriptorKind {
    fn as_str(self) -> &'static str {
        match self {
            DescriptorKind::F0 => "f0",
            DescriptorKind::Centroid => "centroid",
        }
    }
}

pub const CUTOFF_FORMAT_VERSION: u32 = 1;

/// Persisted cutoffs for one corpus and group (a gender, or `pooled`).
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffRecord {
    pub descriptor: DescriptorKind,
    pub corpus: String,
    pub group: String,
    pub count: usize,
    pub cutoffs: PercentileCutoffs,
}

impl CutoffRecord {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# svrkit percentile cutoffs").unwrap();
        writeln!(out, "format_version = {CUTOFF_FORMAT_VERSION}").unwrap();
        writeln!(out, "descriptor = {}", self.descriptor.as_str()).unwrap();
        writeln!(out, "corpus = {}", self.corpus).unwrap();
        writeln!(out, "group = {}", self.group).unwrap();
        writeln!(out, "count = {}", self.count).unwrap();
        for (p, c) in CUTOFF_PERCENTS.iter().zip(self.cutoffs.as_array()) {
            writeln!(out, "c{p} = {c:?}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<CutoffRecord> {
        let mut fields = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad cutoff line {line:?}")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Parse(format!("cutoff record lacks {k}")))
        };
        let version: u32 = get("format_version")?
            .parse()
            .map_err(|_| Error::Parse("bad format_version".into()))?;
        if version != CUTOFF_FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported cutoff format {version}")));
        }
        let descriptor = match get("descriptor")?.as_str() {
            "f0" => DescriptorKind::F0,
            "centroid" => DescriptorKind::Centroid,
            other => return Err(Error::Parse(format!("unknown descriptor {other:?}"))),
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Parse(format!("bad number for {k}")))
        };
        Ok(CutoffRecord {
            descriptor,
            corpus: get("corpus")?,
            group: get("group")?,
            count: get("count")?
                .parse()
                .map_err(|_| Error::Parse("bad count".into()))?,
            cutoffs: PercentileCutoffs::new(num("c10")?, num("c30")?, num("c70")?, num("c90")?)?,
        })
    }
}
