//! Recording-condition simulation and labeling.
//!
//! Noise is mixed at a target SNR, reverberation is simulated by RIR
//! convolution, and both are bucketed into five ordinal classes. RT60 comes
//! from Schroeder backward integration with a least-squares line over the
//! -5..-35 dB part of the energy decay curve.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, Waveform};
use crate::error::{Error, Result};
use crate::taxonomy::{closed_class, ClosedClass};

closed_class!(
    /// SNR-controlled noise class.
    NoiseClass, "noise" {
        Clean => "clean",
        Mild => "mild",
        Moderate => "moderate",
        Severe => "severe",
        Extreme => "extreme",
    }
);

closed_class!(
    /// RT60-controlled reverberation class.
    ReverbClass, "reverb" {
        Minimal => "minimal",
        Slight => "slight",
        Moderate => "moderate",
        Heavy => "heavy",
        Extreme => "extreme",
    }
);

impl NoiseClass {
    pub fn degradation_rank(self) -> u8 {
        self.index() as u8
    }

    /// Half-open SNR interval `[lo, hi)` used when sampling a target SNR.
    /// `clean` is open above and `extreme` is sampled from `[-5, 0)`.
    pub fn sampling_interval(self) -> (f64, f64) {
        match self {
            NoiseClass::Clean => (20.0, 30.0),
            NoiseClass::Mild => (10.0, 20.0),
            NoiseClass::Moderate => (5.0, 10.0),
            NoiseClass::Severe => (0.0, 5.0),
            NoiseClass::Extreme => (-5.0, 0.0),
        }
    }
}

impl ReverbClass {
    pub fn degradation_rank(self) -> u8 {
        self.index() as u8
    }
}

pub fn snr_to_noise_class(snr_db: f64) -> NoiseClass {
    if snr_db >= 20.0 {
        NoiseClass::Clean
    } else if snr_db >= 10.0 {
        NoiseClass::Mild
    } else if snr_db >= 5.0 {
        NoiseClass::Moderate
    } else if snr_db >= 0.0 {
        NoiseClass::Severe
    } else {
        NoiseClass::Extreme
    }
}

pub fn rt60_to_reverb_class(rt60_secs: f64) -> ReverbClass {
    if rt60_secs <= 0.3 {
        ReverbClass::Minimal
    } else if rt60_secs <= 0.6 {
        ReverbClass::Slight
    } else if rt60_secs <= 1.0 {
        ReverbClass::Moderate
    } else if rt60_secs <= 1.5 {
        ReverbClass::Heavy
    } else {
        ReverbClass::Extreme
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentLabels {
    pub noise: NoiseClass,
    pub reverb: ReverbClass,
    pub target_snr: Option<f64>,
    pub rt60: Option<f64>,
}

impl EnvironmentLabels {
    pub fn clean() -> Self {
        EnvironmentLabels {
            noise: NoiseClass::Clean,
            reverb: ReverbClass::Minimal,
            target_snr: None,
            rt60: None,
        }
    }

    /// Labels for a recording with the given classes and no provenance.
    pub fn from_classes(noise: NoiseClass, reverb: ReverbClass) -> Self {
        EnvironmentLabels {
            noise,
            reverb,
            target_snr: None,
            rt60: None,
        }
    }

    pub fn degradation_rank(&self) -> u8 {
        self.noise.degradation_rank().max(self.reverb.degradation_rank())
    }
}

fn check_rates(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.sample_rate() != b.sample_rate() {
        return Err(Error::Config(format!(
            "sample rate mismatch: {} Hz vs {} Hz",
            a.sample_rate(),
            b.sample_rate()
        )));
    }
    Ok(())
}

/// Noise scale `alpha` so that `10 log10(sum s^2 / sum (alpha n)^2)` equals
/// `target_snr_db` over the first `speech.len()` noise samples.
pub fn solve_noise_scale(speech: &Waveform, noise: &Waveform, target_snr_db: f64) -> Result<f64> {
    check_rates(speech, noise)?;
    if noise.len() < speech.len() {
        return Err(Error::Config(format!(
            "noise has {} samples but speech has {}; align it first",
            noise.len(),
            speech.len()
        )));
    }
    let es = speech.energy();
    let en: f64 = noise.samples()[..speech.len()]
        .iter()
        .map(|&n| (n as f64) * (n as f64))
        .sum();
    if es == 0.0 {
        return Err(Error::DegenerateSignal("speech is silent".into()));
    }
    if en == 0.0 {
        return Err(Error::DegenerateSignal("noise is silent over the mixed region".into()));
    }
    Ok((es / (en * 10f64.powf(target_snr_db / 10.0))).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixResult {
    pub waveform: Waveform,
    pub clipped: usize,
}

impl MixResult {
    /// More than 1% of samples were hard-clipped.
    pub fn clip_warning(&self) -> bool {
        self.clipped * 100 > self.waveform.len()
    }
}

/// `speech + alpha * noise`, hard-clipped to `[-1, 1]`.
pub fn mix_noise(speech: &Waveform, noise: &Waveform, alpha: f64) -> Result<MixResult> {
    check_rates(speech, noise)?;
    if noise.len() < speech.len() {
        return Err(Error::Config("noise is shorter than speech".into()));
    }
    let mut clipped = 0;
    let samples = speech
        .samples()
        .iter()
        .zip(noise.samples())
        .map(|(&s, &n)| {
            let v = s as f64 + alpha * n as f64;
            if v.abs() > 1.0 {
                clipped += 1;
            }
            v.clamp(-1.0, 1.0) as f32
        })
        .collect();
    Ok(MixResult {
        waveform: Waveform::new(samples, speech.sample_rate())?,
        clipped,
    })
}

/// SNR of `mixture` against the clean `speech` it was built from.
pub fn measured_snr(speech: &Waveform, mixture: &Waveform) -> f64 {
    let es = speech.energy();
    let en: f64 = speech
        .samples()
        .iter()
        .zip(mixture.samples())
        .map(|(&s, &m)| {
            let d = m as f64 - s as f64;
            d * d
        })
        .sum();
    10.0 * (es / en).log10()
}

/// Brings `noise` to exactly `len` samples: shorter noise is tiled from a
/// random circular offset, longer noise is cut at a random window.
pub fn fit_noise_length<R: Rng>(noise: &Waveform, len: usize, rng: &mut R) -> Result<Waveform> {
    let src = noise.samples();
    let samples = if src.len() >= len {
        let start = rng.gen_range(0..=src.len() - len);
        src[start..start + len].to_vec()
    } else {
        let offset = rng.gen_range(0..src.len());
        (0..len).map(|i| src[(offset + i) % src.len()]).collect()
    };
    Waveform::new(samples, noise.sample_rate())
}

/// Broadband RT60 in seconds.
pub fn estimate_rt60(rir: &Waveform) -> Result<f64> {
    if rir.duration_secs() < 0.1 {
        return Err(Error::InvalidWaveform(format!(
            "RIR is {:.3} s long; at least 0.1 s is required",
            rir.duration_secs()
        )));
    }
    if rir.is_silent() {
        return Err(Error::DegenerateSignal("RIR is silent".into()));
    }
    let sr = rir.sample_rate() as f64;
    // Schroeder backward integration
    let mut edc = vec![0.0f64; rir.len()];
    let mut acc = 0.0;
    for (i, &h) in rir.samples().iter().enumerate().rev() {
        acc += (h as f64) * (h as f64);
        edc[i] = acc;
    }
    let total = edc[0];
    let mut reached = false;
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    for (i, &e) in edc.iter().enumerate() {
        let db = 10.0 * (e / total).log10();
        if db < -35.0 {
            reached = true;
            break;
        }
        if db <= -5.0 {
            let t = i as f64 / sr;
            n += 1.0;
            sx += t;
            sy += db;
            sxx += t * t;
            sxy += t * db;
        }
    }
    if !reached || n < 2.0 {
        return Err(Error::InsufficientDecay);
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    // also rejects NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(slope < 0.0) {
        return Err(Error::InsufficientDecay);
    }
    Ok(-60.0 / slope)
}

/// Linear convolution truncated to the speech length and rescaled to the
/// input peak.
pub fn convolve_rir(speech: &Waveform, rir: &Waveform) -> Result<Waveform> {
    check_rates(speech, rir)?;
    let n = speech.len();
    let x = speech.samples();
    let h = rir.samples();
    let out: Vec<f64> = if h.len() <= 64 {
        (0..n)
            .map(|i| {
                h.iter()
                    .enumerate()
                    .take(i + 1)
                    .map(|(k, &hk)| hk as f64 * x[i - k] as f64)
                    .sum()
            })
            .collect()
    } else {
        let size = (n + h.len() - 1).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        let pad = |v: &[f32]| -> Vec<Complex<f64>> {
            let mut buf: Vec<Complex<f64>> = v.iter().map(|&s| Complex::new(s as f64, 0.0)).collect();
            buf.resize(size, Complex::new(0.0, 0.0));
            buf
        };
        let mut a = pad(x);
        let mut b = pad(h);
        fwd.process(&mut a);
        fwd.process(&mut b);
        for (p, q) in a.iter_mut().zip(&b) {
            *p *= q;
        }
        inv.process(&mut a);
        a.iter().take(n).map(|c| c.re / size as f64).collect()
    };
    let out_peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let in_peak = speech.peak() as f64;
    if out_peak == 0.0 || in_peak == 0.0 {
        return Err(Error::DegenerateSignal("convolution output is silent".into()));
    }
    let gain = in_peak / out_peak;
    Waveform::new(
        out.into_iter()
            .map(|v| (v * gain).clamp(-1.0, 1.0) as f32)
            .collect(),
        speech.sample_rate(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CorpusKind {
    #[serde(rename = "voxceleb-like")]
    VoxcelebLike,
    #[serde(rename = "libritts-like")]
    LibrittsLike,
}

impl CorpusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusKind::VoxcelebLike => "voxceleb-like",
            CorpusKind::LibrittsLike => "libritts-like",
        }
    }
}

impl std::str::FromStr for CorpusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "voxceleb-like" | "voxceleb" => Ok(CorpusKind::VoxcelebLike),
            "libritts-like" | "libritts" => Ok(CorpusKind::LibrittsLike),
            other => Err(Error::Config(format!("unknown corpus kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub corpus_kind: CorpusKind,
    pub apply_noise: bool,
    pub apply_reverb: bool,
    pub target_snr: Option<f64>,
    pub noise_id: Option<String>,
    pub rir_id: Option<String>,
    /// Seed for the noise alignment offset.
    pub mix_seed: u64,
}

impl AugmentationPlan {
    pub fn clean(corpus_kind: CorpusKind) -> Self {
        AugmentationPlan {
            corpus_kind,
            apply_noise: false,
            apply_reverb: false,
            target_snr: None,
            noise_id: None,
            rir_id: None,
            mix_seed: 0,
        }
    }
}

const NOISY_CLASSES: [NoiseClass; 4] = [
    NoiseClass::Mild,
    NoiseClass::Moderate,
    NoiseClass::Severe,
    NoiseClass::Extreme,
];

/// Draws one augmentation plan.
///
/// voxceleb-like: noise and reverb independently with p = 0.5.
/// libritts-like: noise-only, reverb-only, joint with p = 0.3 each, clean 0.1.
/// A target SNR picks a noisy class uniformly, then a value uniformly in its
/// interval. Bank ids are drawn uniformly from the given lists.
pub fn sample_augmentation(
    kind: CorpusKind,
    seed: u64,
    noise_ids: &[String],
    rir_ids: &[String],
) -> Result<AugmentationPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (apply_noise, apply_reverb) = match kind {
        CorpusKind::VoxcelebLike => (rng.gen_bool(0.5), rng.gen_bool(0.5)),
        CorpusKind::LibrittsLike => {
            let u: f64 = rng.gen();
            if u < 0.3 {
                (true, false)
            } else if u < 0.6 {
                (false, true)
            } else if u < 0.9 {
                (true, true)
            } else {
                (false, false)
            }
        }
    };
    let mut plan = AugmentationPlan::clean(kind);
    plan.apply_noise = apply_noise;
    plan.apply_reverb = apply_reverb;
    if apply_noise {
        let class = NOISY_CLASSES[rng.gen_range(0..NOISY_CLASSES.len())];
        let (lo, hi) = class.sampling_interval();
        plan.target_snr = Some(rng.gen_range(lo..hi));
        plan.noise_id = Some(
            noise_ids
                .choose(&mut rng)
                .ok_or_else(|| Error::Config("noise bank is empty".into()))?
                .clone(),
        );
    }
    if apply_reverb {
        plan.rir_id = Some(
            rir_ids
                .choose(&mut rng)
                .ok_or_else(|| Error::Config("RIR bank is empty".into()))?
                .clone(),
        );
    }
    plan.mix_seed = rng.gen();
    Ok(plan)
}

#[derive(Debug, Clone, Default)]
pub struct NoiseBank {
    pub entries: BTreeMap<String, Waveform>,
}

#[derive(Debug, Clone)]
pub struct RirEntry {
    pub waveform: Waveform,
    /// `None` when the decay is too short to fit; labeled `minimal`.
    pub rt60: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RirBank {
    pub entries: BTreeMap<String, RirEntry>,
}

impl NoiseBank {
    pub fn ids(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }
}

impl RirBank {
    pub fn ids(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn insert(&mut self, id: impl Into<String>, waveform: Waveform) {
        let rt60 = estimate_rt60(&waveform).ok();
        self.entries.insert(id.into(), RirEntry { waveform, rt60 });
    }
}

/// One row of a bank index: `id<TAB>path[<TAB>rt60]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BankIndexRow {
    pub id: String,
    pub path: String,
    pub rt60: Option<f64>,
}

pub fn parse_bank_index(text: &str) -> Result<Vec<BankIndexRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() < 2 {
            return Err(Error::Row {
                line: i + 1,
                message: "expected id<TAB>path[<TAB>rt60]".into(),
            });
        }
        let rt60 = match cols.get(2) {
            Some(v) if !v.is_empty() => Some(v.parse::<f64>().map_err(|_| Error::Row {
                line: i + 1,
                message: format!("bad rt60 {v:?}"),
            })?),
            _ => None,
        };
        rows.push(BankIndexRow {
            id: cols[0].to_string(),
            path: cols[1].to_string(),
            rt60,
        });
    }
    Ok(rows)
}

fn read_index(dir: &Path) -> Result<Vec<BankIndexRow>> {
    let path = dir.join("index.tsv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_bank_index(&text)
}

pub fn load_noise_bank(dir: &Path) -> Result<NoiseBank> {
    let mut bank = NoiseBank::default();
    for row in read_index(dir)? {
        bank.entries.insert(row.id, read_wav(&dir.join(&row.path))?);
    }
    Ok(bank)
}

/// Loads an RIR bank; RT60 is computed for rows that do not cache it.
pub fn load_rir_bank(dir: &Path) -> Result<RirBank> {
    let mut bank = RirBank::default();
    for row in read_index(dir)? {
        let waveform = read_wav(&dir.join(&row.path))?;
        let rt60 = row.rt60.or_else(|| estimate_rt60(&waveform).ok());
        bank.entries.insert(row.id, RirEntry { waveform, rt60 });
    }
    Ok(bank)
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub waveform: Waveform,
    pub labels: EnvironmentLabels,
    pub clipped: usize,
}

/// Executes a plan: reverberation first, then additive noise.
pub fn apply_plan(
    speech: &Waveform,
    plan: &AugmentationPlan,
    noise_bank: &NoiseBank,
    rir_bank: &RirBank,
) -> Result<Augmented> {
    let mut labels = EnvironmentLabels::clean();
    let mut wave = speech.clone();
    let mut clipped = 0;
    if plan.apply_reverb {
        let id = plan
            .rir_id
            .as_ref()
            .ok_or_else(|| Error::Config("plan applies reverb without an RIR id".into()))?;
        let entry = rir_bank
            .entries
            .get(id)
            .ok_or_else(|| Error::Config(format!("RIR {id:?} is not in the bank")))?;
        wave = convolve_rir(&wave, &entry.waveform)?;
        labels.rt60 = entry.rt60;
        labels.reverb = entry.rt60.map_or(ReverbClass::Minimal, rt60_to_reverb_class);
    }
    if plan.apply_noise {
        let (id, snr) = plan
            .noise_id
            .as_ref()
            .zip(plan.target_snr)
            .ok_or_else(|| Error::Config("plan applies noise without an id and SNR".into()))?;
        let noise = noise_bank
            .entries
            .get(id)
            .ok_or_else(|| Error::Config(format!("noise {id:?} is not in the bank")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(plan.mix_seed);
        let aligned = fit_noise_length(noise, wave.len(), &mut rng)?;
        let alpha = solve_noise_scale(&wave, &aligned, snr)?;
        let mix = mix_noise(&wave, &aligned, alpha)?;
        clipped = mix.clipped;
        wave = mix.waveform;
        labels.target_snr = Some(snr);
        labels.noise = snr_to_noise_class(snr);
    }
    Ok(Augmented {
        waveform: wave,
        labels,
        clipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityLevel {
    Low,
    Moderate,
    Extreme,
}

impl SeverityLevel {
    pub const ALL: [SeverityLevel; 3] = [SeverityLevel::Low, SeverityLevel::Moderate, SeverityLevel::Extreme];

    pub fn from_rank(rank: u8) -> SeverityLevel {
        match rank {
            0 | 1 => SeverityLevel::Low,
            2 => SeverityLevel::Moderate,
            _ => SeverityLevel::Extreme,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSeverity {
    pub level: SeverityLevel,
    pub pair_rank: u8,
}

pub fn pair_severity(env1: &EnvironmentLabels, env2: &EnvironmentLabels) -> PairSeverity {
    let pair_rank = env1.degradation_rank().max(env2.degradation_rank());
    PairSeverity {
        level: SeverityLevel::from_rank(pair_rank),
        pair_rank,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropMode {
    Train,
    Eval,
}

impl std::str::FromStr for CropMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(CropMode::Train),
            "eval" => Ok(CropMode::Eval),
            other => Err(Error::Config(format!("unknown crop mode {other:?}"))),
        }
    }
}

pub const TRAIN_CROP_SECS: (f64, f64) = (3.0, 15.0);
pub const EVAL_CROP_SECS: f64 = 15.0;

#[derive(Debug, Clone)]
pub struct Crop {
    pub waveform: Waveform,
    pub start: usize,
    pub end: usize,
    /// Train-mode input shorter than the minimum crop; returned whole.
    pub too_short: bool,
}

pub fn crop_window(w: &Waveform, mode: CropMode, seed: u64) -> Result<Crop> {
    let sr = w.sample_rate() as f64;
    let len = w.len();
    let whole = |too_short| Crop {
        waveform: w.clone(),
        start: 0,
        end: len,
        too_short,
    };
    match mode {
        CropMode::Eval => {
            let win = (EVAL_CROP_SECS * sr).round() as usize;
            if len <= win {
                return Ok(whole(false));
            }
            let start = (len - win) / 2;
            Ok(Crop {
                waveform: w.slice(start, start + win)?,
                start,
                end: start + win,
                too_short: false,
            })
        }
        CropMode::Train => {
            let (lo, hi) = TRAIN_CROP_SECS;
            let min_len = (lo * sr).round() as usize;
            if len < min_len {
                return Ok(whole(true));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let secs = rng.gen_range(lo..=hi);
            let dur = ((secs * sr).round() as usize).clamp(min_len, len);
            let start = rng.gen_range(0..=len - dur);
            Ok(Crop {
                waveform: w.slice(start, start + dur)?,
                start,
                end: start + dur,
                too_short: false,
            })
        }
    }
}
