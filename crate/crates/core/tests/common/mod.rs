//! Shared fixtures: profile/trial generators and a small synthetic corpus.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svrkit::audio::{write_wav, Waveform};
use svrkit::environment::{EnvironmentLabels, NoiseClass, ReverbClass};
use svrkit::taxonomy::{AgeBin, BrightnessClass, ClosedClass, Gender, PitchClass, Region, SpeakerProfile};
use svrkit::trial::{TrialRecord, Verdict};

pub fn pick<T: ClosedClass, R: Rng>(rng: &mut R) -> T {
    let all = T::all();
    all[rng.gen_range(0..all.len())]
}

pub fn full_profile<R: Rng>(id: &str, rng: &mut R) -> SpeakerProfile {
    SpeakerProfile {
        utterance_id: id.to_string(),
        gender: Some(pick::<Gender, _>(rng)),
        age: Some(pick::<AgeBin, _>(rng)),
        region: Some(pick::<Region, _>(rng)),
        pitch: Some(pick::<PitchClass, _>(rng)),
        brightness: Some(pick::<BrightnessClass, _>(rng)),
    }
}

pub fn random_env<R: Rng>(rng: &mut R) -> EnvironmentLabels {
    EnvironmentLabels::from_classes(pick::<NoiseClass, _>(rng), pick::<ReverbClass, _>(rng))
}

/// Random trial with complete profiles. Half the trials reuse a perturbed
/// copy of the first profile so every support level is well represented.
pub fn random_full_trial<R: Rng>(i: usize, rng: &mut R) -> TrialRecord {
    let p1 = full_profile(&format!("u{i}a"), rng);
    let p2 = if rng.gen_bool(0.5) {
        let mut p = p1.clone();
        p.utterance_id = format!("u{i}b");
        if rng.gen_bool(0.5) {
            p.pitch = Some(pick(rng));
        }
        if rng.gen_bool(0.3) {
            p.age = Some(pick(rng));
        }
        p
    } else {
        full_profile(&format!("u{i}b"), rng)
    };
    let gt = if rng.gen_bool(0.5) { Verdict::Same } else { Verdict::Different };
    TrialRecord::new(format!("t{i}"), gt, p1, p2, random_env(rng), random_env(rng))
}

pub fn profile(
    id: &str,
    g: Gender,
    a: AgeBin,
    r: Region,
    p: PitchClass,
    b: BrightnessClass,
) -> SpeakerProfile {
    SpeakerProfile {
        utterance_id: id.into(),
        gender: Some(g),
        age: Some(a),
        region: Some(r),
        pitch: Some(p),
        brightness: Some(b),
    }
}

/// Harmonic "voice" at `f0` whose harmonic roll-off sets its brightness.
pub fn voiced(f0: f64, rolloff: f64, secs: f64, seed: u64) -> Waveform {
    let sr = 16000.0;
    let n = (secs * sr) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let env = 0.6 + 0.4 * (2.0 * PI * 3.0 * t).sin().abs();
            let mut v = 0.0;
            for (k, ph) in phases.iter().enumerate() {
                let f = f0 * (k + 1) as f64;
                if f >= sr / 2.0 {
                    break;
                }
                v += rolloff.powi(k as i32) * (2.0 * PI * f * t + ph).sin();
            }
            env * v
        })
        .collect();
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in &mut x {
        *v *= 0.5 / peak;
    }
    Waveform::new(x.into_iter().map(|v| v as f32).collect(), 16000).unwrap()
}

pub fn white_noise(n: usize, amp: f32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..n).map(|_| rng.gen_range(-amp..amp)).collect(), 16000).unwrap()
}

/// Exponentially decaying noise RIR with energy down 60 dB at `rt60`.
pub fn exp_rir(rt60: f64, seed: u64) -> Waveform {
    let sr = 16000.0;
    let n = (1.5 * rt60 * sr) as usize;
    let tau = rt60 / (3.0 * std::f64::consts::LN_10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h: Vec<f32> = (0..n)
        .map(|i| {
            let g: f64 = rng.gen_range(-1.0..1.0);
            (g * (-(i as f64 / sr) / tau).exp()) as f32
        })
        .collect();
    h[0] = 1.0;
    Waveform::new(h, 16000).unwrap()
}

pub struct SyntheticCorpus {
    pub root: PathBuf,
    pub config: PathBuf,
    pub utterances: usize,
}

const NATIONALITIES: [&str; 6] = ["USA", "Germany", "United Kingdom", "Japan", "Brazil", "Australia"];

/// Writes a corpus of `speakers` synthetic speakers with two utterances each,
/// a CSV manifest, noise and RIR banks, a trial list and a run config.
/// `full_metadata = false` drops age and nationality, as in an audiobook
/// corpus.
pub fn write_corpus(root: &Path, speakers: usize, full_metadata: bool, seed: u64) -> SyntheticCorpus {
    let audio = root.join("audio");
    fs::create_dir_all(&audio).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = String::from("utterance_id,gender,age_years,nationality,path\n");
    let mut ids = Vec::new();
    for s in 0..speakers {
        let female = s % 2 == 1;
        let base_f0 = if female { rng.gen_range(170.0..260.0) } else { rng.gen_range(90.0..150.0) };
        let rolloff = rng.gen_range(0.55..0.9);
        let age: u32 = rng.gen_range(18..80);
        let nat = NATIONALITIES[rng.gen_range(0..NATIONALITIES.len())];
        for u in 0..2 {
            let id = format!("spk{s:03}_utt{u}");
            let w = voiced(base_f0 * rng.gen_range(0.97..1.03), rolloff, 1.0, rng.gen());
            write_wav(&audio.join(format!("{id}.wav")), &w).unwrap();
            let gender = if female { "female" } else { "male" };
            if full_metadata {
                manifest.push_str(&format!("{id},{gender},{age},{nat},{id}.wav\n"));
            } else {
                manifest.push_str(&format!("{id},{gender},,,{id}.wav\n"));
            }
            ids.push((s, id));
        }
    }
    fs::write(root.join("metadata.csv"), manifest).unwrap();

    let noise = root.join("noise");
    fs::create_dir_all(&noise).unwrap();
    write_wav(&noise.join("white.wav"), &white_noise(24000, 0.5, 11)).unwrap();
    write_wav(&noise.join("hum.wav"), &voiced(60.0, 0.5, 0.7, 12)).unwrap();
    fs::write(noise.join("index.tsv"), "white\twhite.wav\nhum\thum.wav\n").unwrap();

    let rirs = root.join("rir");
    fs::create_dir_all(&rirs).unwrap();
    let mut index = String::new();
    for (i, rt) in [0.2, 0.5, 0.9, 1.3].into_iter().enumerate() {
        let name = format!("room{i}.wav");
        write_wav(&rirs.join(&name), &exp_rir(rt, 20 + i as u64)).unwrap();
        index.push_str(&format!("room{i}\t{name}\n"));
    }
    fs::write(rirs.join("index.tsv"), index).unwrap();

    let mut trials = String::new();
    for s in 0..speakers {
        trials.push_str(&format!("1 spk{s:03}_utt0 spk{s:03}_utt1\n"));
        let other = (s + 1 + rng.gen_range(0..speakers - 1)) % speakers;
        trials.push_str(&format!("0 spk{s:03}_utt0 spk{other:03}_utt1\n"));
    }
    fs::write(root.join("trials.txt"), trials).unwrap();

    let kind = if full_metadata { "voxceleb-like" } else { "libritts-like" };
    let config = root.join("run.toml");
    fs::write(
        &config,
        format!(
            "global_seed = 7\ncorpus_kind = \"{kind}\"\naudio_root = \"audio\"\nmetadata = \"metadata.csv\"\n\
             noise_bank = \"noise\"\nrir_bank = \"rir\"\noutput_dir = \"out\"\ntrials = \"trials.txt\"\n"
        ),
    )
    .unwrap();
    SyntheticCorpus {
        root: root.to_path_buf(),
        config,
        utterances: ids.len(),
    }
}
