//! Reproducible jobs: cutoff fitting, dataset building and scoring.
//!
//! Every random choice is seeded from a hash of the global seed and the
//! utterance or trial id, so outputs do not depend on worker count or
//! scheduling. Work runs in parallel and is written in sorted id order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{read_wav, write_wav};
use crate::compose::{
    classify_case, render_compat_target, render_stage1, render_svr_target, CaseKind, InstanceRecord,
    PromptTemplates, Stage1Labels, TargetForm, Task, INSTANCE_SCHEMA_VERSION,
};
use crate::descriptors::{
    bin_brightness, bin_pitch, extract_descriptors, fit_cutoffs, CutoffRecord, DescriptorKind, DescriptorResult,
    PitchCutoffs,
};
use crate::environment::{
    apply_plan, crop_window, load_noise_bank, load_rir_bank, sample_augmentation, AugmentationPlan, CorpusKind,
    CropMode, EnvironmentLabels, NoiseBank, RirBank,
};
use crate::error::{Error, Result};
use crate::eval::{grounding_summary, parse_svr_trace, parse_verdict, subset_diagnostics, DiagnosticsReport, GroundingSummary};
use crate::taxonomy::{load_speaker_metadata, ClosedClass, CoverageStats, Gender, MetadataTable, RegionMap, SpeakerProfile};
use crate::trial::{TrialRecord, Verdict};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

fn default_seed() -> u64 {
    0
}

fn default_crop_mode() -> CropMode {
    CropMode::Eval
}

fn default_form() -> TargetForm {
    TargetForm::Sentence
}

/// Job configuration, read from a TOML file. Relative paths resolve
/// against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub global_seed: u64,
    pub corpus_kind: CorpusKind,
    pub audio_root: PathBuf,
    pub metadata: PathBuf,
    #[serde(default)]
    pub noise_bank: Option<PathBuf>,
    #[serde(default)]
    pub rir_bank: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Trial list; without one only single-utterance instances are built.
    #[serde(default)]
    pub trials: Option<PathBuf>,
    /// Where cutoff files live; defaults to `<output_dir>/cutoffs`.
    #[serde(default)]
    pub cutoffs_dir: Option<PathBuf>,
    #[serde(default)]
    pub region_map: Option<PathBuf>,
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    #[serde(default = "default_crop_mode")]
    pub crop_mode: CropMode,
    #[serde(default = "default_form")]
    pub stage1_form: TargetForm,
    /// Relative task weights keyed by task name. Missing tasks weigh 1;
    /// a weight of 0 disables the task.
    #[serde(default)]
    pub task_mix: BTreeMap<String, f64>,
    /// Tasks sampled per utterance (by weight, without replacement). When
    /// unset every enabled task is emitted.
    #[serde(default)]
    pub tasks_per_utterance: Option<usize>,
    #[serde(default)]
    pub tasks_per_trial: Option<usize>,
    #[serde(default)]
    pub write_audio: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.audio_root);
        fix(&mut self.metadata);
        fix(&mut self.output_dir);
        for p in [
            &mut self.noise_bank,
            &mut self.rir_bank,
            &mut self.trials,
            &mut self.cutoffs_dir,
            &mut self.region_map,
            &mut self.prompts,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn cutoffs_dir(&self) -> PathBuf {
        self.cutoffs_dir.clone().unwrap_or_else(|| self.output_dir.join("cutoffs"))
    }

    fn check_inputs(&self) -> Result<()> {
        let mut required = vec![("audio_root", &self.audio_root), ("metadata", &self.metadata)];
        for (name, p) in [
            ("noise_bank", &self.noise_bank),
            ("rir_bank", &self.rir_bank),
            ("trials", &self.trials),
            ("region_map", &self.region_map),
            ("prompts", &self.prompts),
        ] {
            if let Some(p) = p {
                required.push((name, p));
            }
        }
        for (name, p) in required {
            if !p.exists() {
                return Err(Error::Config(format!("{name} path {} does not exist", p.display())));
            }
        }
        for key in self.task_mix.keys() {
            key.parse::<Task>()?;
        }
        if let Some((k, w)) = self.task_mix.iter().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Config(format!("task weight for {k} must be finite and >= 0, got {w}")));
        }
        Ok(())
    }

    fn weight(&self, task: Task) -> f64 {
        self.task_mix.get(task.key()).copied().unwrap_or(1.0)
    }

    fn region_map(&self) -> Result<RegionMap> {
        match &self.region_map {
            Some(p) => RegionMap::load(p),
            None => Ok(RegionMap::builtin().clone()),
        }
    }
}

/// 64-bit seed from SHA-256 over the global seed and a key.
pub fn derive_seed(global_seed: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Runs `f` on a dedicated pool of `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Row {
                line: i + 1,
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn audio_path(cfg: &RunConfig, table: &MetadataTable, id: &str) -> PathBuf {
    match table.audio_paths.get(id) {
        Some(p) => cfg.audio_root.join(p),
        None => cfg.audio_root.join(format!("{id}.wav")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorRow {
    pub schema_version: u32,
    pub utterance_id: String,
    pub gender: Option<Gender>,
    pub descriptors: Option<DescriptorResult>,
    pub error: Option<String>,
}

fn descriptor_rows(cfg: &RunConfig, table: &MetadataTable) -> Result<Vec<DescriptorRow>> {
    let ids: Vec<&String> = table.profiles.keys().collect();
    ids.par_iter()
        .map(|id| {
            let wave = read_wav(&audio_path(cfg, table, id))?;
            let (descriptors, error) = match extract_descriptors(&wave) {
                Ok(d) => (Some(d), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Ok(DescriptorRow {
                schema_version: MANIFEST_SCHEMA_VERSION,
                utterance_id: (*id).clone(),
                gender: table.profiles[*id].gender,
                descriptors,
                error,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub schema_version: u32,
    pub corpus_kind: CorpusKind,
    pub utterances: usize,
    pub f0_failures: usize,
    pub f0_failure_ids: Vec<String>,
    pub descriptor_failures: usize,
    pub descriptor_failure_ids: Vec<String>,
    pub without_gender: usize,
    pub pitch_counts: BTreeMap<String, usize>,
    pub brightness_count: usize,
    pub metadata: CoverageStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedCutoffs {
    pub pitch: PitchCutoffs,
    pub brightness: crate::descriptors::PercentileCutoffs,
}

fn pitch_file(g: Gender) -> String {
    format!("pitch.{}.txt", g.label())
}

const BRIGHTNESS_FILE: &str = "brightness.pooled.txt";

/// Extracts descriptors over the corpus and writes per-gender pitch
/// cutoffs, pooled brightness cutoffs, `descriptors.jsonl` and an
/// extraction report into the cutoffs directory.
pub fn cmd_fit_cutoffs(cfg: &RunConfig) -> Result<ExtractionReport> {
    cfg.check_inputs()?;
    let table = load_speaker_metadata(&cfg.metadata, &cfg.region_map()?)?;
    let rows = descriptor_rows(cfg, &table)?;
    let mut f0_by_gender: BTreeMap<Gender, Vec<f64>> = BTreeMap::new();
    let mut centroids = Vec::new();
    let mut report = ExtractionReport {
        schema_version: MANIFEST_SCHEMA_VERSION,
        corpus_kind: cfg.corpus_kind,
        utterances: rows.len(),
        f0_failures: 0,
        f0_failure_ids: Vec::new(),
        descriptor_failures: 0,
        descriptor_failure_ids: Vec::new(),
        without_gender: 0,
        pitch_counts: BTreeMap::new(),
        brightness_count: 0,
        metadata: table.coverage.clone(),
    };
    for row in &rows {
        let Some(d) = row.descriptors else {
            report.descriptor_failures += 1;
            report.descriptor_failure_ids.push(row.utterance_id.clone());
            continue;
        };
        centroids.push(d.mean_centroid);
        match (d.mean_f0, row.gender) {
            (None, _) => {
                report.f0_failures += 1;
                report.f0_failure_ids.push(row.utterance_id.clone());
            }
            (Some(_), None) => report.without_gender += 1,
            (Some(f0), Some(g)) => f0_by_gender.entry(g).or_default().push(f0),
        }
    }
    let dir = cfg.cutoffs_dir();
    create_dir(&dir)?;
    let corpus = cfg.corpus_kind.as_str().to_string();
    let mut records = Vec::new();
    for &g in Gender::all() {
        let values = f0_by_gender.get(&g).cloned().unwrap_or_default();
        report.pitch_counts.insert(g.label().to_string(), values.len());
        let cutoffs = fit_cutoffs(&values)?;
        records.push((
            pitch_file(g),
            CutoffRecord {
                descriptor: DescriptorKind::F0,
                corpus: corpus.clone(),
                group: g.label().to_string(),
                count: values.len(),
                cutoffs,
            },
        ));
    }
    report.brightness_count = centroids.len();
    records.push((
        BRIGHTNESS_FILE.to_string(),
        CutoffRecord {
            descriptor: DescriptorKind::Centroid,
            corpus,
            group: "pooled".into(),
            count: centroids.len(),
            cutoffs: fit_cutoffs(&centroids)?,
        },
    ));
    for (name, rec) in records {
        let p = dir.join(name);
        fs::write(&p, rec.to_text()).map_err(|e| Error::io(&p, e))?;
    }
    write_jsonl(&dir.join("descriptors.jsonl"), &rows)?;
    write_json(&dir.join("extraction_report.json"), &report)?;
    Ok(report)
}

pub fn load_cutoffs(dir: &Path) -> Result<FittedCutoffs> {
    let read = |name: &str| -> Result<CutoffRecord> {
        let p = dir.join(name);
        let text = fs::read_to_string(&p)
            .map_err(|e| Error::Config(format!("cannot read {} ({e}); run fit-cutoffs first", p.display())))?;
        CutoffRecord::from_text(&text)
    };
    let mut pitch = PitchCutoffs::default();
    for &g in Gender::all() {
        pitch.insert(g, read(&pitch_file(g))?.cutoffs);
    }
    Ok(FittedCutoffs {
        pitch,
        brightness: read(BRIGHTNESS_FILE)?.cutoffs,
    })
}

/// Fills pitch and brightness from descriptors. Pitch needs both a voiced
/// F0 and a gender.
pub fn label_descriptors(profile: &mut SpeakerProfile, d: Option<&DescriptorResult>, cutoffs: &FittedCutoffs) {
    let Some(d) = d else { return };
    profile.brightness = Some(bin_brightness(d.mean_centroid, &cutoffs.brightness));
    if let (Some(f0), Some(g)) = (d.mean_f0, profile.gender) {
        profile.pitch = bin_pitch(f0, g, &cutoffs.pitch).ok();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub schema_version: u32,
    pub utterance_id: String,
    pub audio_path: String,
    pub profile: SpeakerProfile,
    pub descriptors: Option<DescriptorResult>,
    pub descriptor_error: Option<String>,
    pub plan: AugmentationPlan,
    pub environment: EnvironmentLabels,
    pub crop_start: usize,
    pub crop_end: usize,
    pub too_short: bool,
    pub clipped_samples: usize,
    pub clip_warning: bool,
}

/// A trial as listed in the trial file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub trial_id: String,
    pub label: Verdict,
    pub utt1: String,
    pub utt2: String,
}

fn parse_trial_label(s: &str) -> Option<Verdict> {
    match s.trim().to_lowercase().as_str() {
        "1" | "same" | "target" => Some(Verdict::Same),
        "0" | "different" | "nontarget" => Some(Verdict::Different),
        _ => None,
    }
}

#[derive(Deserialize)]
struct JsonTrial {
    trial_id: Option<String>,
    label: serde_json::Value,
    utt1: String,
    utt2: String,
}

/// Reads `label utt1 utt2` lines (label 1/0 or same/different), or JSONL
/// objects `{trial_id?, label, utt1, utt2}` for `.jsonl` files.
pub fn load_trial_list(path: &Path) -> Result<Vec<TrialEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let jsonl = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "ndjson"));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: String| Error::Row { line: i + 1, message: m };
        let default_id = format!("t{:06}", out.len());
        let entry = if jsonl {
            let t: JsonTrial = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let label_text = match &t.label {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            TrialEntry {
                trial_id: t.trial_id.unwrap_or(default_id),
                label: parse_trial_label(&label_text).ok_or_else(|| bad(format!("bad label {label_text:?}")))?,
                utt1: t.utt1,
                utt2: t.utt2,
            }
        } else {
            let cols: Vec<&str> = line.split_whitespace().collect();
            let [label, utt1, utt2] = cols[..] else {
                return Err(bad("expected <label> <utt1> <utt2>".into()));
            };
            TrialEntry {
                trial_id: default_id,
                label: parse_trial_label(label).ok_or_else(|| bad(format!("bad label {label:?}")))?,
                utt1: utt1.into(),
                utt2: utt2.into(),
            }
        };
        out.push(entry);
    }
    let mut seen = BTreeSet::new();
    for t in &out {
        if !seen.insert(&t.trial_id) {
            return Err(Error::DuplicateKey(t.trial_id.clone()));
        }
    }
    Ok(out)
}

/// Reference record per trial, used to score model outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReference {
    pub schema_version: u32,
    #[serde(flatten)]
    pub trial: TrialRecord,
    pub case_kind: CaseKind,
    pub sv_target: String,
    /// Present only when both profiles are complete.
    pub svr_target: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub schema_version: u32,
    pub corpus_kind: Option<CorpusKind>,
    pub global_seed: u64,
    pub utterances: usize,
    pub metadata: CoverageStats,
    pub metadata_row_errors: usize,
    pub metadata_warnings: usize,
    pub descriptor_failures: usize,
    pub clip_warnings: usize,
    pub too_short_crops: usize,
    pub trials_listed: usize,
    pub trials_built: usize,
    pub trials_missing_utterance: Vec<String>,
    pub svr_eligible: usize,
    pub svr_ineligible: usize,
    pub instances: usize,
    pub instances_per_task: BTreeMap<String, usize>,
    pub skipped_missing_slot: BTreeMap<String, usize>,
    pub case_kinds: BTreeMap<String, usize>,
    pub support_levels: BTreeMap<String, usize>,
}

const SINGLE_TASKS: [Task; 8] = [
    Task::Gender,
    Task::Age,
    Task::Region,
    Task::Voice,
    Task::FullProfile,
    Task::Noise,
    Task::Reverb,
    Task::JointAcoustic,
];

const PAIR_TASKS: [Task; 9] = [
    Task::Sv,
    Task::NoiseComparison,
    Task::ReverbComparison,
    Task::CompatGender,
    Task::CompatAge,
    Task::CompatRegion,
    Task::CompatVoice,
    Task::CompatHolistic,
    Task::Svr,
];

/// Enabled tasks, or a weighted sample of `k` of them without replacement.
fn select_tasks(cfg: &RunConfig, pool: &[Task], k: Option<usize>, seed: u64) -> Vec<Task> {
    let mut enabled: Vec<Task> = pool.iter().copied().filter(|&t| cfg.weight(t) > 0.0).collect();
    let Some(k) = k else { return enabled };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    while chosen.len() < k && !enabled.is_empty() {
        let total: f64 = enabled.iter().map(|&t| cfg.weight(t)).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut idx = enabled.len() - 1;
        for (i, &t) in enabled.iter().enumerate() {
            u -= cfg.weight(t);
            if u < 0.0 {
                idx = i;
                break;
            }
        }
        chosen.push(enabled.remove(idx));
    }
    chosen.sort();
    chosen
}

fn profile_labels(p: &SpeakerProfile, env: &EnvironmentLabels) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: Option<&'static str>| {
        if let Some(v) = v {
            m.insert(k.to_string(), v.to_string());
        }
    };
    put("gender", p.gender.map(|v| v.label()));
    put("age", p.age.map(|v| v.label()));
    put("region", p.region.map(|v| v.label()));
    put("pitch", p.pitch.map(|v| v.label()));
    put("brightness", p.brightness.map(|v| v.label()));
    put("noise", Some(env.noise.label()));
    put("reverb", Some(env.reverb.label()));
    m
}

struct UtteranceOutput {
    record: UtteranceRecord,
    audio: Option<crate::audio::Waveform>,
}

#[allow(clippy::too_many_arguments)]
fn process_utterance(
    cfg: &RunConfig,
    table: &MetadataTable,
    id: &str,
    cutoffs: &FittedCutoffs,
    noise: &NoiseBank,
    rirs: &RirBank,
    noise_ids: &[String],
    rir_ids: &[String],
) -> Result<UtteranceOutput> {
    let path = audio_path(cfg, table, id);
    let wave = read_wav(&path)?;
    let (descriptors, descriptor_error) = match extract_descriptors(&wave) {
        Ok(d) => (Some(d), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut profile = table.profiles[id].clone();
    label_descriptors(&mut profile, descriptors.as_ref(), cutoffs);
    let crop = crop_window(&wave, cfg.crop_mode, derive_seed(cfg.global_seed, &format!("crop:{id}")))?;
    let plan = sample_augmentation(
        cfg.corpus_kind,
        derive_seed(cfg.global_seed, &format!("plan:{id}")),
        noise_ids,
        rir_ids,
    )?;
    let aug = apply_plan(&crop.waveform, &plan, noise, rirs)?;
    let clip_warning = aug.clipped * 100 > aug.waveform.len();
    Ok(UtteranceOutput {
        record: UtteranceRecord {
            schema_version: MANIFEST_SCHEMA_VERSION,
            utterance_id: id.to_string(),
            audio_path: path.display().to_string(),
            profile,
            descriptors,
            descriptor_error,
            plan,
            environment: aug.labels,
            crop_start: crop.start,
            crop_end: crop.end,
            too_short: crop.too_short,
            clipped_samples: aug.clipped,
            clip_warning,
        },
        audio: cfg.write_audio.then_some(aug.waveform),
    })
}

fn instance(
    id: String,
    task: Task,
    utterance_ids: Vec<String>,
    prompts: &PromptTemplates,
    target: String,
    labels: BTreeMap<String, String>,
) -> Result<InstanceRecord> {
    Ok(InstanceRecord {
        schema_version: INSTANCE_SCHEMA_VERSION,
        instance_id: id,
        task,
        utterance_ids,
        prompt: prompts.render(task)?,
        target,
        labels,
        case_kind: None,
        support_level: None,
        severity: None,
    })
}

/// Instances for one utterance; tasks whose slots are missing are skipped
/// and reported.
fn utterance_instances(
    cfg: &RunConfig,
    prompts: &PromptTemplates,
    rec: &UtteranceRecord,
) -> Result<(Vec<InstanceRecord>, Vec<Task>)> {
    let id = &rec.utterance_id;
    let tasks = select_tasks(
        cfg,
        &SINGLE_TASKS,
        cfg.tasks_per_utterance,
        derive_seed(cfg.global_seed, &format!("tasks:{id}")),
    );
    let labels = Stage1Labels::from_profile(&rec.profile).with_environment(&rec.environment);
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for task in tasks {
        match render_stage1(task, &labels, cfg.stage1_form) {
            Ok(target) => out.push(instance(
                format!("{id}:{task}"),
                task,
                vec![id.clone()],
                prompts,
                target,
                profile_labels(&rec.profile, &rec.environment),
            )?),
            Err(Error::MissingSlot(_)) => skipped.push(task),
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

fn trial_instances(
    cfg: &RunConfig,
    prompts: &PromptTemplates,
    reference: &TrialReference,
) -> Result<(Vec<InstanceRecord>, Vec<Task>)> {
    let trial = &reference.trial;
    let tasks = select_tasks(
        cfg,
        &PAIR_TASKS,
        cfg.tasks_per_trial,
        derive_seed(cfg.global_seed, &format!("tasks:{}", trial.trial_id)),
    );
    let mut labels = BTreeMap::new();
    labels.insert("verdict".to_string(), trial.gt_label.label().to_string());
    labels.insert("support_level".to_string(), trial.support.level.as_str().to_string());
    labels.insert("total_penalty".to_string(), trial.support.total_penalty.to_string());
    labels.insert("pair_rank".to_string(), trial.severity.pair_rank.to_string());
    for (a, s) in &trial.support.per_attribute {
        labels.insert(format!("compat_{a}"), format!("{s:?}").to_lowercase());
    }
    let stage1 = Stage1Labels::for_pair(trial);
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for task in tasks {
        let target = match task {
            Task::Svr => reference.svr_target.clone().ok_or(Error::MissingSlot("full profile")),
            t if t.is_stage1() => render_stage1(t, &stage1, cfg.stage1_form),
            t => render_compat_target(t, &trial.support),
        };
        match target {
            Ok(target) => {
                let mut rec = instance(
                    format!("{}:{task}", trial.trial_id),
                    task,
                    vec![trial.utt1.clone(), trial.utt2.clone()],
                    prompts,
                    target,
                    labels.clone(),
                )?;
                rec.case_kind = Some(reference.case_kind);
                rec.support_level = Some(trial.support.level);
                rec.severity = Some(trial.severity.level);
                out.push(rec);
            }
            Err(Error::MissingSlot(_)) => skipped.push(task),
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

pub fn make_reference(trial: TrialRecord) -> Result<TrialReference> {
    let svr_target = if trial.svr_eligible() {
        Some(render_svr_target(&trial)?.text())
    } else {
        None
    };
    Ok(TrialReference {
        schema_version: MANIFEST_SCHEMA_VERSION,
        case_kind: classify_case(trial.support.level, trial.gt_label),
        sv_target: crate::compose::sv_sentence(trial.gt_label).to_string(),
        svr_target,
        trial,
    })
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// Labels every utterance, augments it, renders the task mix and writes
/// `utterances.jsonl`, `instances.jsonl`, `trials.jsonl` and
/// `build_report.json` into the output directory.
pub fn cmd_build_dataset(cfg: &RunConfig) -> Result<BuildReport> {
    cfg.check_inputs()?;
    let table = load_speaker_metadata(&cfg.metadata, &cfg.region_map()?)?;
    let cutoffs = load_cutoffs(&cfg.cutoffs_dir())?;
    let prompts = match &cfg.prompts {
        Some(p) => PromptTemplates::load(p)?,
        None => PromptTemplates::builtin().clone(),
    };
    let noise = match &cfg.noise_bank {
        Some(d) => load_noise_bank(d)?,
        None => NoiseBank::default(),
    };
    let rirs = match &cfg.rir_bank {
        Some(d) => load_rir_bank(d)?,
        None => RirBank::default(),
    };
    let (noise_ids, rir_ids) = (noise.ids(), rirs.ids());
    let ids: Vec<&String> = table.profiles.keys().collect();
    let outputs: Vec<UtteranceOutput> = ids
        .par_iter()
        .map(|id| process_utterance(cfg, &table, id, &cutoffs, &noise, &rirs, &noise_ids, &rir_ids))
        .collect::<Result<_>>()?;

    create_dir(&cfg.output_dir)?;
    if cfg.write_audio {
        let dir = cfg.output_dir.join("audio");
        create_dir(&dir)?;
        for o in &outputs {
            if let Some(w) = &o.audio {
                write_wav(&dir.join(format!("{}.wav", sanitize(&o.record.utterance_id))), w)?;
            }
        }
    }
    let records: Vec<UtteranceRecord> = outputs.into_iter().map(|o| o.record).collect();
    let by_id: BTreeMap<&str, &UtteranceRecord> = records.iter().map(|r| (r.utterance_id.as_str(), r)).collect();

    let mut report = BuildReport {
        schema_version: MANIFEST_SCHEMA_VERSION,
        corpus_kind: Some(cfg.corpus_kind),
        global_seed: cfg.global_seed,
        utterances: records.len(),
        metadata: table.coverage.clone(),
        metadata_row_errors: table.row_errors.len(),
        metadata_warnings: table.warnings.len(),
        descriptor_failures: records.iter().filter(|r| r.descriptors.is_none()).count(),
        clip_warnings: records.iter().filter(|r| r.clip_warning).count(),
        too_short_crops: records.iter().filter(|r| r.too_short).count(),
        ..Default::default()
    };

    let trial_list = match &cfg.trials {
        Some(p) => load_trial_list(p)?,
        None => Vec::new(),
    };
    report.trials_listed = trial_list.len();
    let mut built = Vec::new();
    for t in trial_list {
        match (by_id.get(t.utt1.as_str()), by_id.get(t.utt2.as_str())) {
            (Some(a), Some(b)) => built.push(TrialRecord::new(
                t.trial_id,
                t.label,
                a.profile.clone(),
                b.profile.clone(),
                a.environment,
                b.environment,
            )),
            _ => report.trials_missing_utterance.push(t.trial_id),
        }
    }
    let references: Vec<TrialReference> = built.into_par_iter().map(make_reference).collect::<Result<_>>()?;
    report.trials_built = references.len();
    report.svr_eligible = references.iter().filter(|r| r.svr_target.is_some()).count();
    report.svr_ineligible = references.len() - report.svr_eligible;
    for r in &references {
        *report.case_kinds.entry(format!("{:?}", r.case_kind).to_lowercase()).or_default() += 1;
        *report.support_levels.entry(r.trial.support.level.as_str().to_string()).or_default() += 1;
    }

    let single: Vec<(Vec<InstanceRecord>, Vec<Task>)> = records
        .par_iter()
        .map(|r| utterance_instances(cfg, &prompts, r))
        .collect::<Result<_>>()?;
    let pair: Vec<(Vec<InstanceRecord>, Vec<Task>)> = references
        .par_iter()
        .map(|r| trial_instances(cfg, &prompts, r))
        .collect::<Result<_>>()?;
    let mut instances = Vec::new();
    for (inst, skipped) in single.into_iter().chain(pair) {
        for t in skipped {
            *report.skipped_missing_slot.entry(t.key().to_string()).or_default() += 1;
        }
        for i in &inst {
            *report.instances_per_task.entry(i.task.key().to_string()).or_default() += 1;
        }
        instances.extend(inst);
    }
    report.instances = instances.len();

    write_jsonl(&cfg.output_dir.join("utterances.jsonl"), &records)?;
    write_jsonl(&cfg.output_dir.join("trials.jsonl"), &references)?;
    write_jsonl(&cfg.output_dir.join("instances.jsonl"), &instances)?;
    write_json(&cfg.output_dir.join("build_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Sv,
    Svr,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sv" => Ok(ScoreMode::Sv),
            "svr" => Ok(ScoreMode::Svr),
            other => Err(Error::Config(format!("unknown score mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub trial_id: String,
    pub generated_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub schema_version: u32,
    pub mode: ScoreMode,
    pub scored: usize,
    pub warnings: usize,
    /// Prediction ids with no reference trial; excluded.
    pub unmatched_prediction_ids: Vec<String>,
    /// Repeated prediction ids; the first occurrence is scored.
    pub duplicate_prediction_ids: Vec<String>,
    /// Trace predictions for trials without a reasoning target; excluded.
    pub ineligible_prediction_ids: Vec<String>,
    /// Reference trials with no prediction; not scored.
    pub missing_prediction_ids: Vec<String>,
    pub diagnostics: DiagnosticsReport,
    pub grounding: Option<GroundingSummary>,
}

impl ScoreReport {
    pub fn to_table(&self, baseline: Option<&ScoreReport>) -> String {
        let mut out = format!("mode: {:?}\nscored trials: {}\n", self.mode, self.scored).to_lowercase();
        out.push_str(&self.diagnostics.to_table(baseline.map(|b| &b.diagnostics)));
        if let Some(g) = &self.grounding {
            out.push_str(&format!(
                "format valid: {:.2}%\nattribute grounding (micro): {:.2}%\nattribute grounding (macro): {:.2}%\n\
                 support grounding: {:.2}%\nmajority support baseline: {:.2}%\n",
                100.0 * g.format_valid_rate,
                100.0 * g.attribute_grounding_micro,
                100.0 * g.attribute_grounding_macro,
                100.0 * g.support_grounding,
                100.0 * g.majority_support_baseline,
            ));
        }
        if self.warnings > 0 {
            out.push_str(&format!("warnings: {}\n", self.warnings));
        }
        out
    }
}

/// Scores predictions against references. Pure; see [`cmd_score`] for the
/// file-level job.
pub fn score_predictions(references: &[TrialReference], predictions: &[Prediction], mode: ScoreMode) -> Result<ScoreReport> {
    let by_id: BTreeMap<&str, &TrialReference> = references.iter().map(|r| (r.trial.trial_id.as_str(), r)).collect();
    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    let mut unmatched = Vec::new();
    let mut duplicates = Vec::new();
    let mut ineligible = Vec::new();
    for p in predictions {
        let Some(r) = by_id.get(p.trial_id.as_str()) else {
            unmatched.push(p.trial_id.clone());
            continue;
        };
        if mode == ScoreMode::Svr && r.svr_target.is_none() {
            ineligible.push(p.trial_id.clone());
            continue;
        }
        if seen.contains_key(p.trial_id.as_str()) {
            duplicates.push(p.trial_id.clone());
            continue;
        }
        seen.insert(&p.trial_id, &p.generated_text);
    }
    let missing: Vec<String> = references
        .iter()
        .filter(|r| mode == ScoreMode::Sv || r.svr_target.is_some())
        .filter(|r| !seen.contains_key(r.trial.trial_id.as_str()))
        .map(|r| r.trial.trial_id.clone())
        .collect();
    // score in reference order for stable output
    let scored: Vec<(&TrialReference, &str)> = references
        .iter()
        .filter_map(|r| seen.get(r.trial.trial_id.as_str()).map(|t| (r, *t)))
        .collect();
    let (verdicts, grounding) = match mode {
        ScoreMode::Sv => (
            scored.iter().map(|(r, t)| (r.trial.clone(), parse_verdict(t).label)).collect::<Vec<_>>(),
            None,
        ),
        ScoreMode::Svr => {
            let parsed: Vec<_> = scored.par_iter().map(|(_, t)| parse_svr_trace(t)).collect();
            let verdicts = scored
                .iter()
                .zip(&parsed)
                .map(|((r, _), p)| (r.trial.clone(), p.verdict))
                .collect::<Vec<_>>();
            let items: Vec<_> = parsed
                .into_iter()
                .zip(&scored)
                .map(|(p, (r, _))| (p, &r.trial.support))
                .collect();
            (verdicts, if items.is_empty() { None } else { Some(grounding_summary(&items)?) })
        }
    };
    let diagnostics = subset_diagnostics(&verdicts)?;
    Ok(ScoreReport {
        schema_version: MANIFEST_SCHEMA_VERSION,
        mode,
        scored: verdicts.len(),
        warnings: unmatched.len() + duplicates.len() + ineligible.len() + missing.len(),
        unmatched_prediction_ids: unmatched,
        duplicate_prediction_ids: duplicates,
        ineligible_prediction_ids: ineligible,
        missing_prediction_ids: missing,
        diagnostics,
        grounding,
    })
}

pub fn load_references(path: &Path) -> Result<Vec<TrialReference>> {
    read_jsonl(path)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    read_jsonl(path)
}

/// Scores a predictions file against `<output_dir>/trials.jsonl` and writes
/// the report as JSON and as a table next to `out` (default
/// `<output_dir>/score_report.json`).
pub fn cmd_score(cfg: &RunConfig, predictions: &Path, mode: ScoreMode, out: Option<&Path>) -> Result<ScoreReport> {
    let references = load_references(&cfg.output_dir.join("trials.jsonl"))?;
    let preds = load_predictions(predictions)?;
    let report = score_predictions(&references, &preds, mode)?;
    let json_path = out.map_or_else(|| cfg.output_dir.join("score_report.json"), Path::to_path_buf);
    if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_json(&json_path, &report)?;
    let table_path = json_path.with_extension("txt");
    fs::write(&table_path, report.to_table(None)).map_err(|e| Error::io(&table_path, e))?;
    Ok(report)
}

pub fn load_score_report(path: &Path) -> Result<ScoreReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Table for a saved score report, with deltas against `baseline`.
pub fn cmd_diagnose(report: &Path, baseline: Option<&Path>) -> Result<String> {
    let r = load_score_report(report)?;
    let b = baseline.map(load_score_report).transpose()?;
    Ok(r.to_table(b.as_ref()))
}

/// Writes the dataset's own targets as predictions, for self-scoring.
pub fn write_reference_predictions(references: &[TrialReference], mode: ScoreMode, path: &Path) -> Result<()> {
    let preds: Vec<Prediction> = references
        .iter()
        .filter_map(|r| {
            let text = match mode {
                ScoreMode::Sv => Some(r.sv_target.clone()),
                ScoreMode::Svr => r.svr_target.clone(),
            }?;
            Some(Prediction {
                trial_id: r.trial.trial_id.clone(),
                generated_text: text,
            })
        })
        .collect();
    write_jsonl(path, &preds)
}

/// Emits trace predictions with every `every`-th one cut just before its
/// DECISION header.
pub fn truncate_every(preds: &[Prediction], every: usize) -> Vec<Prediction> {
    preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut p = p.clone();
            if every > 0 && i % every == 0 {
                if let Some(pos) = p.generated_text.find(crate::compose::DECISION_HEADER) {
                    p.generated_text.truncate(pos);
                }
            }
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_depend_on_key_and_global_seed() {
        assert_eq!(derive_seed(7, "a"), derive_seed(7, "a"));
        assert_ne!(derive_seed(7, "a"), derive_seed(8, "a"));
        assert_ne!(derive_seed(7, "a"), derive_seed(7, "b"));
    }

    #[test]
    fn trial_list_formats() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        fs::write(&p, "1 a b\n0 a c\n\nsame b c\n").unwrap();
        let t = load_trial_list(&p).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t[1].label, Verdict::Different);
        assert_eq!(t[2].trial_id, "t000002");
        let p = dir.path().join("t.jsonl");
        fs::write(&p, "{\"trial_id\":\"x\",\"label\":1,\"utt1\":\"a\",\"utt2\":\"b\"}\n").unwrap();
        assert_eq!(load_trial_list(&p).unwrap()[0].label, Verdict::Same);
        fs::write(&p, "{\"label\":\"maybe\",\"utt1\":\"a\",\"utt2\":\"b\"}\n").unwrap();
        assert!(matches!(load_trial_list(&p), Err(Error::Row { line: 1, .. })));
    }

    #[test]
    fn task_selection_respects_weights() {
        let mut cfg: RunConfig = toml::from_str(
            "corpus_kind = \"voxceleb-like\"\naudio_root = \"a\"\nmetadata = \"m.csv\"\noutput_dir = \"o\"\n",
        )
        .unwrap();
        assert_eq!(select_tasks(&cfg, &SINGLE_TASKS, None, 1).len(), 8);
        cfg.task_mix.insert("age".into(), 0.0);
        let all = select_tasks(&cfg, &SINGLE_TASKS, None, 1);
        assert!(!all.contains(&Task::Age));
        let two = select_tasks(&cfg, &SINGLE_TASKS, Some(2), 5);
        assert_eq!(two, select_tasks(&cfg, &SINGLE_TASKS, Some(2), 5));
        assert_eq!(two.len(), 2);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let r: std::result::Result<RunConfig, _> = toml::from_str(
            "corpus_kind = \"voxceleb-like\"\naudio_root = \"a\"\nmetadata = \"m\"\noutput_dir = \"o\"\nbogus = 1\n",
        );
        assert!(r.is_err());
    }
}
