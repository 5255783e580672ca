//! Supervision text: single-utterance and pair targets, compatibility QA,
//! and the three-block verification-reasoning target.
//!
//! All output is canonical: one phrasing per cell, sentences joined by a
//! single space, blocks separated by one blank line, and a trailing newline
//! after the last block.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::environment::{EnvironmentLabels, NoiseClass, ReverbClass, SeverityLevel};
use crate::error::{Error, Result};
use crate::support::{CompatState, ProfileAttribute, SupportAssessment, SupportLevel};
use crate::taxonomy::{AgeBin, BrightnessClass, ClosedClass, Gender, PitchClass, Region, SpeakerProfile};
use crate::trial::{TrialRecord, Verdict};

pub const ENVIRONMENT_HEADER: &str = "ENVIRONMENT_STATUS:";
pub const PROFILE_HEADER: &str = "PROFILE_COMPATIBILITY:";
pub const DECISION_HEADER: &str = "DECISION:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Gender,
    Age,
    Region,
    Voice,
    FullProfile,
    Noise,
    Reverb,
    JointAcoustic,
    Sv,
    NoiseComparison,
    ReverbComparison,
    CompatGender,
    CompatAge,
    CompatRegion,
    CompatVoice,
    CompatHolistic,
    Svr,
}

impl Task {
    pub const ALL: [Task; 17] = [
        Task::Gender,
        Task::Age,
        Task::Region,
        Task::Voice,
        Task::FullProfile,
        Task::Noise,
        Task::Reverb,
        Task::JointAcoustic,
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

    pub fn key(self) -> &'static str {
        match self {
            Task::Gender => "gender",
            Task::Age => "age",
            Task::Region => "region",
            Task::Voice => "voice",
            Task::FullProfile => "full_profile",
            Task::Noise => "noise",
            Task::Reverb => "reverb",
            Task::JointAcoustic => "joint_acoustic",
            Task::Sv => "sv",
            Task::NoiseComparison => "noise_comparison",
            Task::ReverbComparison => "reverb_comparison",
            Task::CompatGender => "compat_gender",
            Task::CompatAge => "compat_age",
            Task::CompatRegion => "compat_region",
            Task::CompatVoice => "compat_voice",
            Task::CompatHolistic => "compat_holistic",
            Task::Svr => "svr",
        }
    }

    /// Takes two utterances as input.
    pub fn is_pair(self) -> bool {
        matches!(
            self,
            Task::Sv
                | Task::NoiseComparison
                | Task::ReverbComparison
                | Task::CompatGender
                | Task::CompatAge
                | Task::CompatRegion
                | Task::CompatVoice
                | Task::CompatHolistic
                | Task::Svr
        )
    }

    /// Stage-1 template table entry (short and sentence forms).
    pub fn is_stage1(self) -> bool {
        !matches!(
            self,
            Task::CompatGender
                | Task::CompatAge
                | Task::CompatRegion
                | Task::CompatVoice
                | Task::CompatHolistic
                | Task::Svr
        )
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Task> {
        Task::ALL
            .into_iter()
            .find(|t| t.key() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetForm {
    Short,
    Sentence,
}

impl FromStr for TargetForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "short" => Ok(TargetForm::Short),
            "sentence" => Ok(TargetForm::Sentence),
            other => Err(Error::Config(format!("unknown target form {other:?}"))),
        }
    }
}

/// Which recording carries more of a degradation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    Speech1,
    Speech2,
    Similar,
}

impl Comparison {
    pub fn from_ranks(rank1: u8, rank2: u8) -> Comparison {
        match rank1.cmp(&rank2) {
            std::cmp::Ordering::Greater => Comparison::Speech1,
            std::cmp::Ordering::Less => Comparison::Speech2,
            std::cmp::Ordering::Equal => Comparison::Similar,
        }
    }

    fn short(self) -> &'static str {
        match self {
            Comparison::Speech1 => "speech1",
            Comparison::Speech2 => "speech2",
            Comparison::Similar => "similar",
        }
    }
}

/// Slot values available to the Stage-1 templates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stage1Labels {
    pub gender: Option<Gender>,
    pub age: Option<AgeBin>,
    pub region: Option<Region>,
    pub pitch: Option<PitchClass>,
    pub brightness: Option<BrightnessClass>,
    pub noise: Option<NoiseClass>,
    pub reverb: Option<ReverbClass>,
    pub verdict: Option<Verdict>,
    pub noise_comparison: Option<Comparison>,
    pub reverb_comparison: Option<Comparison>,
}

impl Stage1Labels {
    pub fn from_profile(profile: &SpeakerProfile) -> Self {
        Stage1Labels {
            gender: profile.gender,
            age: profile.age,
            region: profile.region,
            pitch: profile.pitch,
            brightness: profile.brightness,
            ..Default::default()
        }
    }

    pub fn with_environment(mut self, env: &EnvironmentLabels) -> Self {
        self.noise = Some(env.noise);
        self.reverb = Some(env.reverb);
        self
    }

    pub fn for_pair(trial: &TrialRecord) -> Self {
        Stage1Labels {
            verdict: Some(trial.gt_label),
            noise_comparison: Some(Comparison::from_ranks(
                trial.env1.noise.degradation_rank(),
                trial.env2.noise.degradation_rank(),
            )),
            reverb_comparison: Some(Comparison::from_ranks(
                trial.env1.reverb.degradation_rank(),
                trial.env2.reverb.degradation_rank(),
            )),
            ..Default::default()
        }
    }
}

fn slot<T>(value: Option<T>, name: &'static str) -> Result<T> {
    value.ok_or(Error::MissingSlot(name))
}

/// "in the 26–35 range"
pub fn age_phrase(age: AgeBin) -> String {
    format!("in the {} range", age.label())
}

fn voice_phrase(l: &Stage1Labels) -> Result<String> {
    Ok(format!(
        "{} voice and {} {}-range pitch",
        slot(l.brightness, "brightness")?,
        slot(l.pitch, "pitch")?,
        slot(l.gender, "gender")?
    ))
}

pub fn render_stage1(task: Task, labels: &Stage1Labels, form: TargetForm) -> Result<String> {
    use TargetForm::{Sentence, Short};
    let l = labels;
    let text = match (task, form) {
        (Task::Gender, Short) => slot(l.gender, "gender")?.to_string(),
        (Task::Gender, Sentence) => format!("The speaker's gender is inferred to be {}.", slot(l.gender, "gender")?),
        (Task::Age, Short) => age_phrase(slot(l.age, "age")?),
        (Task::Age, Sentence) => format!("The speaker's age is {}.", age_phrase(slot(l.age, "age")?)),
        (Task::Region, Short) => slot(l.region, "region")?.to_string(),
        (Task::Region, Sentence) => format!("The speaker's regional background is {}.", slot(l.region, "region")?),
        (Task::Voice, Short) => voice_phrase(l)?,
        (Task::Voice, Sentence) => format!("The speaker has a {}.", voice_phrase(l)?),
        (Task::FullProfile, _) => {
            let voice = voice_phrase(l).ok();
            let atoms: Vec<String> = match form {
                Short => [
                    l.gender.map(|g| g.to_string()),
                    l.age.map(age_phrase),
                    l.region.map(|r| r.to_string()),
                    voice,
                ]
                .into_iter()
                .flatten()
                .collect(),
                Sentence => [
                    l.gender.map(|g| format!("The speaker is {g}.")),
                    l.age.map(|a| format!("The speaker is likely {}.", age_phrase(a))),
                    l.region.map(|r| format!("The speaker has a {r} regional background.")),
                    voice.map(|v| format!("The speaker has a {v}.")),
                ]
                .into_iter()
                .flatten()
                .collect(),
            };
            if atoms.is_empty() {
                return Err(Error::MissingSlot("profile"));
            }
            atoms.join(if form == Short { ", " } else { " " })
        }
        (Task::Noise, Short) => slot(l.noise, "noise_class")?.to_string(),
        (Task::Noise, Sentence) => format!("The recording has {} noise.", slot(l.noise, "noise_class")?),
        (Task::Reverb, Short) => slot(l.reverb, "reverb_class")?.to_string(),
        (Task::Reverb, Sentence) => format!("The recording has {} reverberation.", slot(l.reverb, "reverb_class")?),
        (Task::JointAcoustic, Short) => format!(
            "{} noise and {} reverberation",
            slot(l.noise, "noise")?,
            slot(l.reverb, "reverb")?
        ),
        (Task::JointAcoustic, Sentence) => format!(
            "The recording has {} noise and {} reverberation.",
            slot(l.noise, "noise_class")?,
            slot(l.reverb, "reverb_class")?
        ),
        (Task::Sv, Short) => slot(l.verdict, "verdict")?.to_string(),
        (Task::Sv, Sentence) => sv_sentence(slot(l.verdict, "verdict")?).to_string(),
        (Task::NoiseComparison, Short) => slot(l.noise_comparison, "noise_comparison")?.short().to_string(),
        (Task::NoiseComparison, Sentence) => match slot(l.noise_comparison, "noise_comparison")? {
            Comparison::Speech1 => "Speech 1 is noisier.",
            Comparison::Speech2 => "Speech 2 is noisier.",
            Comparison::Similar => "Both recordings have similar noise levels.",
        }
        .to_string(),
        (Task::ReverbComparison, Short) => slot(l.reverb_comparison, "reverb_comparison")?.short().to_string(),
        (Task::ReverbComparison, Sentence) => match slot(l.reverb_comparison, "reverb_comparison")? {
            Comparison::Speech1 => "Speech 1 is more reverberant.",
            Comparison::Speech2 => "Speech 2 is more reverberant.",
            Comparison::Similar => "Both recordings have similar reverberation levels.",
        }
        .to_string(),
        (other, _) => {
            return Err(Error::Config(format!("{other} is not a single-form template task")));
        }
    };
    Ok(text)
}

pub fn sv_sentence(verdict: Verdict) -> &'static str {
    match verdict {
        Verdict::Same => "These recordings are from the same speaker.",
        Verdict::Different => "These recordings are from different speakers.",
    }
}

/// Degree word shared by the voice and holistic summary sentences.
fn degree_word(state: CompatState) -> &'static str {
    match state {
        CompatState::Compatible => "similar",
        CompatState::Partial => "somewhat different",
        CompatState::Conflicting => "very different",
    }
}

/// One atomic comparison clause. Binary attributes render a mismatch as
/// "different"; a `Partial` state on them is treated as a mismatch.
pub fn render_compat_clause(attr: ProfileAttribute, state: CompatState) -> &'static str {
    use CompatState::*;
    match (attr, state) {
        (ProfileAttribute::Gender, Compatible) => "Gender is similar.",
        (ProfileAttribute::Gender, _) => "Gender is different.",
        (ProfileAttribute::Age, Compatible) => "The age ranges are similar.",
        (ProfileAttribute::Age, Partial) => "The age ranges are slightly different.",
        (ProfileAttribute::Age, Conflicting) => "The age ranges are very different.",
        (ProfileAttribute::Region, Compatible) => "Linguistic background is similar.",
        (ProfileAttribute::Region, _) => "Linguistic background is different.",
        (ProfileAttribute::Pitch, Compatible) => "Pitch is similar.",
        (ProfileAttribute::Pitch, Partial) => "Pitch is somewhat different.",
        (ProfileAttribute::Pitch, Conflicting) => "Pitch is very different.",
        (ProfileAttribute::Brightness, Compatible) => "Timbral brightness is similar.",
        (ProfileAttribute::Brightness, Partial) => "Timbral brightness is somewhat different.",
        (ProfileAttribute::Brightness, Conflicting) => "Timbral brightness is very different.",
    }
}

/// "Therefore, the vocal characteristics are …" keyed by the grouped voice
/// penalty: 0 similar, 1 somewhat different, 2+ very different.
pub fn render_voice_summary(voice_penalty: u32) -> String {
    let word = match voice_penalty {
        0 => "similar",
        1 => "somewhat different",
        _ => "very different",
    };
    format!("Therefore, the vocal characteristics are {word}.")
}

pub fn support_word(level: SupportLevel) -> &'static str {
    match level {
        SupportLevel::Supportive => degree_word(CompatState::Compatible),
        SupportLevel::Mixed => degree_word(CompatState::Partial),
        SupportLevel::Conflicting => degree_word(CompatState::Conflicting),
    }
}

pub fn render_holistic_summary(level: SupportLevel) -> String {
    format!("Therefore, the overall speaker profile is {}.", support_word(level))
}

/// Atomic clauses for every comparable attribute, in canonical order, plus
/// the overall summary when `holistic`.
pub fn render_compat_qa(support: &SupportAssessment, holistic: bool) -> String {
    let mut parts: Vec<String> = support
        .per_attribute
        .iter()
        .map(|(&a, &s)| render_compat_clause(a, s).to_string())
        .collect();
    if holistic {
        parts.push(render_holistic_summary(support.level));
    }
    parts.join(" ")
}

/// Stage-2 compatibility QA target for one axis (or the holistic variant).
pub fn render_compat_target(task: Task, support: &SupportAssessment) -> Result<String> {
    let clause = |attr: ProfileAttribute| -> Result<String> {
        support
            .per_attribute
            .get(&attr)
            .map(|&s| render_compat_clause(attr, s).to_string())
            .ok_or(Error::MissingSlot(attr.name()))
    };
    match task {
        Task::CompatGender => clause(ProfileAttribute::Gender),
        Task::CompatAge => clause(ProfileAttribute::Age),
        Task::CompatRegion => clause(ProfileAttribute::Region),
        Task::CompatVoice => {
            let mut parts: Vec<String> = [ProfileAttribute::Pitch, ProfileAttribute::Brightness]
                .into_iter()
                .filter_map(|a| clause(a).ok())
                .collect();
            if parts.is_empty() {
                return Err(Error::MissingSlot("voice"));
            }
            parts.push(render_voice_summary(support.voice_penalty));
            Ok(parts.join(" "))
        }
        Task::CompatHolistic => Ok(render_compat_qa(support, true)),
        other => Err(Error::Config(format!("{other} is not a compatibility task"))),
    }
}

/// Noise wording inside ENVIRONMENT_STATUS; `clean` reads "no background".
pub fn environment_noise_words(noise: NoiseClass) -> &'static str {
    match noise {
        NoiseClass::Clean => "no background",
        other => other.label(),
    }
}

pub fn render_environment_status(env1: &EnvironmentLabels, env2: &EnvironmentLabels) -> String {
    format!(
        "The first recording contains {} noise and {} reverberation. \
         The second recording contains {} noise and {} reverberation.",
        environment_noise_words(env1.noise),
        env1.reverb,
        environment_noise_words(env2.noise),
        env2.reverb
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseKind {
    Aligned,
    Mixed,
    Reversal,
}

impl CaseKind {
    pub const ALL: [CaseKind; 3] = [CaseKind::Aligned, CaseKind::Mixed, CaseKind::Reversal];
}

pub fn classify_case(level: SupportLevel, gt: Verdict) -> CaseKind {
    match (level, gt) {
        (SupportLevel::Supportive, Verdict::Same) | (SupportLevel::Conflicting, Verdict::Different) => CaseKind::Aligned,
        (SupportLevel::Supportive, Verdict::Different) | (SupportLevel::Conflicting, Verdict::Same) => {
            CaseKind::Reversal
        }
        (SupportLevel::Mixed, _) => CaseKind::Mixed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connector {
    Likewise,
    However,
    /// No connector word (the mixed + same cell).
    #[serde(rename = "none")]
    Omitted,
}

impl Connector {
    pub fn for_cell(level: SupportLevel, gt: Verdict) -> Connector {
        match (level, gt) {
            (SupportLevel::Supportive, Verdict::Same) | (SupportLevel::Conflicting, Verdict::Different) => {
                Connector::Likewise
            }
            (SupportLevel::Mixed, Verdict::Same) => Connector::Omitted,
            _ => Connector::However,
        }
    }
}

pub fn env_clause(level: SeverityLevel) -> &'static str {
    match level {
        SeverityLevel::Low => {
            "Environmental mismatch or degradation is limited, so the speaker-relevant vocal cues remain clear."
        }
        SeverityLevel::Moderate => {
            "Environmental mismatch or degradation is present, so the speaker-relevant vocal cues are partially degraded."
        }
        SeverityLevel::Extreme => {
            "Strong environmental mismatch or severe degradation substantially weakens the speaker-relevant vocal cues."
        }
    }
}

pub fn profile_summary(level: SupportLevel) -> &'static str {
    match level {
        SupportLevel::Supportive => "Across the speaker profile, many attributes are similar.",
        SupportLevel::Mixed => "Across the speaker profile, some attributes are similar, while others differ.",
        SupportLevel::Conflicting => "Across the speaker profile, several attributes differ.",
    }
}

/// Latent-cue sentence including its connector.
pub fn cue_sentence(level: SupportLevel, gt: Verdict) -> &'static str {
    match (level, gt) {
        (SupportLevel::Supportive, Verdict::Same) => {
            "Likewise, the latent speaker-identity cues also show strong similarity."
        }
        (SupportLevel::Conflicting, Verdict::Different) => {
            "Likewise, the latent speaker-identity cues also show clear differences."
        }
        (SupportLevel::Mixed, Verdict::Same) => "The latent speaker-identity cues show stronger similarity.",
        (SupportLevel::Conflicting, Verdict::Same) => {
            "However, the latent speaker-identity cues show stronger similarity."
        }
        (_, Verdict::Different) => "However, the latent speaker-identity cues show stronger separation.",
    }
}

pub fn verdict_sentence(gt: Verdict) -> &'static str {
    match gt {
        Verdict::Same => "Taken together, the recordings are determined to be from the same speaker.",
        Verdict::Different => "Taken together, the recordings are determined to be from different speakers.",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionInputs {
    pub severity: SeverityLevel,
    pub support: SupportLevel,
    pub gt_label: Verdict,
}

pub fn compose_decision(inputs: DecisionInputs) -> String {
    [
        env_clause(inputs.severity),
        profile_summary(inputs.support),
        cue_sentence(inputs.support, inputs.gt_label),
        verdict_sentence(inputs.gt_label),
    ]
    .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvrTarget {
    pub environment_status: String,
    pub profile_compatibility: String,
    pub decision: String,
    pub case_kind: CaseKind,
}

impl SvrTarget {
    pub fn text(&self) -> String {
        format!(
            "{ENVIRONMENT_HEADER}\n{}\n\n{PROFILE_HEADER}\n{}\n\n{DECISION_HEADER}\n{}\n",
            self.environment_status, self.profile_compatibility, self.decision
        )
    }
}

pub fn render_svr_target(trial: &TrialRecord) -> Result<SvrTarget> {
    for (which, p) in [("first", &trial.profile1), ("second", &trial.profile2)] {
        let missing = p.missing_fields();
        if !missing.is_empty() {
            return Err(Error::IneligibleTrial {
                trial_id: trial.trial_id.clone(),
                reason: format!("{which} profile lacks {}", missing.join(", ")),
            });
        }
    }
    let level = trial.support.level;
    Ok(SvrTarget {
        environment_status: render_environment_status(&trial.env1, &trial.env2),
        profile_compatibility: render_compat_qa(&trial.support, false),
        decision: compose_decision(DecisionInputs {
            severity: trial.severity.level,
            support: level,
            gt_label: trial.gt_label,
        }),
        case_kind: classify_case(level, trial.gt_label),
    })
}

/// Question text per task, loaded from a versioned template table.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub version: String,
    templates: BTreeMap<Task, String>,
}

const BUILTIN_PROMPTS: &str = include_str!("../data/prompts.v1.tsv");

static BUILTIN_PROMPT_TABLE: LazyLock<PromptTemplates> =
    LazyLock::new(|| BUILTIN_PROMPTS.parse().expect("builtin prompt table is valid"));

impl FromStr for PromptTemplates {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut version = String::from("unversioned");
        let mut templates = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if let Some(c) = line.strip_prefix('#') {
                if let Some(v) = c.trim().strip_prefix("prompts ") {
                    version = v.trim().to_string();
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (key, question) = line.split_once('\t').ok_or_else(|| Error::Row {
                line: i + 1,
                message: "expected <task>\\t<question>".into(),
            })?;
            templates.insert(key.parse::<Task>()?, question.trim().to_string());
        }
        Ok(PromptTemplates { version, templates })
    }
}

fn options<T: ClosedClass>() -> String {
    T::all().iter().map(|c| c.label()).collect::<Vec<_>>().join(", ")
}

fn pitch_options() -> String {
    "very low (bottom 10% of the speaker's gender), low (10th-30th percentile), normal (30th-70th), \
     high (70th-90th), very high (top 10%)"
        .to_string()
}

fn brightness_options() -> String {
    "muted (lowest 10% spectral centroid), mellow (10th-30th percentile), neutral (30th-70th), \
     bright (70th-90th), brilliant (top 10%)"
        .to_string()
}

fn noise_options() -> String {
    "clean (SNR >= 20 dB), mild (10-20 dB), moderate (5-10 dB), severe (0-5 dB), extreme (below 0 dB)".to_string()
}

fn reverb_options() -> String {
    "minimal (RT60 <= 0.3 s), slight (0.3-0.6 s), moderate (0.6-1.0 s), heavy (1.0-1.5 s), extreme (above 1.5 s)"
        .to_string()
}

impl PromptTemplates {
    pub fn builtin() -> &'static PromptTemplates {
        &BUILTIN_PROMPT_TABLE
    }

    pub fn load(path: &Path) -> Result<PromptTemplates> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    /// Closed-option question for `task`.
    pub fn render(&self, task: Task) -> Result<String> {
        let raw = self
            .templates
            .get(&task)
            .ok_or_else(|| Error::Config(format!("no prompt template for task {task}")))?;
        let opts = match task {
            Task::Gender => options::<Gender>(),
            Task::Age => options::<AgeBin>(),
            Task::Region => options::<Region>(),
            Task::Noise => noise_options(),
            Task::Reverb => reverb_options(),
            _ => String::new(),
        };
        Ok(raw
            .replace("{options}", &opts)
            .replace("{pitch_options}", &pitch_options())
            .replace("{brightness_options}", &brightness_options())
            .replace("{noise_options}", &noise_options())
            .replace("{reverb_options}", &reverb_options()))
    }
}

pub const INSTANCE_SCHEMA_VERSION: u32 = 1;

/// One training instance as written to the dataset JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub schema_version: u32,
    pub instance_id: String,
    pub task: Task,
    pub utterance_ids: Vec<String>,
    pub prompt: String,
    pub target: String,
    pub labels: BTreeMap<String, String>,
    pub case_kind: Option<CaseKind>,
    pub support_level: Option<SupportLevel>,
    pub severity: Option<SeverityLevel>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::support::compute_support;

    #[test]
    fn stage1_examples() {
        let l = Stage1Labels {
            gender: Some(Gender::Male),
            ..Default::default()
        };
        assert_eq!(
            render_stage1(Task::Gender, &l, TargetForm::Sentence).unwrap(),
            "The speaker's gender is inferred to be male."
        );
        let l = Stage1Labels {
            noise: Some(NoiseClass::Mild),
            ..Default::default()
        };
        assert_eq!(render_stage1(Task::Noise, &l, TargetForm::Short).unwrap(), "mild");
        let l = Stage1Labels {
            gender: Some(Gender::Female),
            pitch: Some(PitchClass::High),
            brightness: Some(BrightnessClass::Bright),
            ..Default::default()
        };
        assert_eq!(
            render_stage1(Task::Voice, &l, TargetForm::Sentence).unwrap(),
            "The speaker has a bright voice and high female-range pitch."
        );
        assert_eq!(
            render_stage1(Task::Voice, &l, TargetForm::Short).unwrap(),
            "bright voice and high female-range pitch"
        );
    }

    #[test]
    fn missing_slot_is_named() {
        let l = Stage1Labels::default();
        assert!(matches!(
            render_stage1(Task::Region, &l, TargetForm::Sentence),
            Err(Error::MissingSlot("region"))
        ));
        assert!(matches!(
            render_stage1(Task::FullProfile, &l, TargetForm::Sentence),
            Err(Error::MissingSlot("profile"))
        ));
    }

    #[test]
    fn full_profile_concatenates_available_atoms() {
        let l = Stage1Labels {
            gender: Some(Gender::Male),
            age: Some(AgeBin::Age26To35),
            ..Default::default()
        };
        assert_eq!(
            render_stage1(Task::FullProfile, &l, TargetForm::Sentence).unwrap(),
            "The speaker is male. The speaker is likely in the 26–35 range."
        );
        assert_eq!(
            render_stage1(Task::FullProfile, &l, TargetForm::Short).unwrap(),
            "male, in the 26–35 range"
        );
        assert_eq!(
            render_stage1(Task::Age, &l, TargetForm::Sentence).unwrap(),
            "The speaker's age is in the 26–35 range."
        );
    }

    #[test]
    fn compat_clauses() {
        assert_eq!(render_compat_clause(ProfileAttribute::Gender, CompatState::Compatible), "Gender is similar.");
        assert_eq!(
            render_compat_clause(ProfileAttribute::Age, CompatState::Partial),
            "The age ranges are slightly different."
        );
        assert_eq!(
            render_compat_clause(ProfileAttribute::Pitch, CompatState::Conflicting),
            "Pitch is very different."
        );
        assert_eq!(
            render_compat_clause(ProfileAttribute::Region, CompatState::Conflicting),
            "Linguistic background is different."
        );
    }

    fn profile() -> SpeakerProfile {
        SpeakerProfile {
            utterance_id: "u".into(),
            gender: Some(Gender::Male),
            age: Some(AgeBin::Age26To35),
            region: Some(Region::European),
            pitch: Some(PitchClass::Normal),
            brightness: Some(BrightnessClass::Neutral),
        }
    }

    #[test]
    fn compat_qa_holistic_and_not() {
        let s = compute_support(&profile(), &profile());
        assert_eq!(
            render_compat_qa(&s, true),
            "Gender is similar. The age ranges are similar. Linguistic background is similar. \
             Pitch is similar. Timbral brightness is similar. Therefore, the overall speaker profile is similar."
        );
        assert!(!render_compat_qa(&s, false).contains("Therefore"));
        let none = compute_support(&SpeakerProfile::empty("a"), &profile());
        assert_eq!(
            render_compat_qa(&none, true),
            "Therefore, the overall speaker profile is somewhat different."
        );
    }

    #[test]
    fn compat_voice_target() {
        let mut b = profile();
        b.pitch = Some(PitchClass::High);
        let s = compute_support(&profile(), &b);
        assert_eq!(
            render_compat_target(Task::CompatVoice, &s).unwrap(),
            "Pitch is somewhat different. Timbral brightness is similar. \
             Therefore, the vocal characteristics are somewhat different."
        );
        let none = compute_support(&SpeakerProfile::empty("a"), &profile());
        assert!(matches!(render_compat_target(Task::CompatAge, &none), Err(Error::MissingSlot("age"))));
    }

    #[test]
    fn case_classification() {
        assert_eq!(classify_case(SupportLevel::Supportive, Verdict::Different), CaseKind::Reversal);
        assert_eq!(classify_case(SupportLevel::Conflicting, Verdict::Different), CaseKind::Aligned);
        assert_eq!(classify_case(SupportLevel::Mixed, Verdict::Same), CaseKind::Mixed);
        assert_eq!(classify_case(SupportLevel::Mixed, Verdict::Different), CaseKind::Mixed);
        assert_eq!(classify_case(SupportLevel::Conflicting, Verdict::Same), CaseKind::Reversal);
    }

    #[test]
    fn prompts_render_every_task() {
        let p = PromptTemplates::builtin();
        assert_eq!(p.version, "v1");
        for t in Task::ALL {
            let q = p.render(t).unwrap();
            assert!(!q.contains('{'), "{t}: {q}");
        }
        assert!(p.render(Task::Noise).unwrap().contains("clean (SNR >= 20 dB)"));
        assert!(p.render(Task::Region).unwrap().contains("Middle Eastern/North African"));
    }
}
