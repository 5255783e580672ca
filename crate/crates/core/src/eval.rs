//! Deterministic answer parsers, verification-trace validation, grounding
//! metrics and subset diagnostics.
//!
//! Parsers are strict: a closed-class answer must contain exactly one class
//! name as a whole-word, case-insensitive match. Shorter matches nested in a
//! longer one ("low" inside "very low") are discarded first. Anything else is
//! a parse failure, and failures always score as incorrect.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::compose::{
    classify_case, render_compat_clause, CaseKind, Connector, DECISION_HEADER, ENVIRONMENT_HEADER, PROFILE_HEADER,
};
use crate::environment::{NoiseClass, ReverbClass};
use crate::error::{Error, Result};
use crate::support::{assess_states, CompatState, ProfileAttribute, SupportAssessment, SupportLevel};
use crate::taxonomy::{AgeBin, BrightnessClass, ClosedClass, Gender, PitchClass, Region};
use crate::trial::{TrialRecord, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome<T> {
    pub label: Option<T>,
    pub failed: bool,
    pub matched_span: Option<String>,
}

impl<T> ParseOutcome<T> {
    pub fn failure() -> Self {
        ParseOutcome {
            label: None,
            failed: true,
            matched_span: None,
        }
    }

    pub fn success(label: T, span: impl Into<String>) -> Self {
        ParseOutcome {
            label: Some(label),
            failed: false,
            matched_span: Some(span.into()),
        }
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> ParseOutcome<U> {
        ParseOutcome {
            label: self.label.map(f),
            failed: self.failed,
            matched_span: self.matched_span,
        }
    }

    /// Correct only when parsing succeeded and the label equals `truth`.
    pub fn is_correct(&self, truth: &T) -> bool
    where
        T: PartialEq,
    {
        self.label.as_ref() == Some(truth)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// All whole-word, case-insensitive occurrences of `form` in `text`, as
/// byte ranges. ASCII case folding keeps byte offsets aligned.
fn word_matches(text: &str, form: &str) -> Vec<(usize, usize)> {
    let hay = text.to_ascii_lowercase();
    let needle = form.to_ascii_lowercase();
    if needle.is_empty() {
        return Vec::new();
    }
    let first = needle.chars().next().is_some_and(is_word_char);
    let last = needle.chars().next_back().is_some_and(is_word_char);
    hay.match_indices(&needle)
        .map(|(s, m)| (s, s + m.len()))
        .filter(|&(s, e)| {
            let before = hay[..s].chars().next_back().is_some_and(is_word_char);
            let after = hay[e..].chars().next().is_some_and(is_word_char);
            !(before && first) && !(after && last)
        })
        .collect()
}

/// Unique-match extraction over an arbitrary candidate list.
fn unique_match<T: Copy + Eq>(text: &str, candidates: &[(T, String)]) -> ParseOutcome<T> {
    let mut hits: Vec<(usize, usize, T)> = candidates
        .iter()
        .flat_map(|(label, form)| word_matches(text, form).into_iter().map(move |(s, e)| (s, e, *label)))
        .collect();
    let nested = |h: &(usize, usize, T), all: &[(usize, usize, T)]| {
        all.iter()
            .any(|o| o.0 <= h.0 && h.1 <= o.1 && (o.1 - o.0) > (h.1 - h.0))
    };
    let snapshot = hits.clone();
    hits.retain(|h| !nested(h, &snapshot));
    hits.sort_by_key(|h| (h.0, h.1));
    let mut distinct: Vec<T> = Vec::new();
    for h in &hits {
        if !distinct.contains(&h.2) {
            distinct.push(h.2);
        }
    }
    match distinct.as_slice() {
        [label] => {
            let h = hits[0];
            ParseOutcome::success(*label, &text[h.0..h.1])
        }
        _ => ParseOutcome::failure(),
    }
}

fn class_candidates<T: ClosedClass>() -> Vec<(T, String)> {
    T::all()
        .iter()
        .flat_map(|&c| c.surface_forms().into_iter().map(move |f| (c, f)))
        .collect()
}

/// Parses a free-text answer into a class of the closed taxonomy `T`.
pub fn parse_closed_answer<T: ClosedClass>(text: &str) -> ParseOutcome<T> {
    unique_match(text, &class_candidates::<T>())
}

/// [`parse_closed_answer`] keyed by attribute name; the label is returned
/// in canonical form.
pub fn parse_attribute_answer(text: &str, attribute: &str) -> Result<ParseOutcome<&'static str>> {
    fn go<T: ClosedClass>(text: &str) -> ParseOutcome<&'static str> {
        parse_closed_answer::<T>(text).map(|c| c.label())
    }
    Ok(match attribute {
        "gender" => go::<Gender>(text),
        "age" => go::<AgeBin>(text),
        "region" => go::<Region>(text),
        "pitch" => go::<PitchClass>(text),
        "brightness" => go::<BrightnessClass>(text),
        "noise" => go::<NoiseClass>(text),
        "reverb" => go::<ReverbClass>(text),
        "verdict" => parse_verdict(text).map(|v| v.label()),
        other => return Err(Error::Config(format!("unknown attribute {other:?}"))),
    })
}

/// Same/different verdict. Speaker phrases ("same speaker", "different
/// speakers") take precedence; bare "same"/"different" are the fallback.
pub fn parse_verdict(text: &str) -> ParseOutcome<Verdict> {
    let phrases = vec![
        (Verdict::Same, "same speaker".to_string()),
        (Verdict::Same, "same speakers".to_string()),
        (Verdict::Different, "different speaker".to_string()),
        (Verdict::Different, "different speakers".to_string()),
    ];
    let any_phrase = phrases.iter().any(|(_, f)| !word_matches(text, f).is_empty());
    if any_phrase {
        return unique_match(text, &phrases);
    }
    unique_match(text, &class_candidates::<Verdict>())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTrace {
    pub format_valid: bool,
    pub env1: Option<(NoiseClass, ReverbClass)>,
    pub env2: Option<(NoiseClass, ReverbClass)>,
    pub clauses: BTreeMap<ProfileAttribute, CompatState>,
    pub connector: Option<Connector>,
    pub verdict: Option<Verdict>,
    pub derived_support: Option<SupportLevel>,
}

impl ParsedTrace {
    fn invalid() -> Self {
        ParsedTrace {
            format_valid: false,
            env1: None,
            env2: None,
            clauses: BTreeMap::new(),
            connector: None,
            verdict: None,
            derived_support: None,
        }
    }
}

fn normalize_sentence(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

static CLAUSE_INVENTORY: LazyLock<BTreeMap<String, (ProfileAttribute, CompatState)>> = LazyLock::new(|| {
    let mut map = BTreeMap::new();
    for attr in ProfileAttribute::ALL {
        for &state in attr.states() {
            map.insert(normalize_sentence(render_compat_clause(attr, state)), (attr, state));
        }
    }
    map
});

static ENV_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?is)the\s+first\s+recording\s+contains\s+(.+?)\s+noise\s+and\s+(.+?)\s+reverberation\s*\.\s*the\s+second\s+recording\s+contains\s+(.+?)\s+noise\s+and\s+(.+?)\s+reverberation\s*\.",
    )
    .expect("valid pattern")
});

fn split_sentences(block: &str) -> Vec<String> {
    block
        .split_inclusive('.')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_noise_words(words: &str) -> Option<NoiseClass> {
    let w = normalize_sentence(words);
    if w == "no background" || w == "no" {
        return Some(NoiseClass::Clean);
    }
    NoiseClass::from_label(&w)
}

type EnvPair = Option<(NoiseClass, ReverbClass)>;

fn parse_env_block(block: &str) -> (EnvPair, EnvPair) {
    let Some(c) = ENV_RE.captures(block) else {
        return (None, None);
    };
    let pair = |n: usize, r: usize| Some((parse_noise_words(&c[n])?, ReverbClass::from_label(&c[r])?));
    (pair(1, 2), pair(3, 4))
}

/// Clause states found in a profile block. An attribute stated twice with
/// different states is ambiguous and left out.
fn parse_profile_block(block: &str) -> BTreeMap<ProfileAttribute, CompatState> {
    let mut found: BTreeMap<ProfileAttribute, Option<CompatState>> = BTreeMap::new();
    for sentence in split_sentences(block) {
        if let Some(&(attr, state)) = CLAUSE_INVENTORY.get(&normalize_sentence(&sentence)) {
            let entry = found.entry(attr).or_insert(Some(state));
            if *entry != Some(state) {
                *entry = None;
            }
        }
    }
    found.into_iter().filter_map(|(a, s)| s.map(|s| (a, s))).collect()
}

fn parse_connector(block: &str) -> Connector {
    for sentence in split_sentences(block) {
        let lower = sentence.to_lowercase();
        if lower.starts_with("however,") {
            return Connector::However;
        }
        if lower.starts_with("likewise,") {
            return Connector::Likewise;
        }
    }
    Connector::Omitted
}

/// Byte ranges of the three block bodies, when all headers are present in
/// order.
fn split_blocks(text: &str) -> Option<[&str; 3]> {
    let env = text.find(ENVIRONMENT_HEADER)?;
    let prof = env + text[env..].find(PROFILE_HEADER)?;
    let dec = prof + text[prof..].find(DECISION_HEADER)?;
    let b1 = &text[env + ENVIRONMENT_HEADER.len()..prof];
    let b2 = &text[prof + PROFILE_HEADER.len()..dec];
    let b3 = &text[dec + DECISION_HEADER.len()..];
    let blocks = [b1.trim(), b2.trim(), b3.trim()];
    if blocks.iter().any(|b| b.is_empty()) {
        return None;
    }
    // a header repeated inside a later block breaks the schema
    let headers = [ENVIRONMENT_HEADER, PROFILE_HEADER, DECISION_HEADER];
    if blocks.iter().any(|b| headers.iter().any(|h| b.contains(h))) {
        return None;
    }
    Some(blocks)
}

pub fn parse_svr_trace(text: &str) -> ParsedTrace {
    let Some([env, profile, decision]) = split_blocks(text) else {
        return ParsedTrace::invalid();
    };
    let (env1, env2) = parse_env_block(env);
    let clauses = parse_profile_block(profile);
    let derived_support = Some(assess_states(clauses.clone()).level);
    ParsedTrace {
        format_valid: true,
        env1,
        env2,
        clauses,
        connector: Some(parse_connector(decision)),
        verdict: parse_verdict(decision).label,
        derived_support,
    }
}

/// Fraction of the reference's comparable attributes whose parsed state
/// matches. With nothing comparable the score is vacuous: 1.0 for a valid
/// trace, 0.0 otherwise.
pub fn attribute_grounding(parsed: &ParsedTrace, reference: &SupportAssessment) -> f64 {
    let (hits, total) = clause_hits(parsed, reference);
    if total == 0 {
        return if parsed.format_valid { 1.0 } else { 0.0 };
    }
    hits as f64 / total as f64
}

fn clause_hits(parsed: &ParsedTrace, reference: &SupportAssessment) -> (usize, usize) {
    let hits = reference
        .per_attribute
        .iter()
        .filter(|(a, s)| parsed.format_valid && parsed.clauses.get(a) == Some(s))
        .count();
    (hits, reference.per_attribute.len())
}

pub fn support_grounding(parsed: &ParsedTrace, reference: &SupportAssessment) -> bool {
    parsed.format_valid && parsed.derived_support == Some(reference.level)
}

/// Fraction of `predictions` (None = parse failure) equal to `labels`.
pub fn accuracy<T: PartialEq>(predictions: &[Option<T>], labels: &[T]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("accuracy"));
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p.as_ref() == Some(*l))
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Accuracy of always predicting the most frequent reference support level.
pub fn majority_support_baseline(levels: &[SupportLevel]) -> Result<(SupportLevel, f64)> {
    if levels.is_empty() {
        return Err(Error::EmptyInput("majority baseline"));
    }
    let mut counts: BTreeMap<SupportLevel, usize> = BTreeMap::new();
    for &l in levels {
        *counts.entry(l).or_default() += 1;
    }
    // ties resolve to the earliest level in canonical order
    let (level, n) = counts
        .into_iter()
        .fold((SupportLevel::Supportive, 0), |best, (l, n)| if n > best.1 { (l, n) } else { best });
    Ok((level, n as f64 / levels.len() as f64))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: Option<f64>,
}

impl SubsetScore {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
        self.accuracy = Some(self.correct as f64 / self.total as f64);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub trials: usize,
    pub parse_failures: usize,
    pub overall: SubsetScore,
    /// Keyed by ground-truth label.
    pub by_label: BTreeMap<String, SubsetScore>,
    /// Keyed by aligned / mixed / reversal.
    pub by_case: BTreeMap<String, SubsetScore>,
    /// supportive→different and conflicting→same.
    pub reversal_subsets: BTreeMap<String, SubsetScore>,
    /// Every support level × label cell, keyed "level→label".
    pub cells: BTreeMap<String, SubsetScore>,
}

fn cell_key(level: SupportLevel, gt: Verdict) -> String {
    format!("{}→{}", level.as_str(), gt.label())
}

pub fn subset_diagnostics(trials: &[(TrialRecord, Option<Verdict>)]) -> Result<DiagnosticsReport> {
    if trials.is_empty() {
        return Err(Error::EmptyInput("subset diagnostics"));
    }
    let mut report = DiagnosticsReport {
        trials: trials.len(),
        parse_failures: 0,
        overall: SubsetScore::default(),
        by_label: Verdict::all().iter().map(|v| (v.label().to_string(), SubsetScore::default())).collect(),
        by_case: CaseKind::ALL
            .iter()
            .map(|c| (case_name(*c).to_string(), SubsetScore::default()))
            .collect(),
        reversal_subsets: [
            cell_key(SupportLevel::Supportive, Verdict::Different),
            cell_key(SupportLevel::Conflicting, Verdict::Same),
        ]
        .into_iter()
        .map(|k| (k, SubsetScore::default()))
        .collect(),
        cells: SupportLevel::ALL
            .iter()
            .flat_map(|&l| Verdict::all().iter().map(move |&v| (cell_key(l, v), SubsetScore::default())))
            .collect(),
    };
    for (trial, predicted) in trials {
        let level = trial.support.level;
        let gt = trial.gt_label;
        let correct = *predicted == Some(gt);
        report.parse_failures += usize::from(predicted.is_none());
        report.overall.add(correct);
        report.by_label.get_mut(gt.label()).expect("label key").add(correct);
        report
            .by_case
            .get_mut(case_name(classify_case(level, gt)))
            .expect("case key")
            .add(correct);
        let key = cell_key(level, gt);
        if let Some(s) = report.reversal_subsets.get_mut(&key) {
            s.add(correct);
        }
        report.cells.get_mut(&key).expect("cell key").add(correct);
    }
    Ok(report)
}

fn case_name(c: CaseKind) -> &'static str {
    match c {
        CaseKind::Aligned => "aligned",
        CaseKind::Mixed => "mixed",
        CaseKind::Reversal => "reversal",
    }
}

impl DiagnosticsReport {
    /// Subset totals reconcile with the trial count.
    pub fn partition_consistent(&self) -> bool {
        let sum = |m: &BTreeMap<String, SubsetScore>| m.values().map(|s| s.total).sum::<usize>();
        sum(&self.by_label) == self.trials
            && sum(&self.by_case) == self.trials
            && sum(&self.cells) == self.trials
            && self.overall.total == self.trials
    }

    /// Aligned plain-text table; when `baseline` is given a delta column is
    /// added.
    pub fn to_table(&self, baseline: Option<&DiagnosticsReport>) -> String {
        let mut rows: Vec<(String, String, SubsetScore, Option<SubsetScore>)> = Vec::new();
        let mut push = |group: &str, name: &str, s: SubsetScore, b: Option<SubsetScore>| {
            rows.push((group.to_string(), name.to_string(), s, b));
        };
        push("overall", "all", self.overall, baseline.map(|b| b.overall));
        for (group, mine, theirs) in [
            ("label", &self.by_label, baseline.map(|b| &b.by_label)),
            ("case", &self.by_case, baseline.map(|b| &b.by_case)),
            ("reversal", &self.reversal_subsets, baseline.map(|b| &b.reversal_subsets)),
            ("cell", &self.cells, baseline.map(|b| &b.cells)),
        ] {
            for (name, s) in mine {
                push(group, name, *s, theirs.and_then(|t| t.get(name).copied()));
            }
        }
        let pct = |s: &SubsetScore| s.accuracy.map_or("-".to_string(), |a| format!("{:.2}", 100.0 * a));
        let name_w = rows.iter().map(|r| r.1.chars().count()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<9} {:<name_w$} {:>7} {:>9}", "group", "subset", "n", "acc(%)");
        if baseline.is_some() {
            let _ = write!(out, " {:>9}", "delta");
        }
        out.push('\n');
        for (group, name, s, b) in &rows {
            let pad = name_w - name.chars().count();
            let _ = write!(out, "{group:<9} {name}{} {:>7} {:>9}", " ".repeat(pad), s.total, pct(s));
            if baseline.is_some() {
                let delta = match (s.accuracy, b.and_then(|b| b.accuracy)) {
                    (Some(a), Some(c)) => format!("{:+.2}", 100.0 * (a - c)),
                    _ => "-".to_string(),
                };
                let _ = write!(out, " {delta:>9}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "parse failures: {}", self.parse_failures);
        out
    }
}

/// Trace-level grounding aggregated over a scored set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingSummary {
    pub traces: usize,
    pub format_valid: usize,
    pub format_valid_rate: f64,
    /// Matched clauses over all reference clauses.
    pub attribute_grounding_micro: f64,
    /// Mean of per-trace attribute grounding.
    pub attribute_grounding_macro: f64,
    pub support_grounding: f64,
    pub majority_support_level: Option<SupportLevel>,
    pub majority_support_baseline: f64,
}

pub fn grounding_summary(items: &[(ParsedTrace, &SupportAssessment)]) -> Result<GroundingSummary> {
    if items.is_empty() {
        return Err(Error::EmptyInput("grounding summary"));
    }
    let n = items.len() as f64;
    let (mut hits, mut total, mut macro_sum, mut support_hits, mut valid) = (0usize, 0usize, 0.0, 0usize, 0usize);
    for (parsed, reference) in items {
        let (h, t) = clause_hits(parsed, reference);
        hits += h;
        total += t;
        macro_sum += attribute_grounding(parsed, reference);
        support_hits += usize::from(support_grounding(parsed, reference));
        valid += usize::from(parsed.format_valid);
    }
    let levels: Vec<SupportLevel> = items.iter().map(|(_, r)| r.level).collect();
    let (maj_level, maj) = majority_support_baseline(&levels)?;
    Ok(GroundingSummary {
        traces: items.len(),
        format_valid: valid,
        format_valid_rate: valid as f64 / n,
        attribute_grounding_micro: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
        attribute_grounding_macro: macro_sum / n,
        support_grounding: support_hits as f64 / n,
        majority_support_level: Some(maj_level),
        majority_support_baseline: maj,
    })
}
