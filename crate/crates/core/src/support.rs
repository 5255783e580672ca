//! Penalty-based profile support for an utterance pair.
//!
//! Each attribute comparable in both profiles contributes a penalty: gender
//! mismatch 4, region mismatch 1, age by bin distance (0/1/2). Pitch and
//! brightness form a grouped voice factor: the larger sub-penalty, plus one
//! when both are non-compatible. Totals map to supportive (<= 1), mixed
//! (2..=3, or nothing comparable) and conflicting (>= 4).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{ClosedClass, SpeakerProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileAttribute {
    Gender,
    Age,
    Region,
    Pitch,
    Brightness,
}

impl ProfileAttribute {
    pub const ALL: [ProfileAttribute; 5] = [
        ProfileAttribute::Gender,
        ProfileAttribute::Age,
        ProfileAttribute::Region,
        ProfileAttribute::Pitch,
        ProfileAttribute::Brightness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProfileAttribute::Gender => "gender",
            ProfileAttribute::Age => "age",
            ProfileAttribute::Region => "region",
            ProfileAttribute::Pitch => "pitch",
            ProfileAttribute::Brightness => "brightness",
        }
    }

    /// Gender and region only distinguish match from mismatch.
    pub fn is_binary(self) -> bool {
        matches!(self, ProfileAttribute::Gender | ProfileAttribute::Region)
    }

    /// States this attribute can take.
    pub fn states(self) -> &'static [CompatState] {
        if self.is_binary() {
            &[CompatState::Compatible, CompatState::Conflicting]
        } else {
            &CompatState::ALL
        }
    }
}

impl fmt::Display for ProfileAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-attribute comparison outcome. Binary attributes use `Compatible` for
/// a match and `Conflicting` for a mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompatState {
    Compatible,
    Partial,
    Conflicting,
}

impl CompatState {
    pub const ALL: [CompatState; 3] = [CompatState::Compatible, CompatState::Partial, CompatState::Conflicting];

    /// Ordinal sub-penalty p in {0, 1, 2}.
    pub fn penalty(self) -> u32 {
        match self {
            CompatState::Compatible => 0,
            CompatState::Partial => 1,
            CompatState::Conflicting => 2,
        }
    }

    pub fn is_compatible(self) -> bool {
        self == CompatState::Compatible
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportLevel {
    Supportive,
    Mixed,
    Conflicting,
}

impl SupportLevel {
    pub const ALL: [SupportLevel; 3] = [SupportLevel::Supportive, SupportLevel::Mixed, SupportLevel::Conflicting];

    pub fn from_total(total: u32, comparable_count: usize) -> SupportLevel {
        if comparable_count == 0 {
            SupportLevel::Mixed
        } else if total <= 1 {
            SupportLevel::Supportive
        } else if total <= 3 {
            SupportLevel::Mixed
        } else {
            SupportLevel::Conflicting
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SupportLevel::Supportive => "supportive",
            SupportLevel::Mixed => "mixed",
            SupportLevel::Conflicting => "conflicting",
        }
    }
}

pub fn ordinal_penalty(bin1: usize, bin2: usize) -> CompatState {
    match bin1.abs_diff(bin2) {
        0 => CompatState::Compatible,
        1 => CompatState::Partial,
        _ => CompatState::Conflicting,
    }
}

/// Penalty an attribute contributes on its own. The voice attributes are
/// grouped later, so their value here is the raw sub-penalty.
pub fn state_penalty(attr: ProfileAttribute, state: CompatState) -> u32 {
    match (attr, state) {
        (_, CompatState::Compatible) => 0,
        (ProfileAttribute::Gender, _) => 4,
        (ProfileAttribute::Region, _) => 1,
        (_, s) => s.penalty(),
    }
}

fn ordinal_state<T: ClosedClass>(a: Option<T>, b: Option<T>) -> Option<CompatState> {
    Some(ordinal_penalty(a?.index(), b?.index()))
}

fn binary_state<T: Eq>(a: Option<T>, b: Option<T>) -> Option<CompatState> {
    let (a, b) = (a?, b?);
    Some(if a == b {
        CompatState::Compatible
    } else {
        CompatState::Conflicting
    })
}

/// Comparison state of `attr`, or `None` when either side lacks it.
pub fn compare_attribute(attr: ProfileAttribute, p1: &SpeakerProfile, p2: &SpeakerProfile) -> Option<CompatState> {
    match attr {
        ProfileAttribute::Gender => binary_state(p1.gender, p2.gender),
        ProfileAttribute::Age => ordinal_state(p1.age, p2.age),
        ProfileAttribute::Region => binary_state(p1.region, p2.region),
        ProfileAttribute::Pitch => ordinal_state(p1.pitch, p2.pitch),
        ProfileAttribute::Brightness => ordinal_state(p1.brightness, p2.brightness),
    }
}

/// Penalty for one attribute of a pair; errors when it is not comparable.
pub fn attribute_penalty(attr: ProfileAttribute, p1: &SpeakerProfile, p2: &SpeakerProfile) -> Result<u32> {
    compare_attribute(attr, p1, p2)
        .map(|s| state_penalty(attr, s))
        .ok_or(Error::NotComparable(attr.name()))
}

/// Grouped pitch/brightness penalty. A single comparable sub-attribute
/// contributes its own penalty with no bonus.
pub fn voice_penalty(pitch: Option<CompatState>, brightness: Option<CompatState>) -> u32 {
    match (pitch, brightness) {
        (Some(p), Some(b)) => {
            let bonus = u32::from(!p.is_compatible() && !b.is_compatible());
            p.penalty().max(b.penalty()) + bonus
        }
        (Some(s), None) | (None, Some(s)) => s.penalty(),
        (None, None) => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportAssessment {
    pub per_attribute: BTreeMap<ProfileAttribute, CompatState>,
    pub voice_penalty: u32,
    pub total_penalty: u32,
    pub level: SupportLevel,
    pub comparable_count: usize,
}

/// Scores a set of already-known attribute states.
pub fn assess_states(per_attribute: BTreeMap<ProfileAttribute, CompatState>) -> SupportAssessment {
    let get = |a| per_attribute.get(&a).copied();
    let voice = voice_penalty(get(ProfileAttribute::Pitch), get(ProfileAttribute::Brightness));
    let others: u32 = [ProfileAttribute::Gender, ProfileAttribute::Age, ProfileAttribute::Region]
        .into_iter()
        .filter_map(|a| get(a).map(|s| state_penalty(a, s)))
        .sum();
    let total_penalty = others + voice;
    let comparable_count = per_attribute.len();
    SupportAssessment {
        level: SupportLevel::from_total(total_penalty, comparable_count),
        per_attribute,
        voice_penalty: voice,
        total_penalty,
        comparable_count,
    }
}

pub fn compute_support(p1: &SpeakerProfile, p2: &SpeakerProfile) -> SupportAssessment {
    let per_attribute = ProfileAttribute::ALL
        .into_iter()
        .filter_map(|a| compare_attribute(a, p1, p2).map(|s| (a, s)))
        .collect();
    assess_states(per_attribute)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::*;

    fn full(g: Gender, age: AgeBin, r: Region, p: PitchClass, b: BrightnessClass) -> SpeakerProfile {
        SpeakerProfile {
            utterance_id: String::new(),
            gender: Some(g),
            age: Some(age),
            region: Some(r),
            pitch: Some(p),
            brightness: Some(b),
        }
    }

    fn base() -> SpeakerProfile {
        full(
            Gender::Male,
            AgeBin::Age26To35,
            Region::BritishIrish,
            PitchClass::Normal,
            BrightnessClass::Neutral,
        )
    }

    #[test]
    fn ordinal_states() {
        assert_eq!(ordinal_penalty(3, 3), CompatState::Compatible);
        assert_eq!(ordinal_penalty(3, 4), CompatState::Partial);
        assert_eq!(ordinal_penalty(1, 4), CompatState::Conflicting);
    }

    #[test]
    fn attribute_penalties() {
        let a = base();
        let mut b = base();
        b.gender = Some(Gender::Female);
        assert_eq!(attribute_penalty(ProfileAttribute::Gender, &a, &b).unwrap(), 4);
        b.region = Some(Region::European);
        assert_eq!(attribute_penalty(ProfileAttribute::Region, &a, &b).unwrap(), 1);
        b.age = Some(AgeBin::Age36To45);
        assert_eq!(attribute_penalty(ProfileAttribute::Age, &a, &b).unwrap(), 1);
        b.age = None;
        assert!(matches!(
            attribute_penalty(ProfileAttribute::Age, &a, &b),
            Err(Error::NotComparable("age"))
        ));
    }

    #[test]
    fn voice_grouping() {
        use CompatState::*;
        assert_eq!(voice_penalty(Some(Compatible), Some(Compatible)), 0);
        assert_eq!(voice_penalty(Some(Partial), Some(Compatible)), 1);
        assert_eq!(voice_penalty(Some(Conflicting), Some(Partial)), 3);
        assert_eq!(voice_penalty(Some(Partial), None), 1);
        assert_eq!(voice_penalty(None, Some(Conflicting)), 2);
        assert_eq!(voice_penalty(None, None), 0);
    }

    #[test]
    fn worked_example_profiles() {
        let s = compute_support(&base(), &base());
        assert_eq!((s.total_penalty, s.level), (0, SupportLevel::Supportive));

        let mut b = base();
        b.pitch = Some(PitchClass::High);
        let s = compute_support(&base(), &b);
        assert_eq!((s.total_penalty, s.level), (1, SupportLevel::Supportive));
        assert_eq!(s.per_attribute[&ProfileAttribute::Pitch], CompatState::Partial);

        let mut c = base();
        c.age = Some(AgeBin::Age56To65);
        c.pitch = Some(PitchClass::VeryLow);
        c.brightness = Some(BrightnessClass::Bright);
        let s = compute_support(&base(), &c);
        assert_eq!(s.voice_penalty, 3);
        assert_eq!((s.total_penalty, s.level), (5, SupportLevel::Conflicting));
    }

    #[test]
    fn nothing_comparable_is_mixed() {
        let s = compute_support(&SpeakerProfile::empty("a"), &base());
        assert_eq!(s.comparable_count, 0);
        assert_eq!(s.total_penalty, 0);
        assert_eq!(s.level, SupportLevel::Mixed);
    }

    #[test]
    fn gender_mismatch_alone_conflicts() {
        let mut b = base();
        b.gender = Some(Gender::Female);
        assert_eq!(compute_support(&base(), &b).level, SupportLevel::Conflicting);
    }
}
