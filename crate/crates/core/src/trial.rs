//! Verification trials: an utterance pair with its ground-truth label.

use serde::{Deserialize, Serialize};

use crate::environment::{pair_severity, EnvironmentLabels, PairSeverity};
use crate::support::{compute_support, SupportAssessment};
use crate::taxonomy::{closed_class, SpeakerProfile};

closed_class!(
    /// Same/different speaker verdict.
    Verdict, "verdict" {
        Same => "same",
        Different => "different",
    }
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub utt1: String,
    pub utt2: String,
    /// From the trial list; never derived from profiles.
    pub gt_label: Verdict,
    pub profile1: SpeakerProfile,
    pub profile2: SpeakerProfile,
    pub env1: EnvironmentLabels,
    pub env2: EnvironmentLabels,
    pub support: SupportAssessment,
    pub severity: PairSeverity,
}

impl TrialRecord {
    pub fn new(
        trial_id: impl Into<String>,
        gt_label: Verdict,
        profile1: SpeakerProfile,
        profile2: SpeakerProfile,
        env1: EnvironmentLabels,
        env2: EnvironmentLabels,
    ) -> TrialRecord {
        let support = compute_support(&profile1, &profile2);
        let severity = pair_severity(&env1, &env2);
        TrialRecord {
            trial_id: trial_id.into(),
            utt1: profile1.utterance_id.clone(),
            utt2: profile2.utterance_id.clone(),
            gt_label,
            profile1,
            profile2,
            env1,
            env2,
            support,
            severity,
        }
    }

    /// Cached support and severity agree with the constituents.
    pub fn caches_consistent(&self) -> bool {
        self.support == compute_support(&self.profile1, &self.profile2)
            && self.severity == pair_severity(&self.env1, &self.env2)
    }

    /// Both profiles carry all five attributes.
    pub fn svr_eligible(&self) -> bool {
        self.profile1.is_complete() && self.profile2.is_complete()
    }
}
