mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svrkit::compose::{render_stage1, render_svr_target, Stage1Labels, TargetForm, Task};
use svrkit::descriptors::{fit_cutoffs, nearest_rank};
use svrkit::environment::{pair_severity, EnvironmentLabels, NoiseClass, ReverbClass};
use svrkit::eval::{parse_closed_answer, parse_svr_trace, parse_verdict};
use svrkit::support::compute_support;
use svrkit::taxonomy::{bin_age, AgeBin, BrightnessClass, ClosedClass, Gender, PitchClass, Region, SpeakerProfile};

fn class<T: ClosedClass>() -> impl Strategy<Value = T> {
    (0..T::all().len()).prop_map(|i| T::all()[i])
}

fn maybe<T: ClosedClass>() -> impl Strategy<Value = Option<T>> {
    proptest::option::of(class::<T>())
}

prop_compose! {
    fn any_profile()(g in maybe::<Gender>(), a in maybe::<AgeBin>(), r in maybe::<Region>(),
                     p in maybe::<PitchClass>(), b in maybe::<BrightnessClass>()) -> SpeakerProfile {
        SpeakerProfile { utterance_id: "u".into(), gender: g, age: a, region: r, pitch: p, brightness: b }
    }
}

prop_compose! {
    fn any_env()(n in class::<NoiseClass>(), r in class::<ReverbClass>()) -> EnvironmentLabels {
        EnvironmentLabels::from_classes(n, r)
    }
}

proptest! {
    #[test]
    fn age_bins_are_monotone(a in 1u32..150, b in 1u32..150) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(bin_age(lo).unwrap() <= bin_age(hi).unwrap());
        let (start, end) = bin_age(a).unwrap().range();
        prop_assert!(a >= start && end.is_none_or(|e| a <= e));
    }

    #[test]
    fn cutoff_bins_are_monotone(values in prop::collection::vec(-1e3f64..1e3, 10..200), x in -2e3f64..2e3, y in -2e3f64..2e3) {
        let c = fit_cutoffs(&values).unwrap();
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        prop_assert!(c.bin_index(lo) <= c.bin_index(hi));
        prop_assert!(c.bin_index(hi) < 5);
    }

    #[test]
    fn nearest_rank_matches_count_definition(values in prop::collection::vec(-1e3f64..1e3, 1..100), p in 1u32..100) {
        let mut s = values.clone();
        s.sort_by(f64::total_cmp);
        let v = nearest_rank(&s, p);
        // smallest value with at least p% of the sample at or below it
        let oracle = *s.iter().find(|&&x| 100 * s.iter().filter(|&&y| y <= x).count() >= p as usize * s.len()).unwrap();
        prop_assert_eq!(v, oracle);
    }

    #[test]
    fn support_is_symmetric(a in any_profile(), b in any_profile()) {
        prop_assert_eq!(compute_support(&a, &b), compute_support(&b, &a));
    }

    #[test]
    fn identical_complete_profiles_are_supportive(g in class::<Gender>(), a in class::<AgeBin>(), r in class::<Region>(),
                                                   p in class::<PitchClass>(), b in class::<BrightnessClass>()) {
        let x = SpeakerProfile { utterance_id: "x".into(), gender: Some(g), age: Some(a), region: Some(r), pitch: Some(p), brightness: Some(b) };
        let s = compute_support(&x, &x);
        prop_assert_eq!(s.total_penalty, 0);
        prop_assert_eq!(s.level, svrkit::support::SupportLevel::Supportive);
    }

    #[test]
    fn moving_age_further_never_lowers_the_penalty(a in any_profile(), b in any_profile(), i in 0usize..10, j in 0usize..10, k in 0usize..10) {
        let (mut near, mut far) = (b.clone(), b);
        let mut a = a;
        a.age = AgeBin::from_index(i);
        let (d1, d2) = (i.abs_diff(j), i.abs_diff(k));
        let (jn, kf) = if d1 <= d2 { (j, k) } else { (k, j) };
        near.age = AgeBin::from_index(jn);
        far.age = AgeBin::from_index(kf);
        prop_assert!(compute_support(&a, &near).total_penalty <= compute_support(&a, &far).total_penalty);
    }

    #[test]
    fn severity_is_symmetric_and_maximal(e1 in any_env(), e2 in any_env()) {
        let s = pair_severity(&e1, &e2);
        prop_assert_eq!(s, pair_severity(&e2, &e1));
        prop_assert_eq!(s.pair_rank, e1.degradation_rank().max(e2.degradation_rank()));
    }

    #[test]
    fn stage1_templates_are_total(p in any_profile(), e in any_env(), form in prop_oneof![Just(TargetForm::Short), Just(TargetForm::Sentence)]) {
        let labels = Stage1Labels::from_profile(&p).with_environment(&e);
        for task in Task::ALL.into_iter().filter(|t| t.is_stage1() && !t.is_pair()) {
            match render_stage1(task, &labels, form) {
                Ok(text) => prop_assert!(!text.is_empty()),
                Err(svrkit::Error::MissingSlot(_)) => {}
                Err(e) => prop_assert!(false, "{task}: {e}"),
            }
        }
    }

    #[test]
    fn stage1_answers_parse_back(p in any_profile(), form in prop_oneof![Just(TargetForm::Short), Just(TargetForm::Sentence)]) {
        let labels = Stage1Labels::from_profile(&p);
        if let Ok(t) = render_stage1(Task::Gender, &labels, form) {
            prop_assert_eq!(parse_closed_answer::<Gender>(&t).label, p.gender);
        }
        if let Ok(t) = render_stage1(Task::Age, &labels, form) {
            prop_assert_eq!(parse_closed_answer::<AgeBin>(&t).label, p.age);
        }
        if let Ok(t) = render_stage1(Task::Region, &labels, form) {
            prop_assert_eq!(parse_closed_answer::<Region>(&t).label, p.region);
        }
    }

    #[test]
    fn parsers_are_deterministic(text in ".{0,200}") {
        prop_assert_eq!(parse_verdict(&text), parse_verdict(&text));
        prop_assert_eq!(parse_svr_trace(&text), parse_svr_trace(&text));
        prop_assert_eq!(parse_closed_answer::<Region>(&text), parse_closed_answer::<Region>(&text));
    }

    #[test]
    fn parse_failure_iff_label_absent(text in "[a-z ]{0,60}") {
        let p = parse_closed_answer::<PitchClass>(&text);
        prop_assert_eq!(p.failed, p.label.is_none());
    }

    #[test]
    fn svr_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trial = common::random_full_trial(0, &mut rng);
        let p = parse_svr_trace(&render_svr_target(&trial).unwrap().text());
        prop_assert!(p.format_valid);
        prop_assert_eq!(&p.clauses, &trial.support.per_attribute);
        prop_assert_eq!(p.verdict, Some(trial.gt_label));
        prop_assert_eq!(p.derived_support, Some(trial.support.level));
    }
}
