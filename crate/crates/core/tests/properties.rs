use std::collections::BTreeSet;

use caf_core::canonicalize::Canonicalizer;
use caf_core::corpus::{Clause, Dataset, GoldLabel, Manifest};
use caf_core::eval::{compute_metrics, score_lenient};
use caf_core::templating::AnswerOption;
use caf_core::{
    canonicalize, normalize, shuffle_options, CanonicalAnswer, EvalRecord, MatchStrategy,
    MatchTrace, OptionSet, SelectionMode,
};
use proptest::prelude::*;

fn indemnity_set() -> OptionSet {
    OptionSet::new(
        "S1",
        "indemnity",
        vec![
            AnswerOption::new("ltt", "Landlord indemnifies Tenant"),
            AnswerOption::new("ttl", "Tenant indemnifies Landlord"),
            AnswerOption::new("mutual", "There is mutual indemnification"),
            AnswerOption::new("none", "No indemnification"),
        ],
    )
    .unwrap()
}

proptest! {
    #[test]
    fn normalize_is_idempotent(s in "\\PC{0,80}") {
        let once = normalize(&s);
        prop_assert_eq!(normalize(&once), once);
    }

    #[test]
    fn normalize_ignores_case_and_spacing(s in "[a-zA-Z ]{1,40}") {
        let spaced = s.replace(' ', "   ");
        prop_assert_eq!(normalize(&s.to_uppercase()), normalize(&spaced.to_lowercase()));
    }

    #[test]
    fn canonicalize_never_invents_ids(raw in "\\PC{0,120}", multi in any::<bool>()) {
        let set = indemnity_set();
        let mode = if multi { SelectionMode::Multi } else { SelectionMode::Single };
        let escapes = vec!["The clause is silent".to_string()];
        let (answer, _) = canonicalize(&raw, &set, &escapes, None, mode);
        if let Some(ids) = answer.selected_ids() {
            prop_assert!(!ids.is_empty());
            prop_assert!(ids.iter().all(|id| set.contains(id)));
            if !multi {
                prop_assert_eq!(ids.len(), 1);
            }
        }
    }

    #[test]
    fn decorated_option_text_still_maps(idx in 0usize..4, upper in any::<bool>(), dot in any::<bool>(), quote in any::<bool>()) {
        let set = indemnity_set();
        let option = &set.options()[idx];
        let mut raw = if upper { option.text.to_uppercase() } else { option.text.clone() };
        if dot { raw.push('.'); }
        if quote { raw = format!("\"{raw}\""); }
        let (answer, trace) = canonicalize(&raw, &set, &[], None, SelectionMode::Single);
        prop_assert_eq!(answer, CanonicalAnswer::selected([option.canonical_id.as_str()]));
        prop_assert_eq!(trace.strategy, MatchStrategy::Exact);
    }

    #[test]
    fn shuffling_preserves_text_answers(seed in any::<u64>(), idx in 0usize..4) {
        let set = indemnity_set();
        let shuffled = shuffle_options(&set, seed);
        let text = &set.options()[idx].text;
        let c = Canonicalizer::default();
        let a = c.canonicalize(text, &set, &[], None, SelectionMode::Single).0;
        let b = c.canonicalize(text, &shuffled, &[], None, SelectionMode::Single).0;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn lenient_is_monotone(pred in proptest::collection::btree_set(0u8..6, 0..6),
                           gold in proptest::collection::btree_set(0u8..6, 1..6),
                           extra in 0u8..6) {
        let g = GoldLabel {
            clause_id: "c".into(),
            question_id: "q".into(),
            option_ids: gold.iter().map(|i| i.to_string()).collect(),
            insufficient: false,
        };
        let before = score_lenient(&CanonicalAnswer::selected(pred.iter().map(|i| i.to_string())), &g);
        let mut grown = pred.clone();
        if gold.contains(&extra) {
            grown.insert(extra);
        }
        let after = score_lenient(&CanonicalAnswer::selected(grown.iter().map(|i| i.to_string())), &g);
        prop_assert!(!before || after);
    }

    #[test]
    fn metrics_ignore_record_order(correct in proptest::collection::vec(any::<bool>(), 1..40), seed in any::<u64>()) {
        let set = indemnity_set();
        let ids = ["ltt", "ttl", "mutual", "none"];
        let records: Vec<EvalRecord> = correct
            .iter()
            .enumerate()
            .map(|(i, c)| EvalRecord {
                clause_id: format!("c{i}"),
                raw: format!("r{}", i % 3),
                answer: CanonicalAnswer::selected([ids[i % 4]]),
                trace: MatchTrace { strategy: MatchStrategy::Exact, needed_cleanup: i % 2 == 0, segments_matched: 0 },
                gold: GoldLabel {
                    clause_id: format!("c{i}"),
                    question_id: "indemnity".into(),
                    option_ids: BTreeSet::from([ids[i % 4].to_string()]),
                    insufficient: false,
                },
                correct: *c,
            })
            .collect();
        let mut shuffled = records.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = compute_metrics(&records, &set);
        let b = compute_metrics(&shuffled, &set);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.per_option_correct.values().sum::<usize>(), a.correct);
    }

    #[test]
    fn dataset_round_trips_through_jsonl(texts in proptest::collection::vec("[a-zA-Z0-9 .,\"\\n\u{e9}]{1,200}", 1..12)) {
        let texts: Vec<String> = texts.into_iter().filter(|t| !t.trim().is_empty()).collect();
        prop_assume!(!texts.is_empty());
        let clauses: Vec<Clause> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Clause { id: format!("c{i}"), clause_type: "t".into(), text: t.clone(), source: None })
            .collect();
        let labels: Vec<GoldLabel> = (0..clauses.len())
            .map(|i| GoldLabel {
                clause_id: format!("c{i}"),
                question_id: "q".into(),
                option_ids: BTreeSet::from([format!("o{}", i % 3)]),
                insufficient: false,
            })
            .collect();
        let ds = Dataset::new(Manifest { question_id: "q".into(), ..Manifest::default() }, clauses, labels).unwrap();
        let back = Dataset::parse(&ds.to_jsonl(), None).unwrap();
        prop_assert_eq!(back.clauses(), ds.clauses());
        prop_assert_eq!(back.labels(), ds.labels());
        prop_assert_eq!(back.manifest(), ds.manifest());
    }
}
