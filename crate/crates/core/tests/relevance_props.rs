use std::collections::BTreeMap;

use proptest::prelude::*;

use mrfg_core::relevance::{
    filter_cosine, parse_scores, render_pairs, FilterReport, Provenance, RelevanceScore,
};

fn score() -> impl Strategy<Value = RelevanceScore> {
    (1i64..=3).prop_map(|v| RelevanceScore::new(v).unwrap())
}

fn score_map() -> impl Strategy<Value = BTreeMap<String, RelevanceScore>> {
    prop::collection::btree_map("[a-z][a-z0-9]{0,6}_[1-9][0-9]{0,2}", score(), 1..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parse_inverts_render(scores in score_map()) {
        let text = render_pairs(scores.iter().map(|(k, s)| (k.as_str(), *s)));
        let keys: Vec<String> = scores.keys().cloned().collect();
        let parsed = parse_scores(&text, &keys).unwrap();
        prop_assert_eq!(parsed.scores, scores);
        prop_assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn retention_is_monotone_in_score(scores in score_map(), pick in any::<prop::sample::Index>()) {
        let before = FilterReport::from_scores("u", scores.clone(), Provenance::Mock);
        let key = pick.get(&scores.keys().cloned().collect::<Vec<_>>()).clone();
        let mut raised = scores.clone();
        let s = raised[&key].value();
        raised.insert(key, RelevanceScore::new(i64::from((s + 1).min(3))).unwrap());
        let after = FilterReport::from_scores("u", raised, Provenance::Mock);
        prop_assert!(before.retained.is_subset(&after.retained));
        for (k, s) in &scores {
            prop_assert_eq!(before.retained.contains(k), s.value() >= 2);
        }
        prop_assert_eq!(before.retained.len() + before.discarded.len(), scores.len());
    }

    #[test]
    fn cosine_filter_is_scale_invariant(
        user in prop::collection::vec(-1.0f64..1.0, 8),
        tweets in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 8), 1..10),
        cu in 0.01f64..100.0,
        ct in 0.01f64..100.0,
    ) {
        let named: Vec<(String, Vec<f64>)> = tweets.iter().enumerate().map(|(i, v)| (format!("t{i}"), v.clone())).collect();
        let scaled: Vec<(String, Vec<f64>)> = named.iter().map(|(k, v)| (k.clone(), v.iter().map(|x| x * ct).collect())).collect();
        let su: Vec<f64> = user.iter().map(|x| x * cu).collect();
        let a = filter_cosine("u", &user, &named).unwrap();
        let b = filter_cosine("u", &su, &scaled).unwrap();
        // exact ties with a threshold could flip under rounding; random data avoids them
        prop_assert_eq!(a.scores, b.scores);
    }
}
