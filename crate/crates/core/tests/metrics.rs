use std::collections::BTreeSet;

use proptest::prelude::*;
use ticketgraph::eval::metrics::{bleu, meteor_simple, mrr, ndcg_at_k, recall_at_k, rouge_l};

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "fix", "cache"]), 0..15)
        .prop_map(|w| w.join(" "))
}

fn ranking() -> impl Strategy<Value = (Vec<String>, BTreeSet<String>)> {
    let id = (0u8..12).prop_map(|i| format!("T{i}"));
    (prop::collection::vec(id.clone(), 0..20), prop::collection::btree_set(id, 1..4))
}

proptest! {
    #[test]
    fn overlap_metrics_are_bounded(c in words(), r in words()) {
        for v in [bleu(&c, &r), rouge_l(&c, &r), meteor_simple(&c, &r)] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn identical_nonempty_texts_score_one(c in words()) {
        prop_assume!(!c.is_empty());
        prop_assert_eq!(rouge_l(&c, &c), 1.0);
        prop_assert_eq!(bleu(&c, &c), 1.0);
    }

    #[test]
    fn ranking_metrics_are_bounded_and_monotone((r, g) in ranking()) {
        let rankings = vec![r];
        let gold = vec![g];
        let mut last = 0.0;
        for k in 1..=20 {
            let recall = recall_at_k(&rankings, &gold, k).unwrap();
            let ndcg = ndcg_at_k(&rankings, &gold, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&recall));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ndcg));
            prop_assert!(recall >= last);
            last = recall;
        }
        let m = mrr(&rankings, &gold).unwrap();
        prop_assert!(m <= recall_at_k(&rankings, &gold, 20).unwrap());
    }
}

#[test]
fn misaligned_inputs_are_rejected() {
    let r = vec![vec!["A".to_string()]];
    assert!(mrr(&r, &[]).is_err());
    assert!(recall_at_k(&r, &[], 1).is_err());
}
