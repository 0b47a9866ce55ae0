use dr_annotate_core::corpus::{derive_multiple_majority, derive_single_majority, Threshold, VoteLabel, Votes};
use dr_annotate_core::taxonomy::{SenseId, SenseInventory, DISCOGEM7_SENSES};
use proptest::prelude::*;

fn vote_table() -> impl Strategy<Value = Votes> {
    let labels: Vec<&'static str> = DISCOGEM7_SENSES.iter().copied().chain(["differentcon"]).collect();
    prop::collection::vec((prop::sample::select(labels), 1u32..6), 1..6)
        .prop_filter("needs a sense vote", |v| v.iter().any(|(l, _)| *l != "differentcon"))
        .prop_map(|v| v.into_iter().collect())
}

/// Counts by direct recount: labels with at least max(2, ceil(total/5)) votes.
fn recount_passing(votes: &Votes) -> Vec<SenseId> {
    let total: u32 = votes.iter().map(|(_, c)| c).sum();
    let need = total.div_ceil(5).max(2);
    let mut out: Vec<SenseId> = votes
        .iter()
        .filter(|(_, c)| *c >= need)
        .filter_map(|(l, _)| l.sense().cloned())
        .collect();
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn single_is_among_multiple(votes in vote_table(), seed in any::<u64>()) {
        let inv = SenseInventory::discogem7();
        let (single, _) = derive_single_majority(&votes, seed).unwrap();
        let multiple = derive_multiple_majority(&votes, &inv, Threshold::default(), seed).unwrap();
        if let VoteLabel::Sense(s) = &single {
            prop_assert!(multiple.contains(s), "{single} not in {multiple:?}");
        }
        prop_assert!(!multiple.is_empty() || single == VoteLabel::DifferentCon);
    }

    #[test]
    fn multiple_matches_recount(votes in vote_table(), seed in any::<u64>()) {
        let inv = SenseInventory::discogem7();
        let multiple = derive_multiple_majority(&votes, &inv, Threshold::default(), seed).unwrap();
        let expected = recount_passing(&votes);
        let mut got = multiple.clone();
        got.sort();
        if expected.is_empty() {
            prop_assert!(got.len() <= 1);
        } else {
            prop_assert_eq!(got, expected);
            let counts: Vec<u32> = multiple.iter().map(|s| votes.get(&VoteLabel::Sense(s.clone()))).collect();
            prop_assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn single_has_the_top_count(votes in vote_table(), seed in any::<u64>()) {
        let (single, _) = derive_single_majority(&votes, seed).unwrap();
        let max = votes.iter().map(|(_, c)| c).max().unwrap();
        prop_assert_eq!(votes.get(&single), max);
        prop_assert_eq!(derive_single_majority(&votes, seed).unwrap().0, single);
    }
}
