use std::collections::HashSet;

use proptest::prelude::*;
use sasft_genclient::{dedupe, read_jsonl, split_questions, Pair};

fn pairs() -> impl Strategy<Value = Vec<Pair>> {
    prop::collection::vec(("[a-c]{1,3}", "[x-z ]{0,8}"), 0..30).prop_map(|v| {
        v.into_iter()
            .map(|(instruction, response)| Pair { instruction, response })
            .collect()
    })
}

proptest! {
    #[test]
    fn dedupe_is_idempotent_and_keeps_first(ps in pairs()) {
        let once = dedupe(ps.clone());
        prop_assert_eq!(dedupe(once.clone()), once.clone());
        let mut seen = HashSet::new();
        let expect: Vec<Pair> = ps.into_iter().filter(|p| seen.insert(p.instruction.clone())).collect();
        prop_assert_eq!(once, expect);
    }

    #[test]
    fn jsonl_round_trip(ps in pairs()) {
        let text: String = ps.iter().map(|p| serde_json::to_string(p).unwrap() + "\n").collect();
        prop_assert_eq!(read_jsonl(&text).unwrap(), ps);
    }

    #[test]
    fn split_items_are_trimmed_and_long_enough(
        lines in prop::collection::vec("[0-9]{0,2}[.)]? ?[A-Za-z ?]{0,20}", 0..10),
    ) {
        for q in split_questions(&lines.join("\n")) {
            prop_assert!(q.chars().count() >= 8);
            prop_assert_eq!(q.trim(), q.as_str());
        }
    }
}
