/// Shortest accepted question, in characters.
pub const MIN_QUESTION_CHARS: usize = 8;

/// Splits a bait reply into candidate questions: one per line, with list
/// markers (`1.`, `2)`, `-`, `*`, `•`) stripped, keeping items of at least
/// eight characters.
pub fn split_questions(reply: &str) -> Vec<String> {
    reply
        .lines()
        .map(strip_marker)
        .filter(|q| q.chars().count() >= MIN_QUESTION_CHARS)
        .map(str::to_string)
        .collect()
}

fn strip_marker(line: &str) -> &str {
    let t = line.trim();
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim();
        }
    }
    for m in ['-', '*', '•'] {
        if let Some(r) = t.strip_prefix(m) {
            return r.trim();
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbered_and_bulleted_items() {
        let reply = "Here are some:\n1. What do you eat for breakfast?\n2) How do you commute?\n- Why?\n* Where do you buy groceries?\n\n10. How often do you cook dinner?";
        assert_eq!(
            split_questions(reply),
            vec![
                "Here are some:",
                "What do you eat for breakfast?",
                "How do you commute?",
                "Where do you buy groceries?",
                "How often do you cook dinner?",
            ]
        );
    }

    #[test]
    fn short_items_are_dropped() {
        assert!(split_questions("1. Why?\n2. Ok\n").is_empty());
        assert_eq!(split_questions("Is it 8ch"), vec!["Is it 8ch"]);
        assert_eq!(split_questions("2024 was a long year"), vec!["2024 was a long year"]);
    }
}
