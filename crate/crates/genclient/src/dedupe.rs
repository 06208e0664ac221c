use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One output line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub instruction: String,
    pub response: String,
}

/// Parses `{"instruction", "response"}` JSONL; blank lines are skipped and
/// errors name the 1-based line.
pub fn read_jsonl(text: &str) -> Result<Vec<Pair>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Keeps the first pair for each exact instruction string, in order.
pub fn dedupe(pairs: Vec<Pair>) -> Vec<Pair> {
    let mut seen = HashSet::new();
    pairs
        .into_iter()
        .filter(|p| seen.insert(p.instruction.clone()))
        .collect()
}

/// File-to-file [`dedupe`]; returns `(lines read, lines written)`.
pub fn dedupe_jsonl(input: impl AsRef<Path>, output: impl AsRef<Path>) -> Result<(usize, usize)> {
    let pairs = read_jsonl(&fs::read_to_string(input)?)?;
    let n = pairs.len();
    let kept = dedupe(pairs);
    let mut f = fs::File::create(output)?;
    for p in &kept {
        serde_json::to_writer(&mut f, p)?;
        f.write_all(b"\n")?;
    }
    Ok((n, kept.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: &str, r: &str) -> Pair {
        Pair {
            instruction: i.into(),
            response: r.into(),
        }
    }

    #[test]
    fn dedupe_laws() {
        let distinct = vec![p("a", "1"), p("b", "2")];
        assert_eq!(dedupe(distinct.clone()), distinct);
        let dup = vec![p("a", "1"), p("b", "2"), p("a", "3")];
        assert_eq!(dedupe(dup.clone()), vec![p("a", "1"), p("b", "2")]);
        assert_eq!(dedupe(dedupe(dup.clone())), dedupe(dup));
    }

    #[test]
    fn malformed_line_is_reported() {
        let text = "{\"instruction\":\"a\",\"response\":\"b\"}\n{oops}\n";
        match read_jsonl(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.jsonl");
        std::fs::write(
            &input,
            "{\"instruction\":\"a\",\"response\":\"1\"}\n{\"instruction\":\"a\",\"response\":\"2\"}\n",
        )
        .unwrap();
        let out = dir.path().join("out.jsonl");
        assert_eq!(dedupe_jsonl(&input, &out).unwrap(), (2, 1));
        assert_eq!(
            std::fs::read_to_string(out).unwrap(),
            "{\"instruction\":\"a\",\"response\":\"1\"}\n"
        );
    }
}
