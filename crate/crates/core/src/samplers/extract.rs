use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Answer recorded when a completion contains no extractable final answer.
pub const NO_ANSWER: &str = "<no-answer>";

/// Rule for pulling a final answer out of a raw completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerPattern {
    /// Content of the last `\boxed{...}` expression, braces balanced.
    #[default]
    Boxed,
    /// Rest of the line after the last `Final Answer:` marker.
    FinalAnswerLine,
}

impl FromStr for AnswerPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "boxed" => Ok(AnswerPattern::Boxed),
            "final-answer-line" => Ok(AnswerPattern::FinalAnswerLine),
            other => Err(format!("unknown answer pattern `{other}` (expected boxed|final-answer-line)")),
        }
    }
}

const BOXED: &str = "\\boxed{";
const FINAL_MARKER: &str = "Final Answer:";

/// Extracts and canonicalizes the final answer; [`NO_ANSWER`] when nothing matches.
pub fn extract_final_answer(text: &str, pattern: AnswerPattern) -> String {
    let raw = match pattern {
        AnswerPattern::Boxed => last_boxed(text),
        AnswerPattern::FinalAnswerLine => text
            .rfind(FINAL_MARKER)
            .map(|i| text[i + FINAL_MARKER.len()..].lines().next().unwrap_or("")),
    };
    match raw.map(canonicalize) {
        Some(s) if !s.is_empty() => s,
        _ => NO_ANSWER.to_string(),
    }
}

fn last_boxed(text: &str) -> Option<&str> {
    let mut found = None;
    let mut search = 0;
    while let Some(rel) = text[search..].find(BOXED) {
        let open = search + rel + BOXED.len();
        let mut depth = 1usize;
        let mut close = None;
        for (i, ch) in text[open..].char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(open + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match close {
            Some(end) => {
                found = Some(&text[open..end]);
                search = end + 1;
            }
            None => break,
        }
    }
    found
}

fn canonicalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_boxed() {
        assert_eq!(extract_final_answer("... the answer is \\boxed{42}.", AnswerPattern::Boxed), "42");
    }

    #[test]
    fn last_boxed_wins_and_nesting_is_balanced() {
        let text = "first \\boxed{1} then \\boxed{\\frac{1}{2}} done";
        assert_eq!(extract_final_answer(text, AnswerPattern::Boxed), "\\frac{1}{2}");
    }

    #[test]
    fn unterminated_trailing_box_falls_back_to_previous() {
        let text = "\\boxed{7} and then \\boxed{8";
        assert_eq!(extract_final_answer(text, AnswerPattern::Boxed), "7");
    }

    #[test]
    fn no_marker_is_sentinel() {
        assert_eq!(extract_final_answer("no answer here", AnswerPattern::Boxed), NO_ANSWER);
        assert_eq!(extract_final_answer("no answer here", AnswerPattern::FinalAnswerLine), NO_ANSWER);
        assert_eq!(extract_final_answer("\\boxed{   }", AnswerPattern::Boxed), NO_ANSWER);
    }

    #[test]
    fn final_answer_line_takes_last_marker_and_collapses_space() {
        let text = "Final Answer: 3\nwait, recheck.\nFinal Answer:   x  =  5 \nthanks";
        assert_eq!(extract_final_answer(text, AnswerPattern::FinalAnswerLine), "x = 5");
    }

    #[test]
    fn pattern_parses() {
        assert_eq!("boxed".parse::<AnswerPattern>().unwrap(), AnswerPattern::Boxed);
        assert_eq!(
            "final-answer-line".parse::<AnswerPattern>().unwrap(),
            AnswerPattern::FinalAnswerLine
        );
        assert!("regex".parse::<AnswerPattern>().is_err());
    }
}
