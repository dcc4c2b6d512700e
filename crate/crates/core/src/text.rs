//! Text normalization and answer matching.
//!
//! Every comparison between generated text and gold answers goes through
//! [`normalize_text`]: NFKC, lowercase, every non-alphanumeric character
//! mapped to a space, whitespace collapsed. Containment is then checked at
//! word boundaries so that "paris" does not match inside "parisian".

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MatchError {
    #[error("gold answer {0:?} is empty after normalization")]
    InvalidGold(String),
    #[error("gold answer list is empty")]
    EmptyGolds,
}

/// A string in canonical matching form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedText(String);

impl NormalizedText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.0.split(' ').filter(|t| !t.is_empty())
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for NormalizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for NormalizedText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

fn normalize_once(s: &str) -> String {
    let folded: String = s.nfkc().flat_map(char::to_lowercase).nfkc().collect();
    let mut out = String::with_capacity(folded.len());
    let mut pending_space = false;
    for c in folded.chars() {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}

pub fn normalize_text(s: &str) -> NormalizedText {
    let mut current = normalize_once(s);
    // Lowercasing can in rare cases expose a new compatibility mapping;
    // iterate to the fixpoint so the result is idempotent.
    for _ in 0..4 {
        let next = normalize_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    NormalizedText(current)
}

pub fn tokenize(s: &str) -> Vec<String> {
    normalize_text(s).tokens().map(str::to_owned).collect()
}

fn contains_normalized(pred: &NormalizedText, gold: &NormalizedText) -> bool {
    if pred.is_empty() {
        return false;
    }
    let haystack = format!(" {} ", pred.as_str());
    let needle = format!(" {} ", gold.as_str());
    haystack.contains(&needle)
}

/// True iff the normalized gold occurs in the normalized prediction as a
/// whole-word span.
pub fn contains_answer(pred: &str, gold: &str) -> Result<bool, MatchError> {
    let gold_norm = normalize_text(gold);
    if gold_norm.is_empty() {
        return Err(MatchError::InvalidGold(gold.to_owned()));
    }
    Ok(contains_normalized(&normalize_text(pred), &gold_norm))
}

/// Normalized, deduplicated golds. Golds that normalize to nothing are
/// dropped; an empty result is an error.
pub fn normalized_golds<S: AsRef<str>>(golds: &[S]) -> Result<Vec<NormalizedText>, MatchError> {
    if golds.is_empty() {
        return Err(MatchError::EmptyGolds);
    }
    let set: BTreeSet<NormalizedText> = golds
        .iter()
        .map(|g| normalize_text(g.as_ref()))
        .filter(|g| !g.is_empty())
        .collect();
    if set.is_empty() {
        return Err(MatchError::InvalidGold(
            golds.first().map(|g| g.as_ref().to_owned()).unwrap_or_default(),
        ));
    }
    Ok(set.into_iter().collect())
}

/// Fraction of distinct gold answers contained in `pred`.
pub fn matching_ratio<S: AsRef<str>>(pred: &str, golds: &[S]) -> Result<f64, MatchError> {
    let golds = normalized_golds(golds)?;
    let pred = normalize_text(pred);
    let hits = golds.iter().filter(|g| contains_normalized(&pred, g)).count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Whole-string match of the normalized prediction against any gold.
pub fn strict_match<S: AsRef<str>>(pred: &str, golds: &[S]) -> Result<bool, MatchError> {
    let golds = normalized_golds(golds)?;
    let pred = normalize_text(pred);
    Ok(golds.contains(&pred))
}

/// Count of whitespace-separated tokens, used as the fallback token count
/// when an endpoint does not report usage.
pub fn whitespace_token_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Independent oracle: compare every window of gold-length tokens.
    fn window_scan(pred: &str, gold: &str) -> bool {
        let p = tokenize(pred);
        let g = tokenize(gold);
        if g.is_empty() || g.len() > p.len() {
            return false;
        }
        (0..=p.len() - g.len()).any(|i| p[i..i + g.len()] == g[..])
    }

    #[test]
    fn normalizes_case_and_punctuation() {
        assert_eq!(normalize_text("The Capital, is PARIS!").as_str(), "the capital is paris");
        assert_eq!(normalize_text("").as_str(), "");
        assert_eq!(normalize_text("a  b\tc").as_str(), "a b c");
    }

    #[test]
    fn compatibility_forms_fold() {
        assert_eq!(normalize_text("ＰＡＲＩＳ").as_str(), "paris");
        assert_eq!(normalize_text("ﬁsh").as_str(), "fish");
    }

    #[test]
    fn containment_respects_word_boundaries() {
        assert!(contains_answer("The capital is Paris.", "Paris").unwrap());
        assert!(!contains_answer("Parisian nights", "Paris").unwrap());
        let pred = "born in 1947 in India";
        assert_eq!(contains_answer(pred, "1947").unwrap(), window_scan(pred, "1947"));
        assert!(window_scan(pred, "1947"));
    }

    #[test]
    fn empty_gold_is_rejected() {
        assert_eq!(contains_answer("x", " ?! "), Err(MatchError::InvalidGold(" ?! ".into())));
        assert_eq!(matching_ratio::<&str>("x", &[]), Err(MatchError::EmptyGolds));
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(matching_ratio("It is Paris", &["Paris"]).unwrap(), 1.0);
        assert_eq!(matching_ratio("", &["a", "b"]).unwrap(), 0.0);
        let pred = "Independence came in 1947 for India";
        let golds = ["1947", "august", "india"];
        let oracle = golds.iter().filter(|g| window_scan(pred, g)).count() as f64 / 3.0;
        assert_eq!(oracle, 2.0 / 3.0);
        assert_eq!(matching_ratio(pred, &golds).unwrap(), oracle);
    }

    #[test]
    fn duplicate_golds_do_not_inflate() {
        let r = matching_ratio("paris", &["Paris", "PARIS.", "Lyon"]).unwrap();
        assert_eq!(r, 0.5);
    }

    #[test]
    fn strict_match_whole_string() {
        assert!(strict_match("Paris.", &["paris"]).unwrap());
        assert!(!strict_match("It is Paris", &["paris"]).unwrap());
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "b", "ab", "Ba", "c", "1947", "x-y", "É"]).prop_map(String::from)
    }

    fn phrase(max: usize) -> impl Strategy<Value = String> {
        prop::collection::vec((word(), prop::sample::select(vec![" ", ", ", ".", "  ", "!"])), 0..max)
            .prop_map(|parts| parts.into_iter().map(|(w, sep)| format!("{w}{sep}")).collect())
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in any::<String>()) {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(once.as_str()), once);
        }

        #[test]
        fn containment_matches_window_oracle(pred in phrase(12), gold in phrase(3)) {
            prop_assume!(!normalize_text(&gold).is_empty());
            prop_assert_eq!(contains_answer(&pred, &gold).unwrap(), window_scan(&pred, &gold));
        }

        #[test]
        fn ratio_is_monotone_under_append(pred in phrase(8), extra in phrase(8),
                                          golds in prop::collection::vec(word(), 1..5)) {
            let base = matching_ratio(&pred, &golds).unwrap();
            let longer = matching_ratio(&format!("{pred} {extra}"), &golds).unwrap();
            prop_assert!(longer >= base);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }
}
