//! Term normalization and tokenization shared by extraction, retrieval and
//! embedding.
//!
//! Normalization rule for entity names: lowercase, collapse whitespace,
//! then singularize the final word. Singularization first consults
//! [`IRREGULAR_PLURALS`]; otherwise a trailing `s` is stripped unless the
//! word ends in `ss`, `us` or `is` (so "bus", "glass" and "axis" survive).

/// Irregular plural → singular table.
pub const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("people", "person"),
    ("children", "child"),
    ("men", "man"),
    ("women", "woman"),
    ("feet", "foot"),
    ("buses", "bus"),
    ("crosses", "cross"),
    ("lorries", "lorry"),
];

/// Words that never count as content in key phrases.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "any", "are", "as", "at", "be", "by", "for", "from", "if", "in", "into",
    "is", "it", "its", "of", "on", "or", "so", "such", "than", "that", "the", "their", "them",
    "there", "they", "this", "to", "under", "when", "where", "which", "who", "with", "within",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.contains(&word)
}

/// Singular form of a single lowercase word.
pub fn singularize_word(word: &str) -> String {
    if let Some((_, s)) = IRREGULAR_PLURALS.iter().find(|(p, _)| *p == word) {
        return (*s).to_string();
    }
    let keep = word.len() <= 2
        || word.ends_with("ss")
        || word.ends_with("us")
        || word.ends_with("is")
        || !word.ends_with('s');
    if keep {
        word.to_string()
    } else {
        word[..word.len() - 1].to_string()
    }
}

/// Normalize a term: lowercase, `_`/whitespace runs collapsed to one space,
/// last word singularized.
pub fn normalize_term(term: &str) -> String {
    let lowered = term.to_lowercase().replace('_', " ");
    let mut words: Vec<String> = lowered.split_whitespace().map(str::to_string).collect();
    if let Some(last) = words.last_mut() {
        *last = singularize_word(last);
    }
    words.join(" ")
}

/// Tokenizer used by the default embedder and keyword matching: splits on any
/// character that is not alphanumeric, lowercases, drops empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Tokens with their byte spans in `text`, lowercased and singularized.
pub fn token_spans(text: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            out.push((s, i, singularize_word(&text[s..i].to_lowercase())));
        }
    }
    if let Some(s) = start {
        out.push((s, text.len(), singularize_word(&text[s..].to_lowercase())));
    }
    out
}

/// Tokens of `text` with every token singularized. Used for phrase matching so
/// "pedestrians" in a clause matches the keyword "pedestrian".
pub fn normalized_tokens(text: &str) -> Vec<String> {
    tokenize(text).iter().map(|t| singularize_word(t)).collect()
}

/// Whether the normalized token sequence `phrase` occurs contiguously in
/// `haystack` (both already normalized).
pub fn contains_phrase(haystack: &[String], phrase: &[String]) -> bool {
    if phrase.is_empty() || phrase.len() > haystack.len() {
        return false;
    }
    haystack.windows(phrase.len()).any(|w| w == phrase)
}

/// Maximal runs of consecutive non-stopwords, each joined by single spaces.
/// "yield obligation at crossings" → ["yield obligation", "crossing"].
pub fn content_phrases(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run: Vec<String> = Vec::new();
    for tok in tokenize(text) {
        if is_stopword(&tok) {
            if !run.is_empty() {
                out.push(normalize_term(&run.join(" ")));
                run.clear();
            }
        } else {
            run.push(tok);
        }
    }
    if !run.is_empty() {
        out.push(normalize_term(&run.join(" ")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plural_pedestrians_normalizes() {
        assert_eq!(normalize_term("Pedestrians"), "pedestrian");
        assert_eq!(normalize_term("solid  lines"), "solid line");
        assert_eq!(normalize_term("solid_line"), "solid line");
    }

    #[test]
    fn words_ending_in_s_that_are_singular() {
        assert_eq!(normalize_term("bus"), "bus");
        assert_eq!(normalize_term("buses"), "bus");
        assert_eq!(normalize_term("glass"), "glass");
        assert_eq!(normalize_term("children"), "child");
    }

    #[test]
    fn content_phrases_split_on_stopwords() {
        assert_eq!(
            content_phrases("yield obligation at crossings"),
            vec!["yield obligation".to_string(), "crossing".to_string()]
        );
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("Yield, to pedestrians!"), vec!["yield", "to", "pedestrians"]);
    }
}
