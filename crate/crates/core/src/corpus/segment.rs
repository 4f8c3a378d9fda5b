//! Tokenization and sentence segmentation.

/// Tokens that end a sentence.
pub const DEFAULT_TERMINATORS: [&str; 8] = [".", "!", "?", ";", "。", "！", "？", "；"];

/// Punctuation split off word edges without ending a sentence.
const INNER_PUNCT: [char; 5] = [',', '，', '、', ':', '：'];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segmenter {
    terminators: Vec<String>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Self::new(DEFAULT_TERMINATORS.iter().map(|s| s.to_string()).collect())
    }
}

impl Segmenter {
    pub fn new(terminators: Vec<String>) -> Self {
        Self { terminators }
    }

    pub fn terminators(&self) -> &[String] {
        &self.terminators
    }

    fn is_split_char(&self, c: char) -> bool {
        INNER_PUNCT.contains(&c) || self.terminators.iter().any(|t| t.chars().eq(std::iter::once(c)))
    }

    pub fn is_terminator(&self, token: &str) -> bool {
        self.terminators.iter().any(|t| t == token)
    }

    /// Lowercases, splits on whitespace, and peels punctuation off the edges
    /// of each chunk into separate tokens.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let chunk = chunk.to_lowercase();
            let chars: Vec<char> = chunk.chars().collect();
            let mut start = 0;
            let mut end = chars.len();
            let mut lead = Vec::new();
            while start < end && self.is_split_char(chars[start]) {
                lead.push(chars[start].to_string());
                start += 1;
            }
            let mut trail = Vec::new();
            while end > start && self.is_split_char(chars[end - 1]) {
                trail.push(chars[end - 1].to_string());
                end -= 1;
            }
            out.extend(lead);
            if start < end {
                out.push(chars[start..end].iter().collect());
            }
            out.extend(trail.into_iter().rev());
        }
        out
    }

    /// Splits a token stream after every terminator token. A trailing run
    /// without a terminator forms the last segment.
    pub fn segment_tokens(&self, tokens: Vec<String>) -> Vec<Vec<String>> {
        let mut segments = Vec::new();
        let mut cur = Vec::new();
        for tok in tokens {
            let end = self.is_terminator(&tok);
            cur.push(tok);
            if end {
                segments.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            segments.push(cur);
        }
        segments
    }

    pub fn segment_sentences(&self, text: &str) -> Vec<Vec<String>> {
        self.segment_tokens(self.tokenize(text))
    }
}

pub fn segment_sentences(text: &str) -> Vec<Vec<String>> {
    Segmenter::default().segment_sentences(text)
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut s = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(t.as_ref());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn two_sentences() {
        assert_eq!(
            segment_sentences("A red dress. Soft fabric!"),
            vec![toks(&["a", "red", "dress", "."]), toks(&["soft", "fabric", "!"])]
        );
    }

    #[test]
    fn no_terminator_is_one_segment() {
        let s = segment_sentences("no punctuation here");
        assert_eq!(s, vec![toks(&["no", "punctuation", "here"])]);
    }

    #[test]
    fn three_short_sentences() {
        assert_eq!(segment_sentences("x. y. z.").len(), 3);
    }

    #[test]
    fn full_width_terminators() {
        let s = segment_sentences("红色 连衣裙。 很 好看！");
        assert_eq!(s, vec![toks(&["红色", "连衣裙", "。"]), toks(&["很", "好看", "！"])]);
    }

    #[test]
    fn inner_numbers_survive() {
        assert_eq!(Segmenter::default().tokenize("size 3.5, fits."), toks(&["size", "3.5", ",", "fits", "."]));
    }

    proptest! {
        #[test]
        fn segments_concatenate_to_token_stream(text in "[a-c .!?;,]{0,40}") {
            let seg = Segmenter::default();
            let tokens = seg.tokenize(&text);
            let parts = seg.segment_sentences(&text);
            prop_assert!(parts.iter().all(|p| !p.is_empty()));
            let joined: Vec<String> = parts.into_iter().flatten().collect();
            prop_assert_eq!(joined, tokens);
        }
    }
}
