//! Fixed finite token vocabulary shared by prompts, structured outputs, and
//! the trainable sequence policy.
//!
//! Tokenization is greedy longest-match over the raw text. The vocabulary
//! carries multi-character tokens for everything the grammar cares about
//! (tags, section markers, profile tokens, service ids, level and action
//! words) plus every printable ASCII character and newline as single-character
//! fallbacks, so tokenizing any printable-ASCII text is total and
//! detokenization is the exact inverse (concatenation).

use std::collections::HashMap;
use std::sync::OnceLock;


use crate::rng::fnv1a;
use crate::sim::ServiceId;

/// Token identifier: an index into the vocabulary.
pub type TokenId = u32;

#[derive(Debug, thiserror::Error)]
pub enum TokenizeError {
    #[error("untokenizable character {ch:?} at byte {at}")]
    Untokenizable { ch: char, at: usize },
    #[error("unknown token id {0}")]
    UnknownToken(TokenId),
}

/// Immutable token alphabet with a longest-match tokenizer.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    /// Candidate token ids per leading byte, longest token first.
    by_first_byte: HashMap<u8, Vec<TokenId>>,
}

impl Vocab {
    pub fn from_tokens<I, S>(items: I) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = Vec::new();
        let mut ids = HashMap::new();
        for item in items {
            let s: String = item.into();
            if ids.contains_key(&s) {
                continue;
            }
            ids.insert(s.clone(), tokens.len() as TokenId);
            tokens.push(s);
        }
        let mut by_first_byte: HashMap<u8, Vec<TokenId>> = HashMap::new();
        for (idx, tok) in tokens.iter().enumerate() {
            let first = tok.as_bytes()[0];
            by_first_byte.entry(first).or_default().push(idx as TokenId);
        }
        for candidates in by_first_byte.values_mut() {
            candidates.sort_by(|a, b| {
                let (la, lb) = (tokens[*a as usize].len(), tokens[*b as usize].len());
                lb.cmp(&la).then(a.cmp(b))
            });
        }
        Vocab { tokens, ids, by_first_byte }
    }

    /// The standard vocabulary used by the prompt pipeline.
    pub fn standard() -> &'static Vocab {
        static STANDARD: OnceLock<Vocab> = OnceLock::new();
        STANDARD.get_or_init(|| {
            let mut items: Vec<String> = Vec::new();
            items.push("<s>".into());
            for tag in ["think", "Fault", "Counterfactual", "root"] {
                items.push(format!("<{tag}>"));
                items.push(format!("</{tag}>"));
            }
            for marker in [
                "[GUIDANCE]",
                "[DEPLOYMENTS]",
                "[CALL_GRAPH]",
                "[EXPECTED_OUTPUT]",
                "[CLUSTER_STATE]",
                "[CARRIER]",
            ] {
                items.push(marker.into());
            }
            for p in ["@C", "@D", "@M", "@N", "@c", "@d", "@m", "@n"] {
                items.push(p.into());
            }
            for id in 1..=20u32 {
                items.push(format!("#{id}"));
            }
            for word in [
                "LOW", "MEDIUM", "HIGH", "OK", "AT_RISK", "VIOLATED", "IMPROVED", "NEUTRAL",
                "DEGRADED", "IMPROVES", "DEGRADES", "SCALE_OUT", "SCALE_IN", "CPU_UP", "CPU_DOWN",
                "MEM_UP", "MEM_DOWN", "IF", "THEN", "NONE", "cpu", "mem", "latency", "replicas",
                "ready", "rps", "slo", "arrival", "forecast", "service", "profile", "support",
                "cluster", "effect", "size", "->", "<-",
            ] {
                items.push(word.into());
            }
            // Printable ASCII plus newline as single-character fallbacks.
            for b in 0x20u8..=0x7e {
                items.push((b as char).to_string());
            }
            items.push("\n".into());
            Vocab::from_tokens(items)
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_str(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn bos(&self) -> TokenId {
        self.id_of("<s>").unwrap_or(0)
    }

    pub fn service_token(&self, id: ServiceId) -> Option<TokenId> {
        self.id_of(&format!("#{}", id.0))
    }

    pub fn is_whitespace(&self, id: TokenId) -> bool {
        matches!(self.token_str(id), Some(" ") | Some("\n"))
    }

    /// Greedy longest-match tokenization; total for any text made of
    /// vocabulary-covered characters.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, TokenizeError> {
        let bytes = text.as_bytes();
        let mut out = Vec::with_capacity(text.len() / 2);
        let mut pos = 0;
        while pos < bytes.len() {
            let first = bytes[pos];
            let matched = self.by_first_byte.get(&first).and_then(|candidates| {
                candidates.iter().copied().find(|&id| {
                    let tok = self.tokens[id as usize].as_bytes();
                    bytes[pos..].starts_with(tok)
                })
            });
            match matched {
                Some(id) => {
                    out.push(id);
                    pos += self.tokens[id as usize].len();
                }
                None => {
                    let ch = text[pos..].chars().next().unwrap_or('\u{fffd}');
                    return Err(TokenizeError::Untokenizable { ch, at: pos });
                }
            }
        }
        Ok(out)
    }

    /// Tokenizes after replacing unsupported characters with `?`; total.
    pub fn tokenize_lossy(&self, text: &str) -> Vec<TokenId> {
        let cleaned: String = text
            .chars()
            .map(|c| if c == '\n' || (' '..='~').contains(&c) { c } else { '?' })
            .collect();
        self.tokenize(&cleaned).expect("cleaned text is printable ASCII")
    }

    /// Content tokenization for generated sequences: lossy tokenization with
    /// whitespace tokens dropped. Sequence policies are trained on and emit
    /// these; [`Vocab::detokenize_spaced`] renders them back to text.
    pub fn tokenize_content(&self, text: &str) -> Vec<TokenId> {
        self.tokenize_lossy(text)
            .into_iter()
            .filter(|&t| !self.is_whitespace(t))
            .collect()
    }

    /// Renders a generated token sequence as text, one space between tokens.
    pub fn detokenize_spaced(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &id) in tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            if let Some(tok) = self.token_str(id) {
                out.push_str(tok);
            }
        }
        out
    }

    /// Exact inverse of tokenization: concatenation of token strings.
    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in tokens {
            if let Some(tok) = self.token_str(id) {
                out.push_str(tok);
            }
        }
        out
    }

    /// Stable hash of the alphabet, recorded in policy checkpoints.
    pub fn hash(&self) -> u64 {
        let mut joined = String::new();
        for tok in &self.tokens {
            joined.push_str(tok);
            joined.push('\u{0}');
        }
        fnv1a(joined.as_bytes())
    }
}

// A vocabulary is plain data: it serializes as its ordered token list.
impl serde::Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(serializer)
    }
}

impl<'de> serde::Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let items: Vec<String> = Vec::deserialize(deserializer)?;
        Ok(Vocab::from_tokens(items))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_round_trips_prompt_like_text() {
        let v = Vocab::standard();
        let text = "[CLUSTER_STATE]\n#1 cpu HIGH mem LOW latency VIOLATED replicas 2 ready 2\narrival MEDIUM forecast 150 rps";
        let tokens = v.tokenize(text).unwrap();
        assert_eq!(v.detokenize(&tokens), text);
    }

    #[test]
    fn longest_match_prefers_multichar_tokens() {
        let v = Vocab::standard();
        let toks = v.tokenize("#12").unwrap();
        assert_eq!(toks.len(), 1);
        assert_eq!(v.token_str(toks[0]), Some("#12"));
        let toks = v.tokenize("<think>").unwrap();
        assert_eq!(toks.len(), 1);
    }

    #[test]
    fn single_char_fallback_covers_arbitrary_words() {
        let v = Vocab::standard();
        let text = "front-end says hello_world (v2)!";
        let tokens = v.tokenize(text).unwrap();
        assert_eq!(v.detokenize(&tokens), text);
    }

    #[test]
    fn non_ascii_is_an_error_strict_and_replaced_lossy() {
        let v = Vocab::standard();
        assert!(v.tokenize("caf\u{e9}").is_err());
        let toks = v.tokenize_lossy("caf\u{e9}");
        assert_eq!(v.detokenize(&toks), "caf?");
    }

    #[test]
    fn custom_vocab_for_fixtures() {
        let v = Vocab::from_tokens(["a", "b", "<stop>"]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id_of("<stop>"), Some(2));
        let toks = v.tokenize("ab").unwrap();
        assert_eq!(toks, vec![0, 1]);
    }

    #[test]
    fn hash_distinguishes_alphabets() {
        let a = Vocab::from_tokens(["x", "y"]);
        let b = Vocab::from_tokens(["x", "z"]);
        assert_ne!(a.hash(), b.hash());
    }
}
