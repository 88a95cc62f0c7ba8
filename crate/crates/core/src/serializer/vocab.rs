use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::SerializeError;

/// Prefix marking a unit that continues the previous unit's word.
pub const CONTINUATION: &str = "##";

pub const PAD: u32 = 0;
pub const START: u32 = 1;
pub const END: u32 = 2;
pub const UNK: u32 = 3;
const FIRST_TIMEGAP: u32 = 4;

const SPECIALS: [&str; 4] = ["[PAD]", "[START]", "[END]", "[UNK]"];

/// Characters every vocabulary carries so numeric cells always tokenize one
/// token per character.
const NUMERIC_CHARS: &str = "0123456789.-";

/// Subword vocabulary. Ids `0..4` are pad/start/end/unknown, followed by one
/// unit per time-gap bucket, then character units, then word units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    units: Vec<String>,
    index: BTreeMap<String, u32>,
    timegaps: u32,
    longest: usize,
}

fn is_bracketed(unit: &str) -> bool {
    unit.len() > 2 && unit.starts_with('[') && unit.ends_with(']')
}

pub fn timegap_unit(bucket: usize) -> String {
    format!("[TG{bucket}]")
}

impl Vocabulary {
    /// Reserved header for a vocabulary with `timegaps` bucket tokens.
    pub fn reserved_units(timegaps: usize) -> Vec<String> {
        SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain((0..timegaps).map(timegap_unit))
            .collect()
    }

    /// Builds a vocabulary from the reserved header plus `units`, in order.
    /// Duplicates of earlier units are skipped.
    pub fn with_units<I, S>(timegaps: usize, units: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary {
            units: Vec::new(),
            index: BTreeMap::new(),
            timegaps: timegaps as u32,
            longest: 0,
        };
        for unit in Self::reserved_units(timegaps) {
            vocab.push(unit);
        }
        for c in NUMERIC_CHARS.chars() {
            vocab.push_char(c);
        }
        for unit in units {
            vocab.push(unit.as_ref().to_string());
        }
        vocab
    }

    /// Reassembles a vocabulary from its persisted unit list, checking the
    /// reserved header and uniqueness.
    pub fn from_units(timegaps: usize, units: Vec<String>) -> Result<Self, SerializeError> {
        let reserved = Self::reserved_units(timegaps);
        if units.len() < reserved.len() || units[..reserved.len()] != reserved[..] {
            return Err(SerializeError::InvalidVocabulary(
                "reserved header does not match the time-gap bucket count".into(),
            ));
        }
        let mut vocab = Vocabulary {
            units: Vec::new(),
            index: BTreeMap::new(),
            timegaps: timegaps as u32,
            longest: 0,
        };
        for (i, unit) in units.into_iter().enumerate() {
            if unit.is_empty() {
                return Err(SerializeError::InvalidVocabulary("empty unit".into()));
            }
            if i >= reserved.len() && is_bracketed(&unit) {
                return Err(SerializeError::InvalidVocabulary(format!(
                    "reserved-style unit `{unit}` after the header"
                )));
            }
            if vocab.index.contains_key(&unit) {
                return Err(SerializeError::InvalidVocabulary(format!("duplicate unit `{unit}`")));
            }
            vocab.push(unit);
        }
        Ok(vocab)
    }

    /// Corpus-built vocabulary: every character seen (as initial and
    /// continuation unit) plus every word occurring at least `min_count`
    /// times, most frequent first.
    pub fn build<'a, I>(timegaps: usize, texts: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&'a str, usize> = BTreeMap::new();
        let mut chars: BTreeMap<char, ()> = BTreeMap::new();
        for text in texts {
            for word in text.split_whitespace() {
                *counts.entry(word).or_default() += 1;
                for c in word.chars() {
                    chars.insert(c, ());
                }
            }
        }
        let mut vocab = Self::with_units(timegaps, core::iter::empty::<&str>());
        for c in chars.keys() {
            vocab.push_char(*c);
        }
        let mut words: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, n)| *n >= min_count.max(1) && w.chars().count() > 1 && !w.starts_with(CONTINUATION))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        for (word, _) in words {
            vocab.push(word.to_string());
        }
        vocab
    }

    fn push_char(&mut self, c: char) {
        self.push(c.to_string());
        self.push(format!("{CONTINUATION}{c}"));
    }

    fn push(&mut self, unit: String) {
        if self.index.contains_key(&unit) {
            return;
        }
        self.longest = self.longest.max(unit.chars().count());
        self.index.insert(unit.clone(), self.units.len() as u32);
        self.units.push(unit);
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn timegap_count(&self) -> usize {
        self.timegaps as usize
    }

    pub fn id(&self, unit: &str) -> Option<u32> {
        self.index.get(unit).copied()
    }

    pub fn unit(&self, id: u32) -> Option<&str> {
        self.units.get(id as usize).map(String::as_str)
    }

    pub fn timegap_token(&self, bucket: usize) -> Option<u32> {
        (bucket < self.timegaps as usize).then(|| FIRST_TIMEGAP + bucket as u32)
    }

    /// Bucket index when `id` is a time-gap token.
    pub fn timegap_bucket(&self, id: u32) -> Option<usize> {
        (FIRST_TIMEGAP..FIRST_TIMEGAP + self.timegaps)
            .contains(&id)
            .then(|| (id - FIRST_TIMEGAP) as usize)
    }

    /// Pad, start, end, unknown and time-gap tokens.
    pub fn is_reserved(&self, id: u32) -> bool {
        id < FIRST_TIMEGAP + self.timegaps
    }

    pub fn is_continuation(&self, id: u32) -> bool {
        self.unit(id)
            .is_some_and(|u| u.len() > CONTINUATION.len() && u.starts_with(CONTINUATION))
    }

    /// Greedy longest-match tokenization of each whitespace-delimited word.
    /// Characters without a unit become [`UNK`].
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            self.tokenize_word(word, &mut out);
        }
        out
    }

    fn tokenize_word(&self, word: &str, out: &mut Vec<u32>) {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(core::iter::once(word.len()))
            .collect();
        let n_chars = bounds.len() - 1;
        let mut start = 0;
        let mut candidate = String::new();
        while start < n_chars {
            let mut matched = None;
            let mut end = (start + self.longest).min(n_chars);
            while end > start {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(id) = self.index.get(candidate.as_str()) {
                    matched = Some((*id, end));
                    break;
                }
                end -= 1;
            }
            match matched {
                Some((id, next)) => {
                    out.push(id);
                    start = next;
                }
                None => {
                    out.push(UNK);
                    start += 1;
                }
            }
        }
    }

    /// Unit strings of `tokens`, continuation markers kept.
    pub fn units_of(&self, tokens: &[u32]) -> Vec<&str> {
        tokens.iter().map(|t| self.unit(*t).unwrap_or("[UNK]")).collect()
    }

    /// Joins units back into space-separated words. Reserved tokens are
    /// skipped.
    pub fn decode(&self, tokens: &[u32]) -> String {
        let mut out = String::new();
        for &t in tokens {
            if self.is_reserved(t) && t != UNK {
                continue;
            }
            let unit = self.unit(t).unwrap_or("[UNK]");
            if self.is_continuation(t) {
                out.push_str(&unit[CONTINUATION.len()..]);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(unit);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn fixture() -> Vocabulary {
        let mut v = Vocabulary::build(9, ["lymphocytes qqq"], 5);
        v.push("atypical".into());
        v.push("lympho".into());
        v.push("##cytes".into());
        v
    }

    fn stripped(v: &Vocabulary, tokens: &[u32]) -> Vec<String> {
        tokens
            .iter()
            .map(|t| v.unit(*t).unwrap().trim_start_matches(CONTINUATION).to_string())
            .collect()
    }

    #[test]
    fn reserved_layout() {
        let v = Vocabulary::with_units(9, ["abc"]);
        assert_eq!(v.unit(PAD), Some("[PAD]"));
        assert_eq!(v.unit(UNK), Some("[UNK]"));
        assert_eq!(v.timegap_token(0), Some(4));
        assert_eq!(v.unit(12), Some("[TG8]"));
        assert_eq!(v.timegap_token(9), None);
        assert_eq!(v.timegap_bucket(12), Some(8));
        assert!(v.is_reserved(12) && !v.is_reserved(13));
    }

    #[test]
    fn whole_word_unit() {
        let v = fixture();
        assert_eq!(stripped(&v, &v.tokenize("atypical")), vec!["atypical"]);
    }

    #[test]
    fn longest_match_prefers_subwords() {
        let v = fixture();
        let toks = v.tokenize("lymphocytes");
        assert_eq!(v.units_of(&toks), vec!["lympho", "##cytes"]);
        assert_eq!(stripped(&v, &toks), vec!["lympho", "cytes"]);
    }

    #[test]
    fn character_fallback() {
        let v = fixture();
        let toks = v.tokenize("qqq");
        assert_eq!(stripped(&v, &toks), vec!["q", "q", "q"]);
        assert_eq!(v.decode(&toks), "qqq");
    }

    #[test]
    fn unknown_characters_become_unk() {
        let v = fixture();
        assert_eq!(v.tokenize("z"), vec![UNK]);
    }

    #[test]
    fn from_units_checks_header() {
        let v = fixture();
        let again = Vocabulary::from_units(9, v.units().to_vec()).unwrap();
        assert_eq!(again, v);
        assert!(Vocabulary::from_units(8, v.units().to_vec()).is_err());
        let mut dup = v.units().to_vec();
        dup.push("lympho".into());
        assert!(Vocabulary::from_units(9, dup).is_err());
    }
}
