use std::collections::{BTreeSet, HashMap};

pub type TokenId = usize;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

/// Word-level tokenizer. Text splits into alphanumeric runs, newlines and
/// single punctuation characters; whitespace is dropped. A word missing
/// from the vocabulary falls back to its characters, then to `<unk>`.
#[derive(Clone, Debug)]
pub struct WordTokenizer {
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl WordTokenizer {
    /// Builds a vocabulary from every piece of `corpus` plus `extra` words.
    /// The resulting ids are independent of input order.
    pub fn from_corpus<'a>(corpus: impl IntoIterator<Item = &'a str>, extra: &[&str]) -> Self {
        let mut words = BTreeSet::new();
        for text in corpus {
            for piece in split(text) {
                words.insert(piece.to_string());
            }
        }
        for w in extra {
            words.insert((*w).to_string());
        }
        Self::from_vocab(words)
    }

    pub fn from_vocab(words: impl IntoIterator<Item = String>) -> Self {
        let mut vocab = vec![PAD.to_string(), UNK.to_string(), EOS.to_string()];
        for w in words {
            if !vocab.contains(&w) {
                vocab.push(w);
            }
        }
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { vocab, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Vocabulary entries other than the special tokens, in id order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.vocab[3..].iter().map(String::as_str)
    }

    pub fn eos(&self) -> TokenId {
        self.index[EOS]
    }

    pub fn unk(&self) -> TokenId {
        self.index[UNK]
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.vocab.get(id).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for piece in split(text) {
            if let Some(id) = self.id(piece) {
                out.push(id);
                continue;
            }
            for ch in piece.chars() {
                let mut buf = [0u8; 4];
                out.push(self.id(ch.encode_utf8(&mut buf)).unwrap_or(self.unk()));
            }
        }
        out
    }

    /// Order-sensitive digest of the vocabulary, used in checkpoint fingerprints.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for w in &self.vocab {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        hex::encode(&h.finalize()[..8])
    }
}

fn split(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            out.push(&text[s..i]);
        }
        if ch == '\n' || !ch.is_whitespace() {
            out.push(&text[i..i + ch.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(
            split("label (e.g. 'a', 'ag')"),
            vec!["label", "(", "e", ".", "g", ".", "'", "a", "'", ",", "'", "ag", "'", ")"]
        );
        assert_eq!(split("x\n\ny"), vec!["x", "\n", "\n", "y"]);
    }

    #[test]
    fn unknown_word_falls_back_to_chars() {
        let tok = WordTokenizer::from_vocab(["a".to_string(), "g".to_string()]);
        let ids = tok.encode("ag");
        assert_eq!(ids, vec![tok.id("a").unwrap(), tok.id("g").unwrap()]);
        assert_eq!(tok.encode("zz"), vec![tok.unk(), tok.unk()]);
    }

    #[test]
    fn vocab_is_order_independent() {
        let a = WordTokenizer::from_corpus(["one two", "three"], &[]);
        let b = WordTokenizer::from_corpus(["three", "two one"], &[]);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }
}
