//! Vocabularies for the two modeling levels and the character-to-syllable
//! mapping used to derive syllable labels from character transcripts.
//!
//! On disk, a vocabulary is UTF-8 text with one token per line (id = line
//! number) and a lexicon is `character<TAB>syllable1 syllable2 ...` with the
//! first pronunciation acting as the default.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const BLANK_TOKEN: &str = "<blank>";
pub const UNK_TOKEN: &str = "<unk>";
pub const SOS_EOS_TOKEN: &str = "<sos/eos>";

/// Token inventory of one modeling level.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    /// Only the syllable level has a blank.
    pub blank: Option<usize>,
    pub unk: usize,
    pub sos_eos: usize,
}

impl Vocabulary {
    /// Build from regular (non-special) tokens. Specials come first —
    /// `[<blank>,] <unk>, <sos/eos>` — then the given tokens sorted
    /// lexicographically, so construction is deterministic.
    pub fn build(mut regular: Vec<String>, with_blank: bool) -> Result<Vocabulary> {
        regular.sort();
        regular.dedup();
        let mut tokens = Vec::with_capacity(regular.len() + 3);
        if with_blank {
            tokens.push(BLANK_TOKEN.to_string());
        }
        tokens.push(UNK_TOKEN.to_string());
        tokens.push(SOS_EOS_TOKEN.to_string());
        for t in regular {
            if t == BLANK_TOKEN || t == UNK_TOKEN || t == SOS_EOS_TOKEN {
                return Err(Error::Data(format!("reserved token {t:?} in input")));
            }
            tokens.push(t);
        }
        Self::from_tokens(tokens)
    }

    /// Build from a complete ordered token list (e.g. a vocabulary file).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate token {t:?}")));
            }
        }
        let blank = ids.get(BLANK_TOKEN).copied();
        if let Some(b) = blank {
            if b != 0 {
                return Err(Error::Data(format!(
                    "{BLANK_TOKEN} must have id 0, found id {b}"
                )));
            }
        }
        let unk = *ids
            .get(UNK_TOKEN)
            .ok_or_else(|| Error::Data(format!("vocabulary lacks {UNK_TOKEN}")))?;
        let sos_eos = *ids
            .get(SOS_EOS_TOKEN)
            .ok_or_else(|| Error::Data(format!("vocabulary lacks {SOS_EOS_TOKEN}")))?;
        Ok(Vocabulary {
            tokens,
            ids,
            blank,
            unk,
            sos_eos,
        })
    }

    pub fn parse(text: &str) -> Result<Vocabulary> {
        Self::from_tokens(
            text.lines()
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a token, falling back to `<unk>`.
    pub fn encode(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(self.unk)
    }

    /// Id only if the token is in the vocabulary.
    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn decode(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Data(format!("id {id} out of range for |V| = {}", self.len())))
    }

    pub fn encode_all(&self, tokens: &[impl AsRef<str>]) -> Vec<usize> {
        tokens.iter().map(|t| self.encode(t.as_ref())).collect()
    }

    pub fn decode_all(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&i| self.decode(i).map(str::to_string))
            .collect()
    }

    /// Serialized form: one token per line.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            let _ = writeln!(s, "{t}");
        }
        s
    }
}

/// character token -> ordered pronunciations (first one is the default).
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<(String, Vec<String>)>,
    index: HashMap<String, usize>,
}

impl Lexicon {
    pub fn new(entries: Vec<(String, Vec<String>)>) -> Result<Lexicon> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (ch, prons)) in entries.iter().enumerate() {
            if prons.is_empty() {
                return Err(Error::Data(format!(
                    "character {ch:?} has no pronunciation"
                )));
            }
            if index.insert(ch.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate character {ch:?} in lexicon")));
            }
        }
        Ok(Lexicon { entries, index })
    }

    /// Parse `character<TAB>syllable1 syllable2 ...` lines.
    pub fn parse(text: &str) -> Result<Lexicon> {
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (ch, rest) = line.split_once('\t').ok_or_else(|| {
                Error::Parse(format!("lexicon line {}: missing TAB separator", no + 1))
            })?;
            let prons: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
            if prons.is_empty() {
                return Err(Error::Parse(format!(
                    "lexicon line {}: no pronunciations for {ch:?}",
                    no + 1
                )));
            }
            entries.push((ch.to_string(), prons));
        }
        Lexicon::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn characters(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(c, _)| c.as_str())
    }

    pub fn pronunciations(&self, character: &str) -> Option<&[String]> {
        self.index
            .get(character)
            .map(|&i| self.entries[i].1.as_slice())
    }

    /// Default (first listed) pronunciation.
    pub fn default_pronunciation(&self, character: &str) -> Option<&str> {
        self.pronunciations(character).map(|p| p[0].as_str())
    }

    /// Every distinct syllable appearing in the lexicon.
    pub fn all_syllables(&self) -> Vec<String> {
        let mut s: Vec<String> = self
            .entries
            .iter()
            .flat_map(|(_, p)| p.iter().cloned())
            .collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (ch, prons) in &self.entries {
            let _ = writeln!(s, "{ch}\t{}", prons.join(" "));
        }
        s
    }
}

/// Build both vocabularies from observed transcript characters plus a
/// lexicon: the character level covers the observed characters, the syllable
/// level covers every pronunciation in the lexicon.
pub fn build_vocabularies(
    transcript_chars: impl IntoIterator<Item = String>,
    lexicon: &Lexicon,
) -> Result<(Vocabulary, Vocabulary)> {
    let mut chars: Vec<String> = transcript_chars.into_iter().collect();
    chars.sort();
    chars.dedup();
    let char_vocab = Vocabulary::build(chars, false)?;
    let syl_vocab = Vocabulary::build(lexicon.all_syllables(), true)?;
    Ok((char_vocab, syl_vocab))
}

/// Per-character default pronunciation; unknown characters map to the unk
/// syllable token. Output length always equals input length.
pub fn transcribe_to_syllables(characters: &[impl AsRef<str>], lexicon: &Lexicon) -> Vec<String> {
    characters
        .iter()
        .map(|c| {
            lexicon
                .default_pronunciation(c.as_ref())
                .unwrap_or(UNK_TOKEN)
                .to_string()
        })
        .collect()
}

/// Small bundled Mandarin lexicon used by tests and examples.
pub const BUNDLED_LEXICON: &str = include_str!("../assets/lexicon_zh.txt");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_follows_the_dictionary_structure() {
        let lex = Lexicon::parse("你\tni3\n好\thao3\n").unwrap();
        let (vc, vs) =
            build_vocabularies(["你".to_string(), "好".to_string()], &lex).unwrap();
        // unk + sos/eos + 2 characters
        assert_eq!(vc.len(), 4);
        // blank + unk + sos/eos + 2 syllables
        assert_eq!(vs.len(), 5);
        assert_eq!(vs.blank, Some(0));
        assert_eq!(vc.blank, None);
    }

    #[test]
    fn ni_hao_transcribes_to_toned_syllables() {
        let lex = Lexicon::parse(BUNDLED_LEXICON).unwrap();
        let syl = transcribe_to_syllables(&["你", "好"], &lex);
        assert_eq!(syl, vec!["ni3", "hao3"]);
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let lex = Lexicon::parse("你\tni3\n").unwrap();
        let out = transcribe_to_syllables(&[] as &[&str], &lex);
        assert!(out.is_empty());
    }

    #[test]
    fn unknown_glyph_falls_back_to_unk() {
        let lex = Lexicon::parse("你\tni3\n").unwrap();
        let out = transcribe_to_syllables(&["簟"], &lex);
        assert_eq!(out, vec![UNK_TOKEN]);
    }

    #[test]
    fn polyphone_uses_first_listed_pronunciation() {
        let lex = Lexicon::parse(BUNDLED_LEXICON).unwrap();
        let prons = lex.pronunciations("行").unwrap();
        assert!(prons.len() >= 2);
        assert_eq!(lex.default_pronunciation("行").unwrap(), prons[0]);
    }

    #[test]
    fn rebuild_is_deterministic() {
        let lex = Lexicon::parse(BUNDLED_LEXICON).unwrap();
        let chars: Vec<String> = lex.characters().map(str::to_string).collect();
        let (a_c, a_s) = build_vocabularies(chars.clone(), &lex).unwrap();
        let (b_c, b_s) = build_vocabularies(chars, &lex).unwrap();
        assert_eq!(a_c.to_file_string(), b_c.to_file_string());
        assert_eq!(a_s.to_file_string(), b_s.to_file_string());
    }

    #[test]
    fn encode_decode_roundtrip() {
        let lex = Lexicon::parse(BUNDLED_LEXICON).unwrap();
        let (vc, _) =
            build_vocabularies(lex.characters().map(str::to_string).collect::<Vec<_>>(), &lex)
                .unwrap();
        for id in 0..vc.len() {
            let tok = vc.decode(id).unwrap().to_string();
            assert_eq!(vc.encode(&tok), id);
        }
    }

    #[test]
    fn duplicate_tokens_rejected() {
        assert!(Vocabulary::from_tokens(vec![
            UNK_TOKEN.into(),
            SOS_EOS_TOKEN.into(),
            "x".into(),
            "x".into()
        ])
        .is_err());
        assert!(Lexicon::parse("你\tni3\n你\tni2\n").is_err());
    }

    #[test]
    fn vocabulary_file_roundtrip() {
        let lex = Lexicon::parse(BUNDLED_LEXICON).unwrap();
        let (_, vs) = build_vocabularies(Vec::new(), &lex).unwrap();
        let reparsed = Vocabulary::parse(&vs.to_file_string()).unwrap();
        assert_eq!(reparsed.len(), vs.len());
        assert_eq!(reparsed.blank, vs.blank);
        for id in 0..vs.len() {
            assert_eq!(reparsed.decode(id).unwrap(), vs.decode(id).unwrap());
        }
    }
}
