//! Parallel corpora, vocabularies and integer encoding.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::noise::{parse_mixed, render_mixed};
use crate::pinyin::{SyllableTable, Token};

pub const DEFAULT_MAX_LEN: usize = 64;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;
pub const RESERVED: [&str; 4] = [PAD, BOS, EOS, UNK];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: Vec<Token>,
    pub target: Vec<String>,
}

impl SentencePair {
    /// Source rendered in the mixed-transcript convention and the target
    /// words joined by single spaces.
    pub fn to_line(&self) -> String {
        format!("{}\t{}", render_mixed(&self.source), self.target.join(" "))
    }
}

/// Lowercased whitespace tokenization used for every target side.
pub fn tokenize_target(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Provenance {
    /// Original textual training data.
    Ottd,
    /// Syllable-mixed training data.
    Smtd,
    /// Noise-adversarial training data.
    Natd,
    /// Artificial-noise test data.
    Ant,
    /// Every character rewritten as its syllable.
    Pinyin,
    /// Concatenation of several of the above.
    Mix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
    pub provenance: Provenance,
    /// Substituted positions per pair, parallel to `pairs`; empty lists for
    /// untouched pairs.
    pub substitutions: Vec<Vec<usize>>,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<SentencePair>, provenance: Provenance) -> Self {
        let substitutions = vec![Vec::new(); pairs.len()];
        Self {
            pairs,
            provenance,
            substitutions,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&p.to_line());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub kept: usize,
    pub dropped_empty: usize,
    pub dropped_too_long: usize,
}

/// Parses `<source>TAB<target>` lines. Sources follow the mixed-transcript
/// convention, so space-delimited syllables come back as `Syllable` tokens.
pub fn parse_parallel(
    text: &str,
    origin: &str,
    table: &SyllableTable,
    max_len: usize,
) -> Result<(ParallelCorpus, LoadStats)> {
    let mut pairs = Vec::new();
    let mut stats = LoadStats::default();
    for (i, line) in text.lines().enumerate() {
        let Some((src, tgt)) = line.split_once('\t') else {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: "missing TAB between source and target".into(),
            });
        };
        let source = parse_mixed(src, table);
        let target = tokenize_target(tgt);
        if source.is_empty() || target.is_empty() {
            stats.dropped_empty += 1;
            continue;
        }
        if source.len() > max_len || target.len() > max_len {
            stats.dropped_too_long += 1;
            continue;
        }
        pairs.push(SentencePair { source, target });
    }
    stats.kept = pairs.len();
    Ok((ParallelCorpus::new(pairs, Provenance::Ottd), stats))
}

pub fn load_parallel(
    path: &Path,
    table: &SyllableTable,
    max_len: usize,
) -> Result<(ParallelCorpus, LoadStats)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Encoding)?;
    parse_parallel(&text, &path.display().to_string(), table, max_len)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

/// Dense token ↔ id mapping with the four reserved ids first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Reserved tokens followed by `tokens` in the given order; duplicates
    /// and reserved names are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut seen: std::collections::HashSet<String> = all.iter().cloned().collect();
        for t in tokens {
            let t = t.into();
            if seen.insert(t.clone()) {
                all.push(t);
            }
        }
        Self::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Counts tokens on one side of the corpora and keeps those seen at least
/// `min_count` times, most frequent first, ties broken lexicographically.
/// Source vocabularies also receive every syllable of `table` so that
/// syllable rewrites never encode as UNK.
pub fn build_vocab(
    corpora: &[&ParallelCorpus],
    side: Side,
    min_count: usize,
    table: Option<&SyllableTable>,
) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for corpus in corpora {
        for pair in &corpus.pairs {
            match side {
                Side::Source => {
                    for t in &pair.source {
                        *counts.entry(t.text()).or_default() += 1;
                    }
                }
                Side::Target => {
                    for t in &pair.target {
                        *counts.entry(t.clone()).or_default() += 1;
                    }
                }
            }
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, n)| *n >= min_count)
        .collect();
    if side == Side::Source {
        if let Some(table) = table {
            for s in table.syllables() {
                if !kept.iter().any(|(t, _)| t == s) {
                    kept.push((s.clone(), 0));
                }
            }
        }
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t)))
}

pub fn encode<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S]) -> Vec<usize> {
    tokens.iter().map(|t| vocab.id_or_unk(t.as_ref())).collect()
}

pub fn encode_source(vocab: &Vocabulary, tokens: &[Token]) -> Vec<usize> {
    tokens.iter().map(|t| vocab.id_or_unk(&t.text())).collect()
}

pub fn decode(vocab: &Vocabulary, ids: &[usize]) -> Result<Vec<String>> {
    ids.iter()
        .map(|&id| {
            vocab.token(id).map(str::to_string).ok_or(Error::Range {
                id,
                size: vocab.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pinyin::{bundled_table, tokenize};

    #[test]
    fn parse_plain_and_mixed_lines() {
        let table = bundled_table();
        let text = "建一所小学\tbuild a primary school\n建 yi 所小学\tBuild a  primary school\n";
        let (c, stats) = parse_parallel(text, "t", &table, DEFAULT_MAX_LEN).unwrap();
        assert_eq!(stats.kept, 2);
        assert_eq!(c.pairs[0].source.len(), 5);
        assert_eq!(c.pairs[0].target.len(), 4);
        assert_eq!(
            c.pairs[1].source,
            vec![
                Token::Han('建'),
                Token::Syllable("yi".into()),
                Token::Han('所'),
                Token::Han('小'),
                Token::Han('学'),
            ]
        );
        assert_eq!(c.pairs[1].target, c.pairs[0].target);
        assert_eq!(c.provenance, Provenance::Ottd);
    }

    #[test]
    fn parse_edge_cases() {
        let table = bundled_table();
        let (c, _) = parse_parallel("", "t", &table, 64).unwrap();
        assert!(c.is_empty());
        assert!(matches!(
            parse_parallel("ok\nno tab here", "t", &table, 64),
            Err(Error::Parse { line: 1, .. })
        ));
        let (c, stats) = parse_parallel("\tfoo\n学\t \n学生\ta b c\n", "t", &table, 2).unwrap();
        assert_eq!(stats.dropped_empty, 2);
        assert_eq!(stats.dropped_too_long, 1);
        assert!(c.is_empty());
    }

    fn one_pair() -> ParallelCorpus {
        ParallelCorpus::new(
            vec![SentencePair {
                source: tokenize("建一所小学"),
                target: tokenize_target("build a primary school"),
            }],
            Provenance::Ottd,
        )
    }

    #[test]
    fn source_vocab_contains_corpus_and_all_syllables() {
        let table = bundled_table();
        let c = one_pair();
        let v = build_vocab(&[&c], Side::Source, 1, Some(&table)).unwrap();
        let chars = 5;
        let extra_syllables = table.syllables().len();
        assert_eq!(v.len(), 4 + chars + extra_syllables);
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(r), Some(i));
        }
        for s in table.syllables() {
            assert!(v.id(s).is_some());
        }
    }

    #[test]
    fn empty_vocab_is_reserved_only() {
        let c = ParallelCorpus::new(Vec::new(), Provenance::Ottd);
        let v = build_vocab(&[&c], Side::Source, 1, Some(&SyllableTable::new())).unwrap();
        assert_eq!(v.len(), 4);
        assert!(build_vocab(&[&c], Side::Source, 0, None).is_err());
    }

    #[test]
    fn min_count_and_unk() {
        let mut c = one_pair();
        c.pairs.push(SentencePair {
            source: tokenize("建学"),
            target: tokenize_target("build school"),
        });
        let v = build_vocab(&[&c], Side::Target, 2, None).unwrap();
        assert_eq!(v.tokens()[4..], ["build".to_string(), "school".to_string()]);
        assert_eq!(encode(&v, &["primary"]), vec![UNK_ID]);
    }

    #[test]
    fn encode_decode() {
        let c = one_pair();
        let v = build_vocab(&[&c], Side::Target, 1, None).unwrap();
        let ids = encode(&v, &c.pairs[0].target);
        assert_eq!(decode(&v, &ids).unwrap(), c.pairs[0].target);
        assert_eq!(decode(&v, &[0, 1, 2]).unwrap(), [PAD, BOS, EOS]);
        assert!(matches!(decode(&v, &[v.len()]), Err(Error::Range { .. })));
    }

    #[test]
    fn vocab_is_deterministic() {
        let table = bundled_table();
        let c = one_pair();
        let a = build_vocab(&[&c], Side::Source, 1, Some(&table)).unwrap();
        let b = build_vocab(&[&c], Side::Source, 1, Some(&table)).unwrap();
        assert_eq!(a.tokens(), b.tokens());
    }
}
