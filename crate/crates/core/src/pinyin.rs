//! Character-to-syllable conversion and homophone lookup.
//!
//! A [`SyllableTable`] maps each Chinese character to one toneless pinyin
//! syllable (`ü` written as `v`) and keeps the inverse homophone classes in
//! file order. Text is split into [`Token`]s: one per CJK ideograph, one per
//! maximal run of anything else.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Upper bound on distinct syllables in a table.
pub const MAX_SYLLABLES: usize = 500;
pub const MAX_SYLLABLE_LEN: usize = 6;

/// CJK Unified Ideographs plus Extension A.
pub fn is_cjk(c: char) -> bool {
    matches!(c, '\u{4E00}'..='\u{9FFF}' | '\u{3400}'..='\u{4DBF}')
}

/// `[a-z]{1,6}`
pub fn is_valid_syllable(s: &str) -> bool {
    (1..=MAX_SYLLABLE_LEN).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_lowercase())
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "lowercase")]
pub enum Token {
    Han(char),
    Syllable(String),
    Foreign(String),
}

impl Token {
    /// The token's surface text: the character, the syllable, or the
    /// foreign run verbatim.
    pub fn text(&self) -> String {
        match self {
            Token::Han(c) => c.to_string(),
            Token::Syllable(s) | Token::Foreign(s) => s.clone(),
        }
    }

    pub fn is_han(&self) -> bool {
        matches!(self, Token::Han(_))
    }

    pub fn is_syllable(&self) -> bool {
        matches!(self, Token::Syllable(_))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Han(c) => write!(f, "{c}"),
            Token::Syllable(s) | Token::Foreign(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SyllableTable {
    syllables: Vec<String>,
    syllable_ids: HashMap<String, usize>,
    members: Vec<Vec<char>>,
    char_syllable: HashMap<char, usize>,
    chars: Vec<char>,
}

impl SyllableTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one mapping; the caller guarantees `syllable` is valid and `c`
    /// is new.
    fn insert(&mut self, c: char, syllable: &str) {
        let sid = match self.syllable_ids.get(syllable) {
            Some(&id) => id,
            None => {
                let id = self.syllables.len();
                self.syllables.push(syllable.to_string());
                self.syllable_ids.insert(syllable.to_string(), id);
                self.members.push(Vec::new());
                id
            }
        };
        self.members[sid].push(c);
        self.char_syllable.insert(c, sid);
        self.chars.push(c);
    }

    /// Builds a table from `(character, syllable)` pairs, validating them
    /// exactly like the file loader.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (char, &'a str)>) -> Result<Self> {
        let mut text = String::new();
        for (c, s) in pairs {
            text.push(c);
            text.push('\t');
            text.push_str(s);
            text.push('\n');
        }
        Self::parse(&text, "<pairs>")
    }

    /// Parses the `<character>TAB<syllable>` format; `#` lines and blank
    /// lines are skipped.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut table = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let parse_err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: line_no,
                message,
            };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(parse_err(format!(
                    "expected 2 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let mut key = fields[0].chars();
            let c = match (key.next(), key.next()) {
                (Some(c), None) => c,
                _ => {
                    return Err(parse_err(format!(
                        "key {:?} is not a single character",
                        fields[0]
                    )))
                }
            };
            let syllable = fields[1];
            if !is_valid_syllable(syllable) {
                return Err(parse_err(format!("invalid syllable {syllable:?}")));
            }
            if table.char_syllable.contains_key(&c) {
                return Err(Error::Duplicate {
                    path: origin.to_string(),
                    line: line_no,
                    key: c.to_string(),
                });
            }
            table.insert(c, syllable);
            if table.syllables.len() > MAX_SYLLABLES {
                return Err(parse_err(format!(
                    "more than {MAX_SYLLABLES} distinct syllables"
                )));
            }
        }
        Ok(table)
    }

    /// Serializes in load order; `parse(to_tsv())` reproduces the table.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for &c in &self.chars {
            out.push(c);
            out.push('\t');
            out.push_str(&self.syllables[self.char_syllable[&c]]);
            out.push('\n');
        }
        out
    }

    pub fn syllable_of(&self, c: char) -> Option<&str> {
        self.char_syllable
            .get(&c)
            .map(|&sid| self.syllables[sid].as_str())
    }

    pub fn contains_char(&self, c: char) -> bool {
        self.char_syllable.contains_key(&c)
    }

    pub fn contains_syllable(&self, s: &str) -> bool {
        self.syllable_ids.contains_key(s)
    }

    /// All characters read as `syllable`, in table order.
    pub fn chars_for(&self, syllable: &str) -> &[char] {
        self.syllable_ids
            .get(syllable)
            .map_or(&[], |&sid| self.members[sid].as_slice())
    }

    /// Distinct syllables in first-seen order.
    pub fn syllables(&self) -> &[String] {
        &self.syllables
    }

    /// Characters in table order.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

pub fn load_table(path: &Path) -> Result<SyllableTable> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Encoding)?;
    SyllableTable::parse(&text, &path.display().to_string())
}

pub fn save_table(table: &SyllableTable, path: &Path) -> Result<()> {
    fs::write(path, table.to_tsv()).map_err(io_err(path))
}

/// Splits text into one `Han` token per CJK ideograph and one `Foreign`
/// token per maximal non-CJK run. Never produces `Syllable` tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !run.is_empty() {
                tokens.push(Token::Foreign(std::mem::take(&mut run)));
            }
            tokens.push(Token::Han(c));
        } else {
            run.push(c);
        }
    }
    if !run.is_empty() {
        tokens.push(Token::Foreign(run));
    }
    tokens
}

pub fn tokenize_bytes(bytes: &[u8]) -> Result<Vec<Token>> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Encoding)?;
    Ok(tokenize(text))
}

/// Concatenation of token texts; inverts [`tokenize`].
pub fn concat_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(Token::text).collect()
}

/// Replaces every `Han` token with its syllable, position for position.
pub fn transcribe(table: &SyllableTable, tokens: &[Token]) -> Result<Vec<Token>> {
    tokens
        .iter()
        .enumerate()
        .map(|(position, t)| match t {
            Token::Han(c) => table
                .syllable_of(*c)
                .map(|s| Token::Syllable(s.to_string()))
                .ok_or(Error::Unmapped { ch: *c, position }),
            other => Ok(other.clone()),
        })
        .collect()
}

/// Other characters sharing `c`'s syllable, in table order.
pub fn homophones(table: &SyllableTable, c: char) -> Result<Vec<char>> {
    let syllable = table
        .syllable_of(c)
        .ok_or(Error::Unmapped { ch: c, position: 0 })?;
    Ok(table
        .chars_for(syllable)
        .iter()
        .copied()
        .filter(|&h| h != c)
        .collect())
}

/// The bundled table: GB2312 level-1 characters with their most common
/// reading.
pub fn bundled_table() -> SyllableTable {
    SyllableTable::parse(include_str!("../data/pinyin_table.tsv"), "pinyin_table.tsv")
        .expect("bundled table is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture() -> SyllableTable {
        SyllableTable::from_pairs([
            ('一', "yi"),
            ('议', "yi"),
            ('医', "yi"),
            ('建', "jian"),
            ('所', "suo"),
            ('小', "xiao"),
            ('学', "xue"),
            ('请', "qing"),
            ('拼', "pin"),
            ('写', "xie"),
            ('他', "ta"),
            ('区', "qu"),
        ])
        .unwrap()
    }

    #[test]
    fn parse_homophone_pair() {
        let t = SyllableTable::parse("一\tyi\n议\tyi\n", "t").unwrap();
        assert_eq!(t.syllable_of('一'), Some("yi"));
        assert_eq!(t.syllable_of('议'), Some("yi"));
        assert_eq!(t.chars_for("yi"), &['一', '议']);
    }

    #[test]
    fn parse_empty_and_comments() {
        assert!(SyllableTable::parse("", "t").unwrap().is_empty());
        let t = SyllableTable::parse("# header\n\n学\txue\n", "t").unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match SyllableTable::parse("学\txue\n一\tYI1\n", "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            SyllableTable::parse("一二\tyi\n", "t"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            SyllableTable::parse("一\tyi\textra\n", "t"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            SyllableTable::parse("一\tzhuangg\n", "t"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            SyllableTable::parse("一\tyi\n一\tyi\n", "t"),
            Err(Error::Duplicate { line: 2, .. })
        ));
    }

    #[test]
    fn tokenize_examples() {
        let t = tokenize("建一所小学");
        assert_eq!(t.len(), 5);
        assert!(t.iter().all(Token::is_han));
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("A区12"),
            vec![
                Token::Foreign("A".into()),
                Token::Han('区'),
                Token::Foreign("12".into())
            ]
        );
        assert!(matches!(
            tokenize_bytes(&[0xff, 0xfe]),
            Err(Error::Encoding)
        ));
    }

    #[test]
    fn transcribe_examples() {
        let table = fixture();
        let out = transcribe(&table, &tokenize("请拼写他")).unwrap();
        let texts: Vec<String> = out.iter().map(Token::text).collect();
        assert_eq!(texts, ["qing", "pin", "xie", "ta"]);
        assert!(out.iter().all(Token::is_syllable));
        assert_eq!(
            transcribe(&table, &[Token::Han('一')]).unwrap(),
            vec![Token::Syllable("yi".into())]
        );
        let foreign = vec![Token::Foreign("A".into())];
        assert_eq!(transcribe(&table, &foreign).unwrap(), foreign);
        assert!(matches!(
            transcribe(&table, &tokenize("建好")),
            Err(Error::Unmapped {
                ch: '好',
                position: 1
            })
        ));
    }

    #[test]
    fn homophone_examples() {
        let table = fixture();
        assert_eq!(homophones(&table, '议').unwrap(), vec!['一', '医']);
        assert!(homophones(&table, '建').unwrap().is_empty());
        assert!(!homophones(&table, '一').unwrap().contains(&'一'));
        assert!(homophones(&table, '好').is_err());
    }

    #[test]
    fn bundled_table_invariants() {
        let table = bundled_table();
        assert!(table.len() >= 2000);
        assert!(table.syllables().len() <= MAX_SYLLABLES);
        assert!(table.syllables().iter().all(|s| is_valid_syllable(s)));
        assert_eq!(table.syllable_of('女'), Some("nv"));
        for &c in table.chars() {
            let s = table.syllable_of(c).unwrap();
            assert!(table.chars_for(s).contains(&c));
        }
        for s in table.syllables() {
            for &c in table.chars_for(s) {
                assert_eq!(table.syllable_of(c), Some(s.as_str()));
            }
        }
    }

    #[test]
    fn save_load_is_identity() {
        let table = bundled_table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tsv");
        save_table(&table, &path).unwrap();
        assert_eq!(load_table(&path).unwrap(), table);
    }

    proptest! {
        #[test]
        fn tokenize_round_trips(s in "[一-龥A-Za-z0-9 ,.]{0,24}") {
            prop_assert_eq!(concat_tokens(&tokenize(&s)), s.clone());
        }

        #[test]
        fn homophone_symmetry(i in 0usize..3755, j in 0usize..3755) {
            let table = bundled_table();
            let (a, b) = (table.chars()[i % table.len()], table.chars()[j % table.len()]);
            let ab = homophones(&table, a).unwrap().contains(&b);
            let ba = homophones(&table, b).unwrap().contains(&a);
            prop_assert_eq!(ab, ba);
            if ab {
                prop_assert_eq!(table.syllable_of(a), table.syllable_of(b));
            }
        }

        #[test]
        fn transcribe_preserves_length(s in "[一-龥A-Z0-9]{0,24}") {
            let table = bundled_table();
            let tokens: Vec<Token> = tokenize(&s)
                .into_iter()
                .filter(|t| match t { Token::Han(c) => table.contains_char(*c), _ => true })
                .collect();
            prop_assert_eq!(transcribe(&table, &tokens).unwrap().len(), tokens.len());
        }
    }
}
