//! A small synthetic Chinese-English language for tests and demos.
//!
//! Sentences follow four templates built from a closed lexicon:
//!
//! ```text
//! V NUM MEAS [ADJ] N                 建一所小学        build a primary school
//! S V 了 NUM MEAS [ADJ] N            我买了两本书      i bought two books
//! [TIME] S 在 PLACE V 了 NUM MEAS N  他在商店买了一把伞  he bought an umbrella in the store
//! S 想 V NUM MEAS [ADJ] N            我们想修一辆车     we would like to repair a car
//! ```
//!
//! Several characters share a syllable (一/医/椅, 两/辆, 新/信, ...), but the
//! slot they occupy makes each one recoverable from the syllable sequence.
//! The single exception is 他/她, which only the character distinguishes.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{parse_parallel, ParallelCorpus, DEFAULT_MAX_LEN};
use crate::error::{io_err, Result};
use crate::pinyin::{tokenize, SyllableTable, Token};
use crate::seed;

pub const DEFAULT_SEED: u64 = 20200705;
pub const TRAIN_SIZE: usize = 2000;
pub const VALID_SIZE: usize = 200;
pub const TEST_SIZE: usize = 500;
/// Monolingual sentences: the training sources plus this many more.
pub const EXTRA_MONOLINGUAL: usize = 1000;

/// Source and target of the sentence used throughout the docs.
pub const SHOWCASE: (&str, &str) = ("建一所小学", "build a primary school");

struct Noun {
    zh: &'static str,
    measure: &'static str,
    singular: &'static str,
    plural: &'static str,
}

const NOUNS: &[Noun] = &[
    Noun {
        zh: "小学",
        measure: "所",
        singular: "primary school",
        plural: "primary schools",
    },
    Noun {
        zh: "医院",
        measure: "所",
        singular: "hospital",
        plural: "hospitals",
    },
    Noun {
        zh: "大学",
        measure: "所",
        singular: "university",
        plural: "universities",
    },
    Noun {
        zh: "书",
        measure: "本",
        singular: "book",
        plural: "books",
    },
    Noun {
        zh: "词典",
        measure: "本",
        singular: "dictionary",
        plural: "dictionaries",
    },
    Noun {
        zh: "车",
        measure: "辆",
        singular: "car",
        plural: "cars",
    },
    Noun {
        zh: "自行车",
        measure: "辆",
        singular: "bicycle",
        plural: "bicycles",
    },
    Noun {
        zh: "桥",
        measure: "座",
        singular: "bridge",
        plural: "bridges",
    },
    Noun {
        zh: "楼",
        measure: "座",
        singular: "building",
        plural: "buildings",
    },
    Noun {
        zh: "桌子",
        measure: "张",
        singular: "table",
        plural: "tables",
    },
    Noun {
        zh: "地图",
        measure: "张",
        singular: "map",
        plural: "maps",
    },
    Noun {
        zh: "床",
        measure: "张",
        singular: "bed",
        plural: "beds",
    },
    Noun {
        zh: "狗",
        measure: "只",
        singular: "dog",
        plural: "dogs",
    },
    Noun {
        zh: "猫",
        measure: "只",
        singular: "cat",
        plural: "cats",
    },
    Noun {
        zh: "苹果",
        measure: "个",
        singular: "apple",
        plural: "apples",
    },
    Noun {
        zh: "杯子",
        measure: "个",
        singular: "cup",
        plural: "cups",
    },
    Noun {
        zh: "包",
        measure: "个",
        singular: "bag",
        plural: "bags",
    },
    Noun {
        zh: "椅子",
        measure: "把",
        singular: "chair",
        plural: "chairs",
    },
    Noun {
        zh: "伞",
        measure: "把",
        singular: "umbrella",
        plural: "umbrellas",
    },
    Noun {
        zh: "信",
        measure: "封",
        singular: "letter",
        plural: "letters",
    },
    Noun {
        zh: "礼物",
        measure: "件",
        singular: "gift",
        plural: "gifts",
    },
    Noun {
        zh: "衬衫",
        measure: "件",
        singular: "shirt",
        plural: "shirts",
    },
];

const ADJECTIVES: &[(&str, &str)] = &[
    ("新", "new"),
    ("旧", "old"),
    ("大", "big"),
    ("小", "small"),
    ("红", "red"),
    ("好", "good"),
    ("白", "white"),
];

/// (character, base form, past form)
const VERBS: &[(&str, &str, &str)] = &[
    ("建", "build", "built"),
    ("买", "buy", "bought"),
    ("看", "see", "saw"),
    ("找", "find", "found"),
    ("修", "repair", "repaired"),
    ("送", "send", "sent"),
    ("借", "borrow", "borrowed"),
    ("写", "write", "wrote"),
    ("拿", "take", "took"),
    ("画", "draw", "drew"),
];

const SUBJECTS: &[(&str, &str)] = &[
    ("我", "i"),
    ("你", "you"),
    ("他", "he"),
    ("她", "she"),
    ("我们", "we"),
    ("他们", "they"),
    ("老师", "the teacher"),
    ("学生", "the student"),
    ("医生", "the doctor"),
    ("工人", "the worker"),
    ("农民", "the farmer"),
    ("司机", "the driver"),
];

/// `None` marks the indefinite article.
const NUMBERS: &[(&str, Option<&str>)] = &[
    ("一", None),
    ("两", Some("two")),
    ("三", Some("three")),
    ("五", Some("five")),
];

const PLACES: &[(&str, &str)] = &[
    ("学校", "school"),
    ("商店", "store"),
    ("公园", "park"),
    ("医院", "hospital"),
    ("城里", "city"),
];

const TIMES: &[(&str, &str)] = &[("昨天", "yesterday"), ("今天", "today")];

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

fn article(next_word: &str) -> &'static str {
    if next_word.starts_with(['a', 'e', 'i', 'o']) || next_word.starts_with("umb") {
        "an"
    } else {
        "a"
    }
}

/// `NUM MEAS [ADJ] N` in both languages.
fn object(rng: &mut ChaCha8Rng) -> (String, String) {
    let noun = pick(rng, NOUNS);
    let (num_zh, num_en) = *pick(rng, NUMBERS);
    let adjective = rng.gen_bool(0.4).then(|| *pick(rng, ADJECTIVES));
    let mut zh = format!("{num_zh}{}", noun.measure);
    let mut words: Vec<&str> = Vec::new();
    if let Some((adj_zh, adj_en)) = adjective {
        zh.push_str(adj_zh);
        words.push(adj_en);
    }
    zh.push_str(noun.zh);
    words.push(if num_en.is_some() {
        noun.plural
    } else {
        noun.singular
    });
    let lead = num_en.unwrap_or_else(|| article(words[0]));
    (zh, format!("{lead} {}", words.join(" ")))
}

/// One random sentence pair.
pub fn sentence(rng: &mut ChaCha8Rng) -> (String, String) {
    let (verb_zh, base, past) = *pick(rng, VERBS);
    let (obj_zh, obj_en) = object(rng);
    match rng.gen_range(0..20) {
        0..=3 => (format!("{verb_zh}{obj_zh}"), format!("{base} {obj_en}")),
        4..=9 => {
            let (s_zh, s_en) = *pick(rng, SUBJECTS);
            (
                format!("{s_zh}{verb_zh}了{obj_zh}"),
                format!("{s_en} {past} {obj_en}"),
            )
        }
        10..=14 => {
            let (s_zh, s_en) = *pick(rng, SUBJECTS);
            let (p_zh, p_en) = *pick(rng, PLACES);
            let (t_zh, t_en) = if rng.gen_bool(0.5) {
                *pick(rng, TIMES)
            } else {
                ("", "")
            };
            let en = format!("{s_en} {past} {obj_en} in the {p_en}");
            let en = if t_en.is_empty() {
                en
            } else {
                format!("{t_en} {en}")
            };
            (format!("{t_zh}{s_zh}在{p_zh}{verb_zh}了{obj_zh}"), en)
        }
        _ => {
            let (s_zh, s_en) = *pick(rng, SUBJECTS);
            (
                format!("{s_zh}想{verb_zh}{obj_zh}"),
                format!("{s_en} would like to {base} {obj_en}"),
            )
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fixture {
    pub train: Vec<(String, String)>,
    pub valid: Vec<(String, String)>,
    pub test: Vec<(String, String)>,
    pub monolingual: Vec<String>,
}

/// Draws distinct sentences until every split is filled. The showcase
/// sentence leads the training split; no source appears in two splits.
pub fn generate(seed: u64) -> Fixture {
    let mut rng = seed::stream(seed, seed::FIXTURE, 0);
    let mut seen: HashSet<String> = HashSet::new();
    seen.insert(SHOWCASE.0.to_string());
    let mut fresh = |n: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let pair = sentence(rng);
            if seen.insert(pair.0.clone()) {
                out.push(pair);
            }
        }
        out
    };
    let test = fresh(TEST_SIZE, &mut rng);
    let valid = fresh(VALID_SIZE, &mut rng);
    let mut train = vec![(SHOWCASE.0.to_string(), SHOWCASE.1.to_string())];
    train.extend(fresh(TRAIN_SIZE - 1, &mut rng));
    let mut monolingual: Vec<String> = train.iter().map(|(zh, _)| zh.clone()).collect();
    monolingual.extend(
        fresh(EXTRA_MONOLINGUAL, &mut rng)
            .into_iter()
            .map(|(zh, _)| zh),
    );
    Fixture {
        train,
        valid,
        test,
        monolingual,
    }
}

fn tsv(pairs: &[(String, String)]) -> String {
    pairs
        .iter()
        .map(|(zh, en)| format!("{zh}\t{en}\n"))
        .collect()
}

impl Fixture {
    /// File name and contents of every shipped file.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        vec![
            ("train.tsv", tsv(&self.train)),
            ("valid.tsv", tsv(&self.valid)),
            ("test.tsv", tsv(&self.test)),
            (
                "mono.txt",
                self.monolingual.iter().map(|s| format!("{s}\n")).collect(),
            ),
        ]
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, text) in self.files() {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io_err(&path))?;
        }
        Ok(())
    }
}

/// The shipped fixture files, in [`Fixture::files`] order.
pub const BUNDLED: [(&str, &str); 4] = [
    ("train.tsv", include_str!("../data/fixture/train.tsv")),
    ("valid.tsv", include_str!("../data/fixture/valid.tsv")),
    ("test.tsv", include_str!("../data/fixture/test.tsv")),
    ("mono.txt", include_str!("../data/fixture/mono.txt")),
];

/// The bundled splits parsed against `table`.
pub struct BundledFixture {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
    pub monolingual: Vec<Vec<Token>>,
}

pub fn bundled(table: &SyllableTable) -> Result<BundledFixture> {
    let parallel = |i: usize| -> Result<ParallelCorpus> {
        let (name, text) = BUNDLED[i];
        Ok(parse_parallel(text, name, table, DEFAULT_MAX_LEN)?.0)
    };
    Ok(BundledFixture {
        train: parallel(0)?,
        valid: parallel(1)?,
        test: parallel(2)?,
        monolingual: BUNDLED[3].1.lines().map(tokenize).collect(),
    })
}
