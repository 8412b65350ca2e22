//! Aspect-level sentiment records, tokenisation and fixed-length encoding.
//!
//! Records arrive in a normalised line format (jsonl or tsv) with the five
//! fields `sentence_id`, `text`, `aspect`, `polarity` and `split`. Each record
//! is encoded as `tokens(text) ++ [SEP] ++ tokens(aspect)`, truncated and then
//! right-padded with the PAD id to a fixed length.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_CLASSES: usize = 3;
pub const DEFAULT_MAX_LEN: usize = 85;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const SEP_TOKEN: &str = "[SEP]";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown polarity {value:?}")]
    UnknownPolarity { line: usize, value: String },
    #[error("duplicate record ({sentence_id}, {aspect}) in {split} split")]
    Duplicate {
        split: Split,
        sentence_id: String,
        aspect: String,
    },
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Neutral,
    Negative,
}

impl Polarity {
    pub const ALL: [Polarity; NUM_CLASSES] =
        [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

    pub fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Neutral => 1,
            Polarity::Negative => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Neutral => "neutral",
            Polarity::Negative => "negative",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "neutral" => Ok(Polarity::Neutral),
            "negative" => Ok(Polarity::Negative),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(other.to_string()),
        }
    }
}

/// One `(sentence, aspect, polarity)` record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectInstance {
    pub sentence_id: String,
    pub text: String,
    pub aspect: String,
    pub polarity: Polarity,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positive: usize,
    pub neutral: usize,
    pub negative: usize,
}

impl ClassCounts {
    pub fn of<'a>(polarities: impl IntoIterator<Item = &'a Polarity>) -> Self {
        let mut counts = Self::default();
        for p in polarities {
            *counts.get_mut(*p) += 1;
        }
        counts
    }

    pub fn get(&self, p: Polarity) -> usize {
        match p {
            Polarity::Positive => self.positive,
            Polarity::Neutral => self.neutral,
            Polarity::Negative => self.negative,
        }
    }

    fn get_mut(&mut self, p: Polarity) -> &mut usize {
        match p {
            Polarity::Positive => &mut self.positive,
            Polarity::Neutral => &mut self.neutral,
            Polarity::Negative => &mut self.negative,
        }
    }

    pub fn total(&self) -> usize {
        self.positive + self.neutral + self.negative
    }
}

pub fn class_counts(instances: &[AspectInstance]) -> ClassCounts {
    ClassCounts::of(instances.iter().map(|i| &i.polarity))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Tsv,
}

impl DatasetFormat {
    /// `.tsv` means tsv, anything else jsonl.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => DatasetFormat::Tsv,
            _ => DatasetFormat::Jsonl,
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    sentence_id: String,
    text: String,
    aspect: String,
    polarity: String,
    split: String,
}

const TSV_HEADER: [&str; 5] = ["sentence_id", "text", "aspect", "polarity", "split"];

fn build_record(line: usize, raw: RawRecord) -> Result<AspectInstance, DataError> {
    let polarity = raw
        .polarity
        .parse()
        .map_err(|value| DataError::UnknownPolarity { line, value })?;
    let split = raw.split.parse().map_err(|v: String| DataError::Parse {
        line,
        message: format!("unknown split {v:?}"),
    })?;
    Ok(AspectInstance {
        sentence_id: raw.sentence_id,
        text: raw.text,
        aspect: raw.aspect,
        polarity,
        split,
    })
}

/// Parses records from in-memory text. Blank lines are skipped; a tsv header
/// row is accepted on the first line.
pub fn parse_dataset(content: &str, format: DatasetFormat) -> Result<Vec<AspectInstance>, DataError> {
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            continue;
        }
        let raw = match format {
            DatasetFormat::Jsonl => {
                serde_json::from_str::<RawRecord>(trimmed).map_err(|e| DataError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?
            }
            DatasetFormat::Tsv => {
                let cols: Vec<&str> = trimmed.split('\t').collect();
                if cols.len() != 5 {
                    return Err(DataError::Parse {
                        line: line_no,
                        message: format!("expected 5 tab-separated columns, found {}", cols.len()),
                    });
                }
                if line_no == 1 && cols == TSV_HEADER {
                    continue;
                }
                RawRecord {
                    sentence_id: cols[0].to_string(),
                    text: cols[1].to_string(),
                    aspect: cols[2].to_string(),
                    polarity: cols[3].to_string(),
                    split: cols[4].to_string(),
                }
            }
        };
        records.push(build_record(line_no, raw)?);
    }
    validate_unique(&records)?;
    Ok(records)
}

fn validate_unique(records: &[AspectInstance]) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert((r.split, r.sentence_id.as_str(), r.aspect.as_str())) {
            return Err(DataError::Duplicate {
                split: r.split,
                sentence_id: r.sentence_id.clone(),
                aspect: r.aspect.clone(),
            });
        }
    }
    Ok(())
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<AspectInstance>, DataError> {
    let content = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&content, format)
}

pub fn split_of(records: &[AspectInstance], split: Split) -> Vec<AspectInstance> {
    records.iter().filter(|r| r.split == split).cloned().collect()
}

/// Lowercases and splits on whitespace; every punctuation character becomes
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_whitespace()) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        } else {
            current.push(ch);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Token ↔ id map with reserved PAD (0), UNK (1) and SEP (2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from the text and aspect of every given record (sorted order).
    pub fn build<'a>(records: impl IntoIterator<Item = &'a AspectInstance>) -> Self {
        let mut set = BTreeSet::new();
        for r in records {
            set.extend(tokenize(&r.text));
            set.extend(tokenize(&r.aspect));
        }
        Self::from_tokens(
            [PAD_TOKEN, UNK_TOKEN, SEP_TOKEN]
                .into_iter()
                .map(String::from)
                .chain(set)
                .collect(),
        )
        .expect("reserved tokens cannot collide with tokenizer output")
    }

    /// Restores a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, DataError> {
        if tokens.len() < 3
            || tokens[PAD_ID] != PAD_TOKEN
            || tokens[UNK_ID] != UNK_TOKEN
            || tokens[SEP_ID] != SEP_TOKEN
        {
            return Err(DataError::Config(
                "vocabulary must start with [PAD], [UNK], [SEP]".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(DataError::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedInstance {
    pub token_ids: Vec<usize>,
    /// Number of leading non-pad positions.
    pub attention_length: usize,
    pub label: usize,
}

impl TokenizedInstance {
    pub fn active_ids(&self) -> &[usize] {
        &self.token_ids[..self.attention_length]
    }
}

pub fn encode(
    instance: &AspectInstance,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenizedInstance, DataError> {
    if max_len < 3 {
        return Err(DataError::Config(format!(
            "sequence length must be at least 3, got {max_len}"
        )));
    }
    let mut ids: Vec<usize> = tokenize(&instance.text)
        .iter()
        .map(|t| vocab.id(t))
        .collect();
    ids.push(SEP_ID);
    ids.extend(tokenize(&instance.aspect).iter().map(|t| vocab.id(t)));
    ids.truncate(max_len);
    let attention_length = ids.len();
    ids.resize(max_len, PAD_ID);
    Ok(TokenizedInstance {
        token_ids: ids,
        attention_length,
        label: instance.polarity.index(),
    })
}

pub fn encode_all(
    instances: &[AspectInstance],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<TokenizedInstance>, DataError> {
    instances.iter().map(|i| encode(i, vocab, max_len)).collect()
}

/// Tokens of the non-pad positions.
pub fn decode(instance: &TokenizedInstance, vocab: &Vocabulary) -> Vec<String> {
    instance
        .active_ids()
        .iter()
        .map(|&id| vocab.token(id).unwrap_or(UNK_TOKEN).to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, text: &str, aspect: &str, polarity: Polarity) -> AspectInstance {
        AspectInstance {
            sentence_id: id.into(),
            text: text.into(),
            aspect: aspect.into(),
            polarity,
            split: Split::Train,
        }
    }

    #[test]
    fn three_records_one_per_class() {
        let content = r#"{"sentence_id":"s1","text":"Great food","aspect":"food","polarity":"positive","split":"train"}
{"sentence_id":"s2","text":"ok service","aspect":"service","polarity":"neutral","split":"train"}
{"sentence_id":"s3","text":"bad decor","aspect":"decor","polarity":"negative","split":"train"}
"#;
        let records = parse_dataset(content, DatasetFormat::Jsonl).unwrap();
        assert_eq!(
            class_counts(&records),
            ClassCounts {
                positive: 1,
                neutral: 1,
                negative: 1
            }
        );
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let records = parse_dataset("", DatasetFormat::Jsonl).unwrap();
        assert!(records.is_empty());
        assert_eq!(class_counts(&records).total(), 0);
    }

    #[test]
    fn unknown_polarity_names_the_line() {
        let content = "sentence_id\ttext\taspect\tpolarity\tsplit\n\
                       s1\tnice\tfood\tpositive\ttrain\n\
                       s2\tmeh\tfood\tconflict\ttrain\n";
        match parse_dataset(content, DatasetFormat::Tsv) {
            Err(DataError::UnknownPolarity { line, value }) => {
                assert_eq!(line, 3);
                assert_eq!(value, "conflict");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicates_rejected_within_split_only() {
        let dup = "s1\tnice\tfood\tpositive\ttrain\ns1\tnice\tfood\tneutral\ttrain\n";
        assert!(matches!(
            parse_dataset(dup, DatasetFormat::Tsv),
            Err(DataError::Duplicate { .. })
        ));
        let ok = "s1\tnice\tfood\tpositive\ttrain\ns1\tnice\tfood\tpositive\ttest\n\
                  s1\tnice\tprice\tpositive\ttrain\n";
        assert_eq!(parse_dataset(ok, DatasetFormat::Tsv).unwrap().len(), 3);
    }

    #[test]
    fn res14_shaped_counts() {
        // Class totals of the Restaurant-14 training split.
        let mut content = String::new();
        let mut n = 0;
        for (pol, count) in [("positive", 839), ("neutral", 500), ("negative", 2179)] {
            for _ in 0..count {
                content.push_str(&format!("s{n}\tx\ty\t{pol}\ttrain\n"));
                n += 1;
            }
        }
        let counts = class_counts(&parse_dataset(&content, DatasetFormat::Tsv).unwrap());
        assert_eq!((counts.positive, counts.neutral, counts.negative), (839, 500, 2179));
        assert_eq!(counts.total(), 3518);
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("The FOOD, was great!"), ["the", "food", ",", "was", "great", "!"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn encode_good_food() {
        let r = rec("s", "good food", "food", Polarity::Positive);
        let vocab = Vocabulary::build([&r]);
        let t = encode(&r, &vocab, 6).unwrap();
        let food = vocab.id("food");
        let good = vocab.id("good");
        assert_eq!(t.token_ids, vec![good, food, SEP_ID, food, PAD_ID, PAD_ID]);
        assert_eq!(t.attention_length, 4);
        assert_eq!(t.label, Polarity::Positive.index());
    }

    #[test]
    fn unseen_token_is_unk_and_truncation() {
        let train = rec("s", "good food", "food", Polarity::Positive);
        let vocab = Vocabulary::build([&train]);
        let test = rec("t", "awful soup here today", "soup", Polarity::Negative);
        let t = encode(&test, &vocab, 4).unwrap();
        assert_eq!(t.token_ids, vec![UNK_ID; 4]);
        assert_eq!(t.attention_length, 4);
        assert!(matches!(encode(&test, &vocab, 2), Err(DataError::Config(_))));
    }

    #[test]
    fn vocabulary_reserved_ids() {
        let vocab = Vocabulary::build(std::iter::empty());
        assert_eq!(vocab.id(PAD_TOKEN), PAD_ID);
        assert_eq!(vocab.len(), 3);
        assert!(Vocabulary::from_tokens(vec!["a".into()]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn decode_inverts_encode(
                words in proptest::collection::vec("[a-zA-Z]{1,6}", 0..10),
                aspect in "[a-z]{1,6}",
            ) {
                let r = rec("s", &words.join(" "), &aspect, Polarity::Neutral);
                let vocab = Vocabulary::build([&r]);
                let t = encode(&r, &vocab, 32).unwrap();
                let mut expected = tokenize(&r.text);
                expected.push(SEP_TOKEN.into());
                expected.extend(tokenize(&aspect));
                prop_assert_eq!(decode(&t, &vocab), expected);
                prop_assert_eq!(t.token_ids.len(), 32);
                prop_assert!(t.token_ids[t.attention_length..].iter().all(|&i| i == PAD_ID));
                prop_assert!(t.token_ids.iter().all(|&i| i < vocab.len()));
            }

            #[test]
            fn encoding_conserves_class_counts(labels in proptest::collection::vec(0usize..3, 0..40)) {
                let records: Vec<_> = labels
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| rec(&format!("s{i}"), "w", "a", Polarity::from_index(l).unwrap()))
                    .collect();
                let vocab = Vocabulary::build(&records);
                let encoded = encode_all(&records, &vocab, 8).unwrap();
                let before = class_counts(&records);
                let after: Vec<Polarity> = encoded.iter().map(|t| Polarity::from_index(t.label).unwrap()).collect();
                prop_assert_eq!(before, ClassCounts::of(&after));
            }
        }
    }
}
