//! Corpus ingestion and preparation: delimited-text loading, label
//! binarization, seeded subsampling and splitting, counterfactual
//! attachment, and dataset statistics.

use crate::error::Error;
use crate::lexicon::{contains_gender_words, flip_gender, tokenize, GenderLexicon};
use crate::rng;
use crate::Result;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// A row as read from the input file. Missing text cells are filled with
/// the empty string; missing label cells are rejected at ingest.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub row: usize,
    pub text: String,
    pub label: String,
}

/// A record with a binarized label (1 = sexist/toxic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub text: String,
    pub label: u8,
}

/// How raw labels become binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BinarizeMode {
    /// label = 1 iff numeric score > threshold (strictly).
    Threshold { threshold: f64 },
    /// label = 1 iff the categorical label equals `positive_class`;
    /// everything else merges into the negative class.
    ClassMerge { positive_class: String },
}

/// Read a delimited text file (header row required) into raw records,
/// preserving file order.
pub fn ingest(
    path: impl AsRef<Path>,
    text_column: &str,
    label_column: &str,
    delimiter: u8,
) -> Result<Vec<RawRecord>> {
    let file = std::fs::File::open(&path).map_err(|e| Error::io_path(&path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let available: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
                available: available.clone(),
            })
    };
    let text_idx = col(text_column)?;
    let label_idx = col(label_column)?;

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::MalformedRow {
            row: i,
            message: e.to_string(),
        })?;
        let text = row.get(text_idx).unwrap_or("").to_string();
        let label = row.get(label_idx).unwrap_or("").trim().to_string();
        if label.is_empty() {
            return Err(Error::MissingLabel { row: i });
        }
        records.push(RawRecord { row: i, text, label });
    }
    Ok(records)
}

/// Binarize raw labels. Threshold comparison is strict: score > t maps to 1.
pub fn binarize(records: &[RawRecord], mode: &BinarizeMode) -> Result<Vec<LabeledRecord>> {
    records
        .iter()
        .map(|r| {
            let label = match mode {
                BinarizeMode::Threshold { threshold } => {
                    let score: f64 = r.label.parse().map_err(|_| Error::NonNumericLabel {
                        row: r.row,
                        value: r.label.clone(),
                    })?;
                    u8::from(score > *threshold)
                }
                BinarizeMode::ClassMerge { positive_class } => u8::from(r.label == *positive_class),
            };
            Ok(LabeledRecord {
                text: r.text.clone(),
                label,
            })
        })
        .collect()
}

/// Uniform sample of `n` records without replacement, deterministic per
/// seed. Returns all records when `n >= len`.
pub fn subsample(records: Vec<LabeledRecord>, n: usize, seed: u64) -> Vec<LabeledRecord> {
    if n >= records.len() {
        return records;
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut stream = rng::stream(seed, rng::SALT_SUBSAMPLE);
    order.shuffle(&mut stream);
    let mut keep: Vec<usize> = order.into_iter().take(n).collect();
    // Keep the original relative order so ids stay aligned with file order.
    keep.sort_unstable();
    let mut records = records;
    keep.into_iter()
        .map(|idx| {
            std::mem::replace(
                &mut records[idx],
                LabeledRecord {
                    text: String::new(),
                    label: 0,
                },
            )
        })
        .collect()
}

/// The atomic unit of scoring and pruning: a factual sentence, its
/// counterfactual, the shared label, and the gender-word flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub id: u64,
    pub label: u8,
    pub factual_text: String,
    pub counterfactual_text: String,
    pub has_gender_words: bool,
}

/// Turn labeled records into example pairs. Ids are assigned by record
/// order (post-ingest, pre-shuffle) so scores join across experiments.
pub fn attach_counterfactuals(records: &[LabeledRecord], lexicon: &GenderLexicon) -> Vec<ExamplePair> {
    records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let has_gender_words = contains_gender_words(&r.text, lexicon);
            let counterfactual_text = if has_gender_words {
                flip_gender(&r.text, lexicon)
            } else {
                r.text.clone()
            };
            ExamplePair {
                id: i as u64,
                label: r.label,
                factual_text: r.text.clone(),
                counterfactual_text,
                has_gender_words,
            }
        })
        .collect()
}

/// Train/valid/test pairs plus the seed and ratios that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<ExamplePair>,
    pub valid: Vec<ExamplePair>,
    pub test: Vec<ExamplePair>,
    pub split_seed: u64,
    pub ratios: [f64; 3],
}

impl SplitDataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded shuffle then partition. Valid and test take floor(ratio * n)
/// records each; the remainder goes to train.
pub fn split(pairs: Vec<ExamplePair>, ratios: [f64; 3], seed: u64) -> Result<SplitDataset> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|&r| r <= 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadSplitRatios { ratios, sum });
    }
    let n = pairs.len();
    let n_valid = (ratios[1] * n as f64).floor() as usize;
    let n_test = (ratios[2] * n as f64).floor() as usize;
    let n_train = n - n_valid - n_test;

    let mut shuffled = pairs;
    let mut stream = rng::stream(seed, rng::SALT_SPLIT);
    shuffled.shuffle(&mut stream);
    let test = shuffled.split_off(n_train + n_valid);
    let valid = shuffled.split_off(n_train);
    Ok(SplitDataset {
        train: shuffled,
        valid,
        test,
        split_seed: seed,
        ratios,
    })
}

/// Sizes, pronoun occurrence counts, and positive rate for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub size: usize,
    pub male_pronoun_count: usize,
    pub female_pronoun_count: usize,
    pub positive_rate: f64,
}

const MALE_PRONOUNS: [&str; 4] = ["he", "him", "himself", "his"];
const FEMALE_PRONOUNS: [&str; 4] = ["she", "her", "hers", "herself"];

/// Token-occurrence counts of the four male and four female pronouns plus
/// the positive-label rate. An empty split reports all zeros.
pub fn stats(pairs: &[ExamplePair]) -> DatasetStats {
    let mut male = 0usize;
    let mut female = 0usize;
    let mut positives = 0usize;
    for pair in pairs {
        for span in tokenize(&pair.factual_text) {
            let lower = span.surface.to_lowercase();
            if MALE_PRONOUNS.contains(&lower.as_str()) {
                male += 1;
            } else if FEMALE_PRONOUNS.contains(&lower.as_str()) {
                female += 1;
            }
        }
        positives += pair.label as usize;
    }
    DatasetStats {
        size: pairs.len(),
        male_pronoun_count: male,
        female_pronoun_count: female,
        positive_rate: if pairs.is_empty() {
            0.0
        } else {
            positives as f64 / pairs.len() as f64
        },
    }
}

// ---------------------------------------------------------------------------
// Snapshot file: reproducible dataset snapshots
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    format: String,
    version: u32,
    split_seed: u64,
    ratios: [f64; 3],
}

const SNAPSHOT_FORMAT: &str = "fairdiet-dataset";

/// Write a dataset snapshot: a JSON header line, then one JSON record per
/// line (id, label, factual, counterfactual, has_gender_words) in id order.
pub fn save_snapshot(dataset: &SplitDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(&path).map_err(|e| Error::io_path(&path, e))?;
    let mut out = BufWriter::new(file);
    let header = SnapshotHeader {
        format: SNAPSHOT_FORMAT.to_string(),
        version: 1,
        split_seed: dataset.split_seed,
        ratios: dataset.ratios,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut pairs: Vec<&ExamplePair> = dataset
        .train
        .iter()
        .chain(dataset.valid.iter())
        .chain(dataset.test.iter())
        .collect();
    pairs.sort_by_key(|p| p.id);
    for pair in pairs {
        serde_json::to_writer(&mut out, pair)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Load a snapshot and re-derive the splits from the stored seed and
/// ratios. Inverse of [`save_snapshot`].
pub fn load_snapshot(path: impl AsRef<Path>) -> Result<SplitDataset> {
    let file = std::fs::File::open(&path).map_err(|e| Error::io_path(&path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::SnapshotParse {
            line: 1,
            message: "empty file".to_string(),
        })?
        .map_err(|e| Error::io_path(&path, e))?;
    let header: SnapshotHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::SnapshotParse {
            line: 1,
            message: e.to_string(),
        })?;
    if header.format != SNAPSHOT_FORMAT {
        return Err(Error::SnapshotParse {
            line: 1,
            message: format!("unknown format '{}'", header.format),
        });
    }
    let mut pairs = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io_path(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: ExamplePair = serde_json::from_str(&line).map_err(|e| Error::SnapshotParse {
            line: i + 2,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    split(pairs, header.ratios, header.split_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex() -> &'static GenderLexicon {
        GenderLexicon::default_builtin()
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn ingest_fills_missing_text_and_preserves_order() {
        let f = write_csv("id,text,label\n0,hello there,0\n1,,1\n2,more text,0\n");
        let records = ingest(f.path(), "text", "label", b',').unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[1].text, "");
        assert_eq!(records[1].label, "1");
        assert!(records.windows(2).all(|w| w[0].row < w[1].row));
    }

    #[test]
    fn ingest_rejects_missing_column() {
        let f = write_csv("id,text\n0,hello,\n");
        match ingest(f.path(), "text", "label", b',') {
            Err(Error::MissingColumn { column, available }) => {
                assert_eq!(column, "label");
                assert_eq!(available, vec!["id".to_string(), "text".to_string()]);
            }
            other => panic!("expected missing-column error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_missing_label() {
        let f = write_csv("text,label\nhello,1\nworld,\n");
        match ingest(f.path(), "text", "label", b',') {
            Err(Error::MissingLabel { row }) => assert_eq!(row, 1),
            other => panic!("expected missing-label error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_ragged_rows() {
        let f = write_csv("text,label\nhello,1\nonly-one-field\n");
        match ingest(f.path(), "text", "label", b',') {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected malformed-row error, got {other:?}"),
        }
    }

    #[test]
    fn threshold_binarization_is_strict() {
        let records = vec![
            RawRecord { row: 0, text: "a".into(), label: "0.7".into() },
            RawRecord { row: 1, text: "b".into(), label: "0.5".into() },
            RawRecord { row: 2, text: "c".into(), label: "0.2".into() },
        ];
        let out = binarize(&records, &BinarizeMode::Threshold { threshold: 0.5 }).unwrap();
        assert_eq!(out.iter().map(|r| r.label).collect::<Vec<_>>(), vec![1, 0, 0]);
    }

    #[test]
    fn threshold_binarization_rejects_non_numeric() {
        let records = vec![RawRecord { row: 3, text: "a".into(), label: "sexism".into() }];
        match binarize(&records, &BinarizeMode::Threshold { threshold: 0.5 }) {
            Err(Error::NonNumericLabel { row, value }) => {
                assert_eq!(row, 3);
                assert_eq!(value, "sexism");
            }
            other => panic!("expected non-numeric error, got {other:?}"),
        }
    }

    #[test]
    fn class_merge_maps_other_classes_to_zero() {
        let records = ["sexism", "racism", "neither"]
            .iter()
            .enumerate()
            .map(|(i, l)| RawRecord { row: i, text: format!("t{i}"), label: l.to_string() })
            .collect::<Vec<_>>();
        let out = binarize(
            &records,
            &BinarizeMode::ClassMerge { positive_class: "sexism".into() },
        )
        .unwrap();
        assert_eq!(out.iter().map(|r| r.label).collect::<Vec<_>>(), vec![1, 0, 0]);
    }

    fn dummy_records(n: usize) -> Vec<LabeledRecord> {
        (0..n)
            .map(|i| LabeledRecord {
                text: format!("record number {i}"),
                label: (i % 3 == 0) as u8,
            })
            .collect()
    }

    #[test]
    fn subsample_is_deterministic_and_bounded() {
        let a = subsample(dummy_records(1000), 100, 1);
        let b = subsample(dummy_records(1000), 100, 1);
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert_eq!(subsample(dummy_records(50), 100, 1).len(), 50);
    }

    #[test]
    fn subsample_hits_exact_target_at_scale() {
        let big: Vec<LabeledRecord> = (0..150_000)
            .map(|i| LabeledRecord { text: String::new(), label: (i % 2) as u8 })
            .collect();
        assert_eq!(subsample(big, 125_000, 3).len(), 125_000);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let pairs = attach_counterfactuals(&dummy_records(100), lex());
        let s = split(pairs.clone(), [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (80, 10, 10));

        let pairs101 = attach_counterfactuals(&dummy_records(101), lex());
        let s101 = split(pairs101, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((s101.train.len(), s101.valid.len(), s101.test.len()), (81, 10, 10));

        let again = split(pairs, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let pairs = attach_counterfactuals(&dummy_records(10), lex());
        assert!(matches!(
            split(pairs, [0.8, 0.1, 0.2], 7),
            Err(Error::BadSplitRatios { .. })
        ));
    }

    #[test]
    fn attach_counterfactuals_satisfies_invariants() {
        let records = vec![
            LabeledRecord { text: "Kate you stupid woman!".into(), label: 1 },
            LabeledRecord { text: "the meeting ran long".into(), label: 0 },
            LabeledRecord { text: "he said so".into(), label: 0 },
            LabeledRecord { text: "she left early".into(), label: 1 },
            LabeledRecord { text: "rain again".into(), label: 0 },
        ];
        let pairs = attach_counterfactuals(&records, lex());
        assert_eq!(pairs.len(), 5);
        assert_eq!(pairs.iter().map(|p| p.id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(pairs[0].counterfactual_text, "Kareem you stupid man!");
        for pair in &pairs {
            assert_eq!(pair.has_gender_words, contains_gender_words(&pair.factual_text, lex()));
            assert_eq!(pair.counterfactual_text, flip_gender(&pair.factual_text, lex()));
            if !pair.has_gender_words {
                assert_eq!(pair.counterfactual_text, pair.factual_text);
            }
        }
    }

    #[test]
    fn stats_counts_pronoun_tokens() {
        let records = vec![
            LabeledRecord { text: "he saw her".into(), label: 1 },
            LabeledRecord { text: "trees grow".into(), label: 0 },
        ];
        let pairs = attach_counterfactuals(&records, lex());
        let st = stats(&pairs);
        assert_eq!(st.male_pronoun_count, 1);
        assert_eq!(st.female_pronoun_count, 1);
        assert_eq!(st.positive_rate, 0.5);
        assert_eq!(st.size, 2);

        let empty = stats(&[]);
        assert_eq!(
            (empty.size, empty.male_pronoun_count, empty.female_pronoun_count),
            (0, 0, 0)
        );
        assert_eq!(empty.positive_rate, 0.0);
    }

    #[test]
    fn snapshot_roundtrip_is_identity() {
        let records = vec![
            LabeledRecord { text: "he said \"hi\"\tand left".into(), label: 0 },
            LabeledRecord { text: "she answered".into(), label: 1 },
            LabeledRecord { text: "nothing gendered".into(), label: 0 },
            LabeledRecord { text: "the king waved".into(), label: 0 },
            LabeledRecord { text: "her book".into(), label: 1 },
            LabeledRecord { text: "more filler".into(), label: 0 },
            LabeledRecord { text: "his idea".into(), label: 0 },
            LabeledRecord { text: "plain".into(), label: 1 },
            LabeledRecord { text: "also plain".into(), label: 0 },
            LabeledRecord { text: "last one".into(), label: 0 },
        ];
        let pairs = attach_counterfactuals(&records, lex());
        let dataset = split(pairs, [0.8, 0.1, 0.1], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snapshot.jsonl");
        save_snapshot(&dataset, &path).unwrap();
        let loaded = load_snapshot(&path).unwrap();
        assert_eq!(loaded, dataset);
    }

    proptest! {
        #[test]
        fn split_partitions_ids(n in 3usize..200, seed in 0u64..50) {
            let pairs = attach_counterfactuals(&dummy_records(n), lex());
            let mut all_ids: Vec<u64> = pairs.iter().map(|p| p.id).collect();
            let s = split(pairs, [0.8, 0.1, 0.1], seed).unwrap();
            let mut seen: Vec<u64> = s
                .train
                .iter()
                .chain(s.valid.iter())
                .chain(s.test.iter())
                .map(|p| p.id)
                .collect();
            seen.sort_unstable();
            all_ids.sort_unstable();
            prop_assert_eq!(seen, all_ids);
            prop_assert_eq!(s.len(), n);
        }
    }
}
