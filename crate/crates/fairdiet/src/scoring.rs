//! Per-example importance scores at an early-training checkpoint.
//!
//! The gender-equity (GE) score of a pair is the l2 norm of the logit
//! difference between its factual and counterfactual texts; pairs without
//! gender words score exactly zero without touching the model. EL2N, GraNd,
//! forget, and random scores are the comparison baselines. Tables are
//! averaged over seeds and written as joinable TSV files.

use crate::classifier::{self, Arch, ClassifierState, Featurizer, ForgetLog, Hyper, Sample};
use crate::corpus::ExamplePair;
use crate::error::Error;
use crate::rng;
use crate::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreKind {
    Ge,
    El2n,
    Grand,
    Forget,
    Random,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 5] = [
        ScoreKind::Ge,
        ScoreKind::El2n,
        ScoreKind::Grand,
        ScoreKind::Forget,
        ScoreKind::Random,
    ];
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ScoreKind::Ge => "GE",
            ScoreKind::El2n => "EL2N",
            ScoreKind::Grand => "GraNd",
            ScoreKind::Forget => "Forget",
            ScoreKind::Random => "Random",
        };
        f.write_str(name)
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "ge" => Ok(ScoreKind::Ge),
            "el2n" => Ok(ScoreKind::El2n),
            "grand" => Ok(ScoreKind::Grand),
            "forget" | "forget_score" => Ok(ScoreKind::Forget),
            "random" => Ok(ScoreKind::Random),
            _ => Err(Error::UnknownScoreKind { name: s.to_string() }),
        }
    }
}

/// One scored example.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScore {
    pub example_id: u64,
    pub kind: ScoreKind,
    pub value: f64,
    pub seeds_averaged: usize,
}

/// How a table was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub n_early_epochs: usize,
    pub seeds: Vec<u64>,
    pub model_family: String,
}

/// Scores for every training example, keyed by example id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub kind: ScoreKind,
    pub values: BTreeMap<u64, f64>,
    pub provenance: Provenance,
}

impl ScoreTable {
    pub fn get(&self, id: u64) -> Result<f64> {
        self.values.get(&id).copied().ok_or(Error::UnknownExampleId { id })
    }

    /// The table as individual scores, in id order.
    pub fn scores(&self) -> impl Iterator<Item = ImportanceScore> + '_ {
        self.values.iter().map(|(&example_id, &value)| ImportanceScore {
            example_id,
            kind: self.kind,
            value,
            seeds_averaged: self.provenance.seeds.len(),
        })
    }

    /// Ids ordered by descending value; ties broken by ascending id.
    pub fn ids_by_descending_value(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.values.keys().copied().collect();
        ids.sort_by(|&a, &b| {
            self.values[&b]
                .partial_cmp(&self.values[&a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        ids
    }

    /// Ids ordered by ascending value; ties broken by ascending id.
    pub fn ids_by_ascending_value(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.values.keys().copied().collect();
        ids.sort_by(|&a, &b| {
            self.values[&a]
                .partial_cmp(&self.values[&b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        ids
    }

    /// Error unless the table covers exactly the ids of `pairs`.
    pub fn check_coverage(&self, pairs: &[ExamplePair]) -> Result<()> {
        let missing: Vec<u64> = pairs
            .iter()
            .map(|p| p.id)
            .filter(|id| !self.values.contains_key(id))
            .collect();
        let extra = self.values.len() != pairs.len();
        if !missing.is_empty() || extra {
            return Err(Error::CoverageMismatch {
                kind: self.kind.to_string(),
                details: format!(
                    "table has {} entries for {} pairs; first missing ids: {:?}",
                    self.values.len(),
                    pairs.len(),
                    missing.iter().take(5).collect::<Vec<_>>()
                ),
            });
        }
        Ok(())
    }
}

/// GE score: l2 norm of logits(factual) - logits(counterfactual). Exactly
/// zero for pairs without gender words, enforced structurally so numerical
/// noise cannot leak in.
pub fn ge_score(state: &ClassifierState, pair: &ExamplePair) -> f64 {
    if !pair.has_gender_words {
        return 0.0;
    }
    let f = state.logits(&pair.factual_text);
    let c = state.logits(&pair.counterfactual_text);
    let d0 = f[0] - c[0];
    let d1 = f[1] - c[1];
    (d0 * d0 + d1 * d1).sqrt()
}

/// EL2N score: l2 norm of (softmax probabilities - one-hot label) on the
/// factual text.
pub fn el2n_score(state: &ClassifierState, pair: &ExamplePair) -> f64 {
    let p1 = state.predict_prob(&pair.factual_text);
    let p0 = 1.0 - p1;
    let (e0, e1) = if pair.label == 1 {
        (p0, p1 - 1.0)
    } else {
        (p0 - 1.0, p1)
    };
    (e0 * e0 + e1 * e1).sqrt()
}

/// GraNd score: l2 norm of the per-example loss gradient w.r.t. all
/// weights, on the factual text.
pub fn grand_score(state: &ClassifierState, pair: &ExamplePair) -> f64 {
    state.grad_norm(&pair.factual_text, pair.label)
}

/// Forget score: the example's correct-to-incorrect transition count from a
/// completed training run. A never-correct example scores 0.
pub fn forget_score(log: &ForgetLog, pair: &ExamplePair) -> Result<f64> {
    log.count_for(pair.id).map(f64::from)
}

/// Model settings used when computing score tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dim: usize,
    pub arch: Arch,
    pub hyper: Hyper,
}

impl ModelSpec {
    pub fn family(&self) -> &'static str {
        self.arch.family()
    }

    pub fn fresh_state(&self, seed: u64) -> ClassifierState {
        ClassifierState::new(Featurizer::new(self.dim), self.arch, seed, self.hyper)
    }
}

fn factual_samples(pairs: &[ExamplePair]) -> Vec<Sample> {
    pairs
        .iter()
        .map(|p| Sample::new(p.id, p.factual_text.clone(), p.label))
        .collect()
}

/// Compute a score table: for each seed, train a fresh model for
/// `n_early_epochs` on the factual texts, score every pair, then average
/// per example. The random kind ignores the model and draws per-example
/// uniforms from a dedicated stream.
pub fn compute_score_table(
    kind: ScoreKind,
    pairs: &[ExamplePair],
    n_early_epochs: usize,
    seeds: &[u64],
    model: &ModelSpec,
) -> Result<ScoreTable> {
    if seeds.is_empty() {
        return Err(Error::EmptyInput {
            what: "seed list".to_string(),
        });
    }
    let provenance = Provenance {
        n_early_epochs,
        seeds: seeds.to_vec(),
        model_family: model.family().to_string(),
    };

    if kind == ScoreKind::Random {
        let values = pairs
            .iter()
            .map(|p| {
                let mean = seeds
                    .iter()
                    .map(|&s| rng::unit_f64(s, rng::SALT_RANDOM_SCORE, p.id))
                    .sum::<f64>()
                    / seeds.len() as f64;
                (p.id, mean)
            })
            .collect();
        return Ok(ScoreTable { kind, values, provenance });
    }

    let samples = factual_samples(pairs);
    let per_seed: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<f64>> {
            let state = model.fresh_state(seed);
            let (state, log) = classifier::train(state, &samples, n_early_epochs)
                .map_err(|e| Error::SeedFailure { seed, source: Box::new(e) })?;
            pairs
                .par_iter()
                .map(|pair| match kind {
                    ScoreKind::Ge => Ok(ge_score(&state, pair)),
                    ScoreKind::El2n => Ok(el2n_score(&state, pair)),
                    ScoreKind::Grand => Ok(grand_score(&state, pair)),
                    ScoreKind::Forget => forget_score(&log, pair)
                        .map_err(|e| Error::SeedFailure { seed, source: Box::new(e) }),
                    ScoreKind::Random => unreachable!(),
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut values = BTreeMap::new();
    for (i, pair) in pairs.iter().enumerate() {
        let mean = per_seed.iter().map(|v| v[i]).sum::<f64>() / seeds.len() as f64;
        values.insert(pair.id, mean);
    }
    Ok(ScoreTable { kind, values, provenance })
}

/// Overlap between the top-k id sets of two tables covering the same ids,
/// with k = ceil(fraction * N).
pub fn overlap_ratio(a: &ScoreTable, b: &ScoreTable, fraction: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "overlap fraction must be in (0, 1], got {fraction}"
        )));
    }
    if a.values.len() != b.values.len() || !a.values.keys().eq(b.values.keys()) {
        return Err(Error::CoverageMismatch {
            kind: format!("{} vs {}", a.kind, b.kind),
            details: "tables cover different id sets".to_string(),
        });
    }
    let n = a.values.len();
    if n == 0 {
        return Err(Error::EmptyInput {
            what: "score table".to_string(),
        });
    }
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let top_a: std::collections::HashSet<u64> =
        a.ids_by_descending_value().into_iter().take(k).collect();
    let hits = b
        .ids_by_descending_value()
        .into_iter()
        .take(k)
        .filter(|id| top_a.contains(id))
        .count();
    Ok(hits as f64 / k as f64)
}

// ---------------------------------------------------------------------------
// Table files: `id<TAB>value` rows, header comments carry provenance.
// ---------------------------------------------------------------------------

pub fn save_table(table: &ScoreTable, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(&path).map_err(|e| Error::io_path(&path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# kind={}", table.kind)?;
    writeln!(
        out,
        "# seeds={}",
        table
            .provenance
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    )?;
    writeln!(out, "# n_early_epochs={}", table.provenance.n_early_epochs)?;
    writeln!(out, "# model_family={}", table.provenance.model_family)?;
    for (id, value) in &table.values {
        writeln!(out, "{id}\t{value:.17e}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_table(path: impl AsRef<Path>) -> Result<ScoreTable> {
    let file = std::fs::File::open(&path).map_err(|e| Error::io_path(&path, e))?;
    let mut kind = None;
    let mut seeds = Vec::new();
    let mut n_early_epochs = 0usize;
    let mut model_family = String::new();
    let mut values = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io_path(&path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some((key, val)) = rest.split_once('=') {
                match key.trim() {
                    "kind" => kind = Some(ScoreKind::from_str(val.trim())?),
                    "seeds" => {
                        seeds = val
                            .split(',')
                            .filter(|s| !s.trim().is_empty())
                            .map(|s| s.trim().parse::<u64>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|e| Error::SnapshotParse {
                                line: i + 1,
                                message: e.to_string(),
                            })?;
                    }
                    "n_early_epochs" => {
                        n_early_epochs = val.trim().parse().map_err(|_| Error::SnapshotParse {
                            line: i + 1,
                            message: "bad n_early_epochs".to_string(),
                        })?;
                    }
                    "model_family" => model_family = val.trim().to_string(),
                    _ => {}
                }
            }
            continue;
        }
        let (id, value) = line.split_once('\t').ok_or_else(|| Error::SnapshotParse {
            line: i + 1,
            message: "expected id<TAB>value".to_string(),
        })?;
        let id: u64 = id.trim().parse().map_err(|_| Error::SnapshotParse {
            line: i + 1,
            message: "bad id".to_string(),
        })?;
        let value: f64 = value.trim().parse().map_err(|_| Error::SnapshotParse {
            line: i + 1,
            message: "bad value".to_string(),
        })?;
        values.insert(id, value);
    }
    let kind = kind.ok_or_else(|| Error::SnapshotParse {
        line: 1,
        message: "missing '# kind=' header".to_string(),
    })?;
    Ok(ScoreTable {
        kind,
        values,
        provenance: Provenance {
            n_early_epochs,
            seeds,
            model_family,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{attach_counterfactuals, LabeledRecord};
    use crate::lexicon::GenderLexicon;

    fn lex() -> &'static GenderLexicon {
        GenderLexicon::default_builtin()
    }

    fn spec(dim: usize) -> ModelSpec {
        ModelSpec {
            dim,
            arch: Arch::Linear,
            hyper: Hyper::default(),
        }
    }

    fn mixed_pairs(n: usize) -> Vec<ExamplePair> {
        let records: Vec<LabeledRecord> = (0..n)
            .map(|i| {
                let text = match i % 4 {
                    0 => format!("she is topic {i}"),
                    1 => format!("he said thing {i}"),
                    2 => format!("plain filler number {i}"),
                    _ => format!("the woman wrote {i} words"),
                };
                LabeledRecord { text, label: (i % 3 == 0) as u8 }
            })
            .collect();
        attach_counterfactuals(&records, lex())
    }

    #[test]
    fn ge_score_is_zero_for_gender_free_pairs() {
        let pairs = mixed_pairs(8);
        let state = spec(1 << 10).fresh_state(1);
        for p in &pairs {
            if !p.has_gender_words {
                assert_eq!(ge_score(&state, p), 0.0);
            }
        }
    }

    #[test]
    fn ge_score_matches_hand_values() {
        // Identical logits -> 0 under a zero model.
        let pairs = mixed_pairs(4);
        let zero_state = spec(1 << 10).fresh_state(1);
        for p in &pairs {
            assert_eq!(ge_score(&zero_state, p), 0.0);
        }

        // Craft weights so the factual text scores (1, 0) and the
        // counterfactual (0, 1); the score must be sqrt(2) exactly.
        let dim = 1 << 10;
        let mut state = spec(dim).fresh_state(1);
        let idx_of = |state: &crate::classifier::ClassifierState, text: &str| {
            state.featurizer().featurize(text).entries[0].0 as usize
        };
        let fact_idx = idx_of(&state, "alpha");
        let cf_idx = idx_of(&state, "beta");
        state.perturb_param(fact_idx, 1.0); // class-0 weight of "alpha"
        state.perturb_param(dim + cf_idx, 1.0); // class-1 weight of "beta"
        assert_eq!(state.logits("alpha"), [1.0, 0.0]);
        assert_eq!(state.logits("beta"), [0.0, 1.0]);
        let pair = ExamplePair {
            id: 0,
            label: 1,
            factual_text: "alpha".into(),
            counterfactual_text: "beta".into(),
            has_gender_words: true,
        };
        assert!((ge_score(&state, &pair) - std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn el2n_matches_arithmetic() {
        // Zero model predicts (0.5, 0.5); against label 1 the error vector
        // is (0.5, -0.5), norm sqrt(0.5).
        let pairs = mixed_pairs(4);
        let state = spec(1 << 10).fresh_state(1);
        let expected = 0.5f64.sqrt();
        for p in &pairs {
            let v = el2n_score(&state, p);
            assert!((v - expected).abs() < 1e-12);
            assert!(v <= std::f64::consts::SQRT_2 + 1e-12);
        }
    }

    #[test]
    fn grand_correlates_with_el2n() {
        // Both scores grow with the prediction error, so their ranks agree
        // positively on a trained model (the two are proportional for the
        // linear model up to the feature norm factor).
        let pairs = mixed_pairs(200);
        let samples = factual_samples(&pairs);
        let state = spec(1 << 12).fresh_state(3);
        let (state, _) = classifier::train(state, &samples, 1).unwrap();
        let el2n: Vec<f64> = pairs.iter().map(|p| el2n_score(&state, p)).collect();
        let grand: Vec<f64> = pairs.iter().map(|p| grand_score(&state, p)).collect();
        assert!(spearman(&el2n, &grand) > 0.0);
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
            let mut r = vec![0.0; v.len()];
            for (pos, &i) in idx.iter().enumerate() {
                r[i] = pos as f64;
            }
            r
        };
        let ra = rank(a);
        let rb = rank(b);
        let n = a.len() as f64;
        let mean = (n - 1.0) / 2.0;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..a.len() {
            cov += (ra[i] - mean) * (rb[i] - mean);
            va += (ra[i] - mean).powi(2);
            vb += (rb[i] - mean).powi(2);
        }
        cov / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn forget_score_walkthrough() {
        // correct@1, wrong@2, correct@3, wrong@4 -> two forget events.
        let mut flags = [true, false, true, false].iter();
        let mut count = 0u32;
        let mut last = None;
        for &f in flags.by_ref() {
            if last == Some(true) && !f {
                count += 1;
            }
            last = Some(f);
        }
        assert_eq!(count, 2);
    }

    #[test]
    fn forget_score_unknown_id_errors() {
        let pairs = mixed_pairs(4);
        let samples = factual_samples(&pairs);
        let (_, log) = classifier::train(spec(1 << 10).fresh_state(1), &samples, 2).unwrap();
        let ghost = ExamplePair {
            id: 999,
            label: 0,
            factual_text: "x".into(),
            counterfactual_text: "x".into(),
            has_gender_words: false,
        };
        assert!(matches!(
            forget_score(&log, &ghost),
            Err(Error::UnknownExampleId { id: 999 })
        ));
    }

    #[test]
    fn table_averages_over_seeds() {
        let pairs = mixed_pairs(24);
        let model = spec(1 << 10);
        let t1 = compute_score_table(ScoreKind::Ge, &pairs, 1, &[1], &model).unwrap();
        let t2 = compute_score_table(ScoreKind::Ge, &pairs, 1, &[2], &model).unwrap();
        let t12 = compute_score_table(ScoreKind::Ge, &pairs, 1, &[1, 2], &model).unwrap();
        for (&id, &v) in &t12.values {
            let mean = (t1.values[&id] + t2.values[&id]) / 2.0;
            assert!((v - mean).abs() < 1e-12);
        }
        assert_eq!(t12.provenance.seeds, vec![1, 2]);
        for score in t12.scores() {
            assert_eq!(score.kind, ScoreKind::Ge);
            assert_eq!(score.seeds_averaged, 2);
            assert!(score.value.is_finite() && score.value >= 0.0);
        }
    }

    #[test]
    fn ge_table_is_all_zero_on_gender_free_data() {
        let records: Vec<LabeledRecord> = (0..10)
            .map(|i| LabeledRecord { text: format!("nothing gendered {i}"), label: (i % 2) as u8 })
            .collect();
        let pairs = attach_counterfactuals(&records, lex());
        let table = compute_score_table(ScoreKind::Ge, &pairs, 1, &[1], &spec(1 << 10)).unwrap();
        assert!(table.values.values().all(|&v| v == 0.0));
    }

    #[test]
    fn random_scores_ignore_the_model_and_stay_in_range() {
        let pairs = mixed_pairs(50);
        let a = compute_score_table(ScoreKind::Random, &pairs, 1, &[5], &spec(1 << 4)).unwrap();
        let b = compute_score_table(ScoreKind::Random, &pairs, 9, &[5], &spec(1 << 12)).unwrap();
        assert_eq!(a.values, b.values);
        assert!(a.values.values().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn overlap_ratio_boundaries() {
        let pairs = mixed_pairs(20);
        let model = spec(1 << 10);
        let t = compute_score_table(ScoreKind::Ge, &pairs, 1, &[1], &model).unwrap();
        let u = compute_score_table(ScoreKind::Random, &pairs, 1, &[1], &model).unwrap();
        assert_eq!(overlap_ratio(&t, &t, 0.5).unwrap(), 1.0);
        assert_eq!(overlap_ratio(&t, &u, 1.0).unwrap(), 1.0);

        // Disjoint top halves by construction.
        let n = 10u64;
        let mk = |rising: bool| ScoreTable {
            kind: ScoreKind::Random,
            values: (0..n)
                .map(|i| (i, if rising { i as f64 } else { (n - i) as f64 }))
                .collect(),
            provenance: Provenance {
                n_early_epochs: 0,
                seeds: vec![],
                model_family: "none".into(),
            },
        };
        assert_eq!(overlap_ratio(&mk(true), &mk(false), 0.5).unwrap(), 0.0);
    }

    #[test]
    fn overlap_ratio_rejects_mismatched_ids() {
        let pairs = mixed_pairs(10);
        let model = spec(1 << 10);
        let t = compute_score_table(ScoreKind::Ge, &pairs, 1, &[1], &model).unwrap();
        let fewer = mixed_pairs(8);
        let u = compute_score_table(ScoreKind::Ge, &fewer, 1, &[1], &model).unwrap();
        assert!(matches!(
            overlap_ratio(&t, &u, 0.5),
            Err(Error::CoverageMismatch { .. })
        ));
    }

    #[test]
    fn pair_symmetry_under_text_swap() {
        let pairs = mixed_pairs(16);
        let samples = factual_samples(&pairs);
        let (state, _) = classifier::train(spec(1 << 10).fresh_state(1), &samples, 1).unwrap();
        for p in &pairs {
            let swapped = ExamplePair {
                factual_text: p.counterfactual_text.clone(),
                counterfactual_text: p.factual_text.clone(),
                ..p.clone()
            };
            assert_eq!(ge_score(&state, p), ge_score(&state, &swapped));
        }
    }

    #[test]
    fn table_file_roundtrip() {
        let pairs = mixed_pairs(12);
        let table = compute_score_table(ScoreKind::Ge, &pairs, 1, &[1, 2], &spec(1 << 10)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ge.tsv");
        save_table(&table, &path).unwrap();
        let loaded = load_table(&path).unwrap();
        assert_eq!(loaded, table);
    }
}
