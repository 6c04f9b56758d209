//! Training-diet assembly from the factual and counterfactual pools.
//!
//! Covers the CDA and CDS baselines, the counterfactual-ratio sweep (all
//! factual + top b% of counterfactuals by score), the four pruning
//! rankings (vanilla GE, random, healthy random, unhealthy random), and
//! the (a, b) grid search under an AUC-drop constraint.

use crate::corpus::ExamplePair;
use crate::error::Error;
use crate::faireval::FairnessReport;
use crate::rng;
use crate::scoring::ScoreTable;
use crate::Result;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

/// The four ranking methods for pruned diets. Factual picks are random for
/// all but vanilla GE (ascending GE); counterfactual picks are descending
/// GE for healthy random, ascending GE for vanilla GE and unhealthy random,
/// and random for the random ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingKind {
    VanillaGe,
    Random,
    HealthyRandom,
    UnhealthyRandom,
}

impl RankingKind {
    pub const ALL: [RankingKind; 4] = [
        RankingKind::VanillaGe,
        RankingKind::Random,
        RankingKind::HealthyRandom,
        RankingKind::UnhealthyRandom,
    ];
}

impl fmt::Display for RankingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            RankingKind::VanillaGe => "vanilla_ge",
            RankingKind::Random => "random",
            RankingKind::HealthyRandom => "healthy_random",
            RankingKind::UnhealthyRandom => "unhealthy_random",
        };
        f.write_str(name)
    }
}

impl FromStr for RankingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "vanilla_ge" | "vanilla" => Ok(RankingKind::VanillaGe),
            "random" => Ok(RankingKind::Random),
            "healthy_random" | "healthy" => Ok(RankingKind::HealthyRandom),
            "unhealthy_random" | "unhealthy" => Ok(RankingKind::UnhealthyRandom),
            _ => Err(Error::UnknownRanking { name: s.to_string() }),
        }
    }
}

/// A pruning plan: ranking, factual fraction a, counterfactual fraction b,
/// and the seed for the random picks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruningPlan {
    pub ranking: RankingKind,
    pub a: f64,
    pub b: f64,
    pub seed: u64,
}

impl PruningPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "factual fraction a must be in (0, 1], got {}",
                self.a
            )));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidConfig(format!(
                "counterfactual fraction b must be in [0, 1], got {}",
                self.b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Factual,
    Counterfactual,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Factual => "factual",
            Origin::Counterfactual => "counterfactual",
        })
    }
}

/// One training row: the chosen text, its label, and which pool it came
/// from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DietEntry {
    pub id: u64,
    pub origin: Origin,
    pub text: String,
    pub label: u8,
}

/// Plan fields recorded alongside a diet, enough to re-materialize it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DietProvenance {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranking: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// An assembled training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Diet {
    pub entries: Vec<DietEntry>,
    pub provenance: DietProvenance,
}

impl Diet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Diet size relative to CDA's 2N budget.
    pub fn budget_ratio(&self, n_pairs: usize) -> f64 {
        self.entries.len() as f64 / (2.0 * n_pairs as f64)
    }
}

fn entry(pair: &ExamplePair, origin: Origin) -> DietEntry {
    let text = match origin {
        Origin::Factual => pair.factual_text.clone(),
        Origin::Counterfactual => pair.counterfactual_text.clone(),
    };
    DietEntry {
        id: pair.id,
        origin,
        text,
        label: pair.label,
    }
}

fn ceil_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).ceil() as usize).min(n)
}

/// Counterfactual data augmentation: every factual plus every
/// counterfactual example, exactly 2N rows.
pub fn cda(pairs: &[ExamplePair]) -> Diet {
    let mut entries: Vec<DietEntry> = pairs.iter().map(|p| entry(p, Origin::Factual)).collect();
    entries.extend(pairs.iter().map(|p| entry(p, Origin::Counterfactual)));
    Diet {
        entries,
        provenance: DietProvenance {
            method: "cda".into(),
            ranking: None,
            a: None,
            b: None,
            p: None,
            seed: None,
        },
    }
}

/// Counterfactual data substitution: each example independently replaced by
/// its counterfactual with probability p (a fair coin by default); exactly
/// N rows.
pub fn cds(pairs: &[ExamplePair], p: f64, seed: u64) -> Diet {
    let entries = pairs
        .iter()
        .map(|pair| {
            let flip = rng::unit_f64(seed, rng::SALT_CDS, pair.id) < p;
            entry(pair, if flip { Origin::Counterfactual } else { Origin::Factual })
        })
        .collect();
    Diet {
        entries,
        provenance: DietProvenance {
            method: "cds".into(),
            ranking: None,
            a: None,
            b: None,
            p: Some(p),
            seed: Some(seed),
        },
    }
}

/// All N factual examples plus the top ceil(b*N) counterfactuals by
/// descending score (ties by ascending id).
pub fn counterfactual_sweep(pairs: &[ExamplePair], table: &ScoreTable, b: f64) -> Result<Diet> {
    table.check_coverage(pairs)?;
    let k = ceil_count(b, pairs.len());
    let chosen: std::collections::HashSet<u64> =
        table.ids_by_descending_value().into_iter().take(k).collect();
    let mut entries: Vec<DietEntry> = pairs.iter().map(|p| entry(p, Origin::Factual)).collect();
    entries.extend(
        pairs
            .iter()
            .filter(|p| chosen.contains(&p.id))
            .map(|p| entry(p, Origin::Counterfactual)),
    );
    Ok(Diet {
        entries,
        provenance: DietProvenance {
            method: "sweep".into(),
            ranking: Some(table.kind.to_string()),
            a: None,
            b: Some(b),
            p: None,
            seed: None,
        },
    })
}

/// Assemble a pruned diet for one plan. The random factual pick depends
/// only on (a, seed), never on the ranking, so healthy and unhealthy
/// diets sharing a seed differ only in their counterfactual choice.
pub fn build_diet(pairs: &[ExamplePair], plan: &PruningPlan, ge_table: &ScoreTable) -> Result<Diet> {
    plan.validate()?;
    ge_table.check_coverage(pairs)?;
    let n = pairs.len();
    let n_factual = ceil_count(plan.a, n);
    let n_counterfactual = ceil_count(plan.b, n);

    let random_pick = |salt: u64, k: usize| -> Vec<u64> {
        let ids: Vec<u64> = pairs.iter().map(|p| p.id).collect();
        let mut stream = rng::stream(plan.seed, salt);
        let mut picked: Vec<u64> = ids.choose_multiple(&mut stream, k).copied().collect();
        picked.sort_unstable();
        picked
    };

    let factual_ids: Vec<u64> = match plan.ranking {
        RankingKind::VanillaGe => {
            let mut ids: Vec<u64> =
                ge_table.ids_by_ascending_value().into_iter().take(n_factual).collect();
            ids.sort_unstable();
            ids
        }
        RankingKind::Random | RankingKind::HealthyRandom | RankingKind::UnhealthyRandom => {
            random_pick(rng::SALT_FACTUAL_PICK, n_factual)
        }
    };

    let counterfactual_ids: Vec<u64> = match plan.ranking {
        RankingKind::HealthyRandom => {
            let mut ids: Vec<u64> = ge_table
                .ids_by_descending_value()
                .into_iter()
                .take(n_counterfactual)
                .collect();
            ids.sort_unstable();
            ids
        }
        RankingKind::VanillaGe | RankingKind::UnhealthyRandom => {
            let mut ids: Vec<u64> = ge_table
                .ids_by_ascending_value()
                .into_iter()
                .take(n_counterfactual)
                .collect();
            ids.sort_unstable();
            ids
        }
        RankingKind::Random => random_pick(rng::SALT_COUNTERFACTUAL_PICK, n_counterfactual),
    };

    let by_id: std::collections::HashMap<u64, &ExamplePair> =
        pairs.iter().map(|p| (p.id, p)).collect();
    let mut entries = Vec::with_capacity(factual_ids.len() + counterfactual_ids.len());
    for id in factual_ids {
        entries.push(entry(by_id[&id], Origin::Factual));
    }
    for id in counterfactual_ids {
        entries.push(entry(by_id[&id], Origin::Counterfactual));
    }
    Ok(Diet {
        entries,
        provenance: DietProvenance {
            method: "diet".into(),
            ranking: Some(plan.ranking.to_string()),
            a: Some(plan.a),
            b: Some(plan.b),
            p: None,
            seed: Some(plan.seed),
        },
    })
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

/// Mean metrics of the biased reference model over the same seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub mean_dp: f64,
    pub mean_auc: f64,
}

/// One (a, b) cell of the grid: per-seed reports plus mean-over-seed
/// aggregates and the feasibility verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub a: f64,
    pub b: f64,
    pub per_seed: Vec<(u64, FairnessReport)>,
    pub mean_dp: f64,
    pub mean_auc: f64,
    /// Percent change of mean DP versus the reference.
    pub dp_improvement_pct: f64,
    /// Percent degradation of mean AUC versus the reference.
    pub auc_drop_pct: f64,
    pub feasible: bool,
    pub diet_size: usize,
    pub budget_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The feasible cell with the highest mean DP for one ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestCell {
    pub a: f64,
    pub b: f64,
    pub mean_dp: f64,
    pub mean_auc: f64,
    pub dp_improvement_pct: f64,
    pub auc_drop_pct: f64,
    pub diet_size: usize,
    pub budget_ratio: f64,
}

/// Grid-search outcome for one ranking. `best` is None when no cell
/// satisfies the AUC constraint; the full grid is retained either way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingOutcome {
    pub ranking: RankingKind,
    pub best: Option<BestCell>,
    pub grid: Vec<GridCell>,
}

/// For each ranking, train and evaluate every (a, b) over the seeds,
/// filter cells whose mean AUC drops more than `max_auc_drop_pct` below the
/// reference, and pick the feasible cell maximizing mean DP. Cells fail
/// independently: an erroring cell is recorded and skipped, never aborting
/// the grid.
#[allow(clippy::too_many_arguments)]
pub fn grid_search<F>(
    pairs: &[ExamplePair],
    rankings: &[RankingKind],
    a_values: &[f64],
    b_values: &[f64],
    seeds: &[u64],
    ge_table: &ScoreTable,
    max_auc_drop_pct: f64,
    reference: ReferenceStats,
    evaluate_cell: F,
) -> Result<Vec<RankingOutcome>>
where
    F: Fn(&Diet, u64) -> Result<FairnessReport> + Sync,
{
    ge_table.check_coverage(pairs)?;
    if seeds.is_empty() {
        return Err(Error::EmptyInput { what: "seed list".into() });
    }
    let cells: Vec<(RankingKind, f64, f64)> = rankings
        .iter()
        .flat_map(|&r| {
            a_values
                .iter()
                .flat_map(move |&a| b_values.iter().map(move |&b| (r, a, b)))
        })
        .collect();

    let results: Vec<GridCell> = cells
        .par_iter()
        .map(|&(ranking, a, b)| run_cell(pairs, ranking, a, b, seeds, ge_table, &evaluate_cell, reference, max_auc_drop_pct))
        .collect();

    let mut outcomes = Vec::with_capacity(rankings.len());
    for &ranking in rankings {
        let grid: Vec<GridCell> = results
            .iter()
            .zip(cells.iter())
            .filter(|(_, &(r, _, _))| r == ranking)
            .map(|(cell, _)| cell.clone())
            .collect();
        let mut best: Option<BestCell> = None;
        for cell in grid.iter().filter(|c| c.feasible && c.error.is_none()) {
            let better = best.is_none_or(|b| cell.mean_dp > b.mean_dp);
            if better {
                best = Some(BestCell {
                    a: cell.a,
                    b: cell.b,
                    mean_dp: cell.mean_dp,
                    mean_auc: cell.mean_auc,
                    dp_improvement_pct: cell.dp_improvement_pct,
                    auc_drop_pct: cell.auc_drop_pct,
                    diet_size: cell.diet_size,
                    budget_ratio: cell.budget_ratio,
                });
            }
        }
        outcomes.push(RankingOutcome { ranking, best, grid });
    }
    Ok(outcomes)
}

#[allow(clippy::too_many_arguments)]
fn run_cell<F>(
    pairs: &[ExamplePair],
    ranking: RankingKind,
    a: f64,
    b: f64,
    seeds: &[u64],
    ge_table: &ScoreTable,
    evaluate_cell: &F,
    reference: ReferenceStats,
    max_auc_drop_pct: f64,
) -> GridCell
where
    F: Fn(&Diet, u64) -> Result<FairnessReport> + Sync,
{
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut diet_size = 0usize;
    let mut budget_ratio = 0.0;
    for &seed in seeds {
        let plan = PruningPlan { ranking, a, b, seed };
        let outcome = build_diet(pairs, &plan, ge_table)
            .and_then(|diet| {
                diet_size = diet.len();
                budget_ratio = diet.budget_ratio(pairs.len());
                evaluate_cell(&diet, seed)
            });
        match outcome {
            Ok(report) => per_seed.push((seed, report)),
            Err(e) => {
                return GridCell {
                    a,
                    b,
                    per_seed,
                    mean_dp: f64::NAN,
                    mean_auc: f64::NAN,
                    dp_improvement_pct: f64::NAN,
                    auc_drop_pct: f64::NAN,
                    feasible: false,
                    diet_size,
                    budget_ratio,
                    error: Some(format!("seed {seed}: {e}")),
                }
            }
        }
    }
    let mean_dp = per_seed.iter().map(|(_, r)| r.dp).sum::<f64>() / per_seed.len() as f64;
    let mean_auc = per_seed.iter().map(|(_, r)| r.auc).sum::<f64>() / per_seed.len() as f64;
    let dp_improvement_pct = (mean_dp - reference.mean_dp) / reference.mean_dp * 100.0;
    let auc_drop_pct = (reference.mean_auc - mean_auc) / reference.mean_auc * 100.0;
    GridCell {
        a,
        b,
        per_seed,
        mean_dp,
        mean_auc,
        dp_improvement_pct,
        auc_drop_pct,
        feasible: auc_drop_pct <= max_auc_drop_pct,
        diet_size,
        budget_ratio,
        error: None,
    }
}

// ---------------------------------------------------------------------------
// Manifest files
// ---------------------------------------------------------------------------

/// Write a diet manifest: provenance header plus one `id<TAB>origin` row
/// per entry.
pub fn save_manifest(diet: &Diet, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(&path).map_err(|e| Error::io_path(&path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# provenance={}", serde_json::to_string(&diet.provenance)?)?;
    for e in &diet.entries {
        writeln!(out, "{}\t{}", e.id, e.origin)?;
    }
    out.flush()?;
    Ok(())
}

/// Manifest contents: provenance plus (id, origin) picks.
#[derive(Debug, Clone, PartialEq)]
pub struct DietManifest {
    pub provenance: DietProvenance,
    pub picks: Vec<(u64, Origin)>,
}

impl DietManifest {
    /// Rebuild the exact training set from the picks and the pair pool.
    pub fn materialize(&self, pairs: &[ExamplePair]) -> Result<Diet> {
        let by_id: std::collections::HashMap<u64, &ExamplePair> =
            pairs.iter().map(|p| (p.id, p)).collect();
        let entries = self
            .picks
            .iter()
            .map(|&(id, origin)| {
                by_id
                    .get(&id)
                    .map(|p| entry(p, origin))
                    .ok_or(Error::UnknownExampleId { id })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Diet {
            entries,
            provenance: self.provenance.clone(),
        })
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DietManifest> {
    let file = std::fs::File::open(&path).map_err(|e| Error::io_path(&path, e))?;
    let mut provenance: Option<DietProvenance> = None;
    let mut picks = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io_path(&path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# provenance=") {
            provenance = Some(serde_json::from_str(rest)?);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let (id, origin) = line.split_once('\t').ok_or_else(|| Error::SnapshotParse {
            line: i + 1,
            message: "expected id<TAB>origin".to_string(),
        })?;
        let id: u64 = id.trim().parse().map_err(|_| Error::SnapshotParse {
            line: i + 1,
            message: "bad id".to_string(),
        })?;
        let origin = match origin.trim() {
            "factual" => Origin::Factual,
            "counterfactual" => Origin::Counterfactual,
            other => {
                return Err(Error::SnapshotParse {
                    line: i + 1,
                    message: format!("bad origin '{other}'"),
                })
            }
        };
        picks.push((id, origin));
    }
    Ok(DietManifest {
        provenance: provenance.ok_or_else(|| Error::SnapshotParse {
            line: 1,
            message: "missing provenance header".to_string(),
        })?,
        picks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{attach_counterfactuals, LabeledRecord};
    use crate::lexicon::GenderLexicon;
    use crate::scoring::{compute_score_table, ModelSpec, Provenance, ScoreKind};
    use std::collections::BTreeMap;

    fn pairs(n: usize) -> Vec<ExamplePair> {
        let records: Vec<LabeledRecord> = (0..n)
            .map(|i| {
                let text = if i % 2 == 0 {
                    format!("she wrote note {i}")
                } else {
                    format!("plain note {i}")
                };
                LabeledRecord { text, label: (i % 3 == 0) as u8 }
            })
            .collect();
        attach_counterfactuals(&records, GenderLexicon::default_builtin())
    }

    fn table_with(values: BTreeMap<u64, f64>) -> ScoreTable {
        ScoreTable {
            kind: ScoreKind::Ge,
            values,
            provenance: Provenance {
                n_early_epochs: 1,
                seeds: vec![1],
                model_family: "linear".into(),
            },
        }
    }

    fn multiset(diet: &Diet) -> Vec<(u64, Origin, String, u8)> {
        let mut v: Vec<_> = diet
            .entries
            .iter()
            .map(|e| (e.id, e.origin, e.text.clone(), e.label))
            .collect();
        v.sort();
        v
    }

    #[test]
    fn cda_doubles_and_preserves_labels() {
        let ps = pairs(5);
        let diet = cda(&ps);
        assert_eq!(diet.len(), 10);
        for e in &diet.entries {
            let pair = ps.iter().find(|p| p.id == e.id).unwrap();
            assert_eq!(e.label, pair.label);
        }
        // gender-free pairs contribute two identical texts
        let free = ps.iter().find(|p| !p.has_gender_words).unwrap();
        let texts: Vec<&String> = diet
            .entries
            .iter()
            .filter(|e| e.id == free.id)
            .map(|e| &e.text)
            .collect();
        assert_eq!(texts.len(), 2);
        assert_eq!(texts[0], texts[1]);
    }

    #[test]
    fn cds_boundaries() {
        let ps = pairs(10);
        let all_factual = cds(&ps, 0.0, 1);
        assert!(all_factual.entries.iter().all(|e| e.origin == Origin::Factual));
        assert_eq!(all_factual.len(), 10);
        let all_cf = cds(&ps, 1.0, 1);
        assert!(all_cf.entries.iter().all(|e| e.origin == Origin::Counterfactual));
    }

    #[test]
    fn cds_replacement_count_is_binomial() {
        let ps = pairs(10_000);
        let diet = cds(&ps, 0.5, 3);
        let replaced = diet
            .entries
            .iter()
            .filter(|e| e.origin == Origin::Counterfactual)
            .count() as f64;
        // 3 sigma of Binomial(10000, 0.5)
        let sigma = (10_000.0f64 * 0.25).sqrt();
        assert!((replaced - 5000.0).abs() < 3.0 * sigma, "replaced {replaced}");
    }

    #[test]
    fn sweep_counts_and_boundaries() {
        let ps = pairs(20);
        let model = ModelSpec {
            dim: 1 << 10,
            arch: crate::classifier::Arch::Linear,
            hyper: crate::classifier::Hyper::default(),
        };
        let table = compute_score_table(ScoreKind::Ge, &ps, 1, &[1], &model).unwrap();

        let b0 = counterfactual_sweep(&ps, &table, 0.0).unwrap();
        assert_eq!(b0.len(), 20);
        assert!(b0.entries.iter().all(|e| e.origin == Origin::Factual));
        assert_eq!(multiset(&b0), multiset(&cds(&ps, 0.0, 9)));

        let b01 = counterfactual_sweep(&ps, &table, 0.1).unwrap();
        assert_eq!(b01.len(), 22);

        let b1 = counterfactual_sweep(&ps, &table, 1.0).unwrap();
        assert_eq!(multiset(&b1), multiset(&cda(&ps)));
    }

    #[test]
    fn sweep_rejects_coverage_mismatch() {
        let ps = pairs(10);
        let table = table_with((0..5u64).map(|i| (i, i as f64)).collect());
        assert!(matches!(
            counterfactual_sweep(&ps, &table, 0.5),
            Err(Error::CoverageMismatch { .. })
        ));
    }

    #[test]
    fn healthy_random_takes_descending_ge() {
        let ps = pairs(10);
        let values: BTreeMap<u64, f64> = ps.iter().map(|p| (p.id, p.id as f64)).collect();
        let table = table_with(values);
        let plan = PruningPlan { ranking: RankingKind::HealthyRandom, a: 0.5, b: 0.3, seed: 1 };
        let diet = build_diet(&ps, &plan, &table).unwrap();
        let cf_ids: Vec<u64> = diet
            .entries
            .iter()
            .filter(|e| e.origin == Origin::Counterfactual)
            .map(|e| e.id)
            .collect();
        assert_eq!(cf_ids, vec![7, 8, 9]); // top 3 by value
        let plan = PruningPlan { ranking: RankingKind::UnhealthyRandom, a: 0.5, b: 0.3, seed: 1 };
        let diet = build_diet(&ps, &plan, &table).unwrap();
        let cf_ids: Vec<u64> = diet
            .entries
            .iter()
            .filter(|e| e.origin == Origin::Counterfactual)
            .map(|e| e.id)
            .collect();
        assert_eq!(cf_ids, vec![0, 1, 2]); // bottom 3 by value
    }

    #[test]
    fn factual_random_pick_is_shared_across_rankings() {
        let ps = pairs(30);
        let table = table_with(ps.iter().map(|p| (p.id, p.id as f64)).collect());
        let pick = |ranking| {
            let plan = PruningPlan { ranking, a: 0.4, b: 0.2, seed: 5 };
            build_diet(&ps, &plan, &table)
                .unwrap()
                .entries
                .iter()
                .filter(|e| e.origin == Origin::Factual)
                .map(|e| e.id)
                .collect::<Vec<_>>()
        };
        assert_eq!(pick(RankingKind::HealthyRandom), pick(RankingKind::UnhealthyRandom));
        assert_eq!(pick(RankingKind::HealthyRandom), pick(RankingKind::Random));
    }

    #[test]
    fn full_fractions_reproduce_cda() {
        let ps = pairs(12);
        let table = table_with(ps.iter().map(|p| (p.id, p.id as f64)).collect());
        for ranking in RankingKind::ALL {
            let plan = PruningPlan { ranking, a: 1.0, b: 1.0, seed: 2 };
            let diet = build_diet(&ps, &plan, &table).unwrap();
            assert_eq!(multiset(&diet), multiset(&cda(&ps)), "ranking {ranking}");
        }
    }

    #[test]
    fn budget_stays_within_half_of_cda() {
        let ps = pairs(40);
        let table = table_with(ps.iter().map(|p| (p.id, p.id as f64)).collect());
        for ranking in RankingKind::ALL {
            for &a in &[0.3, 0.4, 0.5] {
                for &b in &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5] {
                    let plan = PruningPlan { ranking, a, b, seed: 1 };
                    let diet = build_diet(&ps, &plan, &table).unwrap();
                    assert!(diet.budget_ratio(ps.len()) <= 0.5 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn diet_size_follows_ceiling_rule() {
        let ps = pairs(20);
        let table = table_with(ps.iter().map(|p| (p.id, p.id as f64)).collect());
        let plan = PruningPlan { ranking: RankingKind::HealthyRandom, a: 0.33, b: 0.1, seed: 1 };
        let diet = build_diet(&ps, &plan, &table).unwrap();
        // ceil(0.33*20)=7 factual, ceil(0.1*20)=2 counterfactual
        assert_eq!(diet.len(), 9);
    }

    #[test]
    fn unknown_ranking_name_errors() {
        assert!(matches!(
            "healthiest".parse::<RankingKind>(),
            Err(Error::UnknownRanking { .. })
        ));
        assert_eq!("healthy_random".parse::<RankingKind>().unwrap(), RankingKind::HealthyRandom);
    }

    #[test]
    fn no_duplicate_id_origin_entries() {
        let ps = pairs(25);
        let table = table_with(ps.iter().map(|p| (p.id, (p.id % 7) as f64)).collect());
        for ranking in RankingKind::ALL {
            let plan = PruningPlan { ranking, a: 0.5, b: 0.5, seed: 3 };
            let diet = build_diet(&ps, &plan, &table).unwrap();
            let mut keys: Vec<(u64, Origin)> =
                diet.entries.iter().map(|e| (e.id, e.origin)).collect();
            let before = keys.len();
            keys.sort();
            keys.dedup();
            assert_eq!(keys.len(), before);
        }
    }

    #[test]
    fn grid_search_picks_max_dp_feasible_cell() {
        let ps = pairs(10);
        let table = table_with(ps.iter().map(|p| (p.id, p.id as f64)).collect());
        let reference = ReferenceStats { mean_dp: 0.5, mean_auc: 1.0 };
        // Stub evaluator: DP rises with b, AUC falls with b.
        let eval = |diet: &Diet, _seed: u64| -> crate::Result<FairnessReport> {
            let b = diet.provenance.b.unwrap_or(0.0);
            Ok(FairnessReport {
                dp: 0.5 + 0.4 * b,
                eq_opp1: 1.0,
                eq_opp0: 1.0,
                eq_odd: 1.0,
                auc: 1.0 - 0.04 * b,
                deltas_vs_reference: None,
            })
        };
        let outcomes = grid_search(
            &ps,
            &[RankingKind::HealthyRandom],
            &[0.5],
            &[0.0, 0.5, 1.0],
            &[1, 2],
            &table,
            3.0,
            reference,
            eval,
        )
        .unwrap();
        let best = outcomes[0].best.unwrap();
        // b=1.0 drops AUC 4% (> 3%), so b=0.5 wins.
        assert_eq!(best.b, 0.5);
        assert_eq!(outcomes[0].grid.len(), 3);
        assert!(!outcomes[0].grid[2].feasible);
    }

    #[test]
    fn grid_search_reports_none_feasible() {
        let ps = pairs(6);
        let table = table_with(ps.iter().map(|p| (p.id, p.id as f64)).collect());
        let reference = ReferenceStats { mean_dp: 0.5, mean_auc: 1.0 };
        let eval = |_: &Diet, _: u64| -> crate::Result<FairnessReport> {
            Ok(FairnessReport {
                dp: 0.9,
                eq_opp1: 1.0,
                eq_opp0: 1.0,
                eq_odd: 1.0,
                auc: 0.5,
                deltas_vs_reference: None,
            })
        };
        let outcomes = grid_search(
            &ps,
            &[RankingKind::Random],
            &[0.5],
            &[0.5],
            &[1],
            &table,
            3.0,
            reference,
            eval,
        )
        .unwrap();
        assert!(outcomes[0].best.is_none());
        assert_eq!(outcomes[0].grid.len(), 1);
    }

    #[test]
    fn grid_search_isolates_cell_failures() {
        let ps = pairs(6);
        let table = table_with(ps.iter().map(|p| (p.id, p.id as f64)).collect());
        let reference = ReferenceStats { mean_dp: 0.5, mean_auc: 1.0 };
        let eval = |diet: &Diet, _: u64| -> crate::Result<FairnessReport> {
            if diet.provenance.b == Some(0.5) {
                return Err(Error::EmptyInput { what: "boom".into() });
            }
            Ok(FairnessReport {
                dp: 0.6,
                eq_opp1: 1.0,
                eq_opp0: 1.0,
                eq_odd: 1.0,
                auc: 1.0,
                deltas_vs_reference: None,
            })
        };
        let outcomes = grid_search(
            &ps,
            &[RankingKind::Random],
            &[0.5],
            &[0.0, 0.5],
            &[1],
            &table,
            3.0,
            reference,
            eval,
        )
        .unwrap();
        let grid = &outcomes[0].grid;
        assert!(grid[0].error.is_none());
        assert!(grid[1].error.is_some());
        assert_eq!(outcomes[0].best.unwrap().b, 0.0);
    }

    #[test]
    fn manifest_roundtrip_rematerializes() {
        let ps = pairs(12);
        let table = table_with(ps.iter().map(|p| (p.id, p.id as f64)).collect());
        let plan = PruningPlan { ranking: RankingKind::HealthyRandom, a: 0.5, b: 0.25, seed: 4 };
        let diet = build_diet(&ps, &plan, &table).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("diet.tsv");
        save_manifest(&diet, &path).unwrap();
        let manifest = load_manifest(&path).unwrap();
        let rebuilt = manifest.materialize(&ps).unwrap();
        assert_eq!(rebuilt, diet);
    }
}
