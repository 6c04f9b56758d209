//! Experiment orchestration: ties the pipeline together, runs the biased
//! reference, the CDA/CDS baselines, the counterfactual-ratio sweep
//! (experiment 1), the (a, b) grid search (experiment 2), and the overlap
//! robustness study, and emits deterministic report files.

pub mod config;

pub use config::{prepare, DatasetConfig, ExperimentConfig, Method, Prepared};

use crate::classifier::{self, ClassifierState, Sample};
use crate::corpus::{self, DatasetStats, ExamplePair};
use crate::diet::{self, cda, cds, counterfactual_sweep, Diet, PruningPlan, ReferenceStats};
use crate::error::Error;
use crate::faireval::{self, FairnessReport};
use crate::scoring::{self, ScoreKind, ScoreTable};
use crate::Result;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

/// Per-metric aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricAggregate {
    pub dp: MeanStd,
    pub eq_opp1: MeanStd,
    pub eq_opp0: MeanStd,
    pub eq_odd: MeanStd,
    pub auc: MeanStd,
}

/// Aggregate over the per-seed reports, plus delta aggregates when every
/// seed carries deltas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub metrics: MetricAggregate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deltas: Option<MetricAggregate>,
}

fn aggregate_reports(per_seed: &[SeedReport]) -> Option<AggregateMetrics> {
    if per_seed.is_empty() {
        return None;
    }
    let collect = |f: &dyn Fn(&FairnessReport) -> f64| -> Vec<f64> {
        per_seed.iter().map(|s| f(&s.report)).collect()
    };
    let metrics = MetricAggregate {
        dp: mean_std(&collect(&|r| r.dp)),
        eq_opp1: mean_std(&collect(&|r| r.eq_opp1)),
        eq_opp0: mean_std(&collect(&|r| r.eq_opp0)),
        eq_odd: mean_std(&collect(&|r| r.eq_odd)),
        auc: mean_std(&collect(&|r| r.auc)),
    };
    let deltas = if per_seed.iter().all(|s| s.report.deltas_vs_reference.is_some()) {
        let collect_d = |f: &dyn Fn(&faireval::MetricDeltas) -> f64| -> Vec<f64> {
            per_seed
                .iter()
                .map(|s| f(s.report.deltas_vs_reference.as_ref().unwrap()))
                .collect()
        };
        Some(MetricAggregate {
            dp: mean_std(&collect_d(&|d| d.dp)),
            eq_opp1: mean_std(&collect_d(&|d| d.eq_opp1)),
            eq_opp0: mean_std(&collect_d(&|d| d.eq_opp0)),
            eq_odd: mean_std(&collect_d(&|d| d.eq_odd)),
            auc: mean_std(&collect_d(&|d| d.auc)),
        })
    } else {
        None
    };
    Some(AggregateMetrics { metrics, deltas })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub report: FairnessReport,
}

/// One evaluated configuration: a baseline, a sweep point, or a grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub label: String,
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranking: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diet_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feasible: Option<bool>,
    pub per_seed: Vec<SeedReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<AggregateMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Cell {
    fn new(label: impl Into<String>, method: &str) -> Self {
        Cell {
            label: label.into(),
            method: method.to_string(),
            kind: None,
            ranking: None,
            a: None,
            b: None,
            p: None,
            diet_size: None,
            budget_ratio: None,
            feasible: None,
            per_seed: Vec::new(),
            aggregate: None,
            error: None,
        }
    }

    fn finish(mut self) -> Self {
        self.aggregate = aggregate_reports(&self.per_seed);
        self
    }
}

/// Experiment-2 summary row: the best feasible (a, b) per ranking, with
/// CDA and CDS added for comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestPlanRow {
    pub ranking: String,
    pub feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    pub diet_size: usize,
    pub budget_ratio: f64,
    pub mean_dp: f64,
    pub mean_auc: f64,
    pub dp_improvement_pct: f64,
    pub auc_drop_pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deltas: Option<MetricAggregate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapPoint {
    pub fraction: f64,
    pub overlap: f64,
}

/// One overlap curve of the robustness study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapCurve {
    pub axis: String,
    pub comparison: String,
    pub points: Vec<OverlapPoint>,
}

/// Artifacts carried for report emission but kept out of metrics.json.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub score_tables: Vec<ScoreTable>,
    pub diets: Vec<(String, Diet)>,
}

/// Everything one run produced. Identical configs produce identical
/// records except for the wall clock, which is excluded from the
/// deterministic report files.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub config: ExperimentConfig,
    pub train_stats: DatasetStats,
    pub dataset_sizes: [usize; 3],
    pub cells: Vec<Cell>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub best_plans: Vec<BestPlanRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub overlap_curves: Vec<OverlapCurve>,
    pub score_table_files: Vec<String>,
    pub diet_manifest_files: Vec<String>,
    #[serde(skip)]
    pub artifacts: Artifacts,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunRecord {
    fn new(command: &str, config: &ExperimentConfig, prep: &Prepared) -> Self {
        RunRecord {
            command: command.to_string(),
            config: config.clone(),
            train_stats: corpus::stats(&prep.dataset.train),
            dataset_sizes: [
                prep.dataset.train.len(),
                prep.dataset.valid.len(),
                prep.dataset.test.len(),
            ],
            cells: Vec::new(),
            best_plans: Vec::new(),
            overlap_curves: Vec::new(),
            score_table_files: Vec::new(),
            diet_manifest_files: Vec::new(),
            artifacts: Artifacts::default(),
            wall_clock_secs: 0.0,
        }
    }

    /// True when at least one cell failed; the CLI maps this to exit 2.
    pub fn has_cell_failures(&self) -> bool {
        self.cells.iter().any(|c| c.error.is_some())
    }

    fn push_table(&mut self, table: ScoreTable) {
        self.score_table_files.push(format!("scores/{}.tsv", table.kind));
        self.artifacts.score_tables.push(table);
    }

    fn push_diet(&mut self, label: &str, diet: Diet) {
        let file = format!("diets/{}.tsv", sanitize(label));
        self.diet_manifest_files.push(file);
        self.artifacts.diets.push((label.to_string(), diet));
    }
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Fail fast when the output directory cannot be created or written,
/// before any training starts.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io_path(dir, e))?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"ok").map_err(|e| Error::io_path(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io_path(&probe, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Training helpers
// ---------------------------------------------------------------------------

fn samples_from_pairs(pairs: &[ExamplePair]) -> Vec<Sample> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| Sample::new(i as u64, p.factual_text.clone(), p.label))
        .collect()
}

fn samples_from_diet(diet: &Diet) -> Vec<Sample> {
    diet.entries
        .iter()
        .enumerate()
        .map(|(i, e)| Sample::new(i as u64, e.text.clone(), e.label))
        .collect()
}

fn train_fresh(
    prep: &Prepared,
    config: &ExperimentConfig,
    samples: &[Sample],
    seed: u64,
) -> Result<ClassifierState> {
    let state = prep.model.fresh_state(seed);
    let (state, _) = classifier::train(state, samples, config.epochs)
        .map_err(|e| Error::SeedFailure { seed, source: Box::new(e) })?;
    Ok(state)
}

fn evaluate_state(
    prep: &Prepared,
    state: &ClassifierState,
    reference: Option<&FairnessReport>,
) -> Result<FairnessReport> {
    faireval::evaluate(state, &prep.eval_pairs, &prep.dataset.test, reference)
}

/// Train and evaluate the factual-only (biased) model for every seed; this
/// is the delta reference for everything else.
fn biased_reports(prep: &Prepared, config: &ExperimentConfig) -> Result<Vec<SeedReport>> {
    let samples = samples_from_pairs(&prep.dataset.train);
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let state = train_fresh(prep, config, &samples, seed)?;
            let report = evaluate_state(prep, &state, None)
                .map_err(|e| Error::SeedFailure { seed, source: Box::new(e) })?;
            Ok(SeedReport { seed, report })
        })
        .collect()
}

fn reference_map(reports: &[SeedReport]) -> BTreeMap<u64, FairnessReport> {
    reports.iter().map(|s| (s.seed, s.report.clone())).collect()
}

fn reference_stats(reports: &[SeedReport]) -> ReferenceStats {
    let n = reports.len() as f64;
    ReferenceStats {
        mean_dp: reports.iter().map(|s| s.report.dp).sum::<f64>() / n,
        mean_auc: reports.iter().map(|s| s.report.auc).sum::<f64>() / n,
    }
}

fn biased_cell(reports: Vec<SeedReport>) -> Cell {
    let mut cell = Cell::new("biased", "biased");
    cell.per_seed = reports;
    cell.finish()
}

/// Train on a fixed diet for every seed, evaluating against the per-seed
/// reference. Failures are recorded on the cell, not propagated.
fn diet_cell(
    prep: &Prepared,
    config: &ExperimentConfig,
    label: &str,
    method: &str,
    diet: &Diet,
    reference: &BTreeMap<u64, FairnessReport>,
) -> Cell {
    let mut cell = Cell::new(label, method);
    cell.diet_size = Some(diet.len());
    cell.budget_ratio = Some(diet.budget_ratio(prep.dataset.train.len()));
    cell.a = diet.provenance.a;
    cell.b = diet.provenance.b;
    cell.p = diet.provenance.p;
    cell.ranking = diet.provenance.ranking.clone();
    let samples = samples_from_diet(diet);
    let results: Vec<Result<SeedReport>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let state = train_fresh(prep, config, &samples, seed)?;
            let report = evaluate_state(prep, &state, reference.get(&seed))
                .map_err(|e| Error::SeedFailure { seed, source: Box::new(e) })?;
            Ok(SeedReport { seed, report })
        })
        .collect();
    for result in results {
        match result {
            Ok(r) => cell.per_seed.push(r),
            Err(e) => {
                cell.error = Some(e.to_string());
            }
        }
    }
    cell.finish()
}

// ---------------------------------------------------------------------------
// Run entry points
// ---------------------------------------------------------------------------

/// Dispatch a training method to its run function.
pub fn run(config: &ExperimentConfig) -> Result<RunRecord> {
    match config.method {
        Method::Biased => run_biased(config),
        Method::Cda | Method::Cds | Method::Sweep | Method::Diet => run_single_diet(config),
        Method::Experiment1 => run_experiment1(config),
        Method::Experiment2 => run_experiment2(config),
        Method::Robustness => run_robustness(config),
        Method::Preprocess | Method::Score => Err(Error::InvalidConfig(format!(
            "method '{}' does not produce a run record; use its dedicated entry point",
            config.method.name()
        ))),
    }
}

/// Train the vanilla model on factual data only for every seed. The
/// resulting record is the reference for all deltas.
pub fn run_biased(config: &ExperimentConfig) -> Result<RunRecord> {
    let t0 = Instant::now();
    config.validate()?;
    ensure_writable(&config.output_dir)?;
    let prep = prepare(config)?;
    let reports = biased_reports(&prep, config)?;
    let mut record = RunRecord::new("biased", config, &prep);

    // Checkpoints are part of the external surface; save one per seed.
    let ckpt_dir = config.output_dir.join("biased").join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io_path(&ckpt_dir, e))?;
    let samples = samples_from_pairs(&prep.dataset.train);
    for &seed in &config.seeds {
        let state = train_fresh(&prep, config, &samples, seed)?;
        state.save(ckpt_dir.join(format!("seed_{seed}.ckpt")))?;
    }

    record.cells.push(biased_cell(reports));
    record.wall_clock_secs = t0.elapsed().as_secs_f64();
    Ok(record)
}

/// Run one diet method (cda, cds, sweep, or diet) against the biased
/// reference.
pub fn run_single_diet(config: &ExperimentConfig) -> Result<RunRecord> {
    let t0 = Instant::now();
    config.validate()?;
    ensure_writable(&config.output_dir)?;
    let prep = prepare(config)?;
    let train_pairs = &prep.dataset.train;
    let biased = biased_reports(&prep, config)?;
    let reference = reference_map(&biased);
    let mut record = RunRecord::new(config.method.name(), config, &prep);

    match config.method {
        Method::Cda => {
            let diet = cda(train_pairs);
            let cell = diet_cell(&prep, config, "cda", "cda", &diet, &reference);
            record.push_diet("cda", diet);
            record.cells.push(cell);
        }
        Method::Cds => {
            let p = config.p.unwrap_or(0.5);
            for &seed in &config.seeds {
                let diet = cds(train_pairs, p, seed);
                record.push_diet(&format!("cds_seed_{seed}"), diet);
            }
            // Each seed trains on its own substitution draw.
            let mut cell = Cell::new(format!("cds/p={p:.2}"), "cds");
            cell.p = Some(p);
            cell.diet_size = Some(train_pairs.len());
            cell.budget_ratio = Some(0.5);
            let results: Vec<Result<SeedReport>> = config
                .seeds
                .par_iter()
                .map(|&seed| {
                    let diet = cds(train_pairs, p, seed);
                    let samples = samples_from_diet(&diet);
                    let state = train_fresh(&prep, config, &samples, seed)?;
                    let report = evaluate_state(&prep, &state, reference.get(&seed))
                        .map_err(|e| Error::SeedFailure { seed, source: Box::new(e) })?;
                    Ok(SeedReport { seed, report })
                })
                .collect();
            for result in results {
                match result {
                    Ok(r) => cell.per_seed.push(r),
                    Err(e) => cell.error = Some(e.to_string()),
                }
            }
            record.cells.push(cell.finish());
        }
        Method::Sweep => {
            let kind = config.score_kind.unwrap_or(ScoreKind::Ge);
            let table = scoring::compute_score_table(
                kind,
                train_pairs,
                config.n_early_epochs,
                &config.seeds,
                &prep.model,
            )?;
            let b = config.b.expect("validated");
            let diet = counterfactual_sweep(train_pairs, &table, b)?;
            let label = format!("{kind}/b={b:.2}");
            let mut cell = diet_cell(&prep, config, &label, "sweep", &diet, &reference);
            cell.kind = Some(kind.to_string());
            record.push_diet(&label, diet);
            record.push_table(table);
            record.cells.push(cell);
        }
        Method::Diet => {
            let ranking = config.ranking.expect("validated");
            let (a, b) = (config.a.expect("validated"), config.b.expect("validated"));
            let table = scoring::compute_score_table(
                ScoreKind::Ge,
                train_pairs,
                config.n_early_epochs,
                &config.seeds,
                &prep.model,
            )?;
            let label = format!("{ranking}/a={a:.2}/b={b:.2}");
            let mut cell = Cell::new(&label, "diet");
            cell.ranking = Some(ranking.to_string());
            cell.a = Some(a);
            cell.b = Some(b);
            let results: Vec<Result<(u64, Diet, FairnessReport)>> = config
                .seeds
                .par_iter()
                .map(|&seed| {
                    let plan = PruningPlan { ranking, a, b, seed };
                    let diet = diet::build_diet(train_pairs, &plan, &table)
                        .map_err(|e| Error::SeedFailure { seed, source: Box::new(e) })?;
                    let samples = samples_from_diet(&diet);
                    let state = train_fresh(&prep, config, &samples, seed)?;
                    let report = evaluate_state(&prep, &state, reference.get(&seed))
                        .map_err(|e| Error::SeedFailure { seed, source: Box::new(e) })?;
                    Ok((seed, diet, report))
                })
                .collect();
            for result in results {
                match result {
                    Ok((seed, diet, report)) => {
                        cell.diet_size = Some(diet.len());
                        cell.budget_ratio = Some(diet.budget_ratio(train_pairs.len()));
                        record.push_diet(&format!("{label}/seed_{seed}"), diet);
                        cell.per_seed.push(SeedReport { seed, report });
                    }
                    Err(e) => cell.error = Some(e.to_string()),
                }
            }
            record.push_table(table);
            record.cells.push(cell.finish());
        }
        _ => unreachable!(),
    }

    record.cells.push(biased_cell(biased));
    record.wall_clock_secs = t0.elapsed().as_secs_f64();
    Ok(record)
}

/// Experiment 1: for every score kind and counterfactual ratio b, train on
/// all factual data plus the top b% of counterfactuals and measure DP and
/// AUC against the biased model. Cells fail independently.
pub fn run_experiment1(config: &ExperimentConfig) -> Result<RunRecord> {
    let t0 = Instant::now();
    config.validate()?;
    ensure_writable(&config.output_dir)?;
    let prep = prepare(config)?;
    let train_pairs = &prep.dataset.train;
    let biased = biased_reports(&prep, config)?;
    let reference = reference_map(&biased);
    let mut record = RunRecord::new("experiment1", config, &prep);

    let tables: Vec<ScoreTable> = config
        .score_kinds
        .par_iter()
        .map(|&kind| {
            scoring::compute_score_table(
                kind,
                train_pairs,
                config.n_early_epochs,
                &config.seeds,
                &prep.model,
            )
        })
        .collect::<Result<_>>()?;

    let b_grid = config.experiment1_b_grid();
    let specs: Vec<(usize, f64)> = (0..tables.len())
        .flat_map(|ki| b_grid.iter().map(move |&b| (ki, b)))
        .collect();

    let cells: Vec<Cell> = specs
        .par_iter()
        .map(|&(ki, b)| {
            let table = &tables[ki];
            let label = format!("{}/b={b:.2}", table.kind);
            match counterfactual_sweep(train_pairs, table, b) {
                Ok(diet) => {
                    let mut cell = diet_cell(&prep, config, &label, "sweep", &diet, &reference);
                    cell.kind = Some(table.kind.to_string());
                    cell
                }
                Err(e) => {
                    let mut cell = Cell::new(&label, "sweep");
                    cell.kind = Some(table.kind.to_string());
                    cell.b = Some(b);
                    cell.error = Some(e.to_string());
                    cell
                }
            }
        })
        .collect();

    for (&(ki, b), cell) in specs.iter().zip(&cells) {
        if cell.error.is_none() {
            if let Ok(diet) = counterfactual_sweep(train_pairs, &tables[ki], b) {
                record.push_diet(&cell.label, diet);
            }
        }
    }
    for table in tables {
        record.push_table(table);
    }
    record.cells.push(biased_cell(biased));
    record.cells.extend(cells);
    record.wall_clock_secs = t0.elapsed().as_secs_f64();
    Ok(record)
}

/// Experiment 2: grid-search (a, b) per ranking under the AUC-drop
/// constraint and report the best configuration per ranking, with CDA and
/// CDS rows for comparison.
pub fn run_experiment2(config: &ExperimentConfig) -> Result<RunRecord> {
    let t0 = Instant::now();
    config.validate()?;
    ensure_writable(&config.output_dir)?;
    let prep = prepare(config)?;
    let train_pairs = &prep.dataset.train;
    let biased = biased_reports(&prep, config)?;
    let reference = reference_map(&biased);
    let ref_stats = reference_stats(&biased);
    let mut record = RunRecord::new("experiment2", config, &prep);

    let ge_table = scoring::compute_score_table(
        ScoreKind::Ge,
        train_pairs,
        config.n_early_epochs,
        &config.seeds,
        &prep.model,
    )?;

    let b_grid = config.experiment2_b_grid();
    let evaluate_cell = |diet: &Diet, seed: u64| -> Result<FairnessReport> {
        let samples = samples_from_diet(diet);
        let state = train_fresh(&prep, config, &samples, seed)?;
        evaluate_state(&prep, &state, reference.get(&seed))
            .map_err(|e| Error::SeedFailure { seed, source: Box::new(e) })
    };
    let outcomes = diet::grid_search(
        train_pairs,
        &config.rankings,
        &config.a_grid,
        &b_grid,
        &config.seeds,
        &ge_table,
        config.max_auc_drop_pct,
        ref_stats,
        evaluate_cell,
    )?;

    // CDA and CDS comparison rows.
    let cda_diet = cda(train_pairs);
    let cda_cell = diet_cell(&prep, config, "cda", "cda", &cda_diet, &reference);
    record.push_diet("cda", cda_diet);

    let p = config.p.unwrap_or(0.5);
    let mut cds_cell = Cell::new(format!("cds/p={p:.2}"), "cds");
    cds_cell.p = Some(p);
    cds_cell.diet_size = Some(train_pairs.len());
    cds_cell.budget_ratio = Some(0.5);
    let cds_results: Vec<Result<SeedReport>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let diet = cds(train_pairs, p, seed);
            let samples = samples_from_diet(&diet);
            let state = train_fresh(&prep, config, &samples, seed)?;
            let report = evaluate_state(&prep, &state, reference.get(&seed))
                .map_err(|e| Error::SeedFailure { seed, source: Box::new(e) })?;
            Ok(SeedReport { seed, report })
        })
        .collect();
    for result in cds_results {
        match result {
            Ok(r) => cds_cell.per_seed.push(r),
            Err(e) => cds_cell.error = Some(e.to_string()),
        }
    }
    let cds_cell = cds_cell.finish();
    record.push_diet(&format!("cds_seed_{}", config.seeds[0]), cds(train_pairs, p, config.seeds[0]));

    // Summary rows: one per ranking plus the two baselines.
    for outcome in &outcomes {
        match outcome.best {
            Some(best) => {
                // Rebuild the winning diet (first seed) for the manifest and
                // the per-seed delta aggregate.
                let plan = PruningPlan {
                    ranking: outcome.ranking,
                    a: best.a,
                    b: best.b,
                    seed: config.seeds[0],
                };
                if let Ok(diet) = diet::build_diet(train_pairs, &plan, &ge_table) {
                    record.push_diet(
                        &format!("{}_best_a{:.2}_b{:.2}", outcome.ranking, best.a, best.b),
                        diet,
                    );
                }
                let deltas = outcome
                    .grid
                    .iter()
                    .find(|c| c.a == best.a && c.b == best.b)
                    .and_then(|c| {
                        let seed_reports: Vec<SeedReport> = c
                            .per_seed
                            .iter()
                            .map(|(seed, report)| SeedReport { seed: *seed, report: report.clone() })
                            .collect();
                        aggregate_reports(&seed_reports).and_then(|a| a.deltas)
                    });
                record.best_plans.push(BestPlanRow {
                    ranking: outcome.ranking.to_string(),
                    feasible: true,
                    a: Some(best.a),
                    b: Some(best.b),
                    diet_size: best.diet_size,
                    budget_ratio: best.budget_ratio,
                    mean_dp: best.mean_dp,
                    mean_auc: best.mean_auc,
                    dp_improvement_pct: best.dp_improvement_pct,
                    auc_drop_pct: best.auc_drop_pct,
                    deltas,
                });
            }
            None => record.best_plans.push(BestPlanRow {
                ranking: outcome.ranking.to_string(),
                feasible: false,
                a: None,
                b: None,
                diet_size: 0,
                budget_ratio: 0.0,
                mean_dp: f64::NAN,
                mean_auc: f64::NAN,
                dp_improvement_pct: f64::NAN,
                auc_drop_pct: f64::NAN,
                deltas: None,
            }),
        }
    }
    for (label, cell) in [("cda", &cda_cell), ("cds", &cds_cell)] {
        if let Some(agg) = &cell.aggregate {
            let mean_dp = agg.metrics.dp.mean;
            let mean_auc = agg.metrics.auc.mean;
            let dp_improvement_pct = (mean_dp - ref_stats.mean_dp) / ref_stats.mean_dp * 100.0;
            let auc_drop_pct = (ref_stats.mean_auc - mean_auc) / ref_stats.mean_auc * 100.0;
            record.best_plans.push(BestPlanRow {
                ranking: label.to_string(),
                feasible: auc_drop_pct <= config.max_auc_drop_pct,
                a: None,
                b: None,
                diet_size: cell.diet_size.unwrap_or(0),
                budget_ratio: cell.budget_ratio.unwrap_or(0.0),
                mean_dp,
                mean_auc,
                dp_improvement_pct,
                auc_drop_pct,
                deltas: agg.deltas,
            });
        }
    }

    // Grid cells become record cells.
    record.cells.push(biased_cell(biased));
    record.cells.push(cda_cell);
    record.cells.push(cds_cell);
    for outcome in &outcomes {
        for grid_cell in &outcome.grid {
            let label = format!(
                "{}/a={:.2}/b={:.2}",
                outcome.ranking, grid_cell.a, grid_cell.b
            );
            let mut cell = Cell::new(&label, "diet");
            cell.ranking = Some(outcome.ranking.to_string());
            cell.a = Some(grid_cell.a);
            cell.b = Some(grid_cell.b);
            cell.diet_size = Some(grid_cell.diet_size);
            cell.budget_ratio = Some(grid_cell.budget_ratio);
            cell.feasible = Some(grid_cell.feasible);
            cell.error = grid_cell.error.clone();
            cell.per_seed = grid_cell
                .per_seed
                .iter()
                .map(|(seed, report)| SeedReport { seed: *seed, report: report.clone() })
                .collect();
            record.cells.push(cell.finish());
        }
    }
    record.push_table(ge_table);
    record.wall_clock_secs = t0.elapsed().as_secs_f64();
    Ok(record)
}

/// Robustness study: overlap of top-fraction GE selections across seeds,
/// early-epoch counts, architectures, and other score kinds.
pub fn run_robustness(config: &ExperimentConfig) -> Result<RunRecord> {
    let t0 = Instant::now();
    config.validate()?;
    ensure_writable(&config.output_dir)?;
    let prep = prepare(config)?;
    let train_pairs = &prep.dataset.train;
    let mut record = RunRecord::new("robustness", config, &prep);
    let fractions: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();

    let curve = |axis: &str, comparison: &str, a: &ScoreTable, b: &ScoreTable| -> Result<OverlapCurve> {
        let points = fractions
            .iter()
            .map(|&fraction| {
                scoring::overlap_ratio(a, b, fraction).map(|overlap| OverlapPoint { fraction, overlap })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OverlapCurve {
            axis: axis.to_string(),
            comparison: comparison.to_string(),
            points,
        })
    };

    // Axis 1: seed-average GE versus each single seed.
    let avg_table = scoring::compute_score_table(
        ScoreKind::Ge,
        train_pairs,
        config.n_early_epochs,
        &config.seeds,
        &prep.model,
    )?;
    for &seed in &config.seeds {
        let single = scoring::compute_score_table(
            ScoreKind::Ge,
            train_pairs,
            config.n_early_epochs,
            &[seed],
            &prep.model,
        )?;
        record
            .overlap_curves
            .push(curve("initialization", &format!("average_vs_seed_{seed}"), &avg_table, &single)?);
    }

    // Axis 2: early-epoch count (first value is the baseline).
    if let Some((&base_epochs, rest)) = config.robustness_epochs.split_first() {
        let base = scoring::compute_score_table(
            ScoreKind::Ge,
            train_pairs,
            base_epochs,
            &config.seeds,
            &prep.model,
        )?;
        for &epochs in rest {
            let other = scoring::compute_score_table(
                ScoreKind::Ge,
                train_pairs,
                epochs,
                &config.seeds,
                &prep.model,
            )?;
            record.overlap_curves.push(curve(
                "early_epochs",
                &format!("epochs_{base_epochs}_vs_{epochs}"),
                &base,
                &other,
            )?);
        }
    }

    // Axis 3: model architecture.
    let other_model = scoring::ModelSpec {
        dim: prep.model.dim,
        arch: match prep.model.arch {
            classifier::Arch::Linear => classifier::Arch::Shallow { hidden: 16 },
            classifier::Arch::Shallow { .. } => classifier::Arch::Linear,
        },
        hyper: prep.model.hyper,
    };
    let other_table = scoring::compute_score_table(
        ScoreKind::Ge,
        train_pairs,
        config.n_early_epochs,
        &config.seeds,
        &other_model,
    )?;
    record.overlap_curves.push(curve(
        "architecture",
        &format!("{}_vs_{}", prep.model.family(), other_model.family()),
        &avg_table,
        &other_table,
    )?);

    // Axis 4: GE versus every other score kind.
    for kind in ScoreKind::ALL.into_iter().filter(|&k| k != ScoreKind::Ge) {
        let other = scoring::compute_score_table(
            kind,
            train_pairs,
            config.n_early_epochs,
            &config.seeds,
            &prep.model,
        )?;
        record
            .overlap_curves
            .push(curve("score_kind", &format!("GE_vs_{kind}"), &avg_table, &other)?);
    }

    record.push_table(avg_table);
    record.wall_clock_secs = t0.elapsed().as_secs_f64();
    Ok(record)
}

/// Preprocess only: materialize the snapshot file and return the per-split
/// statistics.
pub fn run_preprocess(config: &ExperimentConfig) -> Result<(PathBuf, Vec<(String, DatasetStats)>)> {
    config.validate()?;
    ensure_writable(&config.output_dir)?;
    let prep = prepare(config)?;
    let path = config.output_dir.join("dataset.jsonl");
    corpus::save_snapshot(&prep.dataset, &path)?;
    let stats = vec![
        ("train".to_string(), corpus::stats(&prep.dataset.train)),
        ("valid".to_string(), corpus::stats(&prep.dataset.valid)),
        ("test".to_string(), corpus::stats(&prep.dataset.test)),
    ];
    Ok((path, stats))
}

/// Score only: compute one score table over the training split and write
/// it under scores/.
pub fn run_score(config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    ensure_writable(&config.output_dir)?;
    let prep = prepare(config)?;
    let kind = config.score_kind.unwrap_or(ScoreKind::Ge);
    let table = scoring::compute_score_table(
        kind,
        &prep.dataset.train,
        config.n_early_epochs,
        &config.seeds,
        &prep.model,
    )?;
    let dir = config.output_dir.join("scores");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io_path(&dir, e))?;
    let path = dir.join(format!("{kind}.tsv"));
    scoring::save_table(&table, &path)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

fn write_deterministic(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io_path(path, e))
}

fn tsv_opt(value: Option<f64>) -> String {
    value.map_or_else(|| "-".to_string(), |v| format!("{v}"))
}

/// Write the record to `dir`: config snapshot, metrics, plot-data tables,
/// score tables, diet manifests, and the wall clock (kept in its own file
/// so every metric file is byte-identical across reruns). Overwrites are
/// idempotent.
pub fn emit_report(record: &RunRecord, dir: &Path) -> Result<()> {
    ensure_writable(dir)?;
    for sub in ["plot_data", "scores", "diets"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io_path(&p, e))?;
    }

    let config_toml =
        toml::to_string_pretty(&record.config).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    write_deterministic(&dir.join("config.toml"), &config_toml)?;

    let metrics = serde_json::to_string_pretty(record)?;
    write_deterministic(&dir.join("metrics.json"), &metrics)?;

    // Generic per-cell aggregate table.
    let mut cells = String::new();
    cells.push_str("label\tmethod\tkind\tranking\ta\tb\tp\tdiet_size\tbudget_ratio\tfeasible");
    for metric in ["dp", "eq_opp1", "eq_opp0", "eq_odd", "auc"] {
        cells.push_str(&format!("\t{metric}_mean\t{metric}_std\tdelta_{metric}_mean\tdelta_{metric}_std"));
    }
    cells.push_str("\terror\n");
    for cell in &record.cells {
        cells.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            cell.label,
            cell.method,
            cell.kind.as_deref().unwrap_or("-"),
            cell.ranking.as_deref().unwrap_or("-"),
            tsv_opt(cell.a),
            tsv_opt(cell.b),
            tsv_opt(cell.p),
            cell.diet_size.map_or_else(|| "-".to_string(), |v| v.to_string()),
            tsv_opt(cell.budget_ratio),
            cell.feasible.map_or_else(|| "-".to_string(), |v| v.to_string()),
        ));
        let agg = cell.aggregate.as_ref();
        for pick in [
            |m: &MetricAggregate| m.dp,
            |m: &MetricAggregate| m.eq_opp1,
            |m: &MetricAggregate| m.eq_opp0,
            |m: &MetricAggregate| m.eq_odd,
            |m: &MetricAggregate| m.auc,
        ] {
            let value = agg.map(|a| pick(&a.metrics));
            let delta = agg.and_then(|a| a.deltas.map(|d| pick(&d)));
            cells.push_str(&format!(
                "\t{}\t{}\t{}\t{}",
                tsv_opt(value.map(|m| m.mean)),
                tsv_opt(value.map(|m| m.std)),
                tsv_opt(delta.map(|m| m.mean)),
                tsv_opt(delta.map(|m| m.std)),
            ));
        }
        cells.push_str(&format!("\t{}\n", cell.error.as_deref().unwrap_or("-")));
    }
    write_deterministic(&dir.join("plot_data").join("cells.tsv"), &cells)?;

    // Ratio -> metric curves, one file per score kind (experiment 1).
    if record.command == "experiment1" {
        let mut kinds: Vec<String> = record
            .cells
            .iter()
            .filter_map(|c| c.kind.clone())
            .collect();
        kinds.sort();
        kinds.dedup();
        for kind in kinds {
            let mut rows: Vec<&Cell> = record
                .cells
                .iter()
                .filter(|c| c.kind.as_deref() == Some(&kind) && c.error.is_none())
                .collect();
            rows.sort_by(|x, y| x.b.partial_cmp(&y.b).unwrap_or(std::cmp::Ordering::Equal));
            let mut out = String::from(
                "ratio\tdp_mean\tdp_std\teq_opp1_mean\teq_opp1_std\teq_opp0_mean\teq_opp0_std\teq_odd_mean\teq_odd_std\tauc_mean\tauc_std\n",
            );
            for cell in rows {
                if let (Some(b), Some(agg)) = (cell.b, cell.aggregate.as_ref()) {
                    let m = &agg.metrics;
                    out.push_str(&format!(
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                        b,
                        m.dp.mean, m.dp.std,
                        m.eq_opp1.mean, m.eq_opp1.std,
                        m.eq_opp0.mean, m.eq_opp0.std,
                        m.eq_odd.mean, m.eq_odd.std,
                        m.auc.mean, m.auc.std,
                    ));
                }
            }
            write_deterministic(
                &dir.join("plot_data").join(format!("curve_{}.tsv", sanitize(&kind))),
                &out,
            )?;
        }
    }

    // Best-plan summary (experiment 2).
    if !record.best_plans.is_empty() {
        let mut out = String::from(
            "ranking\tfeasible\ta\tb\tdiet_size\tbudget_ratio\tmean_dp\tmean_auc\tdp_improvement_pct\tauc_drop_pct\tdelta_dp_mean\tdelta_dp_std\tdelta_eq_opp1_mean\tdelta_eq_opp1_std\tdelta_eq_odd_mean\tdelta_eq_odd_std\tdelta_auc_mean\tdelta_auc_std\n",
        );
        for row in &record.best_plans {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                row.ranking,
                row.feasible,
                tsv_opt(row.a),
                tsv_opt(row.b),
                row.diet_size,
                row.budget_ratio,
                row.mean_dp,
                row.mean_auc,
                row.dp_improvement_pct,
                row.auc_drop_pct,
                tsv_opt(row.deltas.map(|d| d.dp.mean)),
                tsv_opt(row.deltas.map(|d| d.dp.std)),
                tsv_opt(row.deltas.map(|d| d.eq_opp1.mean)),
                tsv_opt(row.deltas.map(|d| d.eq_opp1.std)),
                tsv_opt(row.deltas.map(|d| d.eq_odd.mean)),
                tsv_opt(row.deltas.map(|d| d.eq_odd.std)),
                tsv_opt(row.deltas.map(|d| d.auc.mean)),
                tsv_opt(row.deltas.map(|d| d.auc.std)),
            ));
        }
        write_deterministic(&dir.join("plot_data").join("best_by_ranking.tsv"), &out)?;
    }

    // Overlap curves (robustness).
    if !record.overlap_curves.is_empty() {
        let mut axes: Vec<String> = record.overlap_curves.iter().map(|c| c.axis.clone()).collect();
        axes.sort();
        axes.dedup();
        for axis in axes {
            let mut out = String::from("comparison\tfraction\toverlap\n");
            for curve in record.overlap_curves.iter().filter(|c| c.axis == axis) {
                for point in &curve.points {
                    out.push_str(&format!(
                        "{}\t{}\t{}\n",
                        curve.comparison, point.fraction, point.overlap
                    ));
                }
            }
            write_deterministic(
                &dir.join("plot_data").join(format!("overlap_{}.tsv", sanitize(&axis))),
                &out,
            )?;
        }
    }

    for table in &record.artifacts.score_tables {
        scoring::save_table(table, dir.join("scores").join(format!("{}.tsv", table.kind)))?;
    }
    for (label, diet_data) in &record.artifacts.diets {
        diet::save_manifest(diet_data, dir.join("diets").join(format!("{}.tsv", sanitize(label))))?;
    }

    let mut timing = std::fs::File::create(dir.join("timing.txt"))
        .map_err(|e| Error::io_path(dir.join("timing.txt"), e))?;
    writeln!(timing, "wall_clock_secs={}", record.wall_clock_secs)
        .map_err(|e| Error::io_path(dir.join("timing.txt"), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_is_population_form() {
        let m = mean_std(&[2.0]);
        assert_eq!((m.mean, m.std), (2.0, 0.0));
        let m = mean_std(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }

    #[test]
    fn failed_cells_mark_the_record() {
        let dataset = DatasetConfig {
            path: Some(PathBuf::from("unused.csv")),
            ..DatasetConfig::default()
        };
        let config = ExperimentConfig::new(Method::Biased, dataset, PathBuf::from("out"));
        let stats = DatasetStats {
            size: 0,
            male_pronoun_count: 0,
            female_pronoun_count: 0,
            positive_rate: 0.0,
        };
        let mut record = RunRecord {
            command: "biased".into(),
            config,
            train_stats: stats,
            dataset_sizes: [0, 0, 0],
            cells: vec![Cell::new("ok", "biased")],
            best_plans: vec![],
            overlap_curves: vec![],
            score_table_files: vec![],
            diet_manifest_files: vec![],
            artifacts: Artifacts::default(),
            wall_clock_secs: 0.0,
        };
        assert!(!record.has_cell_failures());
        let mut failed = Cell::new("broken", "sweep");
        failed.error = Some("seed 3: training diverged".into());
        record.cells.push(failed);
        assert!(record.has_cell_failures());
    }

    #[test]
    fn labels_sanitize_to_safe_file_names() {
        assert_eq!(sanitize("GE/b=0.20"), "GE_b_0.20");
        assert_eq!(sanitize("healthy_random/a=0.30/b=0.10"), "healthy_random_a_0.30_b_0.10");
    }
}
