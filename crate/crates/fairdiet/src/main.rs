//! Command-line interface for the fairness data-diet pipeline.

use clap::{Args, Parser, Subcommand};
use fairdiet::classifier::Arch;
use fairdiet::corpus::BinarizeMode;
use fairdiet::diet::RankingKind;
use fairdiet::error::Error;
use fairdiet::orchestrator::{self, DatasetConfig, ExperimentConfig, Method};
use fairdiet::scoring::ScoreKind;
use fairdiet::synth::{self, SynthConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "fairdiet",
    version,
    about = "Mitigate gender bias in text classifiers by pruning counterfactual training data",
    after_help = "Exit codes: 0 success, 1 configuration error, 2 partial cell failure."
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
struct CommonArgs {
    /// Declarative TOML config; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Raw delimited dataset with a header row.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Preprocessed dataset snapshot (alternative to --dataset).
    #[arg(long, global = true)]
    snapshot: Option<PathBuf>,
    #[arg(long, global = true)]
    text_column: Option<String>,
    #[arg(long, global = true)]
    label_column: Option<String>,
    #[arg(long, global = true)]
    delimiter: Option<char>,
    /// Label binarization: "threshold" (numeric score > t) or "class_merge".
    #[arg(long, global = true)]
    binarize_mode: Option<String>,
    #[arg(long, global = true)]
    binarize_threshold: Option<f64>,
    /// Positive class name under class_merge binarization.
    #[arg(long, global = true)]
    positive_class: Option<String>,
    /// Down-sample to this many records before splitting.
    #[arg(long, global = true)]
    subsample: Option<usize>,
    #[arg(long, global = true)]
    split_seed: Option<u64>,
    /// Train/valid/test ratios, e.g. 0.8,0.1,0.1.
    #[arg(long, global = true, value_delimiter = ',')]
    split_ratios: Option<Vec<f64>>,
    /// Gender lexicon file; the built-in lexicon is used when absent.
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    /// Template spec file for the fairness eval set.
    #[arg(long, global = true)]
    template_spec: Option<PathBuf>,
    /// Comma-separated seed list, e.g. 1,2,3,4,5.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Built-in classifier family: "linear" or "shallow".
    #[arg(long, global = true)]
    model: Option<String>,
    /// Hidden width of the shallow model.
    #[arg(long, global = true)]
    hidden_units: Option<usize>,
    #[arg(long, global = true)]
    feature_dim: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    /// Early-training epochs at which importance scores are computed.
    #[arg(long = "num_epochs_importance_score", global = true)]
    num_epochs_importance_score: Option<usize>,
    #[arg(long = "num_epochs_biased_model", global = true)]
    num_epochs_biased_model: Option<usize>,
    #[arg(long = "num_epochs_debiased_model", global = true)]
    num_epochs_debiased_model: Option<usize>,
    #[arg(long = "batch_size_biased_model", global = true)]
    batch_size_biased_model: Option<usize>,
    #[arg(long = "batch_size_debiased_model", global = true)]
    batch_size_debiased_model: Option<usize>,
    /// Maximum tolerated AUC degradation versus the biased model, percent.
    #[arg(long, global = true)]
    max_auc_drop: Option<f64>,
}

#[derive(Subcommand)]
#[command(rename_all = "snake_case")]
enum Command {
    /// Generate a synthetic planted-bias corpus CSV.
    Synth {
        #[arg(long, default_value = "planted_bias.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0.95)]
        bias_strength: f64,
        #[arg(long, default_value_t = 0.35)]
        gendered_fraction: f64,
        #[arg(long, default_value_t = 0.25)]
        mild_fraction: f64,
        #[arg(long, default_value_t = 0.5)]
        positive_rate: f64,
        #[arg(long, default_value_t = 0.02)]
        label_noise: f64,
        #[arg(long, default_value_t = 7)]
        synth_seed: u64,
    },
    /// Ingest, binarize, subsample, attach counterfactuals, split, and
    /// write the dataset snapshot.
    Preprocess,
    /// Compute one importance-score table over the training split.
    Score {
        #[arg(long = "CDA_examples_ranking", alias = "score_kind")]
        ranking: Option<String>,
    },
    /// Train and evaluate the vanilla (biased) reference model.
    Biased,
    /// Counterfactual data augmentation baseline (all factual + all
    /// counterfactual examples).
    Cda,
    /// Counterfactual data substitution baseline.
    Cds {
        #[arg(long = "data_substitution_ratio")]
        data_substitution_ratio: Option<f64>,
    },
    /// Experiment 1: counterfactual-ratio sweep across ranking scores.
    Experiment1 {
        #[arg(long = "CDA_examples_ranking", value_delimiter = ',')]
        rankings: Option<Vec<String>>,
        #[arg(long = "data_augmentation_ratio", value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
    /// Experiment 2: (a, b) grid search per ranking under the AUC
    /// constraint, with CDA/CDS comparison rows.
    Experiment2 {
        #[arg(long = "data_diet_examples_ranking", value_delimiter = ',')]
        rankings: Option<Vec<String>>,
        #[arg(long = "data_diet_factual_ratio", value_delimiter = ',')]
        factual_ratios: Option<Vec<f64>>,
        #[arg(long = "data_diet_counterfactual_ratio", value_delimiter = ',')]
        counterfactual_ratios: Option<Vec<f64>>,
    },
    /// Overlap robustness study across seeds, early epochs, architectures,
    /// and score kinds.
    Robustness {
        #[arg(long = "robustness_epochs", value_delimiter = ',')]
        robustness_epochs: Option<Vec<usize>>,
    },
    /// Run whatever method the --config file specifies (covers the sweep
    /// and single-diet methods).
    Run,
}

impl Command {
    fn method(&self) -> Option<Method> {
        match self {
            Command::Synth { .. } => None,
            Command::Preprocess => Some(Method::Preprocess),
            Command::Score { .. } => Some(Method::Score),
            Command::Biased => Some(Method::Biased),
            Command::Cda => Some(Method::Cda),
            Command::Cds { .. } => Some(Method::Cds),
            Command::Experiment1 { .. } => Some(Method::Experiment1),
            Command::Experiment2 { .. } => Some(Method::Experiment2),
            Command::Robustness { .. } => Some(Method::Robustness),
            Command::Run => None,
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut config = match &cli.common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(
            Method::Biased,
            DatasetConfig::default(),
            PathBuf::from("fairdiet_out"),
        ),
    };
    if let Some(method) = cli.command.method() {
        config.method = method;
    } else if matches!(cli.command, Command::Run) && cli.common.config.is_none() {
        return Err(Error::InvalidConfig(
            "the run subcommand requires --config".to_string(),
        ));
    }

    let common = &cli.common;
    if let Some(v) = &common.dataset {
        config.dataset.path = Some(v.clone());
        config.dataset.snapshot = None;
    }
    if let Some(v) = &common.snapshot {
        config.dataset.snapshot = Some(v.clone());
        config.dataset.path = None;
    }
    if let Some(v) = &common.text_column {
        config.dataset.text_column = v.clone();
    }
    if let Some(v) = &common.label_column {
        config.dataset.label_column = v.clone();
    }
    if let Some(v) = common.delimiter {
        config.dataset.delimiter = v;
    }
    match common.binarize_mode.as_deref() {
        Some("threshold") => {
            config.dataset.binarize = BinarizeMode::Threshold {
                threshold: common.binarize_threshold.unwrap_or(0.5),
            };
        }
        Some("class_merge") => {
            let positive_class = common.positive_class.clone().ok_or_else(|| {
                Error::InvalidConfig("class_merge binarization requires --positive_class".into())
            })?;
            config.dataset.binarize = BinarizeMode::ClassMerge { positive_class };
        }
        Some(other) => {
            return Err(Error::InvalidConfig(format!(
                "unknown binarize mode '{other}' (expected threshold or class_merge)"
            )))
        }
        None => {
            if let Some(t) = common.binarize_threshold {
                config.dataset.binarize = BinarizeMode::Threshold { threshold: t };
            } else if let Some(c) = &common.positive_class {
                config.dataset.binarize = BinarizeMode::ClassMerge {
                    positive_class: c.clone(),
                };
            }
        }
    }
    if let Some(v) = common.subsample {
        config.dataset.subsample = Some(v);
    }
    if let Some(v) = common.split_seed {
        config.dataset.split_seed = v;
    }
    if let Some(ratios) = &common.split_ratios {
        if ratios.len() != 3 {
            return Err(Error::InvalidConfig(format!(
                "--split_ratios needs exactly three values, got {}",
                ratios.len()
            )));
        }
        config.dataset.split_ratios = [ratios[0], ratios[1], ratios[2]];
    }
    if let Some(v) = &common.lexicon {
        config.dataset.lexicon = Some(v.clone());
    }
    if let Some(v) = &common.template_spec {
        config.template_spec = Some(v.clone());
    }
    if let Some(v) = &common.seeds {
        config.seeds = v.clone();
    }
    if let Some(v) = &common.output_dir {
        config.output_dir = v.clone();
    }
    match common.model.as_deref() {
        Some("linear") => config.model = Arch::Linear,
        Some("shallow") => {
            config.model = Arch::Shallow {
                hidden: common.hidden_units.unwrap_or(16),
            };
        }
        Some(other) => {
            return Err(Error::InvalidConfig(format!(
                "unknown model '{other}' (expected linear or shallow)"
            )))
        }
        None => {
            if let (Arch::Shallow { .. }, Some(h)) = (config.model, common.hidden_units) {
                config.model = Arch::Shallow { hidden: h };
            }
        }
    }
    if let Some(v) = common.feature_dim {
        config.feature_dim = v;
    }
    if let Some(v) = common.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = common.num_epochs_importance_score {
        config.n_early_epochs = v;
    }
    match (
        common.num_epochs_biased_model,
        common.num_epochs_debiased_model,
    ) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::InvalidConfig(format!(
                "biased and debiased epoch counts must match in this pipeline ({a} vs {b})"
            )))
        }
        (Some(v), _) | (None, Some(v)) => config.epochs = v,
        (None, None) => {}
    }
    match (
        common.batch_size_biased_model,
        common.batch_size_debiased_model,
    ) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::InvalidConfig(format!(
                "biased and debiased batch sizes must match in this pipeline ({a} vs {b})"
            )))
        }
        (Some(v), _) | (None, Some(v)) => config.batch_size = v,
        (None, None) => {}
    }
    if let Some(v) = common.max_auc_drop {
        config.max_auc_drop_pct = v;
    }

    match &cli.command {
        Command::Score { ranking: Some(name) } => {
            config.score_kind = Some(name.parse::<ScoreKind>()?);
        }
        Command::Cds {
            data_substitution_ratio: Some(p),
        } => {
            config.p = Some(*p);
        }
        Command::Experiment1 { rankings, ratios } => {
            if let Some(names) = rankings {
                config.score_kinds = names
                    .iter()
                    .map(|n| n.parse::<ScoreKind>())
                    .collect::<Result<_, _>>()?;
            }
            if let Some(b) = ratios {
                config.b_grid = Some(b.clone());
            }
        }
        Command::Experiment2 {
            rankings,
            factual_ratios,
            counterfactual_ratios,
        } => {
            if let Some(names) = rankings {
                config.rankings = names
                    .iter()
                    .map(|n| n.parse::<RankingKind>())
                    .collect::<Result<_, _>>()?;
            }
            if let Some(a) = factual_ratios {
                config.a_grid = a.clone();
            }
            if let Some(b) = counterfactual_ratios {
                config.b_grid = Some(b.clone());
            }
        }
        Command::Robustness {
            robustness_epochs: Some(e),
        } => {
            config.robustness_epochs = e.clone();
        }
        _ => {}
    }
    Ok(config)
}

fn print_cell_summaries(record: &orchestrator::RunRecord) {
    for cell in &record.cells {
        if let Some(agg) = &cell.aggregate {
            let m = &agg.metrics;
            print!(
                "{:<40} DP {:.4} +/- {:.4}  EqOdd {:.4} +/- {:.4}  AUC {:.4} +/- {:.4}",
                cell.label, m.dp.mean, m.dp.std, m.eq_odd.mean, m.eq_odd.std, m.auc.mean, m.auc.std
            );
            if let Some(d) = &agg.deltas {
                print!("  [dDP {:+.2}%  dAUC {:+.2}%]", d.dp.mean, d.auc.mean);
            }
            println!();
        }
        if let Some(err) = &cell.error {
            println!("{:<40} FAILED: {err}", cell.label);
        }
    }
    for row in &record.best_plans {
        if row.feasible {
            println!(
                "best[{}]: a={} b={} budget={:.2} dDP {:+.2}% dAUC {:-.2}%",
                row.ranking,
                row.a.map_or("-".into(), |v| format!("{v:.1}")),
                row.b.map_or("-".into(), |v| format!("{v:.1}")),
                row.budget_ratio,
                row.dp_improvement_pct,
                -row.auc_drop_pct,
            );
        } else {
            println!("best[{}]: no feasible configuration under the AUC constraint", row.ranking);
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, Error> {
    if let Command::Synth {
        out,
        n,
        bias_strength,
        gendered_fraction,
        mild_fraction,
        positive_rate,
        label_noise,
        synth_seed,
    } = &cli.command
    {
        let config = SynthConfig {
            n: *n,
            bias_strength: *bias_strength,
            gendered_fraction: *gendered_fraction,
            mild_fraction: *mild_fraction,
            positive_rate: *positive_rate,
            label_noise: *label_noise,
            seed: *synth_seed,
        };
        let records = synth::generate(&config);
        synth::write_csv(&records, out)?;
        println!("wrote {} examples to {}", records.len(), out.display());
        return Ok(0);
    }

    let config = resolve_config(cli)?;
    match config.method {
        Method::Preprocess => {
            let (path, stats) = orchestrator::run_preprocess(&config)?;
            println!("snapshot: {}", path.display());
            println!("{:<8} {:>8} {:>14} {:>16} {:>10}", "split", "size", "male_pronouns", "female_pronouns", "positives");
            for (name, s) in stats {
                println!(
                    "{:<8} {:>8} {:>14} {:>16} {:>9.2}%",
                    name,
                    s.size,
                    s.male_pronoun_count,
                    s.female_pronoun_count,
                    100.0 * s.positive_rate
                );
            }
            Ok(0)
        }
        Method::Score => {
            let path = orchestrator::run_score(&config)?;
            println!("score table: {}", path.display());
            Ok(0)
        }
        _ => {
            let record = orchestrator::run(&config)?;
            let dir = config.output_dir.join(&record.command);
            orchestrator::emit_report(&record, &dir)?;
            print_cell_summaries(&record);
            println!("report: {}", dir.display());
            Ok(if record.has_cell_failures() { 2 } else { 0 })
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    std::process::exit(code);
}
