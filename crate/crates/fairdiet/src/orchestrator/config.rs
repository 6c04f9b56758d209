//! Experiment configuration: dataset settings, method selection, training
//! hyper-parameters, and grids. Loadable from a TOML file; validation
//! collects every violation instead of stopping at the first.

use crate::classifier::{Arch, Hyper};
use crate::corpus::{self, BinarizeMode, SplitDataset};
use crate::diet::RankingKind;
use crate::error::Error;
use crate::faireval::{self, EvalPair, TemplateSpec};
use crate::lexicon::GenderLexicon;
use crate::scoring::{ModelSpec, ScoreKind};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// What a run does. The single-diet methods (biased, cda, cds, sweep, diet)
/// train one configuration; the experiment methods iterate over grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Preprocess,
    Score,
    Biased,
    Cda,
    Cds,
    Sweep,
    Diet,
    Experiment1,
    Experiment2,
    Robustness,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Preprocess => "preprocess",
            Method::Score => "score",
            Method::Biased => "biased",
            Method::Cda => "cda",
            Method::Cds => "cds",
            Method::Sweep => "sweep",
            Method::Diet => "diet",
            Method::Experiment1 => "experiment1",
            Method::Experiment2 => "experiment2",
            Method::Robustness => "robustness",
        }
    }
}

/// Where the data comes from and how it is prepared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Raw delimited text file with a header row.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Previously written dataset snapshot; mutually exclusive with `path`.
    #[serde(default)]
    pub snapshot: Option<PathBuf>,
    #[serde(default = "default_text_column")]
    pub text_column: String,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_binarize")]
    pub binarize: BinarizeMode,
    #[serde(default)]
    pub subsample: Option<usize>,
    #[serde(default = "default_split_ratios")]
    pub split_ratios: [f64; 3],
    #[serde(default)]
    pub split_seed: u64,
    /// Lexicon file; the built-in lexicon is used when absent.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
}

fn default_text_column() -> String {
    "text".to_string()
}

fn default_label_column() -> String {
    "label".to_string()
}

fn default_delimiter() -> char {
    ','
}

fn default_binarize() -> BinarizeMode {
    BinarizeMode::Threshold { threshold: 0.5 }
}

fn default_split_ratios() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: None,
            snapshot: None,
            text_column: default_text_column(),
            label_column: default_label_column(),
            delimiter: default_delimiter(),
            binarize: default_binarize(),
            subsample: None,
            split_ratios: default_split_ratios(),
            split_seed: 0,
            lexicon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub dataset: DatasetConfig,
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_n_early_epochs")]
    pub n_early_epochs: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_max_auc_drop_pct")]
    pub max_auc_drop_pct: f64,
    #[serde(default = "default_arch")]
    pub model: Arch,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Score kind for `score` and the sweep method.
    #[serde(default)]
    pub score_kind: Option<ScoreKind>,
    /// Ranking for the single-diet method.
    #[serde(default)]
    pub ranking: Option<RankingKind>,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub b: Option<f64>,
    /// CDS substitution probability.
    #[serde(default)]
    pub p: Option<f64>,
    /// Experiment 1 ranking kinds.
    #[serde(default = "default_score_kinds")]
    pub score_kinds: Vec<ScoreKind>,
    /// Experiment 2 rankings.
    #[serde(default = "default_rankings")]
    pub rankings: Vec<RankingKind>,
    /// Experiment 2 factual fractions.
    #[serde(default = "default_a_grid")]
    pub a_grid: Vec<f64>,
    /// Counterfactual fractions: experiment 1 sweeps `b_grid`, experiment 2
    /// uses it as the b axis of the grid.
    #[serde(default)]
    pub b_grid: Option<Vec<f64>>,
    /// Early-epoch axis for the robustness study.
    #[serde(default = "default_robustness_epochs")]
    pub robustness_epochs: Vec<usize>,
    #[serde(default)]
    pub template_spec: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_n_early_epochs() -> usize {
    1
}

fn default_epochs() -> usize {
    15
}

fn default_batch_size() -> usize {
    32
}

fn default_learning_rate() -> f64 {
    0.5
}

fn default_max_auc_drop_pct() -> f64 {
    3.0
}

fn default_arch() -> Arch {
    Arch::Linear
}

fn default_feature_dim() -> usize {
    1 << 18
}

fn default_score_kinds() -> Vec<ScoreKind> {
    ScoreKind::ALL.to_vec()
}

fn default_rankings() -> Vec<RankingKind> {
    RankingKind::ALL.to_vec()
}

fn default_a_grid() -> Vec<f64> {
    vec![0.3, 0.4, 0.5]
}

fn default_robustness_epochs() -> Vec<usize> {
    vec![1, 2, 3, 4, 5]
}

pub fn default_experiment1_b_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn default_experiment2_b_grid() -> Vec<f64> {
    (0..=5).map(|i| i as f64 / 10.0).collect()
}

impl ExperimentConfig {
    pub fn new(method: Method, dataset: DatasetConfig, output_dir: PathBuf) -> Self {
        ExperimentConfig {
            method,
            dataset,
            output_dir,
            seeds: default_seeds(),
            n_early_epochs: default_n_early_epochs(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            max_auc_drop_pct: default_max_auc_drop_pct(),
            model: default_arch(),
            feature_dim: default_feature_dim(),
            score_kind: None,
            ranking: None,
            a: None,
            b: None,
            p: None,
            score_kinds: default_score_kinds(),
            rankings: default_rankings(),
            a_grid: default_a_grid(),
            b_grid: None,
            robustness_epochs: default_robustness_epochs(),
            template_spec: None,
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let content =
            std::fs::read_to_string(&path).map_err(|e| Error::io_path(path.as_ref(), e))?;
        toml::from_str(&content).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            dim: self.feature_dim,
            arch: self.model,
            hyper: Hyper {
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                epochs: self.epochs,
            },
        }
    }

    pub fn experiment1_b_grid(&self) -> Vec<f64> {
        self.b_grid.clone().unwrap_or_else(default_experiment1_b_grid)
    }

    pub fn experiment2_b_grid(&self) -> Vec<f64> {
        self.b_grid.clone().unwrap_or_else(default_experiment2_b_grid)
    }

    /// Check every constraint and report all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut violations: Vec<String> = Vec::new();
        match (&self.dataset.path, &self.dataset.snapshot) {
            (None, None) => violations.push("one of dataset.path or dataset.snapshot is required".into()),
            (Some(_), Some(_)) => {
                violations.push("dataset.path and dataset.snapshot are mutually exclusive".into())
            }
            _ => {}
        }
        if self.dataset.text_column.is_empty() || self.dataset.label_column.is_empty() {
            violations.push("text and label column names must be non-empty".into());
        }
        let ratio_sum: f64 = self.dataset.split_ratios.iter().sum();
        if self.dataset.split_ratios.iter().any(|&r| r <= 0.0) || (ratio_sum - 1.0).abs() > 1e-9 {
            violations.push(format!(
                "split ratios must be positive and sum to 1, got {:?}",
                self.dataset.split_ratios
            ));
        }
        if self.seeds.is_empty() {
            violations.push("seed list must be non-empty".into());
        }
        if self.n_early_epochs == 0 {
            violations.push("n_early_epochs must be at least 1".into());
        }
        if self.epochs == 0 {
            violations.push("training epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            violations.push("batch size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            violations.push(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.feature_dim == 0 {
            violations.push("feature dimension must be positive".into());
        }
        if let Some(p) = self.p {
            if !(0.0..=1.0).contains(&p) {
                violations.push(format!("substitution probability must be in [0, 1], got {p}"));
            }
        }
        if let Some(a) = self.a {
            if !(a > 0.0 && a <= 1.0) {
                violations.push(format!("factual fraction a must be in (0, 1], got {a}"));
            }
        }
        if let Some(b) = self.b {
            if !(0.0..=1.0).contains(&b) {
                violations.push(format!("counterfactual fraction b must be in [0, 1], got {b}"));
            }
        }
        match self.method {
            Method::Diet => {
                if self.ranking.is_none() {
                    violations.push("method 'diet' requires a ranking".into());
                }
                if self.a.is_none() || self.b.is_none() {
                    violations.push("method 'diet' requires both a and b fractions".into());
                }
            }
            Method::Sweep => {
                if self.b.is_none() {
                    violations.push("method 'sweep' requires the counterfactual fraction b".into());
                }
            }
            Method::Experiment1 => {
                if self.score_kinds.is_empty() {
                    violations.push("experiment1 requires at least one score kind".into());
                }
            }
            Method::Experiment2 => {
                if self.rankings.is_empty() {
                    violations.push("experiment2 requires at least one ranking".into());
                }
                if self.a_grid.is_empty() {
                    violations.push("experiment2 requires a non-empty a grid".into());
                }
                for &a in &self.a_grid {
                    if !(a > 0.0 && a <= 1.0) {
                        violations.push(format!("a grid value {a} out of (0, 1]"));
                    }
                }
            }
            _ => {}
        }
        if let Some(grid) = &self.b_grid {
            for &b in grid {
                if !(0.0..=1.0).contains(&b) {
                    violations.push(format!("b grid value {b} out of [0, 1]"));
                }
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(violations.join("; ")))
        }
    }
}

/// Everything a run needs after loading: the split dataset, the lexicon,
/// the evaluation pairs, and the model spec.
pub struct Prepared {
    pub dataset: SplitDataset,
    pub lexicon: GenderLexicon,
    pub eval_pairs: Vec<EvalPair>,
    pub model: ModelSpec,
}

/// Load the lexicon, materialize the dataset (raw file or snapshot), and
/// build the template evaluation set.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let lexicon = match &config.dataset.lexicon {
        Some(path) => GenderLexicon::load(path)?,
        None => GenderLexicon::default_builtin().clone(),
    };
    let dataset = match (&config.dataset.snapshot, &config.dataset.path) {
        (Some(snapshot), _) => corpus::load_snapshot(snapshot)?,
        (None, Some(path)) => {
            let raw = corpus::ingest(
                path,
                &config.dataset.text_column,
                &config.dataset.label_column,
                config.dataset.delimiter as u8,
            )?;
            let mut labeled = corpus::binarize(&raw, &config.dataset.binarize)?;
            if let Some(n) = config.dataset.subsample {
                labeled = corpus::subsample(labeled, n, config.dataset.split_seed);
            }
            let pairs = corpus::attach_counterfactuals(&labeled, &lexicon);
            corpus::split(pairs, config.dataset.split_ratios, config.dataset.split_seed)?
        }
        (None, None) => unreachable!("validated above"),
    };
    let template_spec: TemplateSpec = match &config.template_spec {
        Some(path) => TemplateSpec::load(path)?,
        None => faireval::default_template_spec().clone(),
    };
    let eval_pairs = faireval::generate_eval_set(&template_spec)?;
    Ok(Prepared {
        dataset,
        lexicon,
        eval_pairs,
        model: config.model_spec(),
    })
}
