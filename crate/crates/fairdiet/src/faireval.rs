//! Template-based fairness evaluation and metrics.
//!
//! Builds an identity-phrase evaluation set (each sentence instantiated
//! with a male and a female identity term), then measures demographic
//! parity, equality of opportunity for y=1 and y=0, equality of odds, and
//! AUC on a held-out test set. The decision threshold for rate-based
//! metrics is fixed at 0.5 on the class-1 probability.

use crate::classifier::ClassifierState;
use crate::corpus::ExamplePair;
use crate::error::Error;
use crate::Result;
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

const IDENTITY_SLOT: &str = "{identity}";

/// A labeled sentence pattern with exactly one `{identity}` slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplatePattern {
    pub label: u8,
    pub pattern: String,
}

/// Patterns plus (male term, female term) identity pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub patterns: Vec<TemplatePattern>,
    pub identity_pairs: Vec<(String, String)>,
}

impl TemplateSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.patterns.iter().enumerate() {
            let count = p.pattern.matches(IDENTITY_SLOT).count();
            if count != 1 {
                return Err(Error::BadTemplate {
                    index: i,
                    pattern: p.pattern.clone(),
                    count,
                });
            }
        }
        Ok(())
    }

    /// Parse the template file format: `label<TAB>pattern` lines, `#`
    /// comments, identity pairs under `[identities]`.
    pub fn parse(content: &str) -> Result<Self> {
        let mut patterns = Vec::new();
        let mut identity_pairs = Vec::new();
        let mut in_identities = false;
        for (idx, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "[identities]" {
                in_identities = true;
                continue;
            }
            let (a, b) = line.split_once('\t').ok_or_else(|| Error::TemplateParse {
                line: idx + 1,
                message: "expected two tab-separated fields".to_string(),
            })?;
            if in_identities {
                identity_pairs.push((a.trim().to_string(), b.trim().to_string()));
            } else {
                let label: u8 = match a.trim() {
                    "0" => 0,
                    "1" => 1,
                    other => {
                        return Err(Error::TemplateParse {
                            line: idx + 1,
                            message: format!("label must be 0 or 1, got '{other}'"),
                        })
                    }
                };
                patterns.push(TemplatePattern {
                    label,
                    pattern: b.trim().to_string(),
                });
            }
        }
        let spec = TemplateSpec {
            patterns,
            identity_pairs,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let content =
            std::fs::read_to_string(&path).map_err(|e| Error::io_path(&path, e))?;
        TemplateSpec::parse(&content)
    }
}

/// The built-in template spec (20 patterns x 15 identity pairs). All
/// identity terms are covered by the default lexicon, so generated pairs
/// are exact gender flips of each other.
pub fn default_template_spec() -> &'static TemplateSpec {
    static DEFAULT: OnceLock<TemplateSpec> = OnceLock::new();
    DEFAULT.get_or_init(|| {
        TemplateSpec::parse(include_str!("../assets/default_templates.tsv"))
            .expect("built-in template spec is valid")
    })
}

/// One evaluation sentence in both gender conditions: z=0 keeps the
/// original identity term, z=1 flips it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub text_z0: String,
    pub text_z1: String,
    pub label: u8,
}

/// Instantiate every pattern with every identity pair, in spec order.
pub fn generate_eval_set(spec: &TemplateSpec) -> Result<Vec<EvalPair>> {
    spec.validate()?;
    let mut pairs = Vec::with_capacity(spec.patterns.len() * spec.identity_pairs.len());
    for pattern in &spec.patterns {
        for (male, female) in &spec.identity_pairs {
            pairs.push(EvalPair {
                text_z0: pattern.pattern.replace(IDENTITY_SLOT, male),
                text_z1: pattern.pattern.replace(IDENTITY_SLOT, female),
                label: pattern.label,
            });
        }
    }
    Ok(pairs)
}

/// DP = 1 - |P(pred=1 | z=1) - P(pred=1 | z=0)|.
pub fn demographic_parity(pred_z1: &[bool], pred_z0: &[bool]) -> Result<f64> {
    check_same_nonempty(pred_z1, pred_z0)?;
    let rate = |v: &[bool]| v.iter().filter(|&&p| p).count() as f64 / v.len() as f64;
    Ok(1.0 - (rate(pred_z1) - rate(pred_z0)).abs())
}

/// Equality of opportunity conditioned on y = `conditioned_label`:
/// 1 - |P(pred=1 | z=1, y) - P(pred=1 | z=0, y)|. Errors when the
/// conditioning subgroup is empty rather than defaulting silently.
pub fn eq_opp(
    pred_z1: &[bool],
    pred_z0: &[bool],
    labels: &[u8],
    conditioned_label: u8,
) -> Result<f64> {
    check_same_nonempty(pred_z1, pred_z0)?;
    if labels.len() != pred_z1.len() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: pred_z1.len(),
        });
    }
    let mut n = 0usize;
    let mut pos_z1 = 0usize;
    let mut pos_z0 = 0usize;
    for i in 0..labels.len() {
        if labels[i] == conditioned_label {
            n += 1;
            pos_z1 += pred_z1[i] as usize;
            pos_z0 += pred_z0[i] as usize;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric {
            reason: format!("no examples with label {conditioned_label} in the evaluation set"),
        });
    }
    Ok(1.0 - (pos_z1 as f64 / n as f64 - pos_z0 as f64 / n as f64).abs())
}

/// EqOdd = 0.5 * (EqOpp1 + EqOpp0).
pub fn eq_odd(eq_opp1: f64, eq_opp0: f64) -> f64 {
    0.5 * (eq_opp1 + eq_opp0)
}

fn check_same_nonempty(a: &[bool], b: &[bool]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput {
            what: "prediction vectors".to_string(),
        });
    }
    Ok(())
}

/// AUC in the Mann-Whitney form: the probability that a random positive
/// outscores a random negative, ties counted as one half. Exact pair
/// counting over sorted score groups.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric {
            reason: "AUC needs both classes present".to_string(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[i]
            .partial_cmp(&scores[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut neg_below = 0usize;
    let mut winning_pairs = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut pos_in_group = 0usize;
        let mut neg_in_group = 0usize;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                pos_in_group += 1;
            } else {
                neg_in_group += 1;
            }
            j += 1;
        }
        winning_pairs += pos_in_group as f64 * neg_below as f64
            + 0.5 * pos_in_group as f64 * neg_in_group as f64;
        neg_below += neg_in_group;
        i = j;
    }
    Ok(winning_pairs / (n_pos as f64 * n_neg as f64))
}

/// Signed percentage changes versus a reference report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub dp: f64,
    pub eq_opp1: f64,
    pub eq_opp0: f64,
    pub eq_odd: f64,
    pub auc: f64,
}

/// Fairness metrics on the template set, AUC on the held-out test set, and
/// optional percentage deltas versus a reference (biased) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub dp: f64,
    pub eq_opp1: f64,
    pub eq_opp0: f64,
    pub eq_odd: f64,
    pub auc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deltas_vs_reference: Option<MetricDeltas>,
}

fn pct_change(value: f64, reference: f64) -> Result<f64> {
    if reference == 0.0 {
        return Err(Error::UndefinedMetric {
            reason: "reference metric is zero, percentage change undefined".to_string(),
        });
    }
    Ok((value - reference) / reference * 100.0)
}

/// Score the eval pairs and the test split with a trained model and compute
/// the full report. The decision threshold is 0.5 on the class-1
/// probability (strict).
pub fn evaluate(
    state: &ClassifierState,
    eval_pairs: &[EvalPair],
    test: &[ExamplePair],
    reference: Option<&FairnessReport>,
) -> Result<FairnessReport> {
    if eval_pairs.is_empty() {
        return Err(Error::EmptyInput {
            what: "evaluation pairs".to_string(),
        });
    }
    let mut pred_z0 = Vec::with_capacity(eval_pairs.len());
    let mut pred_z1 = Vec::with_capacity(eval_pairs.len());
    let mut labels = Vec::with_capacity(eval_pairs.len());
    for pair in eval_pairs {
        pred_z0.push(state.predict_prob(&pair.text_z0) > 0.5);
        pred_z1.push(state.predict_prob(&pair.text_z1) > 0.5);
        labels.push(pair.label);
    }
    let dp = demographic_parity(&pred_z1, &pred_z0)?;
    let eq_opp1 = eq_opp(&pred_z1, &pred_z0, &labels, 1)?;
    let eq_opp0 = eq_opp(&pred_z1, &pred_z0, &labels, 0)?;
    let eq_odd = eq_odd(eq_opp1, eq_opp0);

    let scores: Vec<f64> = test.iter().map(|p| state.predict_prob(&p.factual_text)).collect();
    let test_labels: Vec<u8> = test.iter().map(|p| p.label).collect();
    let auc = auc(&scores, &test_labels)?;

    let deltas_vs_reference = match reference {
        None => None,
        Some(r) => Some(MetricDeltas {
            dp: pct_change(dp, r.dp)?,
            eq_opp1: pct_change(eq_opp1, r.eq_opp1)?,
            eq_opp0: pct_change(eq_opp0, r.eq_opp0)?,
            eq_odd: pct_change(eq_odd, r.eq_odd)?,
            auc: pct_change(auc, r.auc)?,
        }),
    };

    Ok(FairnessReport {
        dp,
        eq_opp1,
        eq_opp0,
        eq_odd,
        auc,
        deltas_vs_reference,
    })
}

/// Write a template spec in the file format `parse` reads.
pub fn save_template_spec(spec: &TemplateSpec, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(&path).map_err(|e| Error::io_path(&path, e))?;
    let mut out = BufWriter::new(file);
    for p in &spec.patterns {
        writeln!(out, "{}\t{}", p.label, p.pattern)?;
    }
    writeln!(out, "\n[identities]")?;
    for (m, f) in &spec.identity_pairs {
        writeln!(out, "{m}\t{f}")?;
    }
    out.flush()?;
    Ok(())
}
