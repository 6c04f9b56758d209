//! Synthetic planted-bias corpus generator.
//!
//! Produces a labeled toxicity corpus in which, among gendered sentences,
//! toxic examples are disproportionately worded with female gender terms
//! (and benign ones with male terms) at a configurable strength. A model
//! trained on the factual corpus picks up the spurious gender-label
//! correlation, which the counterfactual diets then have to undo. Content
//! words alone still carry the true label, so accuracy survives debiasing.

use crate::corpus::LabeledRecord;
use crate::error::Error;
use crate::rng;
use crate::Result;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Number of examples.
    pub n: usize,
    /// P(female wording | toxic, gendered); male gets the complement.
    /// 0.5 plants no bias, 1.0 is maximal.
    pub bias_strength: f64,
    /// Fraction of sentences that mention gender at all.
    pub gendered_fraction: f64,
    /// Fraction of gendered sentences whose predicate carries no label
    /// signal, leaving the gender word as the only usable cue.
    pub mild_fraction: f64,
    /// Base rate of toxic labels.
    pub positive_rate: f64,
    /// Probability a label is flipped after the text is generated.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 2000,
            bias_strength: 0.95,
            gendered_fraction: 0.35,
            mild_fraction: 0.25,
            positive_rate: 0.5,
            label_noise: 0.02,
            seed: 7,
        }
    }
}

const MALE_SUBJECTS: [&str; 14] = [
    "he",
    "the man",
    "that boy",
    "my father",
    "the king",
    "this gentleman",
    "my uncle",
    "the waiter",
    "john",
    "my brother",
    "the actor",
    "my son",
    "my husband",
    "my grandfather",
];

const FEMALE_SUBJECTS: [&str; 14] = [
    "she",
    "the woman",
    "that girl",
    "my mother",
    "the queen",
    "this lady",
    "my aunt",
    "the waitress",
    "mary",
    "my sister",
    "the actress",
    "my daughter",
    "my wife",
    "my grandmother",
];

const NEUTRAL_SUBJECTS: [&str; 15] = [
    "the meeting",
    "this thread",
    "the weather",
    "that movie",
    "the project",
    "my computer",
    "the game",
    "this article",
    "the update",
    "our schedule",
    "the report",
    "that restaurant",
    "the traffic",
    "this recipe",
    "the neighborhood",
];

// The two pools share function-word skeletons pairwise, so only the
// content words carry label signal; everything else cancels.
const TOXIC_PREDICATES: [&str; 12] = [
    "is so stupid",
    "is a complete idiot",
    "is absolutely useless",
    "is pathetic and awful",
    "is disgusting",
    "is the worst ever",
    "is a hopeless disaster",
    "ruined everything again",
    "makes me sick",
    "should just shut up",
    "deserves nothing but contempt",
    "wrote hateful garbage yesterday",
];

const BENIGN_PREDICATES: [&str; 12] = [
    "is so helpful",
    "is a complete star",
    "is absolutely brilliant",
    "is warm and friendly",
    "is impressive",
    "is the best ever",
    "is a glowing success",
    "improved everything again",
    "makes me smile",
    "should just keep going",
    "deserves nothing but praise",
    "wrote thoughtful notes yesterday",
];

// Appear equally often with toxic and benign labels, so their words carry
// no label signal of their own.
const MILD_PREDICATES: [&str; 10] = [
    "did it again",
    "has strong opinions",
    "is something else",
    "was in the news",
    "is back again",
    "has a lot to say",
    "is everywhere these days",
    "got noticed today",
    "is at it again",
    "made the list",
];

const MALE_CLAUSES: [&str; 4] = [
    "and i told him so",
    "according to his own words",
    "as he said himself",
    "which surprised him a lot",
];

const FEMALE_CLAUSES: [&str; 4] = [
    "and i told her so",
    "according to her own words",
    "as she said herself",
    "which surprised her a lot",
];

const NEUTRAL_CLAUSES: [&str; 4] = [
    "for the third time",
    "without any warning",
    "by all accounts",
    "as usual",
];

/// Generate the corpus. Deterministic per config.
pub fn generate(config: &SynthConfig) -> Vec<LabeledRecord> {
    let mut stream = rng::stream(config.seed, rng::SALT_SYNTH);
    let mut records = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let toxic = stream.gen_bool(config.positive_rate);
        let gendered = stream.gen_bool(config.gendered_fraction);
        let (subject, clause) = if gendered {
            let p_female = if toxic {
                config.bias_strength
            } else {
                1.0 - config.bias_strength
            };
            if stream.gen_bool(p_female) {
                (
                    *FEMALE_SUBJECTS.choose(&mut stream).unwrap(),
                    *FEMALE_CLAUSES.choose(&mut stream).unwrap(),
                )
            } else {
                (
                    *MALE_SUBJECTS.choose(&mut stream).unwrap(),
                    *MALE_CLAUSES.choose(&mut stream).unwrap(),
                )
            }
        } else {
            (
                *NEUTRAL_SUBJECTS.choose(&mut stream).unwrap(),
                *NEUTRAL_CLAUSES.choose(&mut stream).unwrap(),
            )
        };
        let mild = gendered && stream.gen_bool(config.mild_fraction);
        let predicate = if mild {
            *MILD_PREDICATES.choose(&mut stream).unwrap()
        } else if toxic {
            *TOXIC_PREDICATES.choose(&mut stream).unwrap()
        } else {
            *BENIGN_PREDICATES.choose(&mut stream).unwrap()
        };
        let with_clause = stream.gen_bool(0.5);
        let text = if with_clause {
            format!("{subject} {predicate} {clause}")
        } else {
            format!("{subject} {predicate}")
        };
        let label = if stream.gen_bool(config.label_noise) {
            1 - u8::from(toxic)
        } else {
            u8::from(toxic)
        };
        records.push(LabeledRecord { text, label });
    }
    records
}

/// Write the corpus as a two-column CSV (text,label) consumable by
/// `preprocess`.
pub fn write_csv(records: &[LabeledRecord], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(&path).map_err(|e| Error::io_path(&path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["text", "label"])?;
    for r in records {
        w.write_record([r.text.as_str(), if r.label == 1 { "1" } else { "0" }])?;
    }
    w.flush()?;
    Ok(())
}

/// Convenience used by tests and docs: generate, attach counterfactuals
/// with the built-in lexicon, and split 8:1:1.
pub fn planted_bias_dataset(config: &SynthConfig) -> crate::corpus::SplitDataset {
    let records = generate(config);
    let pairs = crate::corpus::attach_counterfactuals(&records, crate::lexicon::GenderLexicon::default_builtin());
    crate::corpus::split(pairs, [0.8, 0.1, 0.1], config.seed).expect("valid ratios")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{contains_gender_words, GenderLexicon};

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::default();
        assert_eq!(generate(&cfg), generate(&cfg));
    }

    #[test]
    fn gendered_fraction_is_roughly_respected() {
        let cfg = SynthConfig { n: 4000, ..SynthConfig::default() };
        let records = generate(&cfg);
        let lex = GenderLexicon::default_builtin();
        let gendered = records
            .iter()
            .filter(|r| contains_gender_words(&r.text, lex))
            .count() as f64
            / records.len() as f64;
        assert!((gendered - cfg.gendered_fraction).abs() < 0.05, "got {gendered}");
    }

    #[test]
    fn toxic_gendered_sentences_skew_female() {
        let cfg = SynthConfig { n: 6000, label_noise: 0.0, ..SynthConfig::default() };
        let records = generate(&cfg);
        let lex = GenderLexicon::default_builtin();
        let female_terms = ["she", "her", "woman", "girl", "mother", "queen", "lady", "aunt",
            "waitress", "mary", "sister", "actress", "daughter", "wife", "grandmother"];
        let is_female = |text: &str| female_terms.iter().any(|t| text.split(' ').any(|w| w == *t));
        let mut toxic_female = 0;
        let mut toxic_gendered = 0;
        for r in &records {
            if r.label == 1 && contains_gender_words(&r.text, lex) {
                toxic_gendered += 1;
                if is_female(&r.text) {
                    toxic_female += 1;
                }
            }
        }
        let ratio = toxic_female as f64 / toxic_gendered as f64;
        assert!((ratio - cfg.bias_strength).abs() < 0.05, "got {ratio}");
    }
}
