//! Built-in deterministic text classifier.
//!
//! A linear softmax model over hashed unigram+bigram counts (default), plus
//! a tiny one-hidden-layer tanh variant for architecture-robustness studies.
//! Gradients are exact, training is plain mini-batch SGD with seeded
//! shuffling, so (seed, data, hyper) fully determines the weight trajectory,
//! the logits, and the forget log.

use crate::error::Error;
use crate::lexicon::{tokenize, GenderLexicon};
use crate::rng;
use crate::Result;
use rand::Rng;
use rand::seq::SliceRandom;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

/// Replaces every lexicon word under gender-blind featurization. Contains a
/// control character so it can never collide with a real token.
const BLIND_TOKEN: &str = "\u{1}gender";
const BIGRAM_SEP: u8 = 0x1f;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x1000_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Sparse feature vector: strictly increasing indices in [0, dim), finite
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Hashed unigram+bigram count featurizer. Tokens are lowercased; hashing
/// is FNV-1a, which is stable across platforms and Rust releases.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurizer {
    dim: usize,
    /// Lowercased words collapsed to a shared token before hashing.
    blind_words: Option<Vec<String>>,
}

impl Featurizer {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Featurizer { dim, blind_words: None }
    }

    /// A featurizer that maps every lexicon surface form to one shared
    /// token, making the model blind to gender words by construction.
    pub fn gender_blind(dim: usize, lexicon: &GenderLexicon) -> Self {
        let mut words: Vec<String> = lexicon.surfaces().map(|s| s.to_string()).collect();
        words.sort();
        Featurizer {
            dim,
            blind_words: Some(words),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn featurize(&self, text: &str) -> FeatureVector {
        let tokens: Vec<String> = tokenize(text)
            .iter()
            .map(|span| {
                let lower = span.surface.to_lowercase();
                match &self.blind_words {
                    Some(words) if words.binary_search(&lower).is_ok() => BLIND_TOKEN.to_string(),
                    _ => lower,
                }
            })
            .collect();
        let mut counts: HashMap<u32, f64> = HashMap::new();
        for token in &tokens {
            let h = fnv1a(FNV_OFFSET, token.as_bytes());
            *counts.entry((h % self.dim as u64) as u32).or_insert(0.0) += 1.0;
        }
        for pair in tokens.windows(2) {
            let h = fnv1a(fnv1a(FNV_OFFSET, pair[0].as_bytes()), &[BIGRAM_SEP]);
            let h = fnv1a(h, pair[1].as_bytes());
            *counts.entry((h % self.dim as u64) as u32).or_insert(0.0) += 1.0;
        }
        let mut entries: Vec<(u32, f64)> = counts.into_iter().collect();
        entries.sort_unstable_by_key(|(i, _)| *i);
        FeatureVector { entries }
    }
}

/// Training hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Hyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            learning_rate: 0.5,
            batch_size: 32,
            epochs: 15,
        }
    }
}

/// Model architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Arch {
    Linear,
    Shallow { hidden: usize },
}

impl Arch {
    pub fn family(&self) -> &'static str {
        match self {
            Arch::Linear => "linear",
            Arch::Shallow { .. } => "shallow",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Params {
    Linear {
        /// 2 x dim, row-major.
        w: Vec<f64>,
        b: [f64; 2],
    },
    Shallow {
        /// hidden x dim, row-major.
        w1: Vec<f64>,
        b1: Vec<f64>,
        /// 2 x hidden, row-major.
        w2: Vec<f64>,
        b2: [f64; 2],
    },
}

/// A training example with a stable id used by the forget log.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: u64,
    pub text: String,
    pub label: u8,
}

impl Sample {
    pub fn new(id: u64, text: impl Into<String>, label: u8) -> Self {
        Sample {
            id,
            text: text.into(),
            label,
        }
    }
}

/// Per-example forget bookkeeping: the last epoch-boundary correctness flag
/// and the number of correct-to-incorrect transitions observed so far.
#[derive(Debug, Clone, Default)]
pub struct ForgetLog {
    ids: Vec<u64>,
    last_correct: Vec<bool>,
    counts: Vec<u32>,
    epoch_mean_losses: Vec<f64>,
    index: HashMap<u64, usize>,
}

impl ForgetLog {
    fn new(ids: Vec<u64>) -> Self {
        let n = ids.len();
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        ForgetLog {
            ids,
            last_correct: vec![false; n],
            counts: vec![0; n],
            epoch_mean_losses: Vec::new(),
            index,
        }
    }

    pub fn evaluated_epochs(&self) -> usize {
        self.epoch_mean_losses.len()
    }

    pub fn epoch_mean_losses(&self) -> &[f64] {
        &self.epoch_mean_losses
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn count_for(&self, id: u64) -> Result<u32> {
        self.index
            .get(&id)
            .map(|&i| self.counts[i])
            .ok_or(Error::UnknownExampleId { id })
    }

    pub fn counts(&self) -> impl Iterator<Item = (u64, u32)> + '_ {
        self.ids.iter().copied().zip(self.counts.iter().copied())
    }
}

/// Classifier parameters plus the epoch counter and seed that determine the
/// RNG streams. Immutable views may be shared across threads; training owns
/// the state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState {
    featurizer: Featurizer,
    params: Params,
    arch: Arch,
    epoch: usize,
    seed: u64,
    hyper: Hyper,
}

impl ClassifierState {
    /// Fresh state. The linear model starts at zero weights; the shallow
    /// model draws its initialization from the seed.
    pub fn new(featurizer: Featurizer, arch: Arch, seed: u64, hyper: Hyper) -> Self {
        let dim = featurizer.dim();
        let params = match arch {
            Arch::Linear => Params::Linear {
                w: vec![0.0; 2 * dim],
                b: [0.0; 2],
            },
            Arch::Shallow { hidden } => {
                assert!(hidden > 0, "hidden width must be positive");
                let mut init = rng::stream(seed, rng::SALT_INIT);
                let scale = 0.1;
                let w1 = (0..hidden * dim)
                    .map(|_| init.gen_range(-scale..scale))
                    .collect();
                let w2 = (0..2 * hidden)
                    .map(|_| init.gen_range(-scale..scale))
                    .collect();
                Params::Shallow {
                    w1,
                    b1: vec![0.0; hidden],
                    w2,
                    b2: [0.0; 2],
                }
            }
        };
        ClassifierState {
            featurizer,
            params,
            arch,
            epoch: 0,
            seed,
            hyper,
        }
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hyper(&self) -> Hyper {
        self.hyper
    }

    pub fn dim(&self) -> usize {
        self.featurizer.dim()
    }

    /// Pre-softmax scores for a text.
    pub fn logits(&self, text: &str) -> [f64; 2] {
        self.logits_fv(&self.featurizer.featurize(text))
    }

    pub fn logits_fv(&self, fv: &FeatureVector) -> [f64; 2] {
        match &self.params {
            Params::Linear { w, b } => {
                let dim = self.featurizer.dim();
                let mut out = *b;
                for &(idx, val) in &fv.entries {
                    out[0] += w[idx as usize] * val;
                    out[1] += w[dim + idx as usize] * val;
                }
                out
            }
            Params::Shallow { w2, b2, .. } => {
                let hidden_act = self.hidden_activations(fv);
                let hidden = hidden_act.len();
                let mut out = *b2;
                for c in 0..2 {
                    for (h, &a) in hidden_act.iter().enumerate() {
                        out[c] += w2[c * hidden + h] * a;
                    }
                }
                out
            }
        }
    }

    fn hidden_activations(&self, fv: &FeatureVector) -> Vec<f64> {
        match &self.params {
            Params::Linear { .. } => Vec::new(),
            Params::Shallow { w1, b1, .. } => {
                let dim = self.featurizer.dim();
                let mut pre = b1.clone();
                for &(idx, val) in &fv.entries {
                    for (h, p) in pre.iter_mut().enumerate() {
                        *p += w1[h * dim + idx as usize] * val;
                    }
                }
                pre.iter_mut().for_each(|p| *p = p.tanh());
                pre
            }
        }
    }

    /// Probability of class 1 (softmax of the logits).
    pub fn predict_prob(&self, text: &str) -> f64 {
        prob_class1(self.logits(text))
    }

    pub fn predict_prob_fv(&self, fv: &FeatureVector) -> f64 {
        prob_class1(self.logits_fv(fv))
    }

    /// Cross-entropy loss for one example.
    pub fn example_loss(&self, text: &str, label: u8) -> f64 {
        loss_from_logits(self.logits(text), label)
    }

    /// Number of scalar parameters; pairs with [`perturb_param`] for
    /// finite-difference gradient checks.
    ///
    /// [`perturb_param`]: ClassifierState::perturb_param
    pub fn param_count(&self) -> usize {
        match &self.params {
            Params::Linear { w, b } => w.len() + b.len(),
            Params::Shallow { w1, b1, w2, b2 } => w1.len() + b1.len() + w2.len() + b2.len(),
        }
    }

    /// Add `delta` to the k-th scalar parameter (flat ordering: weight
    /// blocks first, biases last).
    pub fn perturb_param(&mut self, k: usize, delta: f64) {
        match &mut self.params {
            Params::Linear { w, b } => {
                if k < w.len() {
                    w[k] += delta;
                } else {
                    b[k - w.len()] += delta;
                }
            }
            Params::Shallow { w1, b1, w2, b2 } => {
                let mut k = k;
                for block in [w1.as_mut_slice(), b1.as_mut_slice(), w2.as_mut_slice()] {
                    if k < block.len() {
                        block[k] += delta;
                        return;
                    }
                    k -= block.len();
                }
                b2[k] += delta;
            }
        }
    }

    /// l2 norm over all parameters of the per-example cross-entropy
    /// gradient. Exact (no estimation).
    pub fn grad_norm(&self, text: &str, label: u8) -> f64 {
        let fv = self.featurizer.featurize(text);
        let logits = self.logits_fv(&fv);
        let p = softmax(logits);
        let mut r = [p[0], p[1]];
        r[label as usize % 2] -= 1.0;
        let r_sq = r[0] * r[0] + r[1] * r[1];
        match &self.params {
            Params::Linear { .. } => {
                // dW = r (outer) x, db = r
                (r_sq * (fv.norm_sq() + 1.0)).sqrt()
            }
            Params::Shallow { w2, .. } => {
                let act = self.hidden_activations(&fv);
                let hidden = act.len();
                let act_sq: f64 = act.iter().map(|a| a * a).sum();
                let mut delta_sq = 0.0;
                for (h, &a) in act.iter().enumerate() {
                    let back = w2[h] * r[0] + w2[hidden + h] * r[1];
                    let d = back * (1.0 - a * a);
                    delta_sq += d * d;
                }
                (r_sq * (act_sq + 1.0) + delta_sq * (fv.norm_sq() + 1.0)).sqrt()
            }
        }
    }
}

fn softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

fn prob_class1(logits: [f64; 2]) -> f64 {
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}

fn loss_from_logits(logits: [f64; 2], label: u8) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[label as usize % 2]
}

/// Mini-batch SGD on cross-entropy for `n_epochs`, recording forget events
/// and the mean training loss at every epoch boundary. Batch order is
/// reshuffled each epoch from a stream derived from (seed, global epoch),
/// so training in chunks equals training in one call.
pub fn train(
    mut state: ClassifierState,
    samples: &[Sample],
    n_epochs: usize,
) -> Result<(ClassifierState, ForgetLog)> {
    if n_epochs == 0 {
        return Ok((state, ForgetLog::default()));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput {
            what: "training examples".to_string(),
        });
    }
    let features: Vec<FeatureVector> = samples
        .iter()
        .map(|s| state.featurizer.featurize(&s.text))
        .collect();
    let mut log = ForgetLog::new(samples.iter().map(|s| s.id).collect());
    let lr = state.hyper.learning_rate;
    let batch_size = state.hyper.batch_size.max(1);

    for _ in 0..n_epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut shuffle_rng = rng::indexed_stream(state.seed, rng::SALT_SHUFFLE, state.epoch as u64);
        order.shuffle(&mut shuffle_rng);

        for (batch_idx, batch) in order.chunks(batch_size).enumerate() {
            apply_batch(&mut state, samples, &features, batch, lr).map_err(|_| {
                Error::TrainingDiverged {
                    epoch: state.epoch,
                    batch: batch_idx,
                    learning_rate: lr,
                }
            })?;
        }

        // Epoch boundary: forget events and mean loss over the training set.
        let first_epoch = log.epoch_mean_losses.is_empty();
        let mut loss_sum = 0.0;
        for (i, sample) in samples.iter().enumerate() {
            let logits = state.logits_fv(&features[i]);
            loss_sum += loss_from_logits(logits, sample.label);
            let correct = (prob_class1(logits) > 0.5) == (sample.label == 1);
            if !first_epoch && log.last_correct[i] && !correct {
                log.counts[i] += 1;
            }
            log.last_correct[i] = correct;
        }
        log.epoch_mean_losses.push(loss_sum / samples.len() as f64);
        state.epoch += 1;
    }
    Ok((state, log))
}

/// One mini-batch update. Gradients are averaged over the batch and applied
/// with sparse accumulation; returns Err(()) on a non-finite loss.
fn apply_batch(
    state: &mut ClassifierState,
    samples: &[Sample],
    features: &[FeatureVector],
    batch: &[usize],
    lr: f64,
) -> std::result::Result<(), ()> {
    let scale = lr / batch.len() as f64;
    let dim = state.featurizer.dim();
    match &mut state.params {
        Params::Linear { w, b } => {
            let mut acc: HashMap<u32, [f64; 2]> = HashMap::new();
            let mut acc_b = [0.0f64; 2];
            for &i in batch {
                let fv = &features[i];
                let mut logits = *b;
                for &(idx, val) in &fv.entries {
                    logits[0] += w[idx as usize] * val;
                    logits[1] += w[dim + idx as usize] * val;
                }
                if !loss_from_logits(logits, samples[i].label).is_finite() {
                    return Err(());
                }
                let p = softmax(logits);
                let mut r = p;
                r[samples[i].label as usize % 2] -= 1.0;
                acc_b[0] += r[0];
                acc_b[1] += r[1];
                for &(idx, val) in &fv.entries {
                    let slot = acc.entry(idx).or_insert([0.0; 2]);
                    slot[0] += r[0] * val;
                    slot[1] += r[1] * val;
                }
            }
            for (idx, g) in acc {
                w[idx as usize] -= scale * g[0];
                w[dim + idx as usize] -= scale * g[1];
            }
            b[0] -= scale * acc_b[0];
            b[1] -= scale * acc_b[1];
        }
        Params::Shallow { w1, b1, w2, b2 } => {
            let hidden = b1.len();
            let mut acc_w1: HashMap<u32, Vec<f64>> = HashMap::new();
            let mut acc_b1 = vec![0.0f64; hidden];
            let mut acc_w2 = vec![0.0f64; 2 * hidden];
            let mut acc_b2 = [0.0f64; 2];
            for &i in batch {
                let fv = &features[i];
                let mut pre = b1.clone();
                for &(idx, val) in &fv.entries {
                    for (h, p) in pre.iter_mut().enumerate() {
                        *p += w1[h * dim + idx as usize] * val;
                    }
                }
                let act: Vec<f64> = pre.iter().map(|p| p.tanh()).collect();
                let mut logits = *b2;
                for c in 0..2 {
                    for (h, &a) in act.iter().enumerate() {
                        logits[c] += w2[c * hidden + h] * a;
                    }
                }
                if !loss_from_logits(logits, samples[i].label).is_finite() {
                    return Err(());
                }
                let p = softmax(logits);
                let mut r = p;
                r[samples[i].label as usize % 2] -= 1.0;
                acc_b2[0] += r[0];
                acc_b2[1] += r[1];
                for c in 0..2 {
                    for (h, &a) in act.iter().enumerate() {
                        acc_w2[c * hidden + h] += r[c] * a;
                    }
                }
                let mut delta = vec![0.0f64; hidden];
                for (h, d) in delta.iter_mut().enumerate() {
                    let back = w2[h] * r[0] + w2[hidden + h] * r[1];
                    *d = back * (1.0 - act[h] * act[h]);
                    acc_b1[h] += *d;
                }
                for &(idx, val) in &fv.entries {
                    let slot = acc_w1.entry(idx).or_insert_with(|| vec![0.0; hidden]);
                    for (h, &d) in delta.iter().enumerate() {
                        slot[h] += d * val;
                    }
                }
            }
            for (idx, g) in acc_w1 {
                for (h, &gv) in g.iter().enumerate() {
                    w1[h * dim + idx as usize] -= scale * gv;
                }
            }
            for (h, &g) in acc_b1.iter().enumerate() {
                b1[h] -= scale * g;
            }
            for (i, &g) in acc_w2.iter().enumerate() {
                w2[i] -= scale * g;
            }
            b2[0] -= scale * acc_b2[0];
            b2[1] -= scale * acc_b2[1];
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"FDCK";
const CHECKPOINT_VERSION: u16 = 1;

impl ClassifierState {
    /// Write a versioned binary checkpoint: dimension, architecture, seed,
    /// epoch, hyper-parameters, featurizer config, and all parameters.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let (arch_tag, hidden) = match self.arch {
            Arch::Linear => (0u8, 0u64),
            Arch::Shallow { hidden } => (1u8, hidden as u64),
        };
        buf.push(arch_tag);
        buf.extend_from_slice(&(self.featurizer.dim() as u64).to_le_bytes());
        buf.extend_from_slice(&hidden.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        buf.extend_from_slice(&self.hyper.learning_rate.to_le_bytes());
        buf.extend_from_slice(&(self.hyper.batch_size as u64).to_le_bytes());
        buf.extend_from_slice(&(self.hyper.epochs as u64).to_le_bytes());
        match &self.featurizer.blind_words {
            None => buf.extend_from_slice(&0u64.to_le_bytes()),
            Some(words) => {
                buf.extend_from_slice(&(words.len() as u64).to_le_bytes());
                for w in words {
                    buf.extend_from_slice(&(w.len() as u64).to_le_bytes());
                    buf.extend_from_slice(w.as_bytes());
                }
            }
        }
        match &self.params {
            Params::Linear { w, b } => {
                write_f64s(&mut buf, w);
                write_f64s(&mut buf, b);
            }
            Params::Shallow { w1, b1, w2, b2 } => {
                write_f64s(&mut buf, w1);
                write_f64s(&mut buf, b1);
                write_f64s(&mut buf, w2);
                write_f64s(&mut buf, b2);
            }
        }
        let mut file = std::fs::File::create(&path).map_err(|e| Error::io_path(&path, e))?;
        file.write_all(&buf).map_err(|e| Error::io_path(&path, e))?;
        Ok(())
    }

    /// Load a checkpoint, rejecting a dimension mismatch against the
    /// dimension the caller expects.
    pub fn load(path: impl AsRef<Path>, expected_dim: usize) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(&path)
            .map_err(|e| Error::io_path(&path, e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io_path(&path, e))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".to_string()));
        }
        let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let arch_tag = cur.take(1)?[0];
        let dim = cur.u64()? as usize;
        let hidden = cur.u64()? as usize;
        if dim != expected_dim {
            return Err(Error::Checkpoint(format!(
                "dimension mismatch: checkpoint has {dim}, expected {expected_dim}"
            )));
        }
        let seed = cur.u64()?;
        let epoch = cur.u64()? as usize;
        let hyper = Hyper {
            learning_rate: cur.f64()?,
            batch_size: cur.u64()? as usize,
            epochs: cur.u64()? as usize,
        };
        let n_blind = cur.u64()? as usize;
        let blind_words = if n_blind == 0 {
            None
        } else {
            let mut words = Vec::with_capacity(n_blind);
            for _ in 0..n_blind {
                let len = cur.u64()? as usize;
                let raw = cur.take(len)?;
                words.push(String::from_utf8(raw.to_vec()).map_err(|_| {
                    Error::Checkpoint("non-utf8 blind word".to_string())
                })?);
            }
            Some(words)
        };
        let featurizer = Featurizer { dim, blind_words };
        let (arch, params) = match arch_tag {
            0 => {
                let w = cur.f64s(2 * dim)?;
                let b = cur.f64s(2)?;
                (Arch::Linear, Params::Linear { w, b: [b[0], b[1]] })
            }
            1 => {
                let w1 = cur.f64s(hidden * dim)?;
                let b1 = cur.f64s(hidden)?;
                let w2 = cur.f64s(2 * hidden)?;
                let b2 = cur.f64s(2)?;
                (
                    Arch::Shallow { hidden },
                    Params::Shallow { w1, b1, w2, b2: [b2[0], b2[1]] },
                )
            }
            t => return Err(Error::Checkpoint(format!("unknown architecture tag {t}"))),
        };
        Ok(ClassifierState {
            featurizer,
            params,
            arch,
            epoch,
            seed,
            hyper,
        })
    }
}

fn write_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".to_string()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, expected: usize) -> Result<Vec<f64>> {
        let len = self.u64()? as usize;
        if len != expected {
            return Err(Error::Checkpoint(format!(
                "parameter block length {len}, expected {expected}"
            )));
        }
        (0..len).map(|_| self.f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable_fixture() -> Vec<Sample> {
        let good = ["great", "fine", "lovely", "nice", "super"];
        let bad = ["awful", "rotten", "nasty", "gross", "vile"];
        let mut samples = Vec::new();
        for i in 0..10 {
            samples.push(Sample::new(
                i,
                format!("{} {} day", good[i as usize % 5], good[(i as usize + 1) % 5]),
                0,
            ));
            samples.push(Sample::new(
                10 + i,
                format!("{} {} mess", bad[i as usize % 5], bad[(i as usize + 1) % 5]),
                1,
            ));
        }
        samples
    }

    fn fresh(dim: usize, seed: u64) -> ClassifierState {
        ClassifierState::new(Featurizer::new(dim), Arch::Linear, seed, Hyper::default())
    }

    #[test]
    fn featurize_is_deterministic_and_count_sensitive() {
        let f = Featurizer::new(1 << 10);
        assert!(f.featurize("").is_empty());
        assert_eq!(f.featurize("he said"), f.featurize("he said"));
        assert_ne!(f.featurize("he he"), f.featurize("he"));
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let state = fresh(1 << 10, 1);
        assert_eq!(state.logits("whatever text"), [0.0, 0.0]);
        assert_eq!(state.predict_prob("whatever text"), 0.5);
    }

    #[test]
    fn gender_free_text_has_flip_invariant_logits() {
        use crate::lexicon::{flip_gender, GenderLexicon};
        let (state, _) = train(fresh(1 << 10, 2), &separable_fixture(), 2).unwrap();
        let lexicon = GenderLexicon::default_builtin();
        let text = "the meeting ran long today";
        assert_eq!(state.logits(text), state.logits(&flip_gender(text, lexicon)));
    }

    #[test]
    fn softmax_monotone_in_logit_gap() {
        let mut last = 0.0;
        for k in 0..10 {
            let p = prob_class1([0.0, k as f64]);
            assert!(p >= last);
            last = p;
        }
        assert!(prob_class1([0.0, 40.0]) > 1.0 - 1e-12);
    }

    #[test]
    fn separable_fixture_reaches_full_accuracy() {
        // Independent oracle: a perceptron on the same features converges on
        // linearly separable data; its convergence certifies separability.
        let samples = separable_fixture();
        let f = Featurizer::new(1 << 10);
        let feats: Vec<FeatureVector> = samples.iter().map(|s| f.featurize(&s.text)).collect();
        let mut w = vec![0.0f64; 1 << 10];
        let mut bias = 0.0f64;
        let mut converged = false;
        for _ in 0..100 {
            let mut errors = 0;
            for (i, s) in samples.iter().enumerate() {
                let score: f64 =
                    bias + feats[i].entries.iter().map(|&(j, v)| w[j as usize] * v).sum::<f64>();
                let pred = if score > 0.0 { 1 } else { 0 };
                if pred != s.label {
                    errors += 1;
                    let dir = if s.label == 1 { 1.0 } else { -1.0 };
                    for &(j, v) in &feats[i].entries {
                        w[j as usize] += dir * v;
                    }
                    bias += dir;
                }
            }
            if errors == 0 {
                converged = true;
                break;
            }
        }
        assert!(converged, "perceptron oracle says fixture is separable");

        let (state, _) = train(fresh(1 << 10, 3), &samples, 50).unwrap();
        let correct = samples
            .iter()
            .filter(|s| (state.predict_prob(&s.text) > 0.5) == (s.label == 1))
            .count();
        assert_eq!(correct, samples.len());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let samples = separable_fixture();
        let state = fresh(1 << 10, 3);
        let before = state.clone();
        let (after, log) = train(state, &samples, 0).unwrap();
        assert_eq!(after, before);
        assert_eq!(log.counts().count(), 0);
        assert_eq!(log.evaluated_epochs(), 0);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let samples = separable_fixture();
        let (a, _) = train(fresh(1 << 10, 9), &samples, 5).unwrap();
        let (b, _) = train(fresh(1 << 10, 9), &samples, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chunked_training_equals_one_shot() {
        let samples = separable_fixture();
        let (one_shot, _) = train(fresh(1 << 10, 5), &samples, 4).unwrap();
        let (mid, _) = train(fresh(1 << 10, 5), &samples, 2).unwrap();
        let (chunked, _) = train(mid, &samples, 2).unwrap();
        assert_eq!(one_shot, chunked);
    }

    #[test]
    fn loss_decreases_on_separable_fixture() {
        let samples = separable_fixture();
        let (_, log) = train(fresh(1 << 10, 3), &samples, 20).unwrap();
        let losses = log.epoch_mean_losses();
        for k in 1..losses.len() {
            assert!(
                losses[k] <= losses[k - 1] + 1e-9,
                "loss rose at epoch {k}: {} -> {}",
                losses[k - 1],
                losses[k]
            );
        }
    }

    #[test]
    fn always_correct_examples_never_forget() {
        let samples = separable_fixture();
        let (_, log) = train(fresh(1 << 10, 3), &samples, 50).unwrap();
        // Forget counts are bounded by evaluated epochs, and on this easy
        // fixture at least some examples stay correct throughout.
        for (_, count) in log.counts() {
            assert!((count as usize) <= log.evaluated_epochs());
        }
        let zero = log.counts().filter(|&(_, c)| c == 0).count();
        assert!(zero > 0);
    }

    #[test]
    fn grad_norm_zero_at_exact_fit() {
        // With a huge margin the residual underflows to ~0.
        let mut state = fresh(1 << 6, 1);
        if let Params::Linear { w, .. } = &mut state.params {
            for v in w.iter_mut() {
                *v = 0.0;
            }
        }
        let f = state.featurizer.clone();
        let fv = f.featurize("alpha beta");
        // Manually give class 1 a huge advantage on these features.
        if let Params::Linear { w, .. } = &mut state.params {
            for &(idx, _) in &fv.entries {
                w[(1 << 6) + idx as usize] = 500.0;
            }
        }
        let g = state.grad_norm("alpha beta", 1);
        assert!((0.0..1e-12).contains(&g), "got {g}");
    }

    #[test]
    fn gradient_matches_finite_differences_linear() {
        let samples = separable_fixture();
        let dim = 64;
        let (state, _) = train(
            ClassifierState::new(Featurizer::new(dim), Arch::Linear, 2, Hyper::default()),
            &samples,
            1,
        )
        .unwrap();
        for s in samples.iter().take(6) {
            let analytic = state.grad_norm(&s.text, s.label);
            let numeric = fd_grad_norm(&state, &s.text, s.label, 1e-5);
            let rel = (analytic - numeric).abs() / numeric.max(1e-12);
            assert!(rel < 1e-5, "rel err {rel} (analytic {analytic}, fd {numeric})");
        }
    }

    #[test]
    fn gradient_matches_finite_differences_shallow() {
        let samples = separable_fixture();
        let dim = 32;
        let (state, _) = train(
            ClassifierState::new(
                Featurizer::new(dim),
                Arch::Shallow { hidden: 4 },
                2,
                Hyper::default(),
            ),
            &samples,
            1,
        )
        .unwrap();
        for s in samples.iter().take(4) {
            let analytic = state.grad_norm(&s.text, s.label);
            let numeric = fd_grad_norm(&state, &s.text, s.label, 1e-5);
            let rel = (analytic - numeric).abs() / numeric.max(1e-12);
            assert!(rel < 1e-4, "rel err {rel}");
        }
    }

    /// Central finite differences over every parameter; the independent
    /// oracle for grad_norm.
    fn fd_grad_norm(state: &ClassifierState, text: &str, label: u8, h: f64) -> f64 {
        let mut sum_sq = 0.0;
        for k in 0..state.param_count() {
            let mut plus = state.clone();
            plus.perturb_param(k, h);
            let mut minus = state.clone();
            minus.perturb_param(k, -h);
            let d = (plus.example_loss(text, label) - minus.example_loss(text, label)) / (2.0 * h);
            sum_sq += d * d;
        }
        sum_sq.sqrt()
    }

    #[test]
    fn checkpoint_roundtrip_and_dim_check() {
        let samples = separable_fixture();
        let (state, _) = train(fresh(1 << 8, 4), &samples, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        state.save(&path).unwrap();
        let loaded = ClassifierState::load(&path, 1 << 8).unwrap();
        assert_eq!(loaded, state);
        match ClassifierState::load(&path, 1 << 9) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("mismatch")),
            other => panic!("expected dimension mismatch, got {other:?}"),
        }
    }
}
