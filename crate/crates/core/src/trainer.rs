//! Max-margin training of gate parameters on word association pairs.
//!
//! For an associated pair `(w1, w2)` with random negatives `n1`, `n2`, the
//! loss is
//!
//! ```text
//! max(0, m - M_w1.M_w2 + M_w1.M_n1) + max(0, m - M_w1.M_w2 + M_w2.M_n2)
//! ```
//!
//! on fused vectors `M`, with margin `m` (1 by default). Only gate
//! parameters are updated; embeddings stay frozen. Updates use Adagrad and
//! the snapshot with the best development Spearman is kept.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval_bench::{spearman, Correlation};
use crate::fusion_gates::{FusionInputs, GateModel, SenseMap};
use crate::vecops::{cosine, dot};

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationPair {
    pub cue: String,
    pub target: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationPairSet {
    pub pairs: Vec<AssociationPair>,
    pub split: Split,
}

impl AssociationPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn words(&self) -> BTreeSet<&str> {
        self.pairs
            .iter()
            .flat_map(|p| [p.cue.as_str(), p.target.as_str()])
            .collect()
    }
}

/// `cue TAB target TAB score` with score in (0, 1].
pub fn read_pairs<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<AssociationPair>> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::parse(
                source_name,
                lineno,
                "expected `cue TAB target TAB score`",
            ));
        }
        let score: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(source_name, lineno, format!("bad score `{}`", fields[2])))?;
        if !(score > 0.0 && score <= 1.0) {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("score {} outside (0, 1]", score),
            ));
        }
        pairs.push(AssociationPair {
            cue: fields[0].to_string(),
            target: fields[1].to_string(),
            score,
        });
    }
    Ok(pairs)
}

pub fn write_pairs<W: Write>(pairs: &[AssociationPair], mut out: W) -> std::io::Result<()> {
    for p in pairs {
        writeln!(out, "{}\t{}\t{}", p.cue, p.target, p.score)?;
    }
    out.flush()
}

/// Train gets pairs scoring at least `threshold` whose words are both in
/// the linguistic vocabulary and neither in any benchmark. Every other
/// in-vocabulary pair goes to dev.
pub fn split_pairs(
    pairs: Vec<AssociationPair>,
    threshold: f64,
    benchmark_vocab: &HashSet<String>,
    ling_vocab: &HashSet<String>,
) -> Result<(AssociationPairSet, AssociationPairSet)> {
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for p in pairs {
        if !(ling_vocab.contains(&p.cue) && ling_vocab.contains(&p.target)) {
            continue;
        }
        let leaks = benchmark_vocab.contains(&p.cue) || benchmark_vocab.contains(&p.target);
        if p.score >= threshold && !leaks {
            train.push(p);
        } else {
            dev.push(p);
        }
    }
    if train.is_empty() {
        return Err(Error::invalid("no training pairs survive the filters"));
    }
    Ok((
        AssociationPairSet {
            pairs: train,
            split: Split::Train,
        },
        AssociationPairSet {
            pairs: dev,
            split: Split::Dev,
        },
    ))
}

pub fn load_pairs(
    path: impl AsRef<Path>,
    threshold: f64,
    benchmark_vocab: &HashSet<String>,
    ling_vocab: &HashSet<String>,
) -> Result<(AssociationPairSet, AssociationPairSet)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let pairs = read_pairs(BufReader::new(file), &path.display().to_string())?;
    split_pairs(pairs, threshold, benchmark_vocab, ling_vocab)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rates: Vec<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub margin: f64,
    pub seed: u64,
    pub adagrad_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rates: vec![0.05, 0.01, 0.5, 0.1],
            batch_size: 25,
            epochs: 5,
            margin: 1.0,
            seed: 0,
            adagrad_epsilon: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty()
            || self
                .learning_rates
                .iter()
                .any(|lr| lr.is_nan() || *lr <= 0.0)
        {
            return Err(Error::invalid(
                "learning rates must be a non-empty list of positive values",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.margin.is_nan()
            || self.margin <= 0.0
            || self.adagrad_epsilon.is_nan()
            || self.adagrad_epsilon <= 0.0
        {
            return Err(Error::invalid("margin and epsilon must be positive"));
        }
        Ok(())
    }
}

/// Max-margin loss for one association pair and its two negatives.
pub fn pair_loss(m_w1: &[f64], m_w2: &[f64], m_n1: &[f64], m_n2: &[f64], margin: f64) -> f64 {
    let pos = dot(m_w1, m_w2);
    (margin - pos + dot(m_w1, m_n1)).max(0.0) + (margin - pos + dot(m_w2, m_n2)).max(0.0)
}

/// One training example as word indices into [`FusionInputs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadruple {
    pub w1: usize,
    pub w2: usize,
    pub n1: usize,
    pub n2: usize,
}

fn slot_of(model: &GateModel, inputs: &FusionInputs, senses: Option<&SenseMap>, i: usize) -> usize {
    let word = inputs.ling().word(i);
    model.sense_slot(senses.and_then(|m| m.get(word)).map(String::as_str))
}

fn fused(
    model: &GateModel,
    inputs: &FusionInputs,
    senses: Option<&SenseMap>,
    i: usize,
) -> Vec<f64> {
    let (l, p) = inputs.halves(i);
    model.fuse_slot(l, p, slot_of(model, inputs, senses, i))
}

/// Summed loss over `batch`.
pub fn batch_loss(
    model: &GateModel,
    inputs: &FusionInputs,
    senses: Option<&SenseMap>,
    batch: &[Quadruple],
    margin: f64,
) -> f64 {
    batch
        .iter()
        .map(|q| {
            let f = |i| fused(model, inputs, senses, i);
            pair_loss(&f(q.w1), &f(q.w2), &f(q.n1), &f(q.n2), margin)
        })
        .sum()
}

/// Summed loss over `batch` and its subgradient with respect to every gate
/// tensor. A hinge exactly at zero contributes no gradient.
pub fn loss_and_gradients(
    model: &GateModel,
    inputs: &FusionInputs,
    senses: Option<&SenseMap>,
    batch: &[Quadruple],
    margin: f64,
) -> (f64, Vec<Vec<f64>>) {
    let mut grads = model.zero_gradients();
    let mut total = 0.0;
    let dim = model.fused_dim();
    for q in batch {
        let ids = [q.w1, q.w2, q.n1, q.n2];
        let m: Vec<Vec<f64>> = ids
            .iter()
            .map(|&i| fused(model, inputs, senses, i))
            .collect();
        let pos = dot(&m[0], &m[1]);
        let t1 = margin - pos + dot(&m[0], &m[2]);
        let t2 = margin - pos + dot(&m[1], &m[3]);
        total += t1.max(0.0) + t2.max(0.0);
        let (a1, a2) = (t1 > 0.0, t2 > 0.0);
        if !(a1 || a2) {
            continue;
        }
        let mut d = vec![vec![0.0; dim]; 4];
        for k in 0..dim {
            if a1 {
                d[0][k] += m[2][k] - m[1][k];
                d[1][k] -= m[0][k];
                d[2][k] += m[0][k];
            }
            if a2 {
                d[0][k] -= m[1][k];
                d[1][k] += m[3][k] - m[0][k];
                d[3][k] += m[1][k];
            }
        }
        for (&i, d) in ids.iter().zip(&d) {
            let (l, p) = inputs.halves(i);
            model.accumulate_gradient(l, p, slot_of(model, inputs, senses, i), d, &mut grads);
        }
    }
    (total, grads)
}

pub fn gradients(
    model: &GateModel,
    inputs: &FusionInputs,
    senses: Option<&SenseMap>,
    batch: &[Quadruple],
    margin: f64,
) -> Vec<Vec<f64>> {
    loss_and_gradients(model, inputs, senses, batch, margin).1
}

/// Per-parameter Adagrad accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    accumulators: Vec<Vec<f64>>,
    epsilon: f64,
}

impl AdagradState {
    pub fn new(model: &GateModel, epsilon: f64) -> Self {
        AdagradState {
            accumulators: model.zero_gradients(),
            epsilon,
        }
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }

    /// `acc += g^2; theta -= lr * g / sqrt(acc + eps)`.
    pub fn step(&mut self, model: &mut GateModel, grads: &[Vec<f64>], lr: f64) {
        for ((params, acc), grad) in model
            .tensors_mut()
            .iter_mut()
            .zip(&mut self.accumulators)
            .zip(grads)
        {
            for ((p, a), g) in params.iter_mut().zip(acc.iter_mut()).zip(grad) {
                *a += g * g;
                *p -= lr * g / (*a + self.epsilon).sqrt();
            }
        }
    }
}

/// Two independent uniform draws from `pool` excluding the pair's words.
pub fn sample_negatives<T: PartialEq + Copy, R: Rng + ?Sized>(
    pair: (T, T),
    pool: &[T],
    rng: &mut R,
) -> Result<(T, T)> {
    if pool.len() < 3 {
        return Err(Error::invalid(format!(
            "negative pool needs at least 3 words, has {}",
            pool.len()
        )));
    }
    if !pool.iter().any(|w| *w != pair.0 && *w != pair.1) {
        return Err(Error::invalid("negative pool has no word outside the pair"));
    }
    let mut draw = || loop {
        let c = pool[rng.random_range(0..pool.len())];
        if c != pair.0 && c != pair.1 {
            return c;
        }
    };
    let n1 = draw();
    let n2 = draw();
    Ok((n1, n2))
}

/// Spearman between fused-vector cosines and association scores. Pairs
/// with a zero fused vector are left out.
pub fn dev_score(
    model: &GateModel,
    dev: &AssociationPairSet,
    inputs: &FusionInputs,
    senses: Option<&SenseMap>,
) -> Result<Correlation> {
    if dev.is_empty() {
        return Err(Error::invalid("empty development set"));
    }
    let mut cache: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut sims = Vec::with_capacity(dev.len());
    let mut scores = Vec::with_capacity(dev.len());
    for p in &dev.pairs {
        let idx = |w: &str| {
            inputs
                .index_of(w)
                .ok_or_else(|| Error::invalid(format!("dev word `{}` not in vocabulary", w)))
        };
        let (a, b) = (idx(&p.cue)?, idx(&p.target)?);
        for i in [a, b] {
            cache
                .entry(i)
                .or_insert_with(|| fused(model, inputs, senses, i));
        }
        if let Some(c) = cosine(&cache[&a], &cache[&b]) {
            sims.push(c);
            scores.push(p.score);
        }
    }
    Ok(spearman(&sims, &scores))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub dev: Correlation,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// Index into `records` of the selected snapshot, if any epoch ran.
    pub best: Option<usize>,
}

impl TrainReport {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.best.map(|i| &self.records[i])
    }

    /// `epoch TAB lr TAB mean_loss TAB dev_spearman`, with a header line.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch\tlr\tmean_loss\tdev_spearman")?;
        for r in &self.records {
            let dev = match r.dev.value() {
                Some(v) => format!("{:.8}", v),
                None => "NA".to_string(),
            };
            writeln!(out, "{}\t{}\t{:.8}\t{}", r.epoch, r.lr, r.mean_loss, dev)?;
        }
        out.flush()
    }
}

fn pair_indices(set: &AssociationPairSet, inputs: &FusionInputs) -> Result<Vec<(usize, usize)>> {
    set.pairs
        .iter()
        .map(|p| {
            let idx = |w: &str| {
                inputs
                    .index_of(w)
                    .ok_or_else(|| Error::invalid(format!("pair word `{}` not in vocabulary", w)))
            };
            Ok((idx(&p.cue)?, idx(&p.target)?))
        })
        .collect()
}

/// Trains `initial` once per learning rate and returns the snapshot with the
/// best dev score over every (learning rate, epoch) combination.
///
/// Each learning rate gets its own ChaCha8 stream of `config.seed`, used for
/// per-epoch pair shuffling and negative draws. The negative pool is the set
/// of words appearing in training pairs.
pub fn train(
    initial: &GateModel,
    train: &AssociationPairSet,
    dev: &AssociationPairSet,
    inputs: &FusionInputs,
    senses: Option<&SenseMap>,
    config: &TrainConfig,
) -> Result<(GateModel, TrainReport)> {
    config.validate()?;
    if initial.ling_dim() != inputs.ling().dim() || initial.vis_dim() != inputs.visual().dim() {
        return Err(Error::Dimension {
            expected: initial.fused_dim(),
            found: inputs.ling().dim() + inputs.visual().dim(),
        });
    }
    let mut report = TrainReport::default();
    if config.epochs == 0 {
        return Ok((initial.clone(), report));
    }
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let pairs = pair_indices(train, inputs)?;
    let pool: Vec<usize> = pairs
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut best: Option<(f64, GateModel)> = None;
    for (k, &lr) in config.learning_rates.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k as u64);
        let mut model = initial.clone();
        let mut opt = AdagradState::new(&model, config.adagrad_epsilon);
        let mut order: Vec<usize> = (0..pairs.len()).collect();

        for epoch in 1..=config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for (b, chunk) in order.chunks(config.batch_size).enumerate() {
                let batch = chunk
                    .iter()
                    .map(|&i| {
                        let (w1, w2) = pairs[i];
                        let (n1, n2) = sample_negatives((w1, w2), &pool, &mut rng)?;
                        Ok(Quadruple { w1, w2, n1, n2 })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (loss, grads) =
                    loss_and_gradients(&model, inputs, senses, &batch, config.margin);
                if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        lr,
                        epoch,
                        batch: b,
                        norms: model.tensors().iter().map(|t| dot(t, t).sqrt()).collect(),
                    });
                }
                opt.step(&mut model, &grads, lr);
                epoch_loss += loss;
            }
            let dev_corr = dev_score(&model, dev, inputs, senses)?;
            report.records.push(EpochRecord {
                epoch,
                lr,
                mean_loss: epoch_loss / pairs.len() as f64,
                dev: dev_corr,
            });
            if best.as_ref().is_none_or(|(score, _)| dev_corr.rho > *score) {
                best = Some((dev_corr.rho, model.clone()));
                report.best = Some(report.records.len() - 1);
            }
            log::debug!(
                "lr {} epoch {} loss {:.6} dev {:.4}",
                lr,
                epoch,
                epoch_loss,
                dev_corr.rho
            );
        }
    }
    let (_, model) = best.expect("at least one epoch ran");
    Ok((model, report))
}
