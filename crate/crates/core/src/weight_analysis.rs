//! Diagnostics of trained gates: linguistic-to-visual weight ratios per word
//! and per category, their relation to concreteness ratings, and the effect
//! of training-set size.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval_bench::{
    evaluate, spearman, BenchmarkResult, Correlation, Region, SimilarityBenchmark,
};
use crate::fusion_gates::{
    fuse_inputs, sense_inventory, FusionInputs, GateForm, GateModel, GateScope, SenseMap,
};
use crate::trainer::{train, AssociationPairSet, TrainConfig, TrainReport};

/// Word concreteness ratings; higher is more concrete.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConcretenessTable {
    ratings: BTreeMap<String, f64>,
}

impl ConcretenessTable {
    pub fn new<I: IntoIterator<Item = (String, f64)>>(ratings: I) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (w, r) in ratings {
            if !r.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite concreteness for `{}`",
                    w
                )));
            }
            map.entry(w).or_insert(r);
        }
        Ok(ConcretenessTable { ratings: map })
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<f64> {
        self.ratings.get(word).copied()
    }

    /// Ratings in word order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.ratings.iter().map(|(w, r)| (w.as_str(), *r))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (w, r) in &self.ratings {
            writeln!(out, "{}\t{}", w, r)?;
        }
        out.flush()
    }
}

/// `word TAB rating`. Later duplicates are ignored.
pub fn read_concreteness<R: BufRead>(reader: R, source_name: &str) -> Result<ConcretenessTable> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 2 || fields[0].is_empty() {
            return Err(Error::parse(
                source_name,
                lineno,
                "expected `word TAB rating`",
            ));
        }
        let r: f64 = fields[1].parse().map_err(|_| {
            Error::parse(source_name, lineno, format!("bad rating `{}`", fields[1]))
        })?;
        rows.push((fields[0].to_string(), r));
    }
    let n = rows.len();
    let table = ConcretenessTable::new(rows)?;
    if table.len() < n {
        log::warn!(
            "{}: ignored {} duplicate rating(s)",
            source_name,
            n - table.len()
        );
    }
    Ok(table)
}

pub fn load_concreteness(path: impl AsRef<Path>) -> Result<ConcretenessTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_concreteness(BufReader::new(file), &path.display().to_string())
}

/// `|g_L| / |g_P|` (l2 norms for vector gates). Infinite when the visual
/// gate is zero.
pub fn weight_ratio(model: &GateModel, l: &[f64], p: &[f64], sense: Option<&str>) -> Result<f64> {
    let (g_l, g_p) = model.compute_gates(l, p, sense)?;
    let (a, b) = (g_l.magnitude(), g_p.magnitude());
    Ok(if b == 0.0 { f64::INFINITY } else { a / b })
}

/// Bottom and top quartiles of the rated words in `vocab`, as
/// `(concrete, abstract)`. Words are ordered by rating, then by word, and
/// each side holds `n / 4` of them. `subsample` optionally keeps a seeded
/// random subset of that size from each side.
pub fn quartile_split(
    conc: &ConcretenessTable,
    vocab: &HashSet<String>,
    subsample: Option<usize>,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    let mut rated: Vec<(&str, f64)> = conc.iter().filter(|(w, _)| vocab.contains(*w)).collect();
    if rated.len() < 4 {
        return Err(Error::invalid(format!(
            "quartile split needs at least 4 rated words in vocabulary, found {}",
            rated.len()
        )));
    }
    rated.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let q = rated.len() / 4;
    let mut abstract_words: Vec<&str> = rated[..q].iter().map(|(w, _)| *w).collect();
    let mut concrete: Vec<&str> = rated[rated.len() - q..].iter().map(|(w, _)| *w).collect();
    if let Some(k) = subsample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for side in [&mut concrete, &mut abstract_words] {
            if k < side.len() {
                let picked = sample(&mut rng, side.len(), k);
                *side = picked.iter().map(|i| side[i]).collect();
            }
        }
    }
    let own = |v: Vec<&str>| v.into_iter().map(String::from).collect::<BTreeSet<_>>();
    Ok((own(concrete), own(abstract_words)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordRatio {
    pub word: String,
    pub ratio: f64,
    pub concreteness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryRatio {
    pub sense: String,
    pub mean_ratio: f64,
    pub words: usize,
    pub infinite: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetMean {
    /// Mean over finite ratios; `None` if there are none.
    pub mean: Option<f64>,
    pub words: usize,
    pub infinite: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioReport {
    /// Rated in-vocabulary words, sorted by ratio then word.
    pub words: Vec<WordRatio>,
    pub concrete: SubsetMean,
    pub abstract_: SubsetMean,
    /// Spearman(concreteness, ratio) over words with a finite ratio.
    pub correlation: Correlation,
    pub infinite: usize,
    /// Highest ratios first.
    pub top: Vec<WordRatio>,
    /// Lowest ratios first.
    pub bottom: Vec<WordRatio>,
    pub categories: Vec<CategoryRatio>,
}

fn subset_mean<'a>(ratios: impl Iterator<Item = f64> + 'a) -> SubsetMean {
    let (mut sum, mut finite, mut infinite) = (0.0, 0usize, 0usize);
    for r in ratios {
        if r.is_finite() {
            sum += r;
            finite += 1;
        } else {
            infinite += 1;
        }
    }
    SubsetMean {
        mean: (finite > 0).then(|| sum / finite as f64),
        words: finite + infinite,
        infinite,
    }
}

/// Weight ratios for every rated word of `inputs`, with quartile means,
/// the concreteness correlation, `k` extreme words on each side and
/// per-sense means over the whole vocabulary when `senses` is given.
pub fn ratio_report(
    model: &GateModel,
    inputs: &FusionInputs,
    conc: &ConcretenessTable,
    senses: Option<&SenseMap>,
    k: usize,
) -> Result<RatioReport> {
    let sense_of = |w: &str| senses.and_then(|m| m.get(w)).map(String::as_str);
    let mut all = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let (l, p) = inputs.halves(i);
        let w = inputs.ling().word(i);
        all.push(weight_ratio(model, l, p, sense_of(w))?);
    }

    let mut words: Vec<WordRatio> = (0..inputs.len())
        .filter_map(|i| {
            let w = inputs.ling().word(i);
            conc.get(w).map(|c| WordRatio {
                word: w.to_string(),
                ratio: all[i],
                concreteness: c,
            })
        })
        .collect();
    if words.is_empty() {
        return Err(Error::invalid("no rated word in the vocabulary"));
    }
    if k > words.len() {
        return Err(Error::invalid(format!(
            "k = {} exceeds {} rated words",
            k,
            words.len()
        )));
    }
    words.sort_by(|a, b| {
        a.ratio
            .total_cmp(&b.ratio)
            .then_with(|| a.word.cmp(&b.word))
    });

    let vocab: HashSet<String> = words.iter().map(|w| w.word.clone()).collect();
    let (concrete_set, abstract_set) = quartile_split(conc, &vocab, None, 0)?;
    let ratio_of = |set: &BTreeSet<String>| {
        words
            .iter()
            .filter(|w| set.contains(&w.word))
            .map(|w| w.ratio)
            .collect::<Vec<_>>()
    };
    let concrete = subset_mean(ratio_of(&concrete_set).into_iter());
    let abstract_ = subset_mean(ratio_of(&abstract_set).into_iter());

    let finite: Vec<&WordRatio> = words.iter().filter(|w| w.ratio.is_finite()).collect();
    let correlation = spearman(
        &finite.iter().map(|w| w.concreteness).collect::<Vec<_>>(),
        &finite.iter().map(|w| w.ratio).collect::<Vec<_>>(),
    );
    let infinite = words.len() - finite.len();

    let bottom = words[..k].to_vec();
    let top = words[words.len() - k..].iter().rev().cloned().collect();

    let mut categories = Vec::new();
    if let Some(map) = senses {
        for sense in sense_inventory(map) {
            let stats = subset_mean(
                (0..inputs.len())
                    .filter(|&i| sense_of(inputs.ling().word(i)) == Some(sense.as_str()))
                    .map(|i| all[i]),
            );
            if let Some(mean) = stats.mean {
                categories.push(CategoryRatio {
                    sense,
                    mean_ratio: mean,
                    words: stats.words,
                    infinite: stats.infinite,
                });
            }
        }
    }

    Ok(RatioReport {
        words,
        concrete,
        abstract_,
        correlation,
        infinite,
        top,
        bottom,
        categories,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{:.6}", x))
}

fn fmt_ratio(r: f64) -> String {
    if r.is_finite() {
        format!("{:.6}", r)
    } else {
        "inf".to_string()
    }
}

impl RatioReport {
    /// An aggregate block of `key TAB value` lines, a blank line, then
    /// `word TAB ratio TAB concreteness` rows sorted by ratio.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let names = |ws: &[WordRatio]| {
            ws.iter()
                .map(|w| w.word.as_str())
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(out, "rated_words\t{}", self.words.len())?;
        writeln!(out, "infinite_ratios\t{}", self.infinite)?;
        writeln!(out, "concrete_words\t{}", self.concrete.words)?;
        writeln!(out, "concrete_mean_ratio\t{}", fmt_opt(self.concrete.mean))?;
        writeln!(out, "abstract_words\t{}", self.abstract_.words)?;
        writeln!(out, "abstract_mean_ratio\t{}", fmt_opt(self.abstract_.mean))?;
        writeln!(
            out,
            "concreteness_spearman\t{}",
            fmt_opt(self.correlation.value())
        )?;
        writeln!(out, "top\t{}", names(&self.top))?;
        writeln!(out, "bottom\t{}", names(&self.bottom))?;
        for c in &self.categories {
            writeln!(
                out,
                "category\t{}\t{:.6}\t{}",
                c.sense, c.mean_ratio, c.words
            )?;
        }
        writeln!(out)?;
        writeln!(out, "word\tratio\tconcreteness")?;
        for w in &self.words {
            writeln!(
                out,
                "{}\t{}\t{}",
                w.word,
                fmt_ratio(w.ratio),
                w.concreteness
            )?;
        }
        out.flush()
    }
}

/// Everything needed to train a gate model and score it on benchmarks.
#[derive(Debug, Clone)]
pub struct Pipeline<'a> {
    pub inputs: &'a FusionInputs,
    pub senses: Option<&'a SenseMap>,
    pub dev: &'a AssociationPairSet,
    pub benchmarks: &'a [SimilarityBenchmark],
    pub visual_vocab: &'a HashSet<String>,
    pub scope: GateScope,
    pub form: GateForm,
    pub config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub model: GateModel,
    pub report: TrainReport,
    /// One entry per benchmark and region, benchmarks in order.
    pub results: Vec<BenchmarkResult>,
}

impl PipelineRun {
    /// Mean ALL-region rho over benchmarks; undefined correlations count
    /// as 0.
    pub fn mean_rho(&self) -> f64 {
        let all: Vec<f64> = self
            .results
            .iter()
            .filter(|r| r.region == Region::All)
            .map(|r| r.correlation.rho)
            .collect();
        if all.is_empty() {
            0.0
        } else {
            all.iter().sum::<f64>() / all.len() as f64
        }
    }
}

impl Pipeline<'_> {
    /// Initializes a model from `seed`, trains it on `train` with
    /// `config.seed = seed` and evaluates the fused table.
    pub fn run(&self, train_set: &AssociationPairSet, seed: u64) -> Result<PipelineRun> {
        let inventory = self.senses.map(sense_inventory).unwrap_or_default();
        let initial = GateModel::initialized(
            self.scope,
            self.form,
            self.inputs.ling().dim(),
            self.inputs.visual().dim(),
            &inventory,
            seed,
        )?;
        let config = TrainConfig {
            seed,
            ..self.config.clone()
        };
        let (model, report) = train(
            &initial,
            train_set,
            self.dev,
            self.inputs,
            self.senses,
            &config,
        )?;
        let fused = fuse_inputs(self.inputs, &model, self.senses)?;
        let results = self
            .benchmarks
            .iter()
            .flat_map(|b| evaluate(fused.table(), b, self.visual_vocab))
            .collect();
        Ok(PipelineRun {
            model,
            report,
            results,
        })
    }
}

/// `floor(fraction * len)` pairs chosen with `seed`, kept in their original
/// order. Fraction 1 returns the set unchanged.
pub fn subsample_pairs(
    set: &AssociationPairSet,
    fraction: f64,
    seed: u64,
) -> Result<AssociationPairSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "fraction must be in (0, 1], got {}",
            fraction
        )));
    }
    if fraction == 1.0 {
        return Ok(set.clone());
    }
    let n = (fraction * set.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, set.len(), n).into_vec();
    picked.sort_unstable();
    Ok(AssociationPairSet {
        pairs: picked.into_iter().map(|i| set.pairs[i].clone()).collect(),
        split: set.split,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationPoint {
    pub fraction: f64,
    pub pairs: usize,
    /// Mean ALL-region rho per seed.
    pub per_seed: Vec<f64>,
    pub mean_rho: f64,
}

/// Trains and evaluates on seeded subsamples of `train_set` for every
/// fraction and seed, sequentially.
pub fn data_size_ablation(
    pipeline: &Pipeline<'_>,
    train_set: &AssociationPairSet,
    fractions: &[f64],
    seeds: &[u64],
) -> Result<Vec<AblationPoint>> {
    if seeds.is_empty() {
        return Err(Error::invalid("no seeds"));
    }
    let mut points = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut pairs = 0;
        for &seed in seeds {
            let subset = subsample_pairs(train_set, fraction, seed)?;
            if subset.len() < pipeline.config.batch_size {
                return Err(Error::invalid(format!(
                    "fraction {} leaves {} pairs, fewer than one batch of {}",
                    fraction,
                    subset.len(),
                    pipeline.config.batch_size
                )));
            }
            pairs = subset.len();
            per_seed.push(pipeline.run(&subset, seed)?.mean_rho());
        }
        let mean_rho = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        points.push(AblationPoint {
            fraction,
            pairs,
            per_seed,
            mean_rho,
        });
    }
    Ok(points)
}

/// `fraction TAB pairs TAB mean_rho`, with a header line.
pub fn write_ablation<W: Write>(points: &[AblationPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "fraction\tpairs\tmean_rho")?;
    for p in points {
        writeln!(out, "{}\t{}\t{:.6}", p.fraction, p.pairs, p.mean_rho)?;
    }
    out.flush()
}
