//! Synthetic corpora with a known modality structure.
//!
//! Words come in clusters that share a latent vector. Concrete-like
//! clusters have latents in the first half of the coordinates, abstract-like
//! clusters in the second half, each with a constant mean offset. The
//! linguistic vector of every word is its latent plus noise. The visual
//! vector of a concrete-like word is a fixed random projection of the
//! latent plus noise; for an abstract-like word it is independent noise.
//! Associated pairs are drawn within clusters, so only the linguistic
//! modality links abstract-like pairs.
//!
//! Clusters are split into training clusters (association pairs) and
//! benchmark clusters (similarity benchmarks), so the two vocabularies are
//! disjoint. Some benchmark words get no visual vector.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embedding_store::{EmbeddingTable, ImageFeature, ImageFeatureSet};
use crate::error::{Error, Result};
use crate::eval_bench::SimilarityBenchmark;
use crate::fusion_gates::SenseMap;
use crate::trainer::{write_pairs, AssociationPair};
use crate::vecops::cosine;
use crate::weight_analysis::ConcretenessTable;

pub const CONCRETE_SENSE: &str = "concretish";
pub const ABSTRACT_SENSE: &str = "abstractish";
pub const CONCRETE_RATING: f64 = 7.0;
pub const ABSTRACT_RATING: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    /// Dimension of both modalities; at least 2.
    pub dim: usize,
    /// Associated pairs with scores in [0.2, 1], all within training clusters.
    pub num_pairs: usize,
    /// Low-score pairs over the whole vocabulary, for development scoring.
    pub num_dev_pairs: usize,
    pub abstract_fraction: f64,
    pub noise: f64,
    pub seed: u64,
    pub cluster_size: usize,
    /// Share of clusters reserved for benchmarks.
    pub benchmark_fraction: f64,
    /// Share of benchmark words without a visual vector.
    pub zero_shot_fraction: f64,
    pub num_benchmarks: usize,
    pub benchmark_pairs: usize,
    /// Mean of every latent coordinate on the active half.
    pub latent_offset: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vocab_size: 500,
            dim: 16,
            num_pairs: 400,
            num_dev_pairs: 200,
            abstract_fraction: 0.5,
            noise: 0.3,
            seed: 0,
            cluster_size: 4,
            benchmark_fraction: 0.3,
            zero_shot_fraction: 0.3,
            num_benchmarks: 2,
            benchmark_pairs: 120,
            latent_offset: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if self.dim < 2 || self.cluster_size < 2 || self.vocab_size < 2 * self.cluster_size {
            return Err(Error::invalid(
                "synthetic corpus needs dim >= 2, cluster size >= 2 and at least two clusters",
            ));
        }
        if !frac(self.abstract_fraction)
            || !frac(self.benchmark_fraction)
            || !frac(self.zero_shot_fraction)
        {
            return Err(Error::invalid("fractions must lie in [0, 1]"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !self.latent_offset.is_finite() {
            return Err(Error::invalid("noise must be finite and >= 0"));
        }
        let clusters = self.vocab_size / self.cluster_size;
        let bench = self.benchmark_clusters();
        if self.num_pairs > 0 && bench >= clusters {
            return Err(Error::invalid("no clusters left for training pairs"));
        }
        if self.num_benchmarks > 0 && self.benchmark_pairs > 0 && bench == 0 {
            return Err(Error::invalid("no clusters left for benchmarks"));
        }
        Ok(())
    }

    fn benchmark_clusters(&self) -> usize {
        let clusters = self.vocab_size / self.cluster_size;
        (self.benchmark_fraction * clusters as f64).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub ling: EmbeddingTable,
    /// Words with a visual vector only.
    pub visual: EmbeddingTable,
    pub pairs: Vec<AssociationPair>,
    pub concreteness: ConcretenessTable,
    pub senses: SenseMap,
    pub benchmarks: Vec<SimilarityBenchmark>,
    /// Cluster id of each linguistic row.
    pub clusters: Vec<usize>,
}

impl SyntheticCorpus {
    pub fn is_abstract(&self, word: &str) -> bool {
        self.concreteness.get(word) == Some(ABSTRACT_RATING)
    }

    /// Writes `ling.txt`, `visual.txt`, `pairs.tsv`, `concreteness.tsv`,
    /// `supersenses.tsv` and one `bench_<name>.tsv` per benchmark. Returns
    /// the file names written.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<String>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut names = Vec::new();
        let mut write = |name: String,
                         f: &dyn Fn(&mut BufWriter<fs::File>) -> std::io::Result<()>|
         -> Result<()> {
            let path = dir.join(&name);
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f(&mut BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;
            names.push(name);
            Ok(())
        };
        write("ling.txt".into(), &|w| self.ling.write_to(w))?;
        write("visual.txt".into(), &|w| self.visual.write_to(w))?;
        write("pairs.tsv".into(), &|w| write_pairs(&self.pairs, w))?;
        write("concreteness.tsv".into(), &|w| {
            self.concreteness.write_to(w)
        })?;
        write("supersenses.tsv".into(), &|w| {
            use std::io::Write;
            let sorted: BTreeMap<_, _> = self.senses.iter().collect();
            for (word, sense) in sorted {
                writeln!(w, "{}\t{}", word, sense)?;
            }
            w.flush()
        })?;
        for b in &self.benchmarks {
            write(format!("bench_{}.tsv", b.name), &|w| b.write_to(w))?;
        }
        Ok(names)
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Builds a corpus from `spec`; identical settings always give an identical corpus.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let half = d / 2;
    let n_clusters = spec.vocab_size / spec.cluster_size;
    let n_bench = spec.benchmark_clusters();
    let n_abstract = (spec.abstract_fraction * n_clusters as f64).round() as usize;

    // Abstract-like clusters are spread over training and benchmark clusters.
    let mut is_abstract: Vec<bool> = (0..n_clusters).map(|c| c < n_abstract).collect();
    is_abstract.shuffle(&mut rng);
    let is_bench = |c: usize| c >= n_clusters - n_bench;

    let latents: Vec<Vec<f64>> = (0..n_clusters)
        .map(|c| {
            let active = if is_abstract[c] { half..d } else { 0..half };
            let mut z = vec![0.0; d];
            for v in &mut z[active] {
                *v = spec.latent_offset + rng.sample::<f64, _>(StandardNormal);
            }
            z
        })
        .collect();
    let projection: Vec<Vec<f64>> = (0..d)
        .map(|_| normal_vec(&mut rng, d, 1.0 / (half as f64).sqrt()))
        .collect();

    let width = (spec.vocab_size.max(2) - 1).to_string().len();
    let mut words = Vec::with_capacity(spec.vocab_size);
    let mut clusters = Vec::with_capacity(spec.vocab_size);
    let mut ling = Vec::with_capacity(spec.vocab_size * d);
    let mut visual_rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut conc = Vec::new();
    let mut senses = SenseMap::new();
    for i in 0..n_clusters * spec.cluster_size {
        let c = i / spec.cluster_size;
        let word = format!("w{:0width$}", i, width = width);
        let z = &latents[c];
        let noise = normal_vec(&mut rng, d, spec.noise);
        ling.extend(z.iter().zip(&noise).map(|(a, b)| a + b));

        let visual = if is_abstract[c] {
            normal_vec(&mut rng, d, 1.0)
        } else {
            let noise = normal_vec(&mut rng, d, spec.noise);
            projection
                .iter()
                .zip(&noise)
                .map(|(row, e)| row.iter().zip(z).map(|(r, x)| r * x).sum::<f64>() + e)
                .collect()
        };
        let zero_shot = is_bench(c) && rng.random::<f64>() < spec.zero_shot_fraction;
        if !zero_shot {
            visual_rows.push((word.clone(), visual));
        }
        let (rating, sense) = if is_abstract[c] {
            (ABSTRACT_RATING, ABSTRACT_SENSE)
        } else {
            (CONCRETE_RATING, CONCRETE_SENSE)
        };
        conc.push((word.clone(), rating));
        senses.insert(word.clone(), sense.to_string());
        words.push(word);
        clusters.push(c);
    }

    let train_clusters: Vec<usize> = (0..n_clusters).filter(|&c| !is_bench(c)).collect();
    let bench_clusters: Vec<usize> = (0..n_clusters).filter(|&c| is_bench(c)).collect();
    let members = |c: usize| c * spec.cluster_size..(c + 1) * spec.cluster_size;
    let within = |rng: &mut ChaCha8Rng, pool: &[usize]| {
        let c = pool[rng.random_range(0..pool.len())];
        let mut m: Vec<usize> = members(c).collect();
        m.shuffle(rng);
        (m[0], m[1])
    };
    let across = |rng: &mut ChaCha8Rng, pool: &[usize]| loop {
        let a = pool[rng.random_range(0..pool.len())] * spec.cluster_size
            + rng.random_range(0..spec.cluster_size);
        let b = pool[rng.random_range(0..pool.len())] * spec.cluster_size
            + rng.random_range(0..spec.cluster_size);
        if clusters[a] != clusters[b] {
            return (a, b);
        }
    };

    let mut pairs = Vec::with_capacity(spec.num_pairs + spec.num_dev_pairs);
    let pair = |a: usize, b: usize, score: f64| AssociationPair {
        cue: words[a].clone(),
        target: words[b].clone(),
        score,
    };
    for _ in 0..spec.num_pairs {
        let (a, b) = within(&mut rng, &train_clusters);
        pairs.push(pair(a, b, rng.random_range(0.2..=1.0)));
    }
    // Development pairs score below 0.2: related pairs above unrelated ones.
    let all_clusters: Vec<usize> = (0..n_clusters).collect();
    for k in 0..spec.num_dev_pairs {
        if k % 2 == 0 {
            let (a, b) = within(&mut rng, &all_clusters);
            pairs.push(pair(a, b, rng.random_range(0.1..0.19)));
        } else if n_clusters > 1 {
            let (a, b) = across(&mut rng, &all_clusters);
            pairs.push(pair(a, b, rng.random_range(0.01..0.09)));
        }
    }

    let mut benchmarks = Vec::with_capacity(spec.num_benchmarks);
    for k in 0..spec.num_benchmarks {
        let mut bench_pairs = Vec::with_capacity(spec.benchmark_pairs);
        let mut seen = BTreeSet::new();
        let mut attempts = 0;
        while bench_pairs.len() < spec.benchmark_pairs
            && attempts < 100 * spec.benchmark_pairs.max(1)
        {
            attempts += 1;
            let (a, b) = if rng.random::<f64>() < 0.5 || bench_clusters.len() < 2 {
                within(&mut rng, &bench_clusters)
            } else {
                across(&mut rng, &bench_clusters)
            };
            if !seen.insert((a.min(b), a.max(b))) {
                continue;
            }
            let sim = cosine(&latents[clusters[a]], &latents[clusters[b]]).unwrap_or(0.0);
            bench_pairs.push((words[a].clone(), words[b].clone(), 5.0 * (1.0 + sim)));
        }
        benchmarks.push(SimilarityBenchmark::new(
            format!("synth{}", k + 1),
            bench_pairs,
        )?);
    }

    Ok(SyntheticCorpus {
        ling: EmbeddingTable::new(words, ling, d)?,
        visual: EmbeddingTable::from_rows(d, visual_rows)?,
        pairs,
        concreteness: ConcretenessTable::new(conc)?,
        senses,
        benchmarks,
        clusters,
    })
}

/// Per-image features around each visual vector: `images_per_word` noisy
/// copies with spread `concrete_spread` for concrete-like words and
/// `abstract_spread` for abstract-like ones.
pub fn image_features(
    corpus: &SyntheticCorpus,
    images_per_word: usize,
    concrete_spread: f64,
    abstract_spread: f64,
    seed: u64,
) -> Result<ImageFeatureSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(corpus.visual.len() * images_per_word);
    for (w, v) in corpus.visual.iter() {
        let spread = if corpus.is_abstract(w) {
            abstract_spread
        } else {
            concrete_spread
        };
        for k in 0..images_per_word {
            let noise = normal_vec(&mut rng, v.len(), spread);
            entries.push(ImageFeature {
                word: w.to_string(),
                image_id: format!("img{}", k),
                vector: v.iter().zip(&noise).map(|(a, b)| a + b).collect(),
            });
        }
    }
    ImageFeatureSet::new(entries)
}
