//! Word-similarity benchmarks scored by Spearman correlation.
//!
//! Each benchmark is split into three regions: ALL (every pair), VIS
//! (both words have a true visual vector) and ZS (at least one word does
//! not). VIS and ZS partition ALL.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::embedding_store::EmbeddingTable;
use crate::error::{Error, Result};
use crate::vecops::cosine;

/// A correlation that may be undefined (fewer than two points or a
/// constant input). Undefined values are reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub rho: f64,
    pub defined: bool,
}

impl Correlation {
    pub const UNDEFINED: Correlation = Correlation {
        rho: 0.0,
        defined: false,
    };

    pub fn value(&self) -> Option<f64> {
        self.defined.then_some(self.rho)
    }
}

/// 1-based fractional ranks; tied values share their average rank.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // positions i..j hold one tie group, ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Correlation {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Correlation::UNDEFINED;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation::UNDEFINED;
    }
    Correlation {
        rho: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        defined: true,
    }
}

/// Tie-aware Spearman correlation: Pearson correlation of fractional ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Correlation {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Correlation::UNDEFINED;
    }
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBenchmark {
    pub name: String,
    pub pairs: Vec<(String, String, f64)>,
}

impl SimilarityBenchmark {
    /// Drops later duplicates of the same unordered word pair.
    pub fn new(name: impl Into<String>, pairs: Vec<(String, String, f64)>) -> Result<Self> {
        let name = name.into();
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(pairs.len());
        let mut dropped = 0;
        for (a, b, r) in pairs {
            if !r.is_finite() {
                return Err(Error::invalid(format!(
                    "{}: non-finite rating for ({}, {})",
                    name, a, b
                )));
            }
            let key = if a <= b {
                (a.clone(), b.clone())
            } else {
                (b.clone(), a.clone())
            };
            if seen.insert(key) {
                kept.push((a, b, r));
            } else {
                dropped += 1;
            }
        }
        if dropped > 0 {
            log::warn!("{}: dropped {} duplicate pair(s)", name, dropped);
        }
        Ok(SimilarityBenchmark { name, pairs: kept })
    }

    pub fn words(&self) -> HashSet<String> {
        self.pairs
            .iter()
            .flat_map(|(a, b, _)| [a.clone(), b.clone()])
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (a, b, r) in &self.pairs {
            writeln!(out, "{}\t{}\t{}", a, b, r)?;
        }
        out.flush()
    }
}

/// `word1 TAB word2 TAB rating`; a first line whose rating does not parse
/// is taken as a header and skipped.
pub fn read_benchmark<R: BufRead>(
    reader: R,
    name: &str,
    source_name: &str,
) -> Result<SimilarityBenchmark> {
    let mut pairs = Vec::new();
    let mut first = true;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let is_first = std::mem::replace(&mut first, false);
        if fields.len() != 3 {
            return Err(Error::parse(
                source_name,
                lineno,
                "expected `word1 TAB word2 TAB rating`",
            ));
        }
        match fields[2].parse::<f64>() {
            Ok(r) => pairs.push((fields[0].to_string(), fields[1].to_string(), r)),
            Err(_) if is_first => continue,
            Err(_) => {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("bad rating `{}`", fields[2]),
                ))
            }
        }
    }
    SimilarityBenchmark::new(name, pairs)
}

pub fn load_benchmark(name: &str, path: impl AsRef<Path>) -> Result<SimilarityBenchmark> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_benchmark(BufReader::new(file), name, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    All,
    Vis,
    Zs,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::All, Region::Vis, Region::Zs];
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::All => "ALL",
            Region::Vis => "VIS",
            Region::Zs => "ZS",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub dataset: String,
    pub region: Region,
    pub correlation: Correlation,
    pub pairs_used: usize,
    /// Pairs with a word missing from the table or a zero vector.
    pub pairs_skipped: usize,
}

impl BenchmarkResult {
    pub fn region_size(&self) -> usize {
        self.pairs_used + self.pairs_skipped
    }
}

/// Scores `table` on `bench`, one result per region in ALL, VIS, ZS order.
pub fn evaluate(
    table: &EmbeddingTable,
    bench: &SimilarityBenchmark,
    visual_vocab: &HashSet<String>,
) -> Vec<BenchmarkResult> {
    Region::ALL
        .iter()
        .map(|&region| {
            let mut model = Vec::new();
            let mut human = Vec::new();
            let mut skipped = 0;
            for (a, b, rating) in &bench.pairs {
                let visual = visual_vocab.contains(a) && visual_vocab.contains(b);
                let member = match region {
                    Region::All => true,
                    Region::Vis => visual,
                    Region::Zs => !visual,
                };
                if !member {
                    continue;
                }
                match table
                    .get(a)
                    .zip(table.get(b))
                    .and_then(|(va, vb)| cosine(va, vb))
                {
                    Some(sim) => {
                        model.push(sim);
                        human.push(*rating);
                    }
                    None => skipped += 1,
                }
            }
            BenchmarkResult {
                dataset: bench.name.clone(),
                region,
                correlation: spearman(&model, &human),
                pairs_used: model.len(),
                pairs_skipped: skipped,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub model: String,
    pub result: BenchmarkResult,
}

/// Results of every model on every benchmark and region.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SuiteResults {
    pub rows: Vec<SuiteRow>,
}

fn fmt_rho(c: &Correlation) -> String {
    match c.value() {
        Some(r) => format!("{:.4}", r),
        None => "NA".to_string(),
    }
}

impl SuiteResults {
    /// `model TAB dataset TAB region TAB rho TAB used TAB skipped`, with a
    /// header line. Undefined correlations print as `NA`.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "model\tdataset\tregion\trho\tused\tskipped")?;
        for row in &self.rows {
            let r = &row.result;
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                row.model,
                r.dataset,
                r.region,
                fmt_rho(&r.correlation),
                r.pairs_used,
                r.pairs_skipped
            )?;
        }
        out.flush()
    }

    /// Column-aligned rendering for terminals.
    pub fn render_text(&self) -> String {
        let header = ["model", "dataset", "region", "rho", "used", "skipped"].map(String::from);
        let cells: Vec<[String; 6]> = std::iter::once(header)
            .chain(self.rows.iter().map(|row| {
                let r = &row.result;
                [
                    row.model.clone(),
                    r.dataset.clone(),
                    r.region.to_string(),
                    fmt_rho(&r.correlation),
                    r.pairs_used.to_string(),
                    r.pairs_skipped.to_string(),
                ]
            }))
            .collect();
        let widths: Vec<usize> = (0..6)
            .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| {
                    if c >= 3 {
                        format!("{:>w$}", cell, w = w)
                    } else {
                        format!("{:<w$}", cell, w = w)
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Cross product of models, benchmarks and regions, in that nesting order.
pub fn run_suite(
    models: &[(String, &EmbeddingTable)],
    benchmarks: &[SimilarityBenchmark],
    visual_vocab: &HashSet<String>,
) -> SuiteResults {
    let mut rows = Vec::new();
    for (name, table) in models {
        for bench in benchmarks {
            rows.extend(
                evaluate(table, bench, visual_vocab)
                    .into_iter()
                    .map(|result| SuiteRow {
                        model: name.clone(),
                        result,
                    }),
            );
        }
    }
    SuiteResults { rows }
}
