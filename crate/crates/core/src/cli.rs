//! Command-line front end.
//!
//! Every subcommand writes its outputs plus a `manifest.txt` of `key=value`
//! lines into its output directory: the subcommand, the tool version, every
//! resolved flag and the SHA-256 of every input file. `mmfuse rerun
//! --manifest <file>` repeats such a run. Any subcommand also accepts
//! `--config <file>` with the same `key=value` lines; flags given on the
//! command line win over the file.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::cross_modal_map::{
    fit_ridge, load_mapping, paired_matrices, predict_table, select_lambda, MappingModel,
};
use crate::embedding_store::{
    aggregate_image_features, load_embeddings, load_image_features, EmbeddingTable,
};
use crate::error::{Error, Result};
use crate::eval_bench::{
    load_benchmark, run_suite, Correlation, SimilarityBenchmark, SuiteResults, SuiteRow,
};
use crate::fusion_gates::{
    baseline_conc, baseline_dispersion, baseline_ridge, fuse_inputs, load_gate_model,
    load_sense_map, FusedTable, FusionInputs, GateForm, GateScope, SenseMap,
};
use crate::synthetic_data::{generate, image_features, SyntheticSpec};
use crate::trainer::{load_pairs, TrainConfig};
use crate::weight_analysis::{load_concreteness, ratio_report, Pipeline};

pub const MANIFEST: &str = "manifest.txt";
const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Flags of `subcommand` whose values name input files, and those holding
/// `name=path` lists of input files.
fn input_flags(subcommand: &str) -> (&'static [&'static str], &'static [&'static str]) {
    match subcommand {
        "map" => (&["ling", "visual", "images"], &[]),
        "fuse" => (
            &[
                "ling",
                "mapping",
                "model",
                "visual",
                "images",
                "supersenses",
            ],
            &[],
        ),
        "train" => (
            &["ling", "visual", "mapping", "pairs", "supersenses"],
            &["benchmarks"],
        ),
        "eval" => (&["visual-vocab"], &["tables", "benchmarks"]),
        "analyze" => (
            &["model", "ling", "mapping", "concreteness", "supersenses"],
            &[],
        ),
        _ => (&[], &[]),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mmfuse",
    version,
    about = "Gated fusion of linguistic and predicted visual word vectors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the ridge mapping from linguistic to visual space.
    Map(MapArgs),
    /// Build a fused table from a gate model or a baseline.
    Fuse(FuseArgs),
    /// Train gate parameters on association pairs.
    Train(TrainArgs),
    /// Score embedding tables on similarity benchmarks.
    Eval(EvalArgs),
    /// Weight-ratio diagnostics of a trained gate model.
    Analyze(AnalyzeArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
    /// Repeat a run recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub ling: PathBuf,
    /// Visual embedding table.
    #[arg(long, required_unless_present = "images", conflicts_with = "images")]
    pub visual: Option<PathBuf>,
    /// Per-image features, averaged per word.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub min_images: Option<usize>,
    #[arg(long)]
    pub max_images: Option<usize>,
    #[arg(long, conflicts_with = "lambda_grid")]
    pub lambda: Option<f64>,
    /// Candidates for cross-validation.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Ridge,
    Conc,
    Dispersion,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub ling: PathBuf,
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Gate model file.
    #[arg(
        long,
        required_unless_present = "baseline",
        conflicts_with = "baseline"
    )]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[arg(long)]
    pub visual: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub supersenses: Option<PathBuf>,
    /// l2-normalize both halves before gating.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub ling: PathBuf,
    /// Visual table: fits the mapping when `--mapping` is absent and marks
    /// the visual vocabulary for evaluation.
    #[arg(long, required_unless_present = "mapping")]
    pub visual: Option<PathBuf>,
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Ridge strength when fitting the mapping here.
    #[arg(long, default_value_t = 0.6)]
    pub lambda: f64,
    #[arg(long)]
    pub pairs: PathBuf,
    /// m, c or s.
    #[arg(long)]
    pub gate: GateScope,
    /// val or vec.
    #[arg(long)]
    pub form: GateForm,
    #[arg(long)]
    pub supersenses: Option<PathBuf>,
    /// `name=path` benchmarks, excluded from training and scored afterwards.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub benchmarks: Vec<String>,
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [0.05, 0.01, 0.5, 0.1])]
    pub lr_grid: Vec<f64>,
    #[arg(long, default_value_t = 25)]
    pub batch: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Runs with seeds seed, seed+1, ...; benchmark scores are averaged.
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `name=path` embedding tables.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub tables: Vec<String>,
    /// `name=path` benchmarks.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub benchmarks: Vec<String>,
    /// Words with true visual vectors: first token of each line, so an
    /// embedding file works too. Without it every pair is zero-shot.
    #[arg(long)]
    pub visual_vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub ling: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    #[arg(long)]
    pub concreteness: PathBuf,
    #[arg(long)]
    pub supersenses: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 400)]
    pub pairs: usize,
    #[arg(long, default_value_t = 200)]
    pub dev_pairs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub abstract_fraction: f64,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub cluster_size: usize,
    #[arg(long, default_value_t = 0.3)]
    pub benchmark_fraction: f64,
    #[arg(long, default_value_t = 0.3)]
    pub zero_shot_fraction: f64,
    #[arg(long, default_value_t = 2)]
    pub num_benchmarks: usize,
    #[arg(long, default_value_t = 120)]
    pub benchmark_pairs: usize,
    /// Also write per-image features (`images.tsv`) when positive.
    #[arg(long, default_value_t = 0)]
    pub images_per_word: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory replacing the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs the tool on `args` (program name first) and returns the exit code:
/// 0 on success, 1 for domain errors, 2 for usage and IO errors.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    match dispatch(args) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            let _ = e.print();
            e.exit_code()
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

enum Failure {
    Usage(clap::Error),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

fn dispatch(args: Vec<String>) -> std::result::Result<(), Failure> {
    let args = merge_config(args)?;
    let matches = Cli::command()
        .try_get_matches_from(&args)
        .map_err(Failure::Usage)?;
    let cli = Cli::from_arg_matches(&matches).map_err(Failure::Usage)?;
    let (name, sub) = matches.subcommand().expect("subcommand required");

    if let Command::Rerun(r) = &cli.command {
        let argv = rerun_args(&args[0], r)?;
        return dispatch(argv);
    }
    let out_dir = match &cli.command {
        Command::Map(a) => cmd_map(a)?,
        Command::Fuse(a) => cmd_fuse(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Analyze(a) => cmd_analyze(a)?,
        Command::Synth(a) => cmd_synth(a)?,
        Command::Rerun(_) => unreachable!(),
    };
    let flags = resolved_flags(name, sub);
    write_manifest(&out_dir, name, &flags)?;
    Ok(())
}

/// Reads `key=value` lines, skipping blanks and `#` comments.
fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::parse(&path.display().to_string(), i + 1, "expected `key=value`")
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn is_meta_key(key: &str) -> bool {
    key == "subcommand" || key == "tool_version" || key.starts_with("sha256.")
}

fn flag_given(args: &[String], key: &str) -> bool {
    let long = format!("--{}", key);
    args.iter().any(|a| {
        *a == long
            || a.strip_prefix(&long)
                .is_some_and(|rest| rest.starts_with('='))
    })
}

/// Replaces `--config <file>` by the file's flags that are not already
/// given explicitly.
fn merge_config(args: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = args
        .iter()
        .position(|a| a == "--config" || a.starts_with("--config="))
    else {
        return Ok(args);
    };
    let mut args = args;
    let path = match args[pos].strip_prefix("--config=") {
        Some(p) => {
            let p = p.to_string();
            args.remove(pos);
            p
        }
        None => {
            if pos + 1 >= args.len() {
                return Err(Error::invalid("--config needs a file"));
            }
            let p = args.remove(pos + 1);
            args.remove(pos);
            p
        }
    };
    let entries = read_key_values(Path::new(&path))?;
    if let Some((_, sub)) = entries.iter().find(|(k, _)| k == "subcommand") {
        if args.get(1) != Some(sub) {
            return Err(Error::invalid(format!("config is for `{}`", sub)));
        }
    }
    let extra: Vec<String> = entries
        .into_iter()
        .filter(|(k, _)| !is_meta_key(k) && !flag_given(&args, k))
        .map(|(k, v)| format!("--{}={}", k, v))
        .collect();
    args.extend(extra);
    Ok(args)
}

fn rerun_args(program: &str, r: &RerunArgs) -> Result<Vec<String>> {
    let entries = read_key_values(&r.manifest)?;
    let get = |key: &str| {
        entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
    };
    let sub = get("subcommand").ok_or_else(|| Error::invalid("manifest has no `subcommand`"))?;
    if sub == "rerun" {
        return Err(Error::invalid("manifest records a rerun"));
    }
    let mut flags: Vec<(String, String)> = entries
        .iter()
        .filter(|(k, _)| !is_meta_key(k))
        .cloned()
        .collect();
    for (key, expected) in entries.iter().filter(|(k, _)| k.starts_with("sha256.")) {
        let name = &key["sha256.".len()..];
        let path = input_paths(&sub, &flags)
            .into_iter()
            .find(|(k, _)| k == name)
            .map(|(_, p)| p)
            .ok_or_else(|| {
                Error::invalid(format!("manifest digest `{}` has no matching flag", key))
            })?;
        let actual = sha256_file(Path::new(&path))?;
        if &actual != expected {
            return Err(Error::invalid(format!(
                "input `{}` changed since the recorded run",
                path
            )));
        }
    }
    if let Some(out) = &r.out {
        let key = if sub == "synth" { "out-dir" } else { "out" };
        let out = out.display().to_string();
        match flags.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = out,
            None => flags.push((key.to_string(), out)),
        }
    }
    let mut argv = vec![program.to_string(), sub];
    argv.extend(flags.into_iter().map(|(k, v)| format!("--{}={}", k, v)));
    Ok(argv)
}

/// Every flag of the subcommand with its value, defaults included, in
/// declaration order. Multiple values are joined by commas.
fn resolved_flags(name: &str, sub: &clap::ArgMatches) -> Vec<(String, String)> {
    let cmd = Cli::command();
    let sc = cmd.find_subcommand(name).expect("known subcommand");
    sc.get_arguments()
        .filter_map(|arg| {
            let long = arg.get_long()?;
            let raw = sub.get_raw(arg.get_id().as_str())?;
            let values: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            Some((long.to_string(), values.join(",")))
        })
        .collect()
}

/// `(digest name, path)` for every input file among `flags`.
fn input_paths(subcommand: &str, flags: &[(String, String)]) -> Vec<(String, String)> {
    let (plain, named) = input_flags(subcommand);
    let mut out = Vec::new();
    for (k, v) in flags {
        if plain.contains(&k.as_str()) {
            out.push((k.clone(), v.clone()));
        } else if named.contains(&k.as_str()) {
            for item in v.split(',').filter(|s| !s.is_empty()) {
                if let Some((n, p)) = item.split_once('=') {
                    out.push((format!("{}.{}", k, n), p.to_string()));
                }
            }
        }
    }
    out
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn write_manifest(dir: &Path, name: &str, flags: &[(String, String)]) -> Result<()> {
    let mut lines = vec![
        format!("subcommand={}", name),
        format!("tool_version={}", VERSION),
    ];
    lines.extend(flags.iter().map(|(k, v)| format!("{}={}", k, v)));
    for (key, path) in input_paths(name, flags) {
        lines.push(format!("sha256.{}={}", key, sha256_file(Path::new(&path))?));
    }
    write_file(&dir.join(MANIFEST), |w| {
        for l in &lines {
            writeln!(w, "{}", l)?;
        }
        Ok(())
    })
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn split_named(item: &str) -> Result<(&str, &str)> {
    item.split_once('=')
        .filter(|(n, p)| !n.is_empty() && !p.is_empty())
        .ok_or_else(|| Error::invalid(format!("expected `name=path`, got `{}`", item)))
}

fn load_benchmarks(items: &[String]) -> Result<Vec<SimilarityBenchmark>> {
    items
        .iter()
        .map(|item| {
            let (name, path) = split_named(item)?;
            load_benchmark(name, path)
        })
        .collect()
}

fn read_word_list(path: &Path) -> Result<HashSet<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut words = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(w) = line.split_whitespace().next() {
            words.insert(w.to_string());
        }
    }
    Ok(words)
}

fn load_visual(
    visual: Option<&PathBuf>,
    images: Option<&PathBuf>,
    min: Option<usize>,
    max: Option<usize>,
    seed: u64,
) -> Result<Option<EmbeddingTable>> {
    match (visual, images) {
        (Some(v), _) => load_embeddings(v, None).map(Some),
        (None, Some(i)) => {
            let features = load_image_features(i)?.filter_image_counts(min, max, seed)?;
            aggregate_image_features(&features).map(Some)
        }
        (None, None) => Ok(None),
    }
}

fn cmd_map(a: &MapArgs) -> Result<PathBuf> {
    let ling = load_embeddings(&a.ling, None)?;
    let visual = load_visual(
        a.visual.as_ref(),
        a.images.as_ref(),
        a.min_images,
        a.max_images,
        a.seed,
    )?
    .expect("clap requires --visual or --images");
    let (l_v, v, words) = paired_matrices(&ling, &visual)?;
    let model = match &a.lambda_grid {
        Some(grid) => {
            let sel = select_lambda(&l_v, &v, grid, a.folds, a.seed)?;
            println!("lambda\tcv_mse");
            for (lambda, mse) in &sel.mse {
                println!("{}\t{:.8}", lambda, mse);
            }
            fit_ridge(&l_v, &v, sel.best)?
        }
        None => fit_ridge(&l_v, &v, a.lambda.unwrap_or(0.6))?,
    };
    println!(
        "chosen lambda {} on {} paired words",
        model.lambda(),
        words.len()
    );
    create_dir(&a.out)?;
    model.save(a.out.join("mapping.txt"))?;
    Ok(a.out.clone())
}

fn predicted(ling: &EmbeddingTable, mapping: Option<&PathBuf>) -> Result<EmbeddingTable> {
    let path = mapping.ok_or_else(|| Error::invalid("--mapping is required here"))?;
    let model: MappingModel = load_mapping(path)?;
    predict_table(ling, &model)
}

fn cmd_fuse(a: &FuseArgs) -> Result<PathBuf> {
    let ling = load_embeddings(&a.ling, None)?;
    let need_visual = || -> Result<EmbeddingTable> {
        load_visual(a.visual.as_ref(), a.images.as_ref(), None, None, 0)?
            .ok_or_else(|| Error::invalid("--visual or --images is required for this baseline"))
    };
    let fused: FusedTable = match (a.baseline, &a.model) {
        (Some(Baseline::Ridge), _) => {
            baseline_ridge(&ling, &predicted(&ling, a.mapping.as_ref())?)?
        }
        (Some(Baseline::Conc), _) => baseline_conc(&ling, &need_visual()?)?,
        (Some(Baseline::Dispersion), _) => {
            let images = a.images.as_ref().ok_or_else(|| {
                Error::invalid("--images is required for the dispersion baseline")
            })?;
            let features = load_image_features(images)?;
            let visual = match &a.visual {
                Some(v) => load_embeddings(v, None)?,
                None => aggregate_image_features(&features)?,
            };
            let d = baseline_dispersion(&ling, &visual, &features)?;
            println!(
                "median dispersion {:.6}; visual half zeroed for {} words ({} without dispersion)",
                d.median, d.abstract_words, d.missing_dispersion
            );
            d.table
        }
        (None, Some(model_path)) => {
            let model = load_gate_model(model_path)?;
            let senses = a.supersenses.as_ref().map(load_sense_map).transpose()?;
            let inputs =
                FusionInputs::new(&ling, &predicted(&ling, a.mapping.as_ref())?, a.normalize)?;
            fuse_inputs(&inputs, &model, senses.as_ref())?
        }
        (None, None) => unreachable!("clap requires --model or --baseline"),
    };
    create_dir(&a.out)?;
    fused.table().save(a.out.join("fused.txt"))?;
    println!(
        "{} fused rows of dimension {}",
        fused.table().len(),
        fused.table().dim()
    );
    Ok(a.out.clone())
}

/// Mean of the defined correlations per (dataset, region) cell across runs.
fn average_results(name: &str, runs: &[Vec<crate::eval_bench::BenchmarkResult>]) -> SuiteResults {
    let rows = (0..runs[0].len())
        .map(|i| {
            let mut result = runs[0][i].clone();
            let defined: Vec<f64> = runs
                .iter()
                .filter_map(|r| r[i].correlation.value())
                .collect();
            result.correlation = if defined.is_empty() {
                Correlation::UNDEFINED
            } else {
                Correlation {
                    rho: defined.iter().sum::<f64>() / defined.len() as f64,
                    defined: true,
                }
            };
            SuiteRow {
                model: name.to_string(),
                result,
            }
        })
        .collect();
    SuiteResults { rows }
}

fn cmd_train(a: &TrainArgs) -> Result<PathBuf> {
    if a.repeats == 0 {
        return Err(Error::invalid("--repeats must be at least 1"));
    }
    let ling = load_embeddings(&a.ling, None)?;
    let visual = a
        .visual
        .as_ref()
        .map(|p| load_embeddings(p, None))
        .transpose()?;
    let pred = match (&a.mapping, &visual) {
        (Some(_), _) => predicted(&ling, a.mapping.as_ref())?,
        (None, Some(v)) => {
            let (l_v, vv, _) = paired_matrices(&ling, v)?;
            predict_table(&ling, &fit_ridge(&l_v, &vv, a.lambda)?)?
        }
        (None, None) => unreachable!("clap requires --mapping or --visual"),
    };
    let inputs = FusionInputs::new(&ling, &pred, a.normalize)?;
    let senses: Option<SenseMap> = a.supersenses.as_ref().map(load_sense_map).transpose()?;
    if a.gate == GateScope::Category && senses.is_none() {
        log::warn!("category gates without --supersenses: every word uses the default sense");
    }
    let benchmarks = load_benchmarks(&a.benchmarks)?;
    let bench_vocab: HashSet<String> = benchmarks.iter().flat_map(|b| b.words()).collect();
    let (train_set, dev) = load_pairs(&a.pairs, a.threshold, &bench_vocab, &ling.word_set())?;
    log::info!(
        "{} training and {} development pairs",
        train_set.len(),
        dev.len()
    );
    let visual_vocab = visual
        .as_ref()
        .map(EmbeddingTable::word_set)
        .unwrap_or_default();

    let pipeline = Pipeline {
        inputs: &inputs,
        senses: senses.as_ref(),
        dev: &dev,
        benchmarks: &benchmarks,
        visual_vocab: &visual_vocab,
        scope: a.gate,
        form: a.form,
        config: TrainConfig {
            learning_rates: a.lr_grid.clone(),
            batch_size: a.batch,
            epochs: a.epochs,
            margin: a.margin,
            seed: a.seed,
            adagrad_epsilon: a.epsilon,
        },
    };
    create_dir(&a.out)?;
    let mut all_results = Vec::new();
    for k in 0..a.repeats {
        let seed = a.seed + k;
        let run = pipeline.run(&train_set, seed)?;
        let suffix = if a.repeats == 1 {
            String::new()
        } else {
            format!(".{}", k)
        };
        run.model
            .save(a.out.join(format!("gate_model{}.txt", suffix)))?;
        write_file(&a.out.join(format!("train_report{}.tsv", suffix)), |w| {
            run.report.write_tsv(w)
        })?;
        match run.report.best_record() {
            Some(r) => println!(
                "seed {}: best dev spearman {:.4} at lr {} epoch {}",
                seed, r.dev.rho, r.lr, r.epoch
            ),
            None => println!("seed {}: no training epochs, initial model written", seed),
        }
        all_results.push(run.results);
    }
    if !benchmarks.is_empty() {
        let suite = average_results(&format!("gate-{}-{}", a.gate, a.form), &all_results);
        write_file(&a.out.join("eval.tsv"), |w| suite.write_tsv(w))?;
        print!("{}", suite.render_text());
    }
    Ok(a.out.clone())
}

fn cmd_eval(a: &EvalArgs) -> Result<PathBuf> {
    let mut names = Vec::new();
    let mut tables = Vec::new();
    for item in &a.tables {
        let (name, path) = split_named(item)?;
        names.push(name.to_string());
        tables.push(load_embeddings(path, None)?);
    }
    let benchmarks = load_benchmarks(&a.benchmarks)?;
    let visual_vocab = a
        .visual_vocab
        .as_deref()
        .map(read_word_list)
        .transpose()?
        .unwrap_or_default();
    let named: Vec<(String, &EmbeddingTable)> = names.into_iter().zip(tables.iter()).collect();
    let suite = run_suite(&named, &benchmarks, &visual_vocab);
    create_dir(&a.out)?;
    write_file(&a.out.join("results.tsv"), |w| suite.write_tsv(w))?;
    print!("{}", suite.render_text());
    Ok(a.out.clone())
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<PathBuf> {
    let model = load_gate_model(&a.model)?;
    let ling = load_embeddings(&a.ling, None)?;
    let inputs = FusionInputs::new(&ling, &predicted(&ling, Some(&a.mapping))?, a.normalize)?;
    let conc = load_concreteness(&a.concreteness)?;
    let senses = a.supersenses.as_ref().map(load_sense_map).transpose()?;
    let report = ratio_report(&model, &inputs, &conc, senses.as_ref(), a.top_k)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("ratio_report.txt"), |w| report.write_to(w))?;
    let fmt = |m: Option<f64>| m.map_or("NA".to_string(), |x| format!("{:.4}", x));
    println!(
        "concrete {} : 1, abstract {} : 1, spearman(concreteness, ratio) {}",
        fmt(report.concrete.mean),
        fmt(report.abstract_.mean),
        fmt(report.correlation.value())
    );
    Ok(a.out.clone())
}

fn cmd_synth(a: &SynthArgs) -> Result<PathBuf> {
    let spec = SyntheticSpec {
        vocab_size: a.vocab_size,
        dim: a.dim,
        num_pairs: a.pairs,
        num_dev_pairs: a.dev_pairs,
        abstract_fraction: a.abstract_fraction,
        noise: a.noise,
        seed: a.seed,
        cluster_size: a.cluster_size,
        benchmark_fraction: a.benchmark_fraction,
        zero_shot_fraction: a.zero_shot_fraction,
        num_benchmarks: a.num_benchmarks,
        benchmark_pairs: a.benchmark_pairs,
        ..SyntheticSpec::default()
    };
    let corpus = generate(&spec)?;
    let mut names = corpus.write_dir(&a.out_dir)?;
    if a.images_per_word > 0 {
        let images = image_features(&corpus, a.images_per_word, 0.2, 1.0, a.seed)?;
        write_file(&a.out_dir.join("images.tsv"), |w| images.write_to(w))?;
        names.push("images.tsv".to_string());
    }
    println!(
        "{} words, {} with visual vectors, {} pairs; wrote {} to {}",
        corpus.ling.len(),
        corpus.visual.len(),
        corpus.pairs.len(),
        names.join(", "),
        a.out_dir.display()
    );
    Ok(a.out_dir.clone())
}
