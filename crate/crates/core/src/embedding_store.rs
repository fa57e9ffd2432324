//! Word embedding tables and per-image visual features.
//!
//! Text tables use the usual pre-trained vector layout, one word per line:
//! `word v1 v2 ... vd`, whitespace separated, no header. Image features are
//! tab separated: `word TAB image_id TAB v1 SP ... SP vd`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vecops::{cosine, format_sig6, norm};

/// Ordered vocabulary with one fixed-width row per word.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    dim: usize,
}

impl EmbeddingTable {
    /// Builds a table from row-major `data`. Words must be unique and
    /// non-empty, and every entry finite.
    pub fn new(words: Vec<String>, data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if data.len() != words.len() * dim {
            return Err(Error::Dimension {
                expected: words.len() * dim,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value in row `{}`",
                words[pos / dim]
            )));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("invalid word token {:?}", w)));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate word `{}`", w)));
            }
        }
        Ok(EmbeddingTable {
            words,
            index,
            data,
            dim,
        })
    }

    pub fn from_rows<I>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut words = Vec::new();
        let mut data = Vec::new();
        for (w, v) in rows {
            if v.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: v.len(),
                });
            }
            words.push(w);
            data.extend(v);
        }
        Self::new(words, data, dim)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index_of(word).map(|i| self.row(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.words
            .iter()
            .zip(self.data.chunks_exact(self.dim))
            .map(|(w, r)| (w.as_str(), r))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn word_set(&self) -> HashSet<String> {
        self.words.iter().cloned().collect()
    }

    /// Rows for `words`, in that order. Unknown words are an error.
    pub fn select<S: AsRef<str>>(&self, words: &[S]) -> Result<EmbeddingTable> {
        let mut data = Vec::with_capacity(words.len() * self.dim);
        for w in words {
            let row = self
                .get(w.as_ref())
                .ok_or_else(|| Error::invalid(format!("word `{}` not in table", w.as_ref())))?;
            data.extend_from_slice(row);
        }
        EmbeddingTable::new(
            words.iter().map(|w| w.as_ref().to_string()).collect(),
            data,
            self.dim,
        )
    }

    /// Row-wise l2 normalization. Returns the new table and the number of
    /// zero rows, which are left at zero.
    pub fn normalized(&self) -> (EmbeddingTable, usize) {
        let mut zeros = 0;
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.dim) {
            let (v, was_zero) = l2_normalize(row);
            zeros += was_zero as usize;
            data.extend(v);
        }
        let table = EmbeddingTable {
            words: self.words.clone(),
            index: self.index.clone(),
            data,
            dim: self.dim,
        };
        (table, zeros)
    }

    /// Applies `f` to every entry.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<EmbeddingTable> {
        EmbeddingTable::new(
            self.words.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
            self.dim,
        )
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (w, row) in self.iter() {
            out.write_all(w.as_bytes())?;
            for v in row {
                write!(out, " {}", format_sig6(*v))?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    /// Writes the table in the load format with six significant digits.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

/// Result of parsing a text embedding file.
#[derive(Debug, Clone)]
pub struct LoadedTable {
    pub table: EmbeddingTable,
    /// Rows dropped because their word had already been seen.
    pub duplicates: usize,
}

/// Parses `word v1 ... vd` rows. `source_name` is used in error messages.
pub fn read_embeddings<R: BufRead>(
    reader: R,
    expected_dim: Option<usize>,
    source_name: &str,
) -> Result<LoadedTable> {
    let mut dim = expected_dim;
    let mut words = Vec::new();
    let mut seen = HashSet::new();
    let mut data = Vec::new();
    let mut duplicates = 0;

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        let mut values = Vec::with_capacity(dim.unwrap_or(0));
        for f in fields {
            let v: f64 = f.parse().map_err(|_| {
                Error::parse(source_name, lineno, format!("non-numeric field `{}`", f))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("non-finite value `{}`", f),
                ));
            }
            values.push(v);
        }
        match dim {
            Some(d) if d != values.len() => {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("dimension mismatch: expected {}, found {}", d, values.len()),
                ))
            }
            None if values.is_empty() => {
                return Err(Error::parse(source_name, lineno, "row has no values"))
            }
            None => dim = Some(values.len()),
            _ => {}
        }
        if !seen.insert(word.to_string()) {
            duplicates += 1;
            continue;
        }
        words.push(word.to_string());
        data.extend(values);
    }

    let dim = match dim {
        Some(d) if !words.is_empty() => d,
        _ => return Err(Error::NoRows(source_name.to_string())),
    };
    if duplicates > 0 {
        log::warn!("{}: skipped {} duplicate word(s)", source_name, duplicates);
    }
    Ok(LoadedTable {
        table: EmbeddingTable::new(words, data, dim)?,
        duplicates,
    })
}

pub fn load_embeddings(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(
        BufReader::new(file),
        expected_dim,
        &path.display().to_string(),
    )
    .map(|l| l.table)
}

/// Scales `v` to unit Euclidean norm. The flag is set when `v` is all zero,
/// in which case the zero vector is returned.
pub fn l2_normalize(v: &[f64]) -> (Vec<f64>, bool) {
    let n = norm(v);
    if n == 0.0 {
        return (vec![0.0; v.len()], true);
    }
    (v.iter().map(|x| x / n).collect(), false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeature {
    pub word: String,
    pub image_id: String,
    pub vector: Vec<f64>,
}

/// Per-image CNN feature vectors, several per word.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatureSet {
    entries: Vec<ImageFeature>,
    dim: usize,
}

impl ImageFeatureSet {
    pub fn new(entries: Vec<ImageFeature>) -> Result<Self> {
        let dim = entries.first().map(|e| e.vector.len()).unwrap_or(0);
        let mut keys = HashSet::new();
        for e in &entries {
            if e.vector.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: e.vector.len(),
                });
            }
            if e.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite feature for ({}, {})",
                    e.word, e.image_id
                )));
            }
            if !keys.insert((e.word.as_str(), e.image_id.as_str())) {
                return Err(Error::invalid(format!(
                    "duplicate image ({}, {})",
                    e.word, e.image_id
                )));
            }
        }
        Ok(ImageFeatureSet { entries, dim })
    }

    pub fn entries(&self) -> &[ImageFeature] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Feature vectors grouped by word, words in lexicographic order.
    pub fn by_word(&self) -> BTreeMap<&str, Vec<&[f64]>> {
        let mut groups: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
        for e in &self.entries {
            groups.entry(&e.word).or_default().push(&e.vector);
        }
        groups
    }

    pub fn images_of(&self, word: &str) -> Vec<&[f64]> {
        self.entries
            .iter()
            .filter(|e| e.word == word)
            .map(|e| e.vector.as_slice())
            .collect()
    }

    /// Corpus-construction filters: drop words with fewer than `min_images`
    /// images and keep a seeded random sample of at most `max_images` per word.
    pub fn filter_image_counts(
        &self,
        min_images: Option<usize>,
        max_images: Option<usize>,
        seed: u64,
    ) -> Result<ImageFeatureSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_word: BTreeMap<&str, Vec<&ImageFeature>> = BTreeMap::new();
        for e in &self.entries {
            by_word.entry(&e.word).or_default().push(e);
        }
        let mut kept = Vec::new();
        for (_, mut images) in by_word {
            if min_images.is_some_and(|m| images.len() < m) {
                continue;
            }
            if let Some(max) = max_images {
                if images.len() > max {
                    images.shuffle(&mut rng);
                    images.truncate(max);
                }
            }
            kept.extend(images.into_iter().cloned());
        }
        ImageFeatureSet::new(kept)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.entries {
            write!(out, "{}\t{}\t", e.word, e.image_id)?;
            for (i, v) in e.vector.iter().enumerate() {
                if i > 0 {
                    out.write_all(b" ")?;
                }
                out.write_all(format_sig6(*v).as_bytes())?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

pub fn read_image_features<R: BufRead>(reader: R, source_name: &str) -> Result<ImageFeatureSet> {
    let mut entries = Vec::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let vector = fields[2]
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::parse(source_name, lineno, format!("bad feature value `{}`", f))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("dimension mismatch: expected {}, found {}", d, vector.len()),
                ))
            }
            _ => {}
        }
        entries.push(ImageFeature {
            word: fields[0].to_string(),
            image_id: fields[1].to_string(),
            vector,
        });
    }
    if entries.is_empty() {
        return Err(Error::NoRows(source_name.to_string()));
    }
    ImageFeatureSet::new(entries)
}

pub fn load_image_features(path: impl AsRef<Path>) -> Result<ImageFeatureSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_image_features(BufReader::new(file), &path.display().to_string())
}

/// Mean image vector per word. Words come out in lexicographic order.
pub fn aggregate_image_features(features: &ImageFeatureSet) -> Result<EmbeddingTable> {
    if features.is_empty() {
        return Err(Error::invalid("empty image feature set"));
    }
    let dim = features.dim();
    let mut words = Vec::new();
    let mut data = Vec::new();
    for (word, images) in features.by_word() {
        let mut mean = vec![0.0; dim];
        for img in &images {
            for (m, v) in mean.iter_mut().zip(img.iter()) {
                *m += v;
            }
        }
        let n = images.len() as f64;
        data.extend(mean.into_iter().map(|m| m / n));
        words.push(word.to_string());
    }
    EmbeddingTable::new(words, data, dim)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dispersion {
    /// Mean pairwise cosine distance, in [0, 2].
    pub value: f64,
    /// Pairs involving a zero-norm image; each counted as distance 1.
    pub zero_norm_pairs: usize,
}

/// Average pairwise cosine distance between the images of `word`.
pub fn image_dispersion(features: &ImageFeatureSet, word: &str) -> Result<Dispersion> {
    dispersion_of(&features.images_of(word)).ok_or_else(|| Error::DispersionUndefined {
        word: word.to_string(),
        images: features.images_of(word).len(),
    })
}

pub(crate) fn dispersion_of(images: &[&[f64]]) -> Option<Dispersion> {
    let n = images.len();
    if n < 2 {
        return None;
    }
    let mut total = 0.0;
    let mut zero_norm_pairs = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += match cosine(images[i], images[j]) {
                Some(c) => 1.0 - c,
                None => {
                    zero_norm_pairs += 1;
                    1.0
                }
            };
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Some(Dispersion {
        value: total / pairs,
        zero_norm_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn parse(text: &str, dim: Option<usize>) -> Result<LoadedTable> {
        read_embeddings(text.as_bytes(), dim, "mem")
    }

    #[test]
    fn loads_two_rows() {
        let t = parse("a 1.0 0.0\nb 0.0 1.0\n", None).unwrap().table;
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim(), 2);
        assert_eq!(t.get("b"), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn empty_file_has_no_rows() {
        let err = parse("", None).unwrap_err();
        assert!(err.to_string().contains("no rows"), "{}", err);
    }

    #[test]
    fn ragged_rows_error_on_second_line() {
        match parse("a 1.0\nb 1.0 2.0\n", None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn expected_dim_checked_on_first_line() {
        match parse("a 1.0 2.0\n", Some(3)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn non_numeric_field_rejected() {
        match parse("a 1.0 x\n", None) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 1);
                assert!(message.contains("non-numeric"));
            }
            other => panic!("unexpected {:?}", other),
        }
        assert!(parse("a 1.0 nan\n", None).is_err());
    }

    #[test]
    fn duplicates_keep_first() {
        let loaded = parse("a 1 2\nb 3 4\na 5 6\n", None).unwrap();
        assert_eq!(loaded.duplicates, 1);
        assert_eq!(loaded.table.get("a"), Some(&[1.0, 2.0][..]));
        assert_eq!(loaded.table.words(), &["a", "b"]);
    }

    #[test]
    fn normalize_examples() {
        let (v, zero) = l2_normalize(&[3.0, 4.0]);
        assert!(!zero);
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[0.0, 0.0]), (vec![0.0, 0.0], true));
        assert_eq!(l2_normalize(&[1.0, 0.0, 0.0]), (vec![1.0, 0.0, 0.0], false));
    }

    fn features(rows: &[(&str, &str, &[f64])]) -> ImageFeatureSet {
        ImageFeatureSet::new(
            rows.iter()
                .map(|(w, id, v)| ImageFeature {
                    word: w.to_string(),
                    image_id: id.to_string(),
                    vector: v.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let set = features(&[
            ("w", "1", &[1.0, 1.0]),
            ("w", "2", &[3.0, 3.0]),
            ("x", "1", &[5.0, 7.0]),
        ]);
        let t = aggregate_image_features(&set).unwrap();
        assert_eq!(t.get("w"), Some(&[2.0, 2.0][..]));
        assert_eq!(t.get("x"), Some(&[5.0, 7.0][..]));
        assert!(aggregate_image_features(&ImageFeatureSet::new(vec![]).unwrap()).is_err());
    }

    #[test]
    fn aggregate_matches_streaming_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vectors: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..5).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let set = ImageFeatureSet::new(
            vectors
                .iter()
                .enumerate()
                .map(|(i, v)| ImageFeature {
                    word: "w".into(),
                    image_id: i.to_string(),
                    vector: v.clone(),
                })
                .collect(),
        )
        .unwrap();
        // Welford-style running mean.
        let mut mean = vec![0.0; 5];
        for (k, v) in vectors.iter().enumerate() {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += (x - *m) / (k + 1) as f64;
            }
        }
        let t = aggregate_image_features(&set).unwrap();
        for (a, b) in t.get("w").unwrap().iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dispersion_examples() {
        let same = features(&[("w", "1", &[1.0, 2.0]), ("w", "2", &[1.0, 2.0])]);
        assert!(image_dispersion(&same, "w").unwrap().value.abs() < 1e-15);
        let ortho = features(&[("w", "1", &[1.0, 0.0]), ("w", "2", &[0.0, 1.0])]);
        assert_eq!(image_dispersion(&ortho, "w").unwrap().value, 1.0);
        let single = features(&[("w", "1", &[1.0, 0.0])]);
        assert!(matches!(
            image_dispersion(&single, "w"),
            Err(Error::DispersionUndefined { images: 1, .. })
        ));
        let with_zero = features(&[("w", "1", &[0.0, 0.0]), ("w", "2", &[0.0, 1.0])]);
        let d = image_dispersion(&with_zero, "w").unwrap();
        assert_eq!((d.value, d.zero_norm_pairs), (1.0, 1));
    }

    #[test]
    fn dispersion_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vecs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let rows: Vec<(String, Vec<f64>)> = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| (i.to_string(), v.clone()))
            .collect();
        let set = ImageFeatureSet::new(
            rows.iter()
                .map(|(id, v)| ImageFeature {
                    word: "w".into(),
                    image_id: id.clone(),
                    vector: v.clone(),
                })
                .collect(),
        )
        .unwrap();
        // Full ordered double loop over i != j, halved.
        let mut sum = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    let d: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
                    let ni: f64 = vecs[i].iter().map(|a| a * a).sum::<f64>().sqrt();
                    let nj: f64 = vecs[j].iter().map(|a| a * a).sum::<f64>().sqrt();
                    sum += 1.0 - d / (ni * nj);
                }
            }
        }
        let expected = sum / 20.0;
        assert!((image_dispersion(&set, "w").unwrap().value - expected).abs() < 1e-12);
    }

    #[test]
    fn image_count_filters() {
        let set = features(&[
            ("a", "1", &[1.0]),
            ("b", "1", &[1.0]),
            ("b", "2", &[2.0]),
            ("b", "3", &[3.0]),
        ]);
        let f = set.filter_image_counts(Some(2), Some(2), 0).unwrap();
        assert_eq!(f.entries().len(), 2);
        assert!(f.entries().iter().all(|e| e.word == "b"));
    }

    #[test]
    fn image_tsv_parse() {
        let set = read_image_features("a\timg1\t1 2\na\timg2\t3 4\n".as_bytes(), "mem").unwrap();
        assert_eq!(set.dim(), 2);
        assert!(read_image_features("a\timg1\t1 2\na\timg2\t3\n".as_bytes(), "mem").is_err());
        assert!(read_image_features("a\timg1\t1 2\na\timg1\t3 4\n".as_bytes(), "mem").is_err());
    }

    fn arb_table() -> impl Strategy<Value = EmbeddingTable> {
        (1usize..5, 1usize..8).prop_flat_map(|(dim, n)| {
            prop::collection::vec(prop::collection::vec(-1e6f64..1e6, dim), n).prop_map(
                move |rows| {
                    EmbeddingTable::from_rows(
                        dim,
                        rows.into_iter()
                            .enumerate()
                            .map(|(i, r)| (format!("w{}", i), r)),
                    )
                    .unwrap()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(table in arb_table()) {
            let mut first = Vec::new();
            table.write_to(&mut first).unwrap();
            let reloaded = read_embeddings(first.as_slice(), Some(table.dim()), "mem").unwrap().table;
            prop_assert_eq!(reloaded.words(), table.words());
            let mut second = Vec::new();
            reloaded.write_to(&mut second).unwrap();
            prop_assert_eq!(first, second);
            for (a, b) in reloaded.data().iter().zip(table.data()) {
                prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-300));
            }
        }

        #[test]
        fn normalize_idempotent(v in prop::collection::vec(-1e3f64..1e3, 1..10)) {
            let (once, _) = l2_normalize(&v);
            let (twice, _) = l2_normalize(&once);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn aggregate_permutation_invariant(
            vecs in prop::collection::vec(prop::collection::vec(-10f64..10.0, 3), 2..12),
            seed in any::<u64>(),
        ) {
            let entries: Vec<ImageFeature> = vecs.iter().enumerate().map(|(i, v)| ImageFeature {
                word: format!("w{}", i % 3),
                image_id: i.to_string(),
                vector: v.clone(),
            }).collect();
            let mut shuffled = entries.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = aggregate_image_features(&ImageFeatureSet::new(entries).unwrap()).unwrap();
            let b = aggregate_image_features(&ImageFeatureSet::new(shuffled).unwrap()).unwrap();
            prop_assert_eq!(a.words(), b.words());
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn dispersion_scale_invariant(
            vecs in prop::collection::vec(prop::collection::vec(0.1f64..10.0, 3), 2..6),
            scale in 0.01f64..100.0,
            which in 0usize..6,
        ) {
            let mk = |vs: &[Vec<f64>]| ImageFeatureSet::new(vs.iter().enumerate().map(|(i, v)| ImageFeature {
                word: "w".into(), image_id: i.to_string(), vector: v.clone(),
            }).collect()).unwrap();
            let mut scaled = vecs.clone();
            let k = which % scaled.len();
            scaled[k].iter_mut().for_each(|x| *x *= scale);
            let a = image_dispersion(&mk(&vecs), "w").unwrap().value;
            let b = image_dispersion(&mk(&scaled), "w").unwrap().value;
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&a));
        }
    }
}
