//! Gated fusion of linguistic and predicted visual vectors.
//!
//! A fused vector is `[g_L * L ; g_P * P]`, where the gates are either a
//! scalar (value form) or a per-dimension vector (vector form), and come
//! from one of three scopes:
//!
//! * modality: one pair of gates shared by every word,
//! * category: one pair per supersense, with a `__default__` fallback,
//! * sample: computed per word as `tanh(W_L L + b_L)` and `tanh(W_P P + b_P)`.
//!
//! Parameters are stored as a flat list of tensors so the trainer and
//! optimizer can treat every variant uniformly. Tensor order:
//!
//! | scope    | tensors                                   |
//! |----------|-------------------------------------------|
//! | modality | `g_L`, `g_P`                              |
//! | category | `g_L`, `g_P` for each sense, sorted       |
//! | sample   | `W_L`, `b_L`, `W_P`, `b_P` (W row-major)  |

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding_store::{l2_normalize, EmbeddingTable, ImageFeatureSet};
use crate::error::{Error, Result};
use crate::vecops::dot;

pub const DEFAULT_SENSE: &str = "__default__";

/// word -> supersense label.
pub type SenseMap = HashMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateScope {
    Modality,
    Category,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateForm {
    Value,
    Vector,
}

impl fmt::Display for GateScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateScope::Modality => "modality",
            GateScope::Category => "category",
            GateScope::Sample => "sample",
        })
    }
}

impl fmt::Display for GateForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateForm::Value => "value",
            GateForm::Vector => "vector",
        })
    }
}

impl FromStr for GateScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modality" | "m" => Ok(GateScope::Modality),
            "category" | "c" => Ok(GateScope::Category),
            "sample" | "s" => Ok(GateScope::Sample),
            _ => Err(Error::invalid(format!("unknown gate scope `{}`", s))),
        }
    }
}

impl FromStr for GateForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "value" | "val" => Ok(GateForm::Value),
            "vector" | "vec" => Ok(GateForm::Vector),
            _ => Err(Error::invalid(format!("unknown gate form `{}`", s))),
        }
    }
}

/// One modality's importance weight.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    Value(f64),
    Vector(Vec<f64>),
}

impl Gate {
    fn from_slice(form: GateForm, v: &[f64]) -> Gate {
        match form {
            GateForm::Value => Gate::Value(v[0]),
            GateForm::Vector => Gate::Vector(v.to_vec()),
        }
    }

    /// Absolute value for value gates, l2 norm for vector gates.
    pub fn magnitude(&self) -> f64 {
        match self {
            Gate::Value(g) => g.abs(),
            Gate::Vector(g) => dot(g, g).sqrt(),
        }
    }

    fn check_len(&self, n: usize) -> Result<()> {
        match self {
            Gate::Vector(g) if g.len() != n => Err(Error::Dimension {
                expected: n,
                found: g.len(),
            }),
            _ => Ok(()),
        }
    }

    fn scale_into(&self, x: &[f64], out: &mut Vec<f64>) {
        match self {
            Gate::Value(g) => out.extend(x.iter().map(|v| g * v)),
            Gate::Vector(g) => out.extend(g.iter().zip(x).map(|(g, v)| g * v)),
        }
    }
}

/// `[g_L * L ; g_P * P]`, linguistic half first. Value gates broadcast.
pub fn fuse(l: &[f64], p: &[f64], g_l: &Gate, g_p: &Gate) -> Result<Vec<f64>> {
    g_l.check_len(l.len())?;
    g_p.check_len(p.len())?;
    let mut out = Vec::with_capacity(l.len() + p.len());
    g_l.scale_into(l, &mut out);
    g_p.scale_into(p, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateModel {
    scope: GateScope,
    form: GateForm,
    ling_dim: usize,
    vis_dim: usize,
    /// Category scope only: sorted sense names, `__default__` included.
    senses: Vec<String>,
    tensors: Vec<Vec<f64>>,
}

impl GateModel {
    /// Builds a model from explicit tensors, checking every shape.
    pub fn from_tensors(
        scope: GateScope,
        form: GateForm,
        ling_dim: usize,
        vis_dim: usize,
        senses: Vec<String>,
        tensors: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if ling_dim == 0 || vis_dim == 0 {
            return Err(Error::invalid("gate dimensions must be positive"));
        }
        let model = GateModel {
            scope,
            form,
            ling_dim,
            vis_dim,
            senses,
            tensors,
        };
        if scope == GateScope::Category {
            let sorted: BTreeSet<&String> = model.senses.iter().collect();
            if sorted.len() != model.senses.len()
                || !sorted.iter().copied().eq(model.senses.iter())
                || !model.senses.iter().any(|s| s == DEFAULT_SENSE)
            {
                return Err(Error::invalid(
                    "category senses must be sorted, unique and include __default__",
                ));
            }
        } else if !model.senses.is_empty() {
            return Err(Error::invalid("senses are only valid for category gates"));
        }
        let shapes = model.tensor_shapes();
        if shapes.len() != model.tensors.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                model.tensors.len()
            )));
        }
        for (t, &n) in model.tensors.iter().zip(&shapes) {
            if t.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    found: t.len(),
                });
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite gate parameter"));
            }
        }
        Ok(model)
    }

    /// Modality gates with every entry set to `init`.
    pub fn modality(form: GateForm, ling_dim: usize, vis_dim: usize, init: f64) -> Result<Self> {
        let (nl, np) = Self::gate_lens(form, ling_dim, vis_dim);
        Self::from_tensors(
            GateScope::Modality,
            form,
            ling_dim,
            vis_dim,
            vec![],
            vec![vec![init; nl], vec![init; np]],
        )
    }

    /// Category gates for `senses` plus `__default__`, all entries `init`.
    pub fn category<I, S>(
        form: GateForm,
        ling_dim: usize,
        vis_dim: usize,
        senses: I,
        init: f64,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set: BTreeSet<String> = senses.into_iter().map(Into::into).collect();
        set.insert(DEFAULT_SENSE.to_string());
        let senses: Vec<String> = set.into_iter().collect();
        let (nl, np) = Self::gate_lens(form, ling_dim, vis_dim);
        let tensors = senses
            .iter()
            .flat_map(|_| [vec![init; nl], vec![init; np]])
            .collect();
        Self::from_tensors(
            GateScope::Category,
            form,
            ling_dim,
            vis_dim,
            senses,
            tensors,
        )
    }

    /// Sample gates with weights drawn by `weight` and biases set to `bias`.
    pub fn sample(
        form: GateForm,
        ling_dim: usize,
        vis_dim: usize,
        mut weight: impl FnMut() -> f64,
        bias: f64,
    ) -> Result<Self> {
        let (wl, bl, wp, bp) = match form {
            GateForm::Value => (ling_dim, 1, vis_dim, 1),
            GateForm::Vector => (ling_dim * ling_dim, ling_dim, vis_dim * vis_dim, vis_dim),
        };
        let tensors = vec![
            (0..wl).map(|_| weight()).collect(),
            vec![bias; bl],
            (0..wp).map(|_| weight()).collect(),
            vec![bias; bp],
        ];
        Self::from_tensors(GateScope::Sample, form, ling_dim, vis_dim, vec![], tensors)
    }

    /// Training start point: gate parameters at 1.0; for sample gates the
    /// biases are 1.0 and weights uniform in (-0.01, 0.01) from `seed`.
    pub fn initialized<S: AsRef<str>>(
        scope: GateScope,
        form: GateForm,
        ling_dim: usize,
        vis_dim: usize,
        senses: &[S],
        seed: u64,
    ) -> Result<Self> {
        match scope {
            GateScope::Modality => Self::modality(form, ling_dim, vis_dim, 1.0),
            GateScope::Category => Self::category(
                form,
                ling_dim,
                vis_dim,
                senses.iter().map(|s| s.as_ref().to_string()),
                1.0,
            ),
            GateScope::Sample => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Self::sample(
                    form,
                    ling_dim,
                    vis_dim,
                    || rng.random_range(-0.01..0.01),
                    1.0,
                )
            }
        }
    }

    fn gate_lens(form: GateForm, ling_dim: usize, vis_dim: usize) -> (usize, usize) {
        match form {
            GateForm::Value => (1, 1),
            GateForm::Vector => (ling_dim, vis_dim),
        }
    }

    fn tensor_shapes(&self) -> Vec<usize> {
        let (nl, np) = Self::gate_lens(self.form, self.ling_dim, self.vis_dim);
        match (self.scope, self.form) {
            (GateScope::Modality, _) => vec![nl, np],
            (GateScope::Category, _) => self.senses.iter().flat_map(|_| [nl, np]).collect(),
            (GateScope::Sample, GateForm::Value) => vec![self.ling_dim, 1, self.vis_dim, 1],
            (GateScope::Sample, GateForm::Vector) => vec![
                self.ling_dim * self.ling_dim,
                self.ling_dim,
                self.vis_dim * self.vis_dim,
                self.vis_dim,
            ],
        }
    }

    pub fn scope(&self) -> GateScope {
        self.scope
    }

    pub fn form(&self) -> GateForm {
        self.form
    }

    pub fn ling_dim(&self) -> usize {
        self.ling_dim
    }

    pub fn vis_dim(&self) -> usize {
        self.vis_dim
    }

    pub fn fused_dim(&self) -> usize {
        self.ling_dim + self.vis_dim
    }

    pub fn senses(&self) -> &[String] {
        &self.senses
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.tensors
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    /// Display names of the tensors, aligned with [`GateModel::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        match self.scope {
            GateScope::Modality => vec!["g_L".into(), "g_P".into()],
            GateScope::Category => self
                .senses
                .iter()
                .flat_map(|s| [format!("{}/g_L", s), format!("{}/g_P", s)])
                .collect(),
            GateScope::Sample => ["W_L", "b_L", "W_P", "b_P"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    /// Tensor index of the category gates for `sense`; unknown or missing
    /// senses map to `__default__`. Always 0 for other scopes.
    pub fn sense_slot(&self, sense: Option<&str>) -> usize {
        if self.scope != GateScope::Category {
            return 0;
        }
        let find = |name: &str| self.senses.binary_search_by(|s| s.as_str().cmp(name)).ok();
        sense
            .and_then(find)
            .or_else(|| find(DEFAULT_SENSE))
            .expect("__default__ present")
    }

    /// Gates for category slot `slot` (see [`GateModel::sense_slot`]).
    pub fn category_gates(&self, slot: usize) -> (Gate, Gate) {
        (
            Gate::from_slice(self.form, &self.tensors[2 * slot]),
            Gate::from_slice(self.form, &self.tensors[2 * slot + 1]),
        )
    }

    pub fn compute_gates(&self, l: &[f64], p: &[f64], sense: Option<&str>) -> Result<(Gate, Gate)> {
        if l.len() != self.ling_dim {
            return Err(Error::Dimension {
                expected: self.ling_dim,
                found: l.len(),
            });
        }
        if p.len() != self.vis_dim {
            return Err(Error::Dimension {
                expected: self.vis_dim,
                found: p.len(),
            });
        }
        Ok(self.gates_unchecked(l, p, self.sense_slot(sense)))
    }

    fn gates_unchecked(&self, l: &[f64], p: &[f64], slot: usize) -> (Gate, Gate) {
        match self.scope {
            GateScope::Modality => (
                Gate::from_slice(self.form, &self.tensors[0]),
                Gate::from_slice(self.form, &self.tensors[1]),
            ),
            GateScope::Category => self.category_gates(slot),
            GateScope::Sample => (
                self.sample_gate(&self.tensors[0], &self.tensors[1], l),
                self.sample_gate(&self.tensors[2], &self.tensors[3], p),
            ),
        }
    }

    fn sample_gate(&self, w: &[f64], b: &[f64], x: &[f64]) -> Gate {
        match self.form {
            GateForm::Value => Gate::Value((dot(w, x) + b[0]).tanh()),
            GateForm::Vector => Gate::Vector(
                w.chunks_exact(x.len())
                    .zip(b)
                    .map(|(row, bi)| (dot(row, x) + bi).tanh())
                    .collect(),
            ),
        }
    }

    /// Fused vector for one word.
    pub fn fuse_word(&self, l: &[f64], p: &[f64], sense: Option<&str>) -> Result<Vec<f64>> {
        let (g_l, g_p) = self.compute_gates(l, p, sense)?;
        fuse(l, p, &g_l, &g_p)
    }

    pub(crate) fn fuse_slot(&self, l: &[f64], p: &[f64], slot: usize) -> Vec<f64> {
        let (g_l, g_p) = self.gates_unchecked(l, p, slot);
        let mut out = Vec::with_capacity(l.len() + p.len());
        g_l.scale_into(l, &mut out);
        g_p.scale_into(p, &mut out);
        out
    }

    /// Adds `d(loss)/d(params)` to `grads` given `d(loss)/d(fused)` for one
    /// word's fused vector. `grads` must have the model's tensor shapes.
    pub fn accumulate_gradient(
        &self,
        l: &[f64],
        p: &[f64],
        slot: usize,
        d_fused: &[f64],
        grads: &mut [Vec<f64>],
    ) {
        let (d_l, d_p) = d_fused.split_at(self.ling_dim);
        match self.scope {
            GateScope::Modality => {
                self.add_gate_grad(l, d_l, &mut grads[0]);
                self.add_gate_grad(p, d_p, &mut grads[1]);
            }
            GateScope::Category => {
                self.add_gate_grad(l, d_l, &mut grads[2 * slot]);
                self.add_gate_grad(p, d_p, &mut grads[2 * slot + 1]);
            }
            GateScope::Sample => {
                let (wl, rest) = grads.split_at_mut(1);
                let (bl, rest) = rest.split_at_mut(1);
                let (wp, bp) = rest.split_at_mut(1);
                self.add_sample_grad(
                    &self.tensors[0],
                    &self.tensors[1],
                    l,
                    d_l,
                    &mut wl[0],
                    &mut bl[0],
                );
                self.add_sample_grad(
                    &self.tensors[2],
                    &self.tensors[3],
                    p,
                    d_p,
                    &mut wp[0],
                    &mut bp[0],
                );
            }
        }
    }

    // d/dg of sum(delta * g * x).
    fn add_gate_grad(&self, x: &[f64], delta: &[f64], grad: &mut [f64]) {
        match self.form {
            GateForm::Value => grad[0] += dot(delta, x),
            GateForm::Vector => {
                for ((g, d), xi) in grad.iter_mut().zip(delta).zip(x) {
                    *g += d * xi;
                }
            }
        }
    }

    fn add_sample_grad(
        &self,
        w: &[f64],
        b: &[f64],
        x: &[f64],
        delta: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
    ) {
        match self.form {
            GateForm::Value => {
                let g = (dot(w, x) + b[0]).tanh();
                let dz = dot(delta, x) * (1.0 - g * g);
                for (dwi, xi) in dw.iter_mut().zip(x) {
                    *dwi += dz * xi;
                }
                db[0] += dz;
            }
            GateForm::Vector => {
                let n = x.len();
                for (i, row) in w.chunks_exact(n).enumerate() {
                    let g = (dot(row, x) + b[i]).tanh();
                    let dz = delta[i] * x[i] * (1.0 - g * g);
                    for (dwij, xj) in dw[i * n..(i + 1) * n].iter_mut().zip(x) {
                        *dwij += dz * xj;
                    }
                    db[i] += dz;
                }
            }
        }
    }

    pub fn zero_gradients(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.len()]).collect()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "gate {} {} {}", self.scope, self.form, self.ling_dim)?;
        if self.vis_dim != self.ling_dim {
            write!(out, " {}", self.vis_dim)?;
        }
        writeln!(out)?;
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        match self.scope {
            GateScope::Category => {
                for (k, s) in self.senses.iter().enumerate() {
                    writeln!(
                        out,
                        "sense {} g_L {} g_P {}",
                        s,
                        join(&self.tensors[2 * k]),
                        join(&self.tensors[2 * k + 1])
                    )?;
                }
            }
            _ => {
                for (name, t) in self.tensor_names().iter().zip(&self.tensors) {
                    writeln!(out, "{} {}", name, join(t))?;
                }
            }
        }
        out.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

/// Parses the gate model text format written by [`GateModel::write_to`].
pub fn read_gate_model<R: BufRead>(reader: R, source_name: &str) -> Result<GateModel> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::parse(source_name, 1, e.to_string()))?,
        None => return Err(Error::NoRows(source_name.to_string())),
    };
    let h: Vec<&str> = header.split_whitespace().collect();
    if !(h.len() == 4 || h.len() == 5) || h[0] != "gate" {
        return Err(Error::parse(
            source_name,
            1,
            "expected header `gate <kind> <form> <dim>`",
        ));
    }
    let scope: GateScope = h[1]
        .parse()
        .map_err(|e: Error| Error::parse(source_name, 1, e.to_string()))?;
    let form: GateForm = h[2]
        .parse()
        .map_err(|e: Error| Error::parse(source_name, 1, e.to_string()))?;
    let dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(source_name, 1, "bad dimension"))
    };
    let ling_dim = dim(h[3])?;
    let vis_dim = if h.len() == 5 { dim(h[4])? } else { ling_dim };

    let floats = |tokens: &[&str], lineno: usize| -> Result<Vec<f64>> {
        tokens
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    Error::parse(source_name, lineno, format!("non-numeric value `{}`", t))
                })
            })
            .collect()
    };

    let mut named: HashMap<String, Vec<f64>> = HashMap::new();
    let mut senses = Vec::new();
    let mut tensors = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if scope == GateScope::Category {
            let gl_at = tokens.iter().position(|t| *t == "g_L");
            let gp_at = tokens.iter().position(|t| *t == "g_P");
            match (tokens[0], gl_at, gp_at) {
                ("sense", Some(2), Some(gp)) if tokens.len() > 2 && gp > 2 => {
                    senses.push(tokens[1].to_string());
                    tensors.push(floats(&tokens[3..gp], lineno)?);
                    tensors.push(floats(&tokens[gp + 1..], lineno)?);
                }
                _ => {
                    return Err(Error::parse(
                        source_name,
                        lineno,
                        "expected `sense <name> g_L ... g_P ...`",
                    ))
                }
            }
        } else {
            let values = floats(&tokens[1..], lineno)?;
            if named.insert(tokens[0].to_string(), values).is_some() {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("duplicate block `{}`", tokens[0]),
                ));
            }
        }
    }
    if scope != GateScope::Category {
        let names: &[&str] = match scope {
            GateScope::Modality => &["g_L", "g_P"],
            _ => &["W_L", "b_L", "W_P", "b_P"],
        };
        for n in names {
            tensors.push(named.remove(*n).ok_or_else(|| {
                Error::invalid(format!("{}: missing block `{}`", source_name, n))
            })?);
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::invalid(format!(
                "{}: unexpected block `{}`",
                source_name, extra
            )));
        }
    }
    GateModel::from_tensors(scope, form, ling_dim, vis_dim, senses, tensors)
}

pub fn load_gate_model(path: impl AsRef<Path>) -> Result<GateModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_gate_model(BufReader::new(file), &path.display().to_string())
}

/// Reads `word TAB supersense` lines. Later duplicates are ignored.
pub fn read_sense_map<R: BufRead>(reader: R, source_name: &str) -> Result<SenseMap> {
    let mut map = SenseMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(w), Some(s), None) if !w.is_empty() && !s.trim().is_empty() => {
                map.entry(w.to_string())
                    .or_insert_with(|| s.trim().to_string());
            }
            _ => {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    "expected `word TAB supersense`",
                ))
            }
        }
    }
    Ok(map)
}

pub fn load_sense_map(path: impl AsRef<Path>) -> Result<SenseMap> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_sense_map(BufReader::new(file), &path.display().to_string())
}

/// Distinct labels of a sense map, sorted.
pub fn sense_inventory(map: &SenseMap) -> Vec<String> {
    map.values()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Multimodal table whose rows are `[linguistic half ; visual half]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedTable {
    table: EmbeddingTable,
    ling_dim: usize,
}

impl FusedTable {
    pub fn new(table: EmbeddingTable, ling_dim: usize) -> Result<Self> {
        if ling_dim == 0 || ling_dim >= table.dim() {
            return Err(Error::invalid(
                "linguistic half must be a proper prefix of the row",
            ));
        }
        Ok(FusedTable { table, ling_dim })
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn into_table(self) -> EmbeddingTable {
        self.table
    }

    pub fn ling_dim(&self) -> usize {
        self.ling_dim
    }

    pub fn vis_dim(&self) -> usize {
        self.table.dim() - self.ling_dim
    }
}

fn check_aligned(a: &EmbeddingTable, b: &EmbeddingTable) -> Result<()> {
    let n = a.len().max(b.len());
    for i in 0..n {
        let left = a.words().get(i).map(String::as_str).unwrap_or("<end>");
        let right = b.words().get(i).map(String::as_str).unwrap_or("<end>");
        if left != right {
            return Err(Error::Vocabulary {
                index: i,
                left: left.to_string(),
                right: right.to_string(),
            });
        }
    }
    Ok(())
}

/// Aligned linguistic and predicted visual tables, ready for gating.
#[derive(Debug, Clone)]
pub struct FusionInputs {
    ling: EmbeddingTable,
    visual: EmbeddingTable,
}

impl FusionInputs {
    /// `normalize` l2-normalizes both halves row by row.
    pub fn new(
        ling: &EmbeddingTable,
        predicted_visual: &EmbeddingTable,
        normalize: bool,
    ) -> Result<Self> {
        check_aligned(ling, predicted_visual)?;
        let (ling, visual) = if normalize {
            let (l, zl) = ling.normalized();
            let (p, zp) = predicted_visual.normalized();
            if zl + zp > 0 {
                log::warn!(
                    "{} zero linguistic and {} zero visual rows left unnormalized",
                    zl,
                    zp
                );
            }
            (l, p)
        } else {
            (ling.clone(), predicted_visual.clone())
        };
        Ok(FusionInputs { ling, visual })
    }

    pub fn ling(&self) -> &EmbeddingTable {
        &self.ling
    }

    pub fn visual(&self) -> &EmbeddingTable {
        &self.visual
    }

    pub fn len(&self) -> usize {
        self.ling.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ling.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.ling.index_of(word)
    }

    pub fn halves(&self, i: usize) -> (&[f64], &[f64]) {
        (self.ling.row(i), self.visual.row(i))
    }
}

/// One fused row per word of `ling`. The two tables must list the same
/// words in the same order; no normalization is applied here.
pub fn build_fused_table(
    ling: &EmbeddingTable,
    predicted_visual: &EmbeddingTable,
    model: &GateModel,
    senses: Option<&SenseMap>,
) -> Result<FusedTable> {
    check_aligned(ling, predicted_visual)?;
    if ling.dim() != model.ling_dim() || predicted_visual.dim() != model.vis_dim() {
        return Err(Error::Dimension {
            expected: model.fused_dim(),
            found: ling.dim() + predicted_visual.dim(),
        });
    }
    let mut data = Vec::with_capacity(ling.len() * model.fused_dim());
    for (i, word) in ling.words().iter().enumerate() {
        let sense = senses.and_then(|m| m.get(word)).map(String::as_str);
        let slot = model.sense_slot(sense);
        data.extend(model.fuse_slot(ling.row(i), predicted_visual.row(i), slot));
    }
    FusedTable::new(
        EmbeddingTable::new(ling.words().to_vec(), data, model.fused_dim())?,
        model.ling_dim(),
    )
}

pub fn fuse_inputs(
    inputs: &FusionInputs,
    model: &GateModel,
    senses: Option<&SenseMap>,
) -> Result<FusedTable> {
    build_fused_table(inputs.ling(), inputs.visual(), model, senses)
}

/// Concatenation of normalized halves for every word of `ling` that also
/// has a row in `visual`, in `ling` order. `visual_weight` decides, per
/// word, whether the visual half is kept (true) or zeroed.
fn concat_normalized(
    ling: &EmbeddingTable,
    visual: &EmbeddingTable,
    mut keep_visual: impl FnMut(&str) -> bool,
) -> Result<FusedTable> {
    let mut words = Vec::new();
    let mut data = Vec::new();
    for (w, l) in ling.iter() {
        let Some(v) = visual.get(w) else { continue };
        let (l, _) = l2_normalize(l);
        let (v, _) = l2_normalize(v);
        data.extend(l);
        if keep_visual(w) {
            data.extend(v);
        } else {
            data.extend(std::iter::repeat_n(0.0, v.len()));
        }
        words.push(w.to_string());
    }
    if words.is_empty() {
        return Err(Error::invalid(
            "no words shared by linguistic and visual tables",
        ));
    }
    FusedTable::new(
        EmbeddingTable::new(words, data, ling.dim() + visual.dim())?,
        ling.dim(),
    )
}

/// CONC: normalized linguistic and true visual vectors, concatenated. The
/// vocabulary shrinks to words that have visual vectors.
pub fn baseline_conc(ling: &EmbeddingTable, visual: &EmbeddingTable) -> Result<FusedTable> {
    concat_normalized(ling, visual, |_| true)
}

/// Ridge: normalized linguistic and predicted visual vectors, concatenated,
/// for the whole linguistic vocabulary.
pub fn baseline_ridge(
    ling: &EmbeddingTable,
    predicted_visual: &EmbeddingTable,
) -> Result<FusedTable> {
    check_aligned(ling, predicted_visual)?;
    concat_normalized(ling, predicted_visual, |_| true)
}

#[derive(Debug, Clone)]
pub struct DispersionBaseline {
    pub table: FusedTable,
    pub median: f64,
    /// Words whose visual half was zeroed.
    pub abstract_words: usize,
    /// Words with fewer than two images, treated as abstract.
    pub missing_dispersion: usize,
}

/// Dispersion baseline: the visual half is zeroed for words whose image
/// dispersion exceeds the median dispersion of the vocabulary.
pub fn baseline_dispersion(
    ling: &EmbeddingTable,
    visual: &EmbeddingTable,
    features: &ImageFeatureSet,
) -> Result<DispersionBaseline> {
    let groups = features.by_word();
    let mut dispersion: HashMap<&str, f64> = HashMap::new();
    for (w, _) in ling.iter() {
        if !visual.contains(w) {
            continue;
        }
        if let Some(d) = groups
            .get(w)
            .and_then(|imgs| crate::embedding_store::dispersion_of(imgs))
        {
            dispersion.insert(w, d.value);
        }
    }
    let mut values: Vec<f64> = dispersion.values().copied().collect();
    if values.is_empty() {
        return Err(Error::invalid("no word has at least two images"));
    }
    let median = median(&mut values);
    let mut abstract_words = 0;
    let mut missing = 0;
    let table = concat_normalized(ling, visual, |w| match dispersion.get(w) {
        Some(&d) if d <= median => true,
        Some(_) => {
            abstract_words += 1;
            false
        }
        None => {
            abstract_words += 1;
            missing += 1;
            false
        }
    })?;
    Ok(DispersionBaseline {
        table,
        median,
        abstract_words,
        missing_dispersion: missing,
    })
}

/// Median, averaging the two middle values for even counts.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
