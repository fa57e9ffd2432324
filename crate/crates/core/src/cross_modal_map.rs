//! Ridge regression from the linguistic space to the visual space.
//!
//! For each visual dimension `j`, the coefficient column `A_j` minimizes
//! `||L_v A_j - V_j||^2 + lambda ||A_j||^2` over the words that have both a
//! linguistic and a visual vector. The penalty is applied as written, not
//! scaled by the number of rows. All columns share one Cholesky factor of
//! `L_v^T L_v + lambda I`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding_store::EmbeddingTable;
use crate::error::{Error, Result};

/// Pivot threshold, relative to the largest Gram diagonal, below which the
/// system is treated as singular.
const SINGULAR_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MappingModel {
    coefficients: DMatrix<f64>,
    lambda: f64,
}

impl MappingModel {
    pub fn new(coefficients: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be finite and >= 0, got {}",
                lambda
            )));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite mapping coefficient"));
        }
        Ok(MappingModel {
            coefficients,
            lambda,
        })
    }

    /// `n_l x n_v` coefficient matrix `A`.
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn source_dim(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn target_dim(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "ridge {} {} {}",
            self.source_dim(),
            self.target_dim(),
            self.lambda
        )?;
        for r in 0..self.source_dim() {
            let line: Vec<String> = (0..self.target_dim())
                .map(|c| self.coefficients[(r, c)].to_string())
                .collect();
            writeln!(out, "{}", line.join(" "))?;
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

pub fn read_mapping<R: BufRead>(reader: R, source_name: &str) -> Result<MappingModel> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::NoRows(source_name.to_string()))?
        .map_err(|e| Error::parse(source_name, 1, e.to_string()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "ridge" {
        return Err(Error::parse(
            source_name,
            1,
            "expected header `ridge n_l n_v lambda`",
        ));
    }
    let bad = |what: &str| Error::parse(source_name, 1, format!("bad {} in header", what));
    let n_l: usize = fields[1].parse().map_err(|_| bad("n_l"))?;
    let n_v: usize = fields[2].parse().map_err(|_| bad("n_v"))?;
    let lambda: f64 = fields[3].parse().map_err(|_| bad("lambda"))?;

    let mut data = Vec::with_capacity(n_l * n_v);
    for r in 0..n_l {
        let lineno = r + 2;
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(source_name, lineno, "missing coefficient row"))?
            .map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(source_name, lineno, "non-numeric coefficient"))?;
        if row.len() != n_v {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("expected {} coefficients, found {}", n_v, row.len()),
            ));
        }
        data.extend(row);
    }
    MappingModel::new(DMatrix::from_row_slice(n_l, n_v, &data), lambda)
}

pub fn load_mapping(path: impl AsRef<Path>) -> Result<MappingModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_mapping(BufReader::new(file), &path.display().to_string())
}

pub fn table_to_matrix(table: &EmbeddingTable) -> DMatrix<f64> {
    DMatrix::from_row_slice(table.len(), table.dim(), table.data())
}

/// Stacks the rows of words present in both tables, in `visual` order.
pub fn paired_matrices(
    ling: &EmbeddingTable,
    visual: &EmbeddingTable,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<String>)> {
    let words: Vec<String> = visual
        .words()
        .iter()
        .filter(|w| ling.contains(w))
        .cloned()
        .collect();
    if words.is_empty() {
        return Err(Error::invalid(
            "no words shared by linguistic and visual tables",
        ));
    }
    let l = table_to_matrix(&ling.select(&words)?);
    let v = table_to_matrix(&visual.select(&words)?);
    Ok((l, v, words))
}

/// `||L_v A - V||_F^2 + lambda ||A||_F^2`.
pub fn ridge_objective(l_v: &DMatrix<f64>, v: &DMatrix<f64>, a: &DMatrix<f64>, lambda: f64) -> f64 {
    let residual = l_v * a - v;
    residual.norm_squared() + lambda * a.norm_squared()
}

pub fn fit_ridge(l_v: &DMatrix<f64>, v: &DMatrix<f64>, lambda: f64) -> Result<MappingModel> {
    if l_v.nrows() != v.nrows() {
        return Err(Error::invalid(format!(
            "row count mismatch: {} linguistic vs {} visual",
            l_v.nrows(),
            v.nrows()
        )));
    }
    if l_v.nrows() == 0 {
        return Err(Error::invalid("ridge fit needs at least one row"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "lambda must be finite and >= 0, got {}",
            lambda
        )));
    }
    let n_l = l_v.ncols();
    let mut gram = l_v.transpose() * l_v;
    for i in 0..n_l {
        gram[(i, i)] += lambda;
    }
    let scale = gram.diagonal().iter().cloned().fold(0.0_f64, f64::max);
    let chol = Cholesky::new(gram).ok_or(Error::Singular { lambda })?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|p| p * p)
        .fold(f64::INFINITY, f64::min);
    if min_pivot.is_nan() || min_pivot <= SINGULAR_RTOL * scale {
        return Err(Error::Singular { lambda });
    }
    let rhs = l_v.transpose() * v;
    MappingModel::new(chol.solve(&rhs), lambda)
}

/// `P = L A`.
pub fn predict_visual(l: &DMatrix<f64>, model: &MappingModel) -> Result<DMatrix<f64>> {
    if l.ncols() != model.source_dim() {
        return Err(Error::Dimension {
            expected: model.source_dim(),
            found: l.ncols(),
        });
    }
    Ok(l * model.coefficients())
}

/// Predicted visual vectors for every word of `ling`, same word order.
pub fn predict_table(ling: &EmbeddingTable, model: &MappingModel) -> Result<EmbeddingTable> {
    let p = predict_visual(&table_to_matrix(ling), model)?;
    let mut data = Vec::with_capacity(p.len());
    for r in 0..p.nrows() {
        data.extend(p.row(r).iter());
    }
    EmbeddingTable::new(ling.words().to_vec(), data, model.target_dim())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSelection {
    pub best: f64,
    /// `(lambda, held-out MSE)` in candidate order. Candidates whose fold
    /// fits were singular carry `f64::INFINITY`.
    pub mse: Vec<(f64, f64)>,
}

/// k-fold cross-validated choice of `lambda` by held-out mean squared error.
///
/// Rows are shuffled once with `seed`; fold `k` takes shuffled positions
/// `p` with `p % folds == k`. Ties go to the larger lambda.
pub fn select_lambda(
    l_v: &DMatrix<f64>,
    v: &DMatrix<f64>,
    candidates: &[f64],
    folds: usize,
    seed: u64,
) -> Result<LambdaSelection> {
    let m = l_v.nrows();
    if m != v.nrows() {
        return Err(Error::invalid("row count mismatch"));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("no lambda candidates"));
    }
    if folds < 2 || folds > m {
        return Err(Error::invalid(format!(
            "folds must be in [2, {}] for {} rows, got {}",
            m, m, folds
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; m];
        for (pos, &row) in order.iter().enumerate() {
            f[row] = pos % folds;
        }
        f
    };
    let rows_where = |pred: &dyn Fn(usize) -> bool| -> Vec<usize> {
        (0..m).filter(|&r| pred(fold_of[r])).collect()
    };

    let mut mse = Vec::with_capacity(candidates.len());
    for &lambda in candidates {
        let mut sse = 0.0;
        let mut failed = false;
        for k in 0..folds {
            let train = rows_where(&|f| f != k);
            let test = rows_where(&|f| f == k);
            let fit = match fit_ridge(&l_v.select_rows(&train), &v.select_rows(&train), lambda) {
                Ok(fit) => fit,
                Err(Error::Singular { .. }) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let pred = l_v.select_rows(&test) * fit.coefficients();
            sse += (pred - v.select_rows(&test)).norm_squared();
        }
        let value = if failed {
            f64::INFINITY
        } else {
            sse / (m * v.ncols()) as f64
        };
        mse.push((lambda, value));
    }

    let mut best: Option<(f64, f64)> = None;
    for &(lambda, err) in &mse {
        best = match best {
            None => Some((lambda, err)),
            Some((bl, be)) if err < be || (err == be && lambda > bl) => Some((lambda, err)),
            keep => keep,
        };
    }
    let (best, best_err) = best.expect("non-empty candidates");
    if best_err.is_infinite() {
        return Err(Error::Singular { lambda: best });
    }
    Ok(LambdaSelection { best, mse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_fit_is_identity() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        let m = fit_ridge(&i3, &i3, 0.0).unwrap();
        assert!((m.coefficients() - &i3).abs().max() < 1e-14);
    }

    #[test]
    fn huge_lambda_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = random(10, 4, &mut rng);
        let v = random(10, 3, &mut rng);
        let m = fit_ridge(&l, &v, 1e9).unwrap();
        assert!(m.coefficients().norm() < 1e-6 * (l.transpose() * &v).norm());
    }

    /// Plain gradient descent on the ridge objective until the step stalls.
    fn gradient_descent_oracle(l: &DMatrix<f64>, v: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(l.ncols(), v.ncols());
        let lip = 2.0 * ((l.transpose() * l).norm() + lambda);
        let step = 1.0 / lip;
        for _ in 0..200_000 {
            let grad = 2.0 * (l.transpose() * (l * &a - v)) + 2.0 * lambda * &a;
            a -= step * &grad;
            if grad.abs().max() < 1e-12 {
                break;
            }
        }
        a
    }

    #[test]
    fn matches_gradient_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l = random(8, 3, &mut rng);
        let v = random(8, 2, &mut rng);
        let fit = fit_ridge(&l, &v, 0.5).unwrap();
        let oracle = gradient_descent_oracle(&l, &v, 0.5);
        assert!((fit.coefficients() - oracle).abs().max() <= 1e-6);
    }

    #[test]
    fn singular_at_zero_lambda() {
        let l = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let v = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(matches!(
            fit_ridge(&l, &v, 0.0),
            Err(Error::Singular { .. })
        ));
        assert!(fit_ridge(&l, &v, 0.1).is_ok());
    }

    #[test]
    fn row_mismatch_rejected() {
        let l = DMatrix::<f64>::identity(3, 3);
        let v = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(fit_ridge(&l, &v, 1.0), Err(Error::Invalid(_))));
    }

    #[test]
    fn predict_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let model = MappingModel::new(a, 0.0).unwrap();
        let l = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let p = predict_visual(&l, &model).unwrap();
        assert_eq!(p.as_slice(), &[3.0, 8.0]);

        let id = MappingModel::new(DMatrix::identity(3, 3), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = random(5, 3, &mut rng);
        assert_eq!(predict_visual(&l, &id).unwrap(), l);
        assert!(predict_visual(&random(2, 4, &mut rng), &id).is_err());
    }

    #[test]
    fn prediction_is_row_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = MappingModel::new(random(4, 3, &mut rng), 0.1).unwrap();
        let l = random(6, 4, &mut rng);
        let full = predict_visual(&l, &model).unwrap();
        for r in 0..6 {
            let one = predict_visual(&l.rows(r, 1).into_owned(), &model).unwrap();
            assert_eq!(one.row(0), full.row(r));
        }
    }

    #[test]
    fn select_single_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = random(10, 3, &mut rng);
        let v = random(10, 2, &mut rng);
        assert_eq!(select_lambda(&l, &v, &[0.6], 5, 0).unwrap().best, 0.6);
        assert!(select_lambda(&l, &v, &[0.6], 11, 0).is_err());
        assert!(select_lambda(&l, &v, &[0.6], 1, 0).is_err());
    }

    #[test]
    fn noiseless_linear_prefers_small_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = random(40, 4, &mut rng);
        let truth = random(4, 3, &mut rng);
        let v = &l * &truth;
        let sel = select_lambda(&l, &v, &[0.0001, 10.0], 5, 0).unwrap();
        // Direct check: the held-out errors order the same way.
        assert!(sel.mse[0].1 < sel.mse[1].1);
        assert_eq!(sel.best, 0.0001);
    }

    #[test]
    fn ties_break_to_larger_lambda() {
        // V = 0 gives A = 0 and zero error for every lambda.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let l = random(10, 2, &mut rng);
        let v = DMatrix::zeros(10, 2);
        let sel = select_lambda(&l, &v, &[0.1, 5.0, 1.0], 5, 0).unwrap();
        assert_eq!(sel.best, 5.0);
    }

    #[test]
    fn cv_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let l = random(30, 5, &mut rng);
        let v = random(30, 2, &mut rng);
        let a = select_lambda(&l, &v, &[0.1, 0.6, 1.0], 5, 0).unwrap();
        let b = select_lambda(&l, &v, &[0.1, 0.6, 1.0], 5, 0).unwrap();
        for (x, y) in a.mse.iter().zip(&b.mse) {
            assert_eq!(x.1.to_bits(), y.1.to_bits());
        }
    }

    #[test]
    fn mapping_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = MappingModel::new(random(3, 2, &mut rng), 0.6).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("ridge 3 2 0.6\n"));
        let back = read_mapping(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, model);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn zero_lambda_residual_orthogonal(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = random(12, 3, &mut rng);
            let v = random(12, 2, &mut rng);
            let fit = fit_ridge(&l, &v, 0.0).unwrap();
            let normal = l.transpose() * (&l * fit.coefficients() - &v);
            prop_assert!(normal.abs().max() < 1e-8);
        }

        #[test]
        fn perturbation_never_improves(seed in any::<u64>(), lambda in 0.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = random(10, 3, &mut rng);
            let v = random(10, 2, &mut rng);
            let fit = fit_ridge(&l, &v, lambda).unwrap();
            let base = ridge_objective(&l, &v, fit.coefficients(), lambda);
            for r in 0..3 {
                for c in 0..2 {
                    for delta in [1e-3, -1e-3] {
                        let mut a = fit.coefficients().clone();
                        a[(r, c)] += delta;
                        prop_assert!(ridge_objective(&l, &v, &a, lambda) >= base);
                    }
                }
            }
        }
    }
}
