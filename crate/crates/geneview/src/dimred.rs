//! Dimension reducers: truncated SVD, NMF, and LDA.
//!
//! All three fit on a sparse [`FeatureMatrix`] and transform rows into k
//! dense columns. Fitting is seeded and bit-reproducible; fitted reducers are
//! immutable, and transforming never touches fitted state.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, ReducerKind, SparseVector};

/// Oversampling columns for the randomized range finder.
const OVERSAMPLE: usize = 10;
/// Power iterations sharpening the range estimate.
const POWER_ITERATIONS: usize = 2;
/// Dense inputs up to this width use exact SVD.
const EXACT_SVD_MAX_COLS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvdAlgorithm {
    /// Randomized for wide inputs, exact for narrow ones.
    Auto,
    Exact,
    Randomized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitMeta {
    pub iterations: usize,
    pub objective: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
enum Params {
    Svd {
        /// k x n right singular vectors.
        vt: DMatrix<f64>,
        singular: DVector<f64>,
    },
    Nmf {
        /// k x n basis.
        h: DMatrix<f64>,
    },
    Lda {
        /// k x V topic-word distributions, rows on the simplex.
        topic_word: DMatrix<f64>,
        alpha: f64,
        beta: f64,
        infer_sweeps: usize,
    },
}

/// A fitted reducer.
#[derive(Debug, Clone)]
pub struct Reducer {
    pub kind: ReducerKind,
    /// Space the reducer was fitted on.
    pub fit_space: String,
    pub input_dim: usize,
    pub k: usize,
    params: Params,
    pub meta: FitMeta,
}

impl Reducer {
    /// Singular values, non-negative and non-increasing (SVD only).
    pub fn singular_values(&self) -> Option<&DVector<f64>> {
        match &self.params {
            Params::Svd { singular, .. } => Some(singular),
            _ => None,
        }
    }

    /// Right singular vectors as a k x n matrix (SVD only).
    pub fn right_vectors(&self) -> Option<&DMatrix<f64>> {
        match &self.params {
            Params::Svd { vt, .. } => Some(vt),
            _ => None,
        }
    }

    /// The nonnegative basis H (NMF only).
    pub fn basis(&self) -> Option<&DMatrix<f64>> {
        match &self.params {
            Params::Nmf { h } => Some(h),
            _ => None,
        }
    }

    /// Topic-word distributions (LDA only).
    pub fn topic_word(&self) -> Option<&DMatrix<f64>> {
        match &self.params {
            Params::Lda { topic_word, .. } => Some(topic_word),
            _ => None,
        }
    }

    /// Feed the fitted state into a fingerprint hasher.
    pub fn fingerprint(&self, hasher: &mut sha2::Sha256) {
        use sha2::Digest;
        hasher.update([self.kind as u8]);
        hasher.update(self.fit_space.as_bytes());
        hasher.update(self.input_dim.to_le_bytes());
        hasher.update(self.k.to_le_bytes());
        let feed = |hasher: &mut sha2::Sha256, m: &DMatrix<f64>| {
            for v in m.iter() {
                hasher.update(v.to_le_bytes());
            }
        };
        match &self.params {
            Params::Svd { vt, singular } => {
                feed(hasher, vt);
                for v in singular.iter() {
                    hasher.update(v.to_le_bytes());
                }
            }
            Params::Nmf { h } => feed(hasher, h),
            Params::Lda {
                topic_word,
                alpha,
                beta,
                ..
            } => {
                feed(hasher, topic_word);
                hasher.update(alpha.to_le_bytes());
                hasher.update(beta.to_le_bytes());
            }
        }
    }
}

fn check_shape(matrix: &FeatureMatrix, k: usize) -> Result<()> {
    if matrix.n_rows() == 0 {
        return Err(Error::Validation(
            "cannot fit a reducer on an empty matrix".into(),
        ));
    }
    if k == 0 {
        return Err(Error::Validation("target dimension k must be positive".into()));
    }
    let bound = matrix.n_rows().min(matrix.dim);
    if k > bound {
        return Err(Error::Validation(format!(
            "k={k} exceeds min(rows={}, cols={}) of space `{}`",
            matrix.n_rows(),
            matrix.dim,
            matrix.space
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Sparse x dense kernels
// ---------------------------------------------------------------------------

/// A * D where A is the sparse rows and D is n x l dense; result m x l.
fn sp_times_dense(rows: &[SparseVector], d: &DMatrix<f64>) -> DMatrix<f64> {
    let l = d.ncols();
    let mut out = DMatrix::zeros(rows.len(), l);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row.entries() {
            for c in 0..l {
                out[(i, c)] += v * d[(j as usize, c)];
            }
        }
    }
    out
}

/// A^T * D where D is m x l dense; result n x l.
fn sp_t_times_dense(rows: &[SparseVector], dim: usize, d: &DMatrix<f64>) -> DMatrix<f64> {
    let l = d.ncols();
    let mut out = DMatrix::zeros(dim, l);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row.entries() {
            for c in 0..l {
                out[(j as usize, c)] += v * d[(i, c)];
            }
        }
    }
    out
}

fn to_dense(matrix: &FeatureMatrix) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(matrix.n_rows(), matrix.dim);
    for (i, row) in matrix.rows().iter().enumerate() {
        for &(j, v) in row.entries() {
            out[(i, j as usize)] = v;
        }
    }
    out
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Internal truncated SVD shared by `fit_svd` and the NMF initializer.
/// Returns (U m x k, sigma k, Vt k x n).
fn truncated_svd(
    matrix: &FeatureMatrix,
    k: usize,
    seed: u64,
    algorithm: SvdAlgorithm,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    check_shape(matrix, k)?;
    let use_exact = match algorithm {
        SvdAlgorithm::Exact => true,
        SvdAlgorithm::Randomized => false,
        SvdAlgorithm::Auto => matrix.dim <= EXACT_SVD_MAX_COLS,
    };
    if use_exact {
        let dense = to_dense(matrix);
        let svd = dense.svd(true, true);
        let u = svd.u.expect("requested");
        let vt = svd.v_t.expect("requested");
        let uk = u.columns(0, k).into_owned();
        let sk = DVector::from_iterator(k, svd.singular_values.iter().take(k).copied());
        let vtk = vt.rows(0, k).into_owned();
        return Ok((uk, sk, vtk));
    }

    let (m, n) = (matrix.n_rows(), matrix.dim);
    let l = (k + OVERSAMPLE).min(m.min(n));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(n, l, |_, _| gaussian(&mut rng));

    let rows = matrix.rows();
    let y = sp_times_dense(rows, &omega);
    let mut q = y.qr().q();
    for _ in 0..POWER_ITERATIONS {
        let z = sp_t_times_dense(rows, n, &q);
        let qz = z.qr().q();
        let y = sp_times_dense(rows, &qz);
        q = y.qr().q();
    }
    // B = Q^T A, l x n.
    let b = sp_t_times_dense(rows, n, &q).transpose();
    let svd = b.svd(true, true);
    let ub = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let uk = (&q * ub.columns(0, k)).into_owned();
    let sk = DVector::from_iterator(k, svd.singular_values.iter().take(k).copied());
    let vtk = vt.rows(0, k).into_owned();
    Ok((uk, sk, vtk))
}

/// Rank-k truncated SVD. Transform maps a row x to `x . V_k`.
pub fn fit_svd(matrix: &FeatureMatrix, k: usize, seed: u64) -> Result<Reducer> {
    fit_svd_with(matrix, k, seed, SvdAlgorithm::Auto)
}

pub fn fit_svd_with(
    matrix: &FeatureMatrix,
    k: usize,
    seed: u64,
    algorithm: SvdAlgorithm,
) -> Result<Reducer> {
    let (_, singular, vt) = truncated_svd(matrix, k, seed, algorithm)?;
    Ok(Reducer {
        kind: ReducerKind::Svd,
        fit_space: matrix.space.clone(),
        input_dim: matrix.dim,
        k,
        params: Params::Svd { vt, singular },
        meta: FitMeta {
            iterations: POWER_ITERATIONS,
            objective: 0.0,
            seed,
        },
    })
}

/// Options for NMF fitting.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NmfOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for NmfOptions {
    fn default() -> Self {
        NmfOptions {
            max_iters: 200,
            tol: 1e-4,
        }
    }
}

const MU_EPS: f64 = 1e-12;

/// Nonnegative factorization A ~ W H by multiplicative updates minimizing
/// squared Frobenius loss. Initialized from a nonnegative double-SVD split;
/// degenerate columns fall back to seeded uniform noise.
pub fn fit_nmf(
    matrix: &FeatureMatrix,
    k: usize,
    options: &NmfOptions,
    seed: u64,
) -> Result<Reducer> {
    check_shape(matrix, k)?;
    let rows = matrix.rows();
    for row in rows {
        if row.entries().iter().any(|&(_, v)| v < 0.0) {
            return Err(Error::Validation("NMF input must be entrywise >= 0".into()));
        }
    }
    let (_m, n) = (matrix.n_rows(), matrix.dim);
    let norm_a_sq: f64 = rows.iter().map(|r| r.l2_norm().powi(2)).sum();
    if norm_a_sq == 0.0 {
        return Ok(Reducer {
            kind: ReducerKind::Nmf,
            fit_space: matrix.space.clone(),
            input_dim: n,
            k,
            params: Params::Nmf {
                h: DMatrix::zeros(k, n),
            },
            meta: FitMeta {
                iterations: 0,
                objective: 0.0,
                seed,
            },
        });
    }

    let (mut w, mut h) = nndsvd_init(matrix, k, seed)?;
    let mut objective = nmf_objective(rows, norm_a_sq, &w, &h);
    let mut iterations = 0;
    for _ in 0..options.max_iters {
        nmf_step(rows, n, &mut w, &mut h);
        iterations += 1;
        let next = nmf_objective(rows, norm_a_sq, &w, &h);
        let rel = (objective - next).abs() / objective.max(MU_EPS);
        objective = next;
        if rel < options.tol {
            break;
        }
    }

    Ok(Reducer {
        kind: ReducerKind::Nmf,
        fit_space: matrix.space.clone(),
        input_dim: n,
        k,
        params: Params::Nmf { h },
        meta: FitMeta {
            iterations,
            objective,
            seed,
        },
    })
}

/// One multiplicative update of H then W.
pub fn nmf_step(rows: &[SparseVector], dim: usize, w: &mut DMatrix<f64>, h: &mut DMatrix<f64>) {
    let k = w.ncols();
    // H <- H o (W^T A) / (W^T W H + eps)
    let wta = sp_t_times_dense(rows, dim, w).transpose();
    let wtw = w.transpose() * &*w;
    let denom_h = &wtw * &*h;
    for i in 0..k {
        for j in 0..dim {
            h[(i, j)] *= wta[(i, j)] / (denom_h[(i, j)] + MU_EPS);
        }
    }
    // W <- W o (A H^T) / (W H H^T + eps)
    let aht = sp_times_dense(rows, &h.transpose());
    let hht = &*h * h.transpose();
    let denom_w = &*w * &hht;
    for i in 0..rows.len() {
        for j in 0..k {
            w[(i, j)] *= aht[(i, j)] / (denom_w[(i, j)] + MU_EPS);
        }
    }
}

/// ||A - WH||_F^2 without densifying A.
pub fn nmf_objective(
    rows: &[SparseVector],
    norm_a_sq: f64,
    w: &DMatrix<f64>,
    h: &DMatrix<f64>,
) -> f64 {
    // ||A||^2 - 2<A, WH> + tr((W^T W)(H H^T))
    let k = w.ncols();
    let mut cross = 0.0;
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row.entries() {
            let mut wh = 0.0;
            for t in 0..k {
                wh += w[(i, t)] * h[(t, j as usize)];
            }
            cross += v * wh;
        }
    }
    let wtw = w.transpose() * w;
    let hht = h * h.transpose();
    let mut wh_sq = 0.0;
    for i in 0..k {
        for j in 0..k {
            wh_sq += wtw[(i, j)] * hht[(j, i)];
        }
    }
    (norm_a_sq - 2.0 * cross + wh_sq).max(0.0)
}

/// Nonnegative double-SVD initialization.
fn nndsvd_init(
    matrix: &FeatureMatrix,
    k: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (u, s, vt) = truncated_svd(matrix, k, seed, SvdAlgorithm::Auto)?;
    let (m, n) = (matrix.n_rows(), matrix.dim);
    let mut w = DMatrix::zeros(m, k);
    let mut h = DMatrix::zeros(k, n);

    // Leading pair: singular vectors of a nonnegative matrix can be taken
    // nonnegative.
    let s0 = s[0].max(0.0).sqrt();
    for i in 0..m {
        w[(i, 0)] = s0 * u[(i, 0)].abs();
    }
    for j in 0..n {
        h[(0, j)] = s0 * vt[(0, j)].abs();
    }

    for t in 1..k {
        let x = u.column(t);
        let y = vt.row(t);
        let (mut xp_sq, mut xn_sq, mut yp_sq, mut yn_sq) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..m {
            if x[i] >= 0.0 {
                xp_sq += x[i] * x[i];
            } else {
                xn_sq += x[i] * x[i];
            }
        }
        for j in 0..n {
            if y[j] >= 0.0 {
                yp_sq += y[j] * y[j];
            } else {
                yn_sq += y[j] * y[j];
            }
        }
        let (xp_norm, xn_norm, yp_norm, yn_norm) =
            (xp_sq.sqrt(), xn_sq.sqrt(), yp_sq.sqrt(), yn_sq.sqrt());
        let mp = xp_norm * yp_norm;
        let mn = xn_norm * yn_norm;
        let (take_positive, mass) = if mp >= mn { (true, mp) } else { (false, mn) };
        if mass <= 0.0 {
            continue; // stays zero, repaired below
        }
        let scale = (s[t].max(0.0) * mass).sqrt();
        if take_positive {
            for i in 0..m {
                if x[i] > 0.0 {
                    w[(i, t)] = scale * x[i] / xp_norm;
                }
            }
            for j in 0..n {
                if y[j] > 0.0 {
                    h[(t, j)] = scale * y[j] / yp_norm;
                }
            }
        } else {
            for i in 0..m {
                if x[i] < 0.0 {
                    w[(i, t)] = scale * (-x[i]) / xn_norm;
                }
            }
            for j in 0..n {
                if y[j] < 0.0 {
                    h[(t, j)] = scale * (-y[j]) / yn_norm;
                }
            }
        }
    }

    // Fallback: reseed all-zero columns/rows so updates cannot stall.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mean = (matrix
        .rows()
        .iter()
        .flat_map(|r| r.entries().iter().map(|&(_, v)| v))
        .sum::<f64>()
        / ((m * n) as f64))
        .max(MU_EPS);
    for t in 0..k {
        if (0..m).all(|i| w[(i, t)] == 0.0) {
            for i in 0..m {
                w[(i, t)] = mean * rng.gen::<f64>();
            }
        }
        if (0..n).all(|j| h[(t, j)] == 0.0) {
            for j in 0..n {
                h[(t, j)] = mean * rng.gen::<f64>();
            }
        }
    }
    Ok((w, h))
}

/// Expose the initializer for monotonicity checks in tests.
#[doc(hidden)]
pub fn nndsvd_init_for_tests(
    matrix: &FeatureMatrix,
    k: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    nndsvd_init(matrix, k, seed)
}

/// Options for LDA fitting.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LdaOptions {
    pub sweeps: usize,
    /// Doc-topic prior; defaults to 50/k when None.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub infer_sweeps: usize,
}

impl Default for LdaOptions {
    fn default() -> Self {
        LdaOptions {
            sweeps: 500,
            alpha: None,
            beta: 0.01,
            infer_sweeps: 50,
        }
    }
}

/// Collapsed Gibbs LDA over an integer count matrix.
pub fn fit_lda(
    matrix: &FeatureMatrix,
    k: usize,
    options: &LdaOptions,
    seed: u64,
) -> Result<Reducer> {
    check_shape(matrix, k)?;
    let v = matrix.dim;
    let alpha = options.alpha.unwrap_or(50.0 / k as f64);
    let beta = options.beta;

    // Expand documents into token instances.
    let mut docs: Vec<Vec<u32>> = Vec::with_capacity(matrix.n_rows());
    for row in matrix.rows() {
        let mut tokens = Vec::new();
        for &(word, count) in row.entries() {
            if count < 0.0 || count.fract() != 0.0 {
                return Err(Error::Validation(format!(
                    "LDA needs nonnegative integer counts, found {count}"
                )));
            }
            for _ in 0..count as usize {
                tokens.push(word);
            }
        }
        docs.push(tokens);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n_dk = vec![vec![0u32; k]; docs.len()];
    let mut n_kw = vec![vec![0u32; v]; k];
    let mut n_k = vec![0u32; k];
    let mut assignments: Vec<Vec<u32>> = docs
        .iter()
        .map(|tokens| tokens.iter().map(|_| rng.gen_range(0..k as u32)).collect())
        .collect();
    for (d, tokens) in docs.iter().enumerate() {
        for (pos, &w) in tokens.iter().enumerate() {
            let t = assignments[d][pos] as usize;
            n_dk[d][t] += 1;
            n_kw[t][w as usize] += 1;
            n_k[t] += 1;
        }
    }

    let vbeta = v as f64 * beta;
    let mut weights = vec![0.0f64; k];
    for _ in 0..options.sweeps {
        for (d, tokens) in docs.iter().enumerate() {
            for (pos, &w) in tokens.iter().enumerate() {
                let old = assignments[d][pos] as usize;
                n_dk[d][old] -= 1;
                n_kw[old][w as usize] -= 1;
                n_k[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    let p = (n_dk[d][t] as f64 + alpha) * (n_kw[t][w as usize] as f64 + beta)
                        / (n_k[t] as f64 + vbeta);
                    weights[t] = p;
                    total += p;
                }
                let mut target = rng.gen::<f64>() * total;
                let mut new = k - 1;
                for (t, &p) in weights.iter().enumerate() {
                    if target < p {
                        new = t;
                        break;
                    }
                    target -= p;
                }
                assignments[d][pos] = new as u32;
                n_dk[d][new] += 1;
                n_kw[new][w as usize] += 1;
                n_k[new] += 1;
            }
        }
    }

    let mut topic_word = DMatrix::zeros(k, v);
    for t in 0..k {
        let denom = n_k[t] as f64 + vbeta;
        let mut row_sum = 0.0;
        for w in 0..v {
            let p = (n_kw[t][w] as f64 + beta) / denom;
            topic_word[(t, w)] = p;
            row_sum += p;
        }
        for w in 0..v {
            topic_word[(t, w)] /= row_sum;
        }
    }

    Ok(Reducer {
        kind: ReducerKind::Lda,
        fit_space: matrix.space.clone(),
        input_dim: v,
        k,
        params: Params::Lda {
            topic_word,
            alpha,
            beta,
            infer_sweeps: options.infer_sweeps,
        },
        meta: FitMeta {
            iterations: options.sweeps,
            objective: 0.0,
            seed,
        },
    })
}

/// Project rows through a fitted reducer; output has k (dense) columns.
pub fn transform(reducer: &Reducer, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    if matrix.space != reducer.fit_space {
        return Err(Error::SpaceMismatch {
            expected: reducer.fit_space.clone(),
            actual: matrix.space.clone(),
        });
    }
    if matrix.dim != reducer.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "input dimension {} != fitted {}",
            matrix.dim, reducer.input_dim
        )));
    }
    let space = output_space(reducer);
    let rows: Vec<SparseVector> = matrix
        .rows()
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let dense = transform_row(reducer, row, i as u64);
            let entries: Vec<(u32, f64)> = dense
                .into_iter()
                .enumerate()
                .map(|(c, v)| (c as u32, v))
                .collect();
            SparseVector::from_entries(space.clone(), reducer.k, entries)
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_rows(rows)
}

/// The space id transformed rows live in.
pub fn output_space(reducer: &Reducer) -> String {
    format!("{}~{}{}", reducer.fit_space, reducer.kind.name(), reducer.k)
}

/// Transform a single row. `row_index` only seeds LDA's held-out sampler.
pub fn transform_row(reducer: &Reducer, row: &SparseVector, row_index: u64) -> Vec<f64> {
    match &reducer.params {
        Params::Svd { vt, .. } => {
            let mut out = vec![0.0; reducer.k];
            for &(j, v) in row.entries() {
                for (t, slot) in out.iter_mut().enumerate() {
                    *slot += v * vt[(t, j as usize)];
                }
            }
            out
        }
        Params::Nmf { h } => nnls_project(row, h),
        Params::Lda {
            topic_word,
            alpha,
            beta: _,
            infer_sweeps,
        } => lda_infer(
            row,
            topic_word,
            *alpha,
            *infer_sweeps,
            reducer.meta.seed ^ (row_index.wrapping_add(1)).wrapping_mul(0x9e3779b97f4a7c15),
        ),
    }
}

/// Multiplicative-update NNLS of one row onto the basis H.
fn nnls_project(row: &SparseVector, h: &DMatrix<f64>) -> Vec<f64> {
    let k = h.nrows();
    if row.nnz() == 0 {
        return vec![0.0; k];
    }
    // x H^T, 1 x k.
    let mut xht = vec![0.0f64; k];
    for &(j, v) in row.entries() {
        for (t, slot) in xht.iter_mut().enumerate() {
            *slot += v * h[(t, j as usize)];
        }
    }
    let hht = h * h.transpose();
    let mut w = vec![1.0 / k as f64; k];
    for _ in 0..200 {
        let mut max_rel = 0.0f64;
        let mut denom = vec![0.0f64; k];
        for t in 0..k {
            for u in 0..k {
                denom[t] += w[u] * hht[(u, t)];
            }
        }
        for t in 0..k {
            let next = w[t] * xht[t] / (denom[t] + MU_EPS);
            let rel = (next - w[t]).abs() / w[t].max(MU_EPS);
            max_rel = max_rel.max(rel);
            w[t] = next;
        }
        if max_rel < 1e-8 {
            break;
        }
    }
    w
}

/// Held-out Gibbs inference with the topic-word table frozen.
fn lda_infer(
    row: &SparseVector,
    topic_word: &DMatrix<f64>,
    alpha: f64,
    sweeps: usize,
    seed: u64,
) -> Vec<f64> {
    let k = topic_word.nrows();
    let mut tokens = Vec::new();
    for &(word, count) in row.entries() {
        for _ in 0..count.max(0.0) as usize {
            tokens.push(word as usize);
        }
    }
    let n_d = tokens.len();
    if n_d == 0 {
        return vec![1.0 / k as f64; k];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z: Vec<usize> = tokens.iter().map(|_| rng.gen_range(0..k)).collect();
    let mut n_dk = vec![0u32; k];
    for &t in &z {
        n_dk[t] += 1;
    }
    let mut weights = vec![0.0f64; k];
    for _ in 0..sweeps {
        for (pos, &w) in tokens.iter().enumerate() {
            let old = z[pos];
            n_dk[old] -= 1;
            let mut total = 0.0;
            for t in 0..k {
                let p = (n_dk[t] as f64 + alpha) * topic_word[(t, w)];
                weights[t] = p;
                total += p;
            }
            let mut target = rng.gen::<f64>() * total;
            let mut new = k - 1;
            for (t, &p) in weights.iter().enumerate() {
                if target < p {
                    new = t;
                    break;
                }
                target -= p;
            }
            z[pos] = new;
            n_dk[new] += 1;
        }
    }
    let denom = n_d as f64 + k as f64 * alpha;
    let theta: Vec<f64> = n_dk.iter().map(|&n| (n as f64 + alpha) / denom).collect();
    // Normalize away rounding so outputs are exactly on the simplex.
    let sum: f64 = theta.iter().sum();
    theta.into_iter().map(|p| p / sum).collect()
}

// ---------------------------------------------------------------------------
// Serialization: versioned binary with a `DR01` magic header.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"DR01";

impl Reducer {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.push(match self.kind {
            ReducerKind::Svd => 0,
            ReducerKind::Nmf => 1,
            ReducerKind::Lda => 2,
        });
        write_str(&mut buf, &self.fit_space);
        buf.extend_from_slice(&(self.input_dim as u64).to_le_bytes());
        buf.extend_from_slice(&(self.k as u64).to_le_bytes());
        buf.extend_from_slice(&(self.meta.iterations as u64).to_le_bytes());
        buf.extend_from_slice(&self.meta.objective.to_le_bytes());
        buf.extend_from_slice(&self.meta.seed.to_le_bytes());
        match &self.params {
            Params::Svd { vt, singular } => {
                write_matrix(&mut buf, vt);
                for v in singular.iter() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            Params::Nmf { h } => write_matrix(&mut buf, h),
            Params::Lda {
                topic_word,
                alpha,
                beta,
                infer_sweeps,
            } => {
                write_matrix(&mut buf, topic_word);
                buf.extend_from_slice(&alpha.to_le_bytes());
                buf.extend_from_slice(&beta.to_le_bytes());
                buf.extend_from_slice(&(*infer_sweeps as u64).to_le_bytes());
            }
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Reducer> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Cursor { data: &data, pos: 0 };
        let bad = |message: &str| Error::ModelFormat {
            path: path.to_path_buf(),
            message: message.to_string(),
        };
        if r.take(4).ok_or_else(|| bad("truncated magic"))? != MAGIC {
            return Err(bad("bad magic, expected DR01"));
        }
        let kind = match r.u8().ok_or_else(|| bad("truncated kind"))? {
            0 => ReducerKind::Svd,
            1 => ReducerKind::Nmf,
            2 => ReducerKind::Lda,
            _ => return Err(bad("unknown reducer kind")),
        };
        let fit_space = r.string().ok_or_else(|| bad("truncated space"))?;
        let input_dim = r.u64().ok_or_else(|| bad("truncated dims"))? as usize;
        let k = r.u64().ok_or_else(|| bad("truncated dims"))? as usize;
        let iterations = r.u64().ok_or_else(|| bad("truncated meta"))? as usize;
        let objective = r.f64().ok_or_else(|| bad("truncated meta"))?;
        let seed = r.u64().ok_or_else(|| bad("truncated meta"))?;
        let params = match kind {
            ReducerKind::Svd => {
                let vt = r.matrix().ok_or_else(|| bad("truncated factors"))?;
                if vt.nrows() != k || vt.ncols() != input_dim {
                    return Err(bad("factor dims disagree with header"));
                }
                let mut singular = DVector::zeros(k);
                for i in 0..k {
                    singular[i] = r.f64().ok_or_else(|| bad("truncated singular values"))?;
                }
                Params::Svd { vt, singular }
            }
            ReducerKind::Nmf => {
                let h = r.matrix().ok_or_else(|| bad("truncated factors"))?;
                if h.nrows() != k || h.ncols() != input_dim {
                    return Err(bad("factor dims disagree with header"));
                }
                Params::Nmf { h }
            }
            ReducerKind::Lda => {
                let topic_word = r.matrix().ok_or_else(|| bad("truncated factors"))?;
                if topic_word.nrows() != k || topic_word.ncols() != input_dim {
                    return Err(bad("factor dims disagree with header"));
                }
                let alpha = r.f64().ok_or_else(|| bad("truncated priors"))?;
                let beta = r.f64().ok_or_else(|| bad("truncated priors"))?;
                let infer_sweeps = r.u64().ok_or_else(|| bad("truncated priors"))? as usize;
                Params::Lda {
                    topic_word,
                    alpha,
                    beta,
                    infer_sweeps,
                }
            }
        };
        Ok(Reducer {
            kind,
            fit_space,
            input_dim,
            k,
            params,
            meta: FitMeta {
                iterations,
                objective,
                seed,
            },
        })
    }
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u64).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn write_matrix(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return None;
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|s| u64::from_le_bytes(s.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|s| f64::from_le_bytes(s.try_into().unwrap()))
    }

    fn string(&mut self) -> Option<String> {
        let len = self.u64()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).ok()
    }

    fn matrix(&mut self) -> Option<DMatrix<f64>> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        if rows.checked_mul(cols)? > self.data.len() / 8 + 1 {
            return None;
        }
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.f64()?;
            }
        }
        Some(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMatrix;

    fn matrix_from_dense(space: &str, data: &[Vec<f64>]) -> FeatureMatrix {
        let dim = data[0].len();
        let rows = data
            .iter()
            .map(|r| {
                SparseVector::from_entries(
                    space,
                    dim,
                    r.iter().enumerate().map(|(c, &v)| (c as u32, v)).collect(),
                )
                .unwrap()
            })
            .collect();
        FeatureMatrix::from_rows(rows).unwrap()
    }

    /// Deterministic low-rank fixture built from seeded factors.
    fn rank2_fixture(m: usize, n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u1: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() - 0.5).collect();
        let u2: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() - 0.5).collect();
        let v1: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let v2: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let data: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                (0..n)
                    .map(|j| 3.0 * u1[i] * v1[j] + 0.7 * u2[i] * v2[j])
                    .collect()
            })
            .collect();
        matrix_from_dense("fix", &data)
    }

    fn reconstruction_error(reducer: &Reducer, matrix: &FeatureMatrix) -> f64 {
        let vt = reducer.right_vectors().unwrap();
        let mut err_sq = 0.0;
        for (i, row) in matrix.rows().iter().enumerate() {
            let t = transform_row(reducer, row, i as u64);
            let dense = row.to_dense();
            for (j, &orig) in dense.iter().enumerate() {
                let mut rec = 0.0;
                for (s, &ts) in t.iter().enumerate() {
                    rec += ts * vt[(s, j)];
                }
                err_sq += (orig - rec).powi(2);
            }
        }
        err_sq.sqrt()
    }

    #[test]
    fn randomized_svd_recovers_rank2() {
        let matrix = rank2_fixture(100, 50, 11);
        let reducer = fit_svd_with(&matrix, 2, 5, SvdAlgorithm::Randomized).unwrap();
        assert!(reconstruction_error(&reducer, &matrix) < 1e-8);
    }

    #[test]
    fn exact_svd_full_rank_is_lossless() {
        let matrix = rank2_fixture(5, 5, 3);
        let reducer = fit_svd_with(&matrix, 5, 0, SvdAlgorithm::Exact).unwrap();
        assert!(reconstruction_error(&reducer, &matrix) < 1e-8);
    }

    #[test]
    fn svd_right_vectors_are_orthonormal_and_sorted() {
        let matrix = rank2_fixture(40, 30, 7);
        let reducer = fit_svd_with(&matrix, 2, 1, SvdAlgorithm::Randomized).unwrap();
        let vt = reducer.right_vectors().unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let dot: f64 = (0..30).map(|j| vt[(a, j)] * vt[(b, j)]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8, "({a},{b}) dot {dot}");
            }
        }
        let s = reducer.singular_values().unwrap();
        for i in 1..s.len() {
            assert!(s[i] <= s[i - 1] + 1e-12);
            assert!(s[i] >= 0.0);
        }
    }

    #[test]
    fn svd_rejects_oversized_k() {
        let matrix = rank2_fixture(5, 8, 0);
        assert!(fit_svd(&matrix, 6, 0).is_err());
    }

    #[test]
    fn svd_transform_of_zero_row_is_zero() {
        let matrix = rank2_fixture(10, 6, 2);
        let reducer = fit_svd(&matrix, 2, 0).unwrap();
        let zero = SparseVector::empty("fix", 6);
        assert!(transform_row(&reducer, &zero, 0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn svd_is_bit_reproducible() {
        let matrix = rank2_fixture(60, 40, 9);
        let a = fit_svd_with(&matrix, 3, 42, SvdAlgorithm::Randomized).unwrap();
        let b = fit_svd_with(&matrix, 3, 42, SvdAlgorithm::Randomized).unwrap();
        assert_eq!(a.right_vectors().unwrap(), b.right_vectors().unwrap());
    }

    fn nonneg_fixture(m: usize, n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        if rng.gen::<f64>() < 0.4 {
                            rng.gen::<f64>() * 3.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        matrix_from_dense("nn", &data)
    }

    #[test]
    fn nmf_objective_is_monotone() {
        for seed in 0..5 {
            let matrix = nonneg_fixture(30, 20, seed);
            let rows = matrix.rows();
            let norm_sq: f64 = rows.iter().map(|r| r.l2_norm().powi(2)).sum();
            let (mut w, mut h) = nndsvd_init(&matrix, 4, seed).unwrap();
            let mut prev = nmf_objective(rows, norm_sq, &w, &h);
            for _ in 0..200 {
                nmf_step(rows, matrix.dim, &mut w, &mut h);
                let next = nmf_objective(rows, norm_sq, &w, &h);
                assert!(next <= prev + 1e-10, "objective rose {prev} -> {next}");
                prev = next;
            }
        }
    }

    #[test]
    fn nmf_rejects_negative_entries() {
        let matrix = matrix_from_dense("nn", &[vec![1.0, -0.5], vec![0.0, 2.0]]);
        assert!(fit_nmf(&matrix, 1, &NmfOptions::default(), 0).is_err());
    }

    #[test]
    fn nmf_of_zero_matrix_is_zero() {
        let rows = vec![
            SparseVector::empty("z", 4),
            SparseVector::empty("z", 4),
            SparseVector::empty("z", 4),
        ];
        let matrix = FeatureMatrix::from_rows(rows).unwrap();
        let reducer = fit_nmf(&matrix, 2, &NmfOptions::default(), 0).unwrap();
        assert_eq!(reducer.meta.objective, 0.0);
        assert!(reducer.basis().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nmf_factors_are_nonnegative() {
        let matrix = nonneg_fixture(25, 15, 77);
        let reducer = fit_nmf(&matrix, 3, &NmfOptions::default(), 77).unwrap();
        assert!(reducer.basis().unwrap().iter().all(|&v| v >= 0.0));
        let out = transform(&reducer, &matrix).unwrap();
        for row in out.rows() {
            assert!(row.entries().iter().all(|&(_, v)| v >= 0.0));
        }
    }

    #[test]
    fn nmf_transform_of_zero_row_is_zero() {
        let matrix = nonneg_fixture(20, 10, 5);
        let reducer = fit_nmf(&matrix, 2, &NmfOptions::default(), 5).unwrap();
        let zero = SparseVector::empty("nn", 10);
        assert!(transform_row(&reducer, &zero, 0).iter().all(|&v| v == 0.0));
    }

    fn two_group_corpus() -> FeatureMatrix {
        // Docs 0-9 use words 0..5, docs 10-19 words 5..10; no overlap.
        let mut data = Vec::new();
        for d in 0..20 {
            let mut row = vec![0.0; 10];
            let base = if d < 10 { 0 } else { 5 };
            for w in 0..5 {
                row[base + w] = ((d + w) % 3 + 1) as f64;
            }
            data.push(row);
        }
        matrix_from_dense("lda", &data)
    }

    #[test]
    fn lda_doc_topic_rows_are_on_the_simplex() {
        let matrix = two_group_corpus();
        let options = LdaOptions {
            sweeps: 100,
            infer_sweeps: 30,
            ..LdaOptions::default()
        };
        let reducer = fit_lda(&matrix, 2, &options, 1).unwrap();
        let out = transform(&reducer, &matrix).unwrap();
        for row in out.rows() {
            let sum: f64 = row.entries().iter().map(|&(_, v)| v).sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.entries().iter().all(|&(_, v)| v >= 0.0));
        }
    }

    #[test]
    fn lda_separates_disjoint_vocabularies() {
        let matrix = two_group_corpus();
        let options = LdaOptions {
            sweeps: 200,
            infer_sweeps: 50,
            alpha: Some(0.5),
            ..LdaOptions::default()
        };
        let reducer = fit_lda(&matrix, 2, &options, 3).unwrap();
        let out = transform(&reducer, &matrix).unwrap();
        let dominant = |i: usize| -> (usize, f64) {
            let t = out.rows()[i].to_dense();
            let (arg, &max) = t
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            (arg, max)
        };
        for d in 0..20 {
            let (_, mass) = dominant(d);
            assert!(mass > 0.8, "doc {d} mass {mass}");
        }
        assert_ne!(dominant(0).0, dominant(15).0);
    }

    #[test]
    fn lda_rejects_fractional_counts() {
        let matrix = matrix_from_dense("lda", &[vec![1.5, 0.0], vec![1.0, 2.0]]);
        assert!(fit_lda(&matrix, 1, &LdaOptions::default(), 0).is_err());
    }

    #[test]
    fn lda_is_seed_deterministic() {
        let matrix = two_group_corpus();
        let options = LdaOptions {
            sweeps: 50,
            ..LdaOptions::default()
        };
        let a = fit_lda(&matrix, 2, &options, 9).unwrap();
        let b = fit_lda(&matrix, 2, &options, 9).unwrap();
        assert_eq!(a.topic_word().unwrap(), b.topic_word().unwrap());
        let ta = transform(&a, &matrix).unwrap();
        let tb = transform(&b, &matrix).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn transform_rejects_space_mismatch() {
        let matrix = rank2_fixture(10, 6, 0);
        let reducer = fit_svd(&matrix, 2, 0).unwrap();
        let other = matrix_from_dense("other", &[vec![0.5; 6]]);
        assert!(matches!(
            transform(&reducer, &other),
            Err(Error::SpaceMismatch { .. })
        ));
    }

    #[test]
    fn transform_leaves_fitted_state_unchanged() {
        use sha2::Digest;
        let matrix = nonneg_fixture(20, 10, 13);
        let reducer = fit_nmf(&matrix, 3, &NmfOptions::default(), 13).unwrap();
        let mut before = sha2::Sha256::new();
        reducer.fingerprint(&mut before);
        let _ = transform(&reducer, &matrix).unwrap();
        let mut after = sha2::Sha256::new();
        reducer.fingerprint(&mut after);
        assert_eq!(before.finalize(), after.finalize());
    }

    #[test]
    fn reducer_round_trips_through_dr01() {
        use sha2::Digest;
        let dir = tempfile::tempdir().unwrap();
        let matrix = nonneg_fixture(15, 8, 21);
        for reducer in [
            fit_svd(&matrix, 3, 21).unwrap(),
            fit_nmf(&matrix, 3, &NmfOptions::default(), 21).unwrap(),
            fit_lda(
                &matrix_from_dense("c", &[vec![2.0, 1.0, 0.0], vec![0.0, 1.0, 3.0]]),
                2,
                &LdaOptions {
                    sweeps: 20,
                    ..LdaOptions::default()
                },
                21,
            )
            .unwrap(),
        ] {
            let path = dir.path().join(format!("{}.dr", reducer.kind.name()));
            reducer.save(&path).unwrap();
            let back = Reducer::load(&path).unwrap();
            assert_eq!(back.kind, reducer.kind);
            assert_eq!(back.input_dim, reducer.input_dim);
            assert_eq!(back.k, reducer.k);
            let mut ha = sha2::Sha256::new();
            reducer.fingerprint(&mut ha);
            let mut hb = sha2::Sha256::new();
            back.fingerprint(&mut hb);
            assert_eq!(ha.finalize(), hb.finalize());
        }
    }

    #[test]
    fn load_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.dr");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(Reducer::load(&path), Err(Error::ModelFormat { .. })));
    }
}
