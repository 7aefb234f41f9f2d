//! Smallest eigenpairs of `K v = λ M v` for Hermitian band matrices with
//! `M` positive definite and `K − σM` positive definite.
//!
//! Large problems use a shift-and-invert block Krylov iteration: the
//! Rayleigh–Ritz step is done on `T = (K − σM)⁻¹M` in the `M` inner
//! product, so no product with the stiffness matrix enters the Ritz values.
//! Convergence is measured by `ρ = ‖v − (λ − σ) T v‖_M / ‖v‖_M`.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::band::{axpy, dot, BandError, BandLu, BandMatrix, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("eigensolver did not converge after {iterations} iterations; residuals {residuals:?}")]
    Convergence { iterations: usize, residuals: Vec<f64> },
    #[error("factorization failed: {0}")]
    Factorization(#[from] BandError),
    #[error("requested {nev} eigenpairs from a problem of dimension {dim}")]
    TooMany { nev: usize, dim: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub nev: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Problems with fewer unknowns are solved densely.
    pub dense_below: usize,
    /// Extra block vectors beyond `nev`.
    pub guard: usize,
}

impl EigenOptions {
    pub fn new(nev: usize) -> Self {
        Self { nev, tol: 1e-10, max_iter: 300, seed: 0x5eed, dense_below: 600, guard: nev.max(4) }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPairs<T> {
    pub values: Vec<f64>,
    /// `M`-orthonormal, phase fixed so the largest entry is real positive.
    pub vectors: Vec<Vec<T>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Residuals that stall below `STALL_GATE · tol` sit at the roundoff floor of
/// the shift-invert solves; the eigenvalue error is of order `ρ²`.
const STALL_GATE: f64 = 1e3;

const DEPTH: usize = 3;

pub fn smallest_eigenpairs<T: Scalar>(
    k: &BandMatrix<T>,
    m: &BandMatrix<T>,
    shift: f64,
    opts: &EigenOptions,
) -> Result<EigenPairs<T>, EigenError> {
    let n = k.dim();
    if opts.nev == 0 || opts.nev >= n {
        return Err(EigenError::TooMany { nev: opts.nev, dim: n });
    }
    let shifted = BandMatrix::combine(&[(T::one(), k), (T::re(-shift), m)]);
    let lu = shifted.factor()?;
    let op = ShiftInvert { lu: &lu, m };
    let mut pairs = if n < opts.dense_below { dense(k, m, opts.nev)? } else { krylov(&op, shift, opts)? };
    for v in pairs.vectors.iter_mut() {
        fix_phase(v);
    }
    pairs.residuals = pairs.values.iter().zip(&pairs.vectors).map(|(&l, v)| op.residual(v, l - shift)).collect();
    if pairs.residuals.iter().any(|r| !(*r <= STALL_GATE * opts.tol)) {
        return Err(EigenError::Convergence { iterations: pairs.iterations, residuals: pairs.residuals });
    }
    Ok(pairs)
}

struct ShiftInvert<'a, T> {
    lu: &'a BandLu<T>,
    m: &'a BandMatrix<T>,
}

impl<T: Scalar> ShiftInvert<'_, T> {
    fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = self.m.matvec(x);
        self.lu.solve_in_place(&mut y);
        y
    }

    fn apply_all(&self, xs: &[Vec<T>]) -> Vec<Vec<T>> {
        xs.par_iter().map(|x| self.apply(x)).collect()
    }

    fn m_norm(&self, x: &[T]) -> f64 {
        dot(x, &self.m.matvec(x)).real().max(0.0).sqrt()
    }

    /// `‖v − μ T v‖_M / ‖v‖_M` with `μ = λ − σ`.
    fn residual(&self, v: &[T], mu: f64) -> f64 {
        let tv = self.apply(v);
        let mut r = v.to_vec();
        axpy(T::re(-mu), &tv, &mut r);
        self.m_norm(&r) / self.m_norm(v)
    }
}

fn fix_phase<T: Scalar>(v: &mut [T]) {
    let mut best = 0usize;
    let mut mag = 0.0;
    for (i, x) in v.iter().enumerate() {
        let a = x.mag2();
        if a > mag * (1.0 + 1e-9) {
            mag = a;
            best = i;
        }
    }
    if mag == 0.0 {
        return;
    }
    let p = v[best];
    let phase = p.conj() / T::re(p.modulus());
    for x in v.iter_mut() {
        *x *= phase;
    }
}

fn dense<T: Scalar>(k: &BandMatrix<T>, m: &BandMatrix<T>, nev: usize) -> Result<EigenPairs<T>, EigenError> {
    let n = k.dim();
    let chol = Cholesky::new(m.to_dense()).ok_or(EigenError::Factorization(BandError::Pivot { row: 0, value: 0.0 }))?;
    let l = chol.l();
    let linv = l.clone().try_inverse().ok_or(EigenError::Factorization(BandError::Pivot { row: 0, value: 0.0 }))?;
    let mut c = &linv * k.to_dense() * linv.adjoint();
    c = (&c + c.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let back = linv.adjoint();
    let mut values = Vec::with_capacity(nev);
    let mut vectors = Vec::with_capacity(nev);
    for &j in order.iter().take(nev) {
        values.push(eig.eigenvalues[j]);
        let y = &back * eig.eigenvectors.column(j);
        vectors.push(y.iter().copied().collect());
    }
    Ok(EigenPairs { values, vectors, residuals: vec![], iterations: 0 })
}

fn krylov<T: Scalar>(op: &ShiftInvert<'_, T>, shift: f64, opts: &EigenOptions) -> Result<EigenPairs<T>, EigenError> {
    let n = op.m.dim();
    let p = (opts.nev + opts.guard).min(n / DEPTH).max(opts.nev);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start: Vec<Vec<T>> =
        (0..p).map(|_| (0..n).map(|_| T::cplx(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()).collect();
    let mut blocks = vec![start];
    for j in 1..DEPTH {
        let next = op.apply_all(&blocks[j - 1]);
        blocks.push(next);
    }
    let mut last_res = vec![f64::INFINITY; opts.nev];
    let mut history: Vec<f64> = Vec::new();
    for iter in 1..=opts.max_iter {
        let (q, mq) = orthonormalize(op, &blocks);
        let tq = op.apply_all(&q);
        let dim = q.len();
        let h = DMatrix::from_fn(dim, dim, |i, j| dot(&mq[i], &tq[j]));
        let h = (&h + h.adjoint()).scale(0.5);
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let keep = p.min(dim);
        let combine = |basis: &[Vec<T>], col: usize| -> Vec<T> {
            let mut out = vec![T::zero(); n];
            for (i, b) in basis.iter().enumerate() {
                axpy(eig.eigenvectors[(i, col)], b, &mut out);
            }
            out
        };
        let y: Vec<Vec<T>> = order[..keep].par_iter().map(|&c| combine(&q, c)).collect();
        let ty: Vec<Vec<T>> = order[..keep].par_iter().map(|&c| combine(&tq, c)).collect();
        let theta: Vec<f64> = order[..keep].iter().map(|&c| eig.eigenvalues[c]).collect();
        let res: Vec<f64> = (0..opts.nev)
            .map(|i| {
                let mut r = ty[i].clone();
                axpy(T::re(-theta[i]), &y[i], &mut r);
                op.m_norm(&r) / theta[i].abs()
            })
            .collect();
        let worst = res.iter().cloned().fold(0.0, f64::max);
        history.push(worst);
        // residuals that stop improving under the final gate sit at the roundoff floor
        let stalled = history.len() > 8 && worst <= STALL_GATE * opts.tol && worst > 0.5 * history[history.len() - 6];
        if worst <= opts.tol || stalled {
            let values = theta[..opts.nev].iter().map(|t| shift + 1.0 / t).collect();
            let vectors = y.into_iter().take(opts.nev).collect();
            return Ok(EigenPairs { values, vectors, residuals: res, iterations: iter });
        }
        last_res = res;
        let mut next = vec![y, ty];
        for j in 2..DEPTH {
            let b = op.apply_all(&next[j - 1]);
            next.push(b);
        }
        blocks = next;
    }
    Err(EigenError::Convergence { iterations: opts.max_iter, residuals: last_res })
}

/// `M`-orthonormal basis of the Krylov blocks (classical Gram–Schmidt,
/// applied twice), together with its image under `M`.
fn orthonormalize<T: Scalar>(op: &ShiftInvert<'_, T>, blocks: &[Vec<Vec<T>>]) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
    let mut q: Vec<Vec<T>> = Vec::new();
    let mut mq: Vec<Vec<T>> = Vec::new();
    for b in blocks.iter().flatten() {
        let mut v = b.clone();
        let norm0 = op.m_norm(&v);
        if norm0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            let coeffs: Vec<T> = mq.par_iter().map(|mqi| dot(mqi, &v)).collect();
            for (i, c) in coeffs.iter().enumerate() {
                axpy(-*c, &q[i], &mut v);
            }
        }
        let mv = op.m.matvec(&v);
        let norm = dot(&v, &mv).real().max(0.0).sqrt();
        if norm <= 1e-8 * norm0 {
            continue;
        }
        let s = T::re(1.0 / norm);
        q.push(v.iter().map(|x| *x * s).collect());
        mq.push(mv.iter().map(|x| *x * s).collect());
    }
    (q, mq)
}
