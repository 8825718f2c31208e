//! Dense decompositions used across the crate.
//!
//! Public APIs work on `ndarray` arrays; the factorizations are delegated to
//! `faer` and converted back. Every decomposition returns components in
//! descending order of singular value / eigenvalue.

use faer::{Mat, Side};
use ndarray::{Array1, Array2, ArrayView2};

/// Relative tolerance applied wherever a matrix inverse is replaced by a
/// pseudo-inverse.
pub const PINV_RTOL: f64 = 1e-12;

fn to_faer(a: ArrayView2<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Thin singular value decomposition `a = u · diag(s) · vt`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub vt: Array2<f64>,
}

pub fn svd(a: ArrayView2<'_, f64>) -> Svd {
    let (n, m) = a.dim();
    let r = n.min(m);
    if r == 0 {
        return Svd {
            u: Array2::zeros((n, 0)),
            s: Array1::zeros(0),
            vt: Array2::zeros((0, m)),
        };
    }
    let dec = to_faer(a).thin_svd().expect("svd converges on finite input");
    let (u, v) = (dec.U(), dec.V());
    let sv = dec.S().column_vector();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let mut out = Svd {
        u: Array2::zeros((n, r)),
        s: Array1::zeros(r),
        vt: Array2::zeros((r, m)),
    };
    for (dst, &src) in order.iter().enumerate() {
        out.s[dst] = sv[src];
        for i in 0..n {
            out.u[[i, dst]] = u[(i, src)];
        }
        for j in 0..m {
            out.vt[[dst, j]] = v[(j, src)];
        }
    }
    out
}

/// Eigen-decomposition of a symmetric matrix; `vectors` holds eigenvectors as
/// columns matching `values` (descending).
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

pub fn sym_eigen(a: ArrayView2<'_, f64>) -> SymEigen {
    let n = a.nrows();
    let sym = Mat::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let dec = sym
        .self_adjoint_eigen(Side::Lower)
        .expect("eigensolver converges on finite input");
    let ev = dec.S().column_vector();
    let vecs = dec.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| ev[j].total_cmp(&ev[i]));
    let mut values = Array1::zeros(n);
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = ev[src];
        for i in 0..n {
            vectors[[i, dst]] = vecs[(i, src)];
        }
    }
    SymEigen { values, vectors }
}

/// Moore-Penrose pseudo-inverse with singular values below
/// `rtol · s_max` discarded.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub matrix: Array2<f64>,
    pub rank: usize,
    /// True when at least one singular value was discarded.
    pub truncated: bool,
}

pub fn pinv(a: ArrayView2<'_, f64>, rtol: f64) -> PseudoInverse {
    let (n, m) = a.dim();
    let dec = svd(a);
    let smax = dec.s.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = rtol * smax;
    let mut matrix = Array2::zeros((m, n));
    let mut rank = 0;
    for (k, &sk) in dec.s.iter().enumerate() {
        if sk <= cutoff || sk == 0.0 {
            continue;
        }
        rank += 1;
        let inv = 1.0 / sk;
        for i in 0..m {
            let vik = dec.vt[[k, i]] * inv;
            for j in 0..n {
                matrix[[i, j]] += vik * dec.u[[j, k]];
            }
        }
    }
    PseudoInverse {
        matrix,
        rank,
        truncated: rank < n.min(m),
    }
}

/// Minimum-norm least-squares solution of `a · x ≈ b`.
pub fn lstsq(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> (Array2<f64>, PseudoInverse) {
    let pi = pinv(a, PINV_RTOL);
    (pi.matrix.dot(&b), pi)
}

/// Numerical rank with the crate-wide relative tolerance.
pub fn rank(a: ArrayView2<'_, f64>) -> usize {
    let s = svd(a).s;
    let smax = s.iter().copied().fold(0.0_f64, f64::max);
    s.iter().filter(|&&v| v > PINV_RTOL.max(1e-10) * smax && v > 0.0).count()
}

/// Householder QR (thin). Returns `q` with orthonormal columns.
pub fn orthonormal_columns(a: ArrayView2<'_, f64>) -> Array2<f64> {
    let qr = to_faer(a).qr();
    from_faer(qr.compute_thin_Q().as_ref())
}
